"""Command-line client.

Runs the handlers in-process, or forwards the request to a running service with
``--server URL``. Results are printed as one JSON object on stdout; failures print a
single JSON error line on stderr and exit with status 1 (2 for usage errors).
"""
from __future__ import annotations

import argparse
import json
import logging
import sys

from pydantic import ValidationError

from .errors import DGMeshError
from .service import handlers


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        _fail("UsageError", message, status=2)


def _fail(code: str, message: str, status: int = 1, **details):
    sys.stderr.write(json.dumps({"error": code, "message": message, **details}, sort_keys=True) + "\n")
    raise SystemExit(status)


def _common(p, out_default=None):
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default=out_default)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--server", default=None, help="base URL of a running service")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="dgmesh", description=__doc__.splitlines()[0], allow_abbrev=False)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="generate a synthetic scene", allow_abbrev=False)
    p.add_argument("--shape", default="sphere")
    p.add_argument("--frames", type=int, default=1)
    p.add_argument("--points", type=int, default=2000)
    _common(p, out_default="synth")

    p = sub.add_parser("reconstruct", help="reconstruct a sequence from a config file", allow_abbrev=False)
    p.add_argument("--config", required=True)
    _common(p)

    p = sub.add_parser("metrics", help="CD and EMD between two meshes", allow_abbrev=False)
    p.add_argument("pred")
    p.add_argument("gt")
    p.add_argument("--samples", type=int, default=1024)
    p.add_argument("--emd-mode", default="exact")
    _common(p)

    p = sub.add_parser("gradcheck", help="finite-difference check of the full loss", allow_abbrev=False)
    p.add_argument("--shape", default="sphere")
    p.add_argument("--resolution", type=int, default=32)
    p.add_argument("--points", type=int, default=2000)
    p.add_argument("--probes", type=int, default=20)
    _common(p)

    p = sub.add_parser("validate", help="watertightness and genus of a mesh", allow_abbrev=False)
    p.add_argument("mesh")
    _common(p)
    return parser


def _payload(args) -> dict:
    seed = args.seed
    if args.command == "synth":
        return dict(shape=args.shape, frames=args.frames, points=args.points, seed=seed or 0, out=args.out)
    if args.command == "reconstruct":
        return dict(config=args.config, seed=seed, out=args.out, threads=args.threads)
    if args.command == "metrics":
        return dict(pred=args.pred, gt=args.gt, samples=args.samples, seed=seed or 0, emd_mode=args.emd_mode)
    if args.command == "gradcheck":
        return dict(shape=args.shape, resolution=args.resolution, points=args.points, probes=args.probes, seed=seed or 0)
    return dict(mesh=args.mesh)


def _remote(server: str, command: str, payload: dict) -> dict:
    import httpx

    try:
        resp = httpx.post(server.rstrip("/") + "/" + command, json=payload, timeout=None)
    except httpx.HTTPError as exc:
        _fail("ConnectionError", str(exc))
    body = resp.json()
    if resp.status_code != 200:
        if "error" in body:
            _fail(body["error"], body.get("message", ""))
        _fail("RequestError", json.dumps(body.get("detail", body)))
    return body


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr)
    payload = _payload(args)
    if args.server:
        result = _remote(args.server, args.command, payload)
    else:
        model, handler = handlers.HANDLERS[args.command]
        try:
            result = handler(model(**payload)).model_dump()
        except ValidationError as exc:
            first = exc.errors()[0]
            _fail("InvalidArgument", f"{'.'.join(str(p) for p in first['loc'])}: {first['msg']}")
        except DGMeshError as exc:
            _fail(exc.code, str(exc))
    sys.stdout.write(json.dumps(result, sort_keys=True) + "\n")
    return 0


if __name__ == "__main__":
    sys.exit(main())
