"""Scene generation, file I/O, configuration and sequence reconstruction."""
from .config import PipelineConfig
from .io import export_mesh, export_ply, export_tracks, import_mesh, import_ply
from .reconstruct import CorrespondenceTrack, ReconstructionResult, TrackRecord, reconstruct_sequence
from .scenes import Frame, FrameSequence, generate_scene

__all__ = [
    "PipelineConfig",
    "export_mesh",
    "export_ply",
    "export_tracks",
    "import_mesh",
    "import_ply",
    "CorrespondenceTrack",
    "ReconstructionResult",
    "TrackRecord",
    "reconstruct_sequence",
    "Frame",
    "FrameSequence",
    "generate_scene",
]
