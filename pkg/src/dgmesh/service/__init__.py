"""HTTP service exposing the pipeline operations."""
