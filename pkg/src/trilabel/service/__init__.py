"""HTTP service wrapping the engine: synth/eval run inline, train/ablate/sweep
run as polled background jobs."""

from .app import create_app

__all__ = ["create_app"]
