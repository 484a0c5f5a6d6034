"""Shared helpers for the demo scripts."""
import os
from pathlib import Path


def output_dir(name: str) -> Path:
    root = Path(os.environ.get("FEWSHOT_VDM_OUTPUT_ROOT", Path(__file__).parent / "output"))
    out = root / name
    out.mkdir(parents=True, exist_ok=True)
    return out
