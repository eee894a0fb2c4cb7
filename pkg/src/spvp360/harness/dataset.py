"""File-backed scenes: PPM frames listed in a manifest plus a trace CSV."""
from __future__ import annotations

import numpy as np

from .io import FormatError, manifest_fps, read_manifest, read_ppm
from .synthetic import Scene
from .traces import ingest_traces


def load_scene(manifest_path, traces_path, fps: float | None = None) -> Scene:
    entries = read_manifest(manifest_path)
    if not entries:
        raise FormatError(f"{manifest_path}: no frames listed")
    frames = [read_ppm(e.path) for e in entries]
    shapes = {f.shape for f in frames}
    if len(shapes) != 1:
        raise FormatError(f"{manifest_path}: frames have differing sizes {sorted(shapes)}")
    times = [e.timestamp for e in entries]
    if any(not b > a for a, b in zip(times, times[1:])):
        raise FormatError(f"{manifest_path}: frame timestamps must increase")
    fps = fps or (manifest_fps(entries) if len(entries) > 1 else 1.0)
    return Scene(np.stack(frames), ingest_traces(traces_path), fps, times)
