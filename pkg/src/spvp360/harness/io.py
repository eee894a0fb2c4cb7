"""File formats.

* Raw heatmap: 16-byte header (``b"ERPMAP64"``, V as u32, U as u32, all
  little-endian) followed by V*U little-endian float64 values, row-major.
* Graymap: binary 8-bit PGM (P5) of a [0, 1] map, for inspection only.
* Frames: binary PPM (P6) images indexed by a manifest of
  ``index,timestamp_s,image_path`` lines (paths relative to the manifest).
* Config: flat ``key=value`` lines; ``#`` starts a comment.
* Metrics: CSV with one row per evaluated frame.
"""
from __future__ import annotations

import csv
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

HEATMAP_MAGIC = b"ERPMAP64"


class FormatError(ValueError):
    pass


def heatmap_bytes(m: np.ndarray) -> bytes:
    m = np.asarray(m, dtype="<f8")
    if m.ndim != 2:
        raise ValueError("heatmap must be 2-D")
    return HEATMAP_MAGIC + struct.pack("<II", *m.shape) + np.ascontiguousarray(m).tobytes()


def write_heatmap_raw(path, m: np.ndarray) -> None:
    Path(path).write_bytes(heatmap_bytes(m))


def read_heatmap_raw(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if data[:8] != HEATMAP_MAGIC:
        raise FormatError(f"{path}: not a raw heatmap")
    V, U = struct.unpack_from("<II", data, 8)
    if len(data) != 16 + 8 * V * U:
        raise FormatError(f"{path}: size does not match {V}x{U} header")
    return np.frombuffer(data, dtype="<f8", offset=16).reshape(V, U).astype(np.float64)


def write_pgm(path, m: np.ndarray) -> None:
    m = np.asarray(m, dtype=np.float64)
    img = np.clip(np.round(np.clip(m, 0.0, 1.0) * 255), 0, 255).astype(np.uint8)
    Path(path).write_bytes(f"P5\n{img.shape[1]} {img.shape[0]}\n255\n".encode() + img.tobytes())


def write_heatmap(stem, m: np.ndarray) -> tuple[Path, Path]:
    """Write ``stem.f64`` and ``stem.pgm``."""
    stem = Path(stem)
    raw, pgm = stem.with_suffix(".f64"), stem.with_suffix(".pgm")
    write_heatmap_raw(raw, m)
    write_pgm(pgm, m)
    return raw, pgm


def _pnm_tokens(data: bytes, count: int) -> tuple[list[bytes], int]:
    tokens, i = [], 2
    while len(tokens) < count:
        while data[i:i + 1].isspace():
            i += 1
        if data[i:i + 1] == b"#":
            while data[i:i + 1] not in (b"\n", b""):
                i += 1
            continue
        j = i
        while not data[j:j + 1].isspace():
            j += 1
        tokens.append(data[i:j])
        i = j
    return tokens, i + 1


def read_ppm(path) -> np.ndarray:
    """Binary PPM (P6, maxval < 256) as a [3, H, W] float array in [0, 1]."""
    data = Path(path).read_bytes()
    if data[:2] != b"P6":
        raise FormatError(f"{path}: only binary PPM (P6) frames are supported")
    (w, h, maxval), off = _pnm_tokens(data, 3)
    w, h, maxval = int(w), int(h), int(maxval)
    if maxval > 255:
        raise FormatError(f"{path}: 16-bit PPM not supported")
    px = np.frombuffer(data, dtype=np.uint8, count=w * h * 3, offset=off).reshape(h, w, 3)
    return px.transpose(2, 0, 1).astype(np.float64) / maxval


def write_ppm(path, frame: np.ndarray) -> None:
    img = np.clip(np.round(np.asarray(frame) * 255), 0, 255).astype(np.uint8).transpose(1, 2, 0)
    Path(path).write_bytes(f"P6\n{img.shape[1]} {img.shape[0]}\n255\n".encode() + img.tobytes())


@dataclass(frozen=True)
class ManifestEntry:
    index: int
    timestamp: float
    path: Path


def read_manifest(path) -> list[ManifestEntry]:
    path = Path(path)
    entries = []
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = [p.strip() for p in line.split(",")]
        if len(parts) != 3:
            raise FormatError(f"{path}:{lineno}: expected index,timestamp_s,image_path")
        try:
            idx, ts = int(parts[0]), float(parts[1])
        except ValueError:
            if lineno == 1:
                continue  # header
            raise FormatError(f"{path}:{lineno}: bad index or timestamp") from None
        entries.append(ManifestEntry(idx, ts, (path.parent / parts[2])))
    entries.sort(key=lambda e: e.index)
    return entries


def write_manifest(path, entries: list[ManifestEntry]) -> None:
    base = Path(path).parent
    lines = [f"{e.index},{e.timestamp!r},{Path(e.path).relative_to(base) if Path(e.path).is_absolute() else e.path}"
             for e in entries]
    Path(path).write_text("\n".join(lines) + "\n")


def manifest_fps(entries: list[ManifestEntry]) -> float:
    if len(entries) < 2:
        raise FormatError("need at least two frames to infer the frame rate")
    span = entries[-1].timestamp - entries[0].timestamp
    return (len(entries) - 1) / span


def read_config(path) -> dict[str, str]:
    out = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise FormatError(f"{path}:{lineno}: expected key=value")
        k, v = line.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def write_config(path, values: dict) -> None:
    Path(path).write_text("".join(f"{k}={v}\n" for k, v in values.items()))


METRIC_FIELDS = ["frame", "timestamp_s", "interval_s", "offset_frames", "n_feedback",
                 "accuracy", "precision", "recall", "nss", "cc", "auc", "loss"]


def write_metrics(path, records: list[dict], fields: list[str] = METRIC_FIELDS) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fields, lineterminator="\n", extrasaction="ignore")
        w.writeheader()
        for r in records:
            w.writerow({k: (repr(float(v)) if isinstance(v, (float, np.floating)) else v) for k, v in r.items()})


def read_metrics(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))
