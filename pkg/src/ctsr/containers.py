"""On-disk formats shared across the toolkit.

Images and sinograms are raw little-endian float32 rasters next to a JSON
sidecar carrying shape, spacing and units. Model checkpoints are a single
file: magic, a JSON header (network config, full diffusion schedule, corpus
provenance hash, parameter layout) and a flat float32 parameter blob.
Binary masks travel as row-major run-length encodings inside JSON metadata.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

from .ctsim import ScanGeometry, Sinogram
from .phantoms import Image2D

CHECKPOINT_MAGIC = b"CTSRCKPT"


def _write_raw(path: Path, data: np.ndarray) -> None:
    np.asarray(data, dtype="<f4").tofile(path)


def _read_raw(path: Path, shape: tuple[int, ...]) -> np.ndarray:
    data = np.fromfile(path, dtype="<f4")
    expected = int(np.prod(shape))
    if data.size != expected:
        raise ValueError(f"{path}: expected {expected} float32 values, found {data.size}")
    return data.reshape(shape).astype(np.float64)


def save_image(path: str | Path, img: Image2D) -> None:
    """Write <path>.raw and <path>.json."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    _write_raw(path.with_suffix(".raw"), img.data)
    sidecar = {
        "kind": "image",
        "shape": list(img.data.shape),
        "dtype": "float32",
        "byte_order": "little",
        "pixel_spacing_mm": img.pixel_spacing,
        "units": "HU",
        "meta": img.meta,
    }
    path.with_suffix(".json").write_text(json.dumps(sidecar, indent=1))


def load_image(path: str | Path) -> Image2D:
    path = Path(path)
    sidecar = json.loads(path.with_suffix(".json").read_text())
    if sidecar.get("kind") != "image":
        raise ValueError(f"{path}: sidecar does not describe an image")
    data = _read_raw(path.with_suffix(".raw"), tuple(sidecar["shape"]))
    return Image2D(data, sidecar["pixel_spacing_mm"], dict(sidecar.get("meta", {})))


def save_sinogram(path: str | Path, s: Sinogram) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    _write_raw(path.with_suffix(".raw"), s.p)
    sidecar = {
        "kind": "sinogram",
        "shape": list(s.p.shape),
        "dtype": "float32",
        "byte_order": "little",
        "units": "post-log line integral",
        "photons_in": s.photons_in,
        "geometry": {
            "n_angles": s.geometry.n_angles,
            "n_detectors": s.geometry.n_detectors,
            "detector_spacing_mm": s.geometry.detector_spacing,
            "fov_mm": s.geometry.fov,
        },
    }
    path.with_suffix(".json").write_text(json.dumps(sidecar, indent=1))


def load_sinogram(path: str | Path) -> Sinogram:
    path = Path(path)
    sidecar = json.loads(path.with_suffix(".json").read_text())
    if sidecar.get("kind") != "sinogram":
        raise ValueError(f"{path}: sidecar does not describe a sinogram")
    g = sidecar["geometry"]
    geom = ScanGeometry(g["n_angles"], g["n_detectors"], g["detector_spacing_mm"], g["fov_mm"])
    p = _read_raw(path.with_suffix(".raw"), tuple(sidecar["shape"]))
    return Sinogram(p, sidecar["photons_in"], geom)


def mask_to_rle(mask: np.ndarray) -> list[list[int]]:
    """Row-major [start, length] runs of True pixels."""
    flat = np.asarray(mask, dtype=bool).ravel()
    if not flat.any():
        return []
    padded = np.concatenate([[False], flat, [False]])
    edges = np.flatnonzero(padded[1:] != padded[:-1])
    starts, ends = edges[0::2], edges[1::2]
    return [[int(a), int(b - a)] for a, b in zip(starts, ends)]


def rle_to_mask(runs: list[list[int]], shape: tuple[int, int]) -> np.ndarray:
    flat = np.zeros(int(np.prod(shape)), dtype=bool)
    for start, length in runs:
        flat[start : start + length] = True
    return flat.reshape(shape)


def file_sha256(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def config_hash(obj) -> str:
    """Stable hash of any JSON-serializable configuration."""
    return hashlib.sha256(json.dumps(obj, sort_keys=True).encode()).hexdigest()


def write_checkpoint(path: str | Path, header: dict, blob: np.ndarray) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(np.uint64(len(payload)).tobytes())
        f.write(payload)
        f.write(np.asarray(blob, dtype="<f4").tobytes())


def read_checkpoint(path: str | Path) -> tuple[dict, np.ndarray]:
    path = Path(path)
    with open(path, "rb") as f:
        magic = f.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"{path}: not a checkpoint container")
        (n,) = np.frombuffer(f.read(8), dtype=np.uint64)
        header = json.loads(f.read(int(n)).decode())
        blob = np.frombuffer(f.read(), dtype="<f4").astype(np.float32)
    return header, blob
