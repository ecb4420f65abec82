"""Procedural toy images and binary PPM input/output.

Images are (3, H, W) float64 arrays in [0, 1]. The generator is fully
deterministic: image i of a spec depends only on (seed, i), so corpora are
stable under count changes.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError, ParameterError

KINDS = ("gradients", "shapes", "textures", "mixed")


@dataclass(frozen=True)
class ToyDatasetSpec:
    """Recipe for a procedural corpus."""

    count: int = 24
    resolution: int = 32
    seed: int = 7
    kind: str = "mixed"

    def __post_init__(self):
        if self.count < 1:
            raise ParameterError(f"dataset count must be >= 1, got {self.count}")
        if self.resolution < 4 or self.resolution % 4:
            raise ParameterError(
                f"resolution must be a positive multiple of 4, got {self.resolution}"
            )
        if self.kind not in KINDS:
            raise ParameterError(f"unknown dataset kind {self.kind!r}, expected one of {KINDS}")


def _coords(n: int) -> tuple[np.ndarray, np.ndarray]:
    ax = (np.arange(n) + 0.5) / n
    return np.meshgrid(ax, ax, indexing="xy")


def _normalize(field: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    lo, hi = field.min(), field.max()
    span = hi - lo if hi > lo else 1.0
    unit = (field - lo) / span
    # stretch most images across nearly the full range so corpus histograms
    # cover it, but vary the endpoints so images are not all identical in tone
    low = rng.uniform(0.0, 0.1)
    high = rng.uniform(0.9, 1.0)
    return low + unit * (high - low)


def _gradient_image(n: int, rng: np.random.Generator) -> np.ndarray:
    xx, yy = _coords(n)
    out = np.empty((3, n, n))
    base = rng.uniform(-1, 1) * xx + rng.uniform(-1, 1) * yy
    cx, cy = rng.uniform(0, 1, 2)
    radial = np.hypot(xx - cx, yy - cy) * rng.uniform(-1.5, 1.5)
    field = base + radial
    for c in range(3):
        tint = 1.0 + rng.uniform(-0.25, 0.25)
        out[c] = _normalize(field * tint + rng.uniform(-0.2, 0.2) * yy, rng)
    return out


def _shape_image(n: int, rng: np.random.Generator) -> np.ndarray:
    xx, yy = _coords(n)
    img = _gradient_image(n, rng) * 0.6 + 0.2
    softness = 1.5 / n
    for _ in range(int(rng.integers(2, 5))):
        color = rng.uniform(0, 1, 3)
        cx, cy = rng.uniform(0.15, 0.85, 2)
        if rng.random() < 0.5:
            r = rng.uniform(0.08, 0.3)
            dist = np.hypot(xx - cx, yy - cy)
            alpha = 1.0 / (1.0 + np.exp((dist - r) / softness))
        else:
            hw, hh = rng.uniform(0.08, 0.3, 2)
            ax = 1.0 / (1.0 + np.exp((np.abs(xx - cx) - hw) / softness))
            ay = 1.0 / (1.0 + np.exp((np.abs(yy - cy) - hh) / softness))
            alpha = ax * ay
        for c in range(3):
            img[c] = img[c] * (1 - alpha) + color[c] * alpha
    return np.clip(img, 0.0, 1.0)


def _texture_image(n: int, rng: np.random.Generator) -> np.ndarray:
    xx, yy = _coords(n)
    out = np.empty((3, n, n))
    field = np.zeros((n, n))
    # a handful of low-frequency plane waves keeps the texture band-limited
    for _ in range(6):
        fx, fy = rng.integers(1, 6, 2)
        if rng.random() < 0.5:
            fx = -fx
        phase = rng.uniform(0, 2 * np.pi)
        field += rng.uniform(0.3, 1.0) * np.sin(2 * np.pi * (fx * xx + fy * yy) + phase)
    for c in range(3):
        out[c] = _normalize(field * (1.0 + rng.uniform(-0.2, 0.2)), rng)
    return out


_MAKERS = {
    "gradients": _gradient_image,
    "shapes": _shape_image,
    "textures": _texture_image,
}


def generate_toy_dataset(spec: ToyDatasetSpec) -> np.ndarray:
    """Render the corpus described by the spec as a (count, 3, H, W) array."""
    cycle = ("gradients", "shapes", "textures")
    images = np.empty((spec.count, 3, spec.resolution, spec.resolution))
    for i in range(spec.count):
        kind = spec.kind if spec.kind != "mixed" else cycle[i % len(cycle)]
        rng = np.random.default_rng([spec.seed, i])
        images[i] = _MAKERS[kind](spec.resolution, rng)
    return images


# ---------------------------------------------------------------------------
# binary PPM (P6), 8-bit, maxval 255


def write_ppm(path, image: np.ndarray) -> None:
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 3 or img.shape[0] != 3:
        raise ParameterError(f"PPM writer expects a (3, H, W) image, got {img.shape}")
    _, h, w = img.shape
    u8 = np.floor(np.clip(img, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(u8.transpose(1, 2, 0).tobytes(order="C"))


def read_ppm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    # header = magic, width, height, maxval separated by whitespace/comments
    pos = 0
    fields = []
    while len(fields) < 4:
        m = re.compile(rb"\s*(?:#[^\n]*\n\s*)*(\S+)").match(raw, pos)
        if m is None:
            raise FormatError(f"{path}: truncated PPM header")
        fields.append(m.group(1))
        pos = m.end()
    if fields[0] != b"P6":
        raise FormatError(f"{path}: not a binary PPM (magic {fields[0]!r})")
    try:
        w, h, maxval = (int(f) for f in fields[1:])
    except ValueError as exc:
        raise FormatError(f"{path}: non-numeric PPM header field") from exc
    if maxval != 255:
        raise FormatError(f"{path}: only maxval 255 is supported, got {maxval}")
    pos += 1  # single whitespace byte after maxval
    expected = w * h * 3
    data = raw[pos : pos + expected]
    if len(data) != expected:
        raise FormatError(f"{path}: expected {expected} pixel bytes, found {len(data)}")
    arr = np.frombuffer(data, dtype=np.uint8).reshape(h, w, 3)
    return arr.transpose(2, 0, 1).astype(np.float64) / 255.0


def save_dataset(images: np.ndarray, directory) -> list:
    """Write images as img_000.ppm, img_001.ppm, ... and return the paths."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, img in enumerate(images):
        p = directory / f"img_{i:03d}.ppm"
        write_ppm(p, img)
        paths.append(p)
    return paths


def load_dataset(directory) -> tuple[np.ndarray, list]:
    """Read every .ppm in a directory (sorted by name)."""
    directory = Path(directory)
    paths = sorted(directory.glob("*.ppm"))
    if not paths:
        raise ParameterError(f"no .ppm images found in {directory}")
    images = np.stack([read_ppm(p) for p in paths])
    return images, paths
