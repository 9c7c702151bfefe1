"""Image/mask codecs (binary PPM P6 / PGM P5, maxval 255), dataset manifests,
preprocessing, and the seeded synthetic dataset generator.

Preprocessing follows the standard ImageNet recipe: scale bytes to [0, 1],
bilinear-resize to the working size, subtract the per-channel means
(0.485, 0.456, 0.406) and divide by (0.229, 0.224, 0.225). Masks are
thresholded at byte value 128 and resized nearest-neighbor so they stay
binary.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, ParseError
from .ops import resize_bilinear_array
from .rng import Rng, derive

MEAN = np.array([0.485, 0.456, 0.406], dtype=np.float64)
STD = np.array([0.229, 0.224, 0.225], dtype=np.float64)


# --------------------------------------------------------------------------
# netpbm codecs
# --------------------------------------------------------------------------


def _read_pnm(raw: bytes, path: str):
    """Parse a binary PPM/PGM payload; returns (magic, width, height, pixels)."""

    pos = 0

    def fail(msg):
        raise ParseError(f"{path}: {msg}", offset=pos)

    def skip_space():
        nonlocal pos
        while pos < len(raw):
            ch = raw[pos:pos + 1]
            if ch.isspace():
                pos += 1
            elif ch == b"#":
                while pos < len(raw) and raw[pos:pos + 1] != b"\n":
                    pos += 1
            else:
                return

    def token():
        nonlocal pos
        skip_space()
        start = pos
        while pos < len(raw) and not raw[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            fail("unexpected end of header")
        return raw[start:pos]

    magic = raw[:2]
    if magic not in (b"P5", b"P6"):
        fail(f"unsupported magic {magic!r} (need binary P5 or P6)")
    pos = 2
    try:
        width = int(token())
        height = int(token())
        maxval = int(token())
    except ValueError:
        fail("non-numeric header field")
    if width <= 0 or height <= 0:
        fail(f"bad dimensions {width}x{height}")
    if maxval != 255:
        fail(f"unsupported maxval {maxval} (only 255)")
    pos += 1  # single whitespace byte after maxval
    channels = 3 if magic == b"P6" else 1
    need = width * height * channels
    payload = raw[pos:pos + need]
    if len(payload) < need:
        pos = len(raw)
        raise ParseError(f"{path}: truncated payload, need {need} bytes, have {len(payload)}",
                         offset=len(raw))
    px = np.frombuffer(payload, dtype=np.uint8).reshape(height, width, channels)
    return magic, width, height, px


def read_image_bytes(path: str) -> np.ndarray:
    """Decode to (3, H, W) float64 in [0, 1]; grayscale is replicated."""
    with open(path, "rb") as fh:
        raw = fh.read()
    magic, _, _, px = _read_pnm(raw, path)
    arr = px.astype(np.float64) / 255.0
    if magic == b"P5":
        arr = np.repeat(arr, 3, axis=2)
    return np.ascontiguousarray(arr.transpose(2, 0, 1))


def load_image(path: str, size: int = 224) -> np.ndarray:
    """Normalized network input (3, size, size), float32."""
    arr = read_image_bytes(path)
    arr = resize_bilinear_array(arr, size, size)
    arr = (arr - MEAN[:, None, None]) / STD[:, None, None]
    return arr.astype(np.float32)


def resize_nearest(a: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    h, w = a.shape[-2:]
    if (h, w) == (out_h, out_w):
        return a
    ri = np.minimum((np.arange(out_h) * h) // out_h, h - 1)
    ci = np.minimum((np.arange(out_w) * w) // out_w, w - 1)
    return a[..., ri[:, None], ci[None, :]]


def load_mask(path: str, size: int = 224) -> np.ndarray:
    """Binary {0,1} float32 mask at the working size (byte >= 128 is foreground)."""
    with open(path, "rb") as fh:
        raw = fh.read()
    magic, _, _, px = _read_pnm(raw, path)
    if magic != b"P5":
        raise ParseError(f"{path}: masks must be grayscale P5", offset=0)
    binary = (px[:, :, 0] >= 128).astype(np.float32)
    return np.ascontiguousarray(resize_nearest(binary, size, size))


def save_map(s: np.ndarray, path: str) -> None:
    """Write a [0,1] saliency map as PGM P5 with round-half-up bytes."""
    s = np.asarray(s)
    if s.ndim != 2:
        raise DimensionError(f"save_map expects a 2-D map, got shape {s.shape}")
    data = np.floor(255.0 * np.clip(s, 0.0, 1.0) + 0.5).astype(np.uint8)
    h, w = s.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(data.tobytes())


def save_image_rgb(arr01: np.ndarray, path: str) -> None:
    """Write a (3, H, W) [0,1] array as PPM P6."""
    data = np.floor(255.0 * np.clip(arr01, 0.0, 1.0) + 0.5).astype(np.uint8)
    _, h, w = arr01.shape
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(np.ascontiguousarray(data.transpose(1, 2, 0)).tobytes())


# --------------------------------------------------------------------------
# manifests
# --------------------------------------------------------------------------


@dataclass
class DatasetManifest:
    rows: list[tuple[str, str]] = field(default_factory=list)  # (image, mask) absolute paths
    source: str = ""

    def __len__(self) -> int:
        return len(self.rows)


def load_manifest(path: str) -> DatasetManifest:
    """One `image<TAB>mask` row per line; `#` comments and blank lines are
    skipped; relative paths resolve against the manifest's directory."""
    base = os.path.dirname(os.path.abspath(path))
    rows: list[tuple[str, str]] = []
    seen: set[str] = set()
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            if "\t" not in stripped:
                raise ParseError(f"{path}: line {lineno}: expected image<TAB>mask")
            img, msk = (part.strip() for part in stripped.split("\t", 1))
            if not img or not msk:
                raise ParseError(f"{path}: line {lineno}: empty path")
            if img in seen:
                raise ParseError(f"{path}: line {lineno}: duplicate image path {img!r}")
            seen.add(img)
            rows.append((os.path.join(base, img) if not os.path.isabs(img) else img,
                         os.path.join(base, msk) if not os.path.isabs(msk) else msk))
    return DatasetManifest(rows=rows, source=path)


def write_manifest(rows: list[tuple[str, str]], path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for img, msk in rows:
            fh.write(f"{img}\t{msk}\n")


# --------------------------------------------------------------------------
# synthetic dataset
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class SynthSpec:
    seed: int = 42
    count: int = 200
    size: int = 224
    min_shapes: int = 1
    max_shapes: int = 3
    kinds: tuple[str, ...] = ("ellipse", "rectangle", "triangle")
    noise_octaves: int = 3
    contrast: tuple[float, float] = (0.25, 0.6)

    def __post_init__(self):
        if self.count < 1:
            raise ValueError("synth count must be >= 1")
        if not (1 <= self.min_shapes <= self.max_shapes):
            raise ValueError(f"bad shapes-per-image range [{self.min_shapes}, {self.max_shapes}]")


MIN_FOREGROUND = 0.02
MAX_FOREGROUND = 0.6
_MAX_RETRIES = 16


def _value_noise(rng: Rng, size: int, octaves: int) -> np.ndarray:
    """Sum of bilinear-upsampled random grids, one per octave, in [0, 1]."""
    total = np.zeros((size, size))
    amp_sum = 0.0
    for o in range(octaves):
        cells = max(2, size // (8 * (2 ** o)))
        grid = rng.uniform_array(0.0, 1.0, (cells + 1, cells + 1))
        amp = 1.0 / (2 ** o)
        total += amp * resize_bilinear_array(grid, size, size)
        amp_sum += amp
    return total / amp_sum


def _shape_mask(rng: Rng, kind: str, size: int) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    cx = rng.uniform(0.2, 0.8) * size
    cy = rng.uniform(0.2, 0.8) * size
    if kind == "ellipse":
        a = rng.uniform(0.08, 0.3) * size
        b = rng.uniform(0.08, 0.3) * size
        return ((xx - cx) / a) ** 2 + ((yy - cy) / b) ** 2 <= 1.0
    if kind == "rectangle":
        hw = rng.uniform(0.07, 0.28) * size
        hh = rng.uniform(0.07, 0.28) * size
        return (np.abs(xx - cx) <= hw) & (np.abs(yy - cy) <= hh)
    if kind == "triangle":
        r = rng.uniform(0.1, 0.32) * size
        theta = rng.uniform(0.0, 2.0 * np.pi)
        pts = []
        for k in range(3):
            ang = theta + k * 2.0 * np.pi / 3.0 + rng.uniform(-0.3, 0.3)
            pts.append((cx + r * np.cos(ang), cy + r * np.sin(ang)))
        inside = np.ones((size, size), dtype=bool)
        for k in range(3):
            x1, y1 = pts[k]
            x2, y2 = pts[(k + 1) % 3]
            cross = (x2 - x1) * (yy - y1) - (y2 - y1) * (xx - x1)
            inside &= cross >= 0 if _signed_area(pts) >= 0 else cross <= 0
        return inside
    raise ValueError(f"unknown shape kind {kind!r}")


def _signed_area(pts) -> float:
    (x1, y1), (x2, y2), (x3, y3) = pts
    return (x2 - x1) * (y3 - y1) - (x3 - x1) * (y2 - y1)


def render_sample(spec: SynthSpec, index: int) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic (image 3xSxS in [0,1], mask SxS {0,1}) for one index.

    Retries with a fresh substream until the foreground fraction lands in
    [MIN_FOREGROUND, MAX_FOREGROUND]; the retry budget is fixed so generation
    either succeeds identically everywhere or fails loudly.
    """
    size = spec.size
    for attempt in range(_MAX_RETRIES):
        rng = Rng(derive(spec.seed, 0x5EED, index, attempt))
        noise = _value_noise(rng, size, spec.noise_octaves)
        base = np.array([rng.uniform(0.25, 0.75) for _ in range(3)])
        img = np.clip(base[:, None, None] + 0.3 * (noise - 0.5)[None], 0.0, 1.0)
        mask = np.zeros((size, size), dtype=bool)
        n_shapes = rng.randint(spec.min_shapes, spec.max_shapes)
        for _ in range(n_shapes):
            kind = rng.choice(spec.kinds)
            shape = _shape_mask(rng, kind, size)
            offset = rng.uniform(*spec.contrast) * (1.0 if rng.bernoulli() else -1.0)
            tint = np.array([rng.uniform(-0.08, 0.08) for _ in range(3)])
            img = np.where(shape[None], np.clip(img + offset + tint[:, None, None], 0.0, 1.0), img)
            mask |= shape
        frac = mask.mean()
        if MIN_FOREGROUND <= frac <= MAX_FOREGROUND:
            return img, mask.astype(np.float32)
    raise RuntimeError(f"synthetic sample {index}: no acceptable mask in {_MAX_RETRIES} attempts")


def synth_generate(spec: SynthSpec, out_dir: str) -> DatasetManifest:
    """Write images, masks, and manifest.tsv; byte-identical given the spec."""
    img_dir = os.path.join(out_dir, "images")
    msk_dir = os.path.join(out_dir, "masks")
    os.makedirs(img_dir, exist_ok=True)
    os.makedirs(msk_dir, exist_ok=True)
    rel_rows = []
    for i in range(spec.count):
        img, mask = render_sample(spec, i)
        img_rel = os.path.join("images", f"img_{i:04d}.ppm")
        msk_rel = os.path.join("masks", f"mask_{i:04d}.pgm")
        save_image_rgb(img, os.path.join(out_dir, img_rel))
        save_map(mask, os.path.join(out_dir, msk_rel))
        rel_rows.append((img_rel, msk_rel))
    manifest_path = os.path.join(out_dir, "manifest.tsv")
    write_manifest(rel_rows, manifest_path)
    return load_manifest(manifest_path)
