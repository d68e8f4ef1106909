"""Dataset ingestion and generators: IDX files, colored environments, linear SEM, glyphs."""

from __future__ import annotations

import gzip
import os
import struct
from dataclasses import dataclass, field

import numpy as np

from .records import read_records, write_records

IMAGE_SIDE = 28
IMAGE_PIXELS = IMAGE_SIDE * IMAGE_SIDE
DATASET_MAGIC = b"GIBD"

_IDX_TYPES = {
    0x08: np.dtype(">u1"),
    0x09: np.dtype(">i1"),
    0x0B: np.dtype(">i2"),
    0x0C: np.dtype(">i4"),
    0x0D: np.dtype(">f4"),
    0x0E: np.dtype(">f8"),
}
_IDX_CODES = {np.dtype(v).newbyteorder("=").str: k for k, v in _IDX_TYPES.items()}
_MAX_IDX_ELEMENTS = 1 << 34


class IdxFormatError(ValueError):
    def __init__(self, defect: str, detail: str = ""):
        super().__init__(f"{defect}: {detail}" if detail else defect)
        self.defect = defect


@dataclass
class LabeledDataset:
    inputs: np.ndarray
    labels: np.ndarray
    env_index: int = 0
    seed: int = 0
    colors: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=np.float64)
        if self.inputs.ndim == 1:
            self.inputs = self.inputs.reshape(-1, 1)
        self.labels = np.asarray(self.labels)
        if self.inputs.shape[0] != self.labels.shape[0]:
            raise ValueError(f"{self.inputs.shape[0]} inputs but {self.labels.shape[0]} labels")
        if not np.all(np.isfinite(self.inputs)):
            raise ValueError("inputs contain non-finite values")

    def __len__(self) -> int:
        return self.inputs.shape[0]


# ---------------------------------------------------------------------------
# IDX
# ---------------------------------------------------------------------------


def _read_bytes(path) -> bytes:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:2] == b"\x1f\x8b":
        data = gzip.decompress(data)
    return data


def parse_idx(data: bytes) -> np.ndarray:
    if len(data) < 4:
        raise IdxFormatError("truncated header", f"{len(data)} bytes")
    zero, code, ndim = struct.unpack(">HBB", data[:4])
    if zero != 0 or code not in _IDX_TYPES:
        raise IdxFormatError("bad magic", f"0x{int.from_bytes(data[:4], 'big'):08X}")
    if ndim == 0:
        raise IdxFormatError("bad magic", "zero dimensions")
    if len(data) < 4 + 4 * ndim:
        raise IdxFormatError("truncated header", "dimension table incomplete")
    dims = struct.unpack(f">{ndim}I", data[4:4 + 4 * ndim])
    count = 1
    for d in dims:
        count *= d
        if count > _MAX_IDX_ELEMENTS:
            raise IdxFormatError("dimension overflow", f"dims {dims}")
    dtype = _IDX_TYPES[code]
    start = 4 + 4 * ndim
    need = count * dtype.itemsize
    if len(data) - start < need:
        raise IdxFormatError("truncated payload", f"need {need} bytes, have {len(data) - start}")
    if len(data) - start > need:
        raise IdxFormatError("trailing bytes", f"{len(data) - start - need} extra bytes")
    arr = np.frombuffer(data, dtype=dtype, count=count, offset=start).reshape(dims)
    return arr.astype(dtype.newbyteorder("="))


def read_idx(path: str | os.PathLike) -> np.ndarray:
    """Raw IDX array in its stored element type (gzip accepted)."""
    return parse_idx(_read_bytes(path))


def encode_idx(arr: np.ndarray) -> bytes:
    arr = np.asarray(arr)
    code = _IDX_CODES.get(arr.dtype.newbyteorder("=").str)
    if code is None:
        raise IdxFormatError("unsupported dtype", str(arr.dtype))
    header = struct.pack(">HBB", 0, code, arr.ndim) + struct.pack(f">{arr.ndim}I", *arr.shape)
    return header + np.ascontiguousarray(arr, dtype=_IDX_TYPES[code]).tobytes()


def write_idx(path: str | os.PathLike, arr: np.ndarray) -> None:
    with open(path, "wb") as fh:
        fh.write(encode_idx(arr))


def load_idx(path: str | os.PathLike) -> np.ndarray:
    """IDX contents ready for learning.

    Unsigned-byte images (rank >= 2) come back as float rows in [0, 1], one
    flattened image per row; rank-1 files come back as int64 labels.
    """
    arr = read_idx(path)
    if arr.ndim == 1:
        return arr.astype(np.int64)
    flat = arr.reshape(arr.shape[0], -1)
    if arr.dtype == np.uint8:
        return flat.astype(np.float64) / 255.0
    return flat.astype(np.float64)


# ---------------------------------------------------------------------------
# Colored environments
# ---------------------------------------------------------------------------

# class index -> binary label
LABEL_MAPS = {
    "identity": None,
    "parity": lambda c: c % 2,
    # t-shirt, pullover, coat, shirt, bag -> 0; trouser, dress, sandal, sneaker, ankle boot -> 1
    "fashion": lambda c: np.isin(c, [1, 3, 5, 7, 9]).astype(np.int64),
    # EMNIST letters are 1-based (a = 1)
    "emnist": lambda c: (~np.isin(c, [ord(ch) - ord("a") + 1 for ch in "acegikmoqsuvy"])).astype(np.int64),
}


@dataclass(frozen=True)
class ColoredSpec:
    label_noise: float = 0.25
    color_flip: float = 0.1
    label_map: str = "identity"

    def __post_init__(self):
        for name in ("label_noise", "color_flip"):
            v = getattr(self, name)
            if not 0 <= v <= 1:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")
        if self.label_map not in LABEL_MAPS:
            raise ValueError(f"unknown label map {self.label_map!r}")


def pc_schedule(n: int) -> list[float]:
    """Color-flip probability per training environment, linear from 0.4 to 0.1."""
    if n < 2:
        raise ValueError("the color schedule needs at least 2 environments")
    return [0.4 - i * 0.3 / (n - 1) for i in range(n)]


def binary_labels(labels: np.ndarray, label_map: str) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    fn = LABEL_MAPS[label_map]
    out = labels if fn is None else np.asarray(fn(labels), dtype=np.int64)
    if not np.all((out == 0) | (out == 1)):
        raise ValueError(f"label map {label_map!r} produced non-binary labels")
    return out


def colorize(images: np.ndarray, labels: np.ndarray, spec: ColoredSpec, seed: int,
             env_index: int = 0) -> LabeledDataset:
    """Two-channel colored environment.

    The binary label is flipped with probability ``label_noise``; the color
    ``z`` is that noisy label flipped with probability ``color_flip``. The
    glyph is written into channel ``z`` (0 = green, 1 = red), the other channel
    stays zero.
    """
    images = np.asarray(images, dtype=np.float64).reshape(len(images), -1)
    if images.shape[1] != IMAGE_PIXELS:
        raise ValueError(f"expected {IMAGE_PIXELS}-pixel images, got {images.shape[1]}")
    rng = np.random.default_rng(seed)
    y = binary_labels(labels, spec.label_map)
    y = y ^ (rng.random(len(y)) < spec.label_noise)
    z = y ^ (rng.random(len(y)) < spec.color_flip)
    out = np.zeros((len(y), 2 * IMAGE_PIXELS))
    rows = np.arange(len(y))
    out.reshape(len(y), 2, IMAGE_PIXELS)[rows, z] = images
    return LabeledDataset(out, y.astype(np.int64), env_index, seed, colors=z.astype(np.int64))


# ---------------------------------------------------------------------------
# Procedural glyphs
# ---------------------------------------------------------------------------

GLYPHS = ("ring", "bar", "cross", "box")


def _render(kind: str, n: int, rng: np.random.Generator) -> np.ndarray:
    yy, xx = np.mgrid[0:IMAGE_SIDE, 0:IMAGE_SIDE].astype(np.float64)
    yy = yy[None]
    xx = xx[None]
    cy = 13.5 + rng.uniform(-3, 3, n)[:, None, None]
    cx = 13.5 + rng.uniform(-3, 3, n)[:, None, None]
    width = rng.uniform(1.2, 2.4, n)[:, None, None]
    ink = rng.uniform(0.7, 1.0, n)[:, None, None]
    tilt = rng.uniform(-0.35, 0.35, n)[:, None, None]
    dy, dx = yy - cy, xx - cx
    u = dx * np.cos(tilt) + dy * np.sin(tilt)
    v = -dx * np.sin(tilt) + dy * np.cos(tilt)
    if kind == "ring":
        ry = rng.uniform(7, 10, n)[:, None, None]
        rx = rng.uniform(4, 7, n)[:, None, None]
        dist = np.abs(np.sqrt((u / rx) ** 2 + (v / ry) ** 2) - 1.0) * np.minimum(rx, ry)
    elif kind == "bar":
        half = rng.uniform(7, 10, n)[:, None, None]
        dist = np.hypot(np.maximum(np.abs(v) - half, 0.0), u)
    elif kind == "cross":
        half = rng.uniform(5, 8, n)[:, None, None]
        d1 = np.hypot(np.maximum(np.abs(v) - half, 0.0), u)
        d2 = np.hypot(np.maximum(np.abs(u) - half, 0.0), v)
        dist = np.minimum(d1, d2)
    elif kind == "box":
        half = rng.uniform(5, 8, n)[:, None, None]
        dist = np.abs(np.maximum(np.abs(u), np.abs(v)) - half)
    else:
        raise ValueError(f"unknown glyph {kind!r}")
    img = ink * np.clip(1.0 - (dist - width) / 1.0, 0.0, 1.0)
    img += rng.uniform(0.0, 0.08, img.shape)
    return np.clip(img, 0.0, 1.0).reshape(n, IMAGE_PIXELS)


def synthetic_glyphs(n: int, seed: int, kinds: tuple[str, ...] = ("ring", "bar")) -> LabeledDataset:
    """``n`` 28x28 glyph images with class ``i`` drawn as ``kinds[i]``."""
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, len(kinds), n)
    images = np.zeros((n, IMAGE_PIXELS))
    for c, kind in enumerate(kinds):
        idx = np.flatnonzero(labels == c)
        if idx.size:
            images[idx] = _render(kind, idx.size, rng)
    return LabeledDataset(images, labels.astype(np.int64), 0, seed)


def synthetic_digits(n: int, seed: int) -> LabeledDataset:
    """Two-class stand-in for digit images: rings (class 0) and bars (class 1)."""
    return synthetic_glyphs(n, seed, ("ring", "bar"))


def gaussian_blobs(n: int, seed: int, d: int = 10, separation: float = 4.0) -> LabeledDataset:
    """Two isotropic unit-variance Gaussian classes whose means differ by ``separation`` along axis 0."""
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, 2, n)
    x = rng.standard_normal((n, d))
    x[:, 0] += (labels - 0.5) * separation
    return LabeledDataset(x, labels.astype(np.int64), 0, seed)


# ---------------------------------------------------------------------------
# Linear structural equation model
# ---------------------------------------------------------------------------


@dataclass
class SEMSpec:
    """Weights of a linear SEM with hidden confounder ``H``.

    Row-vector convention::

        H  ~ N(0, s^2)
        X1 = H @ w_h1 + s * e1
        Y  = X1 @ w_1y + H @ w_hy + s * ey
        X2 = Y * w_y2 + H @ w_h2 + s2 * e2

    with ``s2 = s`` when ``scale_x2_noise`` else 1. The observed input is
    ``concat(X1, X2)``.
    """

    w_h1: np.ndarray
    w_hy: np.ndarray
    w_1y: np.ndarray
    w_y2: np.ndarray
    w_h2: np.ndarray
    scale_x2_noise: bool = False

    @classmethod
    def draw(cls, seed: int, d_causal: int = 10, d_noncausal: int = 10,
             hidden_scale: float = 0.1, scale_x2_noise: bool = False) -> "SEMSpec":
        rng = np.random.default_rng(seed)
        dh = d_causal
        return cls(
            w_h1=rng.standard_normal((dh, d_causal)) * hidden_scale,
            w_hy=rng.standard_normal(dh) * hidden_scale,
            w_1y=rng.standard_normal(d_causal),
            w_y2=rng.standard_normal(d_noncausal),
            w_h2=rng.standard_normal((dh, d_noncausal)) * hidden_scale,
            scale_x2_noise=scale_x2_noise,
        )

    @property
    def d_causal(self) -> int:
        return self.w_1y.shape[0]

    @property
    def d_noncausal(self) -> int:
        return self.w_y2.shape[0]

    def causal_readout(self) -> np.ndarray:
        return np.concatenate([self.w_1y, np.zeros(self.d_noncausal)])


def gen_sem(spec: SEMSpec, env_scale: float, n: int, seed: int, env_index: int = 0) -> LabeledDataset:
    """Sample ``n`` rows of ``(concat(X1, X2), Y)`` from one environment."""
    if n < 1:
        raise ValueError("need at least one sample")
    rng = np.random.default_rng(seed)
    s = float(env_scale)
    dh = spec.w_h1.shape[0]
    h = rng.standard_normal((n, dh)) * s
    x1 = h @ spec.w_h1 + s * rng.standard_normal((n, spec.d_causal))
    y = x1 @ spec.w_1y + h @ spec.w_hy + s * rng.standard_normal(n)
    s2 = s if spec.scale_x2_noise else 1.0
    x2 = y[:, None] * spec.w_y2[None, :] + h @ spec.w_h2 + s2 * rng.standard_normal((n, spec.d_noncausal))
    return LabeledDataset(np.concatenate([x1, x2], axis=1), y, env_index, seed)


# ---------------------------------------------------------------------------
# Export
# ---------------------------------------------------------------------------


def save_dataset(ds: LabeledDataset, path: str | os.PathLike) -> None:
    records = {
        "inputs": ds.inputs,
        "labels": np.asarray(ds.labels, dtype=np.float64),
        "meta": np.array([ds.env_index, ds.seed], dtype=np.float64),
    }
    if ds.colors is not None:
        records["colors"] = np.asarray(ds.colors, dtype=np.float64)
    write_records(path, DATASET_MAGIC, records)


def load_dataset(path: str | os.PathLike, integer_labels: bool = True) -> LabeledDataset:
    rec = read_records(path, DATASET_MAGIC)
    labels = rec["labels"].astype(np.int64) if integer_labels else rec["labels"]
    colors = rec.get("colors")
    return LabeledDataset(rec["inputs"], labels, int(rec["meta"][0]), int(rec["meta"][1]),
                          colors=None if colors is None else colors.astype(np.int64))
