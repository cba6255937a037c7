"""Parameter-free mask-guided aggregation of visual prompts.

Prompts are rasterized to a binary mask over the full feature raster,
split into ``N`` patches of ``H x W`` cells, replicated over ``Q`` query
slots, and pooled against ``C x N x H x W`` features::

    V[q, n, c] = sum_{h, w} X[c, n, h, w] * M[q, n, h, w]

followed by a cosine positional encoding ``PE[n, c] = cos(n / s**(2c/C))``
added with weight ``alpha``.

Patches are laid out row-major over a ``rows x cols`` patch grid; a bare
``(N, H, W)`` layout means a square grid, so ``N`` must be a perfect square.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DimensionMismatch, EmptyPrompt
from .geometry import BinaryMask, Box

__all__ = [
    "GridLayout",
    "FeatureGrid",
    "PromptMask",
    "VisualPrompt",
    "PeConfig",
    "prompt_to_mask",
    "rasterize_prompt",
    "partition",
    "aggregate",
    "positional_encoding",
    "fuse",
]

PROMPT_KINDS = ("point", "box", "scribble", "mask")


@dataclass(frozen=True)
class GridLayout:
    rows: int
    cols: int
    patch_height: int
    patch_width: int

    def __post_init__(self):
        if min(self.rows, self.cols, self.patch_height, self.patch_width) < 1:
            raise ValueError(f"all layout dimensions must be >= 1: {self}")

    @classmethod
    def from_nhw(cls, n: int, h: int, w: int) -> "GridLayout":
        side = math.isqrt(n)
        if side * side != n:
            raise ValueError(f"{n} patches do not form a square grid; pass a GridLayout")
        return cls(side, side, h, w)

    @property
    def num_patches(self) -> int:
        return self.rows * self.cols

    @property
    def raster_shape(self) -> tuple[int, int]:
        return self.rows * self.patch_height, self.cols * self.patch_width


# default: 9 patches of 8x8 cells
DEFAULT_LAYOUT = GridLayout(3, 3, 8, 8)


@dataclass(frozen=True, eq=False)
class FeatureGrid:
    data: np.ndarray  # (C, N, H, W)

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=float)
        if arr.ndim != 4 or min(arr.shape) < 1:
            raise DimensionMismatch(f"features must be C x N x H x W, got {arr.shape}")
        object.__setattr__(self, "data", arr)

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def patches(self) -> int:
        return self.data.shape[1]


@dataclass(frozen=True, eq=False)
class PromptMask:
    data: np.ndarray  # (Q, N, H, W), entries in [0, 1]

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=float)
        if arr.ndim != 4 or min(arr.shape) < 1:
            raise DimensionMismatch(f"mask must be Q x N x H x W, got {arr.shape}")
        if arr.min() < 0.0 or arr.max() > 1.0:
            raise ValueError("prompt mask entries must lie in [0, 1]")
        object.__setattr__(self, "data", arr)

    @property
    def queries(self) -> int:
        return self.data.shape[0]


@dataclass(frozen=True)
class VisualPrompt:
    """``payload`` by kind: point ``(x, y)``; box ``Box``; scribble a sequence
    of ``(x, y)`` vertices; mask a ``BinaryMask``.  Coordinates are normalized."""

    kind: str
    payload: object

    def __post_init__(self):
        if self.kind not in PROMPT_KINDS:
            raise ValueError(f"unknown prompt kind {self.kind!r}")
        ok = {
            "point": lambda p: len(p) == 2,
            "box": lambda p: isinstance(p, Box),
            "scribble": lambda p: all(len(v) == 2 for v in p),
            "mask": lambda p: isinstance(p, BinaryMask),
        }[self.kind]
        if not ok(self.payload):
            raise ValueError(f"payload does not match prompt kind {self.kind!r}")


@dataclass(frozen=True)
class PeConfig:
    temperature: float = 10000.0
    alpha: float = 1.0

    def __post_init__(self):
        if self.temperature <= 0:
            raise ValueError("temperature must be > 0")


def _cell(x: float, y: float, shape: tuple[int, int]) -> tuple[int, int]:
    rows, cols = shape
    r = min(max(int(math.floor(y * rows)), 0), rows - 1)
    c = min(max(int(math.floor(x * cols)), 0), cols - 1)
    return r, c


def _draw_line(raster: np.ndarray, a: tuple[int, int], b: tuple[int, int]) -> None:
    # Bresenham over cell coordinates
    (r0, c0), (r1, c1) = a, b
    dr, dc = abs(r1 - r0), -abs(c1 - c0)
    sr = 1 if r0 < r1 else -1
    sc = 1 if c0 < c1 else -1
    err = dr + dc
    while True:
        raster[r0, c0] = True
        if (r0, c0) == (r1, c1):
            return
        e2 = 2 * err
        if e2 >= dc:
            err += dc
            r0 += sr
        if e2 <= dr:
            err += dr
            c0 += sc


def rasterize_prompt(p: VisualPrompt, shape: tuple[int, int], point_radius: int = 1) -> np.ndarray:
    """Boolean raster of ``shape`` (rows, cols) for one prompt."""
    rows, cols = shape
    raster = np.zeros(shape, dtype=bool)
    if p.kind == "point":
        r, c = _cell(*p.payload, shape)
        raster[max(r - point_radius, 0):r + point_radius + 1,
               max(c - point_radius, 0):c + point_radius + 1] = True
    elif p.kind == "box":
        b = p.payload
        r0 = min(int(math.floor(b.y0 * rows)), rows - 1)
        c0 = min(int(math.floor(b.x0 * cols)), cols - 1)
        # cells overlapping the box; a zero-extent side still covers one cell
        r1 = max(int(math.ceil(b.y1 * rows)), r0 + 1)
        c1 = max(int(math.ceil(b.x1 * cols)), c0 + 1)
        raster[r0:r1, c0:c1] = True
    elif p.kind == "scribble":
        cells = [_cell(x, y, shape) for x, y in p.payload]
        for a, b in zip(cells, cells[1:]):
            _draw_line(raster, a, b)
        if len(cells) == 1:
            raster[cells[0]] = True
    else:
        src = p.payload.data
        ri = np.minimum(((np.arange(rows) + 0.5) * src.shape[0] / rows).astype(int), src.shape[0] - 1)
        ci = np.minimum(((np.arange(cols) + 0.5) * src.shape[1] / cols).astype(int), src.shape[1] - 1)
        raster = src[np.ix_(ri, ci)].copy()
    if not raster.any():
        raise EmptyPrompt(f"{p.kind} prompt rasterizes to an empty mask")
    return raster


def partition(raster: np.ndarray, layout: GridLayout) -> np.ndarray:
    """Split a ``(rows*H, cols*W)`` raster into ``(N, H, W)`` row-major patches."""
    if raster.shape != layout.raster_shape:
        raise DimensionMismatch(f"raster {raster.shape} vs layout {layout.raster_shape}")
    h, w = layout.patch_height, layout.patch_width
    blocks = raster.reshape(layout.rows, h, layout.cols, w).transpose(0, 2, 1, 3)
    return blocks.reshape(layout.num_patches, h, w)


def prompt_to_mask(p: VisualPrompt, grid: GridLayout | Sequence[int] = DEFAULT_LAYOUT,
                   queries: int = 1, point_radius: int = 1) -> PromptMask:
    layout = grid if isinstance(grid, GridLayout) else GridLayout.from_nhw(*grid)
    if queries < 1:
        raise ValueError("queries must be >= 1")
    raster = rasterize_prompt(p, layout.raster_shape, point_radius)
    patches = partition(raster, layout).astype(float)
    return PromptMask(np.broadcast_to(patches, (queries,) + patches.shape).copy())


def aggregate(x: FeatureGrid, m: PromptMask) -> np.ndarray:
    """Masked sum over each patch: returns ``(Q, N, C)``."""
    if x.data.shape[1:] != m.data.shape[1:]:
        raise DimensionMismatch(f"features {x.data.shape} and mask {m.data.shape} disagree on (N, H, W)")
    return np.einsum("cnhw,qnhw->qnc", x.data, m.data)


def positional_encoding(n: int, c: int, cfg: PeConfig = PeConfig()) -> np.ndarray:
    if n < 1 or c < 1:
        raise ValueError("N and C must be >= 1")
    pos = np.arange(n, dtype=float)[:, None]
    scale = cfg.temperature ** (2.0 * np.arange(c, dtype=float) / c)
    return np.cos(pos / scale[None, :])


def fuse(v: np.ndarray, cfg: PeConfig = PeConfig()) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if v.ndim != 3:
        raise DimensionMismatch(f"aggregated features must be Q x N x C, got {v.shape}")
    return v + cfg.alpha * positional_encoding(v.shape[1], v.shape[2], cfg)[None]
