from __future__ import annotations

from typing import Sequence

import numpy as np

from .errors import DimensionError, GenerationError
from .tensor import BlockShape, reshape_R


SHAPE_KINDS = ("one_block", "three_block", "butterfly", "custom")

DEFAULT_POSITIONS: dict[str, tuple[tuple[int, int], ...]] = {
    "one_block": ((1, 1),),
    "three_block": ((0, 0), (1, 2), (3, 1)),
}

# Butterfly on a 4x4 grid of 8x8 blocks: grid block -> notch depth. Left-wing
# notches cut within-block column 0, right-wing notches column 7, rows [0, k).
_BUTTERFLY_LEFT = {(0, 0): 1, (1, 0): 2, (2, 0): 3, (3, 0): 4, (1, 1): 5, (2, 1): 6}
_BUTTERFLY_RIGHT = {(0, 3): 1, (1, 3): 2, (2, 3): 3, (3, 3): 4, (1, 2): 5, (2, 2): 6}
_BUTTERFLY_BLOCK = 8
_BUTTERFLY_GRID = 4
_BUTTERFLY_MIN_RANK = 11


def _plane_dims(dims: Sequence[int]) -> tuple[int, int]:
    dims = tuple(int(d) for d in dims)
    if len(dims) == 3 and dims[2] == 1:
        dims = dims[:2]
    if len(dims) != 2 or min(dims) < 1:
        raise DimensionError(f"signal shapes are 2-D (or trailing extent 1), got {dims}")
    return dims  # type: ignore[return-value]


def _blocks_mask(
    dims: tuple[int, int],
    block_dims: tuple[int, int],
    positions: Sequence[Sequence[int]],
) -> np.ndarray:
    shape = BlockShape.from_dims(dims, block_dims)
    p1, p2, _ = shape.grid_dims
    d1, d2 = block_dims
    mask = np.zeros(dims)
    seen: set[tuple[int, int]] = set()
    for pos in positions:
        j, k = (int(v) for v in pos)
        if not (0 <= j < p1 and 0 <= k < p2):
            raise DimensionError(f"block position {(j, k)} outside the {p1}x{p2} grid")
        if (j, k) in seen:
            raise DimensionError(f"block position {(j, k)} listed twice")
        seen.add((j, k))
        mask[j * d1 : (j + 1) * d1, k * d2 : (k + 1) * d2] = 1.0
    return mask


def butterfly_mask(dims: Sequence[int]) -> np.ndarray:
    """Fixed 32x32 butterfly, centered on the 8x8 grid of a larger image."""

    d1, d2 = _plane_dims(dims)
    b = _BUTTERFLY_BLOCK
    if d1 % b or d2 % b or d1 < b * _BUTTERFLY_GRID or d2 < b * _BUTTERFLY_GRID:
        raise DimensionError(f"butterfly needs dims that are multiples of 8 and >= 32, got {dims}")
    off_j = (d1 // b - _BUTTERFLY_GRID) // 2
    off_k = (d2 // b - _BUTTERFLY_GRID) // 2
    mask = np.zeros((d1, d2))
    for notches, col in ((_BUTTERFLY_LEFT, 0), (_BUTTERFLY_RIGHT, b - 1)):
        for (j, k), depth in notches.items():
            r0 = (off_j + j) * b
            c0 = (off_k + k) * b
            block = np.ones((b, b))
            block[:depth, col] = 0.0
            mask[r0 : r0 + b, c0 : c0 + b] = block

    rank = np.linalg.matrix_rank(reshape_R(mask, BlockShape.from_dims((d1, d2), (b, b))))
    if rank < _BUTTERFLY_MIN_RANK:
        raise GenerationError(f"butterfly mask has block rank {rank}, expected > 10")
    return mask


def make_signal_shape(
    kind: str,
    dims: Sequence[int],
    *,
    block_dims: Sequence[int] = (8, 8),
    positions: Sequence[Sequence[int]] | None = None,
    mask: np.ndarray | None = None,
) -> np.ndarray:
    """Binary ground-truth mask of the requested kind, shaped like `dims`."""

    plane = _plane_dims(dims)
    if kind in ("one_block", "three_block"):
        bd = _plane_dims(block_dims)
        pos = DEFAULT_POSITIONS[kind] if positions is None else tuple(positions)
        expected = 1 if kind == "one_block" else 3
        if len(pos) != expected:
            raise DimensionError(f"{kind} needs {expected} block positions, got {len(pos)}")
        out = _blocks_mask(plane, bd, pos)
    elif kind == "butterfly":
        out = butterfly_mask(plane)
    elif kind == "custom":
        if mask is None:
            raise GenerationError("custom shape needs a mask")
        out = np.asarray(mask, dtype=np.float64).reshape(-1)
        if out.size != plane[0] * plane[1]:
            raise DimensionError(f"custom mask has {out.size} entries, image has {plane}")
        out = (out != 0.0).astype(np.float64).reshape(plane)
        if not out.any():
            raise GenerationError("custom mask is empty")
    else:
        raise GenerationError(f"unknown signal shape {kind!r}; expected one of {SHAPE_KINDS}")
    return out.reshape(tuple(int(d) for d in dims))
