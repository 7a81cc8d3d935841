from __future__ import annotations

from dataclasses import dataclass
from math import prod
from typing import Sequence, TypeAlias

import numpy as np

from .errors import DimensionError


# Dense real tensor of order 2 or 3, float64, row-major (last index fastest).
DenseTensor: TypeAlias = np.ndarray


def as_dense_tensor(values: object, *, name: str = "tensor") -> DenseTensor:
    t = np.ascontiguousarray(values, dtype=np.float64)
    if t.ndim not in (2, 3):
        raise DimensionError(f"{name} must be order 2 or 3, got order {t.ndim}")
    if any(d < 1 for d in t.shape):
        raise DimensionError(f"{name} has an empty extent: {t.shape}")
    if not np.all(np.isfinite(t)):
        raise DimensionError(f"{name} has non-finite entries")
    return t


def _pad3(dims: Sequence[int], *, what: str) -> tuple[int, int, int]:
    dims = tuple(int(d) for d in dims)
    if len(dims) == 2:
        dims = dims + (1,)
    if len(dims) != 3:
        raise DimensionError(f"{what} must have 2 or 3 extents, got {dims}")
    if any(d < 1 for d in dims):
        raise DimensionError(f"{what} extents must be >= 1, got {dims}")
    return dims  # type: ignore[return-value]


@dataclass(frozen=True)
class BlockShape:
    """Blocking of a (D1, D2, D3) image into a (p1, p2, p3) grid of (d1, d2, d3) blocks.

    Order-2 images are carried with a trailing extent of 1; `order` remembers the
    caller's order so composed coefficients come back in the image's own shape.
    """

    full_dims: tuple[int, int, int]
    block_dims: tuple[int, int, int]
    grid_dims: tuple[int, int, int]
    order: int = 3

    def __post_init__(self) -> None:
        if self.order not in (2, 3):
            raise DimensionError(f"order must be 2 or 3, got {self.order}")
        for axis, (big, small, count) in enumerate(
            zip(self.full_dims, self.block_dims, self.grid_dims)
        ):
            if min(big, small, count) < 1 or small * count != big:
                raise DimensionError(
                    f"axis {axis}: grid {count} x block {small} != full extent {big}"
                )
        if self.order == 2 and self.full_dims[2] != 1:
            raise DimensionError("order-2 shapes need a trailing full extent of 1")

    @classmethod
    def from_dims(cls, full_dims: Sequence[int], block_dims: Sequence[int]) -> BlockShape:
        order = len(tuple(full_dims))
        full = _pad3(full_dims, what="full_dims")
        block = _pad3(block_dims, what="block_dims")
        for axis, (big, small) in enumerate(zip(full, block)):
            if big % small:
                raise DimensionError(
                    f"block extent {small} does not divide image extent {big} on axis {axis}"
                )
        grid = tuple(big // small for big, small in zip(full, block))
        return cls(full_dims=full, block_dims=block, grid_dims=grid, order=order)

    @property
    def n_blocks(self) -> int:
        return prod(self.grid_dims)

    @property
    def block_size(self) -> int:
        return prod(self.block_dims)

    @property
    def image_dims(self) -> tuple[int, ...]:
        return self.full_dims[: self.order]

    def block_index(self, j: int, k: int, l: int = 0) -> int:
        """Row of reshape_R holding grid block (j, k, l)."""

        p1, p2, p3 = self.grid_dims
        if not (0 <= j < p1 and 0 <= k < p2 and 0 <= l < p3):
            raise DimensionError(f"block ({j}, {k}, {l}) outside grid {self.grid_dims}")
        return (j * p2 + k) * p3 + l


def vec(t: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(t, dtype=np.float64).reshape(-1)


def vec_inverse(v: np.ndarray, dims: Sequence[int]) -> DenseTensor:
    v = np.asarray(v, dtype=np.float64)
    dims = tuple(int(d) for d in dims)
    if v.ndim != 1 or v.size != prod(dims):
        raise DimensionError(f"vector of length {v.size} cannot fill dims {dims}")
    return v.reshape(dims).copy()


def kron(a: np.ndarray, b: np.ndarray) -> DenseTensor:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != b.ndim:
        raise DimensionError(f"kron needs equal orders, got {a.ndim} and {b.ndim}")
    return np.kron(a, b)


def _as_full3(t: np.ndarray, shape: BlockShape) -> np.ndarray:
    t = np.asarray(t, dtype=np.float64)
    if t.shape not in (shape.full_dims, shape.image_dims):
        raise DimensionError(f"tensor dims {t.shape} incompatible with {shape.full_dims}")
    return t.reshape(shape.full_dims)


def reshape_R(t: np.ndarray, shape: BlockShape) -> np.ndarray:
    """Blocks-by-block-volume matrix; row (j,k,l) is vec of that block, l fastest."""

    p1, p2, p3 = shape.grid_dims
    d1, d2, d3 = shape.block_dims
    full = _as_full3(t, shape)
    six = full.reshape(p1, d1, p2, d2, p3, d3).transpose(0, 2, 4, 1, 3, 5)
    return np.ascontiguousarray(six).reshape(shape.n_blocks, shape.block_size)


def reshape_R_batch(images: np.ndarray, shape: BlockShape) -> np.ndarray:
    """reshape_R applied to every sample of an (n, *image_dims) stack -> (n, p, d)."""

    images = np.asarray(images, dtype=np.float64)
    n = images.shape[0]
    if images.shape[1:] not in (shape.full_dims, shape.image_dims):
        raise DimensionError(f"image dims {images.shape[1:]} incompatible with {shape.full_dims}")
    p1, p2, p3 = shape.grid_dims
    d1, d2, d3 = shape.block_dims
    seven = images.reshape(n, p1, d1, p2, d2, p3, d3).transpose(0, 1, 3, 5, 2, 4, 6)
    return np.ascontiguousarray(seven).reshape(n, shape.n_blocks, shape.block_size)


def reshape_R_inverse(m: np.ndarray, shape: BlockShape) -> DenseTensor:
    m = np.asarray(m, dtype=np.float64)
    if m.shape != (shape.n_blocks, shape.block_size):
        raise DimensionError(
            f"matrix {m.shape} does not match {shape.n_blocks} blocks x {shape.block_size}"
        )
    p1, p2, p3 = shape.grid_dims
    d1, d2, d3 = shape.block_dims
    six = m.reshape(p1, p2, p3, d1, d2, d3).transpose(0, 3, 1, 4, 2, 5)
    return np.ascontiguousarray(six).reshape(shape.image_dims)
