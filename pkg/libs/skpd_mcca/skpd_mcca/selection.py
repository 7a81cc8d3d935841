from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
import logging
import math
import time
from typing import Any, Sequence

import numpy as np

from .config import settings
from .errors import ModelSelectionError, SkpdError
from .linalg import sample_covariance
from .mcca import (
    Dataset,
    HyperParams,
    InitScheme,
    SkpdModel,
    blocked_images,
    fit,
    image_variate,
    initial_factors,
)
from .solvers import normalize_to_unit_variance, solve_ridge_ls


logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SearchGrid:
    lambda1_values: tuple[float, ...]
    lambda2_values: tuple[float, ...]
    rank_values: tuple[int, ...] = (1, 2, 3, 4, 5)
    block_dims: tuple[int, ...] = (8, 8)

    def __post_init__(self) -> None:
        for name in ("lambda1_values", "lambda2_values"):
            values = tuple(float(v) for v in getattr(self, name))
            if not values:
                raise ValueError(f"{name} must be non-empty")
            if any(not (v > 0 and math.isfinite(v)) for v in values):
                raise ValueError(f"{name} must be positive and finite")
            if any(a <= b for a, b in zip(values, values[1:])):
                raise ValueError(f"{name} must be strictly descending")
            object.__setattr__(self, name, values)
        ranks = tuple(int(r) for r in self.rank_values)
        if not ranks or any(r < 1 for r in ranks):
            raise ValueError("rank_values must be non-empty positive integers")
        object.__setattr__(self, "rank_values", ranks)
        object.__setattr__(self, "block_dims", tuple(int(d) for d in self.block_dims))

    @property
    def n_cells(self) -> int:
        return len(self.lambda1_values) * len(self.lambda2_values) * len(self.rank_values)

    def to_dict(self) -> dict[str, Any]:
        return {
            "lambda1_values": list(self.lambda1_values),
            "lambda2_values": list(self.lambda2_values),
            "rank_values": list(self.rank_values),
            "block_dims": list(self.block_dims),
        }

    @classmethod
    def from_dict(cls, doc: dict[str, Any]) -> SearchGrid:
        unknown = set(doc) - {"lambda1_values", "lambda2_values", "rank_values", "block_dims"}
        if unknown:
            raise ValueError(f"unknown grid keys: {sorted(unknown)}")
        return cls(
            lambda1_values=tuple(doc["lambda1_values"]),
            lambda2_values=tuple(doc["lambda2_values"]),
            rank_values=tuple(doc.get("rank_values", (1, 2, 3, 4, 5))),
            block_dims=tuple(doc.get("block_dims", (8, 8))),
        )


def lambda_max(
    data: Dataset,
    block_dims: Sequence[int],
    *,
    init: InitScheme | str = InitScheme.ONES,
    seed: int | None = None,
    tau: float | None = None,
) -> tuple[float, float]:
    """Smallest (lambda1, lambda2) that zero theta and alpha at the starting point.

    The alpha bound uses the unpenalized, normalized theta from the first step.
    """

    tau = settings.tau if tau is None else tau
    hp = HyperParams(lambda1=0.0, lambda2=0.0, rank=1, block_dims=tuple(block_dims), tau=tau)
    shape = hp.block_shape(data.image_dims)
    xr = blocked_images(data, shape)
    alphas, betas = initial_factors(InitScheme(init), shape.n_blocks, shape.block_size, 1, seed)
    n = data.n

    b1 = data.genetics.T @ (image_variate(xr, alphas, betas) + data.outcome) / n
    sigma1 = sample_covariance(data.genetics, tau)
    theta0 = normalize_to_unit_variance(solve_ridge_ls(sigma1, b1), sigma1)

    lam_vec = data.genetics @ theta0 + data.outcome
    x_beta = np.einsum("npd,d->np", xr, betas[:, 0], optimize=True)
    b2 = x_beta.T @ lam_vec / n
    return float(np.max(np.abs(b1))), float(np.max(np.abs(b2)))


def default_grid(
    data: Dataset,
    block_dims: Sequence[int] = (8, 8),
    *,
    ranks: Sequence[int] = (1, 2, 3, 4, 5),
    n_points: int = 10,
    min_ratio: float = 0.01,
    init: InitScheme | str = InitScheme.ONES,
    seed: int | None = None,
) -> SearchGrid:
    """Log-spaced grid from lambda_max down to min_ratio * lambda_max."""

    if n_points < 1 or not (0 < min_ratio <= 1):
        raise ValueError("need n_points >= 1 and 0 < min_ratio <= 1")
    l1_max, l2_max = lambda_max(data, block_dims, init=init, seed=seed)
    ratios = np.logspace(0.0, math.log10(min_ratio), n_points) if n_points > 1 else np.ones(1)
    return SearchGrid(
        lambda1_values=tuple(float(l1_max * r) for r in ratios),
        lambda2_values=tuple(float(l2_max * r) for r in ratios),
        rank_values=tuple(ranks),
        block_dims=tuple(block_dims),
    )


def bic_score(data: Dataset, model: SkpdModel, hp: HyperParams | None = None) -> float:
    """Modified BIC: negative fit term plus (log n)/n times the l1 norms of theta and alpha."""

    n = data.n
    xr = blocked_images(data, model.block_shape)
    img = image_variate(xr, model.alphas, model.betas)
    z_theta = data.genetics @ model.theta
    y = data.outcome
    fit_term = -float(np.mean((y + z_theta) * img + y * z_theta))
    complexity = float(np.abs(model.theta).sum()) + float(np.abs(model.alphas).sum())
    return fit_term + math.log(n) / n * complexity


@dataclass(frozen=True)
class CellResult:
    index: tuple[int, int, int]
    rank: int
    lambda1: float
    lambda2: float
    bic: float | None
    objective: float | None = None
    converged: bool = False
    degenerate: bool = False
    iterations: int = 0
    nnz_theta: int = 0
    active_blocks: int = 0
    wall_time: float = 0.0
    error: str | None = None

    def key(self) -> tuple[float, float, float, int]:
        # Ties go to larger lambda1, then larger lambda2, then smaller rank.
        return (self.bic, -self.lambda1, -self.lambda2, self.rank)  # type: ignore[return-value]

    def to_dict(self, *, include_timing: bool = False) -> dict[str, Any]:
        doc: dict[str, Any] = {
            "index": list(self.index),
            "rank": self.rank,
            "lambda1": self.lambda1,
            "lambda2": self.lambda2,
            "bic": self.bic,
            "objective": self.objective,
            "converged": self.converged,
            "degenerate": self.degenerate,
            "iterations": self.iterations,
            "nnz_theta": self.nnz_theta,
            "active_blocks": self.active_blocks,
            "error": self.error,
        }
        if include_timing:
            doc["wall_time"] = self.wall_time
        return doc


CSV_COLUMNS = (
    "rank",
    "lambda1",
    "lambda2",
    "bic",
    "objective",
    "converged",
    "degenerate",
    "iterations",
    "nnz_theta",
    "active_blocks",
    "error",
)


@dataclass(frozen=True, eq=False)
class BicReport:
    grid: SearchGrid
    cells: tuple[CellResult, ...]
    best: CellResult
    best_model: SkpdModel
    wall_time: float = field(default=0.0)

    def to_dict(self, *, include_timing: bool = False) -> dict[str, Any]:
        doc: dict[str, Any] = {
            "grid": self.grid.to_dict(),
            "cells": [c.to_dict(include_timing=include_timing) for c in self.cells],
            "best": self.best.to_dict(include_timing=include_timing),
        }
        if include_timing:
            doc["wall_time"] = self.wall_time
        return doc

    def csv_rows(self) -> list[list[Any]]:
        rows: list[list[Any]] = []
        for c in self.cells:
            doc = c.to_dict()
            rows.append(["" if doc[k] is None else doc[k] for k in CSV_COLUMNS])
        return rows


def cell_seed(seed: int, r_idx: int, i: int, j: int) -> int:
    """Per-cell seed derived from the cell's grid position only."""

    return int(np.random.SeedSequence([seed, r_idx, i, j]).generate_state(1)[0])


def _fit_cell(
    data: Dataset, hp: HyperParams, init: InitScheme, seed: int, warm: SkpdModel | None
) -> tuple[SkpdModel | None, str | None]:
    try:
        return fit(data, hp, init, seed, warm_start=warm), None
    except SkpdError as exc:
        logger.warning("grid cell failed (%s): %s", hp, exc)
        return None, f"{type(exc).__name__}: {exc}"


def _run_chain(
    data: Dataset,
    grid: SearchGrid,
    r_idx: int,
    init: InitScheme,
    seed: int,
    tau: float,
) -> tuple[list[CellResult], tuple[CellResult, SkpdModel] | None]:
    """All cells of one rank: warm-started over lambda2 within a lambda1 row,
    each row seeded from the first cell of the previous row."""

    rank = grid.rank_values[r_idx]
    cells: list[CellResult] = []
    best: tuple[CellResult, SkpdModel] | None = None
    row_head: SkpdModel | None = None

    for i, l1 in enumerate(grid.lambda1_values):
        warm = row_head
        for j, l2 in enumerate(grid.lambda2_values):
            hp = HyperParams(
                lambda1=l1, lambda2=l2, rank=rank, block_dims=grid.block_dims, tau=tau
            )
            started = time.perf_counter()
            model, error = _fit_cell(data, hp, init, cell_seed(seed, r_idx, i, j), warm)
            elapsed = time.perf_counter() - started
            if model is None:
                cells.append(
                    CellResult((r_idx, i, j), rank, l1, l2, None, wall_time=elapsed, error=error)
                )
                continue
            cell = CellResult(
                index=(r_idx, i, j),
                rank=rank,
                lambda1=l1,
                lambda2=l2,
                bic=bic_score(data, model),
                objective=model.objective_trace[-1] if model.objective_trace else None,
                converged=model.converged,
                degenerate=model.degenerate,
                iterations=model.iterations,
                nnz_theta=int(np.count_nonzero(np.abs(model.theta) >= settings.zero_threshold)),
                active_blocks=int(model.active_blocks().sum()),
                wall_time=elapsed,
            )
            cells.append(cell)
            if best is None or cell.key() < best[0].key():
                best = (cell, model)
            warm = model
            if j == 0:
                row_head = model
    return cells, best


def grid_search(
    data: Dataset,
    grid: SearchGrid,
    init: InitScheme | str = InitScheme.ONES,
    seed: int = 0,
    parallelism: int = 1,
    *,
    tau: float | None = None,
) -> BicReport:
    """Fit every grid cell and keep the one with the smallest modified BIC.

    One chain per rank; chains are independent, so the report does not depend
    on `parallelism`.
    """

    init = InitScheme(init)
    tau = settings.tau if tau is None else tau
    started = time.perf_counter()
    n_chains = len(grid.rank_values)
    workers = max(1, min(int(parallelism), n_chains))

    if workers == 1:
        results = [_run_chain(data, grid, r, init, seed, tau) for r in range(n_chains)]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [
                pool.submit(_run_chain, data, grid, r, init, seed, tau) for r in range(n_chains)
            ]
            results = [f.result() for f in futures]

    cells: list[CellResult] = []
    best: tuple[CellResult, SkpdModel] | None = None
    for chain_cells, chain_best in results:
        cells.extend(chain_cells)
        if chain_best is not None and (best is None or chain_best[0].key() < best[0].key()):
            best = chain_best
    cells.sort(key=lambda c: c.index)

    if best is None:
        raise ModelSelectionError(f"all {len(cells)} grid cells failed")
    logger.info(
        "grid search done: %d cells, best rank=%d lambda1=%.4g lambda2=%.4g bic=%.6g",
        len(cells),
        best[0].rank,
        best[0].lambda1,
        best[0].lambda2,
        best[0].bic,
    )
    return BicReport(
        grid=grid,
        cells=tuple(cells),
        best=best[0],
        best_model=best[1],
        wall_time=time.perf_counter() - started,
    )
