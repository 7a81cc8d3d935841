from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field
import math
from typing import Any, Iterable, Sequence

import numpy as np

from .config import settings
from .errors import DimensionError
from .linalg import SeedLike
from .mcca import Dataset, SkpdModel, compose_C
from .simgen import GroundTruth


METRICS = ("tpr_C", "fpr_C", "tpr_theta", "fpr_theta", "mse_C", "mse_theta")


def _same_dims(estimate: np.ndarray, truth: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    est = np.asarray(estimate, dtype=np.float64)
    tru = np.asarray(truth, dtype=np.float64)
    if est.size != tru.size or (est.ndim == tru.ndim and est.shape != tru.shape):
        raise DimensionError(f"estimate dims {est.shape} differ from truth dims {tru.shape}")
    return est.reshape(-1), tru.reshape(-1)


def support_rates(
    estimate: np.ndarray,
    truth: np.ndarray,
    threshold: float | None = None,
) -> tuple[float | None, float | None]:
    """(TPR, FPR) of the thresholded support; an undefined rate is None."""

    thr = settings.zero_threshold if threshold is None else threshold
    est, tru = _same_dims(estimate, truth)
    est_on = np.abs(est) >= thr
    tru_on = np.abs(tru) >= thr
    positives = int(tru_on.sum())
    negatives = tru_on.size - positives
    tpr = float(np.sum(est_on & tru_on)) / positives if positives else None
    fpr = float(np.sum(est_on & ~tru_on)) / negatives if negatives else None
    return tpr, fpr


def mse(estimate: np.ndarray, truth: np.ndarray) -> float:
    """Squared l2 distance ||truth - estimate||^2."""

    est, tru = _same_dims(estimate, truth)
    diff = tru - est
    return float(diff @ diff)


def sign_align(
    estimate: tuple[np.ndarray, np.ndarray],
    truth: tuple[np.ndarray, np.ndarray],
) -> tuple[np.ndarray, np.ndarray]:
    """Flip (theta, C) jointly when that lowers mse_C + mse_theta; ties keep the sign."""

    theta_hat, c_hat = estimate
    theta_true, c_true = truth
    keep = mse(c_hat, c_true) + mse(theta_hat, theta_true)
    flip = mse(-c_hat, c_true) + mse(-theta_hat, theta_true)
    if flip < keep:
        return -theta_hat, -c_hat
    return theta_hat, c_hat


@dataclass(frozen=True)
class EvalReport:
    method: str
    replicate: int
    tpr_C: float | None
    fpr_C: float | None
    tpr_theta: float | None
    fpr_theta: float | None
    mse_C: float
    mse_theta: float
    wall_time_seconds: float = 0.0
    cell: str = ""
    degenerate: bool = False
    rank: int = 1

    def __post_init__(self) -> None:
        for name in ("tpr_C", "fpr_C", "tpr_theta", "fpr_theta"):
            value = getattr(self, name)
            if value is not None and not 0.0 <= value <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {value}")
        for name in ("mse_C", "mse_theta"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value >= 0.0):
                raise ValueError(f"{name} must be finite and >= 0, got {value}")

    def metric(self, name: str) -> float | None:
        return getattr(self, name)

    def to_dict(self, *, include_timing: bool = True) -> dict[str, Any]:
        doc = {
            "cell": self.cell,
            "method": self.method,
            "replicate": self.replicate,
            "rank": self.rank,
            "degenerate": self.degenerate,
            **{m: self.metric(m) for m in METRICS},
        }
        if include_timing:
            doc["wall_time_seconds"] = self.wall_time_seconds
        return doc


def evaluate_model(
    model: SkpdModel,
    truth: GroundTruth,
    *,
    method: str,
    replicate: int = 0,
    wall_time_seconds: float = 0.0,
    cell: str = "",
) -> EvalReport:
    theta_hat, c_hat = sign_align(
        (model.theta, compose_C(model)),
        (truth.theta_true, truth.C_true),
    )
    tpr_c, fpr_c = support_rates(c_hat, truth.mask)
    tpr_t, fpr_t = support_rates(theta_hat, truth.theta_unit)
    return EvalReport(
        method=method,
        replicate=replicate,
        tpr_C=tpr_c,
        fpr_C=fpr_c,
        tpr_theta=tpr_t,
        fpr_theta=fpr_t,
        mse_C=mse(c_hat, truth.C_true),
        mse_theta=mse(theta_hat, truth.theta_true),
        wall_time_seconds=wall_time_seconds,
        cell=cell,
        degenerate=model.degenerate,
        rank=model.rank,
    )


@dataclass(frozen=True)
class Summary:
    cell: str
    method: str
    count: int
    means: dict[str, float | None]
    std_errors: dict[str, float | None]
    median_wall_time: float

    def to_dict(self) -> dict[str, Any]:
        return {
            "cell": self.cell,
            "method": self.method,
            "count": self.count,
            "means": dict(self.means),
            "std_errors": dict(self.std_errors),
            "median_wall_time": self.median_wall_time,
        }


def _mean_se(values: Sequence[float]) -> tuple[float | None, float | None]:
    if not values:
        return None, None
    k = len(values)
    mean = math.fsum(values) / k
    if k == 1:
        return mean, None
    var = math.fsum((v - mean) ** 2 for v in values) / (k - 1)
    return mean, math.sqrt(var / k)


def aggregate(reports: Iterable[EvalReport]) -> list[Summary]:
    """Per (cell, method): mean and standard error of every metric.

    Undefined rates are skipped; a single replicate has no standard error.
    """

    groups: dict[tuple[str, str], list[EvalReport]] = defaultdict(list)
    for r in reports:
        groups[(r.cell, r.method)].append(r)
    if not groups:
        raise ValueError("aggregate needs at least one report")

    out: list[Summary] = []
    for (cell, method), items in sorted(groups.items()):
        means: dict[str, float | None] = {}
        ses: dict[str, float | None] = {}
        for name in METRICS:
            values = sorted(v for v in (r.metric(name) for r in items) if v is not None)
            means[name], ses[name] = _mean_se(values)
        out.append(
            Summary(
                cell=cell,
                method=method,
                count=len(items),
                means=means,
                std_errors=ses,
                median_wall_time=float(np.median([r.wall_time_seconds for r in items])),
            )
        )
    return out


@dataclass(frozen=True)
class ConsistencyReport:
    n_batches: int
    min_count: int
    counts: np.ndarray = field(repr=False)
    consistent_blocks: tuple[int, ...] = ()
    # genetic side: per-variable selection counts over batches
    theta_min_count: int = 0
    theta_counts: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int64), repr=False)
    consistent_genetics: tuple[int, ...] = ()

    def to_dict(self) -> dict[str, Any]:
        return {
            "n_batches": self.n_batches,
            "min_count": self.min_count,
            "counts": [int(c) for c in self.counts],
            "consistent_blocks": list(self.consistent_blocks),
            "theta_min_count": self.theta_min_count,
            "theta_counts": [int(c) for c in self.theta_counts],
            "consistent_genetics": list(self.consistent_genetics),
        }


def batch_consistency(
    models: Sequence[SkpdModel],
    min_count: int | None = None,
    theta_min_count: int | None = None,
) -> ConsistencyReport:
    """Count, per image block and per genetic variable, the batches that select it.

    Blocks are consistent when flagged in at least 90% of batches (9 of 10),
    genetic variables when selected in at least 30% (3 of 10).
    """

    if not models:
        raise ValueError("batch_consistency needs at least one model")
    shape = models[0].block_shape
    for m in models[1:]:
        if m.block_shape != shape:
            raise DimensionError(f"block shapes differ: {m.block_shape} vs {shape}")
        if m.theta.shape != models[0].theta.shape:
            raise DimensionError(
                f"theta lengths differ: {m.theta.shape} vs {models[0].theta.shape}"
            )
    k = len(models)
    need = math.ceil(9 * k / 10) if min_count is None else int(min_count)
    need_theta = math.ceil(3 * k / 10) if theta_min_count is None else int(theta_min_count)
    counts = np.sum([m.active_blocks() for m in models], axis=0).astype(np.int64)
    theta_counts = np.sum([m.selected_genetics() for m in models], axis=0).astype(np.int64)
    return ConsistencyReport(
        n_batches=k,
        min_count=need,
        counts=counts,
        consistent_blocks=tuple(int(b) for b in np.flatnonzero(counts >= need)),
        theta_min_count=need_theta,
        theta_counts=theta_counts,
        consistent_genetics=tuple(int(j) for j in np.flatnonzero(theta_counts >= need_theta)),
    )


def split_batches(data: Dataset, n_batches: int, seed: SeedLike) -> list[Dataset]:
    """Random partition of the samples into disjoint, near-equal raw batches."""

    if not 1 <= n_batches <= data.n:
        raise ValueError(f"n_batches must be in [1, {data.n}], got {n_batches}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    order = rng.permutation(data.n)
    return [data.subset(np.sort(part)) for part in np.array_split(order, n_batches)]
