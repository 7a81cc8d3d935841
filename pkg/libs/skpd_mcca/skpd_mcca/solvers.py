from __future__ import annotations

from dataclasses import dataclass, field
import logging

import numpy as np
from scipy import linalg as sla

from .config import settings
from .errors import DimensionError, NumericalError
from .linalg import RidgeCovariance, quad_form
from .metrics import inc_lasso_sweeps


logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class PenalizedQuadProblem:
    """(1/2) v^T G v - b^T v + lam * ||v||_1 with G = gram.matrix, b = linear."""

    gram: RidgeCovariance
    linear: np.ndarray
    lam: float

    def __post_init__(self) -> None:
        b = np.asarray(self.linear, dtype=np.float64).reshape(-1)
        object.__setattr__(self, "linear", b)
        if self.gram.matrix.shape != (b.size, b.size):
            raise DimensionError(
                f"gram {self.gram.matrix.shape} does not match linear term of length {b.size}"
            )
        if not self.lam >= 0:
            raise ValueError(f"penalty must be >= 0, got {self.lam}")

    @property
    def dim(self) -> int:
        return int(self.linear.size)

    def objective(self, v: np.ndarray) -> float:
        v = np.asarray(v, dtype=np.float64)
        g = self.gram.matrix
        return float(0.5 * v @ (g @ v) - self.linear @ v + self.lam * np.abs(v).sum())


@dataclass(frozen=True)
class LassoResult:
    coef: np.ndarray
    converged: bool
    n_sweeps: int
    kkt_residual: float
    objective_trace: tuple[float, ...] = field(default=())


def soft_threshold(x: np.ndarray | float, t: float) -> np.ndarray:
    return np.sign(x) * np.maximum(np.abs(x) - t, 0.0)


def kkt_residual(problem: PenalizedQuadProblem, v: np.ndarray) -> float:
    """Largest violation of the subgradient optimality conditions."""

    v = np.asarray(v, dtype=np.float64)
    grad = problem.gram.matrix @ v - problem.linear
    active = v != 0.0
    viol = np.where(
        active,
        np.abs(grad + problem.lam * np.sign(v)),
        np.maximum(np.abs(grad) - problem.lam, 0.0),
    )
    return float(viol.max()) if viol.size else 0.0


def solve_lasso_cd(
    problem: PenalizedQuadProblem,
    tol: float | None = None,
    max_iter: int | None = None,
    warm_start: np.ndarray | None = None,
) -> LassoResult:
    """Cyclic coordinate descent on the Gram-form Lasso.

    Stops once every coordinate satisfies the KKT conditions to `tol`. After
    `max_iter` sweeps the best iterate seen is returned with converged=False.
    """

    tol = settings.lasso_tol if tol is None else tol
    max_iter = settings.lasso_max_iter if max_iter is None else max_iter
    g = problem.gram.matrix
    b = problem.linear
    lam = problem.lam
    m = problem.dim

    # Zero is the unique minimizer once lam dominates the linear term (G is PD).
    if m == 0 or lam >= float(np.max(np.abs(b), initial=0.0)):
        zero = np.zeros(m)
        return LassoResult(zero, True, 0, kkt_residual(problem, zero), (0.0,))

    diag = np.diag(g).copy()
    if np.any(diag <= 0.0):
        raise NumericalError("gram matrix has a non-positive diagonal entry")

    if warm_start is None:
        v = np.zeros(m)
    else:
        v = np.array(warm_start, dtype=np.float64).reshape(-1)
        if v.size != m:
            raise DimensionError(f"warm start of length {v.size} for a {m}-dim problem")

    best = v.copy()
    best_obj = problem.objective(v)
    trace = [best_obj]
    residual = kkt_residual(problem, v)
    converged = residual <= tol
    sweeps = 0

    def sweep(coords: np.ndarray) -> float:
        nonlocal best, best_obj, sweeps
        gv = g @ v
        largest = 0.0
        for j in coords:
            z = v[j] - (gv[j] - b[j]) / diag[j]
            new = float(soft_threshold(z, lam / diag[j]))
            delta = new - v[j]
            if delta != 0.0:
                gv += delta * g[:, j]
                v[j] = new
                largest = max(largest, abs(delta))
        sweeps += 1
        obj = float(0.5 * v @ gv - b @ v + lam * np.abs(v).sum())
        trace.append(obj)
        if obj <= best_obj:
            best_obj = obj
            best = v.copy()
        return largest

    everything = np.arange(m)
    while not converged and sweeps < max_iter:
        sweep(everything)
        residual = kkt_residual(problem, v)
        converged = residual <= tol
        if converged:
            break
        # Polish the current support before the next full pass.
        active = np.flatnonzero(v)
        while active.size and sweeps < max_iter:
            if sweep(active) <= tol:
                break

    inc_lasso_sweeps(sweeps)
    if not converged:
        logger.warning(
            "lasso did not converge in %d sweeps (kkt residual %.3e)", sweeps, residual
        )
        v = best
        residual = kkt_residual(problem, v)
    return LassoResult(v, converged, sweeps, residual, tuple(trace))


def solve_ridge_ls(gram: RidgeCovariance, linear: np.ndarray) -> np.ndarray:
    b = np.asarray(linear, dtype=np.float64).reshape(-1)
    if gram.matrix.shape != (b.size, b.size):
        raise DimensionError(f"gram {gram.matrix.shape} does not match rhs of length {b.size}")
    try:
        factor = sla.cho_factor(gram.matrix, lower=True, check_finite=True)
    except (sla.LinAlgError, ValueError) as exc:
        raise NumericalError(f"cholesky factorization failed: {exc}") from exc
    return sla.cho_solve(factor, b)


def normalize_to_unit_variance(v: np.ndarray, sigma: RidgeCovariance) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64).reshape(-1)
    q = quad_form(sigma, v)
    if q > 0.0:
        return v / np.sqrt(q)
    return np.zeros_like(v)
