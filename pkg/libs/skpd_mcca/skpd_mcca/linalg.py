from __future__ import annotations

from dataclasses import dataclass
import logging

import numpy as np
from scipy import linalg as sla

from .errors import DimensionError, GenerationError, NumericalError


logger = logging.getLogger(__name__)

SeedLike = int | np.random.SeedSequence | np.random.Generator | None

_JITTER_ATTEMPTS = 3


@dataclass(frozen=True)
class RidgeCovariance:
    matrix: np.ndarray
    tau: float = 0.0

    @property
    def dim(self) -> int:
        return int(self.matrix.shape[0])


def sample_covariance(rows: np.ndarray, tau: float) -> RidgeCovariance:
    """(1/n) X^T X + tau I for already-centered rows, symmetrized exactly."""

    x = np.asarray(rows, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 1 or x.shape[1] < 1:
        raise DimensionError(f"sample_covariance needs a non-empty n x q matrix, got {x.shape}")
    if tau < 0:
        raise ValueError(f"tau must be >= 0, got {tau}")
    n = x.shape[0]
    cov = (x.T @ x) / n
    cov = 0.5 * (cov + cov.T)
    cov[np.diag_indices_from(cov)] += tau
    return RidgeCovariance(matrix=cov, tau=float(tau))


def _matrix_of(sigma: RidgeCovariance | np.ndarray) -> np.ndarray:
    if isinstance(sigma, RidgeCovariance):
        return sigma.matrix
    return np.asarray(sigma, dtype=np.float64)


def quad_form(sigma: RidgeCovariance | np.ndarray, v: np.ndarray) -> float:
    m = _matrix_of(sigma)
    v = np.asarray(v, dtype=np.float64).reshape(-1)
    if m.shape != (v.size, v.size):
        raise DimensionError(f"quad_form: matrix {m.shape} vs vector length {v.size}")
    return max(0.0, float(v @ (m @ v)))


def inv_sqrt_sym(m: np.ndarray) -> np.ndarray:
    """Symmetric S with S m S = I, via eigendecomposition."""

    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise DimensionError(f"inv_sqrt_sym needs a square matrix, got {m.shape}")
    w, v = sla.eigh(0.5 * (m + m.T))
    smallest = float(w[0])
    if smallest <= 0.0:
        raise NumericalError(
            f"matrix is not positive definite (smallest eigenvalue {smallest:.3e})",
            eigenvalue=smallest,
        )
    s = (v / np.sqrt(w)) @ v.T
    return 0.5 * (s + s.T)


def _psd_factor(cov: np.ndarray) -> np.ndarray:
    dim = cov.shape[0]
    base = 1e-10 * max(float(np.trace(cov)), 0.0) / dim
    jitters = [0.0] + [base * 10.0**k for k in range(_JITTER_ATTEMPTS)]
    for jitter in jitters:
        try:
            return sla.cholesky(cov + jitter * np.eye(dim), lower=True)
        except sla.LinAlgError:
            continue

    # Semi-definite (or zero) covariance: factor through the spectrum.
    w, v = sla.eigh(cov)
    tol = 1e-8 * max(1.0, float(np.max(np.abs(w))))
    if w[0] < -tol:
        raise GenerationError(
            f"covariance is indefinite (most negative eigenvalue {float(w[0]):.3e})"
        )
    logger.debug("cholesky failed after %d jitters, using eigen factor", _JITTER_ATTEMPTS)
    return v * np.sqrt(np.clip(w, 0.0, None))


def cholesky_sample(
    mean: np.ndarray,
    cov: np.ndarray,
    n: int,
    seed: SeedLike,
) -> np.ndarray:
    """n i.i.d. rows from N(mean, cov); deterministic given the seed."""

    mean = np.asarray(mean, dtype=np.float64).reshape(-1)
    cov = np.asarray(cov, dtype=np.float64)
    dim = mean.size
    if cov.shape != (dim, dim):
        raise DimensionError(f"covariance {cov.shape} does not match mean length {dim}")
    if n < 1:
        raise DimensionError(f"sample count must be >= 1, got {n}")
    if not np.allclose(cov, cov.T, rtol=0.0, atol=1e-12):
        raise GenerationError("covariance is not symmetric")

    factor = _psd_factor(cov)
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    draws = rng.standard_normal((n, factor.shape[1]))
    return mean + draws @ factor.T
