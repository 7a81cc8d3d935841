from __future__ import annotations

from dataclasses import dataclass, field
import logging
from math import prod
from typing import Any

import numpy as np
from scipy import linalg as sla

from .errors import GenerationError
from .linalg import SeedLike, cholesky_sample
from .mcca import Dataset
from .shapes import SHAPE_KINDS, make_signal_shape


logger = logging.getLogger(__name__)

COV_FAMILIES = ("identity", "toeplitz")


@dataclass(frozen=True)
class SimConfig:
    n: int = 1000
    image_dims: tuple[int, ...] = (32, 32)
    q: int = 100
    rho1: float = 0.8
    rho2: float = 0.6
    cov_family: str = "identity"
    toeplitz_rho: float = 0.9
    shape: str = "one_block"
    theta_sparsity: int = 5
    seed: int = 0
    block_dims: tuple[int, ...] = (8, 8)
    positions: tuple[tuple[int, int], ...] | None = None
    mask_file: str | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "image_dims", tuple(int(d) for d in self.image_dims))
        object.__setattr__(self, "block_dims", tuple(int(d) for d in self.block_dims))
        if self.positions is not None:
            object.__setattr__(
                self, "positions", tuple(tuple(int(v) for v in p) for p in self.positions)
            )
        if self.n < 3:
            raise GenerationError(f"n must be >= 3, got {self.n}")
        if self.q < 1:
            raise GenerationError(f"q must be >= 1, got {self.q}")
        for name in ("rho1", "rho2"):
            value = getattr(self, name)
            if not 0.0 < value < 1.0:
                raise GenerationError(f"{name} must lie in (0, 1), got {value}")
        if self.cov_family not in COV_FAMILIES:
            raise GenerationError(f"unknown covariance family {self.cov_family!r}")
        if not 0.0 <= self.toeplitz_rho < 1.0:
            raise GenerationError(f"toeplitz_rho must lie in [0, 1), got {self.toeplitz_rho}")
        if self.shape not in SHAPE_KINDS:
            raise GenerationError(f"unknown shape {self.shape!r}")
        if self.shape == "custom" and not self.mask_file:
            raise GenerationError("custom shape needs mask_file")
        if not 1 <= self.theta_sparsity <= self.q:
            raise GenerationError(f"theta_sparsity must be in [1, q], got {self.theta_sparsity}")

    @property
    def image_size(self) -> int:
        return prod(self.image_dims)

    def to_dict(self) -> dict[str, Any]:
        return {
            "n": self.n,
            "image_dims": list(self.image_dims),
            "q": self.q,
            "rho1": self.rho1,
            "rho2": self.rho2,
            "cov_family": self.cov_family,
            "toeplitz_rho": self.toeplitz_rho,
            "shape": self.shape,
            "theta_sparsity": self.theta_sparsity,
            "seed": self.seed,
            "block_dims": list(self.block_dims),
            "positions": None if self.positions is None else [list(p) for p in self.positions],
            "mask_file": self.mask_file,
        }

    @classmethod
    def from_dict(cls, doc: dict[str, Any]) -> SimConfig:
        known = set(cls.__dataclass_fields__)
        unknown = set(doc) - known
        if unknown:
            raise GenerationError(f"unknown simulation keys: {sorted(unknown)}")
        kwargs = dict(doc)
        for key in ("image_dims", "block_dims"):
            if key in kwargs:
                kwargs[key] = tuple(kwargs[key])
        if kwargs.get("positions") is not None:
            kwargs["positions"] = tuple(tuple(p) for p in kwargs["positions"])
        return cls(**kwargs)


@dataclass(frozen=True, eq=False)
class GroundTruth:
    """True directions.

    `mask` is the binary signal shape and `theta_unit` the unit-l2 genetic
    direction. `C_true` / `theta_true` are those rescaled to unit projected
    variance under the population covariances; they are what the cross-covariance
    is built from and what estimates are scored against.
    """

    mask: np.ndarray
    C_true: np.ndarray
    theta_unit: np.ndarray
    theta_true: np.ndarray
    support_C: np.ndarray = field(repr=False)
    support_theta: np.ndarray = field(repr=False)


def family_covariance(family: str, dim: int, rho: float = 0.9) -> np.ndarray:
    if family == "identity":
        return np.eye(dim)
    if family == "toeplitz":
        return sla.toeplitz(rho ** np.arange(dim, dtype=np.float64))
    raise GenerationError(f"unknown covariance family {family!r}")


def make_theta(q: int, sparsity: int, seed: SeedLike) -> np.ndarray:
    """Unit-l2 vector with `sparsity` equal nonzeros at random positions."""

    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    support = np.sort(rng.choice(q, size=sparsity, replace=False))
    theta = np.zeros(q)
    theta[support] = 1.0 / np.sqrt(sparsity)
    return theta


def make_truth(cfg: SimConfig, seed: SeedLike, *, mask: np.ndarray | None = None) -> GroundTruth:
    base = make_signal_shape(
        cfg.shape,
        cfg.image_dims,
        block_dims=cfg.block_dims,
        positions=cfg.positions,
        mask=mask,
    )
    theta_unit = make_theta(cfg.q, cfg.theta_sparsity, seed)

    c = base.reshape(-1)
    sigma_x = family_covariance(cfg.cov_family, c.size, cfg.toeplitz_rho)
    sigma_z = family_covariance(cfg.cov_family, cfg.q, cfg.toeplitz_rho)
    c_scale = np.sqrt(float(c @ sigma_x @ c))
    t_scale = np.sqrt(float(theta_unit @ sigma_z @ theta_unit))
    return GroundTruth(
        mask=base,
        C_true=base / c_scale,
        theta_unit=theta_unit,
        theta_true=theta_unit / t_scale,
        support_C=np.flatnonzero(c),
        support_theta=np.flatnonzero(theta_unit),
    )


def build_joint_covariance(
    cfg: SimConfig, truth: GroundTruth, rho1: float | None = None
) -> np.ndarray:
    """[[Sigma_x, Sigma_xz], [Sigma_xz^T, Sigma_z]] with Sigma_xz = rho1 Sigma_x c t^T Sigma_z."""

    rho1 = cfg.rho1 if rho1 is None else rho1
    if not 0.0 <= rho1 < 1.0:
        raise GenerationError(f"rho1 must lie in [0, 1), got {rho1}")
    sigma_x = family_covariance(cfg.cov_family, cfg.image_size, cfg.toeplitz_rho)
    sigma_z = family_covariance(cfg.cov_family, cfg.q, cfg.toeplitz_rho)
    c = truth.C_true.reshape(-1)
    t = truth.theta_true
    if c.size != cfg.image_size or t.size != cfg.q:
        raise GenerationError("ground truth does not match the configuration dims")

    cross = rho1 * np.outer(sigma_x @ c, sigma_z @ t)
    dx = cfg.image_size
    joint = np.empty((dx + cfg.q, dx + cfg.q))
    joint[:dx, :dx] = sigma_x
    joint[dx:, dx:] = sigma_z
    joint[:dx, dx:] = cross
    joint[dx:, :dx] = cross.T

    try:
        sla.cholesky(joint, lower=True)
    except sla.LinAlgError as exc:
        smallest = float(sla.eigh(joint, eigvals_only=True, subset_by_index=[0, 0])[0])
        raise GenerationError(
            f"joint covariance is not positive definite (smallest eigenvalue {smallest:.3e})"
        ) from exc
    return joint


def generate_xz(
    cfg: SimConfig,
    truth: GroundTruth,
    cov: np.ndarray,
    seed: SeedLike,
) -> tuple[np.ndarray, np.ndarray]:
    dx = cfg.image_size
    draws = cholesky_sample(np.zeros(cov.shape[0]), cov, cfg.n, seed)
    images = np.ascontiguousarray(draws[:, :dx]).reshape((cfg.n, *cfg.image_dims))
    genetics = np.ascontiguousarray(draws[:, dx:])
    return images, genetics


def generate_y(images: np.ndarray, truth: GroundTruth, rho2: float, seed: SeedLike) -> np.ndarray:
    """Outcome whose sample correlation with <X_i, C> is exactly rho2.

    y* ~ N(0, I); x_perp is the residual of the intercept OLS of y* on x*;
    y = rho2 SD(x_perp) x* + sqrt(1 - rho2^2) SD(x*) x_perp, SD with ddof=1.
    """

    if not 0.0 <= rho2 <= 1.0:
        raise GenerationError(f"rho2 must lie in [0, 1], got {rho2}")
    n = images.shape[0]
    if n < 3:
        raise GenerationError(f"need at least 3 samples, got {n}")
    x_star = images.reshape(n, -1) @ truth.C_true.reshape(-1)
    xc = x_star - x_star.mean()
    ss = float(xc @ xc)
    if not ss > 1e-24 * max(1.0, float(x_star @ x_star)):
        raise GenerationError("image projection <X_i, C> is constant")

    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    y_star = rng.standard_normal(n)
    slope = float(xc @ y_star) / ss
    x_perp = (y_star - y_star.mean()) - slope * xc

    sd_perp = float(np.std(x_perp, ddof=1))
    sd_star = float(np.std(x_star, ddof=1))
    if rho2 < 1.0 and sd_perp == 0.0:
        raise GenerationError("OLS residual vanished")
    return rho2 * sd_perp * x_star + np.sqrt(1.0 - rho2**2) * sd_star * x_perp


def generate_dataset(
    cfg: SimConfig, *, mask: np.ndarray | None = None
) -> tuple[Dataset, GroundTruth]:
    """shapes -> theta -> covariance -> (X, z) -> y, all from `cfg.seed`.

    The returned dataset is raw (not preprocessed).
    """

    if cfg.shape == "custom" and mask is None:
        raise GenerationError(f"custom shape: load the mask from {cfg.mask_file!r} and pass it")

    truth_seq, xz_seq, y_seq = np.random.SeedSequence(cfg.seed).spawn(3)
    truth = make_truth(cfg, np.random.default_rng(truth_seq), mask=mask)
    cov = build_joint_covariance(cfg, truth)
    images, genetics = generate_xz(cfg, truth, cov, np.random.default_rng(xz_seq))
    outcome = generate_y(images, truth, cfg.rho2, np.random.default_rng(y_seq))
    logger.debug(
        "generated dataset shape=%s cov=%s rho=(%s, %s) seed=%d",
        cfg.shape,
        cfg.cov_family,
        cfg.rho1,
        cfg.rho2,
        cfg.seed,
    )
    return Dataset(images=images, genetics=genetics, outcome=outcome), truth
