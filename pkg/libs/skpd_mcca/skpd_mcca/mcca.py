from __future__ import annotations

from dataclasses import asdict, dataclass, field
from enum import Enum
import logging
import time
from typing import Any, Sequence

import numpy as np

from .config import settings
from .errors import DimensionError, NumericalError, PreprocessingError
from .linalg import RidgeCovariance, SeedLike, inv_sqrt_sym, sample_covariance
from .metrics import observe_fit
from .solvers import (
    PenalizedQuadProblem,
    normalize_to_unit_variance,
    solve_lasso_cd,
    solve_ridge_ls,
)
from .tensor import BlockShape, DenseTensor, reshape_R_batch, reshape_R_inverse


logger = logging.getLogger(__name__)

# Smallest eigenvalue of the alpha Gram matrix below which it counts as singular.
SINGULAR_EIGENVALUE = 1e-8


@dataclass(frozen=True, eq=False)
class Dataset:
    """n samples of (image, genetic row, outcome) plus preprocessing metadata."""

    images: np.ndarray
    genetics: np.ndarray
    outcome: np.ndarray
    centered: bool = False
    outcome_standardized: bool = False
    image_means: np.ndarray | None = None
    genetic_means: np.ndarray | None = None
    outcome_mean: float | None = None
    outcome_scale: float | None = None

    def __post_init__(self) -> None:
        images = np.ascontiguousarray(self.images, dtype=np.float64)
        genetics = np.ascontiguousarray(self.genetics, dtype=np.float64)
        outcome = np.ascontiguousarray(self.outcome, dtype=np.float64).reshape(-1)
        if images.ndim not in (3, 4):
            raise DimensionError(f"images must be (n, D1, D2[, D3]), got {images.shape}")
        if genetics.ndim != 2:
            raise DimensionError(f"genetics must be n x q, got {genetics.shape}")
        n = images.shape[0]
        if genetics.shape[0] != n or outcome.size != n:
            raise DimensionError(
                f"sample counts differ: images {n}, genetics {genetics.shape[0]}, "
                f"outcome {outcome.size}"
            )
        for name, arr in (("images", images), ("genetics", genetics), ("outcome", outcome)):
            if not np.all(np.isfinite(arr)):
                raise DimensionError(f"{name} has non-finite entries")
        object.__setattr__(self, "images", images)
        object.__setattr__(self, "genetics", genetics)
        object.__setattr__(self, "outcome", outcome)

    @property
    def n(self) -> int:
        return int(self.images.shape[0])

    @property
    def q(self) -> int:
        return int(self.genetics.shape[1])

    @property
    def image_dims(self) -> tuple[int, ...]:
        return tuple(int(d) for d in self.images.shape[1:])

    def subset(self, rows: Sequence[int] | np.ndarray) -> Dataset:
        idx = np.asarray(rows, dtype=np.intp)
        return Dataset(
            images=self.images[idx],
            genetics=self.genetics[idx],
            outcome=self.outcome[idx],
        )


class InitScheme(str, Enum):
    ONES = "ones"
    UNIFORM = "uniform"
    NORMAL = "normal"


@dataclass(frozen=True)
class HyperParams:
    lambda1: float
    lambda2: float
    rank: int = 1
    block_dims: tuple[int, ...] = (8, 8)
    tau: float = settings.tau
    max_outer_iter: int = settings.max_outer_iter
    outer_tol: float = settings.outer_tol
    lasso_tol: float = settings.lasso_tol
    lasso_max_iter: int = settings.lasso_max_iter

    def __post_init__(self) -> None:
        object.__setattr__(self, "block_dims", tuple(int(d) for d in self.block_dims))
        if not (self.lambda1 >= 0 and self.lambda2 >= 0):
            raise ValueError(f"penalties must be >= 0, got {self.lambda1}, {self.lambda2}")
        if self.rank < 1:
            raise ValueError(f"rank must be >= 1, got {self.rank}")
        if self.tau < 0:
            raise ValueError(f"tau must be >= 0, got {self.tau}")
        if self.max_outer_iter < 1:
            raise ValueError("max_outer_iter must be >= 1")

    def block_shape(self, image_dims: Sequence[int]) -> BlockShape:
        shape = BlockShape.from_dims(image_dims, self.block_dims)
        if self.rank > min(shape.n_blocks, shape.block_size):
            raise DimensionError(
                f"rank {self.rank} exceeds min({shape.n_blocks} blocks, "
                f"{shape.block_size} block volume)"
            )
        return shape

    def to_dict(self) -> dict[str, Any]:
        doc = asdict(self)
        doc["block_dims"] = list(self.block_dims)
        return doc


@dataclass(frozen=True, eq=False)
class SkpdModel:
    theta: np.ndarray
    alphas: np.ndarray
    betas: np.ndarray
    block_shape: BlockShape
    hyper: HyperParams
    objective_trace: tuple[float, ...] = field(default=())
    converged: bool = False
    iterations: int = 0
    degenerate: bool = False
    alpha_gram_ridged: bool = False
    init: InitScheme = InitScheme.ONES
    seed: int | None = None

    @property
    def rank(self) -> int:
        return int(self.alphas.shape[1])

    def active_blocks(self, threshold: float | None = None) -> np.ndarray:
        """Boolean per block: any alpha_r flags it."""

        thr = settings.zero_threshold if threshold is None else threshold
        return np.any(np.abs(self.alphas) >= thr, axis=1)

    def selected_genetics(self, threshold: float | None = None) -> np.ndarray:
        thr = settings.zero_threshold if threshold is None else threshold
        return np.abs(self.theta) >= thr


@dataclass(frozen=True, eq=False)
class IterationState:
    gamma1: np.ndarray
    lambda_vec: np.ndarray
    X_beta: np.ndarray
    X_alpha: np.ndarray
    sigma1: RidgeCovariance
    sigma2: RidgeCovariance
    sigma3: RidgeCovariance


def preprocess(raw: Dataset) -> Dataset:
    """Demean images and genetics per column; standardize the outcome (ddof=0)."""

    if raw.n < 2:
        raise PreprocessingError(f"need at least 2 samples, got {raw.n}")
    image_means = raw.images.mean(axis=0)
    genetic_means = raw.genetics.mean(axis=0)
    y_mean = float(raw.outcome.mean())
    y_centered = raw.outcome - y_mean
    y_scale = float(np.sqrt(np.mean(y_centered**2)))
    if not y_scale > 1e-12 * max(1.0, abs(y_mean)):
        raise PreprocessingError("outcome is constant (variance 0)")
    return Dataset(
        images=raw.images - image_means,
        genetics=raw.genetics - genetic_means,
        outcome=y_centered / y_scale,
        centered=True,
        outcome_standardized=True,
        image_means=image_means,
        genetic_means=genetic_means,
        outcome_mean=y_mean,
        outcome_scale=y_scale,
    )


def initial_factors(
    scheme: InitScheme,
    n_blocks: int,
    block_size: int,
    rank: int,
    seed: SeedLike,
) -> tuple[np.ndarray, np.ndarray]:
    """Starting (alphas, betas): all ones, Uniform(0.5, 1) or Normal(1, 0.1)."""

    scheme = InitScheme(scheme)
    if scheme is InitScheme.ONES:
        return np.ones((n_blocks, rank)), np.ones((block_size, rank))
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    if scheme is InitScheme.UNIFORM:
        return (
            rng.uniform(0.5, 1.0, size=(n_blocks, rank)),
            rng.uniform(0.5, 1.0, size=(block_size, rank)),
        )
    return (
        rng.normal(1.0, 0.1, size=(n_blocks, rank)),
        rng.normal(1.0, 0.1, size=(block_size, rank)),
    )


def blocked_images(data: Dataset, shape: BlockShape) -> np.ndarray:
    return reshape_R_batch(data.images, shape)


def image_variate(xr: np.ndarray, alphas: np.ndarray, betas: np.ndarray) -> np.ndarray:
    """Per-sample sum_r alpha_r^T X~_i beta_r for blocked images xr of shape (n, p, d)."""

    return np.einsum("npd,pr,dr->n", xr, alphas, betas, optimize=True)


def _x_beta(xr: np.ndarray, betas: np.ndarray) -> np.ndarray:
    # Row i is the row-major vec of the p x R matrix X~_i beta.
    n, p, _ = xr.shape
    return np.einsum("npd,dr->npr", xr, betas, optimize=True).reshape(n, p * betas.shape[1])


def _x_alpha(xr: np.ndarray, alphas: np.ndarray) -> np.ndarray:
    # Row i is the row-major vec of the d x R matrix X~_i^T alpha.
    n, _, d = xr.shape
    return np.einsum("npd,pr->ndr", xr, alphas, optimize=True).reshape(n, d * alphas.shape[1])


def iteration_state(data: Dataset, model: SkpdModel) -> IterationState:
    """Working quantities of one update cycle, evaluated at the model's point."""

    tau = model.hyper.tau
    xr = blocked_images(data, model.block_shape)
    x_beta = _x_beta(xr, model.betas)
    x_alpha = _x_alpha(xr, model.alphas)
    return IterationState(
        gamma1=image_variate(xr, model.alphas, model.betas) + data.outcome,
        lambda_vec=data.genetics @ model.theta + data.outcome,
        X_beta=x_beta,
        X_alpha=x_alpha,
        sigma1=sample_covariance(data.genetics, tau),
        sigma2=sample_covariance(x_beta, tau),
        sigma3=sample_covariance(x_alpha, tau),
    )


def _objective_terms(
    y: np.ndarray, z_theta: np.ndarray, img: np.ndarray
) -> float:
    return float(-np.mean((y + z_theta) * img + y * z_theta))


def objective(data: Dataset, model: SkpdModel, hp: HyperParams | None = None) -> float:
    """Penalized sample objective with the 1/n-scaled fit term."""

    hp = hp or model.hyper
    if model.theta.size != data.q:
        raise DimensionError(f"theta length {model.theta.size} vs q = {data.q}")
    xr = blocked_images(data, model.block_shape)
    if model.alphas.shape[0] != xr.shape[1] or model.betas.shape[0] != xr.shape[2]:
        raise DimensionError("model factors do not match the blocked image shape")
    img = image_variate(xr, model.alphas, model.betas)
    fit_term = _objective_terms(data.outcome, data.genetics @ model.theta, img)
    return (
        fit_term
        + hp.lambda1 * float(np.abs(model.theta).sum())
        + hp.lambda2 * float(np.abs(model.alphas).sum())
    )


def _orthogonalize(alphas: np.ndarray, tau: float) -> tuple[np.ndarray, bool]:
    if not np.any(alphas):
        return alphas, False
    gram = alphas.T @ alphas
    ridged = bool(np.linalg.eigvalsh(gram)[0] < SINGULAR_EIGENVALUE)
    if ridged:
        gram = gram + tau * np.eye(gram.shape[0])
    return alphas @ inv_sqrt_sym(gram), ridged


def _usable_warm_start(warm_start: SkpdModel | None, shape: BlockShape, rank: int, q: int) -> bool:
    if warm_start is None:
        return False
    if warm_start.alphas.shape != (shape.n_blocks, rank) or warm_start.theta.size != q:
        return False
    if warm_start.betas.shape != (shape.block_size, rank):
        return False
    # An all-zero factor is absorbing; restart from the init scheme instead.
    return bool(np.any(warm_start.alphas) and np.any(warm_start.betas))


def fit(
    data: Dataset,
    hp: HyperParams,
    init: InitScheme | str = InitScheme.ONES,
    seed: int | None = None,
    *,
    warm_start: SkpdModel | None = None,
) -> SkpdModel:
    """Alternating minimization over (theta, alpha, beta).

    Each outer iteration: Lasso for theta against Gamma = image variate + y,
    unit-variance normalization; Lasso for alpha against Lambda = Z theta + y,
    normalization and orthogonalization; ridge least squares for beta against
    Lambda, normalization. Stops on relative objective change <= outer_tol.
    """

    if not (data.centered and data.outcome_standardized):
        raise PreprocessingError("fit needs a preprocessed dataset (call preprocess first)")
    init = InitScheme(init)
    shape = hp.block_shape(data.image_dims)
    rank = hp.rank
    n, p, d = data.n, shape.n_blocks, shape.block_size
    y = data.outcome
    z = data.genetics
    tau = hp.tau
    method = "naive" if d == 1 else "skpd"

    started = time.perf_counter()
    xr = blocked_images(data, shape)
    sigma1 = sample_covariance(z, tau)

    warm = _usable_warm_start(warm_start, shape, rank, data.q)
    if warm:
        alphas = warm_start.alphas.copy()  # type: ignore[union-attr]
        betas = warm_start.betas.copy()  # type: ignore[union-attr]
        theta_raw: np.ndarray | None = warm_start.theta.copy()  # type: ignore[union-attr]
    else:
        alphas, betas = initial_factors(init, p, d, rank, seed)
        theta_raw = None
    alpha_raw: np.ndarray | None = alphas.reshape(-1).copy() if warm else None

    theta = np.zeros(data.q)
    trace: list[float] = []
    converged = False
    ridged = False
    iterations = 0

    try:
        for it in range(1, hp.max_outer_iter + 1):
            iterations = it

            # theta step
            gamma1 = image_variate(xr, alphas, betas) + y
            res = solve_lasso_cd(
                PenalizedQuadProblem(sigma1, z.T @ gamma1 / n, hp.lambda1),
                tol=hp.lasso_tol,
                max_iter=hp.lasso_max_iter,
                warm_start=theta_raw,
            )
            theta_raw = res.coef
            theta = normalize_to_unit_variance(theta_raw, sigma1)

            # alpha step
            lam_vec = z @ theta + y
            x_beta = _x_beta(xr, betas)
            sigma2 = sample_covariance(x_beta, tau)
            res = solve_lasso_cd(
                PenalizedQuadProblem(sigma2, x_beta.T @ lam_vec / n, hp.lambda2),
                tol=hp.lasso_tol,
                max_iter=hp.lasso_max_iter,
                warm_start=alpha_raw,
            )
            alpha_raw = res.coef
            alphas = normalize_to_unit_variance(alpha_raw, sigma2).reshape(p, rank)
            alphas, step_ridged = _orthogonalize(alphas, tau)
            ridged = step_ridged

            # beta step
            x_alpha = _x_alpha(xr, alphas)
            sigma3 = sample_covariance(x_alpha, tau)
            beta_raw = solve_ridge_ls(sigma3, x_alpha.T @ lam_vec / n)
            betas = normalize_to_unit_variance(beta_raw, sigma3).reshape(d, rank)

            obj = (
                _objective_terms(y, z @ theta, image_variate(xr, alphas, betas))
                + hp.lambda1 * float(np.abs(theta).sum())
                + hp.lambda2 * float(np.abs(alphas).sum())
            )
            if not np.isfinite(obj):
                raise NumericalError(f"objective is not finite at iteration {it}", iteration=it)
            logger.debug("iteration %d objective %.12g", it, obj)
            if trace and abs(obj - trace[-1]) <= hp.outer_tol * abs(trace[-1]):
                trace.append(obj)
                converged = True
                break
            trace.append(obj)
    except NumericalError as exc:
        if exc.iteration is None:
            exc.iteration = iterations
        observe_fit(method=method, seconds=time.perf_counter() - started, outcome="error")
        raise

    # Keep the image variate inside the unit-variance constraint.
    img_var = float(np.mean(image_variate(xr, alphas, betas) ** 2))
    if img_var > 1.0:
        betas = betas / np.sqrt(img_var)

    degenerate = not np.any(theta) and not np.any(alphas)
    if degenerate:
        logger.warning("degenerate fit: theta and alpha are both zero (%s)", hp)
    if ridged:
        logger.warning("alpha Gram matrix was singular at the final orthogonalization")

    elapsed = time.perf_counter() - started
    observe_fit(
        method=method,
        seconds=elapsed,
        outcome="degenerate" if degenerate else ("converged" if converged else "max_iter"),
    )
    logger.info(
        "fit done: method=%s rank=%d iterations=%d converged=%s objective=%.6g",
        method,
        rank,
        iterations,
        converged,
        trace[-1] if trace else float("nan"),
    )
    return SkpdModel(
        theta=theta,
        alphas=alphas,
        betas=betas,
        block_shape=shape,
        hyper=hp,
        objective_trace=tuple(trace),
        converged=converged,
        iterations=iterations,
        degenerate=degenerate,
        alpha_gram_ridged=ridged,
        init=init,
        seed=seed,
    )


def compose_C(model: SkpdModel) -> DenseTensor:
    """C = sum_r A_r kron B_r materialized at the image's own dims."""

    return reshape_R_inverse(model.alphas @ model.betas.T, model.block_shape)


def fit_naive_scca(
    data: Dataset,
    lambda1: float,
    lambda2: float,
    init: InitScheme | str = InitScheme.ONES,
    seed: int | None = None,
    *,
    warm_start: SkpdModel | None = None,
    **overrides: Any,
) -> SkpdModel:
    """Voxel-wise sparse CCA: block dims all 1 and rank 1."""

    order = len(data.image_dims)
    hp = HyperParams(lambda1=lambda1, lambda2=lambda2, rank=1, block_dims=(1,) * order, **overrides)
    return fit(data, hp, init, seed, warm_start=warm_start)

