from __future__ import annotations

from dataclasses import dataclass
import os


@dataclass(frozen=True)
class Settings:
    # Observability
    log_level: str = os.getenv("SKPD_LOG_LEVEL", "INFO").strip().upper()

    # Ridge added to every sample covariance (and to singular alpha Gram matrices).
    tau: float = float(os.getenv("SKPD_TAU", "0.01"))

    # Inner Lasso (coordinate descent, Gram form)
    lasso_tol: float = float(os.getenv("SKPD_LASSO_TOL", "1e-8"))
    lasso_max_iter: int = int(os.getenv("SKPD_LASSO_MAX_ITER", "10000"))

    # Outer alternating minimization
    outer_tol: float = float(os.getenv("SKPD_OUTER_TOL", "1e-6"))
    max_outer_iter: int = int(os.getenv("SKPD_MAX_OUTER_ITER", "100"))

    # |value| below this counts as an exact zero for supports and rates.
    zero_threshold: float = float(os.getenv("SKPD_ZERO_THRESHOLD", "1e-10"))

    # Runs
    seed: int = int(os.getenv("SKPD_SEED", "0"))
    parallelism: int = int(os.getenv("SKPD_PARALLELISM", "1"))
    replicates: int = int(os.getenv("SKPD_REPLICATES", "20"))

    # Metrics
    metrics_enabled: bool = os.getenv("SKPD_METRICS_ENABLED", "1").strip() == "1"
    # If set, the CLI dumps the Prometheus text exposition here on exit.
    metrics_textfile: str = os.getenv("SKPD_METRICS_TEXTFILE", "").strip()


settings = Settings()
