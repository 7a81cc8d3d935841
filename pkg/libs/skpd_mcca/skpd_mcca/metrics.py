from __future__ import annotations

import logging

from prometheus_client import REGISTRY, Counter, Histogram, write_to_textfile

from .config import settings


logger = logging.getLogger(__name__)

FITS_TOTAL = Counter(
    "skpd_fits_total",
    "Total alternating-minimization fits",
    ["method", "outcome"],
)

FIT_DURATION_SECONDS = Histogram(
    "skpd_fit_duration_seconds",
    "Wall-clock duration of one fit in seconds",
    ["method"],
    buckets=(0.01, 0.05, 0.1, 0.5, 1.0, 2.5, 5.0, 10.0, 30.0, 60.0, 300.0),
)

LASSO_SWEEPS_TOTAL = Counter(
    "skpd_lasso_sweeps_total",
    "Total coordinate-descent sweeps across all Lasso solves",
)


def observe_fit(*, method: str, seconds: float, outcome: str) -> None:
    if not settings.metrics_enabled:
        return
    FIT_DURATION_SECONDS.labels(method).observe(seconds)
    FITS_TOTAL.labels(method, outcome).inc()


def inc_lasso_sweeps(n: int) -> None:
    if settings.metrics_enabled and n > 0:
        LASSO_SWEEPS_TOTAL.inc(n)


def write_metrics(path: str | None = None) -> bool:
    """Dump the default registry in Prometheus text format.

    Falls back to `SKPD_METRICS_TEXTFILE`; returns False when neither is set.
    """

    target = path or settings.metrics_textfile
    if not target or not settings.metrics_enabled:
        return False
    write_to_textfile(target, REGISTRY)
    logger.info("metrics written to %s", target)
    return True
