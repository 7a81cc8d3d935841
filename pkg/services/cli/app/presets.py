from __future__ import annotations

from dataclasses import dataclass
from typing import Any

from skpd_mcca.simgen import SimConfig


METHODS = ("1-term", "R-term", "naive")
RHO_PAIRS: tuple[tuple[float, float], ...] = ((0.8, 0.8), (0.8, 0.6), (0.7, 0.5))
SHAPE_LABELS = {"one_block": "1-block", "three_block": "3-block", "butterfly": "butterfly"}
METRIC_ORDER = ("tpr_C", "fpr_C", "tpr_theta", "fpr_theta", "mse_C", "mse_theta")


@dataclass(frozen=True)
class Preset:
    name: str
    table: str
    shape: str
    cov_family: str

    @property
    def label(self) -> str:
        return SHAPE_LABELS[self.shape]

    def sim_config(self, rho1: float, rho2: float, *, seed: int, n: int = 1000) -> SimConfig:
        return SimConfig(
            n=n,
            rho1=rho1,
            rho2=rho2,
            cov_family=self.cov_family,
            shape=self.shape,
            seed=seed,
        )


PRESETS: dict[str, Preset] = {
    f"table{table}-{label.replace('-', '')}": Preset(
        name=f"table{table}-{label.replace('-', '')}",
        table=table,
        shape=shape,
        cov_family=cov,
    )
    for table, cov in (("3", "identity"), ("4", "toeplitz"))
    for shape, label in SHAPE_LABELS.items()
}


@dataclass(frozen=True)
class Cell:
    preset: Preset
    rho1: float
    rho2: float

    @property
    def label(self) -> str:
        return f"{self.preset.label} ({self.rho1},{self.rho2})"

    def to_dict(self) -> dict[str, Any]:
        return {
            "preset": self.preset.name,
            "table": self.preset.table,
            "shape": self.preset.shape,
            "cov_family": self.preset.cov_family,
            "rho1": self.rho1,
            "rho2": self.rho2,
        }


def cells_for_table(table: str, only: list[str] | None = None) -> list[Cell]:
    """Every (shape, rho) cell of a results table, optionally filtered.

    Filters match a shape label ("1-block"), a preset name or a full cell label.
    """

    out: list[Cell] = []
    for preset in PRESETS.values():
        if preset.table != table:
            continue
        for rho1, rho2 in RHO_PAIRS:
            cell = Cell(preset, rho1, rho2)
            if only and not any(f in (preset.label, preset.name, cell.label) for f in only):
                continue
            out.append(cell)
    return out


_Table = dict[tuple[float, float], dict[str, dict[str, float]]]


def _rows(values: dict[str, list[tuple[float, float, float]]]) -> _Table:
    # metric -> one (1-term, R-term, naive) triple per rho pair, in RHO_PAIRS order
    out: _Table = {}
    for i, rho in enumerate(RHO_PAIRS):
        out[rho] = {
            method: {metric: values[metric][i][k] for metric in METRIC_ORDER}
            for k, method in enumerate(METHODS)
        }
    return out


# Published means (100 replicates), n = 1000, 32x32 images, q = 100.
PUBLISHED_VALUES: dict[str, dict[str, _Table]] = {
    "3": {
        "one_block": _rows({
            "tpr_C": [(1.0, 1.0, 0.99), (1.0, 1.0, 1.0), (1.0, 1.0, 1.0)],
            "fpr_C": [(0.05, 0.05, 0.12), (0.05, 0.05, 0.14), (0.05, 0.05, 0.15)],
            "tpr_theta": [(0.56, 0.75, 0.84), (0.99, 0.99, 0.98), (0.99, 1.0, 0.95)],
            "fpr_theta": [(0.02, 0.05, 0.28), (0.06, 0.05, 0.10), (0.09, 0.07, 0.14)],
            "mse_C": [(0.052, 0.056, 0.075), (0.042, 0.038, 0.055), (0.066, 0.068, 0.134)],
            "mse_theta": [(0.813, 0.805, 0.940), (0.160, 0.168, 0.235), (0.139, 0.172, 0.306)],
        }),
        "three_block": _rows({
            "tpr_C": [(0.92, 0.96, 0.88), (0.92, 0.98, 0.96), (0.96, 0.98, 0.88)],
            "fpr_C": [(0.12, 0.15, 0.15), (0.16, 0.14, 0.21), (0.15, 0.15, 0.22)],
            "tpr_theta": [(0.43, 0.40, 0.21), (0.78, 0.75, 0.80), (0.90, 0.82, 0.66)],
            "fpr_theta": [(0.38, 0.14, 0.07), (0.13, 0.15, 0.21), (0.13, 0.18, 0.27)],
            "mse_C": [(0.487, 0.412, 0.496), (0.347, 0.329, 0.353), (0.389, 0.342, 0.632)],
            "mse_theta": [(1.864, 1.691, 1.894), (0.728, 0.691, 0.827), (0.694, 0.551, 1.063)],
        }),
        "butterfly": _rows({
            "tpr_C": [(0.85, 0.94, 0.84), (0.96, 0.97, 0.89), (0.95, 0.96, 0.79)],
            "fpr_C": [(0.01, 0.05, 0.20), (0.08, 0.05, 0.20), (0.09, 0.08, 0.22)],
            "tpr_theta": [(0.24, 0.60, 0.43), (0.96, 0.97, 0.82), (0.98, 0.97, 0.74)],
            "fpr_theta": [(0.05, 0.17, 0.16), (0.06, 0.06, 0.20), (0.08, 0.09, 0.26)],
            "mse_C": [(0.297, 0.192, 0.526), (0.149, 0.136, 0.377), (0.173, 0.162, 0.681)],
            "mse_theta": [(1.547, 1.215, 1.772), (0.267, 0.252, 0.793), (0.224, 0.262, 1.028)],
        }),
    },
    "4": {
        "one_block": _rows({
            "tpr_C": [(1.0, 1.0, 0.96), (0.95, 1.0, 0.92), (0.98, 1.0, 0.52)],
            "fpr_C": [(0.05, 0.05, 0.25), (0.05, 0.05, 0.26), (0.05, 0.06, 0.42)],
            "tpr_theta": [(0.30, 0.30, 0.25), (0.75, 0.71, 0.49), (0.73, 0.66, 0.38)],
            "fpr_theta": [(0.11, 0.10, 0.09), (0.16, 0.14, 0.14), (0.17, 0.16, 0.20)],
            "mse_C": [(0.656, 0.669, 0.928), (0.618, 0.650, 0.906), (1.003, 1.030, 1.379)],
            "mse_theta": [(1.409, 1.354, 1.498), (1.040, 0.819, 1.226), (1.008, 0.986, 1.255)],
        }),
        "three_block": _rows({
            "tpr_C": [(0.96, 0.96, 0.72), (0.92, 0.97, 0.71), (0.94, 0.95, 0.63)],
            "fpr_C": [(0.20, 0.12, 0.25), (0.15, 0.15, 0.27), (0.18, 0.13, 0.36)],
            "tpr_theta": [(0.20, 0.25, 0.16), (0.56, 0.57, 0.40), (0.53, 0.55, 0.43)],
            "fpr_theta": [(0.11, 0.07, 0.06), (0.10, 0.10, 0.10), (0.13, 0.12, 0.09)],
            "mse_C": [(1.186, 1.104, 0.985), (0.963, 1.020, 1.115), (1.211, 1.049, 1.748)],
            "mse_theta": [(1.671, 1.362, 1.558), (1.038, 0.933, 1.119), (1.062, 1.048, 1.116)],
        }),
        "butterfly": _rows({
            "tpr_C": [(0.88, 0.90, 0.72), (0.91, 0.94, 0.60), (0.83, 0.92, 0.55)],
            "fpr_C": [(0.14, 0.03, 0.15), (0.15, 0.04, 0.20), (0.19, 0.05, 0.26)],
            "tpr_theta": [(0.27, 0.28, 0.19), (0.66, 0.61, 0.47), (0.74, 0.67, 0.49)],
            "fpr_theta": [(0.06, 0.06, 0.05), (0.16, 0.11, 0.10), (0.19, 0.13, 0.10)],
            "mse_C": [(0.512, 0.585, 0.664), (0.507, 0.617, 0.837), (0.798, 0.625, 1.198)],
            "mse_theta": [(1.384, 1.353, 1.386), (0.922, 0.950, 1.101), (1.008, 0.760, 1.028)],
        }),
    },
}

# Median seconds per fit on the default benchmark.
PUBLISHED_TIMING = {"1-term": 1.9, "R-term": 6.0, "naive": 23.0}

# Initialization robustness on the 1-block (0.8, 0.6) identity cell.
PUBLISHED_INIT = {
    "ones": {
        "tpr_C": 1.0, "fpr_C": 0.05, "tpr_theta": 0.99,
        "fpr_theta": 0.03, "mse_C": 0.042, "mse_theta": 0.174,
    },
    "uniform": {
        "tpr_C": 1.0, "fpr_C": 0.05, "tpr_theta": 0.98,
        "fpr_theta": 0.03, "mse_C": 0.041, "mse_theta": 0.156,
    },
    "normal": {
        "tpr_C": 1.0, "fpr_C": 0.05, "tpr_theta": 1.0,
        "fpr_theta": 0.03, "mse_C": 0.040, "mse_theta": 0.146,
    },
}

DEFAULT_BENCHMARK = Cell(PRESETS["table3-1block"], 0.8, 0.6)


def published_value(cell: Cell, method: str, metric: str) -> float | None:
    rows = PUBLISHED_VALUES.get(cell.preset.table, {}).get(cell.preset.shape, {})
    return rows.get((cell.rho1, cell.rho2), {}).get(method, {}).get(metric)


def list_presets() -> list[dict[str, Any]]:
    out = []
    for preset in PRESETS.values():
        for rho1, rho2 in RHO_PAIRS:
            cell = Cell(preset, rho1, rho2)
            out.append({"cell": cell.label, **cell.to_dict()})
    return out
