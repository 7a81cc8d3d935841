from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable

import orjson


class RunConfigError(ValueError):
    pass


def _is_int(v: Any) -> bool:
    return isinstance(v, int) and not isinstance(v, bool)


def _is_number(v: Any) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def _is_int_list(v: Any) -> bool:
    return isinstance(v, list) and all(_is_int(x) for x in v)


def _is_number_list(v: Any) -> bool:
    return isinstance(v, list) and all(_is_number(x) for x in v)


def _is_positions(v: Any) -> bool:
    return v is None or (
        isinstance(v, list) and all(_is_int_list(p) and len(p) == 2 for p in v)
    )


_TYPES: dict[str, tuple[Callable[[Any], bool], str]] = {
    "int": (_is_int, "an integer"),
    "number": (_is_number, "a number"),
    "str": (lambda v: isinstance(v, str), "a string"),
    "bool": (lambda v: isinstance(v, bool), "a boolean"),
    "int_list": (_is_int_list, "a list of integers"),
    "number_list": (_is_number_list, "a list of numbers"),
    "str_list": (
        lambda v: isinstance(v, list) and all(isinstance(x, str) for x in v),
        "a list of strings",
    ),
    "positions": (_is_positions, "a list of [row, col] pairs"),
    "opt_str": (lambda v: v is None or isinstance(v, str), "a string or null"),
}

_HYPER_KEYS = {
    "lambda1": "number",
    "lambda2": "number",
    "rank": "int",
    "block_dims": "int_list",
    "tau": "number",
    "max_outer_iter": "int",
    "outer_tol": "number",
    "lasso_tol": "number",
    "lasso_max_iter": "int",
}

SCHEMA: dict[str, dict[str, str]] = {
    "simulate": {
        "preset": "str",
        "n": "int",
        "image_dims": "int_list",
        "q": "int",
        "rho1": "number",
        "rho2": "number",
        "cov_family": "str",
        "toeplitz_rho": "number",
        "shape": "str",
        "theta_sparsity": "int",
        "block_dims": "int_list",
        "positions": "positions",
        "mask_file": "opt_str",
    },
    "fit": {
        **_HYPER_KEYS,
        "data": "str",
        "init": "str",
        "naive": "bool",
    },
    "tune": {
        "data": "str",
        "init": "str",
        "naive": "bool",
        "block_dims": "int_list",
        "ranks": "int_list",
        "n_points": "int",
        "min_ratio": "number",
        "lambda1_values": "number_list",
        "lambda2_values": "number_list",
        "grid_file": "str",
    },
    "evaluate": {
        "data": "str",
        "model": "str",
        "method": "str",
    },
    "reproduce": {
        "table": "str",
        "cells": "str_list",
        "replicates": "int",
        "n": "int",
        "grid_points": "int",
        "min_ratio": "number",
        "ranks": "int_list",
    },
}

_TOP_LEVEL = {"seed": "int", "parallelism": "int", "out": "str"}


@dataclass(frozen=True)
class RunConfig:
    seed: int | None = None
    parallelism: int | None = None
    out: str | None = None
    sections: dict[str, dict[str, Any]] = field(default_factory=dict)

    def section(self, name: str) -> dict[str, Any]:
        return dict(self.sections.get(name, {}))


def _check(doc: dict[str, Any], schema: dict[str, str], where: str) -> None:
    unknown = sorted(set(doc) - set(schema))
    if unknown:
        raise RunConfigError(f"unknown keys at {where}: {unknown}")
    for key, kind in schema.items():
        if key not in doc:
            continue
        check, label = _TYPES[kind]
        if not check(doc[key]):
            raise RunConfigError(f"{where}.{key} must be {label}")


def parse_run_config(doc: Any) -> RunConfig:
    if not isinstance(doc, dict):
        raise RunConfigError("run config must be a JSON object")
    _check(
        {k: v for k, v in doc.items() if k not in SCHEMA},
        _TOP_LEVEL,
        "$",
    )
    sections: dict[str, dict[str, Any]] = {}
    for name, schema in SCHEMA.items():
        if name not in doc:
            continue
        section = doc[name]
        if not isinstance(section, dict):
            raise RunConfigError(f"$.{name} must be an object")
        _check(section, schema, f"$.{name}")
        sections[name] = dict(section)

    parallelism = doc.get("parallelism")
    if parallelism is not None and parallelism < 1:
        raise RunConfigError("$.parallelism must be >= 1")
    return RunConfig(
        seed=doc.get("seed"),
        parallelism=parallelism,
        out=doc.get("out"),
        sections=sections,
    )


def load_run_config(path: str | Path) -> RunConfig:
    try:
        doc = orjson.loads(Path(path).read_bytes())
    except FileNotFoundError as exc:
        raise RunConfigError(f"config file not found: {path}") from exc
    except orjson.JSONDecodeError as exc:
        raise RunConfigError(f"config file is not valid JSON: {exc}") from exc
    return parse_run_config(doc)
