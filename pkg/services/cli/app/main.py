from __future__ import annotations

import argparse
import logging
from pathlib import Path
import sys
import time
from typing import Any

import orjson

from skpd_mcca.config import settings
from skpd_mcca.errors import GenerationError, SkpdError
from skpd_mcca.evaluate import evaluate_model
from skpd_mcca.mcca import HyperParams, InitScheme, fit, fit_naive_scca, preprocess
from skpd_mcca.metrics import write_metrics
from skpd_mcca.observability import configure_json_logging, run_context
from skpd_mcca.run_config import RunConfig, RunConfigError, load_run_config
from skpd_mcca.selection import CSV_COLUMNS, SearchGrid, default_grid, grid_search
from skpd_mcca.simgen import SimConfig, generate_dataset
from skpd_mcca.storage import (
    read_dataset,
    read_json,
    read_model,
    read_tensor,
    write_csv,
    write_dataset,
    write_json,
    write_model,
)

from app.presets import PRESETS, list_presets
from app.reproduce import TABLES, ReproduceOptions, build_tasks, reproduce, write_outputs


logger = logging.getLogger("skpd.cli")

EXIT_OK = 0
EXIT_ACCEPTANCE = 1
EXIT_USAGE = 2
EXIT_RUNTIME = 3


class UsageError(Exception):
    pass


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", help="Declarative JSON run config.")
    p.add_argument("--seed", type=int, default=None, help="Base seed (default: SKPD_SEED).")
    p.add_argument(
        "--parallelism",
        type=int,
        default=None,
        help="Worker processes for grid cells / replicates (default: SKPD_PARALLELISM).",
    )
    p.add_argument("--out", default=None, help="Output directory.")
    return p


def _build_parser() -> argparse.ArgumentParser:
    common = _common()
    p = argparse.ArgumentParser(
        prog="skpd",
        description="Three-block sparse CCA with a sparse Kronecker product image coefficient.",
    )
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", parents=[common], help="Generate a synthetic dataset.")
    s.add_argument("--preset", choices=sorted(PRESETS), help="Results-table cell family.")
    s.add_argument("--rho", type=float, nargs=2, metavar=("RHO1", "RHO2"))
    s.add_argument("--list-presets", action="store_true", help="Print every preset cell and exit.")
    s.add_argument("--n", type=int, default=None)
    s.add_argument("--q", type=int, default=None)
    s.add_argument("--image-dims", type=int, nargs="+", default=None)
    s.add_argument("--shape", default=None)
    s.add_argument("--cov-family", default=None)
    s.add_argument("--sparsity", type=int, default=None, help="Nonzeros in theta.")
    s.add_argument("--mask-file", default=None, help="Tensor file for shape=custom.")

    f = sub.add_parser("fit", parents=[common], help="Fit one (lambda1, lambda2, R) model.")
    f.add_argument("--data", default=None, help="Dataset directory.")
    f.add_argument("--lambda1", type=float, default=None)
    f.add_argument("--lambda2", type=float, default=None)
    f.add_argument("--rank", type=int, default=None)
    f.add_argument("--block-dims", type=int, nargs="+", default=None)
    f.add_argument("--tau", type=float, default=None)
    f.add_argument("--init", choices=[s.value for s in InitScheme], default=None)
    f.add_argument("--max-outer-iter", type=int, default=None)
    f.add_argument("--outer-tol", type=float, default=None)
    f.add_argument("--naive", action="store_true", help="Voxel-wise blocks (all 1), rank 1.")

    t = sub.add_parser("tune", parents=[common], help="BIC grid search over (lambda1, lambda2, R).")
    t.add_argument("--data", default=None, help="Dataset directory.")
    t.add_argument("--grid-file", default=None, help="JSON grid overriding the default grid.")
    t.add_argument("--ranks", type=int, nargs="+", default=None)
    t.add_argument("--n-points", type=int, default=None)
    t.add_argument("--min-ratio", type=float, default=None)
    t.add_argument("--block-dims", type=int, nargs="+", default=None)
    t.add_argument("--init", choices=[s.value for s in InitScheme], default=None)
    t.add_argument("--naive", action="store_true")

    e = sub.add_parser("evaluate", parents=[common], help="Score a model against ground truth.")
    e.add_argument("--data", default=None)
    e.add_argument("--model", default=None, help="Model directory.")
    e.add_argument("--method", default=None, help="Label stored in the report.")

    r = sub.add_parser("reproduce", parents=[common], help="Re-run a results table.")
    r.add_argument("--table", choices=TABLES, default=None)
    r.add_argument("--cells", action="append", default=None, help="Cell filter, repeatable.")
    r.add_argument("--replicates", type=int, default=None)
    r.add_argument("--n", type=int, default=None)
    r.add_argument("--grid-points", type=int, default=None)
    r.add_argument("--min-ratio", type=float, default=None)
    r.add_argument("--ranks", type=int, nargs="+", default=None)
    return p


def _pick(flag: Any, section: dict[str, Any], key: str, default: Any = None) -> Any:
    if flag is not None:
        return flag
    return section.get(key, default)


def _first(*values: Any) -> Any:
    return next((v for v in values if v is not None), None)


def _seed(args: argparse.Namespace, rc: RunConfig) -> int:
    return int(_first(args.seed, rc.seed, settings.seed))


def _parallelism(args: argparse.Namespace, rc: RunConfig) -> int:
    return int(_first(args.parallelism, rc.parallelism, settings.parallelism))


def _require(value: Any, what: str) -> Any:
    if value is None:
        raise UsageError(f"missing {what}")
    return value


def _print_json(doc: Any) -> None:
    sys.stdout.write(orjson.dumps(doc, option=orjson.OPT_SORT_KEYS).decode("utf-8") + "\n")


def cmd_simulate(args: argparse.Namespace, rc: RunConfig) -> int:
    if args.list_presets:
        for row in list_presets():
            _print_json(row)
        return EXIT_OK

    sec = rc.section("simulate")
    out = _require(args.out or rc.out, "--out")
    seed = _seed(args, rc)
    preset_name = _pick(args.preset, sec, "preset")

    doc: dict[str, Any] = {}
    if preset_name is not None:
        if preset_name not in PRESETS:
            raise UsageError(f"unknown preset {preset_name!r}")
        preset = PRESETS[preset_name]
        doc.update(shape=preset.shape, cov_family=preset.cov_family)
    doc.update({k: v for k, v in sec.items() if k != "preset"})
    for key, flag in (
        ("n", args.n),
        ("q", args.q),
        ("image_dims", args.image_dims),
        ("shape", args.shape),
        ("cov_family", args.cov_family),
        ("theta_sparsity", args.sparsity),
        ("mask_file", args.mask_file),
    ):
        if flag is not None:
            doc[key] = flag
    if args.rho is not None:
        doc["rho1"], doc["rho2"] = args.rho
    doc["seed"] = seed

    try:
        cfg = SimConfig.from_dict(doc)
    except (GenerationError, TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from exc

    mask = read_tensor(cfg.mask_file) if cfg.shape == "custom" else None
    data, truth = generate_dataset(cfg, mask=mask)
    manifest = write_dataset(out, data, truth, cfg, extra={"preset": preset_name})
    print(manifest)
    return EXIT_OK


def _hyper_from(args: argparse.Namespace, sec: dict[str, Any]) -> dict[str, Any]:
    hp: dict[str, Any] = {
        "lambda1": _require(_pick(args.lambda1, sec, "lambda1"), "--lambda1"),
        "lambda2": _require(_pick(args.lambda2, sec, "lambda2"), "--lambda2"),
    }
    for key, flag in (
        ("rank", args.rank),
        ("block_dims", args.block_dims),
        ("tau", args.tau),
        ("max_outer_iter", args.max_outer_iter),
        ("outer_tol", args.outer_tol),
    ):
        value = _pick(flag, sec, key)
        if value is not None:
            hp[key] = tuple(value) if key == "block_dims" else value
    for key in ("lasso_tol", "lasso_max_iter"):
        if key in sec:
            hp[key] = sec[key]
    return hp


def cmd_fit(args: argparse.Namespace, rc: RunConfig) -> int:
    sec = rc.section("fit")
    out = _require(args.out or rc.out, "--out")
    data_dir = _require(_pick(args.data, sec, "data"), "--data")
    seed = _seed(args, rc)
    init = InitScheme(_pick(args.init, sec, "init", InitScheme.ONES.value))
    naive = bool(args.naive or sec.get("naive", False))
    try:
        hp_doc = _hyper_from(args, sec)
        if naive:
            hp_doc.pop("rank", None)
            hp_doc.pop("block_dims", None)
        else:
            hp = HyperParams(**hp_doc)
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from exc

    raw, _, _ = read_dataset(data_dir)
    data = preprocess(raw)
    started = time.perf_counter()
    if naive:
        l1, l2 = hp_doc.pop("lambda1"), hp_doc.pop("lambda2")
        model = fit_naive_scca(data, l1, l2, init, seed, **hp_doc)
    else:
        model = fit(data, hp, init, seed)
    elapsed = time.perf_counter() - started

    path = write_model(
        out, model, extra={"method": "naive" if naive else "skpd", "dataset": str(data_dir)}
    )
    write_json(Path(out) / "timing.json", {"fit_seconds": elapsed})
    print(path)
    return EXIT_OK


def _grid_from(args: argparse.Namespace, sec: dict[str, Any], data, init: InitScheme, seed: int):
    order = len(data.image_dims)
    naive = bool(args.naive or sec.get("naive", False))
    grid_file = _pick(args.grid_file, sec, "grid_file")
    if grid_file is not None:
        try:
            grid = SearchGrid.from_dict(read_json(grid_file))
        except (KeyError, TypeError, ValueError) as exc:
            raise UsageError(f"bad grid file {grid_file}: {exc}") from exc
        if naive:
            grid = SearchGrid(grid.lambda1_values, grid.lambda2_values, (1,), (1,) * order)
        return grid

    ranks = tuple(_pick(args.ranks, sec, "ranks", (1, 2, 3, 4, 5)))
    block_dims = tuple(_pick(args.block_dims, sec, "block_dims", (8, 8)))
    if naive:
        ranks, block_dims = (1,), (1,) * order
    if "lambda1_values" in sec and "lambda2_values" in sec:
        return SearchGrid(
            tuple(sec["lambda1_values"]), tuple(sec["lambda2_values"]), ranks, block_dims
        )
    return default_grid(
        data,
        block_dims,
        ranks=ranks,
        n_points=_pick(args.n_points, sec, "n_points", 10),
        min_ratio=_pick(args.min_ratio, sec, "min_ratio", 0.01),
        init=init,
        seed=seed,
    )


def cmd_tune(args: argparse.Namespace, rc: RunConfig) -> int:
    sec = rc.section("tune")
    out = Path(_require(args.out or rc.out, "--out"))
    data_dir = _require(_pick(args.data, sec, "data"), "--data")
    seed = _seed(args, rc)
    parallelism = _parallelism(args, rc)
    init = InitScheme(_pick(args.init, sec, "init", InitScheme.ONES.value))

    raw, _, _ = read_dataset(data_dir)
    data = preprocess(raw)
    try:
        grid = _grid_from(args, sec, data, init, seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc

    report = grid_search(data, grid, init, seed, parallelism)
    write_model(out, report.best_model, extra={"method": "skpd", "dataset": str(data_dir)})
    write_csv(out / "cells.csv", CSV_COLUMNS, report.csv_rows())
    write_json(
        out / "timing.json",
        {"search_seconds": report.wall_time, "cells": [c.wall_time for c in report.cells]},
    )
    path = write_json(out / "bic_report.json", report.to_dict())
    print(path)
    return EXIT_OK


def cmd_evaluate(args: argparse.Namespace, rc: RunConfig) -> int:
    sec = rc.section("evaluate")
    out = args.out or rc.out
    data_dir = _require(_pick(args.data, sec, "data"), "--data")
    model_dir = _require(_pick(args.model, sec, "model"), "--model")
    method = _pick(args.method, sec, "method", "skpd")

    _, truth, _ = read_dataset(data_dir)
    if truth is None:
        raise SkpdError(f"dataset {data_dir} carries no ground truth")
    report = evaluate_model(read_model(model_dir), truth, method=method)
    doc = report.to_dict(include_timing=False)
    if out:
        write_json(Path(out) / "evaluation.json", doc)
    _print_json(doc)
    return EXIT_OK


def cmd_reproduce(args: argparse.Namespace, rc: RunConfig) -> int:
    sec = rc.section("reproduce")
    out = _require(args.out or rc.out, "--out")
    table = _require(_pick(args.table, sec, "table"), "--table")
    if table not in TABLES:
        raise UsageError(f"--table must be one of {TABLES}")
    cells = args.cells if args.cells is not None else sec.get("cells")
    if cells:
        cells = [c.strip() for item in cells for c in item.split(",") if c.strip()]
    try:
        opts = ReproduceOptions(
            replicates=_pick(args.replicates, sec, "replicates", settings.replicates),
            n=_pick(args.n, sec, "n", 1000),
            grid_points=_pick(args.grid_points, sec, "grid_points", 5),
            min_ratio=_pick(args.min_ratio, sec, "min_ratio", 0.05),
            ranks=tuple(_pick(args.ranks, sec, "ranks", (1, 2, 3, 4, 5))),
            parallelism=_parallelism(args, rc),
            seed=_seed(args, rc),
        )
        if opts.replicates < 1:
            raise ValueError("--replicates must be >= 1")
        build_tasks(table, opts, cells)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc

    result = reproduce(table, opts, cells=cells)

    path = write_outputs(out, result, opts)
    print(path)
    return EXIT_OK if result.passed else EXIT_ACCEPTANCE


COMMANDS = {
    "simulate": cmd_simulate,
    "fit": cmd_fit,
    "tune": cmd_tune,
    "evaluate": cmd_evaluate,
    "reproduce": cmd_reproduce,
}


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    configure_json_logging(settings.log_level)

    try:
        rc = load_run_config(args.config) if args.config else RunConfig()
        with run_context():
            code = COMMANDS[args.command](args, rc)
    except (RunConfigError, UsageError) as exc:
        print(f"skpd: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (SkpdError, OSError) as exc:
        logger.error("%s failed: %s", args.command, exc)
        print(f"skpd: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    finally:
        write_metrics()
    return code


if __name__ == "__main__":
    raise SystemExit(main())
