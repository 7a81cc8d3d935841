import importlib.util
import json
from pathlib import Path
import sys

import numpy as np


def _load_module(name: str, rel_path: str):
    root = Path(__file__).resolve().parents[1]
    path = root / rel_path
    spec = importlib.util.spec_from_file_location(name, path)
    assert spec and spec.loader
    mod = importlib.util.module_from_spec(spec)
    sys.modules[name] = mod
    spec.loader.exec_module(mod)
    return mod


def _cli():
    return _load_module("skpd_cli_main", "services/cli/app/main.py")


def _simulate(cli, out: Path) -> int:
    return cli.main(
        [
            "simulate",
            "--n", "80",
            "--image-dims", "16", "16",
            "--q", "8",
            "--sparsity", "2",
            "--rho", "0.8", "0.6",
            "--seed", "1",
            "--out", str(out),
        ]
    )


def test_list_presets(capsys):
    assert _cli().main(["simulate", "--list-presets"]) == 0
    lines = [json.loads(x) for x in capsys.readouterr().out.splitlines()]
    assert len(lines) == 18
    assert {x["preset"] for x in lines} >= {"table3-1block", "table4-butterfly"}


def test_simulate_requires_out(capsys):
    assert _cli().main(["simulate", "--preset", "table3-1block"]) == 2
    assert "skpd: error: missing --out" in capsys.readouterr().err


def test_simulate_rejects_bad_correlation(tmp_path, capsys):
    code = _cli().main(["simulate", "--rho", "1.2", "0.5", "--out", str(tmp_path)])
    assert code == 2
    assert "rho1" in capsys.readouterr().err


def test_unknown_flag_is_a_usage_error():
    try:
        _cli().main(["fit", "--lambda3", "1"])
        assert False, "expected rejection"
    except SystemExit as exc:
        assert exc.code == 2


def test_simulate_fit_evaluate(tmp_path, capsys):
    cli = _cli()
    data_dir = tmp_path / "data"
    assert _simulate(cli, data_dir) == 0
    assert (data_dir / "manifest.json").exists()

    model_dir = tmp_path / "fit"
    code = cli.main(
        [
            "fit",
            "--data", str(data_dir),
            "--lambda1", "0.05",
            "--lambda2", "0.05",
            "--rank", "2",
            "--block-dims", "8", "8",
            "--out", str(model_dir),
        ]
    )
    assert code == 0
    doc = json.loads((model_dir / "model.json").read_text())
    assert doc["rank"] == 2 and doc["method"] == "skpd"
    assert "fit_seconds" in json.loads((model_dir / "timing.json").read_text())

    capsys.readouterr()
    assert cli.main(["evaluate", "--data", str(data_dir), "--model", str(model_dir)]) == 0
    out = capsys.readouterr().out.splitlines()
    assert len(out) == 1
    report = json.loads(out[0])
    assert 0.0 <= report["tpr_C"] <= 1.0
    assert report["method"] == "skpd"


def test_naive_fit_uses_voxel_blocks(tmp_path):
    cli = _cli()
    _simulate(cli, tmp_path / "data")
    args = ["fit", "--data", str(tmp_path / "data"), "--lambda1", "0.05", "--lambda2", "0.05"]
    assert cli.main([*args, "--naive", "--out", str(tmp_path / "naive")]) == 0
    doc = json.loads((tmp_path / "naive" / "model.json").read_text())
    assert doc["hyper"]["block_dims"] == [1, 1]
    assert doc["method"] == "naive"


def test_one_cell_tune_matches_fit(tmp_path):
    cli = _cli()
    _simulate(cli, tmp_path / "data")
    grid = {"lambda1_values": [0.05], "lambda2_values": [0.04], "rank_values": [1]}
    (tmp_path / "grid.json").write_text(json.dumps(grid))

    data = str(tmp_path / "data")
    assert cli.main(
        ["tune", "--data", data, "--grid-file", str(tmp_path / "grid.json"),
         "--out", str(tmp_path / "tune")]
    ) == 0
    assert cli.main(
        ["fit", "--data", data, "--lambda1", "0.05", "--lambda2", "0.04",
         "--out", str(tmp_path / "fit")]
    ) == 0

    from skpd_mcca.storage import read_tensor

    for name in ("theta", "C"):
        np.testing.assert_array_equal(
            read_tensor(tmp_path / "tune" / name), read_tensor(tmp_path / "fit" / name)
        )
    rows = (tmp_path / "tune" / "cells.csv").read_text().strip().splitlines()
    assert len(rows) == 2
    assert json.loads((tmp_path / "tune" / "bic_report.json").read_text())["best"]["rank"] == 1


def test_config_file_supplies_arguments(tmp_path):
    cli = _cli()
    _simulate(cli, tmp_path / "data")
    config = {
        "out": str(tmp_path / "cfg-fit"),
        "fit": {"data": str(tmp_path / "data"), "lambda1": 0.05, "lambda2": 0.05},
    }
    (tmp_path / "run.json").write_text(json.dumps(config))
    assert cli.main(["fit", "--config", str(tmp_path / "run.json")]) == 0
    assert (tmp_path / "cfg-fit" / "model.json").exists()


def test_bad_config_exits_2(tmp_path, capsys):
    (tmp_path / "run.json").write_text(json.dumps({"fit": {"lambda": 1}}))
    assert _cli().main(["fit", "--config", str(tmp_path / "run.json")]) == 2
    assert "unknown keys" in capsys.readouterr().err


def test_missing_dataset_exits_3(tmp_path, capsys):
    code = _cli().main(
        ["fit", "--data", str(tmp_path / "nope"), "--lambda1", "0.1", "--lambda2", "0.1",
         "--out", str(tmp_path / "o")]
    )
    assert code == 3
    assert "no dataset manifest" in capsys.readouterr().err


def test_reproduce_rejects_unknown_cells(tmp_path, capsys):
    code = _cli().main(
        ["reproduce", "--table", "3", "--cells", "hexagon", "--out", str(tmp_path)]
    )
    assert code == 2
    assert "no table 3 cells match" in capsys.readouterr().err


def test_simulate_manifest_echoes_preset(tmp_path):
    code = _cli().main(
        ["simulate", "--preset", "table3-1block", "--rho", "0.8", "0.6", "--seed", "7",
         "--n", "50", "--out", str(tmp_path / "d")]
    )
    assert code == 0
    manifest = json.loads((tmp_path / "d" / "manifest.json").read_text())
    assert manifest["preset"] == "table3-1block"
    assert manifest["config"]["shape"] == "one_block"
    assert manifest["config"]["cov_family"] == "identity"
    assert (manifest["config"]["rho1"], manifest["config"]["rho2"]) == (0.8, 0.6)
    assert manifest["config"]["seed"] == 7


def test_fit_reruns_are_byte_identical(tmp_path):
    cli = _cli()
    _simulate(cli, tmp_path / "data")
    args = ["fit", "--data", str(tmp_path / "data"), "--lambda1", "0.03", "--lambda2", "0.03",
            "--init", "uniform", "--seed", "4"]
    assert cli.main([*args, "--out", str(tmp_path / "a")]) == 0
    assert cli.main([*args, "--out", str(tmp_path / "b")]) == 0
    for name in ("model.json", "theta.bin", "alphas.bin", "betas.bin", "C.bin"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_fit_without_seed_uses_the_configured_default(tmp_path):
    from skpd_mcca.config import settings

    cli = _cli()
    _simulate(cli, tmp_path / "data")
    args = ["fit", "--data", str(tmp_path / "data"), "--lambda1", "0.03", "--lambda2", "0.03",
            "--init", "uniform"]
    assert cli.main([*args, "--out", str(tmp_path / "a")]) == 0
    assert cli.main([*args, "--out", str(tmp_path / "b")]) == 0
    assert json.loads((tmp_path / "a" / "model.json").read_text())["seed"] == settings.seed
    for name in ("model.json", "alphas.bin", "theta.bin"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_config_seed_is_used_when_flag_is_absent(tmp_path):
    cli = _cli()
    _simulate(cli, tmp_path / "data")
    (tmp_path / "run.json").write_text(json.dumps({"seed": 11}))
    code = cli.main(
        ["fit", "--config", str(tmp_path / "run.json"), "--data", str(tmp_path / "data"),
         "--lambda1", "0.03", "--lambda2", "0.03", "--out", str(tmp_path / "fit")]
    )
    assert code == 0
    assert json.loads((tmp_path / "fit" / "model.json").read_text())["seed"] == 11


def test_reproduce_runs_without_seed_or_parallelism(tmp_path, capsys):
    code = _cli().main(
        ["reproduce", "--table", "A1", "--replicates", "1", "--n", "150", "--grid-points", "2",
         "--min-ratio", "0.1", "--ranks", "1", "--out", str(tmp_path)]
    )
    assert code in (0, 1)
    assert "Traceback" not in capsys.readouterr().err
    assert json.loads((tmp_path / "manifest.json").read_text())["table"] == "A1"
