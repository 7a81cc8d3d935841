import logging

import orjson
from prometheus_client import REGISTRY

from skpd_mcca.metrics import inc_lasso_sweeps, observe_fit, write_metrics
from skpd_mcca.observability import (
    _JsonFormatter,
    _RunIdFilter,
    configure_json_logging,
    get_run_id,
    run_context,
)


def _record(msg: str) -> logging.LogRecord:
    return logging.LogRecord("skpd.test", logging.WARNING, __file__, 1, msg, (), None)


def test_configure_json_logging_is_idempotent():
    configure_json_logging("INFO")
    configure_json_logging("DEBUG")
    root = logging.getLogger()
    ours = [h for h in root.handlers if getattr(h, "_skpd_json_logging", False)]
    assert len(ours) == 1
    assert root.level == logging.DEBUG


def test_json_logs_go_to_stderr(capsys):
    configure_json_logging("INFO")
    capsys.readouterr()
    logging.getLogger("skpd.test").warning("to stderr")
    captured = capsys.readouterr()
    assert captured.out == ""
    doc = orjson.loads(captured.err.strip().splitlines()[-1])
    assert doc["msg"] == "to stderr"


def test_run_context_stamps_records():
    assert get_run_id() is None
    with run_context("run-42") as rid:
        assert rid == "run-42"
        record = _record("hello %s")
        record.args = ("world",)
        _RunIdFilter().filter(record)
    assert get_run_id() is None

    doc = orjson.loads(_JsonFormatter().format(record))
    assert doc["msg"] == "hello world"
    assert doc["run_id"] == "run-42"
    assert doc["level"] == "WARNING"
    assert doc["logger"] == "skpd.test"


def test_run_context_generates_an_id():
    with run_context() as rid:
        assert len(rid) == 36
        assert get_run_id() == rid


def test_records_outside_a_run_have_no_run_id():
    record = _record("plain")
    _RunIdFilter().filter(record)
    assert "run_id" not in orjson.loads(_JsonFormatter().format(record))


def test_fit_metrics_are_counted_and_written(tmp_path):
    labels = {"method": "skpd", "outcome": "converged"}
    before = REGISTRY.get_sample_value("skpd_fits_total", labels) or 0.0
    observe_fit(method="skpd", seconds=0.2, outcome="converged")
    inc_lasso_sweeps(3)
    assert REGISTRY.get_sample_value("skpd_fits_total", labels) == before + 1.0

    target = tmp_path / "metrics.prom"
    assert write_metrics(str(target))
    text = target.read_text()
    assert "skpd_fits_total" in text
    assert "skpd_lasso_sweeps_total" in text
    assert "skpd_fit_duration_seconds_bucket" in text
