from __future__ import annotations

import csv
import io
import os
from pathlib import Path
import tempfile
from typing import Any, Iterable, Sequence

import numpy as np
import orjson

from .errors import StorageError
from .mcca import Dataset, HyperParams, InitScheme, SkpdModel, compose_C
from .simgen import GroundTruth, SimConfig
from .tensor import BlockShape


DATASET_FORMAT = "skpd-dataset/1"
MODEL_FORMAT = "skpd-model/1"

_JSON_OPTS = orjson.OPT_INDENT_2 | orjson.OPT_SORT_KEYS | orjson.OPT_SERIALIZE_NUMPY


def atomic_write_bytes(path: str | Path, data: bytes) -> Path:
    """Write via a temp file in the same directory and os.replace it into place."""

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except FileNotFoundError:
            pass
        raise
    return path


def dumps_json(doc: Any) -> bytes:
    return orjson.dumps(doc, option=_JSON_OPTS) + b"\n"


def write_json(path: str | Path, doc: Any) -> Path:
    return atomic_write_bytes(path, dumps_json(doc))


def read_json(path: str | Path) -> Any:
    try:
        return orjson.loads(Path(path).read_bytes())
    except orjson.JSONDecodeError as exc:
        raise StorageError(f"{path}: invalid JSON ({exc})") from exc


def _fmt(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def csv_bytes(header: Sequence[str] | None, rows: Iterable[Sequence[Any]]) -> bytes:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    if header:
        writer.writerow(header)
    for row in rows:
        writer.writerow([_fmt(v) for v in row])
    return buf.getvalue().encode("utf-8")


def write_csv(
    path: str | Path, header: Sequence[str] | None, rows: Iterable[Sequence[Any]]
) -> Path:
    return atomic_write_bytes(path, csv_bytes(header, rows))


def read_csv_matrix(path: str | Path) -> np.ndarray:
    try:
        return np.loadtxt(path, delimiter=",", dtype=np.float64, ndmin=2)
    except ValueError as exc:
        raise StorageError(f"{path}: not a numeric CSV ({exc})") from exc


def _stem(path: str | Path) -> Path:
    p = Path(path)
    return p.with_suffix("") if p.suffix in (".json", ".bin") else p


def write_tensor(path: str | Path, values: np.ndarray) -> Path:
    """<stem>.bin (little-endian float64, row-major) plus its <stem>.json header."""

    arr = np.ascontiguousarray(values, dtype="<f8")
    if arr.ndim not in (1, 2, 3):
        raise StorageError(f"tensor files hold orders 1-3, got order {arr.ndim}")
    stem = _stem(path)
    atomic_write_bytes(stem.with_suffix(".bin"), arr.tobytes(order="C"))
    header = {
        "order": arr.ndim,
        "dims": list(arr.shape),
        "dtype": "f64",
        "layout": "row-major",
    }
    return write_json(stem.with_suffix(".json"), header)


def read_tensor(path: str | Path) -> np.ndarray:
    stem = _stem(path)
    header_path = stem.with_suffix(".json")
    if not header_path.exists():
        raise StorageError(f"missing tensor header {header_path}")
    header = read_json(header_path)
    if header.get("dtype") != "f64" or header.get("layout") != "row-major":
        raise StorageError(f"{header_path}: unsupported dtype/layout {header}")
    dims = tuple(int(d) for d in header.get("dims", ()))
    if len(dims) != header.get("order") or not 1 <= len(dims) <= 3:
        raise StorageError(f"{header_path}: order and dims disagree")
    raw = stem.with_suffix(".bin").read_bytes()
    data = np.frombuffer(raw, dtype="<f8")
    if data.size != int(np.prod(dims)):
        raise StorageError(f"{stem}.bin holds {data.size} values, header says {dims}")
    return data.astype(np.float64).reshape(dims)


def write_dataset(
    out_dir: str | Path,
    data: Dataset,
    truth: GroundTruth | None,
    cfg: SimConfig | None,
    *,
    extra: dict[str, Any] | None = None,
) -> Path:
    """Dataset directory; the manifest is written last."""

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    atomic_write_bytes(
        out / "images.bin",
        np.ascontiguousarray(data.images.reshape(data.n, -1), dtype="<f8").tobytes(order="C"),
    )
    write_csv(out / "genetics.csv", None, data.genetics.tolist())
    write_csv(out / "outcome.csv", None, ([v] for v in data.outcome.tolist()))

    manifest: dict[str, Any] = {
        "format": DATASET_FORMAT,
        "n": data.n,
        "image_dims": list(data.image_dims),
        "q": data.q,
        "config": cfg.to_dict() if cfg is not None else None,
        "files": {
            "images": "images.bin",
            "genetics": "genetics.csv",
            "outcome": "outcome.csv",
        },
        "truth": None,
    }
    if truth is not None:
        write_tensor(out / "truth" / "C", truth.C_true)
        write_tensor(out / "truth" / "theta", truth.theta_true)
        write_tensor(out / "truth" / "mask", truth.mask)
        write_tensor(out / "truth" / "theta_unit", truth.theta_unit)
        manifest["truth"] = {
            "C": "truth/C.json",
            "theta": "truth/theta.json",
            "mask": "truth/mask.json",
            "theta_unit": "truth/theta_unit.json",
        }
    if extra:
        manifest.update(extra)
    return write_json(out / "manifest.json", manifest)


def read_dataset(path: str | Path) -> tuple[Dataset, GroundTruth | None, dict[str, Any]]:
    root = Path(path)
    manifest_path = root / "manifest.json" if root.is_dir() else root
    root = manifest_path.parent
    if not manifest_path.exists():
        raise StorageError(f"no dataset manifest at {manifest_path}")
    manifest = read_json(manifest_path)
    if manifest.get("format") != DATASET_FORMAT:
        raise StorageError(f"{manifest_path}: unsupported format {manifest.get('format')!r}")

    n = int(manifest["n"])
    dims = tuple(int(d) for d in manifest["image_dims"])
    files = manifest["files"]
    raw = np.frombuffer((root / files["images"]).read_bytes(), dtype="<f8")
    if raw.size != n * int(np.prod(dims)):
        raise StorageError(f"images.bin holds {raw.size} values, manifest expects {n} x {dims}")
    images = raw.astype(np.float64).reshape((n, *dims))
    genetics = read_csv_matrix(root / files["genetics"])
    outcome = read_csv_matrix(root / files["outcome"]).reshape(-1)
    data = Dataset(images=images, genetics=genetics, outcome=outcome)

    truth = None
    refs = manifest.get("truth")
    if refs:
        mask = read_tensor(root / refs["mask"])
        theta_unit = read_tensor(root / refs["theta_unit"])
        truth = GroundTruth(
            mask=mask,
            C_true=read_tensor(root / refs["C"]),
            theta_unit=theta_unit,
            theta_true=read_tensor(root / refs["theta"]),
            support_C=np.flatnonzero(mask.reshape(-1)),
            support_theta=np.flatnonzero(theta_unit),
        )
    return data, truth, manifest


def model_document(model: SkpdModel) -> dict[str, Any]:
    warnings: list[str] = []
    if model.degenerate:
        warnings.append("degenerate: theta and alpha are both zero")
    if model.alpha_gram_ridged:
        warnings.append("alpha Gram matrix was singular; tau-ridged orthogonalization")
    if not model.converged:
        warnings.append("stopped at max_outer_iter without meeting outer_tol")
    shape = model.block_shape
    return {
        "format": MODEL_FORMAT,
        "hyper": model.hyper.to_dict(),
        "block_shape": {
            "full_dims": list(shape.full_dims),
            "block_dims": list(shape.block_dims),
            "grid_dims": list(shape.grid_dims),
            "order": shape.order,
        },
        "rank": model.rank,
        "init": model.init.value,
        "seed": model.seed,
        "converged": model.converged,
        "iterations": model.iterations,
        "degenerate": model.degenerate,
        "alpha_gram_ridged": model.alpha_gram_ridged,
        "objective_trace": list(model.objective_trace),
        "warnings": warnings,
        "files": {
            "theta": "theta.json",
            "alphas": "alphas.json",
            "betas": "betas.json",
            "C": "C.json",
        },
    }


def write_model(
    out_dir: str | Path, model: SkpdModel, *, extra: dict[str, Any] | None = None
) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_tensor(out / "theta", model.theta)
    write_tensor(out / "alphas", model.alphas)
    write_tensor(out / "betas", model.betas)
    write_tensor(out / "C", compose_C(model))
    doc = model_document(model)
    if extra:
        doc.update(extra)
    return write_json(out / "model.json", doc)


def read_model(path: str | Path) -> SkpdModel:
    root = Path(path)
    doc_path = root / "model.json" if root.is_dir() else root
    root = doc_path.parent
    if not doc_path.exists():
        raise StorageError(f"no model.json at {doc_path}")
    doc = read_json(doc_path)
    if doc.get("format") != MODEL_FORMAT:
        raise StorageError(f"{doc_path}: unsupported format {doc.get('format')!r}")
    hyper = dict(doc["hyper"])
    hyper["block_dims"] = tuple(hyper["block_dims"])
    shape_doc = doc["block_shape"]
    shape = BlockShape(
        full_dims=tuple(shape_doc["full_dims"]),
        block_dims=tuple(shape_doc["block_dims"]),
        grid_dims=tuple(shape_doc["grid_dims"]),
        order=int(shape_doc["order"]),
    )
    return SkpdModel(
        theta=read_tensor(root / doc["files"]["theta"]),
        alphas=read_tensor(root / doc["files"]["alphas"]),
        betas=read_tensor(root / doc["files"]["betas"]),
        block_shape=shape,
        hyper=HyperParams(**hyper),
        objective_trace=tuple(float(v) for v in doc["objective_trace"]),
        converged=bool(doc["converged"]),
        iterations=int(doc["iterations"]),
        degenerate=bool(doc["degenerate"]),
        alpha_gram_ridged=bool(doc["alpha_gram_ridged"]),
        init=InitScheme(doc["init"]),
        seed=doc.get("seed"),
    )
