"""Dataset CSV files and versioned FitReport / parameter JSON files."""
from __future__ import annotations

import csv
import io
import json
import math
import os
import tempfile
from pathlib import Path

import numpy as np

from .estimate import FitReport
from .model import PARAM_NAMES, Dataset, InputSeries, ThermalParams, ValidationError

DATASET_HEADER = ("t_min", "T_c", "T_e_in", "T_e_out", "T_a", "m")
TEMP_RANGE = (-150.0, 60.0)
REPORT_FORMAT = "freezerid-fit-report"
REPORT_VERSION = 1
PARAMS_FORMAT = "freezerid-params"


class DataFormatError(ValidationError):
    """Malformed or invalid dataset file."""


class ReportSchemaError(ValidationError):
    """A report or parameter file does not match the expected schema."""


def atomic_write_text(path, text: str) -> None:
    """Write ``text`` to ``path`` through a temp file and an atomic rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _fmt(v) -> str:
    return repr(float(v))


def rows_to_csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


# --- dataset files -----------------------------------------------------------

def dataset_to_csv(data: Dataset) -> str:
    u = data.inputs
    rows = (
        (_fmt(u.t[k]), _fmt(data.y[k]), _fmt(u.T_e_in[k]), _fmt(u.T_e_out[k]), _fmt(u.T_a[k]), str(int(u.m[k])))
        for k in range(len(data))
    )
    return rows_to_csv(DATASET_HEADER, rows)


def write_dataset(data: Dataset, path) -> None:
    atomic_write_text(path, dataset_to_csv(data))


def ingest(path) -> Dataset:
    """Read and validate a dataset file; ``M_ac`` is recomputed from ``m``."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except UnicodeDecodeError as e:
        raise DataFormatError(f"{path}: not valid UTF-8 ({e})") from e
    reader = csv.reader(text.splitlines())
    try:
        header = next(reader)
    except StopIteration:
        raise DataFormatError(f"{path}: file is empty") from None
    if tuple(h.strip() for h in header) != DATASET_HEADER:
        raise DataFormatError(f"{path}:1: expected header {','.join(DATASET_HEADER)}, got {','.join(header)}")
    cols = [[] for _ in DATASET_HEADER]
    for line_no, row in enumerate(reader, start=2):
        if not row:
            raise DataFormatError(f"{path}:{line_no}: empty row")
        if len(row) != len(DATASET_HEADER):
            raise DataFormatError(f"{path}:{line_no}: expected {len(DATASET_HEADER)} cells, got {len(row)}")
        for c, (name, cell) in enumerate(zip(DATASET_HEADER, row), start=1):
            cell = cell.strip()
            if cell == "":
                raise DataFormatError(f"{path}:{line_no}:{c}: missing value for {name}")
            if name == "m":
                if cell not in ("0", "1"):
                    raise DataFormatError(f"{path}:{line_no}:{c}: compressor state m must be 0 or 1, got {cell!r}")
                cols[c - 1].append(int(cell))
                continue
            try:
                v = float(cell)
            except ValueError:
                raise DataFormatError(f"{path}:{line_no}:{c}: cannot parse {name}={cell!r} as a number") from None
            if not math.isfinite(v):
                raise DataFormatError(f"{path}:{line_no}:{c}: {name} must be finite, got {cell!r}")
            if name != "t_min" and not TEMP_RANGE[0] <= v <= TEMP_RANGE[1]:
                raise DataFormatError(
                    f"{path}:{line_no}:{c}: {name}={v} outside the sanity window [{TEMP_RANGE[0]}, {TEMP_RANGE[1]}] degC"
                )
            cols[c - 1].append(v)
    if not cols[0]:
        raise DataFormatError(f"{path}: no data rows")
    t = np.array(cols[0])
    steps = np.diff(t)
    bad = np.flatnonzero(steps != 1.0)
    if bad.size:
        k = int(bad[0])
        raise DataFormatError(
            f"{path}:{k + 3}: t_min must advance by exactly 1 minute, got {t[k]} -> {t[k + 1]} "
            "(gaps are not imputed; split the file at the gap)"
        )
    inputs = InputSeries.from_columns(t, cols[4], cols[2], cols[3], np.array(cols[5], dtype=np.int64))
    return Dataset(inputs, np.array(cols[1]))


# --- JSON helpers ------------------------------------------------------------

def _enc(v):
    """Floats as JSON numbers; non-finite values as strings."""
    v = float(v)
    if math.isfinite(v):
        return v
    return "nan" if math.isnan(v) else ("inf" if v > 0 else "-inf")


def _dec_float(v, path):
    if isinstance(v, bool):
        raise ReportSchemaError(f"{path}: expected a number, got a boolean")
    if isinstance(v, (int, float)):
        return float(v)
    if v in ("nan", "inf", "-inf"):
        return float(v)
    raise ReportSchemaError(f"{path}: expected a number, got {type(v).__name__}")


def _get(obj, key, path, kind=None):
    if not isinstance(obj, dict):
        raise ReportSchemaError(f"{path}: expected an object")
    if key not in obj:
        raise ReportSchemaError(f"{path}.{key}: missing field")
    v = obj[key]
    if kind is not None and not isinstance(v, kind):
        raise ReportSchemaError(f"{path}.{key}: expected {getattr(kind, '__name__', kind)}, got {type(v).__name__}")
    return v


def _matrix(v, path, n):
    if v is None:
        return None
    if not isinstance(v, list) or len(v) != n or any(not isinstance(r, list) or len(r) != n for r in v):
        raise ReportSchemaError(f"{path}: expected a {n}x{n} matrix or null")
    return np.array([[_dec_float(x, f"{path}[{i}][{j}]") for j, x in enumerate(r)] for i, r in enumerate(v)])


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, allow_nan=False) + "\n"


def _load(path):
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ReportSchemaError(f"{path}:{e.lineno}:{e.colno}: invalid JSON ({e.msg})") from e


def _params_obj(p: ThermalParams) -> dict:
    return {n: _enc(getattr(p, n)) for n in PARAM_NAMES}


def _params_from(obj, path) -> ThermalParams:
    if not isinstance(obj, dict):
        raise ReportSchemaError(f"{path}: expected an object")
    unknown = sorted(set(obj) - set(PARAM_NAMES))
    if unknown:
        raise ReportSchemaError(f"{path}.{unknown[0]}: unknown parameter")
    vals = {n: _dec_float(_get(obj, n, path), f"{path}.{n}") for n in PARAM_NAMES}
    try:
        return ThermalParams(**vals)
    except ValidationError as e:
        raise ReportSchemaError(f"{path}: {e}") from e


def write_params(p: ThermalParams, path) -> None:
    atomic_write_text(path, _dump({"format": PARAMS_FORMAT, "version": REPORT_VERSION, "params": _params_obj(p)}))


def read_params(path) -> ThermalParams:
    obj = _load(path)
    _check_header(obj, PARAMS_FORMAT)
    return _params_from(_get(obj, "params", "$"), "$.params")


def _check_header(obj, fmt):
    if _get(obj, "format", "$", str) != fmt:
        raise ReportSchemaError(f"$.format: expected {fmt!r}, got {obj['format']!r}")
    version = _get(obj, "version", "$", int)
    if version != REPORT_VERSION:
        raise ReportSchemaError(f"$.version: unsupported version {version}, this build reads {REPORT_VERSION}")


# --- fit reports -------------------------------------------------------------

def fit_report_to_obj(r: FitReport) -> dict:
    names = r.free_names
    return {
        "format": REPORT_FORMAT,
        "version": REPORT_VERSION,
        "estimates": _params_obj(r.estimates),
        "free": list(names),
        "std_errors": {n: _enc(r.std_errors[n]) for n in r.std_errors},
        "wald_ci95": {n: [_enc(lo), _enc(hi)] for n, (lo, hi) in r.wald_ci95.items()},
        "correlation": None if r.correlation is None else [[_enc(x) for x in row] for row in r.correlation],
        "hessian": None if r.hessian is None else [[_enc(x) for x in row] for row in r.hessian],
        "hessian_pd": bool(r.hessian_pd),
        "neg_log_lik": _enc(r.neg_log_lik),
        "converged": bool(r.converged),
        "iterations": int(r.iterations),
        "n_evals": int(r.n_evals),
        "warnings": list(r.warnings),
        "restarts": [[_enc(a), _enc(b), bool(c), str(m)] for a, b, c, m in r.restarts],
        "relative_changes": None if r.relative_changes is None
        else {n: _enc(v) for n, v in r.relative_changes.items()},
    }


def fit_report_from_obj(obj) -> FitReport:
    _check_header(obj, REPORT_FORMAT)
    est = _params_from(_get(obj, "estimates", "$"), "$.estimates")
    free = _get(obj, "free", "$", list)
    for i, n in enumerate(free):
        if n not in PARAM_NAMES:
            raise ReportSchemaError(f"$.free[{i}]: unknown parameter {n!r}")
    if free != [n for n in PARAM_NAMES if n in free]:
        raise ReportSchemaError("$.free: parameters must be unique and in canonical order")
    k = len(free)

    def per_param(key, conv):
        d = _get(obj, key, "$", dict)
        out = {}
        for n, v in d.items():
            if n not in free:
                raise ReportSchemaError(f"$.{key}.{n}: not a free parameter")
            out[n] = conv(v, f"$.{key}.{n}")
        return out

    def pair(v, path):
        if not isinstance(v, list) or len(v) != 2:
            raise ReportSchemaError(f"{path}: expected [lo, hi]")
        return (_dec_float(v[0], f"{path}[0]"), _dec_float(v[1], f"{path}[1]"))

    restarts = []
    for i, row in enumerate(_get(obj, "restarts", "$", list)):
        path = f"$.restarts[{i}]"
        if not isinstance(row, list) or len(row) != 4 or not isinstance(row[2], bool) or not isinstance(row[3], str):
            raise ReportSchemaError(f"{path}: expected [start_nll, end_nll, converged, message]")
        restarts.append((_dec_float(row[0], path + "[0]"), _dec_float(row[1], path + "[1]"), row[2], row[3]))
    rel = _get(obj, "relative_changes", "$")
    if rel is not None:
        rel = per_param("relative_changes", _dec_float)
    warnings = _get(obj, "warnings", "$", list)
    for i, w in enumerate(warnings):
        if not isinstance(w, str):
            raise ReportSchemaError(f"$.warnings[{i}]: expected a string")
    for key in ("iterations", "n_evals"):
        if isinstance(obj.get(key), bool):
            raise ReportSchemaError(f"$.{key}: expected int, got bool")
    return FitReport(
        estimates=est,
        free_mask=tuple(n in free for n in PARAM_NAMES),
        std_errors=per_param("std_errors", _dec_float),
        wald_ci95=per_param("wald_ci95", pair),
        correlation=_matrix(_get(obj, "correlation", "$"), "$.correlation", k),
        neg_log_lik=_dec_float(_get(obj, "neg_log_lik", "$"), "$.neg_log_lik"),
        converged=_get(obj, "converged", "$", bool),
        iterations=_get(obj, "iterations", "$", int),
        n_evals=_get(obj, "n_evals", "$", int),
        hessian=_matrix(_get(obj, "hessian", "$"), "$.hessian", k),
        hessian_pd=_get(obj, "hessian_pd", "$", bool),
        warnings=tuple(warnings),
        restarts=tuple(restarts),
        relative_changes=rel,
    )


def write_fit_report(report: FitReport, path) -> None:
    atomic_write_text(path, _dump(fit_report_to_obj(report)))


def read_fit_report(path) -> FitReport:
    return fit_report_from_obj(_load(path))
