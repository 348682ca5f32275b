"""File formats: density-matrix JSON, count-data CSV/JSON, curve files."""
from __future__ import annotations

import csv
import json
import os
from pathlib import Path

import numpy as np

from .errors import InvalidParams, ParseError, SchemaMismatch
from .measurement import AnalyzerSetting, CoincidenceRecord, CorrelationCurve, CurveSample
from .states import BASIS_LABELS

FIXTURE_ENV = "SAGNACSIM_FIXTURES"
BASIS = ",".join(BASIS_LABELS)

COUNT_COLUMNS = ("theta_a_deg", "qwp_a_deg", "theta_b_deg", "qwp_b_deg",
                 "coinc", "singles_a", "singles_b", "duration_s")
CURVE_COLUMNS = ("theta_deg", "rate_hz", "rate_err_hz", "coinc", "singles_a", "singles_b",
                 "duration_s")


def fixture_dir() -> Path:
    """Fixture directory; ``$SAGNACSIM_FIXTURES`` overrides the packaged copy."""
    override = os.environ.get(FIXTURE_ENV)
    if override:
        return Path(override)
    return Path(__file__).parent / "fixtures"


def fixture_path(name: str) -> Path:
    return fixture_dir() / name


# -- numbers ----------------------------------------------------------------

def format_number(x) -> str:
    """Integers without a decimal point, floats as shortest round-trip repr."""
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    if x.is_integer() and abs(x) < 2 ** 53:
        return str(int(x))
    return repr(x)


def _parse_number(text, line, column, path):
    text = text.strip()
    try:
        if text.lstrip("+-").isdigit():
            return int(text)
        value = float(text)
    except ValueError:
        raise ParseError(f"not a number: {text!r}", line, column, path) from None
    if not np.isfinite(value):
        raise SchemaMismatch(f"non-finite value {text!r}", line, column, path)
    return value


# -- density matrices -------------------------------------------------------

def density_to_json(rho, **meta) -> dict:
    rho = np.asarray(rho, dtype=complex)
    out = {"dim": 4, "re": rho.real.tolist(), "im": rho.imag.tolist(), "basis": BASIS}
    if meta:
        out["meta"] = meta
    return out


def density_from_json(data) -> np.ndarray:
    try:
        dim = data["dim"]
        re = np.array(data["re"], dtype=float)
        im = np.array(data["im"], dtype=float)
    except (KeyError, TypeError, ValueError) as exc:
        raise SchemaMismatch(f"bad density-matrix JSON: {exc}") from None
    if dim != 4 or re.shape != (4, 4) or im.shape != (4, 4):
        raise SchemaMismatch("density matrix must be 4x4")
    if data.get("basis", BASIS).replace(" ", "") != BASIS:
        raise SchemaMismatch(f"unsupported basis order {data.get('basis')!r}")
    return re + 1j * im


def save_density(path, rho, **meta):
    Path(path).write_text(json.dumps(density_to_json(rho, **meta), indent=2) + "\n")


def load_density(path) -> np.ndarray:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, exc.lineno, None, path) from None
    return density_from_json(data)


def published_matrix() -> np.ndarray:
    """The published ML density matrix, verbatim (not Hermitian as printed)."""
    return load_density(fixture_path("published_rho_ml.json"))


# -- count data -------------------------------------------------------------

def _record_from_row(row: dict, line: int, path) -> CoincidenceRecord:
    vals = {}
    for col in COUNT_COLUMNS:
        raw = row.get(col)
        if raw is None:
            raise SchemaMismatch("missing field", line, col, path)
        raw = str(raw).strip()
        if raw == "" and col.startswith("qwp"):
            vals[col] = None
            continue
        if raw == "":
            raise SchemaMismatch("empty field", line, col, path)
        vals[col] = _parse_number(raw, line, col, path)
    for col in ("coinc", "singles_a", "singles_b"):
        if vals[col] < 0:
            raise SchemaMismatch("counts must be nonnegative", line, col, path)
    if vals["duration_s"] <= 0:
        raise SchemaMismatch("duration must be positive", line, "duration_s", path)
    try:
        a = AnalyzerSetting(vals["theta_a_deg"], vals["qwp_a_deg"])
        b = AnalyzerSetting(vals["theta_b_deg"], vals["qwp_b_deg"])
    except InvalidParams as exc:
        raise SchemaMismatch(str(exc), line, None, path) from None
    return CoincidenceRecord(a, b, vals["coinc"], vals["singles_a"], vals["singles_b"],
                             vals["duration_s"])


def _read_csv_rows(path, columns):
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaMismatch("empty file", 1, None, path) from None
        header = [h.strip() for h in header]
        if tuple(header) != tuple(columns):
            raise SchemaMismatch(f"expected header {','.join(columns)}", 1, None, path)
        rows = []
        for row in reader:
            line = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(columns):
                raise ParseError(f"expected {len(columns)} fields, got {len(row)}", line, None, path)
            rows.append((line, dict(zip(columns, row))))
    return rows


def ingest_counts(path, schema: str | None = None) -> list:
    """Validated coincidence records from a count-data CSV or JSON file.

    ``schema`` defaults from the file suffix. Errors carry the offending line.
    """
    path = Path(path)
    schema = schema or ("json" if path.suffix == ".json" else "csv")
    if schema == "csv":
        return [_record_from_row(row, line, path) for line, row in _read_csv_rows(path, COUNT_COLUMNS)]
    if schema == "json":
        try:
            data = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ParseError(exc.msg, exc.lineno, None, path) from None
        rows = data.get("records") if isinstance(data, dict) else data
        if not isinstance(rows, list):
            raise SchemaMismatch("expected a 'records' list", None, None, path)
        out = []
        for i, row in enumerate(rows):
            if not isinstance(row, dict):
                raise SchemaMismatch("record is not an object", i + 1, None, path)
            row = {k: ("" if v is None else str(v)) for k, v in row.items()}
            out.append(_record_from_row(row, i + 1, path))
        return out
    raise InvalidParams(f"unknown schema {schema!r}")


def _record_row(r: CoincidenceRecord) -> dict:
    a, b = r.setting_a, r.setting_b
    return {
        "theta_a_deg": format_number(a.pol_angle),
        "qwp_a_deg": "" if a.qwp_angle is None else format_number(a.qwp_angle),
        "theta_b_deg": format_number(b.pol_angle),
        "qwp_b_deg": "" if b.qwp_angle is None else format_number(b.qwp_angle),
        "coinc": format_number(r.coincidences),
        "singles_a": format_number(r.singles_a),
        "singles_b": format_number(r.singles_b),
        "duration_s": format_number(r.duration),
    }


def write_counts(path, records):
    with Path(path).open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=COUNT_COLUMNS, lineterminator="\n")
        w.writeheader()
        for r in records:
            w.writerow(_record_row(r))


# -- correlation curves -----------------------------------------------------

def _curve_rows(curve: CorrelationCurve) -> list:
    rows = []
    for s in curve.samples:
        a, b = curve.settings(s)
        r = _record_row(CoincidenceRecord(a, b, s.coincidences, s.singles_a, s.singles_b, s.duration))
        # keep the raw sweep angle rather than the folded analyzer angle
        r["theta_b_deg" if curve.fixed_arm == "A" else "theta_a_deg"] = format_number(s.theta)
        rows.append(r)
    return rows


def write_curve_json(path, curve: CorrelationCurve):
    data = {"fixed_arm": curve.fixed_arm, "records": _curve_rows(curve)}
    Path(path).write_text(json.dumps(data, indent=2) + "\n")


def write_curve_counts(path, curve: CorrelationCurve):
    """Count-data CSV for a curve."""
    with Path(path).open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=COUNT_COLUMNS, lineterminator="\n")
        w.writeheader()
        w.writerows(_curve_rows(curve))


def load_curve(path, fixed_arm: str | None = None) -> CorrelationCurve:
    """Correlation curve from count-data CSV or curve JSON.

    The fixed arm is the one whose setting never changes unless given.
    """
    path = Path(path)
    if path.suffix == ".json":
        try:
            data = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ParseError(exc.msg, exc.lineno, None, path) from None
        fixed_arm = fixed_arm or data.get("fixed_arm")
        rows = [(i + 1, {k: ("" if v is None else str(v)) for k, v in r.items()})
                for i, r in enumerate(data.get("records", []))]
    else:
        rows = _read_csv_rows(path, COUNT_COLUMNS)
    if not rows:
        raise SchemaMismatch("curve has no samples", None, None, path)
    for line, row in rows:
        _record_from_row(row, line, path)  # validation only

    def column(name):
        return [row[name].strip() for _, row in rows]

    if fixed_arm is None:
        if len(set(column("theta_a_deg"))) == 1 and len(set(column("qwp_a_deg"))) == 1:
            fixed_arm = "A"
        elif len(set(column("theta_b_deg"))) == 1 and len(set(column("qwp_b_deg"))) == 1:
            fixed_arm = "B"
        else:
            raise SchemaMismatch("neither arm is held fixed", None, None, path)
    fixed = "a" if fixed_arm == "A" else "b"
    swept = "b" if fixed == "a" else "a"
    line0, row0 = rows[0]
    fixed_angle = _parse_number(row0[f"theta_{fixed}_deg"], line0, f"theta_{fixed}_deg", path)
    q = row0[f"qwp_{fixed}_deg"].strip()
    fixed_qwp = _parse_number(q, line0, f"qwp_{fixed}_deg", path) if q else None
    samples = []
    for line, row in rows:
        if row[f"qwp_{swept}_deg"].strip():
            raise SchemaMismatch("swept arm must be a bare polarizer", line, f"qwp_{swept}_deg", path)
        samples.append(CurveSample(
            float(_parse_number(row[f"theta_{swept}_deg"], line, f"theta_{swept}_deg", path)),
            _parse_number(row["coinc"], line, "coinc", path),
            _parse_number(row["duration_s"], line, "duration_s", path),
            _parse_number(row["singles_a"], line, "singles_a", path),
            _parse_number(row["singles_b"], line, "singles_b", path),
        ))
    return CorrelationCurve(float(fixed_angle), samples, fixed_arm, fixed_qwp)


def emit_curve_data(curve: CorrelationCurve, path, coinc_window: float | None = None):
    """Plot-ready CSV: angle, rate and Poisson error, followed by the raw counts."""
    if not curve.samples:
        raise InvalidParams("cannot emit an empty curve")
    acc = curve.accidentals(coinc_window)
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CURVE_COLUMNS)
        for s, a in zip(curve.samples, acc):
            rate = (s.coincidences - a) / s.duration
            err = np.sqrt(s.coincidences) / s.duration
            w.writerow([format_number(s.theta), repr(float(rate)), repr(float(err)),
                        format_number(s.coincidences), format_number(s.singles_a),
                        format_number(s.singles_b), format_number(s.duration)])


def read_curve_data(path, fixed_angle: float, fixed_arm: str = "A") -> CorrelationCurve:
    samples = []
    for line, row in _read_csv_rows(path, CURVE_COLUMNS):
        v = {k: _parse_number(row[k], line, k, Path(path)) for k in CURVE_COLUMNS}
        samples.append(CurveSample(float(v["theta_deg"]), v["coinc"], v["duration_s"],
                                   v["singles_a"], v["singles_b"]))
    return CorrelationCurve(fixed_angle, samples, fixed_arm)
