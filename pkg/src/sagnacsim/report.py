"""Fixture bundles and the full characterization run.

Randomness: every stochastic step draws from
``SeedSequence(seed, spawn_key=(crc32(command), crc32(stage), index...))``,
so a stage or a single record can be regenerated on its own and results do
not depend on execution order or thread count.
"""
from __future__ import annotations

import hashlib
import json
import math
import os
import shutil
import warnings
import zlib
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .chsh import CANONICAL, ChshAngleSet, chsh_S, chsh_settings, chsh_sigma_montecarlo, ideal_S
from .errors import NotConvergedWarning, SagnacError, StageError
from .io import (fixture_path, ingest_counts, load_curve, load_density, save_density,
                 write_counts, write_curve_counts)
from .measurement import (AnalyzerSetting, expected_record, predicted_rate, simulate_record,
                          singles_rates, sweep_curve, visibility_bootstrap, visibility_fit,
                          visibility_minmax)
from .source import (CorrectionModel, SourceParams, analytic_visibilities, brightness_report,
                     source_state)
from .states import bell_density, hermitize_and_project, state_metrics, trace_distance
from .tomography import ml_reconstruct, standard_set, tomography_report

# published characterization values used for comparison columns
PUBLISHED_VALUES = {
    "brightness": 2.5e4,
    "spectral_brightness": 6.25e4,
    "V_HV": 0.989, "dV_HV": 0.004,
    "V_PM": 0.937, "dV_PM": 0.011,
    "abs_S": 2.684, "dS": 0.03, "n_sigma": 22,
    "concurrence": 0.951,
    "fidelity": 0.9743,
    "purity": 0.953,
    "delta_lambda_printed_nm": 0.4,
}

BUNDLE_FILES = {
    "source": "source.json",
    "operating_point": "operating_point.json",
    "visibility_hv": "visibility_hv.csv",
    "visibility_pm": "visibility_pm.csv",
    "chsh": "chsh.csv",
    "tomography": "tomography.csv",
    "tomography_truth": "tomography_truth.json",
    "published_rho": "published_rho.json",
}


def _key(x) -> int:
    return x if isinstance(x, int) else zlib.crc32(str(x).encode())


def stage_seed(seed: int, *keys) -> np.random.SeedSequence:
    return np.random.SeedSequence(int(seed), spawn_key=tuple(_key(k) for k in keys))


def stage_int_seed(seed: int, *keys) -> int:
    return int(stage_seed(seed, *keys).generate_state(1, dtype=np.uint64)[0])


def fitted_published_state() -> np.ndarray:
    return source_state(SourceParams.load(fixture_path("published_source.json")))


def published_state(return_info: bool = False):
    """Projected version of the published ML matrix fixture."""
    return hermitize_and_project(load_density(fixture_path("published_rho_ml.json")), return_info)


# -- bundle generation ------------------------------------------------------

@dataclass
class BundleSpec:
    curve_dwell: float = 1.0
    chsh_duration: float = 30.0
    tomo_duration: float = 10.0
    tomo_set: str = "james16"


def simulate_bundle(out_dir, src: SourceParams, seed: int, tomo_state=None,
                    operating_point: dict | None = None, spec: BundleSpec | None = None,
                    published_rho=None, noiseless: bool = False) -> Path:
    """Write a synthetic data bundle generated from the source model.

    Visibility curves and CHSH counts come from ``source_state(src)``; the
    tomography counts come from ``tomo_state`` (defaults to the same state).
    With ``noiseless`` every file holds expected (non-integer) counts.
    """
    spec = spec or BundleSpec()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rho = source_state(src)
    tomo_rho = rho if tomo_state is None else np.asarray(tomo_state)

    (out / BUNDLE_FILES["source"]).write_text(json.dumps({"params": src.to_dict()}, indent=2) + "\n")
    if operating_point is None:
        # model rates with the analyzers at the anticorrelated H/V setting
        h, v = AnalyzerSetting(0.0), AnalyzerSetting(90.0)
        s_i, s_s = singles_rates(rho, h, v, src)
        operating_point = {"S_C": predicted_rate(rho, h, v, src), "S_i": s_i, "S_s": s_s}
    (out / BUNDLE_FILES["operating_point"]).write_text(json.dumps(operating_point, indent=2) + "\n")

    def record(state, a, b, duration, *key):
        if noiseless:
            return expected_record(state, a, b, src, duration)
        rng = np.random.default_rng(stage_seed(seed, "simulate", *key))
        return simulate_record(state, a, b, src, duration, rng)

    for name, angle in (("visibility_hv", 0.0), ("visibility_pm", 45.0)):
        curve_seed = None if noiseless else stage_seed(seed, "simulate", name)
        curve = sweep_curve(rho, angle, src, spec.curve_dwell, seed=curve_seed)
        write_curve_counts(out / BUNDLE_FILES[name], curve)

    records = [record(rho, a, b, spec.chsh_duration, "chsh", i)
               for i, (a, b) in enumerate(chsh_settings(CANONICAL))]
    write_counts(out / BUNDLE_FILES["chsh"], records)

    tset = standard_set(spec.tomo_set)
    records = [record(tomo_rho, a, b, spec.tomo_duration, "tomography", i)
               for i, (a, b) in enumerate(tset.settings)]
    write_counts(out / BUNDLE_FILES["tomography"], records)
    save_density(out / BUNDLE_FILES["tomography_truth"], tomo_rho)
    if published_rho is not None:
        shutil.copyfile(published_rho, out / BUNDLE_FILES["published_rho"])

    manifest = {
        "format": 1,
        "synthetic": True,
        "noiseless": bool(noiseless),
        "seed": int(seed),
        "curve_dwell_s": spec.curve_dwell,
        "chsh_duration_s": spec.chsh_duration,
        "tomo_duration_s": spec.tomo_duration,
        "tomo_set": spec.tomo_set,
        "files": {k: v for k, v in BUNDLE_FILES.items() if (out / v).exists()},
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    return out


# -- characterization -------------------------------------------------------

@dataclass
class RunConfig:
    bundle: Path
    seed: int
    target: str = "psi-minus"
    angles: ChshAngleSet = CANONICAL
    tomo_set: str | None = None
    likelihood: str = "poisson"
    mc_trials: int = 1000
    bootstrap: int = 1000
    subtract_accidentals: bool = True
    correction_model: str = CorrectionModel.COUPLING_DETECTION.value
    paths: dict = field(default_factory=dict)

    def path(self, name) -> Path:
        if name in self.paths:
            return Path(self.paths[name])
        return Path(self.bundle) / BUNDLE_FILES[name]


class _Hashes(dict):
    def add(self, name, path):
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"missing input file {path}")
        self[name] = hashlib.sha256(path.read_bytes()).hexdigest()
        return path


def _stage(name):
    def wrap(fn):
        def inner(*args, **kwargs):
            try:
                return fn(*args, **kwargs)
            except StageError:
                raise
            except (SagnacError, OSError, ValueError, KeyError) as exc:
                raise StageError(name, exc) from exc
        inner.__name__ = fn.__name__
        return inner
    return wrap


@_stage("visibility")
def _visibility_stage(cfg, src, hashes):
    window = src.coinc_window if cfg.subtract_accidentals else None
    out = {}
    for label, name in (("HV", "visibility_hv"), ("PM", "visibility_pm")):
        curve = load_curve(hashes.add(name, cfg.path(name)))
        v, dv = visibility_minmax(curve, window)
        dv_boot = visibility_bootstrap(curve, cfg.bootstrap, stage_seed(cfg.seed, "report-all", name),
                                       coinc_window=window)
        fit = visibility_fit(curve, window)
        out[label] = {
            "fixed_angle_deg": curve.fixed_angle,
            "V": v, "dV": dv, "dV_bootstrap": dv_boot,
            "fit": {"V": fit.visibility, "dV": fit.visibility_err, "phase_deg": fit.phase,
                    "phase_err_deg": fit.phase_err, "amplitude_hz": fit.amplitude,
                    "offset_hz": fit.offset, "degenerate": fit.degenerate},
            "samples": len(curve.samples),
        }
    out["accidentals_subtracted"] = bool(window)
    return out


@_stage("chsh")
def _chsh_stage(cfg, src, hashes):
    window = src.coinc_window if cfg.subtract_accidentals else None
    records = ingest_counts(hashes.add("chsh", cfg.path("chsh")))
    res = chsh_S(records, cfg.angles, window)
    out = res.as_dict()
    out["angles_deg"] = list(cfg.angles.as_tuple())
    if cfg.mc_trials:
        out["dS_montecarlo"] = chsh_sigma_montecarlo(
            records, cfg.angles, cfg.mc_trials, stage_seed(cfg.seed, "report-all", "chsh-mc"), window)
        out["mc_trials"] = cfg.mc_trials
    out["accidentals_subtracted"] = bool(window)
    return out


def _manifest(cfg):
    p = Path(cfg.bundle) / "manifest.json"
    return json.loads(p.read_text()) if p.exists() else {}


@_stage("tomography")
def _tomography_stage(cfg, src, hashes):
    window = src.coinc_window if cfg.subtract_accidentals else None
    records = ingest_counts(hashes.add("tomography", cfg.path("tomography")))
    tset = standard_set(cfg.tomo_set or _manifest(cfg).get("tomo_set", "james16"))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", NotConvergedWarning)
        result = ml_reconstruct(records, tset, cfg.likelihood, coinc_window=window)
    rep = tomography_report(result, bell_density(cfg.target))
    rep["set"] = tset.name
    rep["rho_ml"] = {"re": result.rho_ml.real.tolist(), "im": result.rho_ml.imag.tolist()}
    truth = cfg.path("tomography_truth")
    if truth.exists():
        hashes.add("tomography_truth", truth)
        rep["trace_distance_to_truth"] = trace_distance(result.rho_ml, load_density(truth))
    rep["accidentals_subtracted"] = bool(window)
    return rep


@_stage("metrics")
def _metrics_stage(cfg, hashes):
    path = cfg.path("published_rho")
    if not path.exists():
        path = fixture_path("published_rho_ml.json")
    raw = load_density(hashes.add("published_rho", path))
    rho, info = hermitize_and_project(raw, return_info=True)
    m = state_metrics(rho, bell_density(cfg.target))
    return {
        "metrics": m.as_dict(),
        "projection": {"min_eigenvalue": info.min_eigenvalue, "clipped_weight": info.clipped_weight,
                       "flagged": info.flagged, "max_entry_change": info.max_change},
        "ideal_abs_S": abs(ideal_S(rho)),
        "analytic_visibilities": list(analytic_visibilities(rho)),
    }


@_stage("brightness")
def _brightness_stage(cfg, src, hashes):
    op = json.loads(hashes.add("operating_point", cfg.path("operating_point")).read_text())
    rep = brightness_report(op, src, cfg.correction_model)
    out = rep.as_dict()
    out["delta_lambda_printed_nm"] = PUBLISHED_VALUES["delta_lambda_printed_nm"]
    out["pump_power_mW"] = src.pump_power
    out["inputs"] = {k: op[k] for k in ("S_C", "S_i", "S_s")}
    return out


def _row(name, value, unc, published, tol, rel=False):
    if value is None:
        ok = None
    else:
        allowed = tol * abs(published) if rel else tol
        ok = bool(abs(value - published) <= allowed)
    return {"parameter": name, "value": value, "uncertainty": unc, "published": published,
            "tolerance": tol, "tolerance_relative": rel, "within": ok}


def _table(report):
    b, v, c = report["brightness"], report["visibility"], report["chsh"]
    pm = report["metrics"]["metrics"]
    rm = report["tomography"]["metrics"]
    pv = PUBLISHED_VALUES
    rows = [
        _row("brightness", b["brightness"], None, pv["brightness"], 0.2, rel=True),
        _row("spectral_brightness", b["spectral_brightness"], None, pv["spectral_brightness"], 0.2, rel=True),
        _row("V_HV", v["HV"]["V"], v["HV"]["dV"], pv["V_HV"], 3 * v["HV"]["dV"]),
        _row("V_PM", v["PM"]["V"], v["PM"]["dV"], pv["V_PM"], 3 * v["PM"]["dV"]),
        _row("abs_S", c["abs_S"], c["dS"], pv["abs_S"], 0.05),
        _row("concurrence", pm["concurrence"], None, pv["concurrence"], 0.02),
        _row("fidelity", pm["fidelity"], None, pv["fidelity"], 0.02),
        _row("purity", pm["purity"], None, pv["purity"], 0.02),
        _row("concurrence_reconstructed", rm["concurrence"], None, pv["concurrence"], 0.02),
        _row("fidelity_reconstructed", rm["fidelity"], None, pv["fidelity"], 0.02),
        _row("purity_reconstructed", rm["purity"], None, pv["purity"], 0.02),
    ]
    return rows


def _timestamp():
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    if epoch:
        return datetime.fromtimestamp(int(epoch), timezone.utc).isoformat()
    return datetime.now(timezone.utc).isoformat()


def run_full_characterization(cfg: RunConfig) -> dict:
    """Visibility, CHSH, tomography, matrix metrics and brightness, in that order."""
    hashes = _Hashes()
    try:
        src = SourceParams.load(hashes.add("source", cfg.path("source")))
    except (SagnacError, OSError, ValueError) as exc:
        raise StageError("source", exc) from exc
    report = {}
    report["visibility"] = _visibility_stage(cfg, src, hashes)
    report["chsh"] = _chsh_stage(cfg, src, hashes)
    report["tomography"] = _tomography_stage(cfg, src, hashes)
    report["metrics"] = _metrics_stage(cfg, hashes)
    report["brightness"] = _brightness_stage(cfg, src, hashes)
    report["table"] = _table(report)
    report["provenance"] = {
        "version": __version__,
        "seed": int(cfg.seed),
        "command": "report-all",
        "bundle": _manifest(cfg),
        "input_sha256": dict(sorted(hashes.items())),
        "timestamp": _timestamp(),
    }
    return report


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if math.isfinite(x) else None
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def dumps_report(report: dict) -> str:
    return json.dumps(_clean(report), indent=2, sort_keys=True) + "\n"


def render_text(report: dict) -> str:
    """Human-readable summary in the layout of the published parameter table."""
    lines = [f"{'parameter':<28}{'value':>14}{'+/-':>12}{'published':>12}  ok"]
    lines.append("-" * len(lines[0]))
    for r in report["table"]:
        unc = "" if r["uncertainty"] is None else f"{r['uncertainty']:.3g}"
        ok = {True: "yes", False: "NO", None: "-"}[r["within"]]
        lines.append(f"{r['parameter']:<28}{r['value']:>14.6g}{unc:>12}{r['published']:>12.6g}  {ok}")
    c = report["chsh"]
    lines.append("")
    lines.append(f"CHSH |S| = {c['abs_S']:.4f} +/- {c['dS']:.4f} (MC {c.get('dS_montecarlo', float('nan')):.4f}),"
                 f" n_sigma = {c['n_sigma']:.1f} (floor {c['n_sigma_floor']})")
    b = report["brightness"]
    lines.append(f"bandwidth = {b['delta_lambda']:.4f} nm (printed {b['delta_lambda_printed_nm']} nm),"
                 f" eta_C = {100 * b['eta_C']:.2f} %")
    return "\n".join(lines) + "\n"
