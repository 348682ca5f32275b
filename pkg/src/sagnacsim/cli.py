"""Command-line front end.

Exit codes: 0 success, 2 validation error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import warnings
from pathlib import Path

from .chsh import ChshAngleSet, chsh_S, chsh_sigma_montecarlo
from .errors import NotConvergedWarning, NumericalError, SagnacError, ValidationError
from .io import (emit_curve_data, fixture_path, ingest_counts, load_curve, load_density,
                 save_density)
from .measurement import visibility_bootstrap, visibility_fit, visibility_minmax
from .report import (BundleSpec, RunConfig, dumps_report, render_text, run_full_characterization,
                     simulate_bundle, stage_seed)
from .source import SourceParams
from .states import bell_density, hermitize_and_project, state_metrics, concurrence_spectrum
from .tomography import ml_reconstruct, standard_set, tomography_report

log = logging.getLogger("sagnacsim")


def _write_json(path, data):
    text = dumps_report(data)
    if path is None or str(path) == "-":
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


def cmd_simulate(args):
    src = SourceParams.load(args.source or fixture_path("published_source.json"))
    tomo_state = None
    if args.tomo_state:
        tomo_state = hermitize_and_project(load_density(args.tomo_state))
    op = json.loads(Path(args.operating_point).read_text()) if args.operating_point else None
    spec = BundleSpec(args.curve_dwell, args.chsh_duration, args.tomo_duration, args.set)
    out = simulate_bundle(args.out, src, args.seed, tomo_state, op, spec, args.published_rho,
                          args.noiseless)
    log.info("wrote bundle to %s", out)
    return 0


def cmd_visibility(args):
    curve = load_curve(args.input, args.fixed_arm)
    v, dv = visibility_minmax(curve, args.coinc_window)
    out = {"V": v, "dV": dv, "fixed_angle_deg": curve.fixed_angle}
    if args.bootstrap:
        if args.seed is None:
            raise ValidationError("--bootstrap requires an explicit --seed")
        out["dV_bootstrap"] = visibility_bootstrap(curve, args.bootstrap,
                                                   stage_seed(args.seed, "visibility", "bootstrap"),
                                                   args.coinc_window)
    if curve.fit_permitted:
        fit = visibility_fit(curve, args.coinc_window)
        out["fit"] = {"V": fit.visibility, "dV": fit.visibility_err, "phase_deg": fit.phase,
                      "offset_hz": fit.offset, "degenerate": fit.degenerate}
    if args.plot_out:
        emit_curve_data(curve, args.plot_out, args.coinc_window)
    _write_json(args.report, out)
    return 0


def cmd_chsh(args):
    records = ingest_counts(args.input)
    angles = ChshAngleSet.parse(args.angles)
    res = chsh_S(records, angles, args.coinc_window)
    out = res.as_dict()
    if args.mc_trials:
        if args.seed is None:
            raise ValidationError("--mc-trials requires an explicit --seed")
        out["dS_montecarlo"] = chsh_sigma_montecarlo(records, angles, args.mc_trials,
                                                     stage_seed(args.seed, "chsh", "mc"),
                                                     args.coinc_window)
        out["mc_trials"] = args.mc_trials
    _write_json(args.report, out)
    return 0


def cmd_tomo(args):
    records = ingest_counts(args.input)
    tset = standard_set(args.set)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", NotConvergedWarning)
        result = ml_reconstruct(records, tset, args.likelihood, args.max_iters, args.tol,
                                args.coinc_window)
    for w in caught:
        log.warning("%s", w.message)
    if args.out:
        save_density(args.out, result.rho_ml)
    rep = tomography_report(result, bell_density(args.target))
    rep["set"] = tset.name
    _write_json(args.report, rep)
    return 0


def cmd_metrics(args):
    raw = load_density(args.input)
    rho, info = hermitize_and_project(raw, return_info=True)
    out = state_metrics(rho, bell_density(args.target)).as_dict()
    out["projection"] = {"min_eigenvalue": info.min_eigenvalue, "flagged": info.flagged,
                         "max_entry_change": info.max_change}
    out["concurrence_spectrum"] = concurrence_spectrum(rho).tolist()
    _write_json(args.report, out)
    return 0


def cmd_report_all(args):
    bundle = Path(args.bundle or fixture_path("bundle"))
    cfg = RunConfig(bundle=bundle, seed=args.seed, target=args.target,
                    mc_trials=args.mc_trials, bootstrap=args.bootstrap,
                    subtract_accidentals=not args.raw, likelihood=args.likelihood)
    report = run_full_characterization(cfg)
    _write_json(args.out, report)
    if args.text:
        Path(args.text).write_text(render_text(report))
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="sagnacsim", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="generate a synthetic data bundle")
    s.add_argument("--source", help="source parameter file (JSON/TOML); default: published fixture")
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--tomo-state", help="density-matrix JSON used for the tomography counts")
    s.add_argument("--operating-point", help="JSON with S_C, S_i, S_s rates for brightness")
    s.add_argument("--published-rho", help="density-matrix JSON copied into the bundle")
    s.add_argument("--curve-dwell", type=float, default=1.0)
    s.add_argument("--chsh-duration", type=float, default=30.0)
    s.add_argument("--tomo-duration", type=float, default=10.0)
    s.add_argument("--set", default="james16")
    s.add_argument("--noiseless", action="store_true", help="write expected counts, no Poisson noise")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("visibility", help="visibility of a correlation curve")
    s.add_argument("--input", required=True)
    s.add_argument("--fixed-arm", choices=("A", "B"))
    s.add_argument("--coinc-window", type=float, help="subtract accidentals for this window (s)")
    s.add_argument("--bootstrap", type=int, default=0)
    s.add_argument("--seed", type=int)
    s.add_argument("--plot-out", help="write angle/rate/error CSV here")
    s.add_argument("--report")
    s.set_defaults(func=cmd_visibility)

    s = sub.add_parser("chsh", help="CHSH parameter from 16 coincidence records")
    s.add_argument("--input", required=True)
    s.add_argument("--angles", default="0,45,22.5,67.5", help="alpha,alpha',beta,beta' in degrees")
    s.add_argument("--mc-trials", type=int, default=0)
    s.add_argument("--seed", type=int)
    s.add_argument("--coinc-window", type=float)
    s.add_argument("--report")
    s.set_defaults(func=cmd_chsh)

    s = sub.add_parser("tomo", help="maximum-likelihood state tomography")
    s.add_argument("--input", required=True)
    s.add_argument("--set", default="james16")
    s.add_argument("--likelihood", choices=("poisson", "gaussian"), default="poisson")
    s.add_argument("--target", default="psi-minus")
    s.add_argument("--max-iters", type=int, default=5000)
    s.add_argument("--tol", type=float, default=1e-10)
    s.add_argument("--coinc-window", type=float)
    s.add_argument("--out")
    s.add_argument("--report")
    s.set_defaults(func=cmd_tomo)

    s = sub.add_parser("metrics", help="concurrence, fidelity and purity of a density matrix")
    s.add_argument("--input", required=True)
    s.add_argument("--target", default="psi-minus")
    s.add_argument("--report")
    s.set_defaults(func=cmd_metrics)

    s = sub.add_parser("report-all", help="full characterization of a data bundle")
    s.add_argument("--bundle", help="bundle directory; default: packaged published fixture bundle")
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--target", default="psi-minus")
    s.add_argument("--likelihood", choices=("poisson", "gaussian"), default="poisson")
    s.add_argument("--mc-trials", type=int, default=1000)
    s.add_argument("--bootstrap", type=int, default=1000)
    s.add_argument("--raw", action="store_true", help="do not subtract accidental coincidences")
    s.add_argument("--out", default="-")
    s.add_argument("--text", help="also write a text table here")
    s.set_defaults(func=cmd_report_all)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    try:
        return args.func(args)
    except SagnacError as exc:
        log.error("%s", exc)
        return getattr(exc, "exit_code", 1)
    except OSError as exc:
        log.error("%s", exc)
        return ValidationError.exit_code
    except (ValueError, KeyError) as exc:
        log.error("invalid input: %s", exc)
        return ValidationError.exit_code
    except ArithmeticError as exc:  # pragma: no cover
        log.error("numerical failure: %s", exc)
        return NumericalError.exit_code


if __name__ == "__main__":
    sys.exit(main())
