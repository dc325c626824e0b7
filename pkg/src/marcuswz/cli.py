"""Config-driven command line: reproducible simulation and rate experiments.

Subcommands: ``levy-check``, ``simulate``, ``converge``, ``uniform``.  Every
run writes its outputs plus a ``manifest.json`` carrying the resolved
config, the seed and a content hash of each output file; re-running the
manifest's config reproduces the hashes byte for byte, for any ``--threads``.

Exit codes: 0 ok, 2 config error, 3 assertion/condition failed,
4 divergence abort.
"""

import argparse
import hashlib
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .config import (build_coefficients, build_experiment, build_model,
                     load_document, resolved_document)
from .driver import exp_moment_check, moment_lemma_check, sample_path
from .errors import (ConfigError, DivergenceAbortError, MomentDivergenceError,
                     SchemeDivergenceError)
from .experiments import fit_rate, strong_error, uniform_error
from .flows import estimate_constants
from .scheme import (closed_form_linear, event_driven_reference,
                     self_refined_reference, wz_knots)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_ASSERTION = 3
EXIT_DIVERGENCE = 4


def _sha256(path):
    digest = hashlib.sha256()
    with open(path, "rb") as handle:
        for chunk in iter(lambda: handle.read(65536), b""):
            digest.update(chunk)
    return "sha256:" + digest.hexdigest()


def _write_json(path, payload):
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(payload, handle, indent=2, sort_keys=True)
        handle.write("\n")


def _write_manifest(out_dir, command, resolved, seed, threads, started, outputs):
    manifest = {
        "tool": "marcuswz",
        "version": __version__,
        "command": command,
        "master_seed": seed,
        "threads": threads,
        "started_unix": started,
        "finished_unix": time.time(),
        "config": resolved,
        "outputs": {name: _sha256(out_dir / name) for name in outputs},
    }
    _write_json(out_dir / "manifest.json", manifest)


def _prepare_out(args):
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    return out_dir


def _parse_band(text):
    try:
        lo, hi = (float(part) for part in text.split(","))
    except ValueError:
        raise ConfigError("--assert-slope: expected LO,HI") from None
    if lo > hi:
        raise ConfigError("--assert-slope: need LO <= HI")
    return lo, hi


def cmd_levy_check(args):
    started = time.time()
    document = load_document(args.config)
    model = build_model(document.get("model") or {})
    coeffs = build_coefficients(document.get("coefficients") or {})
    exp = document.get("experiment", {}) or {}
    p = float(exp.get("p", 2.0))
    margin = float(exp.get("moment_margin", 0.1))
    seed = int(args.seed if args.seed is not None else exp.get("master_seed", 0))
    horizon = float(exp.get("T", 1.0))
    exponents = exp.get("h_exponents", list(range(6, 13)))
    h_grid = [horizon * 2.0 ** -int(e) for e in exponents]
    n_samples = int(exp.get("paths", 20000))

    constants = estimate_constants(coeffs, probe_radius=8.0, margin=margin)
    conditions = []
    all_finite = True
    for label, exponent in (("p*|Dc|", p * constants.norm_dc),
                            ("p*K", p * constants.big_k),
                            ("2d*K", 2.0 * coeffs.dimension * constants.big_k)):
        row = {"condition": label, "exponent": exponent,
               "exponent_with_margin": exponent + margin}
        try:
            row["value"] = exp_moment_check(model, exponent)
            row["value_with_margin"] = exp_moment_check(model, exponent + margin)
            row["finite"] = True
        except MomentDivergenceError as exc:
            row["finite"] = False
            row["error"] = str(exc)
            all_finite = False
        conditions.append(row)
        status = "ok" if row["finite"] else "DIVERGES"
        print(f"exp moment at {label} = {exponent:.6g}: {status}")

    report = {"conditions": conditions, "p": p, "moment_margin": margin,
              "constants": {"norm_da": constants.norm_da,
                            "norm_db": constants.norm_db,
                            "norm_dc": constants.norm_dc,
                            "kappa1": constants.kappa1,
                            "kappa2": constants.kappa2,
                            "K": constants.big_k},
              "passed": all_finite}
    if all_finite:
        ratios = moment_lemma_check(model, p, constants.kappa1, constants.kappa2,
                                    constants.big_k, h_grid, n_samples,
                                    master_seed=seed)
        report["lemma_ratios"] = [
            {"h": row.h, "ratio": row.ratio, "ci": row.ci_half_width}
            for row in ratios]
        for row in ratios:
            print(f"h={row.h:.6g}: ratio={row.ratio:.6g} (ci {row.ci_half_width:.2g})")
    out_dir = _prepare_out(args)
    _write_json(out_dir / "levy_check.json", report)
    resolved = {"command": "levy-check", "model": document.get("model"),
                "coefficients": document.get("coefficients"),
                "experiment": exp}
    _write_manifest(out_dir, "levy-check", resolved, seed, 1, started,
                    ["levy_check.json"])
    return EXIT_OK if all_finite else EXIT_ASSERTION


def _reference_at_knots(cfg, path, trajectory):
    kind = cfg.reference.kind
    if kind == "closed_form_linear":
        params = cfg.coefficients.params
        return closed_form_linear(params["alpha"], params["beta"], params["gamma"],
                                  cfg.x0[0], path, trajectory.knot_times)
    if kind == "event_driven":
        return event_driven_reference(cfg.coefficients, path, cfg.x0,
                                      trajectory.knot_times, cfg.reference_ode)
    fine = self_refined_reference(cfg.coefficients, path, cfg.x0,
                                  cfg=cfg.ode)
    stride = int(round(trajectory.h / path.h_min))
    return fine.states[::stride]


def cmd_simulate(args):
    started = time.time()
    document = load_document(args.config)
    cfg = build_experiment(document, seed_override=args.seed)
    cfg.reference.validate(cfg.coefficients)
    path = sample_path(cfg.model, cfg.horizon, cfg.level, cfg.master_seed, 0)
    h = cfg.h_ladder[0]
    trajectory = wz_knots(cfg.coefficients, path, cfg.x0, h, cfg.ode)
    reference = _reference_at_knots(cfg, path, trajectory)
    scale = np.maximum(np.abs(reference), 1.0)
    max_rel_dev = float((np.abs(trajectory.states - reference) / scale).max())

    out_dir = _prepare_out(args)
    with open(out_dir / "trajectory.csv", "w", encoding="utf-8") as handle:
        trajectory.write_csv(handle, reference=reference)
    report = {"h": trajectory.h, "knots": len(trajectory.knot_times),
              "reference": cfg.reference.kind,
              "max_relative_deviation": max_rel_dev,
              "jump_count": int(path.jump_times.size)}
    _write_json(out_dir / "report.json", report)
    print(f"simulated {report['knots']} knots at h={trajectory.h:.6g}; "
          f"max relative deviation vs {cfg.reference.kind}: {max_rel_dev:.3g}")
    resolved = resolved_document(document, cfg, "simulate")
    _write_manifest(out_dir, "simulate", resolved, cfg.master_seed, 1, started,
                    ["trajectory.csv", "report.json"])
    return EXIT_OK


def _rate_command(args, runner, command, extra_meta=None):
    started = time.time()
    document = load_document(args.config)
    cfg = build_experiment(document, seed_override=args.seed)
    curve = runner(cfg, threads=args.threads)
    out_dir = _prepare_out(args)
    with open(out_dir / "curve.csv", "w", encoding="utf-8") as handle:
        curve.write_csv(handle)

    fit_payload = {"scheme_exact": curve.meta.get("scheme_exact", False),
                   "floor_scale": curve.meta.get("floor_scale"),
                   "reference": curve.meta.get("reference"),
                   "divergence_counts": curve.meta.get("divergence_counts"),
                   "master_seed": cfg.master_seed,
                   "config": resolved_document(document, cfg, command)}
    if extra_meta:
        fit_payload.update({k: curve.meta.get(k) for k in extra_meta})
    slope = None
    if fit_payload["scheme_exact"]:
        print("errors sit at the integrator floor (scheme-exact family); "
              "no rate fitted")
    else:
        fit = fit_rate(curve, exclude_floor=100.0 * curve.meta["floor_scale"])
        fit_payload.update(fit.as_dict())
        slope = fit.slope
        print(f"fitted slope {fit.slope:.4f} (r^2 {fit.r_squared:.4f}) over "
              f"{len(fit.used_h)} points")
    _write_json(out_dir / "fit.json", fit_payload)
    resolved = fit_payload["config"]
    _write_manifest(out_dir, command, resolved, cfg.master_seed, args.threads,
                    started, ["curve.csv", "fit.json"])
    if args.assert_slope is not None:
        lo, hi = _parse_band(args.assert_slope)
        if slope is None or not lo <= slope <= hi:
            observed = "none" if slope is None else f"{slope:.4f}"
            print(f"slope assertion failed: {observed} outside [{lo}, {hi}]",
                  file=sys.stderr)
            return EXIT_ASSERTION
    return EXIT_OK


def cmd_converge(args):
    return _rate_command(args, strong_error, "converge")


def cmd_uniform(args):
    return _rate_command(args, uniform_error, "uniform",
                         extra_meta=("target_rate", "lattice_points",
                                     "lattice_spacing", "ball_radius",
                                     "exp_moment_at_2dK"))


def build_parser():
    parser = argparse.ArgumentParser(
        prog="marcuswz",
        description="Wong-Zakai simulation of Levy-driven Marcus SDEs")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, func, help_text in (
            ("levy-check", cmd_levy_check,
             "check exponential moments and the small-time moment ratios"),
            ("simulate", cmd_simulate,
             "run one path of the scheme and write the trajectory"),
            ("converge", cmd_converge,
             "strong-error ladder with a log-log rate fit"),
            ("uniform", cmd_uniform,
             "locally uniform error over a lattice of initial points")):
        cmd = sub.add_parser(name, help=help_text)
        cmd.add_argument("--config", required=True, help="YAML config file")
        cmd.add_argument("--seed", type=int, default=None,
                         help="override experiment.master_seed")
        cmd.add_argument("--threads", type=int, default=1,
                         help="worker threads for path blocks (results are "
                              "identical for any value)")
        cmd.add_argument("--out", default="out", help="output directory")
        if name in ("converge", "uniform"):
            cmd.add_argument("--assert-slope", default=None, metavar="LO,HI",
                             help="exit 3 unless the fitted slope lies in "
                                  "[LO, HI]")
        cmd.set_defaults(func=func)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DivergenceAbortError as exc:
        print(f"divergence abort: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except (SchemeDivergenceError,) as exc:
        print(f"divergence: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE


if __name__ == "__main__":
    sys.exit(main())
