"""Command-line interface.

Every run reads one JSON config (defaults if omitted), applies --seed and
--set overrides, and writes artifacts plus a manifest.json into --out.
Artifacts are byte-identical for identical effective configs; wall-clock
information lives only in the manifest.  Exit codes: 0 success, 1 runtime
failure, 2 usage or config error; failures emit one JSON object on stderr.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
import platform
from dataclasses import replace
from datetime import datetime, timezone
from importlib.metadata import PackageNotFoundError, version
from pathlib import Path

import numpy as np

from .analysis import Measurement, entanglement_report, reduced_density_matrix
from .config import (
    AppConfig,
    apply_overrides,
    calibrated_config,
    config_digest,
    default_config,
    emit_config,
    parse_config,
)
from .engine import (
    build_states,
    counts_to_probs,
    rates_report,
    repeater_distribution_time,
    repeater_expected_time,
    run_trials,
)
from .errors import ConfigError, UndefinedMetric
from .interferometer import default_phase_grid, fit_visibility, measure_pij
from .memory import PulseEnvelope, efficiency_vs_od
from .reference import reference_table
from .source import herald_field2, hbt_suppression

REPRODUCE_COMMANDS = ("reproduce-table1", "reproduce-fig2c", "reproduce-fig3")


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def build_parser() -> _Parser:
    common = _Parser(add_help=False)
    common.add_argument("--config", metavar="PATH",
                        help="JSON config file (partial; defaults fill in)")
    common.add_argument("--seed", type=int, default=None,
                        help="override experiment.seed")
    common.add_argument("--workers", type=int, default=1,
                        help="sampling worker threads (results unchanged)")
    common.add_argument("--out", metavar="DIR", default=".",
                        help="artifact output directory")
    common.add_argument("--set", metavar="KEY=VALUE", action="append",
                        default=[], dest="overrides",
                        help="config override, e.g. --set memory.od=300")
    parser = _Parser(prog="entstore",
                     description="heralded-photon storage simulator")
    sub = parser.add_subparsers(dest="command", required=True,
                                parser_class=_Parser)
    sub.add_parser("efficiency-curve", parents=[common],
                   help="storage efficiency versus optical depth")
    sub.add_parser("hbt", parents=[common],
                   help="heralded beamsplitter correlation run")
    fr = sub.add_parser("fringes", parents=[common],
                        help="interference fringe scan")
    fr.add_argument("--chain", choices=("in", "out"), default="out")
    sub.add_parser("tomography", parents=[common],
                   help="full in/out pattern and visibility analysis")
    sub.add_parser("rates", parents=[common],
                   help="trial, herald, and detection rate report")
    sub.add_parser("repeater", parents=[common],
                   help="repeater chain distribution-time model")
    sub.add_parser("reproduce-table1", parents=[common],
                   help="analysis of the bundled reference tables")
    sub.add_parser("reproduce-fig2c", parents=[common],
                   help="efficiency-versus-depth reference curve")
    sub.add_parser("reproduce-fig3", parents=[common],
                   help="reference fringe scans and density matrices")
    return parser


def _versions() -> dict:
    out = {"python": platform.python_version()}
    for pkg in ("entstore", "numpy", "scipy", "numba"):
        try:
            out[pkg] = version(pkg)
        except PackageNotFoundError:
            out[pkg] = "unknown"
    return out


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def _write_json(path: Path, payload: dict) -> None:
    text = json.dumps(_jsonable(payload), indent=2, sort_keys=True)
    path.write_text(text + "\n")


def _write_csv(path: Path, digest: str, columns: list[str],
               rows: list[tuple]) -> None:
    lines = [f"# config_digest={digest}", ",".join(columns)]
    for row in rows:
        lines.append(",".join(repr(float(v)) if isinstance(v, float)
                              else str(v) for v in row))
    path.write_text("\n".join(lines) + "\n")


def _fringe_payload(app: AppConfig, digest: str, chain: str,
                    workers: int) -> dict:
    grid = default_phase_grid(app.simulation.phase_points)
    table = run_trials(app.experiment, app.simulation.fringe_trials,
                       mode="fringe", chain=chain, phase_grid=grid,
                       workers=workers)
    fit = fit_visibility(table.fringe)
    return {
        "config_digest": digest,
        "chain": chain,
        "n_trials": table.n_trials,
        "n_heralds": table.n_heralds,
        "trials_per_point": table.fringe.trials_per_point,
        "phases": list(table.fringe.phases),
        "counts_d1": list(table.fringe.counts_d1),
        "counts_d2": list(table.fringe.counts_d2),
        "counts_coinc": list(table.fringe.counts_coinc),
        "fit": {"V": fit.V, "sigma_V": fit.sigma_V,
                "phase_offset": fit.phase_offset,
                "mean_level": fit.mean_level,
                "residual_rms": fit.residual_rms},
    }


def _efficiency_rows(app: AppConfig) -> list[tuple]:
    points = efficiency_vs_od(list(app.simulation.od_grid),
                              app.experiment.memory, PulseEnvelope.gaussian())
    return [(od, res.efficiency, res.leakage_fraction)
            for od, res in points]


def cmd_efficiency_curve(args, app, digest, outdir) -> list[Path]:
    path = outdir / "efficiency_curve.csv"
    _write_csv(path, digest, ["od", "efficiency", "leakage_fraction"],
               _efficiency_rows(app))
    return [path]


def cmd_hbt(args, app, digest, outdir) -> list[Path]:
    exp = app.experiment
    table = run_trials(exp, app.simulation.n_trials, mode="hbt",
                       workers=args.workers)
    d2 = table.n_singles_d2
    d3 = table.n_singles_d3
    w_measured = (table.n11 * table.n_heralds / (d2 * d3)
                  if d2 > 0 and d3 > 0 else None)
    det = exp.detector()
    photon = herald_field2(exp.source)
    payload = {
        "config_digest": digest,
        "counts": table.to_dict(),
        "w_measured": w_measured,
        "w_analytic": hbt_suppression(photon, det2=det, det3=det),
        "herald_probability": photon.p1,
    }
    path = outdir / "hbt.json"
    _write_json(path, payload)
    return [path]


def cmd_fringes(args, app, digest, outdir) -> list[Path]:
    payload = _fringe_payload(app, digest, args.chain, args.workers)
    path = outdir / "fringes.json"
    _write_json(path, payload)
    return [path]


def cmd_tomography(args, app, digest, outdir) -> list[Path]:
    exp = app.experiment
    result = {"config_digest": digest}
    pij, sigmas, counts = {}, {}, {}
    fits = {}
    for chain in ("in", "out"):
        table = run_trials(exp, app.simulation.n_trials, mode="pij",
                           chain=chain, workers=args.workers)
        probs = counts_to_probs(table)
        pij[chain] = {k: m.value for k, m in probs.items()}
        sigmas[chain] = {k: m.sigma for k, m in probs.items()}
        counts[chain] = table.to_dict()
        fringe = _fringe_payload(app, digest, chain, args.workers)
        fits[chain] = fringe["fit"]
    v_in = Measurement(fits["in"]["V"], fits["in"]["sigma_V"])
    v_out = Measurement(fits["out"]["V"], fits["out"]["sigma_V"])
    try:
        report = entanglement_report(pij["in"], pij["out"], v_in, v_out,
                                     sigmas["in"], sigmas["out"])
    except UndefinedMetric as exc:
        # error propagation is singular when a pattern has zero counts
        report = entanglement_report(pij["in"], pij["out"],
                                     Measurement(v_in.value),
                                     Measurement(v_out.value))
        result["sigma_note"] = str(exc)
    result.update({"counts": counts, "visibility_fits": fits,
                   "report": report.to_dict()})
    path = outdir / "tomography.json"
    _write_json(path, result)
    return [path]


def cmd_rates(args, app, digest, outdir) -> list[Path]:
    exp = app.experiment
    table = run_trials(exp, app.simulation.n_trials, mode="pij",
                       workers=args.workers)
    report = rates_report(exp, table)
    payload = {
        "config_digest": digest,
        "n_trials": table.n_trials,
        "n_heralds": table.n_heralds,
        "rates": report.to_dict(),
        "herald_probability_analytic": build_states(exp).p1,
    }
    path = outdir / "rates.json"
    _write_json(path, payload)
    return [path]


def cmd_repeater(args, app, digest, outdir) -> list[Path]:
    params = app.repeater
    samples = app.simulation.repeater_samples
    seed = app.experiment.seed
    lo = replace(params, memory_efficiency=0.6)
    hi = replace(params, memory_efficiency=0.9)
    lo_t = repeater_distribution_time(lo, n_samples=samples, seed=seed)
    hi_t = repeater_distribution_time(hi, n_samples=samples, seed=seed)
    payload = {
        "config_digest": digest,
        "params": {
            "total_length_km": params.total_length_km,
            "link_count": params.link_count,
            "attenuation_length_km": params.attenuation_length_km,
            "memory_efficiency": params.memory_efficiency,
            "detector_efficiency": params.detector_efficiency,
            "attempt_period": params.attempt_period,
        },
        "expected_time_s": repeater_expected_time(params),
        "mc_mean_time_s": repeater_distribution_time(
            params, n_samples=samples, seed=seed),
        "comparison": {"time_at_0.6": lo_t, "time_at_0.9": hi_t,
                       "ratio": lo_t / hi_t},
    }
    path = outdir / "repeater.json"
    _write_json(path, payload)
    return [path]


def cmd_reproduce_table1(args, app, digest, outdir) -> list[Path]:
    payload = {"config_digest": digest}
    payload.update(reference_table())
    path = outdir / "table1.json"
    _write_json(path, payload)
    return [path]


def cmd_reproduce_fig2c(args, app, digest, outdir) -> list[Path]:
    path = outdir / "fig2c.csv"
    _write_csv(path, digest, ["od", "efficiency", "leakage_fraction"],
               _efficiency_rows(app))
    return [path]


def cmd_reproduce_fig3(args, app, digest, outdir) -> list[Path]:
    exp = app.experiment
    det = exp.detector()
    states = build_states(exp)
    payload = {"config_digest": digest, "fringes": {}, "density_matrices": {}}
    for chain, tap in (("in", states.state_in), ("out", states.state_out)):
        fringe = _fringe_payload(app, digest, chain, args.workers)
        payload["fringes"][chain] = fringe
        dm = reduced_density_matrix(measure_pij(tap, det, det),
                                    fringe["fit"]["V"])
        payload["density_matrices"][chain] = {
            "p00": dm.p00, "p01": dm.p01, "p10": dm.p10, "p11": dm.p11,
            "d": dm.d}
    path = outdir / "fig3.json"
    _write_json(path, payload)
    return [path]


COMMANDS = {
    "efficiency-curve": cmd_efficiency_curve,
    "hbt": cmd_hbt,
    "fringes": cmd_fringes,
    "tomography": cmd_tomography,
    "rates": cmd_rates,
    "repeater": cmd_repeater,
    "reproduce-table1": cmd_reproduce_table1,
    "reproduce-fig2c": cmd_reproduce_fig2c,
    "reproduce-fig3": cmd_reproduce_fig3,
}


def _fail(kind: str, message: str) -> None:
    print(json.dumps({"error": kind, "message": message}), file=sys.stderr)


def _load_effective_config(args) -> dict:
    data = (calibrated_config() if args.command in REPRODUCE_COMMANDS
            else default_config())
    if args.config:
        with open(args.config) as fh:
            user = json.load(fh)
        if not isinstance(user, dict):
            raise ConfigError("config file must hold a JSON object")
        for section, body in user.items():
            if not isinstance(body, dict):
                raise ConfigError(f"config section '{section}' must be "
                                  "an object")
            data.setdefault(section, {}).update(body)
    if args.seed is not None:
        data["experiment"]["seed"] = args.seed
    if args.overrides:
        data = apply_overrides(data, args.overrides)
    return data


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        _fail("usage", str(exc))
        return 2
    started = datetime.now(timezone.utc).isoformat()
    t0 = time.perf_counter()
    try:
        data = _load_effective_config(args)
        app = parse_config(data)
        digest = config_digest(data)
    except (ConfigError, OSError, json.JSONDecodeError) as exc:
        _fail("config", str(exc))
        return 2
    outdir = Path(args.out)
    try:
        outdir.mkdir(parents=True, exist_ok=True)
        outputs = COMMANDS[args.command](args, app, digest, outdir)
        manifest = {
            "command": args.command,
            "config_digest": digest,
            "config": emit_config(data),
            "seed": app.experiment.seed,
            "workers": args.workers,
            "versions": _versions(),
            "outputs": sorted(p.name for p in outputs),
            "started": started,
            "duration_s": time.perf_counter() - t0,
        }
        _write_json(outdir / "manifest.json", manifest)
    except Exception as exc:
        _fail(type(exc).__name__, str(exc))
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
