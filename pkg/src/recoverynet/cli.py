"""Command-line entry points.

Exit codes: 0 success, 2 invalid input or configuration, 3 a fit that did not
converge or failed its quality gate.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from . import data, engine, estimation
from .dynamics import MEAN_SOCIAL_DEGREE
from .network import build_network

log = logging.getLogger("recoverynet")

EXIT_OK, EXIT_INVALID, EXIT_CONVERGENCE = 0, 2, 3
DEFAULT_DELTA_KM = 1.0


class UsageError(ValueError):
    pass


def _load_json(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except json.JSONDecodeError as e:
        raise UsageError(f"{path}: invalid JSON ({e})") from None


def _write_json(obj, out) -> None:
    text = json.dumps(obj, indent=2, sort_keys=True) + "\n"
    if out is None or out == "-":
        sys.stdout.write(text)
    else:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text, encoding="utf-8")


def _merge(base: dict, extra: dict) -> dict:
    """Overlay ``extra`` on ``base``; per-county tables merge key by key."""
    out = dict(base)
    for k, v in extra.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict) and k != "scenario":
            out[k] = {**out[k], **v}
        else:
            out[k] = v
    return out


def _inputs(args) -> data.Inputs:
    for flag in ("homes", "pois", "physical_params"):
        if getattr(args, flag) is None:
            raise UsageError(f"--{flag.replace('_', '-')} is required")
    return data.load_inputs(args.homes, args.pois, args.physical_params)


def _scenario(value, fallback=None) -> engine.Scenario:
    if value is None:
        return fallback or engine.SCENARIOS[1]
    if value.isdigit():
        k = int(value)
        if k not in engine.SCENARIOS:
            raise UsageError(f"scenario must be 1-9 or a JSON file, got {value}")
        return engine.SCENARIOS[k]
    return engine.Scenario.from_dict(_load_json(value))


def _config(args, inputs: data.Inputs) -> tuple[engine.SimulationConfig, dict]:
    """Defaults from the inputs, overlaid by each --config file, then by flags."""
    doc = engine.SimulationConfig.default(inputs.curves).to_dict()
    extras: dict = {}
    for path in args.config or []:
        d = _load_json(path)
        if "config" in d and isinstance(d["config"], dict):
            # A previous run's summary.
            extras.setdefault("scenario", d.get("scenario"))
            d = d["config"]
        extras.update({k: d[k] for k in ("delta_km",) if k in d})
        doc = _merge(doc, d)
    for flag, key in (("seed", "seed"), ("mode", "mode"), ("days", "M"), ("workers", "workers")):
        v = getattr(args, flag, None)
        if v is not None:
            doc[key] = v
    if getattr(args, "strict_eq7", False):
        doc["strict_eq7"] = True
    if getattr(args, "freeze_probability", False):
        doc["freeze_probability"] = True
    doc.pop("delta_km", None)
    try:
        cfg = engine.SimulationConfig.from_dict(doc)
    except (KeyError, TypeError) as e:
        raise UsageError(f"incomplete configuration: {e}") from None
    cfg.check_counties(inputs.counties)
    return cfg, extras


def _delta(args, extras) -> float:
    if args.delta is not None:
        return args.delta
    return float(extras.get("delta_km", DEFAULT_DELTA_KM))


def _run_one(net, inputs, cfg, scenario, out_dir, args, delta):
    t = time.perf_counter()
    result = engine.run(net, cfg, scenario, inputs.initial)
    result.summary["config"]["delta_km"] = delta
    formats = (args.format,)
    written = data.export_results(result, out_dir, formats=formats, history=not args.no_history,
                                  compress=args.gzip)
    log.info("scenario %s: %d days in %.2fs -> %s", scenario.id, cfg.M, time.perf_counter() - t, out_dir)
    return result, written


# --- verbs ---------------------------------------------------------------------

def cmd_gen_synth(args) -> int:
    spec = data.SyntheticSpec(counties=data.default_counties(args.scale))
    inputs = data.generate_synthetic(spec, seed=args.seed or 0)
    paths = data.write_inputs(inputs, args.out)
    for k, p in paths.items():
        print(f"{k}: {p}")
    return EXIT_OK


def cmd_build_net(args) -> int:
    inputs = _inputs(args)
    net = build_network(inputs.humans, inputs.socials, inputs.physicals,
                        delta_km=args.delta if args.delta is not None else DEFAULT_DELTA_KM)
    _write_json(net.summary(), args.out)
    return EXIT_OK


def cmd_fit_curve(args) -> int:
    series = estimation.read_series_csv(args.series)
    fit = estimation.fit_generalized_logistic(series, min_rho=args.min_rho)
    _write_json({"curves": {args.county: fit.params.to_dict()},
                 "fit": {"county": args.county, "rho": fit.rho, "rmse": fit.rmse, "n": fit.n}}, args.out)
    return EXIT_OK


def cmd_fit_dyn(args) -> int:
    s = estimation.read_series_csv(args.social)
    p = estimation.read_series_csv(args.physical)
    n_bar = args.n_bar
    if n_bar is None:
        if args.county not in MEAN_SOCIAL_DEGREE:
            raise UsageError(f"--n-bar is required for county {args.county!r}")
        n_bar = MEAN_SOCIAL_DEGREE[args.county]
    fit = estimation.fit_sp_dm(s, p, n_bar, noise_sigma=args.noise_sigma, seed=args.seed or 0,
                               n_starts=args.starts, sample=args.sample)
    params = fit.params.to_dict()
    params.pop("N_bar", None)
    _write_json({"dynamics": {args.county: params},
                 "fit": {"county": args.county, "N_bar": n_bar, "log_posterior": fit.log_posterior,
                         "diagnostics": fit.diagnostics}}, args.out)
    return EXIT_OK


def cmd_simulate(args) -> int:
    inputs = _inputs(args)
    cfg, extras = _config(args, inputs)
    scenario = _scenario(args.scenario, engine.Scenario.from_dict(extras["scenario"]) if extras.get("scenario") else None)
    delta = _delta(args, extras)
    net = build_network(inputs.humans, inputs.socials, inputs.physicals, delta_km=delta)
    result, written = _run_one(net, inputs, cfg, scenario, Path(args.out), args, delta)
    means = result.summary["layer_means"]
    print(f"scenario {scenario.id} day {cfg.M}: " + ", ".join(f"{k}={v[-1]:.4f}" for k, v in means.items()))
    for k, p in written.items():
        print(f"{k}: {p}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    inputs = _inputs(args)
    cfg, extras = _config(args, inputs)
    delta = _delta(args, extras)
    net = build_network(inputs.humans, inputs.socials, inputs.physicals, delta_km=delta)
    out = Path(args.out)
    scenarios = list(engine.SCENARIOS.values())

    def one(sc):
        return _run_one(net, inputs, cfg, sc, out / f"scenario_{sc.id}", args, delta)

    jobs = max(1, args.jobs)
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(one, scenarios))
    else:
        results = [one(sc) for sc in scenarios]
    rows = []
    for result, _ in results:
        rows += list(data.comparison_rows(result, data.COMPARISON_DAYS))
    path = data.write_csv(out / "comparison.csv", ("scenario", "county", "day", "social_mean"), rows)
    for result, _ in results:
        sc = result.scenario
        print(f"scenario {sc.id} (lambda_p={sc.lambda_p:g}, lambda_s={sc.lambda_s:g}): "
              f"social day {cfg.M} = {result.summary['layer_means']['social'][-1]:.4f}")
    print(f"comparison: {path}")
    return EXIT_OK


# --- parser ----------------------------------------------------------------------

def _add_inputs(p):
    p.add_argument("--homes", help="homes CSV")
    p.add_argument("--pois", help="POIs CSV")
    p.add_argument("--physical-params", help="per-county water/sewer curve CSV")
    p.add_argument("--delta", type=float, default=None, help=f"edge distance threshold in km (default {DEFAULT_DELTA_KM})")


def _add_run(p):
    _add_inputs(p)
    p.add_argument("--config", action="append", help="config JSON (or a previous summary.json); repeatable")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.add_argument("--mode", choices=("paper", "exact"), default=None, help="daily return rule")
    p.add_argument("--strict-eq7", action="store_true", help="read every layer at the previous day")
    p.add_argument("--freeze-probability", action="store_true", help="compute return probabilities once, at day 0")
    p.add_argument("--days", type=int, default=None, help="number of daily steps (default 60)")
    p.add_argument("--workers", type=int, default=None, help="threads per layer update")
    p.add_argument("--no-history", action="store_true", help="skip the per-node history file")
    p.add_argument("--gzip", action="store_true", help="gzip the per-node history")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="recoverynet", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-synth", help="write a synthetic five-county input set")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--scale", type=float, default=1.0, help="multiply the default node counts")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_synth)

    p = sub.add_parser("build-net", help="summarize the network built from the inputs")
    _add_inputs(p)
    p.add_argument("--out", default=None, help="JSON path (default stdout)")
    p.set_defaults(func=cmd_build_net)

    p = sub.add_parser("fit-curve", help="fit a water/sewer recovery curve to a day,level series")
    p.add_argument("--series", required=True)
    p.add_argument("--county", default="county")
    p.add_argument("--min-rho", type=float, default=estimation.RHO_GATE)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_fit_curve)

    p = sub.add_parser("fit-dyn", help="fit the social recovery rate parameters")
    p.add_argument("--social", required=True, help="day,level CSV of the county's mean POI level")
    p.add_argument("--physical", required=True, help="day,level CSV of the county's water/sewer level")
    p.add_argument("--county", default="county")
    p.add_argument("--n-bar", type=float, default=None, help="mean POI degree (defaults for the five Texas counties)")
    p.add_argument("--noise-sigma", type=float, default=estimation.DEFAULT_NOISE_SIGMA)
    p.add_argument("--starts", type=int, default=16)
    p.add_argument("--sample", type=int, default=0, help="Metropolis steps for an acceptance-rate check")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_fit_dyn)

    p = sub.add_parser("simulate", help="run one scenario")
    _add_run(p)
    p.add_argument("--scenario", default=None, help="1-9 or a JSON file with lambda_p, lambda_s")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("sweep", help="run scenarios 1-9")
    _add_run(p)
    p.add_argument("--jobs", type=int, default=1, help="scenarios run concurrently")
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (estimation.ConvergenceError, estimation.DegenerateFitError, estimation.FitQualityError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONVERGENCE
    except (ValueError, KeyError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
