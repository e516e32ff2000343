"""Command-line front end.

    nrnsaf design --n 8 --len 64 --out bank.csv
    nrnsaf simulate config.json --out results/
    nrnsaf predict  config.json --out results/
    nrnsaf compare  config.json --out results/
    nrnsaf sweep    config.json --mu 0.1,0.2,0.3 --out results/
    nrnsaf reproduce fig7 --out results/

Exit codes: 0 ok, 2 configuration error, 3 numeric/instability error.
Failures print one JSON line starting with ``error:`` on stderr.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import asdict
from pathlib import Path

import jsonschema
import numpy as np

from . import harness, theory
from .adaptive import AlgoConfig, AlgoConfigError
from .filterbank import FilterBankConfigError, design_cmfb, to_csv_rows
from .moments import MomentCache
from .signals import FIG2_WO, InputModel

log = logging.getLogger("nrnsaf")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3

CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["M", "N", "P", "alpha", "mu", "epsilon", "snr_db", "input",
                 "trials", "iters", "seed", "wo"],
    "properties": {
        "M": {"type": "integer", "minimum": 1},
        "N": {"type": "integer", "minimum": 1},
        "L": {"type": "integer", "minimum": 1},
        "P": {"type": "integer", "minimum": 1},
        "alpha": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
        "mu": {"type": "number", "minimum": 0},
        "epsilon": {"type": "number", "minimum": 0},
        "snr_db": {"type": "number"},
        "input": {
            "type": "object",
            "additionalProperties": False,
            "required": ["kind"],
            "properties": {
                "kind": {"enum": ["gaussian", "uniform", "sign"]},
                "pole": {"type": "number", "exclusiveMinimum": -1, "exclusiveMaximum": 1},
            },
        },
        "trials": {"type": "integer", "minimum": 1},
        "iters": {"type": "integer", "minimum": 1},
        "seed": {"type": "integer"},
        "wo": {
            "type": "object",
            "additionalProperties": False,
            "required": ["kind"],
            "properties": {
                "kind": {"enum": ["random", "explicit", "fig2"]},
                "values": {"type": "array", "items": {"type": "number"}},
            },
        },
        "moment_samples": {"type": "integer", "minimum": 100},
        "steady_state_window": {"type": "integer", "minimum": 1},
        "burn_in": {"type": "integer", "minimum": 0},
        "noise_term": {"enum": ["full", "diagonal"]},
        "prefill": {"enum": ["signal", "zeros"]},
        "record_weights": {"type": "boolean"},
        "label": {"type": "string"},
    },
}


class ConfigError(Exception):
    def __init__(self, message: str, fields: list[dict] | None = None):
        super().__init__(message)
        self.fields = fields or []


def validate_config(raw: dict) -> None:
    validator = jsonschema.Draft7Validator(CONFIG_SCHEMA)
    errors = sorted(validator.iter_errors(raw), key=lambda e: list(e.absolute_path))
    if errors:
        fields = []
        for e in errors:
            path = [str(p) for p in e.absolute_path]
            if e.validator == "required":
                # the missing key is only named inside the message
                path.append(e.message.split("'")[1])
            fields.append({"field": "/".join(path) or "<root>", "message": e.message})
        raise ConfigError(f"{len(fields)} configuration error(s)", fields)
    if raw["wo"]["kind"] == "explicit":
        values = raw["wo"].get("values")
        if values is None or len(values) != raw["M"]:
            raise ConfigError("bad unknown system", [
                {"field": "wo/values", "message": f"explicit w_o needs exactly M={raw['M']} values"}])


def scenario_from_dict(raw: dict, seed_override: int | None = None,
                       noise_term: str | None = None) -> harness.ScenarioConfig:
    validate_config(raw)
    M, N = raw["M"], raw["N"]
    L = raw.get("L", 8 * N)
    try:
        algo = AlgoConfig(filter_len=M, n_subbands=N, reuse_depth=raw["P"], alpha=raw["alpha"],
                          step_size=raw["mu"], regularizer=raw["epsilon"])
    except AlgoConfigError as exc:
        raise ConfigError(str(exc)) from exc
    kind = raw["wo"]["kind"]
    if kind == "fig2":
        if M != FIG2_WO.size:
            raise ConfigError("bad unknown system", [
                {"field": "wo/kind", "message": f"fig2 preset needs M={FIG2_WO.size}"}])
        wo = harness.SystemSpec("explicit", tuple(FIG2_WO))
    elif kind == "explicit":
        wo = harness.SystemSpec("explicit", tuple(raw["wo"]["values"]))
    else:
        wo = harness.SystemSpec("random")
    inp = raw["input"]
    kw = dict(
        algo=algo,
        input=InputModel(inp["kind"], inp.get("pole", 0.9)),
        snr_db=raw["snr_db"],
        trials=raw["trials"],
        n_iters=raw["iters"],
        seed=raw["seed"] if seed_override is None else seed_override,
        wo=wo,
        bank_len=L,
        steady_state_window=min(raw.get("steady_state_window", harness.STEADY_WINDOW), raw["iters"]),
    )
    for key in ("moment_samples", "burn_in", "noise_term", "prefill", "record_weights", "label"):
        if key in raw:
            kw[key] = raw[key]
    if noise_term is not None:
        kw["noise_term"] = noise_term
    try:
        return harness.ScenarioConfig(**kw)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def scenario_to_dict(sc: harness.ScenarioConfig) -> dict:
    d = asdict(sc)
    d["input"] = asdict(sc.input)
    return d


# --------------------------------------------------------------------------

def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_manifest(out: Path, command: str, payload: dict) -> None:
    manifest = {"command": command, **payload}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True, default=_jsonable) + "\n")


def _jsonable(x):
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    raise TypeError(f"not JSON serialisable: {type(x)}")


def _cache(args, out: Path) -> MomentCache:
    if args.no_cache:
        return MomentCache(None)
    return MomentCache(Path(args.cache_dir) if args.cache_dir else out / ".moment_cache")


def _load_scenario(args) -> harness.ScenarioConfig:
    try:
        raw = json.loads(Path(args.config).read_text())
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {args.config}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    return scenario_from_dict(raw, args.seed, args.noise_term)


def _g(x: float) -> str:
    return f"{x:.9g}"


def cmd_design(args) -> int:
    fb = design_cmfb(args.n, args.len)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["subband_index", "tap_index", "value"])
        for i, l, v in to_csv_rows(fb):
            w.writerow([i, l, _g(v)])
    print(f"wrote {out} ({fb.n_subbands * fb.filter_len} rows)")
    return EXIT_OK


def cmd_simulate(args) -> int:
    sc = _load_scenario(args)
    out = _out_dir(args)
    setup = harness.prepare(sc, _cache(args, out))
    trials = harness.run_simulation(sc.with_(record_weights=True), setup)
    msd_db = harness.db(trials.msd())
    with open(out / "msd_sim.csv", "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["k", "msd_sim_db"])
        for k, v in enumerate(msd_db):
            w.writerow([k, _g(v)])
    # Weight trajectory of the first trial.
    with open(out / "trajectory.csv", "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        M = sc.algo.filter_len
        w.writerow(["k"] + [f"coef_{i}" for i in range(M)] + ["sq_deviation"])
        for k in range(sc.n_iters):
            w.writerow([k] + [_g(c) for c in trials.weights[0, k]] + [_g(trials.sq_deviation[0, k])])
    _write_manifest(out, "simulate", {"config": scenario_to_dict(sc),
                                      "sigma_eta_sq": setup.sigma_eta_sq,
                                      "diverged_trials": int(trials.diverged.sum())})
    return EXIT_OK


def _stability(setup: harness.Setup, sc: harness.ScenarioConfig) -> theory.StabilityReport:
    report = theory.stability_report(setup.moments, sc.algo)
    return report


def cmd_predict(args) -> int:
    sc = _load_scenario(args)
    out = _out_dir(args)
    setup = harness.prepare(sc, _cache(args, out))
    report = _stability(setup, sc)
    (out / "stability.json").write_text(json.dumps(report.to_dict(), indent=2) + "\n")
    if sc.algo.step_size > 0 and not report.rho_f < 1.0:
        raise theory.InstabilityError(
            f"rho(F) = {report.rho_f:.6g} >= 1 at mu = {sc.algo.step_size:g}: not mean-square stable")
    model = theory.build_f(setup.moments, sc.algo, setup.sigma_eta_sq, setup.w_o)
    series = theory.msd_transient(model, sc.n_iters)
    with open(out / "msd_theory.csv", "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["k", "msd_db"])
        for k, v in enumerate(series.msd_db):
            w.writerow([k, _g(v)])
    payload = {"config": scenario_to_dict(sc), "sigma_eta_sq": setup.sigma_eta_sq,
               "stability": report.to_dict()}
    if sc.algo.step_size > 0:
        payload["steady_state_msd_db"] = float(harness.db(theory.msd_steady_state(model)))
    _write_manifest(out, "predict", payload)
    return EXIT_OK


def cmd_compare(args) -> int:
    sc = _load_scenario(args)
    out = _out_dir(args)
    res = harness.run_scenario(sc, _cache(args, out))
    harness.write_msd_csv(out / "msd.csv", res)
    if res.mean_weights_sim is not None:
        harness.write_weights_csv(out / "weights.csv", res)
    _write_manifest(out, "compare", {"config": scenario_to_dict(sc), "summary": res.summary()})
    return EXIT_OK


def cmd_sweep(args) -> int:
    sc = _load_scenario(args)
    out = _out_dir(args)
    try:
        mus = [float(m) for m in args.mu.split(",") if m.strip()]
    except ValueError as exc:
        raise ConfigError("bad --mu list", [{"field": "--mu", "message": str(exc)}]) from exc
    points = harness.steady_state_sweep(sc, mus, _cache(args, out))
    harness.write_sweep_csv(out / "sweep.csv", points)
    _write_manifest(out, "sweep", {"config": scenario_to_dict(sc), "mu": mus,
                                   "rho_f": [p.rho_f for p in points]})
    return EXIT_OK


def cmd_reproduce(args) -> int:
    if args.figure not in harness.FIGURES:
        raise ConfigError(f"unknown figure id {args.figure!r}", [
            {"field": "figure", "message": f"expected one of {', '.join(harness.FIGURES)}"}])
    out = _out_dir(args)
    cache_root = None if args.no_cache else (args.cache_dir or str(out / ".moment_cache"))
    results, paths = harness.reproduce(args.figure, out, cache_root)
    scenarios = harness.preset(args.figure)
    payload = {"figure": args.figure, "scenarios": [scenario_to_dict(s) for s in scenarios],
               "files": [p.name for p in paths]}
    if args.figure != "fig7":
        payload["summaries"] = [r.summary() for r in results]
    _write_manifest(out, "reproduce", payload)
    for p in paths:
        print(p)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nrnsaf", description=__doc__.split("\n\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("design", help="design a cosine-modulated filter bank")
    p.add_argument("--n", type=int, required=True, help="number of subbands")
    p.add_argument("--len", type=int, required=True, help="filter length")
    p.add_argument("--out", default="filterbank.csv")
    p.set_defaults(func=cmd_design)

    def scenario_parser(name, func, help_):
        p = sub.add_parser(name, help=help_)
        p.add_argument("config", help="scenario JSON file")
        p.add_argument("--out", default="results")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--noise-term", choices=["full", "diagonal"], default=None)
        p.add_argument("--no-cache", action="store_true", help="do not cache moment estimates")
        p.add_argument("--cache-dir", default=None)
        p.set_defaults(func=func)
        return p

    scenario_parser("simulate", cmd_simulate, "ensemble simulation only")
    scenario_parser("predict", cmd_predict, "theory only")
    scenario_parser("compare", cmd_compare, "simulation against theory")
    p = scenario_parser("sweep", cmd_sweep, "steady-state MSD versus step size")
    p.add_argument("--mu", required=True, help="comma-separated step sizes")

    p = sub.add_parser("reproduce", help="run a figure preset")
    p.add_argument("figure", help=", ".join(harness.FIGURES))
    p.add_argument("--out", default="results")
    p.add_argument("--no-cache", action="store_true")
    p.add_argument("--cache-dir", default=None)
    p.set_defaults(func=cmd_reproduce)
    return parser


def _fail(kind: str, message: str, code: int, fields=None) -> int:
    payload = {"kind": kind, "message": message}
    if fields:
        payload["fields"] = fields
    print("error: " + json.dumps(payload), file=sys.stderr)
    return code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        return _fail("config", str(exc), EXIT_CONFIG, exc.fields)
    except (FilterBankConfigError, AlgoConfigError) as exc:
        return _fail("config", str(exc), EXIT_CONFIG)
    except (theory.InstabilityError, FloatingPointError, ArithmeticError) as exc:
        return _fail("instability", str(exc), EXIT_NUMERIC)


if __name__ == "__main__":
    sys.exit(main())
