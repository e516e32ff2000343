"""Ensemble simulation versus theory, and the figure presets."""

from __future__ import annotations

import csv
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Iterable, Literal, Sequence

import numpy as np

from . import theory
from .adaptive import AlgoConfig, TrialSet, simulate
from .filterbank import FilterBank, design_cmfb
from .moments import DEFAULT_SAMPLES, MomentCache, MomentSet, NoiseTerm
from .signals import (FIG2_WO, InputModel, RngStream, clean_output_power,
                      gen_unknown_system, noise_variance_for_snr)

log = logging.getLogger(__name__)

BURN_IN = 50
STEADY_WINDOW = 200
WORKERS_ENV = "NRNSAF_WORKERS"


def db(x):
    with np.errstate(divide="ignore"):
        return 10.0 * np.log10(x)


@dataclass(frozen=True)
class SystemSpec:
    kind: Literal["random", "explicit"] = "random"
    values: tuple[float, ...] | None = None


@dataclass(frozen=True)
class ScenarioConfig:
    algo: AlgoConfig = field(default_factory=AlgoConfig)
    input: InputModel = field(default_factory=InputModel)
    snr_db: float = 10.0
    trials: int = 200
    n_iters: int = 2000
    seed: int = 2019
    wo: SystemSpec = field(default_factory=SystemSpec)
    bank_len: int = 64  # analysis filter length L
    moment_samples: int = DEFAULT_SAMPLES
    steady_state_window: int = STEADY_WINDOW
    burn_in: int = BURN_IN
    noise_term: NoiseTerm = "full"
    # "signal" fills the delay lines with input before k = 0; "zeros" leaves them empty.
    prefill: Literal["signal", "zeros"] = "signal"
    record_weights: bool = False
    label: str = ""

    def __post_init__(self):
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if self.n_iters < 1:
            raise ValueError("n_iters must be >= 1")
        if not 1 <= self.steady_state_window <= self.n_iters:
            raise ValueError("steady_state_window must lie in [1, n_iters]")
        if self.prefill not in ("signal", "zeros"):
            raise ValueError(f"unknown prefill {self.prefill!r}")

    def with_(self, **kw) -> "ScenarioConfig":
        algo_kw = {k: kw.pop(k) for k in list(kw) if k in AlgoConfig.__dataclass_fields__}
        sc = replace(self, **kw)
        if algo_kw:
            sc = replace(sc, algo=replace(sc.algo, **algo_kw))
        return sc

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class Setup:
    """Everything derived from a scenario before simulating."""

    fb: FilterBank
    w_o: np.ndarray
    sigma_eta_sq: float
    moments: MomentSet


def _filter_bank(n: int, L: int) -> FilterBank:
    return design_cmfb(n, L)


def prepare(sc: ScenarioConfig, cache: MomentCache | None = None) -> Setup:
    M, N = sc.algo.filter_len, sc.algo.n_subbands
    fb = _filter_bank(N, sc.bank_len)
    rng = RngStream(sc.seed)
    if sc.wo.kind == "explicit":
        w_o = gen_unknown_system(M, values=sc.wo.values).coefficients
    else:
        w_o = gen_unknown_system(M, rng).coefficients
    if np.isinf(sc.snr_db):
        sigma_eta_sq = 0.0
    else:
        sigma_eta_sq = noise_variance_for_snr(clean_output_power(sc.input, w_o, rng), sc.snr_db)
    cache = cache or MomentCache(None)
    ms = cache.get(fb, sc.input, sc.algo.regularizer, M, sc.moment_samples, sc.seed, sc.noise_term)
    return Setup(fb, w_o, sigma_eta_sq, ms)


@dataclass
class ComparisonResult:
    config: ScenarioConfig
    msd_sim: np.ndarray
    msd_theory: np.ndarray
    steady_sim: float
    steady_theory: float
    rho_f: float
    sigma_eta_sq: float
    w_o: np.ndarray
    mean_weights_sim: np.ndarray | None = None
    mean_weights_theory: np.ndarray | None = None
    mean_final_weights: np.ndarray | None = None  # ensemble mean of w(n_iters)
    diverged_trials: int = 0
    theory_diverged: bool = False

    @property
    def msd_sim_db(self) -> np.ndarray:
        return db(self.msd_sim)

    @property
    def msd_theory_db(self) -> np.ndarray:
        return db(self.msd_theory)

    @property
    def steady_sim_db(self) -> float:
        return float(db(self.steady_sim))

    @property
    def steady_theory_db(self) -> float:
        return float(db(self.steady_theory))

    def gap_db(self, burn_in: int | None = None) -> float:
        """Largest |sim - theory| in dB over k >= burn_in."""
        b = self.config.burn_in if burn_in is None else burn_in
        d = np.abs(self.msd_sim_db[b:] - self.msd_theory_db[b:])
        return float(np.max(d)) if d.size else 0.0

    @property
    def window_theory_db(self) -> float:
        """Theory MSD averaged over the same final window as the simulation."""
        w = self.config.steady_state_window
        return float(db(self.msd_theory[-w:].mean()))

    def iterations_to(self, level_db: float, which: str = "sim") -> int | None:
        series = self.msd_sim_db if which == "sim" else self.msd_theory_db
        hits = np.nonzero(series <= level_db)[0]
        return int(hits[0]) if hits.size else None

    def summary(self) -> dict:
        return {
            "label": self.config.label,
            "max_abs_gap_db": self.gap_db(),
            "steady_sim_db": self.steady_sim_db,
            "steady_theory_db": self.steady_theory_db,
            "window_theory_db": self.window_theory_db,
            "rho_f": self.rho_f,
            "sigma_eta_sq": self.sigma_eta_sq,
            "diverged_trials": self.diverged_trials,
        }


def run_simulation(sc: ScenarioConfig, setup: Setup,
                   trial_ids: Sequence[int] | None = None) -> TrialSet:
    ids = range(sc.trials) if trial_ids is None else trial_ids
    return simulate(
        sc.algo, setup.fb, setup.w_o, sc.input, np.sqrt(setup.sigma_eta_sq),
        RngStream(sc.seed), sc.n_iters, trial_ids=ids,
        record_weights=sc.record_weights, warm_start=sc.prefill == "signal",
    )


def run_theory(sc: ScenarioConfig, setup: Setup):
    model = theory.build_f(setup.moments, sc.algo, setup.sigma_eta_sq, setup.w_o)
    series = theory.msd_transient(model, sc.n_iters)
    msd = series.msd
    if series.diverged:
        msd = np.concatenate([msd, np.full(sc.n_iters - msd.size, np.inf)])
    rho_f = theory.mean_square_rho(model)
    if rho_f < 1.0 and sc.algo.step_size > 0:
        steady = theory.msd_steady_state(model)
    else:
        steady = float("inf") if sc.algo.step_size > 0 else float(msd[-1])
    mean_w = None
    if sc.record_weights:
        mean_w = theory.mean_trajectory(setup.moments, sc.algo, setup.w_o, sc.n_iters)
    return msd, steady, rho_f, mean_w, series.diverged


def run_scenario(sc: ScenarioConfig, cache: MomentCache | None = None,
                 trial_ids: Sequence[int] | None = None) -> ComparisonResult:
    setup = prepare(sc, cache)
    trials = run_simulation(sc, setup, trial_ids)
    msd_sim = trials.msd()
    th_msd, steady_th, rho_f, mean_w_th, th_div = run_theory(sc, setup)
    w = sc.steady_state_window
    # Linear-scale average over trials and the window, then dB.
    steady_sim = float(msd_sim[-w:].mean())
    n_div = int(trials.diverged.sum())
    if n_div:
        log.warning("%s: %d of %d trials diverged", sc.label, n_div, sc.trials)
    return ComparisonResult(
        config=sc, msd_sim=msd_sim, msd_theory=th_msd, steady_sim=steady_sim,
        steady_theory=steady_th, rho_f=rho_f, sigma_eta_sq=setup.sigma_eta_sq,
        w_o=setup.w_o,
        mean_weights_sim=trials.mean_weights() if sc.record_weights else None,
        mean_weights_theory=mean_w_th, mean_final_weights=trials.final_weights.mean(axis=0),
        diverged_trials=n_div, theory_diverged=th_div,
    )


@dataclass
class SweepPoint:
    mu: float
    steady_sim: float
    steady_theory: float
    rho_f: float
    divergent: bool = False

    @property
    def steady_sim_db(self) -> float:
        return float(db(self.steady_sim))

    @property
    def steady_theory_db(self) -> float:
        return float(db(self.steady_theory))


def steady_state_sweep(base: ScenarioConfig, mu_values: Iterable[float],
                       cache: MomentCache | None = None) -> list[SweepPoint]:
    """Simulated and predicted steady-state MSD for each step size."""
    cache = cache or MomentCache(None)
    setup = prepare(base, cache)  # moments do not depend on mu
    points = []
    for mu in mu_values:
        sc = base.with_(step_size=float(mu), record_weights=False)
        trials = run_simulation(sc, setup)
        msd = trials.msd()
        sim = float(msd[-sc.steady_state_window:].mean())
        model = theory.build_f(setup.moments, sc.algo, setup.sigma_eta_sq, setup.w_o)
        if mu == 0:
            points.append(SweepPoint(0.0, sim, float(np.sum(setup.w_o**2)), 1.0))
            continue
        rho = theory.mean_square_rho(model)
        if rho < 1.0:
            points.append(SweepPoint(float(mu), sim, theory.msd_steady_state(model), rho))
        else:
            log.warning("mu=%g: rho(F)=%.4f >= 1, marked divergent", mu, rho)
            points.append(SweepPoint(float(mu), sim, float("inf"), rho, divergent=True))
    return points


# --------------------------------------------------------------------------
# figure presets

BASE = ScenarioConfig()
FIGURES = ("fig2", "fig3", "fig4a", "fig4b", "fig5a", "fig5b", "fig6a", "fig6b", "fig7")
FIG3_ALPHAS = (0.25, 0.5, 1.0)
FIG56_MUS = (0.1, 0.4, 0.5)
FIG7_MUS = tuple(np.round(np.arange(1, 11) * 0.1, 10))
FIG7_ITERS = 4000


def preset(figure_id: str) -> list[ScenarioConfig]:
    """Scenario list for one figure (the fig7 list holds just the sweep base)."""
    if figure_id == "fig2":
        return [
            BASE.with_(alpha=a, wo=SystemSpec("explicit", tuple(FIG2_WO)),
                       record_weights=True, label=f"alpha={a:g}")
            for a in (0.5, 1.0)
        ]
    if figure_id == "fig3":
        return [BASE.with_(alpha=a, label=f"alpha={a:g}") for a in FIG3_ALPHAS]
    if figure_id in ("fig4a", "fig4b"):
        snr, iters = (10.0, 2000) if figure_id == "fig4a" else (40.0, 20_000)
        return [
            BASE.with_(reuse_depth=p, snr_db=snr, n_iters=iters,
                       label="NSAF (P=1)" if p == 1 else f"P={p}")
            for p in (1, 2, 3, 4)
        ]
    if figure_id in ("fig5a", "fig5b", "fig6a", "fig6b"):
        src = "gaussian" if figure_id.endswith("a") else "uniform"
        n, L = (8, 64) if figure_id.startswith("fig5") else (4, 32)
        return [
            BASE.with_(step_size=mu, n_subbands=n, bank_len=L,
                       input=InputModel(src, 0.9), label=f"mu={mu:g}")
            for mu in FIG56_MUS
        ]
    if figure_id == "fig7":
        return [BASE.with_(regularizer=0.0, alpha=1.0, n_iters=FIG7_ITERS, label="sweep")]
    raise ValueError(f"unknown figure id {figure_id!r}; expected one of {', '.join(FIGURES)}")


def workers() -> int:
    try:
        return max(1, int(os.environ.get(WORKERS_ENV, "1")))
    except ValueError:
        return 1


def _map(fn: Callable, items: list, cache_root) -> list:
    n = workers()
    args = [(item, cache_root) for item in items]
    if n == 1 or len(items) == 1:
        return [fn(*a) for a in args]
    with ProcessPoolExecutor(n) as pool:
        return list(pool.map(fn, *zip(*args)))


def _run_one(sc: ScenarioConfig, cache_root) -> ComparisonResult:
    return run_scenario(sc, MomentCache(cache_root))


def run_many(scenarios: list[ScenarioConfig], cache_root=None) -> list[ComparisonResult]:
    return _map(_run_one, scenarios, cache_root)


# --------------------------------------------------------------------------
# CSV output

def _g(x: float) -> str:
    return f"{x:.9g}"


def write_msd_csv(path: Path, result: ComparisonResult) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["k", "msd_sim_db", "msd_theory_db"])
        for k, (s, t) in enumerate(zip(result.msd_sim_db, result.msd_theory_db)):
            w.writerow([k, _g(s), _g(t)])


def write_weights_csv(path: Path, result: ComparisonResult) -> None:
    sim, th = result.mean_weights_sim, result.mean_weights_theory
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["k", "coef_index", "sim_mean", "theory_mean"])
        for k in range(sim.shape[0]):
            for i in range(sim.shape[1]):
                w.writerow([k, i, _g(sim[k, i]), _g(th[k, i])])


def write_sweep_csv(path: Path, points: list[SweepPoint]) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["mu", "steady_sim_db", "steady_theory_db"])
        for p in points:
            w.writerow([_g(p.mu), _g(p.steady_sim_db), _g(p.steady_theory_db)])


def _slug(label: str) -> str:
    return "".join(c if c.isalnum() or c in "=." else "_" for c in label).strip("_")


def reproduce(figure_id: str, out_dir: str | Path, cache_root=None):
    """Run one figure preset and write its CSVs into ``out_dir``.

    Returns ``(results, written_paths)``; for fig7 ``results`` is the list of
    sweep points.
    """
    scenarios = preset(figure_id)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    if figure_id == "fig7":
        points = steady_state_sweep(scenarios[0], FIG7_MUS, MomentCache(cache_root))
        path = out / "fig7_sweep.csv"
        write_sweep_csv(path, points)
        return points, [path]
    results = run_many(scenarios, cache_root)
    for res in results:
        stem = f"{figure_id}_{_slug(res.config.label)}"
        if figure_id == "fig2":
            path = out / f"{stem}_weights.csv"
            write_weights_csv(path, res)
        else:
            path = out / f"{stem}_msd.csv"
            write_msd_csv(path, res)
        paths.append(path)
    return results, paths
