"""Closed-form check of the steady-state MSD in the scalar sign-input case.

With M = N = P = 1, eps = 0 and a +-1 input every moment equals one, so the
steady-state MSD must be mu sigma^2 / (2 - mu).  Prints theory, closed
form and a simulated estimate for a few step sizes.
"""

from __future__ import annotations

from dataclasses import dataclass

from nrnsaf import harness, theory
from nrnsaf.adaptive import AlgoConfig
from nrnsaf.signals import InputModel


@dataclass
class ScalarConfig:
    mus: tuple[float, ...] = (0.25, 0.5, 1.0, 1.5)
    snr_db: float = 10.0
    trials: int = 400
    n_iters: int = 3000


def main(cfg: ScalarConfig) -> None:
    base = harness.ScenarioConfig(
        algo=AlgoConfig(filter_len=1, n_subbands=1, reuse_depth=1, regularizer=0.0),
        input=InputModel("sign", 0.0), bank_len=2, snr_db=cfg.snr_db, trials=cfg.trials,
        n_iters=cfg.n_iters, steady_state_window=cfg.n_iters // 3, moment_samples=1000,
        wo=harness.SystemSpec("explicit", (1.0,)),
    )
    setup = harness.prepare(base)
    s2 = setup.sigma_eta_sq
    print("mu,closed_form,theory,simulated")
    for mu, pt in zip(cfg.mus, harness.steady_state_sweep(base, cfg.mus)):
        model = theory.build_f(setup.moments, base.algo.with_(step_size=mu), s2, setup.w_o)
        print(f"{mu:g},{mu * s2 / (2 - mu):.9g},{theory.msd_steady_state(model):.9g},{pt.steady_sim:.9g}")


if __name__ == "__main__":
    main(ScalarConfig())
