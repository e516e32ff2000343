"""Spectral radii of the mean (Xi) and mean-square (F) recursions versus mu.

Scans the step size well past the mean-stability bound 2/lambda_max(E{A})
for one or more reuse depths and prints a CSV to stdout.  Useful for
seeing where each recursion actually loses contraction.

    python3 scripts/stability_scan.py --p 1 3 --mu-max 4 --alpha 1
"""

from __future__ import annotations

import argparse
from dataclasses import dataclass, field

import numpy as np

from nrnsaf import harness, theory
from nrnsaf.moments import MomentCache


@dataclass
class ScanConfig:
    depths: list[int] = field(default_factory=lambda: [1, 3])
    alpha: float = 1.0
    mu_max: float = 4.0
    mu_step: float = 0.1
    cache: str | None = None


def scan(cfg: ScanConfig):
    base = harness.preset("fig3")[0].with_(alpha=cfg.alpha)
    cache = MomentCache(cfg.cache)
    ms = harness.prepare(base, cache).moments
    bound = theory.stability_bound(ms)
    rows = []
    for p in cfg.depths:
        for mu in np.arange(cfg.mu_step, cfg.mu_max + 1e-12, cfg.mu_step):
            algo = base.algo.with_(reuse_depth=p, step_size=float(mu))
            rho_xi = theory.MeanModel.build(ms, algo).spectral_radius()
            rho_f = theory.mean_square_rho(theory.build_f(ms, algo))
            rows.append((p, float(mu), float(mu) / bound, rho_xi, rho_f))
    return bound, rows


if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    ap.add_argument("--p", type=int, nargs="+", default=[1, 3], dest="depths")
    ap.add_argument("--alpha", type=float, default=1.0)
    ap.add_argument("--mu-max", type=float, default=4.0)
    ap.add_argument("--mu-step", type=float, default=0.1)
    ap.add_argument("--cache", default=None)
    cfg = ScanConfig(**vars(ap.parse_args()))
    bound, rows = scan(cfg)
    print(f"# mean-stability bound 2/lambda_max = {bound:.6g}")
    print("P,mu,mu_over_bound,rho_xi,rho_f")
    for r in rows:
        print(",".join(f"{v:.6g}" for v in r))
