"""Run every figure preset and write the CSVs plus a JSON summary.

    python3 scripts/reproduce_all.py --out results/ [--figures fig3 fig7]

Set NRNSAF_WORKERS to fan the curves of one figure out over processes.
"""

from __future__ import annotations

import argparse
import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

from nrnsaf import harness


@dataclass
class RunConfig:
    out: Path = Path("results")
    figures: list[str] = field(default_factory=lambda: list(harness.FIGURES))
    cache: Path | None = None


def summarise(fig: str, results) -> list[dict]:
    if fig == "fig7":
        return [{"mu": p.mu, "steady_sim_db": p.steady_sim_db, "steady_theory_db": p.steady_theory_db,
                 "rho_f": p.rho_f} for p in results]
    return [r.summary() for r in results]


def main(cfg: RunConfig) -> dict:
    cfg.out.mkdir(parents=True, exist_ok=True)
    cache = str(cfg.cache or cfg.out / ".moment_cache")
    summary = {}
    for fig in cfg.figures:
        t0 = time.perf_counter()
        results, paths = harness.reproduce(fig, cfg.out / fig, cache)
        summary[fig] = {"seconds": time.perf_counter() - t0,
                        "files": [str(p) for p in paths],
                        "curves": summarise(fig, results)}
        print(f"{fig}: {len(paths)} file(s), {summary[fig]['seconds']:.1f}s")
    (cfg.out / "summary.json").write_text(json.dumps(summary, indent=2, default=str) + "\n")
    return summary


if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    ap.add_argument("--out", type=Path, default=RunConfig.out)
    ap.add_argument("--figures", nargs="+", default=list(harness.FIGURES), choices=harness.FIGURES)
    ap.add_argument("--cache", type=Path, default=None)
    args = ap.parse_args()
    logging.basicConfig(level=logging.WARNING)
    cfg = RunConfig(**vars(args))
    print(json.dumps({k: str(v) for k, v in asdict(cfg).items()}))
    main(cfg)
