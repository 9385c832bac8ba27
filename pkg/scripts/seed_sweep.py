#!/usr/bin/env python3
"""Run the full pipeline for several seeds and tabulate satisfaction and objective stats."""

from __future__ import annotations

import argparse
import tempfile

from nileztn.config import RunConfig, load_config
from nileztn.evalkit import MODES, SCENARIOS
from nileztn.pipeline import run_pipeline


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--config", help="base config file (defaults otherwise)")
    ap.add_argument("--seeds", default="0-10", help="range 'a-b' or comma list")
    args = ap.parse_args(argv)
    if "-" in args.seeds:
        lo, hi = map(int, args.seeds.split("-"))
        seeds = range(lo, hi + 1)
    else:
        seeds = [int(s) for s in args.seeds.split(",")]
    base = load_config(args.config) if args.config else RunConfig()
    cols = [f"{sc}-{md[:3]}" for sc in SCENARIOS for md in MODES]
    print("seed " + " ".join(f"{c:>8}" for c in cols) + "  order  ID-r  ID-mc/cl     OOD-mc/cl")
    held = 0
    for seed in seeds:
        with tempfile.TemporaryDirectory() as out:
            rep = run_pipeline(base.with_seed(seed), out, log=None)
        fr = [rep.fraction(sc, md) for sc in SCENARIOS for md in MODES]
        ci, co = rep.correlation["ID"], rep.correlation["OOD"]
        r = "n/a" if ci.pearson is None else f"{ci.pearson:.2f}"
        held += rep.ordering_holds()
        print(f"{seed:>4} " + " ".join(f"{x:8.3f}" for x in fr)
              + f"  {str(rep.ordering_holds()):<5}  {r:>4}  "
              f"{ci.mean_montecarlo:5.1f}/{ci.mean_closedloop:5.1f}  "
              f"{co.mean_montecarlo:5.1f}/{co.mean_closedloop:5.1f}", flush=True)
    print(f"ordering held on {held}/{len(seeds)} seeds")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
