#!/usr/bin/env python3
"""Sweep event-stream corruptions against a trained checkpoint.

Loads a checkpoint, regenerates (or loads) the evaluation set, and reports
accuracy under each corruption family at every severity, in both the smooth
forward mode and the hard-threshold deployment mode.
"""

from __future__ import annotations

import argparse
import json
from pathlib import Path

from spikesam.events import load_frames
from spikesam.harness import load_config, load_data, robustness_sweep
from spikesam.network import load_checkpoint


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("checkpoint", help="path to a .bin checkpoint")
    group = ap.add_mutually_exclusive_group(required=True)
    group.add_argument("--config", help="run config JSON whose test split to regenerate")
    group.add_argument("--data", help="stored .bin dataset to evaluate on")
    ap.add_argument("--seed", type=int, default=0,
                    help="corruption seed (default: %(default)s)")
    ap.add_argument("--json", default=None, metavar="PATH", help="also write results as JSON")
    args = ap.parse_args()

    params, spec = load_checkpoint(args.checkpoint)
    if args.data is not None:
        test = load_frames(args.data)
    else:
        test = load_data(load_config(args.config).data).test

    results = robustness_sweep(params, spec, test, corruption_seed=args.seed)
    print(f"{'family':12s} {'severity':>8s} {'smooth acc':>11s} {'hard acc':>9s}")
    for family, by_mode in results.curves.items():
        for i, severity in enumerate(results.severities):
            print(f"{family:12s} {severity:8.2f} "
                  f"{by_mode['surrogate'][i]:11.4f} {by_mode['hard'][i]:9.4f}")
    print("\narea under accuracy-severity curve:")
    for family, by_mode in results.auc.items():
        print(f"  {family:12s} smooth {by_mode['surrogate']:.4f}  hard {by_mode['hard']:.4f}")

    if args.json is not None:
        Path(args.json).parent.mkdir(parents=True, exist_ok=True)
        Path(args.json).write_text(json.dumps(results.to_dict(), indent=2) + "\n")
        print(f"\nwrote {args.json}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
