#!/usr/bin/env python3
"""Run the paired hard-transfer benchmark and print the summary table.

Trains a smooth-forward baseline and one sharpness-aware arm per radius on
the same seeds, evaluates every checkpoint with hard thresholds, and reports
the surrogate-to-hard accuracy gap per arm.  With no flags this reproduces
the packaged study (five paired seeds, ~2 minutes on a laptop core).
"""

from __future__ import annotations

import argparse
import json
from dataclasses import replace
from pathlib import Path

from spikesam.harness import (
    default_transfer_config,
    format_transfer_table,
    load_config,
    run_transfer_study,
    summarize_transfer,
)


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out-dir", default="runs/transfer_study",
                    help="directory for run artifacts (default: %(default)s)")
    ap.add_argument("--config", default=None,
                    help="JSON run config for the baseline arm; omit for the packaged benchmark")
    ap.add_argument("--json", default=None, metavar="PATH",
                    help="also write the summary as JSON")
    args = ap.parse_args()

    if args.config is None:
        cfg = default_transfer_config(args.out_dir)
    else:
        cfg = replace(load_config(args.config), out_dir=args.out_dir)
    study = run_transfer_study(cfg)

    print(format_transfer_table(summarize_transfer(study.rows())))
    print(f"\nbaseline gap median : {study.baseline_gap_median:+.4f}")
    print(f"best radius         : rho={study.best_rho:g}")
    print(f"best gap median     : {study.best_gap_median:+.4f}")

    if args.json is not None:
        payload = {
            "best_rho": study.best_rho,
            "baseline_gap_median": study.baseline_gap_median,
            "best_gap_median": study.best_gap_median,
            "baseline_surrogate_median": study.baseline_surrogate_median,
            "best_surrogate_median": study.best_surrogate_median,
            "rows": [
                {"method": r.method, "seed": r.seed,
                 "surrogate_acc": r.surrogate_acc, "hard_acc": r.hard_acc}
                for r in study.rows()
            ],
        }
        Path(args.json).parent.mkdir(parents=True, exist_ok=True)
        Path(args.json).write_text(json.dumps(payload, indent=2) + "\n")
        print(f"\nwrote {args.json}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
