#!/usr/bin/env python3
"""Regenerate tests/golden/dynamics.json from the pinned preset runs.

Run this only when the committed seed, the presets, or training semantics
change on purpose; the acceptance suite compares fresh runs against these
frozen values.
"""

from __future__ import annotations

import json
import statistics
import sys
import tempfile
from pathlib import Path

REPO = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(REPO / "src"))

from splab.runner import main  # noqa: E402

SMOOTHING = 0.9


def smooth(values, factor=SMOOTHING):
    out = []
    s = values[0]
    for v in values:
        s = factor * s + (1.0 - factor) * v
        out.append(s)
    return out


def read_metrics(run_dir: Path):
    return [json.loads(l) for l in (run_dir / "metrics.jsonl").read_text().splitlines()]


def probe_rates(run_dir: Path) -> dict[int, float]:
    assert main(["probe", str(run_dir), "--snapshots", str(run_dir / "snapshots" / "iter_200.bin")]) == 0
    rows = (run_dir / "probe" / "probe_solve_rates.csv").read_text().splitlines()[2:]
    return {int(r.split(",")[1]): float(r.split(",")[2]) for r in rows}


def regen() -> dict:
    with tempfile.TemporaryDirectory() as tmp:
        std = Path(tmp) / "standard"
        frz = Path(tmp) / "frozen"
        assert main(["train", str(REPO / "configs" / "rq3_standard.cfg"), "--output-dir", str(std), "--quiet"]) == 0
        assert main(["train", str(REPO / "configs" / "rq3_frozen.cfg"), "--output-dir", str(frz), "--quiet"]) == 0

        std_recs = read_metrics(std)
        frz_recs = read_metrics(frz)
        solver_smoothed = smooth([r["solver_entropy"] for r in std_recs])
        rates = probe_rates(std)
        buckets = sorted(rates)
        half = len(buckets) // 2

        return {
            "smoothing_factor": SMOOTHING,
            "standard": {
                "preset": "rq3_standard.cfg",
                "solver_entropy_smoothed_iter10": solver_smoothed[9],
                "solver_entropy_smoothed_iter200": solver_smoothed[199],
                "final_policy_entropy": std_recs[-1]["policy_entropy"],
                "mean_proposer_entropy_last50": statistics.fmean(
                    r["proposer_entropy"] for r in std_recs[-50:]
                ),
                "mean_solver_entropy_last50": statistics.fmean(
                    r["solver_entropy"] for r in std_recs[-50:]
                ),
            },
            "frozen": {
                "preset": "rq3_frozen.cfg",
                "final_policy_entropy": frz_recs[-1]["policy_entropy"],
            },
            "probe": {
                "per_bucket": 8,
                "rollouts": 8,
                "snapshot": "iter_200.bin",
                "rates_by_bucket": {str(b): rates[b] for b in buckets},
                "early_mean_solve_rate": statistics.fmean(rates[b] for b in buckets[:half]),
                "late_mean_solve_rate": statistics.fmean(rates[b] for b in buckets[half:]),
            },
        }


if __name__ == "__main__":
    golden = regen()
    out = REPO / "tests" / "golden" / "dynamics.json"
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(golden, indent=2) + "\n")
    print(f"wrote {out}")
    print(json.dumps(golden, indent=2))
