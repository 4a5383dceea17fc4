"""Accuracy-vs-compute curves and compute-savings tables from metrics files."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

from .trainer import read_metrics

NOT_REACHED = "not reached"


@dataclass
class Savings:
    baseline: str
    comparison: str
    target_top1: float
    baseline_flops: int
    baseline_updates: int
    comparison_flops: int | None
    comparison_updates: int | None

    @property
    def reached(self) -> bool:
        return self.comparison_flops is not None

    @property
    def saved_flops(self) -> int | None:
        return self.baseline_flops - self.comparison_flops if self.reached else None

    @property
    def saved_updates(self) -> int | None:
        return self.baseline_updates - self.comparison_updates if self.reached else None


def first_crossing(rows: list[dict], target: float) -> dict | None:
    """Earliest logged row whose accuracy is at least ``target``."""
    for r in rows:
        if r["eval_top1"] is not None and r["eval_top1"] >= target:
            return r
    return None


def best_accuracy(rows: list[dict]) -> float | None:
    accs = [r["eval_top1"] for r in rows if r["eval_top1"] is not None]
    return max(accs) if accs else None


def compute_savings(baseline_path, comparison_path) -> Savings:
    base = read_metrics(baseline_path)
    cmp_ = read_metrics(comparison_path)
    target = best_accuracy(base)
    if target is None:
        raise ValueError(f"{baseline_path}: no evaluated rows")
    b = first_crossing(base, target)
    c = first_crossing(cmp_, target)
    return Savings(
        str(baseline_path), str(comparison_path), target, b["flops_cum"], b["step"],
        c["flops_cum"] if c else None, c["step"] if c else None,
    )


CURVE_HEADER = ["run", "epoch", "updates", "flops", "petaflops", "eval_top1"]
SAVINGS_HEADER = ["baseline", "comparison", "target_top1", "baseline_flops",
                  "baseline_updates", "comparison_flops", "comparison_updates",
                  "saved_flops", "saved_petaflops", "saved_updates"]


def emit_report(baselines: list, comparisons: list, out_dir) -> tuple[Path, Path | None]:
    """Write ``curves.tsv`` for every file and, when both lists are given,
    ``savings.tsv`` pairing ``baselines[i]`` with ``comparisons[i]``.

    A single baseline is paired with every comparison.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    curves = out / "curves.tsv"
    with open(curves, "w", newline="") as fh:
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        w.writerow(CURVE_HEADER)
        for path in [*baselines, *comparisons]:
            for r in read_metrics(path):
                if r["eval_top1"] is None:
                    continue
                w.writerow([str(path), r["epoch"], r["step"], r["flops_cum"],
                            repr(r["flops_cum"] / 1e15), repr(r["eval_top1"])])
    if not baselines or not comparisons:
        return curves, None
    if len(baselines) == 1:
        baselines = list(baselines) * len(comparisons)
    if len(baselines) != len(comparisons):
        raise ValueError("need one baseline, or as many baselines as comparisons")
    savings = out / "savings.tsv"
    with open(savings, "w", newline="") as fh:
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        w.writerow(SAVINGS_HEADER)
        for b, c in zip(baselines, comparisons):
            s = compute_savings(b, c)
            if s.reached:
                tail = [s.comparison_flops, s.comparison_updates, s.saved_flops,
                        repr(s.saved_flops / 1e15), s.saved_updates]
            else:
                tail = [NOT_REACHED] * 5
            w.writerow([s.baseline, s.comparison, repr(s.target_top1), s.baseline_flops,
                        s.baseline_updates, *tail])
    return curves, savings


def read_tsv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh, delimiter="\t"))
