"""CSV, Markdown and manifest writers for CLI runs."""

from __future__ import annotations

import csv
import json
import sys
from pathlib import Path

import numpy as np

from .train import SweepResult, SweepRow, paired_table


def _pct(x: float) -> str:
    # rounded to 12 decimals so cells read cleanly yet stay exact to ~1e-12
    return repr(round(100.0 * x, 12))


def mean_result(results: list[SweepResult]) -> SweepResult:
    """Average one arm's accuracies over seeds, ratio by ratio."""
    first = results[0]
    rows = []
    for i, row in enumerate(first.rows):
        rows.append(SweepRow(row.ratio,
                             float(np.mean([r.rows[i].accuracy for r in results])),
                             float(np.mean([r.rows[i].sparsity for r in results])),
                             None))
    return SweepResult(first.arm, float(np.mean([r.baseline_accuracy for r in results])),
                       rows, [])


def write_sweep_runs_csv(path, runs: list[tuple[int, SweepResult]]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["arm", "seed", "ratio", "accuracy", "sparsity"])
        for seed, res in runs:
            w.writerow([res.arm, seed, "0", format(res.baseline_accuracy, ".17g"), ""])
            for row in res.rows:
                w.writerow([res.arm, seed, format(row.ratio, ".17g"),
                            format(row.accuracy, ".17g"), format(row.sparsity, ".17g")])


def write_sweep_csv(path, sparse: SweepResult, baseline: SweepResult) -> None:
    """``arm,ratio,accuracy``; ratio 0 rows are the unpruned models."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["arm", "ratio", "accuracy"])
        for res in (sparse, baseline):
            w.writerow([res.arm, "0", format(res.baseline_accuracy, ".17g")])
            for row in res.rows:
                w.writerow([res.arm, format(row.ratio, ".17g"), format(row.accuracy, ".17g")])


def sweep_markdown(sparse: SweepResult, baseline: SweepResult, position: str,
                   seeds) -> tuple[str, float | None]:
    rows, mean_diff = paired_table(sparse, baseline)
    lines = [
        f"Sparse-then-prune vs prune-only (sparse at {position}, "
        f"seeds {', '.join(str(s) for s in seeds)}). Accuracies in percent.",
        "",
        "| ratio | sparse acc | baseline acc | difference (pp) |",
        "|---|---|---|---|",
    ]
    for row in rows:
        lines.append(f"| {row['ratio']:g} | {_pct(row['sparse'])} | {_pct(row['baseline'])} "
                     f"| {_pct(row['difference'])} |")
    if mean_diff is not None:
        lines.append(f"| mean (pruned) | | | {_pct(mean_diff)} |")
    lines.append("")
    return "\n".join(lines), mean_diff


def write_manifest(path, command: str, argv: list[str], config: dict[str, str],
                   seed: int | None = None, dataset_fingerprint: str | None = None,
                   checkpoint_in: str | None = None, checkpoint_out: str | None = None,
                   **extra) -> None:
    manifest = {
        "command": command,
        "argv": list(argv),
        "python": sys.version.split()[0],
        "config": config,
        "seed": seed,
        "dataset_fingerprint": dataset_fingerprint,
        "checkpoint_in": checkpoint_in,
        "checkpoint_out": checkpoint_out,
    }
    manifest.update(extra)
    Path(path).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
