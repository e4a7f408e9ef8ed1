"""Run artifacts: delimited outputs, the JSON report, and rendered figures.

Every figure is drawn from the tidy CSVs, not from in-memory state, so the
CSVs are sufficient to regenerate all plots (`mecd report` does exactly
that). Floats are written with repr so reruns with the same seed produce
byte-identical files.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .evaluate import EvaluationLedger, ForgettingReport, SweepResult, forgetting

LEDGER_CSV = "ledger.csv"
ASSIGNMENTS_CSV = "assignments.csv"
EVOLUTION_CSV = "expert_evolution.csv"
SWEEP_CSV = "sweep.csv"
HEATMAP_CSV = "class_auroc_by_experts.csv"
REPORT_JSON = "report.json"


def _fmt(value: float | None) -> str:
    return "" if value is None else repr(float(value))


def write_ledger_csv(ledger: EvaluationLedger, path: Path | str) -> None:
    """One row per (step, class): the class's AUROC on its expert's bank."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "class_name", "expert_id", "auroc"])
        for step in range(len(ledger.class_order)):
            for name in ledger.class_order[: step + 1]:
                writer.writerow(
                    [
                        step,
                        name,
                        ledger.expert_of(name),
                        _fmt(ledger.entries[(step, name)]),
                    ]
                )


def write_assignments_csv(ledger: EvaluationLedger, path: Path | str) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "class_name", "expert_id", "reason", "similarities"])
        for name in ledger.class_order:
            decision = ledger.assignments[name]
            sims = ";".join(
                f"{eid}:{_fmt(sim)}" for eid, sim in sorted(decision.similarity_scores.items())
            )
            writer.writerow(
                [
                    ledger.intro_step[name],
                    name,
                    decision.expert_id,
                    decision.reason.value,
                    sims,
                ]
            )


def write_expert_evolution_csv(ledger: EvaluationLedger, path: Path | str) -> None:
    """Per (step, expert): class count, utilization, mean AUROC and forgetting."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["step", "expert_id", "num_classes", "utilization", "mean_auroc", "mean_forgetting"]
        )
        for step in sorted(ledger.snapshots):
            for snap in ledger.snapshots[step]:
                aurocs = []
                deltas = []
                for name in snap.assigned_classes:
                    value = ledger.entries.get((step, name))
                    if value is not None:
                        aurocs.append(value)
                    intro = ledger.intro_step[name]
                    at_intro = ledger.entries.get((intro, name))
                    if intro < step and value is not None and at_intro is not None:
                        deltas.append(value - at_intro)
                writer.writerow(
                    [
                        step,
                        snap.expert_id,
                        len(snap.assigned_classes),
                        _fmt(snap.utilization),
                        _fmt(float(np.mean(aurocs)) if aurocs else None),
                        _fmt(float(np.mean(deltas)) if deltas else None),
                    ]
                )


def write_sweep_csv(results: list[SweepResult], path: Path | str) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["num_experts", "mean_final_auroc", "global_forgetting"])
        for res in results:
            writer.writerow(
                [res.num_experts, _fmt(res.mean_final_auroc), _fmt(res.global_forgetting)]
            )


def write_heatmap_csv(results: list[SweepResult], path: Path | str) -> None:
    """Tidy per-class final AUROC for every expert-count configuration."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["class_name", "num_experts", "final_auroc"])
        for res in results:
            for name in res.ledger.class_order:
                writer.writerow([name, res.num_experts, _fmt(res.ledger.final_auroc(name))])


def write_report_json(
    config_echo: dict,
    ledger: EvaluationLedger,
    report: ForgettingReport | None = None,
    sweep_results: list[SweepResult] | None = None,
    path: Path | str = REPORT_JSON,
) -> None:
    if report is None:
        report = forgetting(ledger)
    final = ledger.final_step
    payload = {
        "config": config_echo,
        "class_order": ledger.class_order,
        "assignments": {
            name: {
                "expert_id": ledger.assignments[name].expert_id,
                "reason": ledger.assignments[name].reason.value,
                "step": ledger.intro_step[name],
                "similarities": {
                    str(k): v
                    for k, v in sorted(ledger.assignments[name].similarity_scores.items())
                },
            }
            for name in ledger.class_order
        },
        "final_auroc": {name: ledger.final_auroc(name) for name in ledger.class_order},
        "mean_final_auroc": ledger.mean_final_auroc(),
        "forgetting": {
            "per_class": report.per_class,
            "per_expert": {str(k): v for k, v in report.per_expert.items()},
            "global": report.global_mean,
        },
        "experts": [
            {
                "expert_id": snap.expert_id,
                "assigned_classes": snap.assigned_classes,
                "bank_size": snap.bank_size,
                "utilization": snap.utilization,
            }
            for snap in ledger.snapshots[final]
        ],
    }
    if sweep_results is not None:
        payload["sweep"] = [
            {
                "num_experts": res.num_experts,
                "mean_final_auroc": res.mean_final_auroc,
                "global_forgetting": res.global_forgetting,
            }
            for res in sweep_results
        ]
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2)
        fh.write("\n")


# ---------------------------------------------------------------------------
# Figures, rendered from the CSVs written above.
# ---------------------------------------------------------------------------


def _read_csv(path: Path) -> list[dict[str, str]]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _maybe_float(text: str) -> float | None:
    return float(text) if text else None


def render_run_figures(run_dir: Path | str, out_dir: Path | str | None = None) -> list[Path]:
    """Figures for a single run; reads ledger and evolution CSVs."""
    run = Path(run_dir)
    out = Path(out_dir) if out_dir is not None else run
    out.mkdir(parents=True, exist_ok=True)
    written = []

    rows = _read_csv(run / LEDGER_CSV)
    if rows:
        final_step = max(int(r["step"]) for r in rows)
        final_rows = [r for r in rows if int(r["step"]) == final_step]
        names = [r["class_name"] for r in final_rows]
        values = [_maybe_float(r["auroc"]) for r in final_rows]
        experts = [int(r["expert_id"]) for r in final_rows]

        fig, ax = plt.subplots(figsize=(max(6, 0.6 * len(names)), 4))
        colors = plt.get_cmap("tab10")
        ax.bar(
            range(len(names)),
            [v if v is not None else 0.0 for v in values],
            color=[colors(e % 10) for e in experts],
        )
        ax.set_xticks(range(len(names)))
        ax.set_xticklabels(names, rotation=45, ha="right")
        ax.set_ylabel("image-level AUROC")
        ax.set_ylim(0, 1.05)
        ax.set_title("Final AUROC per class (colored by expert)")
        fig.tight_layout()
        target = out / "per_class_final_auroc.png"
        fig.savefig(target, dpi=150)
        plt.close(fig)
        written.append(target)

    evo = _read_csv(run / EVOLUTION_CSV)
    if evo:
        for column, label, filename in (
            ("mean_auroc", "mean AUROC of assigned classes", "expert_auroc_evolution.png"),
            ("mean_forgetting", "mean forgetting of assigned classes", "expert_forgetting_evolution.png"),
        ):
            fig, ax = plt.subplots(figsize=(7, 4))
            by_expert: dict[int, list[tuple[int, float]]] = {}
            for r in evo:
                value = _maybe_float(r[column])
                if value is not None:
                    by_expert.setdefault(int(r["expert_id"]), []).append(
                        (int(r["step"]), value)
                    )
            for expert_id, points in sorted(by_expert.items()):
                points.sort()
                ax.plot(
                    [p[0] for p in points],
                    [p[1] for p in points],
                    marker="o",
                    label=f"expert {expert_id}",
                )
            ax.set_xlabel("introduction step")
            ax.set_ylabel(label)
            ax.set_title(label.capitalize() + " per step")
            if by_expert:
                ax.legend()
            fig.tight_layout()
            target = out / filename
            fig.savefig(target, dpi=150)
            plt.close(fig)
            written.append(target)

    return written


def render_sweep_figures(run_dir: Path | str, out_dir: Path | str | None = None) -> list[Path]:
    """Figures for an expert-count sweep; reads sweep and heatmap CSVs."""
    run = Path(run_dir)
    out = Path(out_dir) if out_dir is not None else run
    out.mkdir(parents=True, exist_ok=True)
    written = []

    sweep_path = run / SWEEP_CSV
    if sweep_path.exists():
        rows = _read_csv(sweep_path)
        counts = [int(r["num_experts"]) for r in rows]
        for column, label, filename in (
            ("mean_final_auroc", "mean final AUROC", "auroc_vs_experts.png"),
            ("global_forgetting", "global forgetting", "forgetting_vs_experts.png"),
        ):
            values = [_maybe_float(r[column]) for r in rows]
            fig, ax = plt.subplots(figsize=(6, 4))
            ax.plot(counts, values, marker="o")
            if column == "global_forgetting":
                ax.axhline(0.0, color="gray", lw=0.8, ls="--")
            ax.set_xlabel("number of experts")
            ax.set_ylabel(label)
            ax.set_title(f"{label} vs number of experts")
            ax.set_xticks(counts)
            fig.tight_layout()
            target = out / filename
            fig.savefig(target, dpi=150)
            plt.close(fig)
            written.append(target)

    heatmap_path = run / HEATMAP_CSV
    if heatmap_path.exists():
        rows = _read_csv(heatmap_path)
        names = list(dict.fromkeys(r["class_name"] for r in rows))
        counts = sorted({int(r["num_experts"]) for r in rows})
        grid = np.full((len(names), len(counts)), np.nan)
        for r in rows:
            value = _maybe_float(r["final_auroc"])
            if value is not None:
                grid[names.index(r["class_name"]), counts.index(int(r["num_experts"]))] = value
        fig, ax = plt.subplots(figsize=(1.2 + 0.7 * len(counts), 1.0 + 0.4 * len(names)))
        image = ax.imshow(grid, cmap="viridis", vmin=0.0, vmax=1.0, aspect="auto")
        ax.set_xticks(range(len(counts)))
        ax.set_xticklabels(counts)
        ax.set_yticks(range(len(names)))
        ax.set_yticklabels(names)
        ax.set_xlabel("number of experts")
        ax.set_title("Per-class final AUROC")
        fig.colorbar(image, ax=ax, label="AUROC")
        fig.tight_layout()
        target = out / "class_auroc_heatmap.png"
        fig.savefig(target, dpi=150)
        plt.close(fig)
        written.append(target)

    return written
