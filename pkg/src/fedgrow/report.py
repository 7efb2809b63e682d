"""Run artifacts: metrics CSV, JSON summaries, manifests, and figures.

The CSV and JSON files are the machine contract and are byte-reproducible for
a fixed config and seed (floats are written with shortest round-trip repr and
JSON keys are sorted). Figures are rendered alongside them for human review
and are not part of the byte-level contract.
"""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

from .fed import RoundReport, TrainingResult
from .rng import RNG_VERSION

SCHEMA_VERSION = 1

CSV_COLUMNS = (
    "t",
    "l_t",
    "mean_train_loss",
    "eval_loss",
    "downlink_bytes",
    "uplink_bytes",
    "cum_bytes",
)


def _fmt(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_metrics_csv(path: str | Path, reports: list[RoundReport]) -> None:
    """One row per round, columns per the metrics contract."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        for r in reports:
            writer.writerow(
                [
                    r.t,
                    r.layers,
                    _fmt(r.mean_train_loss),
                    _fmt(r.eval_loss),
                    r.downlink_bytes,
                    r.uplink_bytes,
                    r.cum_bytes,
                ]
            )


def write_json(path: str | Path, payload: dict) -> None:
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def summary_dict(result: TrainingResult, mode: str) -> dict:
    ledger = result.ledger
    return {
        "schema_version": SCHEMA_VERSION,
        "rng_version": RNG_VERSION,
        "mode": mode,
        "rounds": len(result.reports),
        "final_layers": result.reports[-1].layers,
        "final_eval_loss": result.reports[-1].eval_loss,
        "final_train_loss": result.reports[-1].mean_train_loss,
        "total_bytes": ledger.total_bytes,
        "total_block_bytes": ledger.total_block_bytes,
        "total_fixed_bytes": ledger.total_fixed_bytes,
        "growth_rounds": list(result.growth_rounds),
    }


def git_blob_hash(data: bytes) -> str:
    """Hash of file contents the way git hashes a blob."""
    h = hashlib.sha1(b"blob %d\x00" % len(data))
    h.update(data)
    return h.hexdigest()


def manifest_dict(
    snapshot: dict,
    started_at: str,
    finished_at: str,
    outputs: dict[str, str],
    corpus_hash: str,
    weights_hash: str,
) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "rng_version": RNG_VERSION,
        "config": snapshot,
        "started_at": started_at,
        "finished_at": finished_at,
        "outputs": outputs,
        "corpus_hash": corpus_hash,
        "weights_hash": weights_hash,
    }


# ---------------------------------------------------------------------------
# figures
# ---------------------------------------------------------------------------


def _plt():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def render_run_figures(
    fig_dir: str | Path, reports: list[RoundReport], growth_rounds: tuple[int, ...]
) -> dict[str, str]:
    """Loss curves and cumulative traffic, written next to the CSV."""
    plt = _plt()
    fig_dir = Path(fig_dir)
    fig_dir.mkdir(parents=True, exist_ok=True)
    rounds = [r.t for r in reports]
    out: dict[str, str] = {}

    fig, ax = plt.subplots(figsize=(7, 4.2))
    ax.plot(rounds, [r.mean_train_loss for r in reports], label="train loss", lw=1.2)
    ax.plot(rounds, [r.eval_loss for r in reports], label="eval loss", lw=1.2)
    for g in growth_rounds:
        ax.axvline(g, color="gray", ls="--", lw=0.7)
    ax.set_xlabel("communication round")
    ax.set_ylabel("loss (MSE)")
    ax.set_yscale("log")
    ax.legend()
    ax.set_title("training progress (dashed: growth events)")
    fig.tight_layout()
    loss_path = fig_dir / "loss_curve.png"
    fig.savefig(loss_path, dpi=110)
    plt.close(fig)
    out["loss_curve"] = str(loss_path)

    fig, ax = plt.subplots(figsize=(7, 4.2))
    ax.plot(rounds, [r.cum_bytes / 1e6 for r in reports], label="cumulative MB", lw=1.4)
    ax.set_xlabel("communication round")
    ax.set_ylabel("cumulative traffic [MB]")
    ax2 = ax.twinx()
    ax2.step(rounds, [r.layers for r in reports], where="post", color="tab:red", lw=1.0)
    ax2.set_ylabel("layers per stack", color="tab:red")
    ax.set_title("communication and model depth")
    fig.tight_layout()
    comm_path = fig_dir / "comm_bytes.png"
    fig.savefig(comm_path, dpi=110)
    plt.close(fig)
    out["comm_bytes"] = str(comm_path)
    return out


def render_compare_figure(
    path: str | Path, traces: dict[str, list[tuple[list[int], list[float]]]]
) -> str:
    """Eval loss against cumulative bytes for each labeled group of runs."""
    plt = _plt()
    fig, ax = plt.subplots(figsize=(7, 4.2))
    colors = dict(zip(traces, ("tab:blue", "tab:orange", "tab:green", "tab:purple")))
    for label, runs in traces.items():
        for i, (bytes_axis, losses) in enumerate(runs):
            ax.plot(
                [b / 1e6 for b in bytes_axis],
                losses,
                color=colors.get(label),
                alpha=0.8,
                lw=1.1,
                label=label if i == 0 else None,
            )
    ax.set_xlabel("cumulative traffic [MB]")
    ax.set_ylabel("eval loss (MSE)")
    ax.set_yscale("log")
    ax.legend()
    ax.set_title("loss per communicated byte")
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return str(path)


@dataclass(frozen=True)
class RunPaths:
    """Canonical filenames inside a run's output directory."""

    out_dir: Path

    @property
    def metrics_csv(self) -> Path:
        return self.out_dir / "metrics.csv"

    @property
    def summary_json(self) -> Path:
        return self.out_dir / "summary.json"

    @property
    def manifest_json(self) -> Path:
        return self.out_dir / "manifest.json"

    @property
    def weights(self) -> Path:
        return self.out_dir / "weights.bin"

    @property
    def corpus(self) -> Path:
        return self.out_dir / "corpus.bin"

    @property
    def figures(self) -> Path:
        return self.out_dir / "figures"
