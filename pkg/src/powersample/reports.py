"""Deterministic report files for experiment runs.

Everything here writes plain text -- CSV tables, JSON-lines diagnostics,
one JSON summary per run -- plus optional PNG figures rendered with the
Agg backend.  Given equal inputs the emitted bytes are identical run to
run: wall-clock times, hostnames, and library versions go to a separate
metadata sidecar (`meta.json`), never into the data files, and figure
metadata is pinned so the PNG encoder cannot embed anything volatile.
"""

from __future__ import annotations

import csv
import datetime
import json
import platform
from collections import Counter
from pathlib import Path

import numpy as np

from .diagnostics import CostCounters
from .model import TableModel, absorbed_form
from .oracle import SequenceDistribution, tv_distance

__all__ = [
    "METADATA_FILE",
    "fmt",
    "write_csv",
    "write_json",
    "write_meta",
    "sequence_label",
    "as_sequence_tuples",
    "write_histogram",
    "write_tv_table",
    "write_cost_table",
    "write_bias_tables",
    "histogram_figure",
    "decay_figure",
    "compare_figure",
]

METADATA_FILE = "meta.json"  # the one file allowed to differ between runs
_PNG_METADATA = {"Software": "powersample"}  # pin the encoder's text chunk


def fmt(value) -> str:
    """Stable scalar formatting for CSV cells."""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return format(float(value), ".12g")
    return str(value)


def write_csv(path: Path, header: list[str], rows: list[tuple]) -> Path:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([fmt(v) for v in row])
    return path


def write_json(path: Path, payload: dict) -> Path:
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def write_meta(outdir: Path, wall_times: dict[str, float]) -> Path:
    """Volatile run facts, quarantined away from the reproducible files."""
    payload = {
        "written_at": datetime.datetime.now(datetime.timezone.utc).isoformat(),
        "python": platform.python_version(),
        "numpy": np.__version__,
        "wall_time_s": {k: round(v, 3) for k, v in wall_times.items()},
    }
    return write_json(outdir / METADATA_FILE, payload)


def sequence_label(model: TableModel, tokens) -> str:
    """Human-readable form of a sampled sequence, cut after end-of-sequence."""
    eos = model.vocab.eos_id
    out = []
    for tok in tokens:
        out.append(model.vocab.name_of(int(tok)))
        if int(tok) == eos:
            break
    return " ".join(out)


def as_sequence_tuples(sequences, model: TableModel) -> list[tuple[int, ...]]:
    """Normalize sampler output (arrays or tuples) to absorbed fixed-length tuples."""
    eos = model.vocab.eos_id
    return [
        absorbed_form(tuple(int(t) for t in row), model.max_len, eos)
        for row in sequences
    ]


def write_histogram(
    outdir: Path,
    sequences: list[tuple[int, ...]],
    model: TableModel,
    exact: SequenceDistribution | None = None,
) -> Path:
    """`histogram.csv`: one row per distinct sampled sequence.

    Rows are ordered by count (descending) then sequence id (ascending)
    so equal inputs always produce equal bytes.
    """
    counts = Counter(sequences)
    total = sum(counts.values())
    header = ["rank", "sequence", "count", "frequency"]
    if exact is not None:
        header.append("exact_prob")
    rows = []
    ordered = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    for rank, (seq, count) in enumerate(ordered, start=1):
        row = [rank, sequence_label(model, seq), count, count / total]
        if exact is not None:
            row.append(exact.prob_of(seq))
        rows.append(tuple(row))
    return write_csv(outdir / "histogram.csv", header, rows)


def write_tv_table(
    outdir: Path,
    empirical: SequenceDistribution,
    exact: SequenceDistribution,
    model: TableModel,
) -> tuple[float, Path]:
    """`tv.csv`: per-sequence comparison plus the total variation distance."""
    keys = sorted(set(empirical.entries) | set(exact.entries))
    rows = []
    for seq in keys:
        e = empirical.entries.get(seq, 0.0)
        x = exact.entries.get(seq, 0.0)
        rows.append((sequence_label(model, seq), e, x, abs(e - x)))
    tv = tv_distance(empirical, exact)
    path = write_csv(
        outdir / "tv.csv", ["sequence", "empirical", "exact", "abs_diff"], rows
    )
    return tv, path


def write_cost_table(outdir: Path, cost: CostCounters) -> Path:
    from .baselines import cost_account

    account = cost_account(cost)
    rows = [(k, v) for k, v in sorted(account.items())]
    rows += [(f"raw.{k}", v) for k, v in sorted(cost.as_dict().items())]
    return write_csv(outdir / "cost.csv", ["metric", "value"], rows)


def write_bias_tables(outdir: Path, results) -> tuple[Path, Path]:
    """Per-measurement and slope-summary CSVs for a bias-suite run."""
    meas_rows = []
    slope_rows = []
    for res in sorted(results, key=lambda r: r.fixture):
        for records, slope_fit in ((res.plain, res.plain_fit), (res.jackknife, res.jackknife_fit)):
            for rec, used in zip(records, slope_fit.used):
                meas_rows.append(
                    (
                        rec.model_id,
                        "-".join(str(t) for t in rec.prefix) or "root",
                        rec.alpha,
                        rec.kind,
                        rec.m,
                        rec.bias(),
                        rec.bias_sem(),
                        used,
                    )
                )
            slope_rows.append(
                (
                    res.fixture,
                    res.alpha,
                    slope_fit.kind,
                    slope_fit.slope,
                    slope_fit.slope_stderr,
                    sum(slope_fit.used),
                    slope_fit.indistinguishable,
                )
            )
    p1 = write_csv(
        outdir / "bias_measurements.csv",
        ["model", "prefix", "alpha", "estimator", "m", "bias", "stderr", "used"],
        meas_rows,
    )
    p2 = write_csv(
        outdir / "bias_slopes.csv",
        ["model", "alpha", "estimator", "slope", "slope_stderr", "points_used", "indistinguishable"],
        slope_rows,
    )
    return p1, p2


# ---------------------------------------------------------------------------
# figures (optional, PNG, deterministic bytes)


def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def _save(fig, path: Path) -> Path:
    fig.savefig(path, format="png", dpi=120, metadata=dict(_PNG_METADATA))
    _pyplot().close(fig)
    return path


def histogram_figure(
    outdir: Path,
    sequences: list[tuple[int, ...]],
    model: TableModel,
    exact: SequenceDistribution | None = None,
    title: str = "sampled sequences",
) -> Path:
    plt = _pyplot()
    counts = Counter(sequences)
    total = sum(counts.values()) or 1
    if exact is not None:
        keys = sorted(
            set(counts) | set(exact.entries),
            key=lambda s: -(exact.prob_of(s) if exact else 0),
        )
    else:
        keys = [k for k, _ in sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))]
    keys = keys[:12]  # the toy-scale models have few distinct sequences
    labels = [sequence_label(model, k) for k in keys]
    freq = [counts.get(k, 0) / total for k in keys]
    x = np.arange(len(keys))
    fig, ax = plt.subplots(figsize=(8, 4.2))
    width = 0.38 if exact is not None else 0.65
    ax.bar(x - (width / 2 if exact is not None else 0), freq, width, label="empirical")
    if exact is not None:
        ax.bar(x + width / 2, [exact.prob_of(k) for k in keys], width, label="exact")
    ax.set_xticks(x)
    ax.set_xticklabels(labels, rotation=30, ha="right", fontsize=8)
    ax.set_ylabel("probability")
    ax.set_title(title)
    ax.legend()
    fig.tight_layout()
    return _save(fig, outdir / "histogram.png")


def decay_figure(outdir: Path, results) -> Path:
    plt = _pyplot()
    results = sorted(results, key=lambda r: r.fixture)
    cols = len(results)
    fig, axes = plt.subplots(1, cols, figsize=(3.4 * cols, 3.4), squeeze=False)
    for ax, res in zip(axes[0], results):
        for records, fit, marker in (
            (res.plain, res.plain_fit, "o"),
            (res.jackknife, res.jackknife_fit, "s"),
        ):
            ms = [r.m for r in records]
            bias = [r.bias() for r in records]
            ax.loglog(ms, bias, marker=marker, label=fit.describe(), lw=1)
        ax.set_title(f"{res.fixture} (alpha={res.alpha:g})", fontsize=9)
        ax.set_xlabel("M")
        ax.set_ylabel("max-token |bias|")
        ax.legend(fontsize=6)
    fig.tight_layout()
    return _save(fig, outdir / "bias_decay.png")


def compare_figure(outdir: Path, rows: list[dict]) -> Path:
    """Bar chart for a sampler comparison; rows need sampler/tv/tokens keys."""
    plt = _pyplot()
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(8, 3.6))
    names = [r["sampler"] for r in rows]
    x = np.arange(len(names))
    tvs = [r["tv"] if r["tv"] is not None else np.nan for r in rows]
    ax1.bar(x, tvs)
    ax1.set_xticks(x)
    ax1.set_xticklabels(names, rotation=20, ha="right", fontsize=8)
    ax1.set_ylabel("TV to exact power dist")
    ax2.bar(x, [r["tokens_generated"] for r in rows])
    ax2.set_xticks(x)
    ax2.set_xticklabels(names, rotation=20, ha="right", fontsize=8)
    ax2.set_ylabel("tokens generated")
    fig.tight_layout()
    return _save(fig, outdir / "compare.png")
