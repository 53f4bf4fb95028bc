"""Command-line experiment runner.

Subcommands:

    run       sample from one configured sampler, write report files
    compare   run several configs on one model, write a comparison table
    validate  check a model file and list every violation found
    bias-lab  measure estimator bias decay over the standard fixtures

A run is configured by a single JSON document whose top-level fields can
be overridden by flags of the same name (`--num-samples`, `--seed`, ...).
Report data is CSV / JSON-lines / one JSON summary; figures are optional
PNGs.  Apart from the `meta.json` sidecar (timestamps, wall times,
versions), equal config plus equal seed produces byte-identical files.

Exit codes: 0 success, 2 configuration or model-file error, 3 exact
enumeration exceeded its node budget where the command required it.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .baselines import (
    McmcParams,
    best_of_n,
    cost_account,
    low_temp_sequences,
    mcmc_power_chains,
)
from .blocks import BlockParams, sample_block_sequences
from .diagnostics import CostCounters, write_jsonl
from .model import TableModel
from .modelspec import ModelFileError, resolve_model, validate_model_dict
from .oracle import (
    EnumerationBudgetError,
    empirical_distribution,
    power_distribution,
)
from .rng import RandomStreams
from .sampler import PowerParams, sample_sequences
from . import biaslab, reports

__all__ = ["ExperimentConfig", "ConfigError", "run_experiment", "compare", "main"]

OUTDIR_ENV = "POWERSAMPLE_OUTDIR"
DEFAULT_OUTDIR = "powersample-out"
SAMPLERS = ("power", "block", "low-temp", "best-of-n", "mcmc")
FORMATS = ("csv", "json", "png")

# config keys shared by every sampler
_COMMON_FIELDS = {
    "model", "sampler", "alpha", "horizon", "num_samples", "seed",
    "outdir", "formats", "threads",
}
# sampler-specific keys; setting one under the wrong sampler is an error
_SAMPLER_FIELDS = {
    "power": {"top_k", "num_rollouts", "clamp_policy"},
    "block": {
        "block_size", "num_proposals", "top_k", "num_rollouts",
        "rollout_horizon", "tail_proposals", "tail_top_k", "clamp_policy",
    },
    "low-temp": set(),
    "best-of-n": {"n", "length_normalize"},
    "mcmc": {"block_size", "steps_per_stage", "proposal_temperature"},
}


class ConfigError(ValueError):
    """A config field failed validation; `.field` names it."""

    def __init__(self, field_name: str, message: str):
        self.field = field_name
        super().__init__(f"{field_name}: {message}")


@dataclass(frozen=True)
class ExperimentConfig:
    """One experiment: a model source, a sampler, and its knobs."""

    model: str
    sampler: str
    alpha: float
    num_samples: int = 1000
    seed: int = 0
    horizon: int | None = None
    outdir: str | None = None
    formats: tuple[str, ...] = FORMATS
    threads: int = 1
    sampler_params: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.sampler not in SAMPLERS:
            raise ConfigError("sampler", f"must be one of {', '.join(SAMPLERS)}")
        if not isinstance(self.alpha, (int, float)) or self.alpha < 1:
            raise ConfigError("alpha", "must be a number >= 1")
        if not isinstance(self.num_samples, int) or self.num_samples < 0:
            raise ConfigError("num_samples", "must be an integer >= 0")
        if not isinstance(self.seed, int):
            raise ConfigError("seed", "must be an integer")
        if self.horizon is not None and (
            not isinstance(self.horizon, int) or self.horizon < 1
        ):
            raise ConfigError("horizon", "must be an integer >= 1")
        if self.threads < 1:
            raise ConfigError("threads", "must be an integer >= 1")
        bad = [f for f in self.formats if f not in FORMATS]
        if bad:
            raise ConfigError("formats", f"unknown format {bad[0]!r}")
        allowed = _SAMPLER_FIELDS[self.sampler]
        for key in self.sampler_params:
            if key not in allowed:
                raise ConfigError(
                    key, f"not a setting of the {self.sampler!r} sampler"
                )


def config_from_sources(doc: dict, overrides: dict) -> ExperimentConfig:
    """Merge a config document with CLI overrides into an ExperimentConfig.

    `overrides` wins on the top-level fields; sampler-specific keys live
    flat in the document next to them.
    """
    merged = dict(doc)
    for key, value in overrides.items():
        if value is not None:
            merged[key] = value
    known = _COMMON_FIELDS | set().union(*_SAMPLER_FIELDS.values())
    for key in merged:
        if key not in known:
            raise ConfigError(key, "unknown config field")
    for req in ("model", "sampler", "alpha"):
        if req not in merged:
            raise ConfigError(req, "required but not set")
    sampler = merged["sampler"]
    if sampler not in SAMPLERS:
        raise ConfigError("sampler", f"must be one of {', '.join(SAMPLERS)}")
    params = {
        k: v for k, v in merged.items()
        if k not in _COMMON_FIELDS
    }
    formats = merged.get("formats", list(FORMATS))
    if isinstance(formats, str):
        formats = [f.strip() for f in formats.split(",") if f.strip()]
    if not isinstance(formats, (list, tuple)):
        raise ConfigError("formats", "must be a list of format names")
    alpha = merged["alpha"]
    return ExperimentConfig(
        model=str(merged["model"]),
        sampler=sampler,
        alpha=float(alpha) if isinstance(alpha, (int, float)) else alpha,
        num_samples=merged.get("num_samples", 1000),
        seed=merged.get("seed", 0),
        horizon=merged.get("horizon"),
        outdir=merged.get("outdir"),
        formats=tuple(formats),
        threads=merged.get("threads", 1),
        sampler_params=params,
    )


def load_config_file(path: str) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError("config", str(exc)) from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(
            "config", f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}"
        ) from exc
    if not isinstance(doc, dict):
        raise ConfigError("config", f"{path}: expected a JSON object")
    return doc


def _resolve(cfg: ExperimentConfig) -> TableModel:
    try:
        return resolve_model(cfg.model)
    except ModelFileError as exc:
        raise ConfigError("model", str(exc)) from exc


def _build_params(cfg: ExperimentConfig, model: TableModel):
    horizon = cfg.horizon if cfg.horizon is not None else model.max_len
    p = dict(cfg.sampler_params)
    try:
        if cfg.sampler == "power":
            # unless configured, consider every token (no truncation):
            # the right default at toy scale
            p.setdefault("top_k", len(model.vocab))
            return PowerParams(alpha=cfg.alpha, horizon=horizon, **p)
        if cfg.sampler == "block":
            return BlockParams(alpha=cfg.alpha, horizon=horizon, **p)
        if cfg.sampler == "mcmc":
            return McmcParams(alpha=cfg.alpha, horizon=horizon, **p)
    except (ValueError, TypeError) as exc:
        raise ConfigError("params", str(exc)) from exc
    return None  # low-temp / best-of-n have no parameter object


def _run_sampler(cfg: ExperimentConfig, model: TableModel):
    """Dispatch to the configured sampler.

    Returns (sequences as absorbed tuples, cost, extra diagnostic records).
    """
    horizon = cfg.horizon if cfg.horizon is not None else model.max_len
    params = _build_params(cfg, model)
    streams = RandomStreams(cfg.seed).child("run", cfg.sampler)
    n = cfg.num_samples
    records: list = []
    if n == 0:
        return [], CostCounters(), records
    if cfg.sampler == "power":
        seqs, cost = sample_sequences(model, (), params, n, streams)
    elif cfg.sampler == "block":
        seqs, cost = sample_block_sequences(model, (), params, n, streams)
    elif cfg.sampler == "low-temp":
        seqs, cost = low_temp_sequences(
            model, (), cfg.alpha, horizon, n, streams.generator("draw")
        )
    elif cfg.sampler == "best-of-n":
        per_draw = cfg.sampler_params.get("n", 8)
        normalize = cfg.sampler_params.get("length_normalize", False)
        if not isinstance(per_draw, int) or per_draw < 1:
            raise ConfigError("n", "must be an integer >= 1")
        cost = CostCounters()
        seqs = []
        for i in range(n):
            winner, _, c = best_of_n(
                model, (), per_draw, horizon, streams.generator("draw", i),
                length_normalize=bool(normalize),
            )
            seqs.append(winner)
            cost.add(c)
    else:  # mcmc
        seqs, stages, cost, _ = mcmc_power_chains(model, (), params, n, streams)
        records.extend(stages)
    return reports.as_sequence_tuples(seqs, model), cost, records


def run_experiment(cfg: ExperimentConfig, outdir: str | Path | None = None) -> dict:
    """Run one experiment and write its report files; returns the summary."""
    out = Path(outdir if outdir is not None else _default_outdir(cfg.outdir))
    out.mkdir(parents=True, exist_ok=True)
    model = _resolve(cfg)

    t0 = time.perf_counter()
    try:
        sequences, cost, extra_records = _run_sampler(cfg, model)
    except ValueError as exc:
        # parameter combinations the model rules out (e.g. top_k > |V|)
        raise ConfigError("params", str(exc)) from exc
    wall = time.perf_counter() - t0

    exact = None
    tv = None
    notice = None
    try:
        exact = power_distribution(model, cfg.alpha)
    except EnumerationBudgetError as exc:
        notice = f"exact enumeration skipped: {exc}"

    files = []
    if "csv" in cfg.formats:
        files.append(reports.write_histogram(out, sequences, model, exact))
        if exact is not None and sequences:
            emp = empirical_distribution(sequences, model)
            tv, tv_path = reports.write_tv_table(out, emp, exact, model)
            files.append(tv_path)
        elif exact is not None:
            notice = "tv table skipped: no samples drawn"
        files.append(reports.write_cost_table(out, cost))
    elif exact is not None and sequences:
        tv = float(
            np.abs(
                _dist_vector(empirical_distribution(sequences, model), exact)
            ).sum()
            / 2
        )
    if "json" in cfg.formats:
        lines = [
            {
                "record": "sequence",
                "index": i,
                "tokens": [int(t) for t in seq],
                "label": reports.sequence_label(model, seq),
            }
            for i, seq in enumerate(sequences)
        ]
        diag = out / "diagnostics.jsonl"
        write_jsonl(lines + extra_records, diag)
        files.append(diag)
    if "png" in cfg.formats:
        files.append(
            reports.histogram_figure(
                out, sequences, model, exact,
                title=f"{cfg.sampler} on {cfg.model} (alpha={cfg.alpha:g})",
            )
        )

    summary = {
        "command": "run",
        "config": _config_dict(cfg),
        "num_sequences": len(sequences),
        "tv_to_exact": tv,
        "notice": notice,
        "cost": {**cost_account(cost), **{f"raw.{k}": v for k, v in cost.as_dict().items()}},
        "files": sorted(p.name for p in files),
    }
    if "json" in cfg.formats:
        reports.write_json(out / "summary.json", summary)
        reports.write_meta(out, {"run": wall})
    return summary


def _dist_vector(emp, exact):
    keys = sorted(set(emp.entries) | set(exact.entries))
    return np.array([emp.entries.get(k, 0.0) - exact.entries.get(k, 0.0) for k in keys])


def compare(configs: list[ExperimentConfig], outdir: str | Path | None = None) -> dict:
    """Run several configs against one model; write a joined table.

    The exact power distribution is required here (it is the comparison
    yardstick), so an enumeration-budget failure is an error rather than
    a notice.
    """
    if not configs:
        raise ConfigError("configs", "compare needs at least one config")
    models = {cfg.model for cfg in configs}
    if len(models) != 1:
        raise ConfigError(
            "model", f"compare requires one shared model, got {sorted(models)}"
        )
    out = Path(outdir if outdir is not None else _default_outdir(configs[0].outdir))
    out.mkdir(parents=True, exist_ok=True)
    model = _resolve(configs[0])

    rows = []
    walls: dict[str, float] = {}
    for i, cfg in enumerate(configs):
        exact = power_distribution(model, cfg.alpha)  # budget errors propagate
        t0 = time.perf_counter()
        sequences, cost, _ = _run_sampler(cfg, model)
        walls[f"row{i}.{cfg.sampler}"] = time.perf_counter() - t0
        tv = None
        if sequences:
            tv = float(
                np.abs(_dist_vector(empirical_distribution(sequences, model), exact)).sum() / 2
            )
        account = cost_account(cost)
        rows.append(
            {
                "sampler": cfg.sampler,
                "alpha": cfg.alpha,
                "seed": cfg.seed,
                "num_samples": cfg.num_samples,
                "tv": tv,
                "sequences_generated": account["sequences_generated"],
                "tokens_generated": account["tokens_generated"],
                "model_calls": account["model_calls"],
            }
        )

    header = list(rows[0].keys())
    reports.write_csv(
        out / "compare.csv",
        header,
        [tuple("" if r[k] is None else r[k] for k in header) for r in rows],
    )
    summary = {"command": "compare", "model": configs[0].model, "rows": rows}
    reports.write_json(out / "summary.json", summary)
    formats = set().union(*(cfg.formats for cfg in configs))
    if "png" in formats:
        reports.compare_figure(out, rows)
    reports.write_meta(out, walls)
    return summary


def validate_file(path: str) -> list[str]:
    """Violations in a model file; empty list means it is valid."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        return [f"unreadable: {exc}"]
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        return [f"parse error: line {exc.lineno} column {exc.colno}: {exc.msg}"]
    return validate_model_dict(doc)


def run_bias_lab(
    outdir: str | Path,
    *,
    replicates: int = 20000,
    m_grid: tuple[int, ...] = biaslab.DEFAULT_M_GRID,
    seed: int = 0,
    threads: int = 1,
    formats: tuple[str, ...] = FORMATS,
) -> dict:
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    results = biaslab.run_bias_suite(
        m_grid=m_grid, replicates=replicates, master_seed=seed, threads=threads
    )
    wall = time.perf_counter() - t0
    if "csv" in formats:
        reports.write_bias_tables(out, results)
    if "png" in formats:
        reports.decay_figure(out, results)
    summary = {
        "command": "bias-lab",
        "replicates": replicates,
        "m_grid": list(m_grid),
        "seed": seed,
        "fixtures": [
            {
                "fixture": r.fixture,
                "alpha": r.alpha,
                "plain": r.plain_fit.describe(),
                "jackknife": r.jackknife_fit.describe(),
                "plain_slope": None if not r.plain_fit.fitted else r.plain_fit.slope,
                "jackknife_slope": None if not r.jackknife_fit.fitted else r.jackknife_fit.slope,
            }
            for r in sorted(results, key=lambda r: r.fixture)
        ],
    }
    if "json" in formats:
        reports.write_json(out / "summary.json", summary)
        reports.write_meta(out, {"bias-lab": wall})
    return summary


def _default_outdir(config_outdir: str | None) -> str:
    if config_outdir:
        return config_outdir
    return os.environ.get(OUTDIR_ENV, DEFAULT_OUTDIR)


def _config_dict(cfg: ExperimentConfig) -> dict:
    doc = {
        "model": cfg.model,
        "sampler": cfg.sampler,
        "alpha": cfg.alpha,
        "num_samples": cfg.num_samples,
        "seed": cfg.seed,
        "horizon": cfg.horizon,
        "formats": list(cfg.formats),
    }
    doc.update(cfg.sampler_params)
    return doc


def _add_run_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="JSON config file")
    parser.add_argument("--model", help="built-in model name or model file path")
    parser.add_argument("--sampler", choices=SAMPLERS)
    parser.add_argument("--alpha", type=float, help="sharpening exponent (>= 1)")
    parser.add_argument("--num-samples", type=int, dest="num_samples")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--horizon", type=int)
    parser.add_argument("--outdir")
    parser.add_argument(
        "--formats", help=f"comma-separated subset of {','.join(FORMATS)}"
    )
    parser.add_argument("--threads", type=int)


def _overrides(args: argparse.Namespace) -> dict:
    keys = (
        "model", "sampler", "alpha", "num_samples", "seed",
        "horizon", "outdir", "formats", "threads",
    )
    return {k: getattr(args, k, None) for k in keys}


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="powersample",
        description="Sample from the power distribution of small sequence models.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one sampler and write reports")
    _add_run_flags(p_run)

    p_cmp = sub.add_parser("compare", help="run several configs on one model")
    p_cmp.add_argument("configs", nargs="+", help="JSON config files")
    p_cmp.add_argument("--outdir")
    p_cmp.add_argument("--seed", type=int, help="override every config's seed")

    p_val = sub.add_parser("validate", help="check a model file")
    p_val.add_argument("path")

    p_bias = sub.add_parser("bias-lab", help="estimator bias decay measurements")
    p_bias.add_argument("--outdir")
    p_bias.add_argument("--replicates", type=int, default=20000)
    p_bias.add_argument("--m-grid", default="2,4,8,16,32", dest="m_grid")
    p_bias.add_argument("--seed", type=int, default=0)
    p_bias.add_argument("--threads", type=int, default=1)
    p_bias.add_argument(
        "--formats", default=",".join(FORMATS),
        help=f"comma-separated subset of {','.join(FORMATS)}",
    )

    args = parser.parse_args(argv)
    try:
        if args.command == "run":
            doc = load_config_file(args.config) if args.config else {}
            cfg = config_from_sources(doc, _overrides(args))
            summary = run_experiment(cfg)
            tv = summary["tv_to_exact"]
            print(f"wrote {', '.join(summary['files'])}")
            if tv is not None:
                print(f"tv_to_exact = {tv:.6f}")
            elif summary["notice"]:
                print(summary["notice"])
            return 0
        if args.command == "compare":
            cfgs = []
            for path in args.configs:
                doc = load_config_file(path)
                if args.seed is not None:
                    doc["seed"] = args.seed
                cfgs.append(config_from_sources(doc, {}))
            summary = compare(cfgs, outdir=args.outdir)
            for row in summary["rows"]:
                tv = "n/a" if row["tv"] is None else f"{row['tv']:.6f}"
                print(
                    f"{row['sampler']:10s} tv={tv} "
                    f"tokens={row['tokens_generated']}"
                )
            return 0
        if args.command == "validate":
            problems = validate_file(args.path)
            if not problems:
                print(f"ok: {args.path}")
                return 0
            for p in problems:
                print(f"violation: {p}", file=sys.stderr)
            return 2
        # bias-lab
        grid = tuple(int(x) for x in str(args.m_grid).split(",") if x.strip())
        formats = tuple(f.strip() for f in args.formats.split(",") if f.strip())
        summary = run_bias_lab(
            args.outdir or _default_outdir(None),
            replicates=args.replicates,
            m_grid=grid,
            seed=args.seed,
            threads=args.threads,
            formats=formats,
        )
        for fx in summary["fixtures"]:
            print(f"{fx['fixture']:8s} {fx['plain']} | {fx['jackknife']}")
        return 0
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except ModelFileError as exc:
        print(f"model error: {exc}", file=sys.stderr)
        return 2
    except EnumerationBudgetError as exc:
        print(f"oracle budget exceeded: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
