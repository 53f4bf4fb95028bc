"""Run records and cost bookkeeping shared by all samplers.

Every sampler in this package reports its work through the same two
channels: a `CostCounters` tally (tokens drawn, sequences drawn,
probability evaluations) and a list of per-step/per-stage records that
serialize to JSON-lines for offline inspection.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

__all__ = [
    "CostCounters",
    "StepRecord",
    "BlockStageRecord",
    "McmcStageRecord",
    "record_to_dict",
    "write_jsonl",
]


@dataclass
class CostCounters:
    """Work done against the model, in model-call units.

    sequences      -- completed draws of a (partial) sequence: scoring
                      rollouts, block proposals, best-of-n candidates,
                      MH suffix proposals.
    sampled_tokens -- tokens drawn from some model distribution,
                      including the first token of every scoring rollout.
    scored_tokens  -- tokens whose probability was looked up without
                      sampling (log-likelihood evaluations).
    clamp_events   -- steps/stages where the jackknife estimate needed
                      the clamp policy.
    """

    sequences: int = 0
    sampled_tokens: int = 0
    scored_tokens: int = 0
    clamp_events: int = 0

    def add(self, other: "CostCounters") -> "CostCounters":
        self.sequences += other.sequences
        self.sampled_tokens += other.sampled_tokens
        self.scored_tokens += other.scored_tokens
        self.clamp_events += other.clamp_events
        return self

    @property
    def model_calls(self) -> int:
        return self.sampled_tokens + self.scored_tokens

    def as_dict(self) -> dict:
        return {
            "sequences": self.sequences,
            "sampled_tokens": self.sampled_tokens,
            "scored_tokens": self.scored_tokens,
            "model_calls": self.model_calls,
            "clamp_events": self.clamp_events,
        }


@dataclass
class StepRecord:
    """One token-level sampler step (kind: power | final-low-temp)."""

    t: int
    kind: str
    candidates: list[int]
    p_base: list[float]
    log_scale: list[float]
    p_plain: list[float]
    p_jk: list[float]
    clamped: bool
    chosen: int


@dataclass
class BlockStageRecord:
    """One block-sampler stage (kind: power-block | tail-low-temp)."""

    stage: int
    start: int
    kind: str
    blocks: list[list[int]]
    multiplicity: list[int]
    log_base: list[float]
    log_scale: list[float]
    p_plain: list[float]
    p_jk: list[float]
    clamped: bool
    short_candidate_set: bool
    chosen: list[int]


@dataclass
class McmcStageRecord:
    """One stage of the staged Metropolis-Hastings chain."""

    stage: int
    prefix_len: int
    steps: int
    accepted: int

    @property
    def acceptance_rate(self) -> float:
        return self.accepted / self.steps if self.steps else 0.0


def record_to_dict(record) -> dict:
    out = dataclasses.asdict(record)
    out["record"] = type(record).__name__
    if isinstance(record, McmcStageRecord):
        out["acceptance_rate"] = record.acceptance_rate
    return out


def _jsonable(value):
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, np.generic):
        return value.item()
    raise TypeError(f"cannot serialize {type(value).__name__}")


def write_jsonl(records, path: str | Path) -> None:
    """One JSON object per line; keys sorted for stable bytes."""
    with open(path, "w") as fh:
        for rec in records:
            doc = rec if isinstance(rec, dict) else record_to_dict(rec)
            fh.write(json.dumps(doc, sort_keys=True, default=_jsonable) + "\n")
