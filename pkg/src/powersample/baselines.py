"""Comparison samplers: low temperature, best-of-n, and staged MCMC.

These share the model interface and cost bookkeeping with the power
samplers so runs are directly comparable:

* low-temperature decoding sharpens each next-token conditional to
  p^alpha locally — cheap, but a different distribution from the
  global power distribution it is often confused with;
* best-of-n draws n base-model sequences and keeps the most likely;
* staged Metropolis-Hastings targets the power distribution exactly in
  the limit: the sequence grows block by block, and within each stage
  MH steps resample a uniformly chosen suffix from a low-temperature
  proposal, accepting with the standard ratio.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .diagnostics import CostCounters, McmcStageRecord
from .model import NEG_INF, Prefix, START, TableModel, rollout
from .rng import RandomStreams, sample_categorical_rows

__all__ = [
    "McmcParams",
    "ScoredSequence",
    "McmcResult",
    "low_temp_sample",
    "low_temp_sequences",
    "best_of_n",
    "mcmc_power_sample",
    "mcmc_power_chains",
    "cost_account",
]


@dataclass(frozen=True)
class McmcParams:
    """Staged Metropolis-Hastings configuration.

    `proposal_temperature` is the temperature of the autoregressive
    proposal; the default 1/alpha makes the proposal the low-temperature
    sampler matched to the target exponent.
    """

    alpha: float
    horizon: int
    block_size: int = 2
    steps_per_stage: int = 10
    proposal_temperature: float | None = None

    def __post_init__(self):
        if self.alpha < 1:
            raise ValueError("alpha must be >= 1")
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if self.block_size < 1:
            raise ValueError("block_size must be >= 1")
        if self.steps_per_stage < 1:
            raise ValueError("steps_per_stage must be >= 1")
        if self.proposal_temperature is not None and self.proposal_temperature <= 0:
            raise ValueError("proposal_temperature must be positive")

    def proposal_exponent(self) -> float:
        temp = (
            1.0 / self.alpha
            if self.proposal_temperature is None
            else self.proposal_temperature
        )
        return 1.0 / temp

    def stage_caps(self) -> list[int]:
        """Prefix lengths after each stage: B, 2B, ..., horizon."""
        caps = list(range(self.block_size, self.horizon, self.block_size))
        caps.append(self.horizon)
        return caps


@dataclass
class ScoredSequence:
    tokens: tuple[int, ...]
    log_prob: float
    score: float


@dataclass
class McmcResult:
    tokens: tuple[int, ...]
    stages: list[McmcStageRecord]
    trace: list[tuple[int, ...]]
    cost: CostCounters


def low_temp_sample(
    model: TableModel,
    query: tuple[int, ...],
    alpha: float,
    horizon: int,
    rng: np.random.Generator,
) -> tuple[int, ...]:
    """One sequence from per-token low-temperature sampling (p^alpha
    renormalized at every step); stops at eos."""
    if alpha < 1:
        raise ValueError("alpha must be >= 1")
    return rollout(model.sharpened(alpha), Prefix(tuple(query)), horizon, rng)


def low_temp_sequences(
    model: TableModel,
    query: tuple[int, ...],
    alpha: float,
    horizon: int,
    n: int,
    rng: np.random.Generator,
) -> tuple[np.ndarray, CostCounters]:
    """n low-temperature sequences, eos-padded to the horizon."""
    sharp = model.sharpened(alpha)
    ctx = np.full(n, sharp.context_index(Prefix(tuple(query))))
    tokens, _, lengths, _ = sharp.rollout_batch(ctx, horizon, rng)
    return tokens, CostCounters(sequences=n, sampled_tokens=int(lengths.sum()))


def best_of_n(
    model: TableModel,
    query: tuple[int, ...],
    n: int,
    horizon: int,
    rng: np.random.Generator,
    length_normalize: bool = False,
) -> tuple[tuple[int, ...], list[ScoredSequence], CostCounters]:
    """Draw n base-model sequences, return the highest-scoring one.

    The score is total log-likelihood, or the per-token mean when
    `length_normalize` is set.  Ties go to the earliest draw.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    ctx = np.full(n, model.context_index(Prefix(tuple(query))))
    tokens, logp, lengths, _ = model.rollout_batch(ctx, horizon, rng)
    scores = logp / lengths if length_normalize else logp
    winner = int(np.argmax(scores))  # argmax takes the first maximum
    candidates = [
        ScoredSequence(
            tokens=tuple(int(t) for t in tokens[i, : lengths[i]]),
            log_prob=float(logp[i]),
            score=float(scores[i]),
        )
        for i in range(n)
    ]
    cost = CostCounters(sequences=n, sampled_tokens=int(lengths.sum()))
    return candidates[winner].tokens, candidates, cost


def _context_after(
    model: TableModel, query: tuple[int, ...], states: np.ndarray, upto: np.ndarray
) -> np.ndarray:
    """Context index of (query + states[i, :upto[i]]) for every row."""
    n, _ = states.shape
    order = model.context_order
    q = np.array(query, dtype=np.int64)
    full = (
        np.concatenate([np.tile(q, (n, 1)), states], axis=1)
        if q.size
        else np.asarray(states, dtype=np.int64)
    )
    end = np.asarray(upto) + q.size
    idx = np.zeros(n, dtype=np.int64)
    base = len(model.vocab) + 1
    start_digit = len(model.vocab)
    for offset in range(order, 0, -1):
        col = end - offset
        digits = np.full(n, start_digit, dtype=np.int64)
        inside = np.flatnonzero(col >= 0)
        if inside.size and full.shape[1]:
            digits[inside] = full[inside, col[inside]]
        idx = idx * base + digits
    return idx


def mcmc_power_chains(
    model: TableModel,
    query: tuple[int, ...],
    params: McmcParams,
    n_chains: int,
    streams: RandomStreams,
    keep_trace: bool = False,
) -> tuple[np.ndarray, list[McmcStageRecord], CostCounters, list[tuple[int, ...]]]:
    """Run n staged MH chains in lockstep; returns eos-padded states.

    Every chain follows the same stage schedule: extend the state to
    the next length cap using the proposal model, then `steps_per_stage`
    MH steps, each resampling from a uniformly chosen position to the
    cap.  Acceptance counts are aggregated across chains per stage.
    """
    query = tuple(query)
    eos = model.vocab.eos_id
    proposal = model.sharpened(params.proposal_exponent())
    alpha = params.alpha
    cost = CostCounters()
    stages: list[McmcStageRecord] = []
    states = np.zeros((n_chains, 0), dtype=np.int64)
    prev_cap = 0
    trace: list[tuple[int, ...]] = []

    for stage_no, cap in enumerate(params.stage_caps()):
        grow = cap - prev_cap
        ctx = _context_after(model, query, states, np.full(n_chains, prev_cap))
        ext_rng = streams.generator("stage", stage_no, "extend")
        ext_tokens, _, ext_lens, _ = proposal.rollout_batch(ctx, grow, ext_rng)
        states = np.concatenate([states, ext_tokens.astype(np.int64)], axis=1)
        cost.sequences += n_chains
        cost.sampled_tokens += int(ext_lens.sum())
        if keep_trace:
            trace.append(tuple(int(t) for t in states[0]))

        root_ctx = _context_after(model, query, states, np.zeros(n_chains, dtype=np.int64))
        log_target = alpha * model.log_prob_rows(root_ctx, states)
        cost.scored_tokens += n_chains * cap
        accepted_total = 0

        for step in range(params.steps_per_stage):
            node = streams.child("stage", stage_no, "step", step)
            pos_rng = node.generator("position")
            pos = pos_rng.integers(0, cap, size=n_chains)
            new_states = states.copy()
            log_q_fwd = np.zeros(n_chains)
            log_q_rev = np.zeros(n_chains)
            regen_rng = node.generator("regen")
            for p_val in range(cap):  # group chains by resample position
                rows = np.flatnonzero(pos == p_val)
                if rows.size == 0:
                    continue
                suffix_len = cap - p_val
                ctx_p = _context_after(
                    model, query, states[rows], np.full(rows.size, p_val)
                )
                toks, q_fwd, lens, _ = proposal.rollout_batch(
                    ctx_p, suffix_len, regen_rng
                )
                new_states[rows, p_val:] = toks
                log_q_fwd[rows] = q_fwd
                log_q_rev[rows] = proposal.log_prob_rows(
                    ctx_p, states[rows, p_val:]
                )
                cost.sequences += rows.size
                cost.sampled_tokens += int(lens.sum())
                cost.scored_tokens += rows.size * suffix_len
            new_log_target = alpha * model.log_prob_rows(root_ctx, new_states)
            cost.scored_tokens += n_chains * cap
            log_ratio = new_log_target + log_q_rev - log_target - log_q_fwd
            accept_rng = node.generator("accept")
            u = accept_rng.random(n_chains)
            accept = np.log(u) < log_ratio
            states[accept] = new_states[accept]
            log_target[accept] = new_log_target[accept]
            accepted_total += int(accept.sum())
            if keep_trace:
                trace.append(tuple(int(t) for t in states[0]))

        stages.append(
            McmcStageRecord(
                stage=stage_no,
                prefix_len=cap,
                steps=params.steps_per_stage * n_chains,
                accepted=accepted_total,
            )
        )
        prev_cap = cap

    out = np.full((n_chains, params.horizon), eos, dtype=np.int16)
    out[:, : states.shape[1]] = states
    return out, stages, cost, trace


def mcmc_power_sample(
    model: TableModel,
    query: tuple[int, ...],
    params: McmcParams,
    streams: RandomStreams,
) -> McmcResult:
    """One staged-MH chain; the multi-chain runner with a trace attached."""
    states, stages, cost, trace = mcmc_power_chains(
        model, query, params, 1, streams, keep_trace=True
    )
    tokens = tuple(int(t) for t in states[0])
    if model.vocab.eos_id in tokens:
        tokens = tokens[: tokens.index(model.vocab.eos_id) + 1]
    return McmcResult(tokens=tokens, stages=stages, trace=trace, cost=cost)


def cost_account(diag) -> dict:
    """Uniform cost triple for cross-sampler comparison tables."""
    if isinstance(diag, CostCounters):
        counters = diag
    elif hasattr(diag, "cost") and isinstance(diag.cost, CostCounters):
        counters = diag.cost
    elif isinstance(diag, dict) and {"sequences", "sampled_tokens"} <= set(diag):
        counters = CostCounters(
            sequences=int(diag["sequences"]),
            sampled_tokens=int(diag["sampled_tokens"]),
            scored_tokens=int(diag.get("scored_tokens", 0)),
        )
    else:
        raise TypeError(f"unrecognized diagnostics object: {type(diag).__name__}")
    return {
        "sequences_generated": counters.sequences,
        "tokens_generated": counters.sampled_tokens,
        "model_calls": counters.model_calls,
    }
