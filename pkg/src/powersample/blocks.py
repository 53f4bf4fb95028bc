"""Block-level Monte Carlo power sampling.

Instead of scoring single tokens, each stage proposes whole blocks of B
tokens from the base model, keeps the Top-K by joint base likelihood,
estimates each kept block's scale factor from M lookahead rollouts of a
bounded horizon H, applies the same jackknife correction as the
token-level sampler, and samples a block.  The final (tail) block needs
no lookahead — its scale factor is identically 1 — so it is drawn by
block low-temperature sampling: propose tail blocks, weight them by
base-likelihood^alpha, renormalize.

Stage layout for a horizon of T tokens: full power-scored stages start
at offsets 0, B, 2B, ... while at least one token remains after the
block; the rest (between 1 and B tokens) is the tail.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .diagnostics import BlockStageRecord, CostCounters
from .model import Prefix, TableModel
from .rng import RandomStreams, sample_categorical
from .sampler import CLAMP_POLICIES, CandidateEstimates, _softmax, power_estimates

__all__ = [
    "BlockParams",
    "BlockCandidate",
    "BlockResult",
    "propose_blocks",
    "top_k_blocks",
    "score_blocks",
    "sample_block_sequence",
    "sample_block_sequences",
    "block_stage_starts",
    "block_token_bound",
]


def _stage_schedule(value, n_stages: int, name: str) -> tuple[int, ...]:
    if value is None or np.isscalar(value):
        return (value if value is None else int(value),) * n_stages
    sched = tuple(int(v) for v in value)
    if len(sched) != n_stages:
        raise ValueError(f"{name} schedule has {len(sched)} entries, expected {n_stages}")
    return sched


def block_stage_starts(horizon: int, block_size: int) -> tuple[list[int], int]:
    """(power-stage start offsets, tail start offset).

    A stage at offset s is power-scored only when tokens remain after
    its block (s + B < T); the remaining 1..B tokens form the tail.
    """
    starts = []
    s = 0
    while s + block_size < horizon:
        starts.append(s)
        s += block_size
    return starts, s


@dataclass(frozen=True)
class BlockParams:
    """Knobs for the block sampler.

    `num_proposals` (L), `top_k` (K), `num_rollouts` (M), and
    `rollout_horizon` (H) accept scalars or per-stage schedules.
    `rollout_horizon=None` means "to the end of the sequence".  The
    tail stage uses `tail_proposals`/`tail_top_k` (defaulting to the
    stage values) and needs no rollouts.
    """

    alpha: float
    horizon: int
    block_size: int = 2
    num_proposals: int | tuple[int, ...] = 4
    top_k: int | tuple[int, ...] = 4
    num_rollouts: int | tuple[int, ...] = 8
    rollout_horizon: int | tuple | None = None
    tail_proposals: int | None = None
    tail_top_k: int | None = None
    clamp_policy: str = "clamp-renormalize"

    def __post_init__(self):
        if self.alpha < 1:
            raise ValueError("alpha must be >= 1")
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if self.block_size < 1:
            raise ValueError("block_size must be >= 1")
        if self.clamp_policy not in CLAMP_POLICIES:
            raise ValueError(f"clamp_policy must be one of {CLAMP_POLICIES}")
        n = len(self.stage_starts())
        for name, lo in (("num_proposals", 1), ("top_k", 1), ("num_rollouts", 2)):
            for v in _stage_schedule(getattr(self, name), n, name):
                if v < lo:
                    raise ValueError(f"{name} must be >= {lo} at every stage")
        for k, l in zip(self.k_schedule(), self.l_schedule()):
            if k > l:
                raise ValueError("top_k cannot exceed num_proposals")
        for h in self.h_schedule():
            if h is not None and h < 0:
                raise ValueError("rollout_horizon must be >= 0")
        if self.tail_len() < 1:
            raise AssertionError("internal: tail must hold at least one token")

    def stage_starts(self) -> list[int]:
        return block_stage_starts(self.horizon, self.block_size)[0]

    def tail_start(self) -> int:
        return block_stage_starts(self.horizon, self.block_size)[1]

    def tail_len(self) -> int:
        return self.horizon - self.tail_start()

    def l_schedule(self):
        return _stage_schedule(self.num_proposals, len(self.stage_starts()), "num_proposals")

    def k_schedule(self):
        return _stage_schedule(self.top_k, len(self.stage_starts()), "top_k")

    def m_schedule(self):
        return _stage_schedule(self.num_rollouts, len(self.stage_starts()), "num_rollouts")

    def h_schedule(self):
        return _stage_schedule(self.rollout_horizon, len(self.stage_starts()), "rollout_horizon")

    def effective_h(self, stage: int) -> int:
        """Rollout horizon actually usable at a stage (capped at T)."""
        start = self.stage_starts()[stage]
        rest = self.horizon - start - self.block_size
        h = self.h_schedule()[stage]
        return rest if h is None else min(h, rest)

    def tail_l(self) -> int:
        return self.tail_proposals if self.tail_proposals is not None else (
            self.l_schedule()[-1] if self.stage_starts() else
            (self.num_proposals if np.isscalar(self.num_proposals) else self.num_proposals[-1])
        )

    def tail_k(self) -> int:
        k = self.tail_top_k if self.tail_top_k is not None else (
            self.k_schedule()[-1] if self.stage_starts() else
            (self.top_k if np.isscalar(self.top_k) else self.top_k[-1])
        )
        return min(k, self.tail_l())


@dataclass
class BlockCandidate:
    """A proposed block: up to `block_size` tokens, shorter iff it hit eos."""

    tokens: tuple[int, ...]
    log_base: float
    multiplicity: int = 1


@dataclass
class BlockResult:
    tokens: tuple[int, ...]
    stages: list[BlockStageRecord]
    cost: CostCounters


def propose_blocks(
    model: TableModel,
    prefix: Prefix,
    block_size: int,
    num_proposals: int,
    rng: np.random.Generator,
) -> tuple[list[BlockCandidate], CostCounters]:
    """Draw L i.i.d. blocks from the base model and merge duplicates.

    Duplicates are merged (multiplicity recorded) so the scoring set is
    a proper set; order is first appearance, which is deterministic
    given the stream.
    """
    if num_proposals < 1:
        raise ValueError("num_proposals must be >= 1")
    ctx = np.full(num_proposals, model.context_index(prefix))
    tokens, logp, lengths, _ = model.rollout_batch(ctx, block_size, rng)
    merged: dict[tuple[int, ...], BlockCandidate] = {}
    for row, lp, ln in zip(tokens, logp, lengths):
        key = tuple(int(t) for t in row[:ln])
        hit = merged.get(key)
        if hit is None:
            merged[key] = BlockCandidate(tokens=key, log_base=float(lp))
        else:
            hit.multiplicity += 1
    cost = CostCounters(sequences=num_proposals, sampled_tokens=int(lengths.sum()))
    return list(merged.values()), cost


def top_k_blocks(
    blocks: list[BlockCandidate], k: int
) -> tuple[list[BlockCandidate], bool]:
    """K most likely blocks under the base model.

    Ties break lexicographically on token ids.  When fewer than k
    distinct blocks exist, all are returned and the second element of
    the result is True (a warning flag, not an error).
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    ranked = sorted(blocks, key=lambda b: (-b.log_base, b.tokens))
    return ranked[:k], len(blocks) < k


def score_blocks(
    model: TableModel,
    prefix: Prefix,
    blocks: list[BlockCandidate],
    alpha: float,
    num_rollouts: int,
    rollout_horizon: int,
    rng: np.random.Generator,
    clamp_policy: str = "clamp-renormalize",
) -> tuple[CandidateEstimates, CostCounters]:
    """Estimate the block-level power distribution over a kept set.

    Per block: M lookahead rollouts of `rollout_horizon` tokens from
    prefix+block, averaged into a scale-factor estimate, then the same
    plain/jackknife machinery as the token sampler, with the block's
    joint base likelihood in place of a single token's probability.
    Blocks that already ended in eos are absorbed: their rollouts are
    empty and their scale factor is exactly 1.
    """
    if num_rollouts < 2:
        raise ValueError("num_rollouts must be >= 2 for the jackknife")
    k = len(blocks)
    ctx = np.array(
        [model.context_index(Prefix(prefix.query, prefix.generated + b.tokens)) for b in blocks]
    )
    _, logp, lengths, _ = model.rollout_batch(
        np.repeat(ctx, num_rollouts), rollout_horizon, rng
    )
    log_weights = ((alpha - 1.0) * logp).reshape(k, num_rollouts)
    log_base = np.array([b.log_base for b in blocks])
    p_plain, p_jk, log_scale, log_scale_loo, clamped = power_estimates(
        alpha * log_base, log_weights, clamp_policy
    )
    est = CandidateEstimates(
        candidates=np.arange(k),  # indices into `blocks`
        log_base=log_base,
        log_scale=log_scale,
        log_scale_loo=log_scale_loo,
        p_plain=p_plain,
        p_jk=p_jk,
        clamped=bool(clamped),
    )
    cost = CostCounters(
        sequences=k * num_rollouts,
        sampled_tokens=int(lengths.sum()),
        clamp_events=int(clamped),
    )
    return est, cost


def _tail_stage(
    model: TableModel,
    prefix: Prefix,
    params: BlockParams,
    streams: RandomStreams,
    stage_no: int,
    start: int,
) -> tuple[tuple[int, ...], BlockStageRecord, CostCounters]:
    """Final 1..B tokens via block low-temperature sampling.

    The tail's scale factor is identically 1, so the block power
    distribution reduces to base-likelihood^alpha over tail blocks.
    """
    tail_len = params.horizon - start
    rng = streams.generator("stage", stage_no, "propose")
    blocks, cost = propose_blocks(model, prefix, tail_len, params.tail_l(), rng)
    kept, short = top_k_blocks(blocks, params.tail_k())
    log_base = np.array([b.log_base for b in kept])
    p = _softmax(params.alpha * log_base, axis=-1)
    draw = streams.generator("stage", stage_no, "draw")
    chosen = kept[sample_categorical(draw, p)]
    record = BlockStageRecord(
        stage=stage_no,
        start=start,
        kind="tail-low-temp",
        blocks=[list(b.tokens) for b in kept],
        multiplicity=[b.multiplicity for b in kept],
        log_base=log_base.tolist(),
        log_scale=[0.0] * len(kept),
        p_plain=p.tolist(),
        p_jk=p.tolist(),
        clamped=False,
        short_candidate_set=short,
        chosen=list(chosen.tokens),
    )
    return chosen.tokens, record, cost


def sample_block_sequence(
    model: TableModel,
    query: tuple[int, ...],
    params: BlockParams,
    streams: RandomStreams,
) -> BlockResult:
    """Generate one sequence block by block.

    Power-scored stages run while tokens remain past the block; the
    remainder is drawn in one tail stage.  Generation stops early when
    a chosen block contains eos.
    """
    prefix = Prefix(tuple(query))
    eos = model.vocab.eos_id
    cost = CostCounters()
    stages: list[BlockStageRecord] = []
    starts = params.stage_starts()
    l_sched, k_sched, m_sched = params.l_schedule(), params.k_schedule(), params.m_schedule()

    for stage_no, start in enumerate(starts):
        blocks, c1 = propose_blocks(
            model,
            prefix,
            params.block_size,
            l_sched[stage_no],
            streams.generator("stage", stage_no, "propose"),
        )
        kept, short = top_k_blocks(blocks, k_sched[stage_no])
        est, c2 = score_blocks(
            model,
            prefix,
            kept,
            params.alpha,
            m_sched[stage_no],
            params.effective_h(stage_no),
            streams.generator("stage", stage_no, "rollouts"),
            params.clamp_policy,
        )
        draw = streams.generator("stage", stage_no, "draw")
        chosen = kept[sample_categorical(draw, est.p_jk)]
        cost.add(c1).add(c2)
        stages.append(
            BlockStageRecord(
                stage=stage_no,
                start=start,
                kind="power-block",
                blocks=[list(b.tokens) for b in kept],
                multiplicity=[b.multiplicity for b in kept],
                log_base=est.log_base.tolist(),
                log_scale=est.log_scale.tolist(),
                p_plain=est.p_plain.tolist(),
                p_jk=est.p_jk.tolist(),
                clamped=est.clamped,
                short_candidate_set=short,
                chosen=list(chosen.tokens),
            )
        )
        prefix = prefix.extended(*chosen.tokens)
        if eos in chosen.tokens:
            return BlockResult(prefix.generated, stages, cost)

    tail_tokens, record, c3 = _tail_stage(
        model, prefix, params, streams, len(starts), params.tail_start()
    )
    cost.add(c3)
    stages.append(record)
    prefix = prefix.extended(*tail_tokens)
    return BlockResult(prefix.generated, stages, cost)


def sample_block_sequences(
    model: TableModel,
    query: tuple[int, ...],
    params: BlockParams,
    n: int,
    streams: RandomStreams,
) -> tuple[np.ndarray, CostCounters]:
    """n independent block-sampled sequences, eos-padded to the horizon."""
    eos = model.vocab.eos_id
    out = np.full((n, params.horizon), eos, dtype=np.int16)
    cost = CostCounters()
    for i in range(n):
        res = sample_block_sequence(model, query, params, streams.child("seq", i))
        out[i, : len(res.tokens)] = res.tokens
        cost.add(res.cost)
    return out, cost


def block_token_bound(params: BlockParams) -> int:
    """Worst-case sampled tokens for one block-sampled sequence.

    Proposal blocks contribute L*B per stage, lookahead rollouts K*M*H
    (with H capped at the remaining horizon), and the tail contributes
    its proposals; fixed-length runs hit the bound exactly.
    """
    total = 0
    for stage_no in range(len(params.stage_starts())):
        total += params.l_schedule()[stage_no] * params.block_size
        total += (
            params.k_schedule()[stage_no]
            * params.m_schedule()[stage_no]
            * params.effective_h(stage_no)
        )
    total += params.tail_l() * params.tail_len()
    return total
