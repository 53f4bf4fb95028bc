"""Token-level Monte Carlo sampler for the power distribution.

One generation step works on a candidate set: take the Top-K next
tokens under the base model, estimate each candidate's scale factor
(the sum of p^alpha over its possible completions) from M base-model
rollouts, form the normalized per-candidate power estimate, apply the
jackknife bias correction over the M rollouts, and sample.  The final
token needs no rollouts: its scale factor is identically 1, so the
step reduces to low-temperature sampling over the full vocabulary.

The estimator functions are written over arrays with arbitrary leading
batch dimensions; the bias-measurement harness and the batched
sequence runner reuse them on (replicates, K, M) stacks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .diagnostics import CostCounters, StepRecord
from .model import NEG_INF, Prefix, TableModel, low_temp_next_dist, next_token_dist
from .rng import RandomStreams, sample_categorical, sample_categorical_rows

__all__ = [
    "PowerParams",
    "CandidateEstimates",
    "SampleResult",
    "top_k_candidates",
    "estimate_scale_factor",
    "jackknife_estimates",
    "power_estimates",
    "loo_log_means",
    "sample_step",
    "sample_sequence",
    "sample_sequences",
    "token_cost_bound",
    "CLAMP_POLICIES",
]

CLAMP_POLICIES = ("clamp-renormalize", "fallback-plain")


def _as_schedule(value, horizon: int, name: str) -> tuple[int, ...]:
    if np.isscalar(value):
        return (int(value),) * horizon
    sched = tuple(int(v) for v in value)
    if len(sched) != horizon:
        raise ValueError(f"{name} schedule has {len(sched)} entries, expected {horizon}")
    return sched


@dataclass(frozen=True)
class PowerParams:
    """Knobs for the token-level sampler.

    `top_k` and `num_rollouts` may be single integers or per-step
    schedules of length `horizon` (the last entry is unused: the final
    token is drawn by low-temperature sampling without rollouts).
    """

    alpha: float
    horizon: int
    top_k: int | tuple[int, ...] = 8
    num_rollouts: int | tuple[int, ...] = 8
    clamp_policy: str = "clamp-renormalize"

    def __post_init__(self):
        if self.alpha < 1:
            raise ValueError("alpha must be >= 1")
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if self.clamp_policy not in CLAMP_POLICIES:
            raise ValueError(f"clamp_policy must be one of {CLAMP_POLICIES}")
        for k in self.k_schedule():
            if k < 2:
                raise ValueError("top_k must be >= 2 at every step")
        for m in self.m_schedule():
            if m < 2:
                raise ValueError("num_rollouts must be >= 2 at every step")

    def k_schedule(self) -> tuple[int, ...]:
        return _as_schedule(self.top_k, self.horizon, "top_k")

    def m_schedule(self) -> tuple[int, ...]:
        return _as_schedule(self.num_rollouts, self.horizon, "num_rollouts")


@dataclass
class CandidateEstimates:
    """Everything one step's estimator produced for its candidate set."""

    candidates: np.ndarray  # (K,) token ids
    log_base: np.ndarray  # (K,) log p(candidate | prefix)
    log_scale: np.ndarray  # (K,) log of the estimated scale factor
    log_scale_loo: np.ndarray | None  # (K, M) leave-one-out versions
    p_plain: np.ndarray  # (K,) plain normalized power estimate
    p_jk: np.ndarray  # (K,) jackknife-corrected estimate, post clamp policy
    clamped: bool


@dataclass
class SampleResult:
    tokens: tuple[int, ...]
    steps: list[StepRecord]
    cost: CostCounters


def top_k_candidates(model: TableModel, prefix: Prefix, k: int) -> np.ndarray:
    """The k most probable next tokens; ties broken by ascending id."""
    p = next_token_dist(model, prefix)
    if not 1 <= k <= p.size:
        raise ValueError(f"k={k} out of range for |V|={p.size}")
    return np.argsort(-p, kind="stable")[:k]


def loo_log_means(log_weights: np.ndarray) -> np.ndarray:
    """log of leave-one-out means along the last axis.

    For input (..., M), entry s is log[(1/(M-1)) * sum of exp(weights)
    with index s removed].  Built from running log-sum-exp prefixes and
    suffixes, so it stays in log space throughout (no subtraction of
    nearly equal sums, which is what makes linear-space streaming
    schemes unsafe).
    """
    m = log_weights.shape[-1]
    if m < 2:
        raise ValueError("leave-one-out needs at least 2 rollouts")
    fwd = np.logaddexp.accumulate(log_weights, axis=-1)
    bwd = np.logaddexp.accumulate(log_weights[..., ::-1], axis=-1)[..., ::-1]
    out = np.empty_like(log_weights)
    out[..., 0] = bwd[..., 1]
    out[..., -1] = fwd[..., -2]
    if m > 2:
        out[..., 1:-1] = np.logaddexp(fwd[..., :-2], bwd[..., 2:])
    return out - math.log(m - 1)


def _softmax(y: np.ndarray, axis: int) -> np.ndarray:
    shift = np.max(y, axis=axis, keepdims=True)
    w = np.exp(y - shift)
    return w / w.sum(axis=axis, keepdims=True)


def power_estimates(
    alpha_log_base: np.ndarray,
    log_weights: np.ndarray,
    clamp_policy: str = "clamp-renormalize",
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Plain and jackknife-corrected power estimates over a candidate set.

    Parameters
    ----------
    alpha_log_base : (..., K) array of alpha * log p(candidate | prefix)
        (-inf marks zero-probability candidates; they get estimate 0).
    log_weights : (..., K, M) array of per-rollout log weights
        (alpha - 1) * log p(rollout | prefix, candidate).

    Returns (p_plain, p_jk, log_scale, log_scale_loo, clamped_mask) where
    the leading batch shape is preserved and clamped_mask marks batch
    rows whose raw jackknife estimate left [0, 1].
    """
    if clamp_policy not in CLAMP_POLICIES:
        raise ValueError(f"clamp_policy must be one of {CLAMP_POLICIES}")
    m = log_weights.shape[-1]
    if m < 2:
        raise ValueError(
            "jackknife needs num_rollouts >= 2; use the plain estimator for M=1"
        )
    from scipy.special import logsumexp

    log_scale = logsumexp(log_weights, axis=-1) - math.log(m)
    log_scale_loo = loo_log_means(log_weights)

    p_plain = _softmax(alpha_log_base + log_scale, axis=-1)
    # per-left-out-rollout normalized estimates: (..., K, M), softmax over K
    y_loo = alpha_log_base[..., None] + log_scale_loo
    p_loo = _softmax(y_loo, axis=-2)
    p_jk = m * p_plain - (m - 1) / m * p_loo.sum(axis=-1)

    clamped = (p_jk < 0).any(axis=-1)
    if clamped.any():
        if clamp_policy == "clamp-renormalize":
            fixed = np.clip(p_jk, 0.0, None)
            fixed /= fixed.sum(axis=-1, keepdims=True)
        else:  # fallback-plain
            fixed = p_plain
        p_jk = np.where(clamped[..., None], fixed, p_jk)
    return p_plain, p_jk, log_scale, log_scale_loo, clamped


def estimate_scale_factor(
    model: TableModel,
    prefix: Prefix,
    candidate: int,
    alpha: float,
    num_rollouts: int,
    horizon: int,
    rng: np.random.Generator,
) -> tuple[float, np.ndarray]:
    """Monte Carlo estimate of one candidate's scale factor.

    Draws `num_rollouts` completions of the prefix-plus-candidate from
    the base model out to sequence length `horizon` and averages the
    weights p^(alpha-1)(completion).  Returns (log estimate, the
    individual log weights) — the weights are reusable for
    leave-one-out computations.
    """
    if num_rollouts < 1:
        raise ValueError("num_rollouts must be >= 1")
    t = len(prefix.generated)
    if t >= horizon:
        raise ValueError("prefix already fills the horizon")
    ctx = model.context_index(prefix.extended(int(candidate)))
    completion_len = horizon - t - 1
    _, logp, _, _ = model.rollout_batch(
        np.full(num_rollouts, ctx), completion_len, rng
    )
    log_weights = (alpha - 1.0) * logp
    from scipy.special import logsumexp

    return float(logsumexp(log_weights) - math.log(num_rollouts)), log_weights


def jackknife_estimates(
    candidates: np.ndarray,
    log_base: np.ndarray,
    alpha: float,
    log_weights: np.ndarray,
    clamp_policy: str = "clamp-renormalize",
) -> CandidateEstimates:
    """Full per-step estimate bundle for one candidate set.

    `log_base` holds log p(candidate | prefix) (unscaled); `log_weights`
    is (K, M) with every candidate sharing the same rollout count M >= 2.
    """
    log_base = np.asarray(log_base, dtype=np.float64)
    p_plain, p_jk, log_scale, log_scale_loo, clamped = power_estimates(
        alpha * log_base, log_weights, clamp_policy
    )
    return CandidateEstimates(
        candidates=np.asarray(candidates),
        log_base=log_base,
        log_scale=log_scale,
        log_scale_loo=log_scale_loo,
        p_plain=p_plain,
        p_jk=p_jk,
        clamped=bool(clamped),
    )


def sample_step(
    model: TableModel,
    prefix: Prefix,
    params: PowerParams,
    t: int,
    streams: RandomStreams,
    log_scale_override: np.ndarray | None = None,
) -> tuple[int, CandidateEstimates, CostCounters]:
    """One non-final generation step: estimate over Top-K, then sample.

    `log_scale_override` substitutes known log scale factors for the
    Monte Carlo estimate (no rollouts are drawn); it exists so tests can
    check the step against the exact oracle.
    """
    if t >= params.horizon - 1:
        raise ValueError("sample_step applies before the final token only")
    k = params.k_schedule()[t]
    m = params.m_schedule()[t]
    if k > len(model.vocab):
        raise ValueError(f"top_k={k} exceeds |V|={len(model.vocab)}")
    candidates = top_k_candidates(model, prefix, k)
    base = next_token_dist(model, prefix)
    with np.errstate(divide="ignore"):
        log_base = np.log(base[candidates])
    cost = CostCounters()

    if log_scale_override is not None:
        y = params.alpha * log_base + np.asarray(log_scale_override, dtype=np.float64)
        p = _softmax(y, axis=-1)
        est = CandidateEstimates(
            candidates=candidates,
            log_base=log_base,
            log_scale=np.asarray(log_scale_override, dtype=np.float64),
            log_scale_loo=None,
            p_plain=p,
            p_jk=p.copy(),
            clamped=False,
        )
    else:
        ctx = model.context_index(prefix)
        cand_ctx = model._trans[ctx, candidates]
        completion_len = params.horizon - t - 1
        roll_rng = streams.generator("step", t, "rollouts")
        _, logp, lengths, _ = model.rollout_batch(
            np.repeat(cand_ctx, m), completion_len, roll_rng
        )
        log_weights = ((params.alpha - 1.0) * logp).reshape(k, m)
        est = jackknife_estimates(
            candidates, log_base, params.alpha, log_weights, params.clamp_policy
        )
        cost.sequences += k * m
        cost.sampled_tokens += k * m + int(lengths.sum())
        cost.clamp_events += int(est.clamped)

    draw_rng = streams.generator("step", t, "draw")
    token = int(candidates[sample_categorical(draw_rng, est.p_jk)])
    cost.sampled_tokens += 1
    return token, est, cost


def sample_sequence(
    model: TableModel,
    query: tuple[int, ...],
    params: PowerParams,
    streams: RandomStreams,
) -> SampleResult:
    """Generate one sequence from the estimated power distribution.

    Steps 0..horizon-2 run the candidate estimator; the final token is
    drawn from the low-temperature distribution over the full
    vocabulary, where the two distributions provably coincide.  Stops
    early when eos is sampled.
    """
    prefix = Prefix(tuple(query))
    eos = model.vocab.eos_id
    steps: list[StepRecord] = []
    cost = CostCounters()
    for t in range(params.horizon):
        final = t == params.horizon - 1
        if final:
            p = low_temp_next_dist(model, prefix, params.alpha)
            draw = streams.generator("step", t, "draw")
            token = int(sample_categorical(draw, p))
            cost.sampled_tokens += 1
            steps.append(
                StepRecord(
                    t=t,
                    kind="final-low-temp",
                    candidates=list(range(len(model.vocab))),
                    p_base=next_token_dist(model, prefix).tolist(),
                    log_scale=[0.0] * len(model.vocab),
                    p_plain=p.tolist(),
                    p_jk=p.tolist(),
                    clamped=False,
                    chosen=token,
                )
            )
        else:
            token, est, step_cost = sample_step(model, prefix, params, t, streams)
            cost.add(step_cost)
            steps.append(
                StepRecord(
                    t=t,
                    kind="power",
                    candidates=[int(c) for c in est.candidates],
                    p_base=np.exp(est.log_base).tolist(),
                    log_scale=est.log_scale.tolist(),
                    p_plain=est.p_plain.tolist(),
                    p_jk=est.p_jk.tolist(),
                    clamped=est.clamped,
                    chosen=token,
                )
            )
        prefix = prefix.extended(token)
        if token == eos:
            break
    return SampleResult(tokens=prefix.generated, steps=steps, cost=cost)


def sample_sequences(
    model: TableModel,
    query: tuple[int, ...],
    params: PowerParams,
    n: int,
    streams: RandomStreams,
    chunk_size: int = 2048,
) -> tuple[np.ndarray, CostCounters]:
    """Batched generation of n sequences (eos-padded to the horizon).

    Statistically identical to n calls of `sample_sequence` but runs the
    per-step rollouts for whole chunks of sequences at once.  Chunking
    is part of the RNG labeling, so results depend only on the seed and
    chunk size, never on scheduling.
    """
    t_len = params.horizon
    eos = model.vocab.eos_id
    k_sched, m_sched = params.k_schedule(), params.m_schedule()
    v = len(model.vocab)
    for k in k_sched:
        if k > v:
            raise ValueError(f"top_k={k} exceeds |V|={v}")
    out = np.full((n, t_len), eos, dtype=np.int16)
    cost = CostCounters()
    query = tuple(query)
    root_ctx = model.context_index(Prefix(query))

    for chunk_no, start in enumerate(range(0, n, chunk_size)):
        rows = min(chunk_size, n - start)
        node = streams.child("chunk", chunk_no)
        ctx = np.full(rows, root_ctx, dtype=np.int64)
        alive = np.ones(rows, dtype=bool)
        for t in range(t_len):
            active = np.flatnonzero(alive & ~model._absorbed[ctx])
            if active.size == 0:
                break
            a_ctx = ctx[active]
            model._require_defined(a_ctx)
            probs = model._probs[a_ctx]
            if t == t_len - 1:
                with np.errstate(divide="ignore"):
                    y = params.alpha * np.log(probs)
                p_step = _softmax(y, axis=-1)
                draw = node.generator("step", t, "draw")
                token = sample_categorical_rows(draw, p_step)
                cost.sampled_tokens += active.size
            else:
                k, m = k_sched[t], m_sched[t]
                candidates = np.argsort(-probs, axis=1, kind="stable")[:, :k]
                with np.errstate(divide="ignore"):
                    log_base = np.log(
                        np.take_along_axis(probs, candidates, axis=1)
                    )
                cand_ctx = model._trans[
                    a_ctx[:, None], candidates
                ]  # (A, K) successor contexts
                completion_len = t_len - t - 1
                roll_rng = node.generator("step", t, "rollouts")
                _, logp, lengths, _ = model.rollout_batch(
                    np.repeat(cand_ctx.ravel(), m), completion_len, roll_rng
                )
                log_weights = ((params.alpha - 1.0) * logp).reshape(
                    active.size, k, m
                )
                _, p_jk, _, _, clamped = power_estimates(
                    params.alpha * log_base, log_weights, params.clamp_policy
                )
                draw = node.generator("step", t, "draw")
                picked = sample_categorical_rows(draw, p_jk)
                token = candidates[np.arange(active.size), picked]
                cost.sequences += active.size * k * m
                cost.sampled_tokens += active.size * k * m + int(lengths.sum())
                cost.sampled_tokens += active.size
                cost.clamp_events += int(clamped.sum())
            out[start + active, t] = token
            ctx[active] = model._trans[a_ctx, token]
            alive[active] = token != eos
    return out, cost


def token_cost_bound(params: PowerParams, vocab_size: int | None = None) -> int:
    """Worst-case sampled-token count for one sequence.

    Every non-final step draws K*M rollouts of (candidate + completion)
    tokens; the emitted tokens add the horizon itself.  Runs without an
    early eos hit this bound exactly.
    """
    t_len = params.horizon
    k_sched, m_sched = params.k_schedule(), params.m_schedule()
    total = t_len  # emitted tokens
    for t in range(t_len - 1):
        k = k_sched[t] if vocab_size is None else min(k_sched[t], vocab_size)
        total += k * m_sched[t] * (t_len - t)
    return total
