"""Exact brute-force reference distributions for small table models.

Everything here enumerates completions outright, so it is the ground
truth the samplers are tested against, never a production path.  All
sums over completions run in log space; linear probabilities appear
only in returned values.

The central identity (the scaling-factor decomposition): raising a
sequence distribution p to a power alpha and renormalizing induces, at
every step, the next-token distribution

    p_pow(x | prefix)  ∝  p(x | prefix)^alpha * scale(x)

where ``scale(x)`` sums p^alpha over all completions that could follow
`prefix + x`.  At the final step the completion sum is empty (defined
as 1), so the power and low-temperature conditionals coincide there.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .model import NEG_INF, Prefix, TableModel, absorbed_form

__all__ = [
    "EnumerationBudgetError",
    "SequenceDistribution",
    "ScaleTable",
    "enumerate_base",
    "power_distribution",
    "exact_scale_factors",
    "exact_power_next_token",
    "conditional_next_token",
    "empirical_distribution",
    "tv_distance",
    "DEFAULT_NODE_BUDGET",
]

DEFAULT_NODE_BUDGET = 2_000_000


class EnumerationBudgetError(RuntimeError):
    """Exact enumeration would visit more prefix nodes than allowed."""

    def __init__(self, budget: int):
        self.budget = budget
        super().__init__(
            f"enumeration exceeded the node budget of {budget}; "
            "this model is too large for the exact oracle"
        )


@dataclass
class SequenceDistribution:
    """Exact or empirical distribution over complete (absorbed) sequences.

    `entries` maps eos-padded sequences of length `max_len` to their
    probabilities.  `alpha` records the exponent that produced it
    (1 = base model, None = empirical histogram).
    """

    entries: dict[tuple[int, ...], float]
    alpha: float | None
    token_names: tuple[str, ...]
    eos_id: int
    max_len: int

    def __post_init__(self):
        total = sum(self.entries.values())
        if self.entries and abs(total - 1.0) > 1e-9:
            raise ValueError(f"probabilities sum to {total!r}, not 1")

    def prob_of(self, seq: tuple[int, ...]) -> float:
        return self.entries.get(
            absorbed_form(seq, self.max_len, self.eos_id), 0.0
        )

    def top(self, n: int) -> list[tuple[tuple[int, ...], float]]:
        """The n most probable sequences (ties broken lexicographically)."""
        return sorted(self.entries.items(), key=lambda kv: (-kv[1], kv[0]))[:n]

    def sequence_string(self, seq: tuple[int, ...]) -> str:
        return " ".join(self.token_names[t] for t in seq)

    def to_rows(self) -> list[tuple[str, float]]:
        """(sequence-string, probability) rows, most probable first."""
        return [(self.sequence_string(s), p) for s, p in self.top(len(self.entries))]

    def _same_universe(self, other: "SequenceDistribution") -> None:
        if (
            self.token_names != other.token_names
            or self.max_len != other.max_len
            or self.eos_id != other.eos_id
        ):
            raise ValueError("distributions live on different sequence universes")


def _enumerate_log_probs(
    model: TableModel, query: tuple[int, ...], node_budget: int
) -> dict[tuple[int, ...], float]:
    """DFS over all positive-probability completions; returns log-probs."""
    t_max = model.max_len
    eos = model.vocab.eos_id
    out: dict[tuple[int, ...], float] = {}
    nodes = 0
    stack: list[tuple[tuple[int, ...], int, float]] = [
        ((), model.context_index(Prefix(query)), 0.0)
    ]
    while stack:
        tokens, ctx, logp = stack.pop()
        nodes += 1
        if nodes > node_budget:
            raise EnumerationBudgetError(node_budget)
        if len(tokens) == t_max or model._absorbed[ctx]:
            out[absorbed_form(tokens, t_max, eos)] = logp
            continue
        model._require_defined(np.array([ctx]))
        row = model._probs[ctx]
        for tok in np.flatnonzero(row > 0):
            tok = int(tok)
            stack.append(
                (tokens + (tok,), int(model._trans[ctx, tok]), logp + float(np.log(row[tok])))
            )
    return out


def enumerate_base(
    model: TableModel,
    query: tuple[int, ...] = (),
    node_budget: int = DEFAULT_NODE_BUDGET,
) -> SequenceDistribution:
    """Exact base-model distribution over complete sequences."""
    logs = _enumerate_log_probs(model, query, node_budget)
    return SequenceDistribution(
        entries={s: float(np.exp(lp)) for s, lp in sorted(logs.items())},
        alpha=1.0,
        token_names=model.vocab.tokens,
        eos_id=model.vocab.eos_id,
        max_len=model.max_len,
    )


def power_distribution(
    model: TableModel,
    alpha: float,
    query: tuple[int, ...] = (),
    node_budget: int = DEFAULT_NODE_BUDGET,
) -> SequenceDistribution:
    """Exact distribution proportional to p(sequence)^alpha."""
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    logs = _enumerate_log_probs(model, query, node_budget)
    seqs = sorted(logs)
    lp = alpha * np.array([logs[s] for s in seqs])
    lp -= logsumexp(lp)
    return SequenceDistribution(
        entries={s: float(np.exp(v)) for s, v in zip(seqs, lp)},
        alpha=float(alpha),
        token_names=model.vocab.tokens,
        eos_id=model.vocab.eos_id,
        max_len=model.max_len,
    )


@dataclass
class ScaleTable:
    """Exact scale factors at one step: token -> sum of p^alpha over
    completions following prefix + token.  All ones at the final step."""

    prefix: Prefix
    alpha: float
    log_values: np.ndarray = field(repr=False)

    @property
    def values(self) -> np.ndarray:
        return np.exp(self.log_values)


def _log_scale_recursive(
    model: TableModel,
    ctx: int,
    horizon: int,
    alpha: float,
    memo: dict[tuple[int, int], float],
    budget: list[int],
) -> float:
    """log of sum over completions of length `horizon` of p^alpha."""
    if horizon == 0 or model._absorbed[ctx]:
        return 0.0
    key = (ctx, horizon)
    if key in memo:
        return memo[key]
    budget[0] += 1
    if budget[0] > DEFAULT_NODE_BUDGET:
        raise EnumerationBudgetError(DEFAULT_NODE_BUDGET)
    model._require_defined(np.array([ctx]))
    row = model._probs[ctx]
    support = np.flatnonzero(row > 0)
    terms = np.empty(support.size)
    for i, tok in enumerate(support):
        child = _log_scale_recursive(
            model, int(model._trans[ctx, tok]), horizon - 1, alpha, memo, budget
        )
        terms[i] = alpha * float(np.log(row[tok])) + child
    value = float(logsumexp(terms))
    memo[key] = value
    return value


def exact_scale_factors(
    model: TableModel,
    prefix: Prefix,
    alpha: float,
    tokens: np.ndarray | None = None,
) -> ScaleTable:
    """Exact per-candidate scale factors at the prefix's next position.

    `tokens` restricts evaluation to the given candidate ids (useful when
    zero-probability candidates lead to contexts the model leaves
    undefined); by default every token in the vocabulary is evaluated.
    """
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    t = len(prefix.generated)
    t_max = model.max_len
    if t >= t_max:
        raise ValueError("prefix is already a complete sequence")
    horizon = t_max - t - 1  # completion length after the candidate
    ctx = model.context_index(prefix)
    which = np.arange(len(model.vocab)) if tokens is None else np.asarray(tokens)
    memo: dict[tuple[int, int], float] = {}
    budget = [0]
    log_values = np.full(len(model.vocab), np.nan)
    for tok in which:
        log_values[int(tok)] = _log_scale_recursive(
            model, int(model._trans[ctx, int(tok)]), horizon, alpha, memo, budget
        )
    return ScaleTable(prefix=prefix, alpha=float(alpha), log_values=log_values)


def exact_power_next_token(
    model: TableModel, prefix: Prefix, alpha: float
) -> np.ndarray:
    """Next-token conditional of the exact power distribution.

    Computed through the scaling-factor decomposition; must (and, per the
    test suite, does) agree with conditioning the enumerated power
    distribution on the prefix.
    """
    base = model.dist_by_index(model.context_index(prefix))
    support = np.flatnonzero(base > 0)
    if support.size == 0:
        raise ValueError("prefix has no positive-probability continuation")
    if len(prefix.generated) > 0:
        # conditional undefined when the prefix itself has zero base mass
        from .model import sequence_log_prob

        if sequence_log_prob(model, Prefix(prefix.query), prefix.generated) == NEG_INF:
            raise ValueError("prefix has zero probability under the base model")
    table = exact_scale_factors(model, prefix, alpha, tokens=support)
    with np.errstate(divide="ignore"):
        logw = np.full(len(base), NEG_INF)
        logw[support] = alpha * np.log(base[support]) + table.log_values[support]
    logw -= logsumexp(logw)
    return np.exp(logw)


def conditional_next_token(
    dist: SequenceDistribution, prefix_tokens: tuple[int, ...]
) -> np.ndarray:
    """Next-token conditional of an enumerated sequence distribution."""
    t = len(prefix_tokens)
    if t >= dist.max_len:
        raise ValueError("prefix is already a complete sequence")
    mass = np.zeros(len(dist.token_names))
    for seq, p in dist.entries.items():
        if seq[:t] == tuple(prefix_tokens):
            mass[seq[t]] += p
    total = mass.sum()
    if total <= 0:
        raise ValueError("prefix has zero probability under this distribution")
    return mass / total


def empirical_distribution(
    samples, model: TableModel
) -> SequenceDistribution:
    """Histogram of sampled sequences in absorbed (eos-padded) form."""
    t_max = model.max_len
    eos = model.vocab.eos_id
    counts: dict[tuple[int, ...], int] = {}
    n = 0
    for seq in samples:
        key = absorbed_form(tuple(int(t) for t in seq), t_max, eos)
        counts[key] = counts.get(key, 0) + 1
        n += 1
    entries = {s: c / n for s, c in sorted(counts.items())} if n else {}
    return SequenceDistribution(
        entries=entries,
        alpha=None,
        token_names=model.vocab.tokens,
        eos_id=eos,
        max_len=t_max,
    )


def tv_distance(a, b) -> float:
    """Total variation distance, ½ Σ |a − b|.

    Accepts two probability vectors of equal length or two
    SequenceDistributions over the same universe (their supports are
    aligned by union, missing sequences counting as probability 0).
    """
    if isinstance(a, SequenceDistribution) and isinstance(b, SequenceDistribution):
        a._same_universe(b)
        keys = set(a.entries) | set(b.entries)
        return 0.5 * sum(abs(a.entries.get(k, 0.0) - b.entries.get(k, 0.0)) for k in keys)
    pa = np.asarray(a, dtype=np.float64)
    pb = np.asarray(b, dtype=np.float64)
    if pa.shape != pb.shape:
        raise ValueError(f"mismatched supports: {pa.shape} vs {pb.shape}")
    return float(0.5 * np.abs(pa - pb).sum())
