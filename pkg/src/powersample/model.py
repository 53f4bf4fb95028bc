"""Tabular autoregressive models with a finite horizon.

A `TableModel` plays the role of the base language model: it maps a
context (the last `context_order` tokens of prompt + generation, padded
with a start marker) to an explicit next-token distribution.  Models are
immutable after construction and pre-compiled to dense arrays so that
batches of rollouts reduce to integer gathers.

Conventions:
  * token ids are 0..|V|-1; the start-of-sequence pad is the sentinel -1
    in context keys (written "^" in model files);
  * with `absorbing_eos` set (the default), any context ending in the
    end-of-sequence token emits eos with probability 1, so sequences of
    nominal length `max_len` are well defined even when eos fires early.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .rng import sample_categorical_rows

__all__ = [
    "START",
    "Vocabulary",
    "Prefix",
    "TableModel",
    "UnknownContextError",
    "next_token_dist",
    "low_temp_next_dist",
    "rollout",
    "sequence_log_prob",
    "absorbed_form",
    "build_toy_model",
    "build_random_model",
]

START = -1  # start-of-sequence pad in context keys

NORMALIZATION_TOL = 1e-12
MAX_CONTEXT_ROWS = 5_000_000

NEG_INF = float("-inf")


class UnknownContextError(KeyError):
    """A context has neither a stored conditional nor a default row."""

    def __init__(self, context_names: tuple[str, ...]):
        self.context = context_names
        super().__init__(
            "no conditional distribution for context "
            f"{' '.join(context_names)!r} and the model declares no default"
        )


@dataclass(frozen=True)
class Vocabulary:
    """Ordered token inventory; ids are positions in `tokens`."""

    tokens: tuple[str, ...]
    eos_id: int

    def __post_init__(self):
        if len(self.tokens) < 2:
            raise ValueError("vocabulary needs at least 2 tokens")
        if len(set(self.tokens)) != len(self.tokens):
            raise ValueError("token names must be unique")
        if not 0 <= self.eos_id < len(self.tokens):
            raise ValueError("eos_id out of range")

    def __len__(self) -> int:
        return len(self.tokens)

    def id_of(self, name: str) -> int:
        try:
            return self.tokens.index(name)
        except ValueError:
            raise KeyError(f"unknown token {name!r}") from None

    def name_of(self, token_id: int) -> str:
        return self.tokens[token_id]

    def names(self, ids) -> tuple[str, ...]:
        return tuple(self.tokens[i] for i in ids)


@dataclass(frozen=True)
class Prefix:
    """A prompt plus the tokens generated so far."""

    query: tuple[int, ...] = ()
    generated: tuple[int, ...] = ()

    def extended(self, *tokens: int) -> "Prefix":
        return Prefix(self.query, self.generated + tokens)

    def __len__(self) -> int:
        return len(self.query) + len(self.generated)


def _check_prefix(prefix: Prefix, model: "TableModel") -> None:
    v = len(model.vocab)
    eos = model.vocab.eos_id
    for part in (prefix.query, prefix.generated):
        for tok in part:
            if not 0 <= tok < v:
                raise ValueError(f"token id {tok} out of range for |V|={v}")
    if model.absorbing_eos and eos in prefix.generated:
        tail = prefix.generated[prefix.generated.index(eos):]
        if any(t != eos for t in tail):
            raise ValueError("non-eos token after eos in generated prefix")


class TableModel:
    """Finite-horizon autoregressive model defined by explicit tables.

    Parameters
    ----------
    vocab : Vocabulary
    max_len : int
        Generation horizon in tokens (prompt excluded).
    context_order : int
        Number of trailing tokens (>= 1) that form the lookup context.
    cond : mapping from context tuple -> probability vector over the vocab.
        Context tuples have exactly `context_order` entries, each a token
        id or the START sentinel.
    default : optional probability vector used for contexts absent from
        `cond`.  Without it, hitting an unlisted context is an error.
    absorbing_eos : once eos is emitted the model emits eos forever.
    """

    def __init__(
        self,
        vocab: Vocabulary,
        max_len: int,
        context_order: int,
        cond: dict[tuple[int, ...], np.ndarray],
        default: np.ndarray | None = None,
        absorbing_eos: bool = True,
    ):
        if max_len < 1:
            raise ValueError("max_len must be >= 1")
        if context_order < 1:
            raise ValueError("context_order must be >= 1")
        v = len(vocab)
        base = v + 1  # digits: token ids plus the START pad
        rows = base**context_order
        if rows > MAX_CONTEXT_ROWS:
            raise ValueError(
                f"context table with {rows} rows exceeds cap {MAX_CONTEXT_ROWS}"
            )
        self.vocab = vocab
        self.max_len = int(max_len)
        self.context_order = int(context_order)
        self.absorbing_eos = bool(absorbing_eos)
        self.cond = {k: np.asarray(p, dtype=np.float64).copy() for k, p in cond.items()}
        self.default = (
            None if default is None else np.asarray(default, dtype=np.float64).copy()
        )

        self._base = base
        self._probs = np.zeros((rows, v), dtype=np.float64)
        self._defined = np.zeros(rows, dtype=bool)
        self._absorbed = np.zeros(rows, dtype=bool)

        for key, p in self.cond.items():
            self._validate_row(key, p)
            self._probs[self._encode(key)] = p
            self._defined[self._encode(key)] = True
        if self.default is not None:
            self._validate_row(("<default>",), self.default)
            self._probs[~self._defined] = self.default
            self._defined[:] = True

        if self.absorbing_eos:
            # Contexts ending in eos emit eos with probability 1.
            idx = np.arange(rows)
            ends_eos = idx % base == vocab.eos_id
            one_hot = np.zeros(v)
            one_hot[vocab.eos_id] = 1.0
            self._probs[ends_eos] = one_hot
            self._defined[ends_eos] = True
            self._absorbed[ends_eos] = True

        with np.errstate(divide="ignore"):
            self._logprobs = np.log(self._probs)
        # Successor context: shift one digit in.
        shifted = (np.arange(rows) % base ** (context_order - 1)) * base
        self._trans = shifted[:, None] + np.arange(v)[None, :]

    def _validate_row(self, key, p: np.ndarray) -> None:
        if p.shape != (len(self.vocab),):
            raise ValueError(f"context {key}: expected {len(self.vocab)} probabilities")
        if (p < 0).any():
            raise ValueError(f"context {key}: negative probability")
        if abs(p.sum() - 1.0) > NORMALIZATION_TOL:
            raise ValueError(f"context {key}: probabilities sum to {p.sum()!r}, not 1")

    def _encode(self, key: tuple[int, ...]) -> int:
        if len(key) != self.context_order:
            raise ValueError(
                f"context {key} has {len(key)} entries, expected {self.context_order}"
            )
        idx = 0
        for d in key:
            digit = len(self.vocab) if d == START else d
            if not 0 <= digit <= len(self.vocab):
                raise ValueError(f"bad context entry {d}")
            idx = idx * self._base + digit
        return idx

    def _decode(self, idx: int) -> tuple[int, ...]:
        digits = []
        for _ in range(self.context_order):
            idx, d = divmod(idx, self._base)
            digits.append(START if d == len(self.vocab) else d)
        return tuple(reversed(digits))

    def context_names(self, idx: int) -> tuple[str, ...]:
        return tuple(
            "^" if d == START else self.vocab.name_of(d) for d in self._decode(idx)
        )

    def context_index(self, prefix: Prefix) -> int:
        """Dense index of the lookup context for a prefix."""
        _check_prefix(prefix, self)
        seq = prefix.query + prefix.generated
        n = self.context_order
        window = (START,) * max(0, n - len(seq)) + seq[max(0, len(seq) - n):]
        return self._encode(window)

    def _require_defined(self, ctx: np.ndarray) -> None:
        bad = ~self._defined[ctx]
        if bad.any():
            first = int(np.asarray(ctx).ravel()[np.flatnonzero(bad.ravel())[0]])
            raise UnknownContextError(self.context_names(first))

    def dist_by_index(self, ctx: int) -> np.ndarray:
        self._require_defined(np.array([ctx]))
        return self._probs[ctx].copy()

    def rollout_batch(
        self, ctx: np.ndarray, horizon: int, rng: np.random.Generator
    ) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """Sample `horizon` tokens autoregressively for a batch of contexts.

        Returns (tokens, log_probs, lengths, final_ctx).  `tokens` is
        (N, horizon) with eos padding past each row's absorption point;
        `lengths` counts the tokens actually drawn (absorbed rows stop);
        `log_probs` is the joint log-probability of each row's drawn
        tokens (the absorbed tail contributes zero).
        """
        ctx = np.array(ctx, dtype=np.int64, copy=True)
        n = ctx.shape[0]
        logp = np.zeros(n)
        lengths = np.zeros(n, dtype=np.int64)
        tokens = np.full((n, horizon), self.vocab.eos_id, dtype=np.int16)
        for pos in range(horizon):
            active = np.flatnonzero(~self._absorbed[ctx])
            if active.size == 0:
                break
            rows = ctx[active]
            self._require_defined(rows)
            tok = sample_categorical_rows(rng, self._probs[rows])
            logp[active] += self._logprobs[rows, tok]
            tokens[active, pos] = tok
            lengths[active] += 1
            ctx[active] = self._trans[rows, tok]
        return tokens, logp, lengths, ctx

    def sharpened(self, alpha: float) -> "TableModel":
        """Model whose every conditional is p^alpha renormalized.

        Sampling from it IS low-temperature sampling at exponent alpha.
        The support of every row is preserved (0^alpha = 0), absorption
        is unchanged, and results are cached per alpha.
        """
        if alpha == 1.0:
            return self
        if alpha <= 0:
            raise ValueError("alpha must be positive")
        cache = getattr(self, "_sharpened_cache", None)
        if cache is None:
            cache = self._sharpened_cache = {}
        hit = cache.get(float(alpha))
        if hit is not None:
            return hit

        def sharpen_row(p: np.ndarray) -> np.ndarray:
            with np.errstate(divide="ignore"):
                s = alpha * np.log(p)
            s -= s.max()
            w = np.exp(s)
            return w / w.sum()

        cond = {k: sharpen_row(p) for k, p in self.cond.items()}
        default = None if self.default is None else sharpen_row(self.default)
        out = TableModel(
            self.vocab,
            max_len=self.max_len,
            context_order=self.context_order,
            cond=cond,
            default=default,
            absorbing_eos=self.absorbing_eos,
        )
        cache[float(alpha)] = out
        return out

    def log_prob_rows(self, ctx: np.ndarray, tokens: np.ndarray) -> np.ndarray:
        """Joint log-probability of each token row continuing its context.

        `tokens` is (n, L); eos-padding past an absorption point scores
        as probability 1 and any other zero-probability step yields
        -inf for that row (no exception).
        """
        ctx = np.array(ctx, dtype=np.int64, copy=True)
        tokens = np.asarray(tokens, dtype=np.int64)
        n, length = tokens.shape
        logp = np.zeros(n)
        for pos in range(length):
            tok = tokens[:, pos]
            live = np.flatnonzero(~self._absorbed[ctx])
            absorbed_bad = np.flatnonzero(
                self._absorbed[ctx] & (tok != self.vocab.eos_id)
            )
            logp[absorbed_bad] = NEG_INF
            if live.size:
                rows = ctx[live]
                self._require_defined(rows)
                logp[live] += self._logprobs[rows, tok[live]]
            ctx = self._trans[ctx, tok]
        return logp

    def reachable_prefixes(self) -> list[tuple[int, ...]]:
        """All generated-token prefixes (length < max_len) with positive
        probability under the empty query.  Test/oracle helper."""
        out: list[tuple[int, ...]] = []
        stack: list[tuple[tuple[int, ...], int]] = [((), self.context_index(Prefix()))]
        while stack:
            prefix, ctx = stack.pop()
            out.append(prefix)
            if len(prefix) + 1 >= self.max_len:
                continue
            self._require_defined(np.array([ctx]))
            for tok in np.flatnonzero(self._probs[ctx] > 0):
                stack.append((prefix + (int(tok),), int(self._trans[ctx, tok])))
        return sorted(out, key=lambda p: (len(p), p))

    def canonical_dict(self) -> dict:
        """JSON-ready description; the on-disk model-spec layout."""
        ctx_str = lambda key: " ".join(
            "^" if d == START else self.vocab.name_of(d) for d in key
        )
        doc = {
            "vocab": list(self.vocab.tokens),
            "eos": self.vocab.name_of(self.vocab.eos_id),
            "order": self.context_order,
            "max_len": self.max_len,
            "cond": {
                ctx_str(k): [float(x) for x in v]
                for k, v in sorted(self.cond.items())
            },
        }
        if self.default is not None:
            doc["default"] = [float(x) for x in self.default]
        return doc


def next_token_dist(model: TableModel, prefix: Prefix) -> np.ndarray:
    """Conditional next-token distribution p(.|query, generated)."""
    return model.dist_by_index(model.context_index(prefix))


def low_temp_next_dist(model: TableModel, prefix: Prefix, alpha: float) -> np.ndarray:
    """Locally sharpened next-token distribution: p^alpha renormalized."""
    p = next_token_dist(model, prefix)
    if alpha == 1.0:
        return p
    with np.errstate(divide="ignore"):
        s = alpha * np.log(p)
    s -= s.max()
    w = np.exp(s)
    return w / w.sum()


def rollout(
    model: TableModel, prefix: Prefix, horizon: int, rng: np.random.Generator
) -> tuple[int, ...]:
    """Sample up to `horizon` continuation tokens; stops at eos."""
    if horizon < 0:
        raise ValueError("horizon must be >= 0")
    if horizon == 0:
        return ()
    ctx = np.array([model.context_index(prefix)])
    tokens, _, lengths, _ = model.rollout_batch(ctx, horizon, rng)
    return tuple(int(t) for t in tokens[0, : lengths[0]])


def sequence_log_prob(
    model: TableModel, prefix: Prefix, completion: tuple[int, ...]
) -> float:
    """Joint log-probability of `completion` continuing `prefix`.

    Returns -inf for any zero-probability step; never raises on one.
    """
    ctx = model.context_index(prefix)
    eos = model.vocab.eos_id
    total = 0.0
    for tok in completion:
        if not 0 <= tok < len(model.vocab):
            raise ValueError(f"token id {tok} out of range")
        if model._absorbed[ctx]:
            if tok != eos:
                return NEG_INF
            continue
        model._require_defined(np.array([ctx]))
        p = model._probs[ctx, tok]
        if p == 0.0:
            return NEG_INF
        total += math.log(p)
        ctx = int(model._trans[ctx, tok])
    return total


def absorbed_form(
    tokens: tuple[int, ...], max_len: int, eos_id: int
) -> tuple[int, ...]:
    """Canonical fixed-length form of a sequence: eos-padded to max_len."""
    if len(tokens) > max_len:
        raise ValueError("sequence longer than horizon")
    return tuple(tokens) + (eos_id,) * (max_len - len(tokens))


def build_toy_model() -> TableModel:
    """Plan-versus-guess arithmetic model over six tokens, horizon 4.

    Unlisted contexts fall back to immediate termination, which keeps the
    model total (needed when scoring zero-probability candidates) without
    adding any probability mass to new sequences.
    """
    names = ("PLAN", "GUESS", "CALC", "ANSWER4", "ANSWER5", "EOS")
    vocab = Vocabulary(names, eos_id=5)
    plan, guess, calc, a4, a5, eos = range(6)

    def row(**mass: float) -> np.ndarray:
        p = np.zeros(6)
        for name, value in mass.items():
            p[names.index(name)] = value
        return p

    cond = {
        (START, START): row(PLAN=0.4, GUESS=0.6),
        (START, plan): row(CALC=1.0),
        (plan, calc): row(ANSWER4=0.95, ANSWER5=0.05),
        (START, guess): row(ANSWER4=0.55, ANSWER5=0.45),
        (calc, a4): row(EOS=1.0),
        (calc, a5): row(EOS=1.0),
        (guess, a4): row(EOS=1.0),
        (guess, a5): row(EOS=1.0),
    }
    return TableModel(
        vocab, max_len=4, context_order=2, cond=cond, default=row(EOS=1.0)
    )


def build_random_model(
    seed: int,
    vocab_size: int,
    context_order: int = 1,
    max_len: int = 3,
    concentration: float = 1.0,
) -> TableModel:
    """Seeded random model: every context row is a symmetric Dirichlet draw.

    Deterministic in `seed`; large `concentration` pushes every row toward
    the uniform distribution.  The last token is eos.
    """
    from .rng import RandomStreams

    if vocab_size < 2:
        raise ValueError("vocab_size must be >= 2")
    if max_len < 1:
        raise ValueError("max_len must be >= 1")
    if concentration <= 0:
        raise ValueError("concentration must be positive")
    names = tuple(f"t{i}" for i in range(vocab_size - 1)) + ("EOS",)
    vocab = Vocabulary(names, eos_id=vocab_size - 1)
    rng = RandomStreams(seed).generator("random-model")
    alphas = np.full(vocab_size, float(concentration))

    cond: dict[tuple[int, ...], np.ndarray] = {}
    non_eos = [i for i in range(vocab_size) if i != vocab.eos_id]

    # Reachable contexts are START pads followed by non-eos tokens; eos may
    # only be the final digit, and those rows are absorbing, so never drawn.
    def expand(key: tuple[int, ...], remaining: int) -> None:
        if remaining == 0:
            cond[key] = rng.dirichlet(alphas)
            return
        for tok in non_eos:
            expand(key + (tok,), remaining - 1)

    for pads in range(context_order, -1, -1):
        expand((START,) * pads, context_order - pads)
    return TableModel(vocab, max_len=max_len, context_order=context_order, cond=cond)
