"""Exact enumeration oracles, checked against hand arithmetic and each other.

The toy model's four sequences have base probabilities 0.38, 0.02, 0.33,
0.27, so every exact number below is checkable on paper.
"""

import math

import numpy as np
import pytest

from powersample.model import Prefix, build_random_model, sequence_log_prob
from powersample.oracle import (
    EnumerationBudgetError,
    conditional_next_token,
    empirical_distribution,
    enumerate_base,
    exact_power_next_token,
    exact_scale_factors,
    power_distribution,
    tv_distance,
)

PLAN, GUESS, CALC, A4, A5, EOS = range(6)

TOY_BASE = {
    (PLAN, CALC, A4, EOS): 0.38,
    (PLAN, CALC, A5, EOS): 0.02,
    (GUESS, A4, EOS, EOS): 0.33,
    (GUESS, A5, EOS, EOS): 0.27,
}


def test_enumerate_base_toy(toy):
    dist = enumerate_base(toy)
    assert set(dist.entries) == set(TOY_BASE)
    for seq, p in TOY_BASE.items():
        assert math.isclose(dist.entries[seq], p, abs_tol=1e-15)
    assert math.isclose(sum(dist.entries.values()), 1.0, abs_tol=1e-12)


def test_power_distribution_toy_alpha4(toy):
    pi = power_distribution(toy, 4.0)
    z = sum(p**4 for p in TOY_BASE.values())
    for seq, p in TOY_BASE.items():
        assert math.isclose(pi.entries[seq], p**4 / z, abs_tol=1e-12)
    # headline numbers
    assert abs(pi.entries[(PLAN, CALC, A4, EOS)] - 0.5484) < 1e-3
    assert abs(pi.entries[(GUESS, A4, EOS, EOS)] - 0.3119) < 1e-3
    assert abs(pi.entries[(GUESS, A5, EOS, EOS)] - 0.1397) < 1e-3
    assert pi.entries[(PLAN, CALC, A5, EOS)] < 1e-3


def test_power_alpha_one_is_base(toy, rand_models):
    for m in (toy, *rand_models):
        assert tv_distance(power_distribution(m, 1.0), enumerate_base(m)) < 1e-12


def test_power_distribution_conditioned_on_query(toy):
    pi = power_distribution(toy, 4.0, query=(GUESS,))
    # only the two GUESS continuations remain, renormalized
    z = 0.55**4 + 0.45**4
    assert math.isclose(pi.entries[(A4, EOS, EOS, EOS)], 0.55**4 / z, abs_tol=1e-12)
    assert math.isclose(pi.entries[(A5, EOS, EOS, EOS)], 0.45**4 / z, abs_tol=1e-12)


def test_distribution_helpers(toy):
    pi = power_distribution(toy, 4.0)
    top = pi.top(2)
    assert top[0][0] == (PLAN, CALC, A4, EOS)
    assert top[0][1] >= top[1][1]
    # prob_of normalizes to the absorbed form first
    assert pi.prob_of((GUESS, A4, EOS)) == pi.entries[(GUESS, A4, EOS, EOS)]
    assert pi.prob_of((CALC, EOS, EOS, EOS)) == 0.0
    rows = pi.to_rows()
    assert rows[0][0] == "PLAN CALC ANSWER4 EOS"
    assert len(rows) == 4


def test_enumeration_budget(toy):
    with pytest.raises(EnumerationBudgetError, match="node budget"):
        power_distribution(toy, 4.0, node_budget=3)


def brute_force_scale(model, prefix, tok, alpha):
    """Independent scale factor: sum p^alpha over enumerated completions."""
    start = Prefix(prefix.query, prefix.generated + (tok,))
    horizon = model.max_len - len(prefix.generated) - 1
    total = 0.0

    def walk(pfx, depth, logp):
        nonlocal total
        if depth == horizon or model._absorbed[model.context_index(pfx)]:
            total += math.exp(alpha * logp)
            return
        row = model.dist_by_index(model.context_index(pfx))
        for t in np.flatnonzero(row > 0):
            walk(pfx.extended(int(t)), depth + 1, logp + math.log(row[t]))

    walk(start, 0, 0.0)
    return total


def test_exact_scale_factors_vs_brute_force(toy, rand_models):
    for model in (toy, *rand_models):
        for prefix_tokens in [(), model.reachable_prefixes()[1]]:
            prefix = Prefix(generated=prefix_tokens)
            row = model.dist_by_index(model.context_index(prefix))
            support = np.flatnonzero(row > 0)
            table = exact_scale_factors(model, prefix, 2.0, tokens=support)
            for tok in support:
                want = brute_force_scale(model, prefix, int(tok), 2.0)
                assert math.isclose(table.values[tok], want, rel_tol=1e-10)


def test_scale_factors_final_step_all_ones(toy):
    prefix = Prefix(generated=(PLAN, CALC, A4))
    table = exact_scale_factors(toy, prefix, 4.0)
    np.testing.assert_allclose(table.values, 1.0, atol=0)


def test_power_next_token_matches_enumerated_conditional(toy, rand_models):
    # the sequence-level and stepwise views of the power distribution agree
    for model in (toy, *rand_models):
        for alpha in (1.0, 2.0, 4.0):
            pi = power_distribution(model, alpha)
            for prefix_tokens in model.reachable_prefixes():
                got = exact_power_next_token(model, Prefix(generated=prefix_tokens), alpha)
                want = conditional_next_token(pi, prefix_tokens)
                np.testing.assert_allclose(got, want, atol=1e-10)


def test_power_next_token_rejects_impossible_prefix(toy):
    with pytest.raises(ValueError, match="zero probability"):
        exact_power_next_token(toy, Prefix(generated=(CALC,)), 2.0)


def test_conditional_next_token_errors(toy):
    pi = power_distribution(toy, 2.0)
    with pytest.raises(ValueError, match="complete sequence"):
        conditional_next_token(pi, (PLAN, CALC, A4, EOS))
    with pytest.raises(ValueError, match="zero probability"):
        conditional_next_token(pi, (CALC,))


def test_empirical_distribution(toy):
    samples = [(PLAN, CALC, A4, EOS)] * 3 + [(GUESS, A4, EOS)] * 1
    emp = empirical_distribution(samples, toy)
    assert emp.entries[(PLAN, CALC, A4, EOS)] == 0.75
    assert emp.entries[(GUESS, A4, EOS, EOS)] == 0.25
    assert emp.alpha is None
    assert empirical_distribution([], toy).entries == {}


def test_tv_distance_values(toy):
    assert tv_distance([0.5, 0.5], [0.5, 0.5]) == 0.0
    assert tv_distance([1.0, 0.0], [0.0, 1.0]) == 1.0
    assert math.isclose(tv_distance([0.7, 0.3], [0.5, 0.5]), 0.2, abs_tol=1e-15)
    with pytest.raises(ValueError, match="mismatched"):
        tv_distance([1.0], [0.5, 0.5])
    base = enumerate_base(toy)
    pi = power_distribution(toy, 4.0)
    direct = 0.5 * sum(
        abs(base.entries[s] - pi.entries[s]) for s in TOY_BASE
    )
    assert math.isclose(tv_distance(base, pi), direct, abs_tol=1e-15)
    assert tv_distance(base, base) == 0.0


def test_tv_distance_universe_check(toy, rand_models):
    with pytest.raises(ValueError, match="universe"):
        tv_distance(enumerate_base(toy), enumerate_base(rand_models[0]))
