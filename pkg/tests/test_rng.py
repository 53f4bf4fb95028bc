"""Determinism and independence of the label-addressed random streams."""

import numpy as np

from powersample.rng import RandomStreams, sample_categorical, sample_categorical_rows


def test_same_address_same_draws():
    a = RandomStreams(7).generator("step", 3, "rollouts")
    b = RandomStreams(7).generator("step", 3, "rollouts")
    np.testing.assert_array_equal(a.random(100), b.random(100))


def test_child_path_equals_flat_path():
    # child() only scopes the address; the draws depend on the full path.
    a = RandomStreams(7).child("chunk", 2).generator("step", 0, "draw")
    b = RandomStreams(7).generator("chunk", 2, "step", 0, "draw")
    np.testing.assert_array_equal(a.random(32), b.random(32))


def test_different_labels_differ():
    root = RandomStreams(0)
    base = root.generator("a").random(64)
    for other in (
        root.generator("b"),
        root.generator("a", 0),
        root.generator(0),
        root.child("a").generator("a"),
        RandomStreams(1).generator("a"),
    ):
        assert not np.array_equal(base, other.random(64))


def test_string_and_int_labels_do_not_collide():
    root = RandomStreams(42)
    assert not np.array_equal(
        root.generator("0").random(16), root.generator(0).random(16)
    )


def test_generator_is_fresh_each_call():
    root = RandomStreams(5)
    g1 = root.generator("x")
    g1.random(1000)  # advance
    g2 = root.generator("x")
    np.testing.assert_array_equal(g2.random(4), RandomStreams(5).generator("x").random(4))


def test_large_and_negative_seeds():
    big = RandomStreams(2**80 + 17)
    np.testing.assert_array_equal(
        big.generator("run").random(8), RandomStreams(2**80 + 17).generator("run").random(8)
    )
    assert not np.array_equal(
        RandomStreams(-1).generator("run").random(8),
        RandomStreams(1).generator("run").random(8),
    )


def test_sample_categorical_never_picks_zero_mass():
    rng = RandomStreams(1).generator("cat")
    probs = np.array([0.0, 0.5, 0.0, 0.5, 0.0])
    draws = [sample_categorical(rng, probs) for _ in range(500)]
    assert set(draws) <= {1, 3}


def test_sample_categorical_frequencies():
    rng = RandomStreams(2).generator("cat")
    probs = np.array([0.2, 0.3, 0.5])
    draws = np.array([sample_categorical(rng, probs) for _ in range(20000)])
    freq = np.bincount(draws, minlength=3) / draws.size
    np.testing.assert_allclose(freq, probs, atol=0.015)


def test_sample_categorical_rows_matches_marginals():
    rng = RandomStreams(3).generator("rows")
    probs = np.tile(np.array([0.1, 0.0, 0.9]), (40000, 1))
    draws = sample_categorical_rows(rng, probs)
    assert not (draws == 1).any()
    assert abs((draws == 2).mean() - 0.9) < 0.01


def test_sample_categorical_rows_unnormalized_rows():
    # Rows are normalized by their own total, so scale does not matter.
    rng1 = RandomStreams(4).generator("u")
    rng2 = RandomStreams(4).generator("u")
    p = np.array([[0.2, 0.8], [0.5, 0.5]])
    np.testing.assert_array_equal(
        sample_categorical_rows(rng1, p), sample_categorical_rows(rng2, 10.0 * p)
    )
