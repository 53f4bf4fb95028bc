"""Shared fixtures: the toy model and a few small random tables."""

import numpy as np
import pytest

from powersample.model import (
    START,
    TableModel,
    Vocabulary,
    build_random_model,
    build_toy_model,
)


@pytest.fixture(scope="session")
def toy():
    return build_toy_model()


@pytest.fixture(scope="session")
def rand_models():
    """The three seeded random tables used across oracle/property tests."""
    return (
        build_random_model(3, vocab_size=3, max_len=3),
        build_random_model(12, vocab_size=4, max_len=4),
        build_random_model(13, vocab_size=5, max_len=4),
    )


@pytest.fixture(scope="session")
def fixed_len_model():
    """No end-of-sequence mass until the horizon: every run uses all steps.

    Cost-accounting equality tests need this; any early absorption makes
    the measured token count fall below the worst-case bound.
    """
    vocab = Vocabulary(("a", "b", "EOS"), eos_id=2)
    row = np.array([0.6, 0.4, 0.0])
    cond = {(START,): row, (0,): np.array([0.3, 0.7, 0.0]), (1,): row}
    return TableModel(vocab, max_len=4, context_order=1, cond=cond)


def read_report_bytes(outdir, skip=("meta.json",)):
    """Map of file name -> bytes for every report file in a directory."""
    return {
        p.name: p.read_bytes()
        for p in sorted(outdir.iterdir())
        if p.is_file() and p.name not in skip
    }
