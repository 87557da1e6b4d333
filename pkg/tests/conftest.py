"""Session setup: compile the jitted sweep kernels once up front."""

from __future__ import annotations

import numpy as np
import pytest

from blocklda import (
    Hyperparams,
    augmented_sweep,
    blocked_sweep,
    init_augmented,
    init_state,
    make_workspace,
    sample_block_many,
    single_site_sweep,
)
from helpers import random_context, tiny_corpus


@pytest.fixture(scope="session", autouse=True)
def compiled_kernels():
    """Touch every compiled path on a toy problem so compilation cost lands
    here rather than inside example-sized or timed tests."""
    corpus = tiny_corpus()
    hp = Hyperparams.symmetric(3, corpus.vocab_size, 0.1, 0.01)
    rng = np.random.default_rng(0)
    ws = make_workspace(corpus, hp)
    state = init_state(corpus, hp, rng)
    single_site_sweep(state, hp, rng, ws=ws)
    blocked_sweep(state, hp, rng, kernel="backward", ws=ws)
    blocked_sweep(state, hp, rng, kernel="nested", ws=ws)
    astate = init_augmented(corpus, hp, rng)
    augmented_sweep(astate, hp, rng)
    ctx = random_context(np.random.default_rng(1), 3, 2)
    sample_block_many(ctx, hp, "backward", 4, rng)
    sample_block_many(ctx, hp, "nested", 4, rng)
