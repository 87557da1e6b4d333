"""Hyperparameters, block-count state, posterior evaluation, checkpoints."""

import math

import numpy as np
import pytest

from blocklda import (
    BlockContext,
    BlockState,
    Corpus,
    CorpusFormatError,
    Hyperparams,
    StateInvariantError,
    SynthConfig,
    apply_block,
    extract_context,
    generate_synthetic,
    init_state,
    load_checkpoint,
    log_posterior_delta,
    log_unnormalized_posterior,
    save_checkpoint,
    single_site_sweep,
    validate_state,
)
from helpers import recomputed_aggregates, tiny_corpus


class TestHyperparams:
    def test_symmetric_constructor(self):
        hp = Hyperparams.symmetric(3, 25, 0.1, 0.01)
        assert np.array_equal(hp.alpha, [0.1, 0.1, 0.1])
        assert hp.alpha_sum == pytest.approx(0.3)
        assert hp.beta_sum == 25 * 0.01

    def test_per_topic_alpha(self):
        hp = Hyperparams(2, 4, np.array([0.2, 0.7]), 0.5)
        assert hp.alpha_sum == pytest.approx(0.9)
        assert hp.beta_sum == 2.0

    @pytest.mark.parametrize(
        "args",
        [
            (2, 4, [0.1], 0.5),
            (2, 4, [0.1, -0.1], 0.5),
            (2, 4, [0.1, 0.1], 0.0),
            (0, 4, [], 0.5),
            (2, 0, [0.1, 0.1], 0.5),
        ],
    )
    def test_rejects_bad_values(self, args):
        with pytest.raises(ValueError):
            Hyperparams(args[0], args[1], np.asarray(args[2], dtype=float), args[3])


class TestBlockContext:
    def test_rejects_negative_residuals(self):
        with pytest.raises(ValueError, match="nonnegative"):
            BlockContext(np.array([-1, 0]), np.array([0, 0]), np.array([0, 0]), 1)

    def test_rejects_length_mismatch(self):
        with pytest.raises(ValueError, match="share length"):
            BlockContext(np.array([0, 0]), np.array([0]), np.array([0, 0]), 1)

    def test_rejects_empty_block(self):
        with pytest.raises(ValueError, match="block_size"):
            BlockContext(np.array([0]), np.array([0]), np.array([0]), 0)


class TestInitState:
    def test_single_topic_forces_counts(self):
        corpus = tiny_corpus()
        hp = Hyperparams.symmetric(1, corpus.vocab_size, 0.5, 0.5)
        state = init_state(corpus, hp, 7)
        for d, v, c in corpus.blocks():
            assert state.block_vector(d, v).tolist() == [c]
        assert validate_state(state) == []

    @pytest.mark.parametrize("seed", [0, 1, 17])
    def test_token_conservation(self, seed):
        corpus = generate_synthetic(SynthConfig(6, 8, 3, 12, seed=seed)).corpus
        hp = Hyperparams.symmetric(4, corpus.vocab_size, 0.1, 0.01)
        state = init_state(corpus, hp, seed)
        assert int(state.topic_total.sum()) == corpus.total_tokens
        assert validate_state(state) == []

    def test_replays_one_seeded_uniform_draw(self):
        corpus = Corpus.from_counts(1, 1, {(0, 0): 4})
        hp = Hyperparams.symmetric(2, 1, 0.1, 0.1)
        state = init_state(corpus, hp, 123)
        draws = np.random.default_rng(123).integers(0, 2, size=4, dtype=np.int64)
        expected = np.bincount(draws, minlength=2)
        assert state.block_vector(0, 0).tolist() == expected.tolist()

    def test_rejects_empty_corpus(self):
        with pytest.raises(ValueError, match="empty"):
            init_state(Corpus(2, 2, [], [], []), Hyperparams.symmetric(2, 2, 0.1, 0.1), 0)

    def test_rejects_vocab_mismatch(self):
        with pytest.raises(ValueError, match="vocab_size"):
            init_state(tiny_corpus(), Hyperparams.symmetric(2, 99, 0.1, 0.1), 0)


class TestExtractContext:
    def test_single_block_corpus_has_zero_residuals(self):
        corpus = Corpus.from_counts(1, 2, {(0, 0): 5})
        hp = Hyperparams.symmetric(3, 2, 0.1, 0.1)
        ctx = extract_context(init_state(corpus, hp, 0), 0, 0)
        assert not ctx.residual_doc.any()
        assert not ctx.residual_word.any()
        assert not ctx.residual_total.any()
        assert ctx.block_size == 5

    def test_sibling_block_shows_up_in_doc_residual(self):
        corpus = Corpus.from_counts(1, 2, {(0, 0): 2, (0, 1): 3})
        hp = Hyperparams.symmetric(3, 2, 0.1, 0.1)
        state = init_state(corpus, hp, 4)
        other = state.block_vector(0, 1)
        ctx = extract_context(state, 0, 0)
        assert np.array_equal(ctx.residual_doc, other)
        assert not ctx.residual_word.any()
        assert np.array_equal(ctx.residual_total, other)

    def test_matches_recomputed_aggregates(self):
        corpus = generate_synthetic(SynthConfig(5, 6, 2, 10, seed=2)).corpus
        hp = Hyperparams.symmetric(3, corpus.vocab_size, 0.2, 0.05)
        state = init_state(corpus, hp, 11)
        doc_topic, word_topic, total = recomputed_aggregates(state)
        for d, v, _c in corpus.blocks():
            vec = state.block_vector(d, v)
            ctx = extract_context(state, d, v)
            assert np.array_equal(ctx.residual_doc, doc_topic[d] - vec)
            assert np.array_equal(ctx.residual_word, word_topic[v] - vec)
            assert np.array_equal(ctx.residual_total, total - vec)


class TestApplyBlock:
    def test_identity_update_is_a_no_op(self):
        corpus = tiny_corpus()
        hp = Hyperparams.symmetric(2, 3, 0.1, 0.01)
        state = init_state(corpus, hp, 5)
        before = (state.config_key(), state.doc_topic.copy(), state.word_topic.copy())
        apply_block(state, 0, 0, state.block_vector(0, 0))
        assert state.config_key() == before[0]
        assert np.array_equal(state.doc_topic, before[1])
        assert np.array_equal(state.word_topic, before[2])

    def test_delta_arithmetic(self):
        corpus = Corpus.from_counts(1, 1, {(0, 0): 4})
        hp = Hyperparams.symmetric(2, 1, 0.1, 0.1)
        state = init_state(corpus, hp, 0)
        apply_block(state, 0, 0, np.array([3, 1]))
        assert state.doc_topic.tolist() == [[3, 1]]
        apply_block(state, 0, 0, np.array([0, 4]))
        assert state.doc_topic.tolist() == [[0, 4]]
        assert state.word_topic.tolist() == [[0, 4]]
        assert state.topic_total.tolist() == [0, 4]
        assert validate_state(state) == []

    def test_rejects_bad_counts(self):
        state = init_state(tiny_corpus(), Hyperparams.symmetric(2, 3, 0.1, 0.1), 0)
        with pytest.raises(StateInvariantError, match="sum"):
            apply_block(state, 0, 0, np.array([1, 0]))
        with pytest.raises(StateInvariantError, match="nonnegative"):
            apply_block(state, 0, 0, np.array([3, -1]))
        with pytest.raises(ValueError, match="length"):
            apply_block(state, 0, 0, np.array([1, 1, 0]))

    def test_reapplying_old_counts_restores_state(self):
        corpus = generate_synthetic(SynthConfig(4, 5, 2, 8, seed=6)).corpus
        hp = Hyperparams.symmetric(3, corpus.vocab_size, 0.1, 0.05)
        state = init_state(corpus, hp, 1)
        rng = np.random.default_rng(2)
        before = state.config_key()
        for d, v, c in corpus.blocks():
            old = state.block_vector(d, v)
            apply_block(state, d, v, rng.multinomial(c, np.full(3, 1 / 3)))
            apply_block(state, d, v, old)
        assert state.config_key() == before
        assert validate_state(state) == []

    def test_thousand_random_updates_keep_aggregates_exact(self):
        corpus = generate_synthetic(SynthConfig(8, 6, 3, 15, seed=3)).corpus
        hp = Hyperparams.symmetric(3, corpus.vocab_size, 0.1, 0.01)
        state = init_state(corpus, hp, 9)
        rng = np.random.default_rng(10)
        pairs = list(corpus.blocks())
        for _ in range(1000):
            d, v, c = pairs[rng.integers(len(pairs))]
            apply_block(state, d, v, rng.multinomial(c, np.full(3, 1 / 3)))
        doc_topic, word_topic, total = recomputed_aggregates(state)
        assert np.array_equal(doc_topic, state.doc_topic)
        assert np.array_equal(word_topic, state.word_topic)
        assert np.array_equal(total, state.topic_total)
        assert validate_state(state) == []


class TestLogPosterior:
    def test_zero_count_closed_form(self):
        corpus = Corpus(3, 4, [], [], [])
        state = BlockState(corpus, 2)
        hp = Hyperparams(2, 4, np.array([0.3, 0.7]), 0.05)
        expected = 3 * (math.lgamma(0.3) + math.lgamma(0.7))
        expected += 2 * 4 * math.lgamma(0.05)
        expected -= 2 * math.lgamma(4 * 0.05)
        assert log_unnormalized_posterior(state, hp) == pytest.approx(expected, abs=1e-10)

    def test_one_token_unit_priors(self):
        corpus = Corpus.from_counts(1, 2, {(0, 0): 1})
        hp = Hyperparams.symmetric(1, 2, 1.0, 1.0)
        state = init_state(corpus, hp, 0)
        assert log_unnormalized_posterior(state, hp) == pytest.approx(-math.log(2), abs=1e-12)

    def test_matches_term_by_term_recomputation(self):
        corpus = generate_synthetic(SynthConfig(5, 6, 3, 10, seed=8)).corpus
        hp = Hyperparams(3, corpus.vocab_size, np.array([0.1, 0.5, 1.2]), 0.07)
        state = init_state(corpus, hp, 3)
        doc_topic, word_topic, total = recomputed_aggregates(state)
        expected = 0.0
        for d in range(corpus.n_docs):
            for k in range(3):
                expected += math.lgamma(doc_topic[d, k] + hp.alpha[k])
        for v in range(corpus.vocab_size):
            for k in range(3):
                expected += math.lgamma(word_topic[v, k] + hp.beta)
        for k in range(3):
            expected -= math.lgamma(total[k] + hp.beta_sum)
        assert log_unnormalized_posterior(state, hp) == pytest.approx(expected, abs=1e-10)

    def test_delta_matches_full_difference(self):
        corpus = generate_synthetic(SynthConfig(6, 5, 2, 9, seed=4)).corpus
        hp = Hyperparams.symmetric(4, corpus.vocab_size, 0.3, 0.02)
        state = init_state(corpus, hp, 6)
        rng = np.random.default_rng(7)
        for d, v, c in corpus.blocks():
            ctx = extract_context(state, d, v)
            old = state.block_vector(d, v)
            new = rng.multinomial(c, np.full(4, 0.25))
            delta = log_posterior_delta(ctx, old, new, hp)
            assert delta == -log_posterior_delta(ctx, new, old, hp)
            lp0 = log_unnormalized_posterior(state, hp)
            apply_block(state, d, v, new)
            lp1 = log_unnormalized_posterior(state, hp)
            assert delta == pytest.approx(lp1 - lp0, abs=1e-9)


class TestValidateState:
    def test_fresh_state_is_clean(self):
        state = init_state(tiny_corpus(), Hyperparams.symmetric(2, 3, 0.1, 0.1), 0)
        assert validate_state(state) == []

    def test_detects_corrupted_aggregate(self):
        state = init_state(tiny_corpus(), Hyperparams.symmetric(2, 3, 0.1, 0.1), 0)
        state.doc_topic[0, 0] += 1
        assert validate_state(state) == ["doc_topic does not match recomputation from blocks"]

    def test_detects_broken_block_sum(self):
        state = init_state(Corpus.from_counts(1, 1, {(0, 0): 3}), Hyperparams.symmetric(1, 1, 0.1, 0.1), 0)
        state.entry_count[0] = 2
        problems = validate_state(state)
        assert any("counts sum to 2" in p for p in problems)

    def test_clean_after_a_hundred_sweeps(self):
        corpus = generate_synthetic(SynthConfig(6, 7, 2, 10, seed=5)).corpus
        hp = Hyperparams.symmetric(3, corpus.vocab_size, 0.1, 0.01)
        state = init_state(corpus, hp, 2)
        rng = np.random.default_rng(2)
        for _ in range(100):
            single_site_sweep(state, hp, rng)
        assert validate_state(state) == []


class TestCheckpoint:
    def test_round_trip(self, tmp_path):
        corpus = generate_synthetic(SynthConfig(5, 6, 2, 8, seed=1)).corpus
        hp = Hyperparams.symmetric(3, corpus.vocab_size, 0.1, 0.01)
        state = init_state(corpus, hp, 42)
        path = tmp_path / "chain.checkpoint.txt"
        save_checkpoint(state, path, seed=42, iteration=17)
        loaded, seed, iteration = load_checkpoint(path, corpus)
        assert (seed, iteration) == (42, 17)
        assert loaded.config_key() == state.config_key()
        assert np.array_equal(loaded.doc_topic, state.doc_topic)
        assert np.array_equal(loaded.word_topic, state.word_topic)
        assert np.array_equal(loaded.topic_total, state.topic_total)

    def test_header_and_one_based_ids(self, tmp_path):
        corpus = Corpus.from_counts(2, 3, {(0, 1): 2, (1, 2): 1})
        state = init_state(corpus, Hyperparams.symmetric(2, 3, 0.1, 0.1), 3)
        path = tmp_path / "ck.txt"
        save_checkpoint(state, path, seed=3, iteration=0)
        lines = path.read_text().splitlines()
        assert lines[0] == "2 3 2 3 0"
        assert lines[1].startswith("1 2 ")
        assert lines[2].startswith("2 3 ")

    def test_rejects_wrong_corpus(self, tmp_path):
        corpus = Corpus.from_counts(1, 2, {(0, 0): 2})
        state = init_state(corpus, Hyperparams.symmetric(2, 2, 0.1, 0.1), 0)
        path = tmp_path / "ck.txt"
        save_checkpoint(state, path, seed=0, iteration=1)
        with pytest.raises(StateInvariantError, match="checkpoint is for"):
            load_checkpoint(path, Corpus.from_counts(2, 2, {(0, 0): 2, (1, 1): 1}))
        other = Corpus.from_counts(1, 2, {(0, 1): 2})
        with pytest.raises(StateInvariantError, match="not in corpus"):
            load_checkpoint(path, other)

    def test_rejects_malformed_files(self, tmp_path):
        corpus = Corpus.from_counts(1, 2, {(0, 0): 2})
        bad_header = tmp_path / "h.txt"
        bad_header.write_text("1 2 2\n")
        with pytest.raises(CorpusFormatError, match="header"):
            load_checkpoint(bad_header, corpus)
        bad_sum = tmp_path / "s.txt"
        bad_sum.write_text("1 2 2 0 0\n1 1 1 0\n")
        with pytest.raises(StateInvariantError, match="sum"):
            load_checkpoint(bad_sum, corpus)
        missing_rows = tmp_path / "m.txt"
        missing_rows.write_text("1 2 2 0 0\n")
        with pytest.raises(StateInvariantError, match="block rows"):
            load_checkpoint(missing_rows, corpus)


def test_copy_is_independent():
    state = init_state(tiny_corpus(), Hyperparams.symmetric(2, 3, 0.1, 0.1), 0)
    dup = state.copy()
    frozen = dup.config_key()
    apply_block(state, 0, 0, np.array([2, 0]))
    apply_block(state, 0, 0, np.array([0, 2]))
    assert state.block_vector(0, 0).tolist() == [0, 2]
    assert dup.config_key() == frozen
    assert validate_state(dup) == []
