"""Count-based chain state for the collapsed samplers.

Topic labels of individual tokens are exchangeable within a block (same doc,
same word), so the chain never materialises per-token labels. The state is
the per-block topic count vector plus three aggregate tables: doc-topic,
word-topic, and per-topic totals. Block counts are stored packed (only the
nonzero topics), which keeps memory linear in the corpus size rather than in
n_blocks * n_topics.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

from .corpus import Corpus, CorpusFormatError
from .rand import as_generator


class StateInvariantError(RuntimeError):
    """Chain state violates a structural invariant."""


@dataclass(frozen=True)
class Hyperparams:
    """Model hyperparameters. alpha is per-topic; beta is symmetric."""

    n_topics: int
    vocab_size: int
    alpha: np.ndarray
    beta: float

    def __post_init__(self):
        a = np.ascontiguousarray(np.asarray(self.alpha, dtype=np.float64))
        if a.shape != (self.n_topics,):
            raise ValueError("alpha must have length n_topics")
        if np.any(a <= 0) or not np.all(np.isfinite(a)):
            raise ValueError("alpha entries must be positive and finite")
        if self.beta <= 0 or not np.isfinite(self.beta):
            raise ValueError("beta must be positive and finite")
        if self.n_topics < 1 or self.vocab_size < 1:
            raise ValueError("n_topics and vocab_size must be >= 1")
        object.__setattr__(self, "alpha", a)

    @classmethod
    def symmetric(cls, n_topics, vocab_size, alpha, beta):
        return cls(n_topics, vocab_size, np.full(n_topics, float(alpha)), float(beta))

    @property
    def alpha_sum(self) -> float:
        return float(self.alpha.sum())

    @property
    def beta_sum(self) -> float:
        """V * beta, the word-side concentration total per topic."""
        return float(self.vocab_size * self.beta)


@dataclass
class BlockContext:
    """Aggregate counts with one block's contribution removed."""

    residual_doc: np.ndarray
    residual_word: np.ndarray
    residual_total: np.ndarray
    block_size: int

    def __post_init__(self):
        if self.block_size < 1:
            raise ValueError("block_size must be >= 1")
        for name in ("residual_doc", "residual_word", "residual_total"):
            arr = np.ascontiguousarray(np.asarray(getattr(self, name), dtype=np.int64))
            if arr.ndim != 1 or np.any(arr < 0):
                raise ValueError(f"{name} must be a nonnegative vector")
            object.__setattr__(self, name, arr)
        k = self.residual_doc.size
        if self.residual_word.size != k or self.residual_total.size != k:
            raise ValueError("residual vectors must share length")


class BlockState:
    """Packed per-block topic counts plus aggregates, tied to one corpus."""

    def __init__(self, corpus: Corpus, n_topics: int):
        self.corpus = corpus
        self.n_topics = int(n_topics)
        caps = corpus.counts.astype(np.int64)
        self.indptr = np.zeros(corpus.n_blocks + 1, dtype=np.int64)
        np.cumsum(caps, out=self.indptr[1:])
        total = int(self.indptr[-1])
        self.entry_topic = np.zeros(total, dtype=np.int32)
        self.entry_count = np.zeros(total, dtype=np.int32)
        self.block_nnz = np.zeros(corpus.n_blocks, dtype=np.int32)
        self.doc_topic = np.zeros((corpus.n_docs, n_topics), dtype=np.int64)
        self.word_topic = np.zeros((corpus.vocab_size, n_topics), dtype=np.int64)
        self.topic_total = np.zeros(n_topics, dtype=np.int64)

    def block_vector(self, d: int, v: int) -> np.ndarray:
        """Dense length-K topic counts for block (d, v)."""
        b = self.corpus.block_index(d, v)
        out = np.zeros(self.n_topics, dtype=np.int64)
        base, m = self.indptr[b], self.block_nnz[b]
        out[self.entry_topic[base : base + m]] = self.entry_count[base : base + m]
        return out

    def set_block_raw(self, b: int, dense: np.ndarray) -> None:
        """Overwrite block b's packed entries from a dense vector. No
        aggregate updates; callers keep those consistent."""
        nz = np.nonzero(dense)[0]
        base = self.indptr[b]
        if nz.size > self.indptr[b + 1] - base:
            raise StateInvariantError("block has more nonzero topics than tokens")
        self.entry_topic[base : base + nz.size] = nz
        self.entry_count[base : base + nz.size] = dense[nz]
        self.block_nnz[b] = nz.size

    def config_key(self) -> tuple:
        """Hashable snapshot of all block count vectors, in block order.
        Meant for small state spaces (exactness tests)."""
        out = []
        K = self.n_topics
        for b in range(self.corpus.n_blocks):
            dense = [0] * K
            base, m = self.indptr[b], self.block_nnz[b]
            for j in range(base, base + m):
                dense[self.entry_topic[j]] = int(self.entry_count[j])
            out.append(tuple(dense))
        return tuple(out)

    def copy(self) -> "BlockState":
        st = BlockState.__new__(BlockState)
        st.corpus = self.corpus
        st.n_topics = self.n_topics
        st.indptr = self.indptr
        st.entry_topic = self.entry_topic.copy()
        st.entry_count = self.entry_count.copy()
        st.block_nnz = self.block_nnz.copy()
        st.doc_topic = self.doc_topic.copy()
        st.word_topic = self.word_topic.copy()
        st.topic_total = self.topic_total.copy()
        return st


def init_state(corpus: Corpus, hp: Hyperparams, rng) -> BlockState:
    """Uniform random topic per token, then pack per-block counts.

    Consumes exactly one integers(0, K, total_tokens) draw from rng, so two
    chains with the same seed start identically regardless of sampler kind.
    """
    if hp.vocab_size != corpus.vocab_size:
        raise ValueError("hyperparameter vocab_size does not match corpus")
    total = corpus.total_tokens
    if total == 0:
        raise ValueError("cannot initialize a chain on an empty corpus")
    rng = as_generator(rng)
    st = BlockState(corpus, hp.n_topics)
    topics = rng.integers(0, hp.n_topics, size=total, dtype=np.int64)

    token_block = np.repeat(np.arange(corpus.n_blocks, dtype=np.int64), corpus.counts)
    key = token_block * hp.n_topics + topics
    uniq, cnt = np.unique(key, return_counts=True)
    e_block = uniq // hp.n_topics
    e_topic = (uniq % hp.n_topics).astype(np.int32)
    nnz = np.bincount(e_block, minlength=corpus.n_blocks).astype(np.int32)
    dest = st.indptr[e_block] + np.arange(uniq.size) - np.repeat(
        np.cumsum(nnz) - nnz, nnz
    )
    st.entry_topic[dest] = e_topic
    st.entry_count[dest] = cnt
    st.block_nnz[:] = nnz

    e_doc = corpus.doc_ids[e_block]
    e_word = corpus.word_ids[e_block]
    np.add.at(st.doc_topic, (e_doc, e_topic), cnt)
    np.add.at(st.word_topic, (e_word, e_topic), cnt)
    st.topic_total[:] = np.bincount(e_topic, weights=cnt, minlength=hp.n_topics)
    return st


def extract_context(state: BlockState, d: int, v: int) -> BlockContext:
    """Aggregates with block (d, v) subtracted out."""
    b = state.corpus.block_index(d, v)
    vec = state.block_vector(d, v)
    return BlockContext(
        residual_doc=state.doc_topic[d] - vec,
        residual_word=state.word_topic[v] - vec,
        residual_total=state.topic_total - vec,
        block_size=int(state.corpus.counts[b]),
    )


def apply_block(state: BlockState, d: int, v: int, new_counts) -> None:
    """Replace block (d, v)'s counts and apply the aggregate deltas."""
    b = state.corpus.block_index(d, v)
    new = np.asarray(new_counts, dtype=np.int64)
    if new.shape != (state.n_topics,):
        raise ValueError("new_counts must be a length-K vector")
    if np.any(new < 0) or new.sum() != state.corpus.counts[b]:
        raise StateInvariantError("block counts must be nonnegative and sum to the block size")
    old = state.block_vector(d, v)
    delta = new - old
    state.doc_topic[d] += delta
    state.word_topic[v] += delta
    state.topic_total += delta
    state.set_block_raw(b, new)


def log_unnormalized_posterior(state: BlockState, hp: Hyperparams) -> float:
    """Joint collapsed density of the count table, up to a constant."""
    s = float(gammaln(state.doc_topic + hp.alpha).sum())
    s += float(gammaln(state.word_topic + hp.beta).sum())
    s -= float(gammaln(state.topic_total + hp.beta_sum).sum())
    return s


def log_posterior_delta(
    ctx: BlockContext, old_counts, new_counts, hp: Hyperparams
) -> float:
    """Change in log_unnormalized_posterior when one block moves from
    old_counts to new_counts; needs only that block's residuals."""
    old = np.asarray(old_counts, dtype=np.int64)
    new = np.asarray(new_counts, dtype=np.int64)
    a = ctx.residual_doc + hp.alpha
    b = ctx.residual_word + hp.beta
    c = ctx.residual_total + hp.beta_sum
    s = float((gammaln(a + new) - gammaln(a + old)).sum())
    s += float((gammaln(b + new) - gammaln(b + old)).sum())
    s -= float((gammaln(c + new) - gammaln(c + old)).sum())
    return s


def validate_state(state: BlockState) -> list[str]:
    """Return human-readable descriptions of violated invariants (empty if
    the state is consistent)."""
    problems = []
    c = state.corpus
    K = state.n_topics
    for b in range(c.n_blocks):
        base, m = state.indptr[b], int(state.block_nnz[b])
        t = state.entry_topic[base : base + m]
        n = state.entry_count[base : base + m]
        if m and (t.min() < 0 or t.max() >= K):
            problems.append(f"block {b}: topic id out of range")
        if np.any(np.diff(t) <= 0):
            problems.append(f"block {b}: packed topics not strictly ascending")
        if np.any(n < 1):
            problems.append(f"block {b}: packed count < 1")
        if n.sum() != c.counts[b]:
            problems.append(
                f"block {b}: counts sum to {int(n.sum())}, block size is {int(c.counts[b])}"
            )
    e_block = np.repeat(np.arange(c.n_blocks), state.block_nnz)
    mask = np.zeros(state.entry_topic.size, dtype=bool)
    for b in range(c.n_blocks):
        base, m = state.indptr[b], int(state.block_nnz[b])
        mask[base : base + m] = True
    t = state.entry_topic[mask]
    n = state.entry_count[mask].astype(np.int64)
    dt = np.zeros_like(state.doc_topic)
    wt = np.zeros_like(state.word_topic)
    np.add.at(dt, (c.doc_ids[e_block], t), n)
    np.add.at(wt, (c.word_ids[e_block], t), n)
    tt = np.bincount(t, weights=n, minlength=K).astype(np.int64)
    if not np.array_equal(dt, state.doc_topic):
        problems.append("doc_topic does not match recomputation from blocks")
    if not np.array_equal(wt, state.word_topic):
        problems.append("word_topic does not match recomputation from blocks")
    if not np.array_equal(tt, state.topic_total):
        problems.append("topic_total does not match recomputation from blocks")
    return problems


def save_checkpoint(state: BlockState, path, seed: int, iteration: int) -> None:
    """Text checkpoint: header "D V K seed iteration", then one line per
    stored block: "d v n_1 ... n_K" with 1-based d and v."""
    c = state.corpus
    K = state.n_topics
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{c.n_docs} {c.vocab_size} {K} {seed} {iteration}\n")
        dense = np.zeros(K, dtype=np.int64)
        for b in range(c.n_blocks):
            dense[:] = 0
            base, m = state.indptr[b], state.block_nnz[b]
            dense[state.entry_topic[base : base + m]] = state.entry_count[base : base + m]
            row = " ".join(str(int(x)) for x in dense)
            fh.write(f"{c.doc_ids[b] + 1} {c.word_ids[b] + 1} {row}\n")


def load_checkpoint(path, corpus: Corpus):
    """Rebuild (state, seed, iteration) from save_checkpoint output.

    Aggregates are recomputed from the block records; any mismatch with the
    corpus (shape, ids, block sums) raises StateInvariantError.
    """
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().split()
        if len(header) != 5:
            raise CorpusFormatError(f"{path}: checkpoint header must have 5 fields")
        try:
            D, V, K, seed, iteration = (int(x) for x in header)
        except ValueError as exc:
            raise CorpusFormatError(f"{path}: non-integer checkpoint header field") from exc
        if D != corpus.n_docs or V != corpus.vocab_size:
            raise StateInvariantError(
                f"checkpoint is for a {D}x{V} corpus, got {corpus.n_docs}x{corpus.vocab_size}"
            )
        st = BlockState(corpus, K)
        seen = 0
        for line in fh:
            parts = line.split()
            if not parts:
                continue
            if len(parts) != K + 2:
                raise CorpusFormatError(f"{path}: expected {K + 2} fields per block row")
            d, v = int(parts[0]) - 1, int(parts[1]) - 1
            dense = np.array([int(x) for x in parts[2:]], dtype=np.int64)
            try:
                b = corpus.block_index(d, v)
            except KeyError:
                raise StateInvariantError(f"checkpoint block ({d + 1}, {v + 1}) not in corpus")
            if np.any(dense < 0) or dense.sum() != corpus.counts[b]:
                raise StateInvariantError(
                    f"checkpoint block ({d + 1}, {v + 1}) counts do not sum to the corpus count"
                )
            vec = dense[dense > 0]
            nz = np.nonzero(dense)[0]
            base = st.indptr[b]
            st.entry_topic[base : base + nz.size] = nz
            st.entry_count[base : base + nz.size] = vec
            st.block_nnz[b] = nz.size
            st.doc_topic[d] += dense
            st.word_topic[v] += dense
            st.topic_total += dense
            seen += 1
        if seen != corpus.n_blocks:
            raise StateInvariantError(
                f"checkpoint has {seen} block rows, corpus has {corpus.n_blocks}"
            )
    problems = validate_state(st)
    if problems:
        raise StateInvariantError("; ".join(problems))
    return st, seed, iteration
