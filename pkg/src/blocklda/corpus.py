"""Bag-of-words corpora: file I/O, synthetic generation, holdout splitting.

A corpus is a sparse table of per-document word counts. Word identity within
a document carries no order, so everything downstream works on the blocks
(d, v, count) directly. External files use the UCI bag-of-words layout with
1-based ids; in memory everything is 0-based.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .rand import as_generator


class CorpusFormatError(ValueError):
    """Malformed corpus or vocabulary file."""


class Corpus:
    """Sparse document-word count table.

    Blocks are stored sorted ascending by (doc, word) and every stored count
    is >= 1. Docs with no tokens are legal and simply have no blocks.
    """

    def __init__(self, n_docs, vocab_size, doc_ids, word_ids, counts, vocab=None):
        self.n_docs = int(n_docs)
        self.vocab_size = int(vocab_size)
        self.doc_ids = np.asarray(doc_ids, dtype=np.int32)
        self.word_ids = np.asarray(word_ids, dtype=np.int32)
        self.counts = np.asarray(counts, dtype=np.int32)
        self.vocab = list(vocab) if vocab is not None else None
        self._index = None
        self._validate()

    def _validate(self):
        if self.n_docs < 0 or self.vocab_size < 1:
            raise ValueError("need n_docs >= 0 and vocab_size >= 1")
        b = self.doc_ids.size
        if self.word_ids.size != b or self.counts.size != b:
            raise ValueError("block arrays must have equal length")
        if b:
            if self.doc_ids.min() < 0 or self.doc_ids.max() >= self.n_docs:
                raise ValueError("doc id out of range")
            if self.word_ids.min() < 0 or self.word_ids.max() >= self.vocab_size:
                raise ValueError("word id out of range")
            if self.counts.min() < 1:
                raise ValueError("all stored counts must be >= 1")
            key = self.doc_ids.astype(np.int64) * self.vocab_size + self.word_ids
            if np.any(np.diff(key) <= 0):
                raise ValueError("blocks must be sorted ascending by (doc, word) with no duplicates")
        if self.vocab is not None and len(self.vocab) != self.vocab_size:
            raise ValueError("vocab length must equal vocab_size")
        self.doc_len = np.zeros(self.n_docs, dtype=np.int64)
        np.add.at(self.doc_len, self.doc_ids, self.counts.astype(np.int64))

    @classmethod
    def from_counts(cls, n_docs, vocab_size, counts, vocab=None):
        """Build from a {(doc, word): count} mapping, 0-based ids."""
        items = sorted(counts.items())
        d = [dv[0] for dv, _ in items]
        v = [dv[1] for dv, _ in items]
        c = [n for _, n in items]
        return cls(n_docs, vocab_size, d, v, c, vocab=vocab)

    @property
    def n_blocks(self) -> int:
        return int(self.doc_ids.size)

    @property
    def total_tokens(self) -> int:
        return int(self.counts.sum())

    @property
    def max_count(self) -> int:
        return int(self.counts.max()) if self.counts.size else 0

    def block_index(self, d: int, v: int) -> int:
        """Index of block (d, v); KeyError if the pair has no tokens."""
        if self._index is None:
            self._index = {
                (int(dd), int(vv)): i
                for i, (dd, vv) in enumerate(zip(self.doc_ids, self.word_ids))
            }
        return self._index[(d, v)]

    def count(self, d: int, v: int) -> int:
        try:
            return int(self.counts[self.block_index(d, v)])
        except KeyError:
            return 0

    def blocks(self):
        """Yield (doc, word, count) in storage order."""
        for d, v, c in zip(self.doc_ids, self.word_ids, self.counts):
            yield int(d), int(v), int(c)

    def __eq__(self, other):
        if not isinstance(other, Corpus):
            return NotImplemented
        return (
            self.n_docs == other.n_docs
            and self.vocab_size == other.vocab_size
            and np.array_equal(self.doc_ids, other.doc_ids)
            and np.array_equal(self.word_ids, other.word_ids)
            and np.array_equal(self.counts, other.counts)
        )

    def __repr__(self):
        return (
            f"Corpus(n_docs={self.n_docs}, vocab_size={self.vocab_size}, "
            f"n_blocks={self.n_blocks}, total_tokens={self.total_tokens})"
        )


def parse_uci_bow(path) -> Corpus:
    """Read a UCI bag-of-words file: three header lines (D, W, NNZ), then
    NNZ lines of "docID wordID count" with 1-based ids."""
    with open(path, "r", encoding="utf-8") as fh:
        try:
            n_docs = int(fh.readline())
            vocab_size = int(fh.readline())
            nnz = int(fh.readline())
        except ValueError as exc:
            raise CorpusFormatError(f"{path}: bad header") from exc
        d = np.empty(nnz, dtype=np.int32)
        v = np.empty(nnz, dtype=np.int32)
        c = np.empty(nnz, dtype=np.int32)
        i = 0
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if i >= nnz:
                raise CorpusFormatError(f"{path}: more rows than the declared {nnz}")
            parts = line.split()
            if len(parts) != 3:
                raise CorpusFormatError(f"{path}: expected 3 fields, got {line!r}")
            try:
                d[i], v[i], c[i] = int(parts[0]), int(parts[1]), int(parts[2])
            except ValueError as exc:
                raise CorpusFormatError(f"{path}: non-integer row {line!r}") from exc
            i += 1
        if i != nnz:
            raise CorpusFormatError(f"{path}: declared {nnz} rows, found {i}")
    if nnz:
        if d.min() < 1 or d.max() > n_docs:
            raise CorpusFormatError(f"{path}: doc id outside 1..{n_docs}")
        if v.min() < 1 or v.max() > vocab_size:
            raise CorpusFormatError(f"{path}: word id outside 1..{vocab_size}")
        if c.min() < 1:
            raise CorpusFormatError(f"{path}: counts must be >= 1")
    d -= 1
    v -= 1
    order = np.lexsort((v, d))
    d, v, c = d[order], v[order], c[order]
    key = d.astype(np.int64) * vocab_size + v
    if nnz and np.any(np.diff(key) == 0):
        raise CorpusFormatError(f"{path}: duplicate (doc, word) rows")
    try:
        return Corpus(n_docs, vocab_size, d, v, c)
    except ValueError as exc:
        raise CorpusFormatError(f"{path}: {exc}") from exc


def write_uci_bow(corpus: Corpus, path) -> None:
    """Inverse of parse_uci_bow; rows ascending by doc then word."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{corpus.n_docs}\n{corpus.vocab_size}\n{corpus.n_blocks}\n")
        for d, v, c in zip(corpus.doc_ids, corpus.word_ids, corpus.counts):
            fh.write(f"{d + 1} {v + 1} {c}\n")


def parse_vocab(path, vocab_size=None) -> list[str]:
    """One token per line; optionally checked against an expected size."""
    with open(path, "r", encoding="utf-8") as fh:
        words = [line.strip() for line in fh]
    while words and not words[-1]:
        words.pop()
    if any(not w for w in words):
        raise CorpusFormatError(f"{path}: empty vocabulary entry")
    if vocab_size is not None and len(words) != vocab_size:
        raise CorpusFormatError(
            f"{path}: {len(words)} entries, corpus declares {vocab_size}"
        )
    return words


def write_vocab(words, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for w in words:
            fh.write(f"{w}\n")


@dataclass
class SynthConfig:
    """Settings for the synthetic generator.

    alpha may be a scalar (symmetric) or a length-n_topics vector. true_phi,
    when given, fixes the topic-word distributions instead of drawing them
    from the symmetric beta prior.
    """

    n_docs: int
    vocab_size: int
    n_topics: int
    doc_length: int
    alpha: float | np.ndarray = 0.1
    beta: float = 0.01
    seed: int = 0
    true_phi: np.ndarray | None = None

    def alpha_vector(self) -> np.ndarray:
        a = np.asarray(self.alpha, dtype=np.float64)
        if a.ndim == 0:
            a = np.full(self.n_topics, float(a))
        if a.shape != (self.n_topics,) or np.any(a <= 0):
            raise ValueError("alpha must be positive, scalar or length n_topics")
        return a


class SynthData(NamedTuple):
    """A generated corpus with the mixture parameters that produced it."""

    corpus: Corpus
    theta: np.ndarray
    phi: np.ndarray


def generate_synthetic(cfg: SynthConfig) -> SynthData:
    """Draw a corpus from the mixture model.

    Per document: theta ~ Dirichlet(alpha); each of doc_length tokens picks a
    topic from theta and then a word from that topic's phi row. Tokens are
    drawn as nested multinomials over (topic, word) counts, which induces the
    same distribution on the resulting count table. Deterministic given seed.
    Returns the corpus together with the theta and phi that generated it.
    """
    if cfg.n_docs < 1 or cfg.vocab_size < 1 or cfg.n_topics < 1 or cfg.doc_length < 1:
        raise ValueError("n_docs, vocab_size, n_topics, doc_length must be >= 1")
    if cfg.beta <= 0:
        raise ValueError("beta must be > 0")
    rng = as_generator(cfg.seed)
    alpha = cfg.alpha_vector()
    K, V, D, N = cfg.n_topics, cfg.vocab_size, cfg.n_docs, cfg.doc_length

    if cfg.true_phi is not None:
        phi = np.asarray(cfg.true_phi, dtype=np.float64)
        if phi.shape != (K, V) or np.any(phi < 0):
            raise ValueError("true_phi must be nonnegative with shape (n_topics, vocab_size)")
        phi = phi / phi.sum(axis=1, keepdims=True)
    else:
        phi = rng.standard_gamma(cfg.beta, size=(K, V))
        phi /= phi.sum(axis=1, keepdims=True)

    theta = rng.standard_gamma(alpha, size=(D, K))
    theta /= theta.sum(axis=1, keepdims=True)
    topic_counts = rng.multinomial(N, theta)  # (D, K)

    doc_ids, word_ids, counts = [], [], []
    word_buf = np.zeros(V, dtype=np.int64)
    for d in range(D):
        word_buf[:] = 0
        for k in range(K):
            m = topic_counts[d, k]
            if m:
                word_buf += rng.multinomial(m, phi[k])
        nz = np.nonzero(word_buf)[0]
        doc_ids.append(np.full(nz.size, d, dtype=np.int32))
        word_ids.append(nz.astype(np.int32))
        counts.append(word_buf[nz].astype(np.int32))
    corpus = Corpus(
        D,
        V,
        np.concatenate(doc_ids),
        np.concatenate(word_ids),
        np.concatenate(counts),
    )
    return SynthData(corpus=corpus, theta=theta, phi=phi)


@dataclass
class SplitSpec:
    """Document-completion holdout: the last holdout_docs documents each give
    round(fraction * N_d) tokens (half-to-even) to the test side."""

    holdout_docs: int
    fraction: float = 0.5
    seed: int = 0


@dataclass
class SplitResult:
    train: Corpus
    test: Corpus
    held_docs: np.ndarray = field(repr=False)


def document_completion_split(corpus: Corpus, spec: SplitSpec) -> SplitResult:
    """Split held-out docs into observed and evaluation halves.

    Test tokens are chosen without replacement, uniformly over each held
    document's tokens (one multivariate hypergeometric draw per doc), so per
    (d, v) the train and test counts sum to the original count. Both returned
    corpora keep the original doc indexing.
    """
    H = int(spec.holdout_docs)
    if not 0 <= H <= corpus.n_docs:
        raise ValueError("holdout_docs outside 0..n_docs")
    if not 0.0 <= spec.fraction <= 1.0:
        raise ValueError("fraction outside [0, 1]")
    rng = as_generator(spec.seed)
    held = np.arange(corpus.n_docs - H, corpus.n_docs, dtype=np.int64)

    train_counts = corpus.counts.astype(np.int64).copy()
    test_counts = np.zeros_like(train_counts)
    lo = np.searchsorted(corpus.doc_ids, held, side="left")
    hi = np.searchsorted(corpus.doc_ids, held, side="right")
    for d, a, b in zip(held, lo, hi):
        n_d = int(corpus.doc_len[d])
        if n_d == 0:
            continue
        m = round(spec.fraction * n_d)
        drawn = rng.multivariate_hypergeometric(train_counts[a:b], m)
        test_counts[a:b] = drawn
        train_counts[a:b] -= drawn

    def _pack(cnt):
        keep = cnt > 0
        return Corpus(
            corpus.n_docs,
            corpus.vocab_size,
            corpus.doc_ids[keep],
            corpus.word_ids[keep],
            cnt[keep],
            vocab=corpus.vocab,
        )

    return SplitResult(train=_pack(train_counts), test=_pack(test_counts), held_docs=held)


def singleton_fraction(corpus: Corpus) -> float:
    """Share of tokens that sit in a block of size one."""
    total = corpus.total_tokens
    if total == 0:
        raise ValueError("singleton_fraction of an empty corpus is undefined")
    return float((corpus.counts == 1).sum()) / float(total)
