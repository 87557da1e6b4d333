"""Brute-force enumeration oracles for the test suite.

These recompute the target distributions by direct summation: per-block
conditionals over all compositions, and the full collapsed posterior over
all count configurations of a tiny corpus. They share no code with the
production kernels beyond the data types, so agreement is meaningful.
Hard guards keep the combinatorics from blowing up by accident.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .corpus import Corpus
from .state import BlockContext, Hyperparams


@dataclass
class ExactPmf:
    """A finite distribution over hashable count configurations."""

    support: list
    probabilities: np.ndarray
    log_normalizer: float | None = None
    _index: dict = field(init=False, repr=False)

    def __post_init__(self):
        self.probabilities = np.asarray(self.probabilities, dtype=np.float64)
        if len(self.support) != self.probabilities.size:
            raise ValueError("support and probabilities must be parallel")
        if self.probabilities.size and self.probabilities.min() < 0:
            raise ValueError("probabilities must be nonnegative")
        if self.probabilities.size and abs(self.probabilities.sum() - 1.0) > 1e-12:
            raise ValueError("probabilities must sum to 1")
        self._index = {}
        for i, key in enumerate(self.support):
            if key in self._index:
                raise ValueError(f"duplicate support entry {key!r}")
            self._index[key] = i

    def prob_of(self, key) -> float:
        i = self._index.get(key)
        return 0.0 if i is None else float(self.probabilities[i])

    def as_dict(self) -> dict:
        return {k: float(self.probabilities[i]) for k, i in self._index.items()}


def _compositions(total: int, parts: int):
    """All nonnegative integer vectors of length `parts` summing to `total`."""
    if parts == 1:
        yield (total,)
        return
    for first in range(total + 1):
        for rest in _compositions(total - first, parts - 1):
            yield (first,) + rest


def _rising(a: float, n: int) -> float:
    out = 1.0
    for i in range(n):
        out *= a + i
    return out


def enumerate_block_pmf(ctx: BlockContext, hp: Hyperparams) -> ExactPmf:
    """Exact conditional over one block's count vector.

    Weighs every composition of the block size by plain rising-factorial
    products, independent of the recurrence the sampler uses.
    """
    K = hp.n_topics
    C = ctx.block_size
    if C > 6 or K > 6:
        raise ValueError(f"enumeration guard: need C <= 6 and K <= 6, got C={C}, K={K}")
    support = []
    weights = []
    for comp in _compositions(C, K):
        w = 1.0
        for k in range(K):
            n = comp[k]
            if n == 0:
                continue
            w *= (
                _rising(ctx.residual_doc[k] + hp.alpha[k], n)
                * _rising(ctx.residual_word[k] + hp.beta, n)
                / (math.factorial(n) * _rising(ctx.residual_total[k] + hp.beta_sum, n))
            )
        support.append(comp)
        weights.append(w)
    weights = np.asarray(weights)
    total = weights.sum()
    if total <= 0:
        raise ValueError("all compositions have zero weight")
    return ExactPmf(support, weights / total, log_normalizer=math.log(total))


def _config_count(corpus: Corpus, K: int) -> int:
    total = 1
    for c in corpus.counts:
        total *= math.comb(int(c) + K - 1, K - 1)
        if total > 10**6:
            return total
    return total


def enumerate_full_posterior(corpus: Corpus, hp: Hyperparams) -> ExactPmf:
    """Exact collapsed posterior over whole count configurations.

    A configuration assigns each stored (doc, word) pair a count vector over
    topics; its weight is the product of the usual Gamma ratios over the
    aggregated tables times the number of token labelings that realize it,
    C!/prod(n_k!) per block. Support keys match BlockState.config_key().
    """
    K = hp.n_topics
    if corpus.vocab_size != hp.vocab_size:
        raise ValueError("corpus and hyperparameters disagree on vocab_size")
    if corpus.n_blocks == 0:
        raise ValueError("corpus has no stored pairs")
    if _config_count(corpus, K) > 10**6:
        raise ValueError("enumeration guard: more than 1e6 configurations")
    per_block = [list(_compositions(int(c), K)) for c in corpus.counts]
    D, V = corpus.n_docs, corpus.vocab_size
    support = []
    logw = []
    config = [None] * corpus.n_blocks

    def visit(b: int, log_mult: float):
        if b == corpus.n_blocks:
            doc_topic = np.zeros((D, K))
            word_topic = np.zeros((V, K))
            for i in range(corpus.n_blocks):
                d, v = corpus.doc_ids[i], corpus.word_ids[i]
                for k in range(K):
                    doc_topic[d, k] += config[i][k]
                    word_topic[v, k] += config[i][k]
            topic_total = word_topic.sum(axis=0)
            lw = log_mult
            for d in range(D):
                for k in range(K):
                    lw += math.lgamma(doc_topic[d, k] + hp.alpha[k]) - math.lgamma(hp.alpha[k])
            for v in range(V):
                for k in range(K):
                    lw += math.lgamma(word_topic[v, k] + hp.beta) - math.lgamma(hp.beta)
            for k in range(K):
                lw -= math.lgamma(topic_total[k] + hp.beta_sum) - math.lgamma(hp.beta_sum)
            support.append(tuple(tuple(c) for c in config))
            logw.append(lw)
            return
        c_b = int(corpus.counts[b])
        for comp in per_block[b]:
            lm = math.lgamma(c_b + 1)
            for n in comp:
                lm -= math.lgamma(n + 1)
            config[b] = comp
            visit(b + 1, log_mult + lm)

    visit(0, 0.0)
    logw = np.asarray(logw)
    m = logw.max()
    w = np.exp(logw - m)
    total = w.sum()
    return ExactPmf(support, w / total, log_normalizer=float(m + np.log(total)))


def _as_dict(p) -> dict:
    if isinstance(p, ExactPmf):
        return p.as_dict()
    if isinstance(p, dict):
        return p
    raise TypeError(f"expected ExactPmf or dict, got {type(p).__name__}")


def total_variation(p, q) -> float:
    """Half the L1 distance; keys missing on one side count as 0 there."""
    pd = _as_dict(p)
    qd = _as_dict(q)
    keys = set(pd) | set(qd)
    return 0.5 * sum(abs(pd.get(k, 0.0) - qd.get(k, 0.0)) for k in keys)


def empirical_pmf(samples) -> dict:
    """Relative frequencies of hashable keys; 2-D arrays tally their rows."""
    counts: dict = {}
    n = 0
    arr = np.asarray(samples)
    if arr.ndim == 2:
        rows = (tuple(int(x) for x in row) for row in arr)
    else:
        rows = iter(samples)
    for key in rows:
        counts[key] = counts.get(key, 0) + 1
        n += 1
    if n == 0:
        raise ValueError("no samples")
    return {k: v / n for k, v in counts.items()}
