"""Shared builders and exact stage-probability evaluators.

The evaluators recombine the sampler's stage constants into per-composition
probabilities by replaying each scheme's draw sequence, so a transition pmf
can be checked exactly instead of through sampling noise.
"""

from __future__ import annotations

import math

import numpy as np

from blocklda import BlockContext, Corpus, PrefixConstants, TreeConstants, WeightTable


def compositions(total: int, parts: int):
    """All nonnegative integer tuples of length parts summing to total."""
    if parts == 1:
        yield (total,)
        return
    for first in range(total + 1):
        for rest in compositions(total - first, parts - 1):
            yield (first,) + rest


def backward_pmf(wt: WeightTable, pc: PrefixConstants) -> dict:
    """Composition probabilities implied by the sequential stage draws.

    Stage k weighs n against q_k(n) * h_{1:k-1}(budget - n); row scales are
    constant within a stage, so the scaled tables can be used directly.
    """
    K, C = wt.n_topics, wt.block_size
    out = {}
    for comp in compositions(C, K):
        p = 1.0
        budget = C
        for k in range(K - 1, 0, -1):
            if budget == 0:
                break
            w = [wt.q[k, n] * pc.h[k - 1, budget - n] for n in range(budget + 1)]
            p *= w[comp[k]] / math.fsum(w)
            budget -= comp[k]
        out[comp] = p
    return out


def nested_pmf(tc: TreeConstants) -> dict:
    """Composition probabilities implied by the tree descent. Zero-budget
    subtrees contribute no stage, matching the sampler's skip rule."""
    tree = tc.tree
    K, C = tree.n_topics, tc.block_size
    out = {}
    for comp in compositions(C, K):
        p = 1.0
        todo = [(0, C)]
        while todo:
            i, c = todo.pop()
            if c == 0 or tree.left[i] < 0:
                continue
            left, right = int(tree.left[i]), int(tree.right[i])
            w = [tc.h[left, n] * tc.h[right, c - n] for n in range(c + 1)]
            n_left = sum(comp[k] for k in range(tree.lo[left], tree.hi[left] + 1))
            p *= w[n_left] / math.fsum(w)
            todo.append((left, n_left))
            todo.append((right, c - n_left))
        out[comp] = p
    return out


def unit_pmf_vector(pmf: dict, n_topics: int) -> np.ndarray:
    """Probabilities of the K unit compositions, in topic order."""
    out = np.empty(n_topics)
    for k in range(n_topics):
        out[k] = pmf[tuple(1 if j == k else 0 for j in range(n_topics))]
    return out


def random_context(rng, n_topics: int, block_size: int, hi: int = 8, extra: int = 12) -> BlockContext:
    """Residual counts drawn small; totals padded so they dominate the
    word counts, as any real corpus guarantees."""
    rw = rng.integers(0, hi + 1, n_topics)
    return BlockContext(
        residual_doc=rng.integers(0, hi + 1, n_topics),
        residual_word=rw,
        residual_total=rw + rng.integers(0, extra + 1, n_topics),
        block_size=block_size,
    )


def tiny_corpus() -> Corpus:
    """Two 3-token documents over 3 words, mixing unit and size-2 blocks."""
    return Corpus.from_counts(2, 3, {(0, 0): 2, (0, 1): 1, (1, 1): 1, (1, 2): 2})


def singleton_corpus() -> Corpus:
    """Every stored pair holds exactly one token."""
    cells = [(0, 0), (0, 1), (0, 2), (1, 1), (1, 3), (2, 0), (2, 2), (2, 3)]
    return Corpus.from_counts(3, 4, {dv: 1 for dv in cells})


def recomputed_aggregates(state):
    """Aggregate tables rebuilt from the packed block counts alone."""
    c = state.corpus
    K = state.n_topics
    doc_topic = np.zeros((c.n_docs, K), dtype=np.int64)
    word_topic = np.zeros((c.vocab_size, K), dtype=np.int64)
    for d, v, _count in c.blocks():
        vec = state.block_vector(d, v)
        doc_topic[d] += vec
        word_topic[v] += vec
    return doc_topic, word_topic, word_topic.sum(axis=0)
