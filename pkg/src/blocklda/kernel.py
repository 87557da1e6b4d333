"""Per-block sampling kernel.

One block holds the C tokens of a single (doc, word) pair. Its conditional
over topic count vectors factorises into per-topic weights

    q_k(n) = rise(rd_k + alpha_k, n) * rise(rw_k + beta, n)
             / (n! * rise(rt_k + V*beta, n))

where rise(x, n) is the rising factorial and rd, rw, rt are the aggregate
counts with the block removed. The block conditional is then
p(n_1..n_K) proportional to prod_k q_k(n_k) subject to sum n_k = C, and the
normalizing constants of partial topic ranges are discrete convolutions of
the q rows. Two exact simulation schemes are provided:

- backward: forward recursion over topics 1..K, then sample topics K..2
  sequentially against the prefix constants, with early exit once the
  remaining budget hits zero; topics 1 and 2 resolve in one joint stage.
- nested: binary tree over topic ranges, constants built leaves-to-root,
  then a root-to-leaf descent that splits the budget at each node and skips
  empty subtrees.

Both draw from the same distribution; they differ in how many stages a draw
visits, which is what makes the nested scheme attractive at large K.

Work accounting (density_ops), per block of size C over K topics:
- weight table fill: K*C recurrence steps (both schemes);
- prefix or tree constants: (K-1)*(C+1)*(C+2)/2 convolution multiply-adds
  (both schemes; the tree has K-1 internal nodes);
- unit blocks in sweeps take a shortcut with no constant-building pass:
  the fill also accumulates prefix sums of q_k(1), so every subtree
  constant is a prefix difference and the descent is one inverse-CDF
  bisection; K + 1 density ops in total (fill plus the root normalizer).

Scaling: q and constant rows are kept within double range by per-row
normalization with the log scale recorded. Scale factors are constant within
any one stage's weights, so draws can use scaled values directly; the logs
matter only when reporting a normalizer.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from .rand import as_generator
from .state import BlockContext, Hyperparams

_BAND_HI = 1e120
_BAND_LO = 1e-120
_ROW_RESCUE = 1e250
LOG_GAMMA_MIN_BLOCK = 65  # q rows switch to log-gamma evaluation at this block size

_EMPTY_I32 = np.empty(0, dtype=np.int32)


class KernelNumericsError(RuntimeError):
    """A stage's weights vanished; the tables cannot be sampled from."""


@dataclass
class OpCounter:
    """Work tally. density_ops counts weight-table recurrence steps and
    convolution multiply-adds; sampling_stages counts stage distributions
    visited; categorical_draws counts inverse-CDF draws."""

    density_ops: int = 0
    sampling_stages: int = 0
    categorical_draws: int = 0

    def add(self, density=0, stages=0, draws=0):
        self.density_ops += int(density)
        self.sampling_stages += int(stages)
        self.categorical_draws += int(draws)

    def snapshot(self):
        return (self.density_ops, self.sampling_stages, self.categorical_draws)


@dataclass
class WeightTable:
    """Scaled per-topic weight rows q[k, 0..C] with per-row log scales.
    Unscaled q_k(0) is identically 1."""

    q: np.ndarray
    row_logscale: np.ndarray

    @property
    def n_topics(self) -> int:
        return self.q.shape[0]

    @property
    def block_size(self) -> int:
        return self.q.shape[1] - 1

    def log_value(self, k: int, n: int) -> float:
        v = self.q[k, n]
        if v <= 0.0:
            return -math.inf
        return math.log(v) + self.row_logscale[k]


@dataclass
class PrefixConstants:
    """Normalizing constants of topic prefixes: row k holds the constants of
    topics 0..k at budgets 0..C, scaled per row."""

    h: np.ndarray
    row_logscale: np.ndarray

    @property
    def block_size(self) -> int:
        return self.h.shape[1] - 1

    def log_normalizer(self, c=None) -> float:
        if c is None:
            c = self.block_size
        v = self.h[-1, c]
        if v <= 0.0:
            raise KernelNumericsError("prefix normalizer underflowed to zero")
        return math.log(v) + float(self.row_logscale[-1])


@dataclass
class TopicTree:
    """Static binary partition of topics 0..K-1. Node i spans lo[i]..hi[i];
    leaves have left[i] == -1. Children carry larger indices than their
    parent, so a reverse index sweep visits children first."""

    n_topics: int
    lo: np.ndarray
    hi: np.ndarray
    left: np.ndarray
    right: np.ndarray
    height: int

    @property
    def n_nodes(self) -> int:
        return self.lo.size


@dataclass
class TreeConstants:
    """Per-node range constants for one block, shaped like the tree."""

    tree: TopicTree
    h: np.ndarray
    node_logscale: np.ndarray

    @property
    def block_size(self) -> int:
        return self.h.shape[1] - 1

    def log_normalizer(self, c=None) -> float:
        if c is None:
            c = self.block_size
        v = self.h[0, c]
        if v <= 0.0:
            raise KernelNumericsError("tree normalizer underflowed to zero")
        return math.log(v) + float(self.node_logscale[0])


@njit(cache=True)
def _fill_q(doc_topic, word_topic, topic_total, d, v, bt, bc, m, alpha, beta, vbeta, C, q, qscale):
    """Fill the K x (C+1) weight table for block (d, v).

    Residuals are formed on the fly: (bt[:m], bc[:m]) holds the block's own
    packed counts, sorted by topic, and is subtracted from the aggregate rows
    during the walk. Pass m = 0 with already-residual 1-row aggregates to
    evaluate a standalone context. Returns the recurrence step count K * C.
    """
    K = alpha.size
    j = 0
    for k in range(K):
        delta = 0
        if j < m and bt[j] == k:
            delta = bc[j]
            j += 1
        a = doc_topic[d, k] - delta + alpha[k]
        b = word_topic[v, k] - delta + beta
        c = topic_total[k] - delta + vbeta
        rowlog = 0.0
        if C >= LOG_GAMMA_MIN_BLOCK:
            lga = math.lgamma(a)
            lgb = math.lgamma(b)
            lgc = math.lgamma(c)
            q[k, 0] = 0.0
            best = 0.0
            for n in range(1, C + 1):
                lv = (
                    (math.lgamma(a + n) - lga)
                    + (math.lgamma(b + n) - lgb)
                    - (math.lgamma(c + n) - lgc)
                    - math.lgamma(n + 1.0)
                )
                q[k, n] = lv
                if lv > best:
                    best = lv
            for n in range(C + 1):
                q[k, n] = math.exp(q[k, n] - best)
            rowlog = best
        else:
            q[k, 0] = 1.0
            val = 1.0
            mx = 1.0
            for n in range(1, C + 1):
                val = val * (a + n - 1.0) * (b + n - 1.0) / (n * (c + n - 1.0))
                if val > _ROW_RESCUE:
                    # pull the whole row back before it overflows
                    inv = 1.0 / val
                    for i in range(n):
                        q[k, i] *= inv
                    mx *= inv
                    rowlog += math.log(val)
                    val = 1.0
                q[k, n] = val
                if val > mx:
                    mx = val
            if mx > _BAND_HI or mx < _BAND_LO:
                inv = 1.0 / mx
                for n in range(C + 1):
                    q[k, n] *= inv
                rowlog += math.log(mx)
        qscale[k] = rowlog
    return K * C


@njit(cache=True)
def _forward_h(q, qscale, K, C, h, hscale):
    """Prefix constants by forward convolution; returns multiply-add count."""
    ops = 0
    for c in range(C + 1):
        h[0, c] = q[0, c]
    hscale[0] = qscale[0]
    for k in range(1, K):
        mx = 0.0
        for c in range(C + 1):
            s = 0.0
            for n in range(c + 1):
                s += q[k, n] * h[k - 1, c - n]
            h[k, c] = s
            if s > mx:
                mx = s
            ops += c + 1
        hscale[k] = hscale[k - 1] + qscale[k]
        if mx > _BAND_HI or (0.0 < mx < _BAND_LO):
            inv = 1.0 / mx
            for c in range(C + 1):
                h[k, c] *= inv
            hscale[k] += math.log(mx)
    return ops


@njit(cache=True)
def _backward_draw(q, h, K, C, rng, wbuf, out_t, out_c):
    """One composition draw against prefix constants.

    Topics K..3 are drawn one stage at a time with the budget shrinking;
    topics 2 and 1 resolve in a single joint stage. Stops as soon as the
    budget is exhausted. Nonzero (topic, count) pairs land ascending in
    out_t/out_c. Returns (n_pairs, stages, status); status -1 means every
    stage weight vanished.
    """
    b = C
    m = 0
    stages = 0
    for k in range(K - 1, 0, -1):
        if b == 0:
            break
        tot = 0.0
        for n in range(b + 1):
            tot += q[k, n] * h[k - 1, b - n]
            wbuf[n] = tot
        if not (tot > 0.0):
            return 0, stages, -1
        u = rng.random() * tot
        nk = 0
        while nk < b and wbuf[nk] <= u:
            nk += 1
        stages += 1
        if nk > 0:
            out_t[m] = k
            out_c[m] = nk
            m += 1
            b -= nk
    if b > 0:
        out_t[m] = 0
        out_c[m] = b
        m += 1
    i = 0
    j = m - 1
    while i < j:
        tt = out_t[i]
        out_t[i] = out_t[j]
        out_t[j] = tt
        cc = out_c[i]
        out_c[i] = out_c[j]
        out_c[j] = cc
        i += 1
        j -= 1
    return m, stages, 0


@njit(cache=True)
def _upward_h(q, qscale, C, lo, left, right, h, hscale):
    """Tree constants leaves-to-root; returns multiply-add count."""
    nn = lo.size
    ops = 0
    for i in range(nn - 1, -1, -1):
        l = left[i]
        if l < 0:
            k = lo[i]
            for c in range(C + 1):
                h[i, c] = q[k, c]
            hscale[i] = qscale[k]
        else:
            r = right[i]
            mx = 0.0
            for c in range(C + 1):
                s = 0.0
                for n in range(c + 1):
                    s += h[l, n] * h[r, c - n]
                h[i, c] = s
                if s > mx:
                    mx = s
                ops += c + 1
            hscale[i] = hscale[l] + hscale[r]
            if mx > _BAND_HI or (0.0 < mx < _BAND_LO):
                inv = 1.0 / mx
                for c in range(C + 1):
                    h[i, c] *= inv
                hscale[i] += math.log(mx)
    return ops


@njit(cache=True)
def _upward_h_raw(q, C, lo, left, right, h):
    """Tree constants leaves-to-root on raw (unscaled) rows.

    Skips all scale bookkeeping; valid only when every q row is unscaled
    and the products stay inside double range. The caller must verify that
    h[0, C] is finite and positive, falling back to the scaled pass
    otherwise: every node value on a reachable descent path feeds that
    entry through nonnegative products, so overflow or a dead branch
    anywhere reachable surfaces there. Returns the multiply-add count
    (same count as the scaled pass)."""
    nn = lo.size
    ops = 0
    for i in range(nn - 1, -1, -1):
        l = left[i]
        if l < 0:
            k = lo[i]
            for c in range(C + 1):
                h[i, c] = q[k, c]
        else:
            r = right[i]
            for c in range(C + 1):
                s = 0.0
                for n in range(c + 1):
                    s += h[l, n] * h[r, c - n]
                h[i, c] = s
                ops += c + 1
    return ops


@njit(cache=True)
def _nested_draw(h, C, lo, left, right, rng, stack, wbuf, out_t, out_c):
    """One composition draw by descending the tree.

    Each visited node splits its budget between its children; zero-budget
    children are never pushed. Leaves emit (topic, count) pairs ascending.
    Returns (n_pairs, stages, draws, status); stages counts visited
    nonzero-budget nodes including leaves.
    """
    m = 0
    stages = 0
    draws = 0
    top = 0
    stack[top, 0] = 0
    stack[top, 1] = C
    top += 1
    while top > 0:
        top -= 1
        i = stack[top, 0]
        c = stack[top, 1]
        stages += 1
        l = left[i]
        if l < 0:
            out_t[m] = lo[i]
            out_c[m] = c
            m += 1
            continue
        r = right[i]
        tot = 0.0
        for n in range(c + 1):
            tot += h[l, n] * h[r, c - n]
            wbuf[n] = tot
        if not (tot > 0.0):
            return 0, stages, draws, -1
        u = rng.random() * tot
        nl = 0
        while nl < c and wbuf[nl] <= u:
            nl += 1
        draws += 1
        if c - nl > 0:
            stack[top, 0] = r
            stack[top, 1] = c - nl
            top += 1
        if nl > 0:
            stack[top, 0] = l
            stack[top, 1] = nl
            top += 1
    return m, stages, draws, 0


@njit(cache=True)
def _fill_q1(doc_topic, word_topic, topic_total, inv_tt, d, v, t_old, alpha, beta, vbeta, ps):
    """Unit-block prefix sums of the weights q_k(1), unscaled.

    inv_tt caches 1/(topic_total + V*beta). The fill uses the aggregate
    counts as-is to keep the loop branch-free; the block's own topic t_old
    needs a corrected residual, so its uncorrected weight is recomputed
    once afterwards and the difference is returned as (ops, delta) for the
    descent to apply virtually. ps[k] = sum of uncorrected q1[:k];
    nondecreasing prefixes keep range differences nonnegative in floating
    point."""
    K = alpha.size
    run = 0.0
    ps[0] = 0.0
    for k in range(K):
        run += (doc_topic[d, k] + alpha[k]) * (word_topic[v, k] + beta) * inv_tt[k]
        ps[k + 1] = run
    raw = (doc_topic[d, t_old] + alpha[t_old]) * (word_topic[v, t_old] + beta) * inv_tt[t_old]
    corr = (
        (doc_topic[d, t_old] - 1 + alpha[t_old])
        * (word_topic[v, t_old] - 1 + beta)
        / (topic_total[t_old] - 1 + vbeta)
    )
    return K, corr - raw


@njit(cache=True)
def _descend1_ps(ps, delta, t_old, lo, hi, left, right, rng):
    """Route a single unit root-to-leaf via prefix-sum bisection.

    For a unit budget the node-by-node split draws collapse to one
    inverse-CDF draw: a single uniform positioned in the root's range,
    pushed left or right at each node by comparing against the left
    child's upper prefix edge (hi is inclusive, so a node's range spans
    ps[lo] .. ps[hi + 1]). Prefix edges at or past t_old carry the
    correction delta, which shifts exactly the t_old leaf's width. The
    visited path and its branch probabilities are identical to per-node
    splitting. Returns (topic, stages, draws); topic -1 on vanished
    weights."""
    i = 0
    stages = 1
    tot = ps[hi[0] + 1] - ps[lo[0]] + delta
    if not (tot > 0.0):
        return -1, stages, 0
    u = rng.random() * tot
    while left[i] >= 0:
        l = left[i]
        edge = ps[hi[l] + 1]
        if hi[l] >= t_old:
            edge += delta
        if u < edge:
            i = l
        else:
            i = right[i]
        stages += 1
    return lo[i], stages, 1


@njit(cache=True)
def _bulk_backward(q, h, K, C, rng, wbuf, out_t, out_c, out):
    stages = 0
    for i in range(out.shape[0]):
        m, st, status = _backward_draw(q, h, K, C, rng, wbuf, out_t, out_c)
        if status != 0:
            return stages, -1
        stages += st
        for j in range(m):
            out[i, out_t[j]] = out_c[j]
    return stages, 0


@njit(cache=True)
def _bulk_nested(h, C, lo, left, right, rng, stack, wbuf, out_t, out_c, out):
    stages = 0
    draws = 0
    for i in range(out.shape[0]):
        m, st, dr, status = _nested_draw(h, C, lo, left, right, rng, stack, wbuf, out_t, out_c)
        if status != 0:
            return stages, draws, -1
        stages += st
        draws += dr
        for j in range(m):
            out[i, out_t[j]] = out_c[j]
    return stages, draws, 0


def compute_weights(ctx: BlockContext, hp: Hyperparams, counter: OpCounter | None = None) -> WeightTable:
    """Weight table for a standalone context (residuals already formed)."""
    K = hp.n_topics
    if ctx.residual_doc.size != K:
        raise ValueError("context topic dimension does not match hyperparameters")
    C = ctx.block_size
    q = np.empty((K, C + 1), dtype=np.float64)
    qscale = np.empty(K, dtype=np.float64)
    ops = _fill_q(
        ctx.residual_doc.reshape(1, -1),
        ctx.residual_word.reshape(1, -1),
        ctx.residual_total,
        0,
        0,
        _EMPTY_I32,
        _EMPTY_I32,
        0,
        hp.alpha,
        hp.beta,
        hp.beta_sum,
        C,
        q,
        qscale,
    )
    if counter is not None:
        counter.add(density=ops)
    return WeightTable(q=q, row_logscale=qscale)


def forward_constants(wt: WeightTable, counter: OpCounter | None = None) -> PrefixConstants:
    K, C = wt.n_topics, wt.block_size
    h = np.empty((K, C + 1), dtype=np.float64)
    hscale = np.empty(K, dtype=np.float64)
    ops = _forward_h(wt.q, wt.row_logscale, K, C, h, hscale)
    if counter is not None:
        counter.add(density=ops)
    return PrefixConstants(h=h, row_logscale=hscale)


def backward_sample(
    wt: WeightTable, pc: PrefixConstants, rng, counter: OpCounter | None = None
) -> np.ndarray:
    """Draw one count vector (dense, length K) via the sequential scheme."""
    K, C = wt.n_topics, wt.block_size
    rng = as_generator(rng)
    wbuf = np.empty(C + 1, dtype=np.float64)
    out_t = np.empty(max(C, 1), dtype=np.int32)
    out_c = np.empty(max(C, 1), dtype=np.int32)
    m, stages, status = _backward_draw(wt.q, pc.h, K, C, rng, wbuf, out_t, out_c)
    if status != 0:
        raise KernelNumericsError("backward stage weights vanished")
    if counter is not None:
        counter.add(stages=stages, draws=stages)
    dense = np.zeros(K, dtype=np.int64)
    dense[out_t[:m]] = out_c[:m]
    return dense


_TREE_CACHE: dict[int, TopicTree] = {}


def build_topic_tree(n_topics: int) -> TopicTree:
    """Binary range tree over topics. A node [a, b] splits at (a + b) // 2,
    so the root of K topics covers ceil(K/2) topics on the left. 2K - 1
    nodes, height ceil(log2 K)."""
    if n_topics < 1:
        raise ValueError("n_topics must be >= 1")
    cached = _TREE_CACHE.get(n_topics)
    if cached is not None:
        return cached
    lo, hi, left, right = [], [], [], []

    def build(a, b, depth):
        i = len(lo)
        lo.append(a)
        hi.append(b)
        left.append(-1)
        right.append(-1)
        if a == b:
            return i, depth
        mid = (a + b) // 2
        li, dl = build(a, mid, depth + 1)
        ri, dr = build(mid + 1, b, depth + 1)
        left[i] = li
        right[i] = ri
        return i, max(dl, dr)

    _, height = build(0, n_topics - 1, 0)
    tree = TopicTree(
        n_topics=n_topics,
        lo=np.array(lo, dtype=np.int32),
        hi=np.array(hi, dtype=np.int32),
        left=np.array(left, dtype=np.int32),
        right=np.array(right, dtype=np.int32),
        height=height,
    )
    _TREE_CACHE[n_topics] = tree
    return tree


def upward_constants(
    tree: TopicTree, wt: WeightTable, counter: OpCounter | None = None
) -> TreeConstants:
    C = wt.block_size
    if tree.n_topics != wt.n_topics:
        raise ValueError("tree and weight table disagree on n_topics")
    h = np.empty((tree.n_nodes, C + 1), dtype=np.float64)
    hscale = np.empty(tree.n_nodes, dtype=np.float64)
    ops = _upward_h(wt.q, wt.row_logscale, C, tree.lo, tree.left, tree.right, h, hscale)
    if counter is not None:
        counter.add(density=ops)
    return TreeConstants(tree=tree, h=h, node_logscale=hscale)


def nested_stage_bound(n_topics: int, block_size: int) -> int:
    """Cap on nonzero nodes one draw can visit."""
    tree = build_topic_tree(n_topics)
    return min(2 * n_topics - 1, block_size * (tree.height + 1))


def nested_sample(tc: TreeConstants, rng, counter: OpCounter | None = None) -> np.ndarray:
    """Draw one count vector (dense, length K) via the tree scheme."""
    tree = tc.tree
    C = tc.block_size
    rng = as_generator(rng)
    wbuf = np.empty(C + 1, dtype=np.float64)
    out_t = np.empty(max(C, 1), dtype=np.int32)
    out_c = np.empty(max(C, 1), dtype=np.int32)
    stack = np.empty((tree.height + 2, 2), dtype=np.int64)
    m, stages, draws, status = _nested_draw(
        tc.h, C, tree.lo, tree.left, tree.right, rng, stack, wbuf, out_t, out_c
    )
    if status != 0:
        raise KernelNumericsError("nested stage weights vanished")
    if counter is not None:
        counter.add(stages=stages, draws=draws)
    dense = np.zeros(tree.n_topics, dtype=np.int64)
    dense[out_t[:m]] = out_c[:m]
    return dense


def sample_block_many(
    ctx: BlockContext,
    hp: Hyperparams,
    kernel: str,
    n_samples: int,
    rng,
    counter: OpCounter | None = None,
) -> np.ndarray:
    """Draw n_samples count vectors from one block conditional. Tables are
    built once; rows of the returned (n_samples, K) array are the draws."""
    rng = as_generator(rng)
    wt = compute_weights(ctx, hp, counter)
    K, C = wt.n_topics, wt.block_size
    out = np.zeros((n_samples, K), dtype=np.int64)
    wbuf = np.empty(C + 1, dtype=np.float64)
    out_t = np.empty(max(C, 1), dtype=np.int32)
    out_c = np.empty(max(C, 1), dtype=np.int32)
    if kernel == "backward":
        pc = forward_constants(wt, counter)
        stages, status = _bulk_backward(wt.q, pc.h, K, C, rng, wbuf, out_t, out_c, out)
        draws = stages
    elif kernel == "nested":
        tree = build_topic_tree(K)
        tc = upward_constants(tree, wt, counter)
        stack = np.empty((tree.height + 2, 2), dtype=np.int64)
        stages, draws, status = _bulk_nested(
            tc.h, C, tree.lo, tree.left, tree.right, rng, stack, wbuf, out_t, out_c, out
        )
    else:
        raise ValueError(f"unknown kernel {kernel!r}; expected 'backward' or 'nested'")
    if status != 0:
        raise KernelNumericsError("stage weights vanished during bulk sampling")
    if counter is not None:
        counter.add(stages=stages, draws=draws)
    return out
