"""Sweep-level samplers and the chain driver.

Four kernels target the same posterior over block count tables:

- single_site: collapsed, one token at a time;
- blocked_backward: collapsed, whole block at once via prefix constants;
- blocked_nested: collapsed, whole block at once via the topic tree;
- augmented: uncollapsed conjugate updates of (theta, phi) and the counts.

The collapsed sweeps run as compiled kernels over the packed state arrays;
all randomness flows through one numpy Generator per chain, so runs are
reproducible from a seed.
"""

from __future__ import annotations

import enum
import time
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .corpus import Corpus
from .diagnostics import MixtureAccumulator, TraceRecord, estimate_params, perplexity
from .kernel import (
    KernelNumericsError,
    OpCounter,
    _backward_draw,
    _descend1_ps,
    _fill_q,
    _fill_q1,
    _forward_h,
    _nested_draw,
    _upward_h,
    _upward_h_raw,
    build_topic_tree,
)
from .rand import as_generator, derive_chain_seed
from .state import (
    BlockState,
    Hyperparams,
    StateInvariantError,
    init_state,
    log_unnormalized_posterior,
)


class SamplerKind(str, enum.Enum):
    SINGLE_SITE = "single_site"
    BLOCKED_BACKWARD = "blocked_backward"
    BLOCKED_NESTED = "blocked_nested"
    AUGMENTED = "augmented"


def single_site_conditional(residual_doc, residual_word, residual_total, hp: Hyperparams) -> np.ndarray:
    """Token-level topic probabilities given counts with the token removed."""
    rd = np.asarray(residual_doc, dtype=np.float64)
    rw = np.asarray(residual_word, dtype=np.float64)
    rt = np.asarray(residual_total, dtype=np.float64)
    if rd.shape != (hp.n_topics,) or rw.shape != rd.shape or rt.shape != rd.shape:
        raise ValueError("residual vectors must have length n_topics")
    if rd.min() < 0 or rw.min() < 0 or rt.min() < 0:
        raise ValueError("residual counts must be nonnegative")
    w = (rd + hp.alpha) * (rw + hp.beta) / (rt + hp.beta_sum)
    return w / w.sum()


@dataclass
class SweepWorkspace:
    """Reusable scratch for the compiled sweeps; build once per chain."""

    tree: object
    order: np.ndarray
    inv_tt: np.ndarray
    blockvec: np.ndarray
    snap_t: np.ndarray
    snap_c: np.ndarray
    cand: np.ndarray
    wbuf: np.ndarray
    q: np.ndarray
    qscale: np.ndarray
    h: np.ndarray
    hscale: np.ndarray
    ps1: np.ndarray
    stack: np.ndarray
    out_t: np.ndarray
    out_c: np.ndarray
    counters: np.ndarray


def make_workspace(corpus: Corpus, hp: Hyperparams) -> SweepWorkspace:
    K = hp.n_topics
    cmax = max(corpus.max_count, 1)
    tree = build_topic_tree(K)
    nn = tree.n_nodes
    return SweepWorkspace(
        tree=tree,
        order=np.arange(corpus.n_blocks, dtype=np.int64),
        inv_tt=np.empty(K, dtype=np.float64),
        blockvec=np.zeros(K, dtype=np.int64),
        snap_t=np.empty(cmax, dtype=np.int32),
        snap_c=np.empty(cmax, dtype=np.int32),
        cand=np.empty(2 * cmax, dtype=np.int32),
        wbuf=np.empty(max(K, cmax + 1), dtype=np.float64),
        q=np.empty((K, cmax + 1), dtype=np.float64),
        qscale=np.empty(K, dtype=np.float64),
        h=np.empty((nn, cmax + 1), dtype=np.float64),
        hscale=np.empty(nn, dtype=np.float64),
        ps1=np.empty(K + 1, dtype=np.float64),
        stack=np.empty((tree.height + 2, 2), dtype=np.int64),
        out_t=np.empty(cmax, dtype=np.int32),
        out_c=np.empty(cmax, dtype=np.int32),
        counters=np.zeros(4, dtype=np.int64),
    )


@njit(cache=True)
def _single_site_sweep_kernel(
    order, bd, bw, bc, indptr, e_topic, e_count, b_nnz,
    doc_topic, word_topic, topic_total, inv_tt,
    alpha, beta, vbeta, blockvec, snap_t, snap_c, cand, wbuf, rng, counters,
):
    """Resample every token once. Within a block the tokens of each topic in
    the entry snapshot are processed in turn, so freshly moved tokens are not
    revisited; exchangeability makes the choice of unit immaterial."""
    K = alpha.size
    dens = 0
    stages = 0
    for oi in range(order.size):
        b = order[oi]
        d = bd[b]
        v = bw[b]
        base = indptr[b]
        m = b_nnz[b]
        n_cand = 0
        for j in range(m):
            t = e_topic[base + j]
            snap_t[j] = t
            snap_c[j] = e_count[base + j]
            blockvec[t] = snap_c[j]
            cand[n_cand] = t
            n_cand += 1
        for j in range(m):
            t_cur = snap_t[j]
            for _rep in range(snap_c[j]):
                doc_topic[d, t_cur] -= 1
                word_topic[v, t_cur] -= 1
                topic_total[t_cur] -= 1
                inv_tt[t_cur] = 1.0 / (topic_total[t_cur] + vbeta)
                blockvec[t_cur] -= 1
                tot = 0.0
                for k in range(K):
                    tot += (doc_topic[d, k] + alpha[k]) * (word_topic[v, k] + beta) * inv_tt[k]
                    wbuf[k] = tot
                dens += K
                u = rng.random() * tot
                lo_i = 0
                hi_i = K - 1
                while lo_i < hi_i:
                    mid = (lo_i + hi_i) >> 1
                    if wbuf[mid] <= u:
                        lo_i = mid + 1
                    else:
                        hi_i = mid
                t_new = lo_i
                stages += 1
                doc_topic[d, t_new] += 1
                word_topic[v, t_new] += 1
                topic_total[t_new] += 1
                inv_tt[t_new] = 1.0 / (topic_total[t_new] + vbeta)
                blockvec[t_new] += 1
                cand[n_cand] = t_new
                n_cand += 1
        # repack the block from the touched topics
        for a in range(1, n_cand):
            x = cand[a]
            p = a - 1
            while p >= 0 and cand[p] > x:
                cand[p + 1] = cand[p]
                p -= 1
            cand[p + 1] = x
        mm = 0
        prev = -1
        for a in range(n_cand):
            t = cand[a]
            if t == prev:
                continue
            prev = t
            n_here = blockvec[t]
            if n_here > 0:
                e_topic[base + mm] = t
                e_count[base + mm] = n_here
                mm += 1
            blockvec[t] = 0
        b_nnz[b] = mm
    counters[0] += dens
    counters[1] += stages
    counters[2] += stages
    return 0


@njit(cache=True)
def _blocked_sweep_kernel(
    order, bd, bw, bc, indptr, e_topic, e_count, b_nnz,
    doc_topic, word_topic, topic_total, inv_tt,
    alpha, beta, vbeta, use_nested, tree_height,
    t_lo, t_hi, t_left, t_right,
    q, qscale, h, hscale, ps1, stack, wbuf, out_t, out_c,
    rng, counters,
):
    """Resample every block once from its joint conditional."""
    K = alpha.size
    dens = 0
    stages = 0
    draws = 0
    violations = 0
    status = 0
    for oi in range(order.size):
        b = order[oi]
        d = bd[b]
        v = bw[b]
        C = bc[b]
        base = indptr[b]
        m = b_nnz[b]
        if use_nested and C == 1:
            # unit blocks skip the generic tables and the upward pass:
            # subtree constants come from prefix sums of q_k(1)
            t_old = e_topic[base]
            fill_ops, delta1 = _fill_q1(
                doc_topic, word_topic, topic_total, inv_tt, d, v, t_old,
                alpha, beta, vbeta, ps1,
            )
            dens += fill_ops
            t_new, st, dr = _descend1_ps(
                ps1, delta1, t_old, t_lo, t_hi, t_left, t_right, rng
            )
            if t_new < 0:
                status = -1
                break
            dens += 1
            stages += st
            draws += dr
            if st > min(2 * K - 1, tree_height + 1):
                violations += 1
            if t_new != t_old:
                doc_topic[d, t_old] -= 1
                doc_topic[d, t_new] += 1
                word_topic[v, t_old] -= 1
                word_topic[v, t_new] += 1
                topic_total[t_old] -= 1
                topic_total[t_new] += 1
                inv_tt[t_old] = 1.0 / (topic_total[t_old] + vbeta)
                inv_tt[t_new] = 1.0 / (topic_total[t_new] + vbeta)
                e_topic[base] = t_new
            continue
        dens += _fill_q(
            doc_topic, word_topic, topic_total, d, v,
            e_topic[base : base + m], e_count[base : base + m], m,
            alpha, beta, vbeta, C, q, qscale,
        )
        if use_nested:
            # unscaled rows admit the cheaper raw convolution; the root value
            # at full budget certifies the whole pass (any overflow or dead
            # branch on a reachable path propagates into it)
            used_raw = True
            for k in range(K):
                if qscale[k] != 0.0:
                    used_raw = False
                    break
            if used_raw:
                dens += _upward_h_raw(q, C, t_lo, t_left, t_right, h)
                root = h[0, C]
                if not (root > 0.0 and root < np.inf):
                    used_raw = False
            if not used_raw:
                dens += _upward_h(q, qscale, C, t_lo, t_left, t_right, h, hscale)
            mm, st, dr, stv = _nested_draw(
                h, C, t_lo, t_left, t_right, rng, stack, wbuf, out_t, out_c
            )
            if stv != 0 and used_raw:
                # a branch underflowed to zero mid-descent; redo with scaling
                stages += st
                draws += dr
                dens += _upward_h(q, qscale, C, t_lo, t_left, t_right, h, hscale)
                mm, st, dr, stv = _nested_draw(
                    h, C, t_lo, t_left, t_right, rng, stack, wbuf, out_t, out_c
                )
            if stv != 0:
                status = -1
                break
            if st > min(2 * K - 1, C * (tree_height + 1)):
                violations += 1
        else:
            dens += _forward_h(q, qscale, K, C, h, hscale)
            mm, st, stv = _backward_draw(q, h, K, C, rng, wbuf, out_t, out_c)
            dr = st
            if stv != 0:
                status = -1
                break
        stages += st
        draws += dr
        for j in range(m):
            t = e_topic[base + j]
            n = e_count[base + j]
            doc_topic[d, t] -= n
            word_topic[v, t] -= n
            topic_total[t] -= n
            inv_tt[t] = 1.0 / (topic_total[t] + vbeta)
        for j in range(mm):
            t = out_t[j]
            n = out_c[j]
            doc_topic[d, t] += n
            word_topic[v, t] += n
            topic_total[t] += n
            inv_tt[t] = 1.0 / (topic_total[t] + vbeta)
            e_topic[base + j] = t
            e_count[base + j] = n
        b_nnz[b] = mm
    counters[0] += dens
    counters[1] += stages
    counters[2] += draws
    counters[3] += violations
    return status


def _check_compat(state: BlockState, hp: Hyperparams):
    if state.n_topics != hp.n_topics:
        raise ValueError("state and hyperparameters disagree on n_topics")
    if state.corpus.vocab_size != hp.vocab_size:
        raise ValueError("state and hyperparameters disagree on vocab_size")


def _sweep_order(state, ws, rng, sweep_order):
    if sweep_order == "fixed":
        return ws.order
    if sweep_order == "shuffle":
        return rng.permutation(state.corpus.n_blocks)
    raise ValueError(f"unknown sweep_order {sweep_order!r}")


def single_site_sweep(
    state: BlockState,
    hp: Hyperparams,
    rng,
    counter: OpCounter | None = None,
    order=None,
    ws: SweepWorkspace | None = None,
) -> None:
    """One collapsed token-level pass over all blocks, in place."""
    _check_compat(state, hp)
    rng = as_generator(rng)
    if ws is None:
        ws = make_workspace(state.corpus, hp)
    if order is None:
        order = ws.order
    c = state.corpus
    np.divide(1.0, state.topic_total + hp.beta_sum, out=ws.inv_tt)
    before = ws.counters.copy()
    _single_site_sweep_kernel(
        order, c.doc_ids, c.word_ids, c.counts, state.indptr,
        state.entry_topic, state.entry_count, state.block_nnz,
        state.doc_topic, state.word_topic, state.topic_total, ws.inv_tt,
        hp.alpha, hp.beta, hp.beta_sum,
        ws.blockvec, ws.snap_t, ws.snap_c, ws.cand, ws.wbuf, rng, ws.counters,
    )
    if counter is not None:
        d = ws.counters - before
        counter.add(density=d[0], stages=d[1], draws=d[2])


def blocked_sweep(
    state: BlockState,
    hp: Hyperparams,
    rng,
    kernel: str = "nested",
    counter: OpCounter | None = None,
    order=None,
    ws: SweepWorkspace | None = None,
) -> None:
    """One collapsed block-level pass, in place. kernel selects the
    simulation scheme: 'backward' or 'nested'."""
    _check_compat(state, hp)
    if kernel not in ("backward", "nested"):
        raise ValueError(f"unknown kernel {kernel!r}; expected 'backward' or 'nested'")
    rng = as_generator(rng)
    if ws is None:
        ws = make_workspace(state.corpus, hp)
    if order is None:
        order = ws.order
    c = state.corpus
    np.divide(1.0, state.topic_total + hp.beta_sum, out=ws.inv_tt)
    tree = ws.tree
    before = ws.counters.copy()
    status = _blocked_sweep_kernel(
        order, c.doc_ids, c.word_ids, c.counts, state.indptr,
        state.entry_topic, state.entry_count, state.block_nnz,
        state.doc_topic, state.word_topic, state.topic_total, ws.inv_tt,
        hp.alpha, hp.beta, hp.beta_sum, kernel == "nested", tree.height,
        tree.lo, tree.hi, tree.left, tree.right,
        ws.q, ws.qscale, ws.h, ws.hscale, ws.ps1, ws.stack,
        ws.wbuf, ws.out_t, ws.out_c, rng, ws.counters,
    )
    if status != 0:
        raise KernelNumericsError("stage weights vanished during blocked sweep")
    d = ws.counters - before
    if d[3] != 0:
        raise StateInvariantError("nested draw exceeded its stage bound")
    if counter is not None:
        counter.add(density=d[0], stages=d[1], draws=d[2])


def sample_dirichlet(concentration, rng) -> np.ndarray:
    """Dirichlet rows by normalized gammas; concentration (..., K) > 0."""
    conc = np.asarray(concentration, dtype=np.float64)
    if np.any(conc <= 0):
        raise ValueError("concentration entries must be positive")
    rng = as_generator(rng)
    x = rng.standard_gamma(conc)
    sums = x.sum(axis=-1, keepdims=True)
    # tiny concentrations can underflow every gamma in a row; redraw those
    while np.any(sums == 0.0):
        bad = np.broadcast_to(sums == 0.0, x.shape)
        x[bad] = rng.standard_gamma(np.broadcast_to(conc, x.shape)[bad])
        sums = x.sum(axis=-1, keepdims=True)
    return x / sums


@dataclass
class AugmentedState:
    """Explicit mixture parameters alongside the count state."""

    theta: np.ndarray
    phi: np.ndarray
    state: BlockState


def init_augmented(corpus: Corpus, hp: Hyperparams, rng) -> AugmentedState:
    """Counts from the uniform token init; theta and phi start uniform and
    are redrawn at the top of the first sweep."""
    state = init_state(corpus, hp, rng)
    theta = np.full((corpus.n_docs, hp.n_topics), 1.0 / hp.n_topics)
    phi = np.full((hp.n_topics, corpus.vocab_size), 1.0 / corpus.vocab_size)
    return AugmentedState(theta=theta, phi=phi, state=state)


def augmented_sweep(
    astate: AugmentedState, hp: Hyperparams, rng, counter: OpCounter | None = None
) -> None:
    """Conjugate pass: draw (theta, phi) given counts, then redraw every
    block's counts given (theta, phi). Blocks are conditionally independent
    here, so the count update is one multinomial per block."""
    state = astate.state
    _check_compat(state, hp)
    rng = as_generator(rng)
    c = state.corpus
    astate.theta = sample_dirichlet(state.doc_topic + hp.alpha, rng)
    astate.phi = sample_dirichlet(state.word_topic.T + hp.beta, rng)

    K = hp.n_topics
    state.doc_topic[:] = 0
    state.word_topic[:] = 0
    state.topic_total[:] = 0
    chunk = max(1, 4_000_000 // K)
    for s in range(0, c.n_blocks, chunk):
        e = min(s + chunk, c.n_blocks)
        docs = c.doc_ids[s:e]
        words = c.word_ids[s:e]
        pv = astate.theta[docs] * astate.phi[:, words].T
        sums = pv.sum(axis=1, keepdims=True)
        if np.any(sums <= 0.0):
            raise KernelNumericsError("token mixture weights vanished")
        pv /= sums
        newc = rng.multinomial(c.counts[s:e].astype(np.int64), pv)
        rows, cols = np.nonzero(newc)
        vals = newc[rows, cols]
        nnz = np.count_nonzero(newc, axis=1).astype(np.int32)
        starts = np.cumsum(nnz) - nnz
        dest = state.indptr[s + rows] + (np.arange(rows.size) - starts[rows])
        state.entry_topic[dest] = cols.astype(np.int32)
        state.entry_count[dest] = vals.astype(np.int32)
        state.block_nnz[s:e] = nnz
        np.add.at(state.doc_topic, (docs[rows], cols), vals)
        np.add.at(state.word_topic, (words[rows], cols), vals)
        state.topic_total += np.bincount(cols, weights=vals, minlength=K).astype(np.int64)
    if counter is not None:
        counter.add(
            density=c.n_blocks * K,
            stages=c.n_blocks,
            draws=c.total_tokens,
        )


@dataclass
class ChainResult:
    kind: SamplerKind
    seed: int | None
    hp: Hyperparams
    records: list[TraceRecord] = field(default_factory=list)
    state: BlockState | None = None
    augmented: AugmentedState | None = None


def run_chain(
    corpus: Corpus,
    hp: Hyperparams,
    kind,
    iterations: int,
    seed,
    *,
    sweep_order: str = "fixed",
    window: int = 10,
    test_corpus: Corpus | None = None,
    on_record=None,
) -> ChainResult:
    """Run one chain and collect its trace.

    The trace has a record for iteration 0 (the initial state) plus one per
    sweep; with iterations=0 only the initial record is emitted. Counter
    columns are cumulative. When test_corpus is given, held-out mixture
    probabilities are averaged over disjoint windows of `window` sweeps and
    a perplexity lands on each window's closing record.
    """
    kind = SamplerKind(kind)
    if iterations < 0:
        raise ValueError("iterations must be >= 0")
    rng = as_generator(seed)
    seed_val = seed if isinstance(seed, (int, np.integer)) else None

    if kind is SamplerKind.AUGMENTED:
        astate = init_augmented(corpus, hp, rng)
        state = astate.state
    else:
        astate = None
        state = init_state(corpus, hp, rng)
    ws = make_workspace(corpus, hp)
    counter = OpCounter()
    acc = None
    if test_corpus is not None and test_corpus.n_blocks > 0:
        acc = MixtureAccumulator(test_corpus, window=window)

    result = ChainResult(kind=kind, seed=seed_val, hp=hp, state=state, augmented=astate)

    def emit(rec):
        result.records.append(rec)
        if on_record is not None:
            on_record(rec)

    t0 = time.perf_counter()
    emit(TraceRecord(0, log_unnormalized_posterior(state, hp), None, 0, 0, 0.0))
    for it in range(1, iterations + 1):
        order = _sweep_order(state, ws, rng, sweep_order)
        if kind is SamplerKind.SINGLE_SITE:
            single_site_sweep(state, hp, rng, counter=counter, order=order, ws=ws)
        elif kind is SamplerKind.BLOCKED_BACKWARD:
            blocked_sweep(state, hp, rng, kernel="backward", counter=counter, order=order, ws=ws)
        elif kind is SamplerKind.BLOCKED_NESTED:
            blocked_sweep(state, hp, rng, kernel="nested", counter=counter, order=order, ws=ws)
        else:
            augmented_sweep(astate, hp, rng, counter=counter)
        perp = None
        if acc is not None:
            acc.add(estimate_params(state, hp, iteration=it))
            if it % window == 0:
                perp = perplexity(test_corpus, acc.mean())
                acc.reset()
        emit(
            TraceRecord(
                iteration=it,
                log_posterior=log_unnormalized_posterior(state, hp),
                perplexity=perp,
                density_ops=counter.density_ops,
                sampling_stages=counter.sampling_stages,
                wall_time=time.perf_counter() - t0,
            )
        )
    return result


@dataclass
class BenchRow:
    n_topics: int
    sampler: str
    mean_sec: float
    sd_sec: float
    density_ops: int
    sampling_stages: int


# short spellings used by the command line
SAMPLER_ALIASES = {
    "single": SamplerKind.SINGLE_SITE,
    "backward": SamplerKind.BLOCKED_BACKWARD,
    "nested": SamplerKind.BLOCKED_NESTED,
    "augmented": SamplerKind.AUGMENTED,
}


def benchmark_sweeps(
    corpus: Corpus,
    k_values,
    kinds,
    replicates: int,
    iterations: int,
    base_seed: int,
    alpha: float = 0.1,
    beta: float = 0.01,
) -> list[BenchRow]:
    """Per-iteration wall time of each sampler at each topic count.

    Every (K, sampler, replicate) starts a fresh chain from its own seed and
    times `iterations` sweeps after one untimed warmup sweep. Reported ops
    are per-sweep means.
    """
    if replicates < 1 or iterations < 1:
        raise ValueError("replicates and iterations must be >= 1")
    rows = []
    for K in k_values:
        hp = Hyperparams.symmetric(K, corpus.vocab_size, alpha, beta)
        for name in kinds:
            kind = SAMPLER_ALIASES[name] if isinstance(name, str) else SamplerKind(name)
            label = name if isinstance(name, str) else kind.value
            times = []
            dens = []
            stag = []
            for rep in range(replicates):
                rng = as_generator(derive_chain_seed(base_seed, rep))
                ws = make_workspace(corpus, hp)
                if kind is SamplerKind.AUGMENTED:
                    astate = init_augmented(corpus, hp, rng)
                    state = astate.state
                else:
                    astate = None
                    state = init_state(corpus, hp, rng)

                def one_sweep(counter=None):
                    if kind is SamplerKind.SINGLE_SITE:
                        single_site_sweep(state, hp, rng, counter=counter, ws=ws)
                    elif kind is SamplerKind.BLOCKED_BACKWARD:
                        blocked_sweep(state, hp, rng, kernel="backward", counter=counter, ws=ws)
                    elif kind is SamplerKind.BLOCKED_NESTED:
                        blocked_sweep(state, hp, rng, kernel="nested", counter=counter, ws=ws)
                    else:
                        augmented_sweep(astate, hp, rng, counter=counter)

                one_sweep()  # warmup: jit compile paths, touch buffers
                for _ in range(iterations):
                    counter = OpCounter()
                    t0 = time.perf_counter()
                    one_sweep(counter)
                    times.append(time.perf_counter() - t0)
                    dens.append(counter.density_ops)
                    stag.append(counter.sampling_stages)
            times = np.asarray(times)
            rows.append(
                BenchRow(
                    n_topics=int(K),
                    sampler=label,
                    mean_sec=float(times.mean()),
                    sd_sec=float(times.std(ddof=1)) if times.size > 1 else 0.0,
                    density_ops=int(round(float(np.mean(dens)))),
                    sampling_stages=int(round(float(np.mean(stag)))),
                )
            )
    return rows
