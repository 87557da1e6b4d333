"""Point estimates, held-out perplexity, and trace records.

Mixing runs score a held-out corpus through the posterior-mean mixture:
per-sweep estimates are averaged over disjoint windows of sweeps, and the
perplexity of the window mean lands on the window's closing iteration.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .corpus import Corpus
from .state import BlockState, Hyperparams


@dataclass
class ParamEstimate:
    """Posterior-mean mixture parameters given the current count tables."""

    theta_hat: np.ndarray  # (n_docs, n_topics), rows sum to 1
    phi_hat: np.ndarray  # (n_topics, vocab_size), rows sum to 1
    iteration: int = 0


def estimate_params(state: BlockState, hp: Hyperparams, iteration: int = 0) -> ParamEstimate:
    doc_len = state.corpus.doc_len.astype(np.float64)
    theta_hat = (state.doc_topic + hp.alpha) / (doc_len + hp.alpha_sum)[:, None]
    phi_hat = (state.word_topic + hp.beta).T / (state.topic_total + hp.beta_sum)[:, None]
    return ParamEstimate(theta_hat=theta_hat, phi_hat=phi_hat, iteration=iteration)


def token_probabilities(test: Corpus, est: ParamEstimate) -> np.ndarray:
    """p(word | doc) under est for each stored (doc, word) pair of test."""
    if est.theta_hat.shape[0] <= (test.doc_ids.max(initial=-1)):
        raise ValueError("estimate covers fewer documents than the test corpus uses")
    if est.phi_hat.shape[1] != test.vocab_size:
        raise ValueError("estimate and test corpus disagree on vocab_size")
    if test.n_blocks == 0:
        return np.zeros(0, dtype=np.float64)
    return np.einsum(
        "bk,bk->b", est.theta_hat[test.doc_ids], est.phi_hat[:, test.word_ids].T
    )


class MixtureAccumulator:
    """Running mean of test-token probabilities over a window of sweeps."""

    def __init__(self, test: Corpus, window: int = 10):
        if window < 1:
            raise ValueError("window must be >= 1")
        self.test = test
        self.window = window
        self._sums = np.zeros(test.n_blocks, dtype=np.float64)
        self._count = 0

    @property
    def count(self) -> int:
        return self._count

    def add(self, est: ParamEstimate) -> None:
        if self._count >= self.window:
            raise RuntimeError("window is full; call mean() and reset()")
        self._sums += token_probabilities(self.test, est)
        self._count += 1

    def mean(self) -> np.ndarray:
        if self._count == 0:
            raise RuntimeError("no estimates accumulated")
        return self._sums / self._count

    def reset(self) -> None:
        self._sums[:] = 0.0
        self._count = 0


def perplexity(test: Corpus, probs) -> float:
    """exp of the negative mean test log likelihood per token.

    probs gives p(word | doc) for every stored pair of test, either as an
    array aligned with the corpus entries or as a mapping keyed by
    (doc, word). Missing pairs and nonpositive probabilities are errors.
    """
    if test.total_tokens == 0:
        raise ValueError("test corpus is empty")
    if isinstance(probs, dict):
        p = np.empty(test.n_blocks, dtype=np.float64)
        for i, (d, v, _c) in enumerate(test.blocks()):
            try:
                p[i] = probs[(d, v)]
            except KeyError as exc:
                raise ValueError(f"no probability for test pair ({d}, {v})") from exc
    else:
        p = np.asarray(probs, dtype=np.float64)
        if p.shape != (test.n_blocks,):
            raise ValueError("probs must have one entry per stored test pair")
    if np.any(p <= 0.0) or not np.all(np.isfinite(p)):
        raise ValueError("token probabilities must be positive and finite")
    loglik = float(np.dot(test.counts, np.log(p)))
    return math.exp(-loglik / test.total_tokens)


TRACE_COLUMNS = (
    "iteration",
    "log_posterior",
    "perplexity",
    "density_ops",
    "sampling_stages",
    "wall_time",
)


@dataclass
class TraceRecord:
    iteration: int
    log_posterior: float
    perplexity: float | None
    density_ops: int
    sampling_stages: int
    wall_time: float


def emit_trace(records, path) -> None:
    """Write trace rows as delimited text; perplexity is blank when absent."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TRACE_COLUMNS)
        for r in records:
            w.writerow(
                [
                    r.iteration,
                    repr(float(r.log_posterior)),
                    "" if r.perplexity is None else repr(float(r.perplexity)),
                    r.density_ops,
                    r.sampling_stages,
                    repr(float(r.wall_time)),
                ]
            )


def read_trace(path) -> list[TraceRecord]:
    with open(path, newline="") as fh:
        rd = csv.reader(fh)
        header = next(rd, None)
        if header is None or tuple(header) != TRACE_COLUMNS:
            raise ValueError(f"unexpected trace header in {path}")
        out = []
        for row in rd:
            if len(row) != len(TRACE_COLUMNS):
                raise ValueError(f"malformed trace row in {path}: {row!r}")
            out.append(
                TraceRecord(
                    iteration=int(row[0]),
                    log_posterior=float(row[1]),
                    perplexity=None if row[2] == "" else float(row[2]),
                    density_ops=int(row[3]),
                    sampling_stages=int(row[4]),
                    wall_time=float(row[5]),
                )
            )
    return out
