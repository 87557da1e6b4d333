"""Command-line front end.

Subcommands: fit (run chains, write traces and checkpoints), eval (score a
checkpoint on held-out data), synth (generate a corpus), bench (per-sweep
timing across topic counts), inspect (dataset summary), report (render
figures from previously written traces).

Exit codes: 0 success, 2 bad configuration, 3 I/O or parse failure,
4 internal invariant violation.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import dataclass

import numpy as np

from .corpus import (
    CorpusFormatError,
    SplitSpec,
    SynthConfig,
    document_completion_split,
    generate_synthetic,
    parse_uci_bow,
    parse_vocab,
    singleton_fraction,
    write_uci_bow,
    write_vocab,
)
from .diagnostics import emit_trace, estimate_params, perplexity, token_probabilities
from .kernel import KernelNumericsError
from .rand import derive_chain_seed
from .samplers import SAMPLER_ALIASES, benchmark_sweeps, run_chain
from .state import Hyperparams, StateInvariantError, load_checkpoint, save_checkpoint

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_INTERNAL = 4

_DEFAULT_K_SWEEP = "8,16,32,64,128,256,512,1024"


class ConfigError(ValueError):
    """Bad flag combination or value; maps to exit code 2."""


@dataclass
class RunConfig:
    command: str
    corpus: str | None = None
    vocab: str | None = None
    sampler: str = "nested"
    topics: int = 10
    alpha: str = "0.1"
    beta: float = 0.01
    iters: int = 100
    seed: int = 0
    chains: int = 1
    holdout_docs: int = 0
    holdout_frac: float = 0.5
    out: str = "."
    sweep_order: str = "fixed"
    run_id: str = "run"
    window: int = 10
    checkpoint: str | None = None
    k_sweep: str = _DEFAULT_K_SWEEP
    samplers: str = "single,backward,nested"
    replicates: int = 3
    docs: int = 100
    vocab_size: int = 500
    doc_length: int = 100

    @classmethod
    def from_args(cls, ns: argparse.Namespace) -> "RunConfig":
        fields = {k: v for k, v in vars(ns).items() if k in cls.__dataclass_fields__}
        return cls(**fields)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="blocklda",
        description="Collapsed Gibbs sampling for topic models with joint per-block updates.",
    )
    sub = p.add_subparsers(dest="command", required=True)

    def corpus_args(sp, required=True):
        sp.add_argument("--corpus", required=required, help="bag-of-words file (UCI format)")
        sp.add_argument("--vocab", default=None, help="optional vocabulary file, one token per line")

    def model_args(sp):
        sp.add_argument("--topics", type=int, default=10, help="number of topics K")
        sp.add_argument(
            "--alpha",
            default="0.1",
            help="document prior: a positive number (symmetric) or a file of K values",
        )
        sp.add_argument("--beta", type=float, default=0.01, help="word prior (symmetric)")

    def holdout_args(sp):
        sp.add_argument(
            "--holdout-docs", type=int, default=0, dest="holdout_docs",
            help="hold out the last H documents for completion-based evaluation",
        )
        sp.add_argument(
            "--holdout-frac", type=float, default=0.5, dest="holdout_frac",
            help="fraction of each held-out document kept for estimation",
        )

    sp = sub.add_parser("fit", help="run sampling chains; write traces and checkpoints")
    corpus_args(sp)
    model_args(sp)
    holdout_args(sp)
    sp.add_argument("--sampler", choices=sorted(SAMPLER_ALIASES), default="nested")
    sp.add_argument("--iters", type=int, default=100, help="sweeps per chain")
    sp.add_argument("--seed", type=int, default=0, help="base seed; chains derive their own")
    sp.add_argument("--chains", type=int, default=1)
    sp.add_argument("--sweep-order", choices=("fixed", "shuffle"), default="fixed", dest="sweep_order")
    sp.add_argument("--window", type=int, default=10, help="sweeps per held-out averaging window")
    sp.add_argument("--out", default=".", help="output directory")
    sp.add_argument("--run-id", default="run", dest="run_id", help="prefix for output file names")

    sp = sub.add_parser("eval", help="score a fit checkpoint on held-out documents")
    corpus_args(sp)
    model_args(sp)
    holdout_args(sp)
    sp.add_argument("--checkpoint", required=True, help="checkpoint written by fit")
    sp.add_argument("--seed", type=int, default=0, help="must match the seed used by fit")

    sp = sub.add_parser("synth", help="generate a synthetic corpus")
    sp.add_argument("--docs", type=int, default=100)
    sp.add_argument("--vocab-size", type=int, default=500, dest="vocab_size")
    sp.add_argument("--doc-length", type=int, default=100, dest="doc_length")
    model_args(sp)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", default=".", help="output directory")
    sp.add_argument("--run-id", default="run", dest="run_id")

    sp = sub.add_parser("bench", help="time sweeps across topic counts and samplers")
    corpus_args(sp)
    sp.add_argument("--k-sweep", default=_DEFAULT_K_SWEEP, dest="k_sweep",
                    help="comma-separated topic counts")
    sp.add_argument("--samplers", default="single,backward,nested",
                    help="comma-separated subset of " + ",".join(sorted(SAMPLER_ALIASES)))
    sp.add_argument("--alpha", default="0.1")
    sp.add_argument("--beta", type=float, default=0.01)
    sp.add_argument("--replicates", type=int, default=3)
    sp.add_argument("--iters", type=int, default=3, help="timed sweeps per replicate")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", default=".", help="output directory")
    sp.add_argument("--run-id", default="run", dest="run_id")

    sp = sub.add_parser("inspect", help="print a dataset summary")
    corpus_args(sp)

    sp = sub.add_parser("report", help="render figures from traces and bench output")
    sp.add_argument("--out", default=".", help="directory holding the delimited output")
    sp.add_argument("--run-id", default="run", dest="run_id")

    return p


def _parse_alpha(spec: str, n_topics: int) -> np.ndarray:
    try:
        return np.full(n_topics, float(spec), dtype=np.float64)
    except ValueError:
        pass
    try:
        values = np.loadtxt(spec, dtype=np.float64, ndmin=1)
    except OSError as exc:
        raise ConfigError(f"--alpha {spec!r} is neither a number nor a readable file") from exc
    if values.shape != (n_topics,):
        raise ConfigError(
            f"--alpha file has {values.size} values, expected {n_topics}"
        )
    return values


def _load_corpus(cfg: RunConfig):
    corpus = parse_uci_bow(cfg.corpus)
    if cfg.vocab:
        corpus.vocab = parse_vocab(cfg.vocab, corpus.vocab_size)
    return corpus


def _split_for(cfg: RunConfig, corpus):
    if cfg.holdout_docs <= 0:
        return corpus, None
    spec = SplitSpec(
        holdout_docs=cfg.holdout_docs, fraction=cfg.holdout_frac, seed=cfg.seed
    )
    res = document_completion_split(corpus, spec)
    return res.train, res.test


def _hyperparams(cfg: RunConfig, vocab_size: int) -> Hyperparams:
    if cfg.topics < 1:
        raise ConfigError("--topics must be >= 1")
    alpha = _parse_alpha(cfg.alpha, cfg.topics)
    try:
        return Hyperparams(cfg.topics, vocab_size, alpha, cfg.beta)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def cmd_fit(cfg: RunConfig) -> int:
    if cfg.iters < 0:
        raise ConfigError("--iters must be >= 0")
    if cfg.chains < 1:
        raise ConfigError("--chains must be >= 1")
    corpus = _load_corpus(cfg)
    train, test = _split_for(cfg, corpus)
    hp = _hyperparams(cfg, corpus.vocab_size)
    os.makedirs(cfg.out, exist_ok=True)
    kind = SAMPLER_ALIASES[cfg.sampler]
    for chain in range(cfg.chains):
        seed = derive_chain_seed(cfg.seed, chain)
        result = run_chain(
            train, hp, kind, cfg.iters, seed,
            sweep_order=cfg.sweep_order, window=cfg.window, test_corpus=test,
        )
        trace_path = os.path.join(cfg.out, f"{cfg.run_id}.{chain}.trace.csv")
        ckpt_path = os.path.join(cfg.out, f"{cfg.run_id}.{chain}.checkpoint.txt")
        emit_trace(result.records, trace_path)
        save_checkpoint(result.state, ckpt_path, seed=seed, iteration=cfg.iters)
        last = result.records[-1]
        print(
            f"chain {chain}: seed={seed} iterations={cfg.iters} "
            f"log_posterior={last.log_posterior:.6f}"
        )
        print(f"  wrote {trace_path}")
        print(f"  wrote {ckpt_path}")
    return EXIT_OK


def cmd_eval(cfg: RunConfig) -> int:
    if cfg.holdout_docs <= 0:
        raise ConfigError("eval requires --holdout-docs >= 1 (must match fit)")
    corpus = _load_corpus(cfg)
    train, test = _split_for(cfg, corpus)
    state, seed, iteration = load_checkpoint(cfg.checkpoint, train)
    hp = _hyperparams(cfg, corpus.vocab_size)
    if state.n_topics != hp.n_topics:
        raise ConfigError(
            f"checkpoint has K={state.n_topics} topics but --topics={hp.n_topics}"
        )
    est = estimate_params(state, hp, iteration=iteration)
    value = perplexity(test, token_probabilities(test, est))
    print(f"checkpoint: seed={seed} iteration={iteration}")
    print(f"test_documents={cfg.holdout_docs} test_tokens={test.total_tokens}")
    print(f"perplexity={value!r}")
    return EXIT_OK


def cmd_synth(cfg: RunConfig) -> int:
    if cfg.docs < 1 or cfg.vocab_size < 1 or cfg.doc_length < 1:
        raise ConfigError("--docs, --vocab-size, --doc-length must be >= 1")
    alpha = _parse_alpha(cfg.alpha, cfg.topics)
    try:
        sc = SynthConfig(
            n_docs=cfg.docs, vocab_size=cfg.vocab_size, n_topics=cfg.topics,
            doc_length=cfg.doc_length, alpha=alpha, beta=cfg.beta, seed=cfg.seed,
        )
        corpus = generate_synthetic(sc).corpus
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    os.makedirs(cfg.out, exist_ok=True)
    path = os.path.join(cfg.out, f"{cfg.run_id}.corpus.txt")
    write_uci_bow(corpus, path)
    print(
        f"docs={corpus.n_docs} vocab={corpus.vocab_size} "
        f"tokens={corpus.total_tokens} pairs={corpus.n_blocks}"
    )
    print(f"wrote {path}")
    return EXIT_OK


def cmd_bench(cfg: RunConfig) -> int:
    try:
        k_values = [int(s) for s in cfg.k_sweep.split(",") if s.strip()]
    except ValueError as exc:
        raise ConfigError(f"bad --k-sweep {cfg.k_sweep!r}") from exc
    if not k_values or min(k_values) < 1:
        raise ConfigError("--k-sweep needs positive topic counts")
    kinds = [s.strip() for s in cfg.samplers.split(",") if s.strip()]
    unknown = [s for s in kinds if s not in SAMPLER_ALIASES]
    if unknown or not kinds:
        raise ConfigError(f"unknown samplers {unknown}; choose from {sorted(SAMPLER_ALIASES)}")
    if cfg.replicates < 1 or cfg.iters < 1:
        raise ConfigError("--replicates and --iters must be >= 1")
    corpus = _load_corpus(cfg)
    alpha = float(_parse_alpha(cfg.alpha, 1)[0])
    rows = benchmark_sweeps(
        corpus, k_values, kinds, cfg.replicates, cfg.iters, cfg.seed,
        alpha=alpha, beta=cfg.beta,
    )
    os.makedirs(cfg.out, exist_ok=True)
    path = os.path.join(cfg.out, f"{cfg.run_id}.bench.csv")
    with open(path, "w") as fh:
        fh.write("K,sampler,mean_sec,sd_sec,density_ops,sampling_stages\n")
        for r in rows:
            fh.write(
                f"{r.n_topics},{r.sampler},{r.mean_sec!r},{r.sd_sec!r},"
                f"{r.density_ops},{r.sampling_stages}\n"
            )
    for r in rows:
        print(
            f"K={r.n_topics} {r.sampler}: {r.mean_sec:.4f}s/iter (sd {r.sd_sec:.4f}), "
            f"density_ops={r.density_ops} stages={r.sampling_stages}"
        )
    print(f"wrote {path}")
    return EXIT_OK


def cmd_inspect(cfg: RunConfig) -> int:
    corpus = _load_corpus(cfg)
    print(f"documents={corpus.n_docs}")
    print(f"vocab_size={corpus.vocab_size}")
    print(f"stored_pairs={corpus.n_blocks}")
    print(f"total_tokens={corpus.total_tokens}")
    print(f"singleton_fraction={singleton_fraction(corpus):.6f}")
    print(f"max_count={corpus.max_count}")
    print("count_histogram:")
    if corpus.n_blocks:
        values, freq = np.unique(corpus.counts, return_counts=True)
        shown = 0
        for val, n in zip(values, freq):
            if shown >= 15:
                rest = int(freq[shown:].sum())
                print(f"  count>={val}: {rest} pairs")
                break
            print(f"  count={val}: {n} pairs")
            shown += 1
    return EXIT_OK


def cmd_report(cfg: RunConfig) -> int:
    from .report import render_report

    written = render_report(cfg.out, cfg.run_id)
    if not written:
        raise ConfigError(
            f"no {cfg.run_id}.*.trace.csv or {cfg.run_id}.bench.csv under {cfg.out}"
        )
    for path in written:
        print(f"wrote {path}")
    return EXIT_OK


_COMMANDS = {
    "fit": cmd_fit,
    "eval": cmd_eval,
    "synth": cmd_synth,
    "bench": cmd_bench,
    "inspect": cmd_inspect,
    "report": cmd_report,
}


def main(argv=None) -> int:
    parser = build_parser()
    ns = parser.parse_args(argv)
    cfg = RunConfig.from_args(ns)
    try:
        return _COMMANDS[cfg.command](cfg)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (CorpusFormatError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (StateInvariantError, KernelNumericsError) as exc:
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
