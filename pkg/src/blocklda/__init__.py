"""Collapsed Gibbs sampling for LDA with joint per-block updates.

The sampler state lives on the per-(document, word) count tables rather
than individual token labels; blocked sweeps draw each table's count
vector jointly from its exact conditional. Enumeration oracles, trace
diagnostics, and a CLI round out the package.
"""

from .corpus import (
    Corpus,
    CorpusFormatError,
    SplitResult,
    SplitSpec,
    SynthConfig,
    SynthData,
    document_completion_split,
    generate_synthetic,
    parse_uci_bow,
    parse_vocab,
    singleton_fraction,
    write_uci_bow,
    write_vocab,
)
from .diagnostics import (
    TRACE_COLUMNS,
    MixtureAccumulator,
    ParamEstimate,
    TraceRecord,
    emit_trace,
    estimate_params,
    perplexity,
    read_trace,
    token_probabilities,
)
from .kernel import (
    KernelNumericsError,
    OpCounter,
    PrefixConstants,
    TopicTree,
    TreeConstants,
    WeightTable,
    backward_sample,
    build_topic_tree,
    compute_weights,
    forward_constants,
    nested_sample,
    nested_stage_bound,
    sample_block_many,
    upward_constants,
)
from .oracle import (
    ExactPmf,
    empirical_pmf,
    enumerate_block_pmf,
    enumerate_full_posterior,
    total_variation,
)
from .rand import as_generator, derive_chain_seed, splitmix64
from .samplers import (
    SAMPLER_ALIASES,
    AugmentedState,
    BenchRow,
    ChainResult,
    SamplerKind,
    SweepWorkspace,
    augmented_sweep,
    benchmark_sweeps,
    blocked_sweep,
    init_augmented,
    make_workspace,
    run_chain,
    sample_dirichlet,
    single_site_conditional,
    single_site_sweep,
)
from .state import (
    BlockContext,
    BlockState,
    Hyperparams,
    StateInvariantError,
    apply_block,
    extract_context,
    init_state,
    load_checkpoint,
    log_posterior_delta,
    log_unnormalized_posterior,
    save_checkpoint,
    validate_state,
)

__version__ = "0.1.0"

__all__ = [
    "Corpus",
    "CorpusFormatError",
    "SplitResult",
    "SplitSpec",
    "SynthConfig",
    "SynthData",
    "document_completion_split",
    "generate_synthetic",
    "parse_uci_bow",
    "parse_vocab",
    "singleton_fraction",
    "write_uci_bow",
    "write_vocab",
    "TRACE_COLUMNS",
    "MixtureAccumulator",
    "ParamEstimate",
    "TraceRecord",
    "emit_trace",
    "estimate_params",
    "perplexity",
    "read_trace",
    "token_probabilities",
    "KernelNumericsError",
    "OpCounter",
    "PrefixConstants",
    "TopicTree",
    "TreeConstants",
    "WeightTable",
    "backward_sample",
    "build_topic_tree",
    "compute_weights",
    "forward_constants",
    "nested_sample",
    "nested_stage_bound",
    "sample_block_many",
    "upward_constants",
    "ExactPmf",
    "empirical_pmf",
    "enumerate_block_pmf",
    "enumerate_full_posterior",
    "total_variation",
    "as_generator",
    "derive_chain_seed",
    "splitmix64",
    "SAMPLER_ALIASES",
    "AugmentedState",
    "BenchRow",
    "ChainResult",
    "SamplerKind",
    "SweepWorkspace",
    "augmented_sweep",
    "benchmark_sweeps",
    "blocked_sweep",
    "init_augmented",
    "make_workspace",
    "run_chain",
    "sample_dirichlet",
    "single_site_conditional",
    "single_site_sweep",
    "BlockContext",
    "BlockState",
    "Hyperparams",
    "StateInvariantError",
    "apply_block",
    "extract_context",
    "init_state",
    "load_checkpoint",
    "log_posterior_delta",
    "log_unnormalized_posterior",
    "save_checkpoint",
    "validate_state",
    "__version__",
]
