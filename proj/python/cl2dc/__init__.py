from ._core import (
    Config,
    ConfigError,
    Error,
    Model,
    ParseError,
    SchemaError,
    TrainingError,
    auacc,
    beta_sequence,
    consensus_label,
    contiguous_superclasses,
    coverage_penalty,
    posthoc_ai_count,
    posthoc_curve,
    run_cli,
    simulate_superclass_expert,
    simulate_two_group_expert,
)

__all__ = [
    "Config",
    "ConfigError",
    "Error",
    "Model",
    "ParseError",
    "SchemaError",
    "TrainingError",
    "auacc",
    "beta_sequence",
    "consensus_label",
    "contiguous_superclasses",
    "coverage_penalty",
    "posthoc_ai_count",
    "posthoc_curve",
    "run_cli",
    "simulate_superclass_expert",
    "simulate_two_group_expert",
]
