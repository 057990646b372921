"""Training-free nuclear instance segmentation."""

from ._sprout import (
    ConfigError,
    SproutRuntimeError,
    cosine_cost,
    default_config,
    evaluate,
    read_tensor,
    render_fixture,
    run_dataset,
    segment,
    solve_partial,
    stain_decompose,
    write_tensor,
)

__all__ = [
    "ConfigError",
    "SproutRuntimeError",
    "cosine_cost",
    "default_config",
    "evaluate",
    "read_tensor",
    "render_fixture",
    "run_dataset",
    "segment",
    "solve_partial",
    "stain_decompose",
    "write_tensor",
]
