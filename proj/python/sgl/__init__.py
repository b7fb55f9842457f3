"""Small-group differentiable architecture search."""

from ._core import (
    CheckpointError,
    ConfigError,
    compare,
    config_hash,
    derive_genotype,
    gaussian_mixture,
    gradcheck,
    normalize_config,
    search,
)

__all__ = [
    "CheckpointError",
    "ConfigError",
    "compare",
    "config_hash",
    "derive_genotype",
    "gaussian_mixture",
    "gradcheck",
    "normalize_config",
    "search",
]
