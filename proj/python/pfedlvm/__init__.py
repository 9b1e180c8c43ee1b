"""Split-learning segmentation simulator."""

from ._core import (
    ConfigError,
    ContractError,
    NumericError,
    FormatError,
    CommParams,
    m_pfl,
    m_fl,
    savings,
    partition_counts,
    summarize_masks,
    run_config,
    __version__,
)

__all__ = [
    "ConfigError",
    "ContractError",
    "NumericError",
    "FormatError",
    "CommParams",
    "m_pfl",
    "m_fl",
    "savings",
    "partition_counts",
    "summarize_masks",
    "run_config",
    "__version__",
]
