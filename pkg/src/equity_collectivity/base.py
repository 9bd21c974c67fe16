"""
Base Models

This module provides the base classes for the validated domain types.

How to subclass:
1. Define the fields with `pydantic.Field` and a description
2. Enforce the type invariants with `field_validator` / `model_validator`
"""

import logging
from typing import Any, Sequence

import numpy as np
from pydantic import ConfigDict

from rompy.core.types import RompyBaseModel
from rompy.formatting import get_formatted_header_footer
from rompy.logging import LoggingConfig, get_logger

logger = get_logger(__name__)

# Absolute tolerance on exact-by-construction identities (unit diagonal, symmetry)
ATOL = 1e-12


class CollectivityBaseModel(RompyBaseModel):
    """Base class for the domain types.

    This class is not intended to be used directly, but to be subclassed by the
    domain types to implement the following common behaviour:

    * Forbid extra arguments so only implemented fields must be specified
    * Allow numpy arrays typed with pydantic-numpy as fields

    """

    model_config = ConfigDict(extra="forbid", arbitrary_types_allowed=True)


def as_float_array(value: Any, ndim: int) -> np.ndarray:
    """Coerce value into a float64 array with ndim dimensions.

    Parameters
    ----------
    value: Any
        Array-like value.
    ndim: int
        Required number of dimensions.

    Returns
    -------
    array: np.ndarray
        The float64 array.

    """
    array = np.asarray(value, dtype=np.float64)
    if array.ndim != ndim:
        raise ValueError(f"Expected a {ndim}-D array, got shape {array.shape}")
    return array


def log_summary(title: str, lines: Sequence[str], log: logging.Logger = logger) -> None:
    """Log a boxed header, one bullet per line and a footer."""
    use_ascii = LoggingConfig().use_ascii
    header, footer, bullet = get_formatted_header_footer(
        title=title, use_ascii=use_ascii
    )
    log.info(header)
    for line in lines:
        log.info(f"  {bullet} {line}")
    log.info(footer)
