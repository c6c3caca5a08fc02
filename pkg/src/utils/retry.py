"""Retry utilities: matrix factorisations with escalating diagonal jitter."""

import logging
from functools import wraps
from typing import Any, Callable, Optional

import numpy as np

from ..config import config
from ..mfglab.exceptions import JitterExhaustedError

logger = logging.getLogger(__name__)


def jitter_retry(
    max_attempts: Optional[int] = None,
    initial_jitter: Optional[float] = None,
    jitter_factor: Optional[float] = None,
    max_jitter: Optional[float] = None,
    exceptions: tuple = (np.linalg.LinAlgError,),
):
    """Decorator for functions of a (stack of) square matrices.

    The first call is made on the matrix as given; each failure adds
    `jitter * I` with the jitter growing geometrically, never beyond
    `max_jitter`. The jitter is absolute. It acts as a relative
    perturbation only when the caller passes unit-diagonal matrices, as
    `clt_oracle.covariance_factor` does by factorising the correlation form.
    """

    def decorator(func: Callable[..., Any]) -> Callable[..., Any]:
        @wraps(func)
        def wrapper(matrix: np.ndarray, *args, **kwargs) -> Any:
            attempts = (
                max_attempts if max_attempts is not None else config.covariance_max_attempts
            )
            first = (
                initial_jitter
                if initial_jitter is not None
                else config.covariance_initial_jitter
            )
            factor = (
                jitter_factor
                if jitter_factor is not None
                else config.covariance_jitter_factor
            )
            ceiling = max_jitter if max_jitter is not None else config.covariance_max_jitter

            identity = np.eye(matrix.shape[-1])
            jitter = 0.0
            attempt = 0

            while True:
                try:
                    return func(matrix + jitter * identity, *args, **kwargs)
                except exceptions as e:
                    attempt += 1

                    if attempt >= attempts or jitter >= ceiling:
                        logger.error(
                            "Jitter exhausted after %s attempts for %s: %s",
                            attempt,
                            func.__name__,
                            e,
                        )
                        raise JitterExhaustedError(
                            f"Factorisation failed after {attempt} attempts "
                            f"(jitter {jitter:.1e}): {e}",
                            context={"attempts": attempt, "jitter": jitter},
                        ) from e

                    jitter = first if attempt == 1 else min(jitter * factor, ceiling)

                    logger.warning(
                        "Attempt %s failed for %s: %s. Retrying with jitter %.1e...",
                        attempt,
                        func.__name__,
                        e,
                        jitter,
                    )

        return wrapper

    return decorator
