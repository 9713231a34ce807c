"""Small helpers shared across the package: logging, random streams, workers."""

import hashlib
import logging
import os

import numpy as np

LOG_FORMAT = "[%(filename)s:%(lineno)d] %(message)s"
THREADS_ENV_VAR = "BANDIT_REX_THREADS"

logger = logging.getLogger("bandit_rex")


def configure_logging(quiet: bool = False) -> None:
    """Install a single stream handler on the package logger.

    Args:
        quiet: If True, only warnings and errors are shown
    """
    level = logging.WARNING if quiet else logging.INFO
    root = logging.getLogger("bandit_rex")
    for handler in list(root.handlers):
        root.removeHandler(handler)
    handler = logging.StreamHandler()
    handler.setFormatter(logging.Formatter(LOG_FORMAT))
    root.addHandler(handler)
    root.setLevel(level)
    root.propagate = False


def notify(message: str, level: int = logging.INFO) -> None:
    """Log a user-facing message tagged with the caller's filename and line number.

    Args:
        message: The message to show
        level: Logging level (default: INFO)
    """
    # record the caller's file:line, not this helper's
    logger.log(level, message, stacklevel=2)


def named_stream(seed: int, *labels: object) -> np.random.Generator:
    """Return a counter-based generator keyed by a seed and a sequence of labels.

    The same (seed, labels) always yields the same stream, and streams with different
    labels are independent, so adding a label elsewhere never shifts this one.

    Args:
        seed: Experiment or replication seed
        labels: Names identifying the consumer (policy name, phase, ...)

    Returns:
        A numpy Generator backed by Philox
    """
    key = "|".join([str(seed), *(str(label) for label in labels)])
    digest = hashlib.sha256(key.encode("utf-8")).digest()
    return np.random.Generator(np.random.Philox(int.from_bytes(digest[:16], "little")))


def worker_count() -> int:
    """Number of worker threads, capped by BANDIT_REX_THREADS when set."""
    default = os.cpu_count() or 1
    raw = os.environ.get(THREADS_ENV_VAR, "").strip()
    if not raw:
        return default
    try:
        cap = int(raw)
    except ValueError:
        logger.warning("Ignoring non-integer %s=%r", THREADS_ENV_VAR, raw)
        return default
    return max(1, min(cap, default))
