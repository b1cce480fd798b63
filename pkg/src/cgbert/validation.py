"""Input checks shared by the estimators."""

from __future__ import annotations

import numpy as np


def check_texts(X, name="X") -> list[str]:
    if isinstance(X, str):
        raise ValueError(f"{name} must be a sequence of strings, not a single string")
    try:
        texts = list(X)
    except TypeError:
        raise ValueError(f"{name} must be a sequence of strings") from None
    if not texts:
        raise ValueError(f"{name} is empty")
    for i, t in enumerate(texts):
        if isinstance(t, np.str_):
            t = str(t)
        if not isinstance(t, str):
            raise ValueError(f"{name}[{i}] is {type(t).__name__}, expected str")
        if not t.split():
            raise ValueError(f"{name}[{i}] is blank")
    return [str(t) for t in texts]


def check_texts_labels(X, y) -> tuple[list[str], list[str]]:
    texts = check_texts(X)
    labels = check_texts(y, name="y")
    if len(texts) != len(labels):
        raise ValueError(f"X and y have inconsistent lengths: {len(texts)} != {len(labels)}")
    return texts, labels


def check_random_state(seed) -> int:
    """Seeds must be explicit integers so runs replay exactly."""
    if isinstance(seed, (bool, np.bool_)) or not isinstance(seed, (int, np.integer)):
        raise ValueError(f"random_state must be an int, got {seed!r}")
    if seed < 0:
        raise ValueError("random_state must be non-negative")
    return int(seed)
