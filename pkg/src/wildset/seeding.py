"""Derive independent, reproducible seeds from one root seed."""

from __future__ import annotations

import hashlib

import numpy as np


def label_key(label: str) -> int:
    return int.from_bytes(hashlib.sha256(label.encode("utf-8")).digest()[:4], "little")


def derive_seed(root: int, label: str) -> int:
    """A 63-bit seed for ``label`` that depends only on ``root`` and ``label``."""
    if root < 0:
        raise ValueError(f"root seed must be non-negative, got {root}")
    ss = np.random.SeedSequence(int(root), spawn_key=(label_key(label),))
    return int(ss.generate_state(2, np.uint64)[0] >> np.uint64(1))
