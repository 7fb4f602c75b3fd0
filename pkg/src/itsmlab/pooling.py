"""Token pooling: average, max, and attention-masked max.

The masked variant weights tokens by a head-averaged attention vector
broadcast across channels, then takes the channel-wise max. It is a
training-time device only: inference-time similarity maps never see the
mask, and pooling never modifies the token features themselves.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import ShapeMismatch

METHOD_AVG = "avg"
METHOD_MAX = "max"
METHOD_MASKED_MAX = "masked_max"


class NegativeAttentionWarning(UserWarning):
    """Attention weights are expected non-negative; negatives are tolerated."""


@dataclass(frozen=True)
class AttentionMask:
    raw: np.ndarray        # (N_h, N_i)
    reduced: np.ndarray    # (N_i,) head mean
    expanded: np.ndarray   # (N_i, C) broadcast view of reduced


@dataclass(frozen=True)
class PooledToken:
    vector: np.ndarray             # (C,)
    method: str
    argmax: np.ndarray | None = None  # (C,) token index per channel, max methods only


def prepare_attention(raw: np.ndarray, channels: int) -> AttentionMask:
    """Head-mean a multi-head attention map, then broadcast across channels."""
    raw = np.asarray(raw, dtype=np.float64)
    if raw.ndim != 2 or raw.shape[0] < 1:
        raise ShapeMismatch(f"attention must be (N_h, N_i) with N_h >= 1, got {raw.shape}")
    if channels < 1:
        raise ShapeMismatch(f"channel count must be >= 1, got {channels}")
    if np.any(raw < 0):
        warnings.warn(
            "attention map contains negative weights", NegativeAttentionWarning, stacklevel=2
        )
    reduced = raw.mean(axis=0)
    expanded = np.broadcast_to(reduced[:, None], (raw.shape[1], channels))
    return AttentionMask(raw=raw, reduced=reduced, expanded=expanded)


def avg_pool(tokens: np.ndarray) -> PooledToken:
    tokens = _check_tokens(tokens)
    return PooledToken(vector=tokens.mean(axis=0), method=METHOD_AVG)


def max_pool(tokens: np.ndarray) -> PooledToken:
    """Channel-wise max; ties resolve to the lowest token index."""
    tokens = _check_tokens(tokens)
    idx = tokens.argmax(axis=0)
    return PooledToken(vector=tokens.max(axis=0), method=METHOD_MAX, argmax=idx)


def masked_max_pool(tokens: np.ndarray, mask: AttentionMask) -> PooledToken:
    """Channel-wise max of attention-weighted tokens.

    With an all-ones mask this equals :func:`max_pool` exactly. The mask
    guides training only; callers must not route inference-time similarity
    maps through it.
    """
    tokens = _check_tokens(tokens)
    if mask.expanded.shape != tokens.shape:
        raise ShapeMismatch(
            f"attention mask {mask.expanded.shape} does not match tokens {tokens.shape}"
        )
    weighted = tokens * mask.expanded
    idx = weighted.argmax(axis=0)
    return PooledToken(vector=weighted.max(axis=0), method=METHOD_MASKED_MAX, argmax=idx)


def _check_tokens(tokens: np.ndarray) -> np.ndarray:
    tokens = np.asarray(tokens, dtype=np.float64)
    if tokens.ndim != 2 or tokens.shape[0] < 1:
        raise ShapeMismatch(f"tokens must be (N_i, C) with N_i >= 1, got {tokens.shape}")
    return tokens
