"""Contrastive training of a fresh projection pair over pooled tokens.

Encoder features stay frozen; only two linear projections and a scalar
log-temperature are learned. Each training pair is one masked-max-pooled
image token matched with one text embedding; the loss is symmetric InfoNCE
over the scaled cosine logits. Gradients are computed analytically (no
autograd) so they can be checked against finite differences, and parameters
are updated by AdamW with decoupled weight decay on the matrices only.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import MissingAttention, ShapeMismatch
from .itsm import l2_normalize_rows
from .pooling import masked_max_pool, prepare_attention
from .tensor_io import SampleRecord, read_tensor, write_tensor

LOG_TEMP_INIT = math.log(1.0 / 0.07)
LOG_TEMP_MIN = math.log(1.0 / 100.0)
LOG_TEMP_MAX = math.log(100.0)

CHECKPOINT_META = "checkpoint.json"
_TENSOR_FILES = ("phi_i_hat.ften", "phi_t_hat.ften", "log_temperature.ften")


@dataclass(frozen=True)
class ProjectionPair:
    """Learned projections plus the contrastive temperature.

    ``log_temperature`` is kept inside [ln(1/100), ln 100] so the scaled
    logits never overflow; out-of-range values are clamped on construction.
    """

    phi_i_hat: np.ndarray
    phi_t_hat: np.ndarray
    log_temperature: float = LOG_TEMP_INIT

    def __post_init__(self) -> None:
        for name in ("phi_i_hat", "phi_t_hat"):
            mat = np.asarray(getattr(self, name), dtype=np.float64)
            if mat.ndim != 2:
                raise ShapeMismatch(f"{name} must be 2-D, got shape {mat.shape}")
            if not np.all(np.isfinite(mat)):
                raise ValueError(f"{name} contains non-finite values")
            object.__setattr__(self, name, mat)
        clamped = float(np.clip(self.log_temperature, LOG_TEMP_MIN, LOG_TEMP_MAX))
        object.__setattr__(self, "log_temperature", clamped)

    @property
    def temperature(self) -> float:
        return math.exp(self.log_temperature)

    @classmethod
    def init(cls, channels: int, dim: int, seed: int = 0) -> "ProjectionPair":
        """Seeded normal init scaled by 1/sqrt(channels)."""
        rng = np.random.default_rng(seed)
        scale = 1.0 / math.sqrt(channels)
        return cls(
            phi_i_hat=rng.standard_normal((channels, dim)) * scale,
            phi_t_hat=rng.standard_normal((channels, dim)) * scale,
        )


@dataclass(frozen=True)
class TrainConfig:
    """Optimizer and loop settings, desk-scaled by default."""

    learning_rate: float = 1e-4
    weight_decay: float = 0.05
    batch_size: int = 64
    epochs: int = 10
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    max_steps: int | None = 2000
    schedule: str = "constant"
    projection_dim: int | None = None

    def __post_init__(self) -> None:
        if self.learning_rate <= 0 or self.eps <= 0:
            raise ValueError("learning_rate and eps must be positive")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be non-negative")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch_size must be >= 1 and epochs >= 0")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ValueError("betas must lie in [0, 1)")
        if self.schedule not in ("constant", "cosine"):
            raise ValueError(f"unknown schedule {self.schedule!r}")


@dataclass(frozen=True)
class Batch:
    """Paired pooled image tokens and text embeddings (row i matches row i)."""

    pooled_tokens: np.ndarray
    text_embeddings: np.ndarray

    def __post_init__(self) -> None:
        img = np.asarray(self.pooled_tokens, dtype=np.float64)
        txt = np.asarray(self.text_embeddings, dtype=np.float64)
        if img.ndim != 2 or txt.ndim != 2 or img.shape[0] != txt.shape[0]:
            raise ShapeMismatch(f"unpaired batch: {img.shape} vs {txt.shape}")
        if img.shape[0] < 1:
            raise ShapeMismatch("batch must contain at least one pair")
        object.__setattr__(self, "pooled_tokens", img)
        object.__setattr__(self, "text_embeddings", txt)

    @property
    def size(self) -> int:
        return self.pooled_tokens.shape[0]


@dataclass(frozen=True)
class Gradients:
    phi_i_hat: np.ndarray
    phi_t_hat: np.ndarray
    log_temperature: float


def _forward(batch: Batch, pair: ProjectionPair):
    """Shared forward pass; returns every intermediate backprop needs."""
    z_u = batch.pooled_tokens @ pair.phi_i_hat
    z_v = batch.text_embeddings @ pair.phi_t_hat
    u = l2_normalize_rows(z_u)
    v = l2_normalize_rows(z_v)
    tau = pair.temperature
    logits = tau * (u @ v.T)
    return z_u, z_v, u, v, tau, logits


def _log_softmax(logits: np.ndarray, axis: int) -> np.ndarray:
    shifted = logits - logits.max(axis=axis, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))


def contrastive_loss(batch: Batch, pair: ProjectionPair) -> tuple[float, np.ndarray]:
    """Symmetric InfoNCE: half row-wise, half column-wise cross-entropy.

    The target of row i and of column i is the diagonal entry, so the loss
    is zero exactly when every softmax concentrates on the matched pair.
    """
    *_, logits = _forward(batch, pair)
    diag = np.arange(batch.size)
    row = -_log_softmax(logits, axis=1)[diag, diag].mean()
    col = -_log_softmax(logits, axis=0)[diag, diag].mean()
    return float(0.5 * (row + col)), logits


def _softmax(logits: np.ndarray, axis: int) -> np.ndarray:
    shifted = np.exp(logits - logits.max(axis=axis, keepdims=True))
    return shifted / shifted.sum(axis=axis, keepdims=True)


def _normalize_backward(z: np.ndarray, grad_u: np.ndarray) -> np.ndarray:
    """Backprop through row-wise L2 normalization u = z / ||z||."""
    norms = np.linalg.norm(z, axis=1, keepdims=True)
    u = z / norms
    return (grad_u - u * np.sum(u * grad_u, axis=1, keepdims=True)) / norms


def loss_gradients(batch: Batch, pair: ProjectionPair) -> Gradients:
    """Exact analytic gradients of contrastive_loss.

    With P/Q the row/column softmaxes of the logits and I the identity,
    d(loss)/d(logits) = G = ((P - I) + (Q - I)) / 2B; the temperature
    gradient collapses to sum(G * logits) because logits scale linearly
    with exp(log_temperature).
    """
    z_u, z_v, u, v, tau, logits = _forward(batch, pair)
    b = batch.size
    eye = np.eye(b)
    g = ((_softmax(logits, axis=1) - eye) + (_softmax(logits, axis=0) - eye)) / (2 * b)

    d_log_temp = float(np.sum(g * logits))
    d_u = tau * (g @ v)
    d_v = tau * (g.T @ u)
    d_z_u = _normalize_backward(z_u, d_u)
    d_z_v = _normalize_backward(z_v, d_v)
    return Gradients(
        phi_i_hat=batch.pooled_tokens.T @ d_z_u,
        phi_t_hat=batch.text_embeddings.T @ d_z_v,
        log_temperature=d_log_temp,
    )


@dataclass
class AdamWState:
    """First/second moment accumulators, zero-initialized."""

    m_i: np.ndarray
    v_i: np.ndarray
    m_t: np.ndarray
    v_t: np.ndarray
    m_log: float = 0.0
    v_log: float = 0.0

    @classmethod
    def zeros(cls, pair: ProjectionPair) -> "AdamWState":
        return cls(
            m_i=np.zeros_like(pair.phi_i_hat),
            v_i=np.zeros_like(pair.phi_i_hat),
            m_t=np.zeros_like(pair.phi_t_hat),
            v_t=np.zeros_like(pair.phi_t_hat),
        )


def adamw_step(
    pair: ProjectionPair,
    grads: Gradients,
    config: TrainConfig,
    step_index: int,
    state: AdamWState | None = None,
    lr: float | None = None,
) -> tuple[ProjectionPair, AdamWState]:
    """One bias-corrected AdamW update; decay hits the matrices only."""
    if step_index < 1:
        raise ValueError("step_index starts at 1")
    if state is None:
        state = AdamWState.zeros(pair)
    if lr is None:
        lr = config.learning_rate
    bc1 = 1.0 - config.beta1**step_index
    bc2 = 1.0 - config.beta2**step_index

    def moments(m, v, g):
        m = config.beta1 * m + (1.0 - config.beta1) * g
        v = config.beta2 * v + (1.0 - config.beta2) * g * g
        return m, v, (m / bc1) / (np.sqrt(v / bc2) + config.eps)

    state.m_i, state.v_i, dir_i = moments(state.m_i, state.v_i, grads.phi_i_hat)
    state.m_t, state.v_t, dir_t = moments(state.m_t, state.v_t, grads.phi_t_hat)
    state.m_log, state.v_log, dir_log = moments(
        state.m_log, state.v_log, grads.log_temperature
    )
    decay = lr * config.weight_decay
    updated = ProjectionPair(
        phi_i_hat=pair.phi_i_hat - lr * dir_i - decay * pair.phi_i_hat,
        phi_t_hat=pair.phi_t_hat - lr * dir_t - decay * pair.phi_t_hat,
        log_temperature=pair.log_temperature - lr * float(dir_log),
    )
    return updated, state


def _cosine_lr(base: float, step_index: int, total_steps: int) -> float:
    frac = (step_index - 1) / max(total_steps, 1)
    return base * 0.5 * (1.0 + math.cos(math.pi * min(frac, 1.0)))


def pool_training_pairs(
    dataset: Sequence[tuple[SampleRecord, np.ndarray]],
) -> tuple[np.ndarray, np.ndarray]:
    """Masked-max-pool every record and stack pairs into two aligned arrays."""
    pooled_rows = []
    text_rows = []
    for record, text in dataset:
        if record.attention is None:
            raise MissingAttention(f"sample {record.id!r} has no attention tensor")
        mask = prepare_attention(record.attention, record.channels)
        pooled_rows.append(masked_max_pool(record.image_tokens, mask).vector)
        text = np.asarray(text, dtype=np.float64).reshape(-1)
        text_rows.append(text)
    pooled = np.stack(pooled_rows)
    texts = np.stack(text_rows)
    if pooled.shape[1] != texts.shape[1]:
        raise ShapeMismatch(
            f"pooled channels {pooled.shape[1]} vs text channels {texts.shape[1]}"
        )
    return pooled, texts


def train(
    dataset: Sequence[tuple[SampleRecord, np.ndarray]],
    config: TrainConfig,
) -> tuple[ProjectionPair, list[float]]:
    """Run epochs of seeded-shuffle batches over frozen pooled features.

    Returns the trained pair and the per-step loss curve. Identical seed and
    config give bit-identical results; the input records are never written.
    """
    pooled, texts = pool_training_pairs(dataset)
    channels = pooled.shape[1]
    dim = config.projection_dim or channels
    pair = ProjectionPair.init(channels, dim, seed=config.seed)
    state = AdamWState.zeros(pair)
    rng = np.random.default_rng(config.seed)

    n = pooled.shape[0]
    batches_per_epoch = math.ceil(n / config.batch_size)
    planned = config.epochs * batches_per_epoch
    if config.max_steps is not None:
        planned = min(planned, config.max_steps)

    curve: list[float] = []
    step = 0
    for _ in range(config.epochs):
        order = rng.permutation(n)
        for start in range(0, n, config.batch_size):
            if step >= planned:
                return pair, curve
            idx = order[start : start + config.batch_size]
            batch = Batch(pooled_tokens=pooled[idx], text_embeddings=texts[idx])
            step += 1
            lr = (
                _cosine_lr(config.learning_rate, step, planned)
                if config.schedule == "cosine"
                else config.learning_rate
            )
            loss, _ = contrastive_loss(batch, pair)
            grads = loss_gradients(batch, pair)
            pair, state = adamw_step(pair, grads, config, step, state, lr=lr)
            curve.append(loss)
    return pair, curve


def save_checkpoint(
    out_dir: Path | str,
    pair: ProjectionPair,
    config: TrainConfig,
    steps: int,
) -> Path:
    """Write the pair as three tensor files plus a JSON sidecar; returns the dir."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_tensor(out / _TENSOR_FILES[0], pair.phi_i_hat)
    write_tensor(out / _TENSOR_FILES[1], pair.phi_t_hat)
    write_tensor(out / _TENSOR_FILES[2], np.array([pair.log_temperature]))
    meta = {
        "version": 1,
        "steps": steps,
        "seed": config.seed,
        "config": dataclasses.asdict(config),
    }
    (out / CHECKPOINT_META).write_text(
        json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    return out


def load_checkpoint(ckpt_dir: Path | str) -> tuple[ProjectionPair, dict]:
    """Read a checkpoint directory back into a pair and its metadata."""
    ckpt = Path(ckpt_dir)
    phi_i = read_tensor(ckpt / _TENSOR_FILES[0])
    phi_t = read_tensor(ckpt / _TENSOR_FILES[1])
    log_temp = read_tensor(ckpt / _TENSOR_FILES[2])
    if log_temp.shape != (1,):
        raise ShapeMismatch(f"log_temperature must have shape (1,), got {log_temp.shape}")
    meta_path = ckpt / CHECKPOINT_META
    meta = json.loads(meta_path.read_text(encoding="utf-8")) if meta_path.exists() else {}
    pair = ProjectionPair(
        phi_i_hat=phi_i, phi_t_hat=phi_t, log_temperature=float(log_temp[0])
    )
    return pair, meta
