"""Edge probing with trainable scalar mixing weights over layers.

A ScalarMix holds one raw scalar per layer plus a global scale gamma; the
mixed token vector is gamma * sum_l softmax(s)_l * h_l.  With normalize on,
every token vector is scaled to unit L2 norm (epsilon-guarded) before
mixing, which removes the incentive to inflate weights of small-norm layers.
The mix trains jointly with the span probe on the task's train split.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from . import kernels
from .errors import TrainingDiverged
from .probe import (AdamState, ProbeConfig, ProbeParams, SpanBatch, evaluate,
                    init_params, make_span_batch, validate_config)
from .store import ReprStore
from .tasks import TaskDataset

NORM_EPS = 1e-12


@dataclass
class ScalarMix:
    """Raw per-layer scalars, global gamma, and the normalization switch."""

    scalars: np.ndarray
    gamma: float
    normalize: bool = True

    def copy(self) -> "ScalarMix":
        return ScalarMix(self.scalars.copy(), float(self.gamma),
                         self.normalize)


def init_mix(num_layers: int, normalize: bool = True) -> ScalarMix:
    """Uniform start: scalars all zero, gamma 1."""
    if num_layers < 2:
        raise ValueError("need at least 2 layers to mix")
    return ScalarMix(scalars=np.zeros(num_layers), gamma=1.0,
                     normalize=normalize)


def mix_weights(mix: ScalarMix) -> np.ndarray:
    """Softmax of the raw scalars; sums to 1."""
    s = mix.scalars - mix.scalars.max()
    e = np.exp(s)
    return e / e.sum()


def normalize_rows(x: np.ndarray, eps: float = NORM_EPS) -> np.ndarray:
    """Scale each row to unit L2 norm, guarding zero rows with ``eps``."""
    norms = np.sqrt(np.sum(x * x, axis=-1, keepdims=True))
    return x / np.maximum(norms, eps)


def mix(mix_state: ScalarMix, per_layer_vectors: np.ndarray) -> np.ndarray:
    """Combine one token's per-layer vectors into a single vector."""
    vecs = np.asarray(per_layer_vectors, dtype=np.float64)
    if vecs.ndim != 2 or vecs.shape[0] != mix_state.scalars.shape[0]:
        raise ValueError(
            f"expected {mix_state.scalars.shape[0]} layer vectors, "
            f"got shape {vecs.shape}")
    if mix_state.normalize:
        vecs = normalize_rows(vecs)
    w = mix_weights(mix_state)
    return mix_state.gamma * (w @ vecs)


class EdgeResult(NamedTuple):
    mix: ScalarMix
    params: ProbeParams
    micro_f1: float


def _remap_batches(store: ReprStore, task: TaskDataset
                   ) -> tuple[np.ndarray, dict[str, SpanBatch]]:
    """Map span rows onto a compact index of tokens any split touches."""
    num_spans = task.num_spans
    raw = {split: make_span_batch(store, task.splits[split], num_spans)
           for split in ("train", "dev", "test")}
    mask = np.zeros(store.num_tokens, dtype=bool)
    for batch in raw.values():
        for s, e in zip(batch.starts.ravel(), batch.ends.ravel()):
            mask[s:e] = True
    used = np.flatnonzero(mask)
    remap = np.full(store.num_tokens, -1, dtype=np.int64)
    remap[used] = np.arange(used.size)
    batches = {}
    for split, batch in raw.items():
        starts = remap[batch.starts]
        # ends are exclusive: remap the last covered row, then step past it
        ends = remap[batch.ends - 1] + 1
        batches[split] = SpanBatch(starts, ends, batch.labels)
    return used, batches


def train_edge_probe(store: ReprStore, task: TaskDataset,
                     config: ProbeConfig, normalize: bool) -> EdgeResult:
    """Jointly train mixing scalars, gamma and probe; report test micro-F1.

    Deterministic in config.seed.  Early stopping tracks dev bits; the
    returned parameters and mix are the best-dev snapshot.
    """
    validate_config(config)
    if store.num_layers < 2:
        raise ValueError("need at least 2 layers")
    if config.num_spans != task.num_spans:
        raise ValueError(
            f"config arity {config.num_spans} != task arity {task.num_spans}")
    if config.num_classes != task.num_classes:
        raise ValueError("config classes do not match task labels")
    for split in ("train", "dev", "test"):
        if not task.splits.get(split):
            raise ValueError(f"empty {split} split")

    used, batches = _remap_batches(store, task)
    stack = np.asarray(store.data[:, used, :], dtype=np.float64)
    if normalize:
        stack = normalize_rows(stack)

    rng = np.random.Generator(np.random.PCG64(config.seed))
    params = init_params(config, rng)
    mix_state = init_mix(store.num_layers, normalize)
    gamma_arr = np.array([mix_state.gamma])
    tensors = params.tensors() + [mix_state.scalars, gamma_arr]
    adam = AdamState(tensors)

    def mixed_matrix() -> tuple[np.ndarray, np.ndarray]:
        w = mix_weights(mix_state)
        pre_gamma = np.tensordot(w, stack, axes=(0, 0))
        return gamma_arr[0] * pre_gamma, pre_gamma

    mixed, _ = mixed_matrix()
    best_metrics = evaluate(params, mixed, batches["dev"])
    best_params = params.copy()
    best_mix = ScalarMix(mix_state.scalars.copy(), float(gamma_arr[0]),
                         normalize)
    bad_epochs = 0
    n = len(batches["train"])
    for epoch in range(1, config.max_epochs + 1):
        order = rng.permutation(n)
        for lo in range(0, n, config.batch_size):
            sub = batches["train"].take(order[lo:lo + config.batch_size])
            mixed, pre_gamma = mixed_matrix()
            out = kernels.probe_loss_grad(
                mixed, sub.starts, sub.ends, sub.labels,
                *(t for t in params.tensors()), True)
            bits = out[0]
            if not np.isfinite(bits):
                raise TrainingDiverged(f"non-finite loss at epoch {epoch}")
            inv_b = 1.0 / len(sub)
            grads = [g * inv_b for g in out[1:8]]
            dx = out[8] * inv_b
            w = mix_weights(mix_state)
            d_gamma = np.array([np.sum(dx * pre_gamma)])
            d_w = gamma_arr[0] * np.einsum("uh,luh->l", dx, stack)
            d_s = w * (d_w - float(w @ d_w))
            adam.step(tensors, grads + [d_s, d_gamma],
                      config.learning_rate)
        mix_state.gamma = float(gamma_arr[0])
        mixed, _ = mixed_matrix()
        metrics = evaluate(params, mixed, batches["dev"])
        if metrics["total_bits"] < best_metrics["total_bits"]:
            best_metrics = metrics
            best_params = params.copy()
            best_mix = ScalarMix(mix_state.scalars.copy(),
                                 float(gamma_arr[0]), normalize)
            bad_epochs = 0
        else:
            bad_epochs += 1
            if bad_epochs >= config.patience:
                break
        if not all(np.all(np.isfinite(t)) for t in tensors):
            raise TrainingDiverged(f"non-finite parameters at epoch {epoch}")

    final_mix = best_mix
    w = mix_weights(final_mix)
    pre_gamma = np.tensordot(w, stack, axes=(0, 0))
    mixed = final_mix.gamma * pre_gamma
    test_metrics = evaluate(best_params, mixed, batches["test"],
                            task.ignore_for_f1)
    return EdgeResult(mix=final_mix, params=best_params,
                      micro_f1=test_metrics["micro_f1"])
