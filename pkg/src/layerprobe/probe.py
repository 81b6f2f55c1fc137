"""Span probe: per-span projection, self-attention pooling, MLP classifier.

The probe projects each span's token rows to ``proj_dim``, pools them with
a learned self-attention scorer, concatenates the pooled span vectors and
classifies through one ReLU hidden layer.  Two-span tasks get separate
projection and pooling weights per span slot.  All losses are measured in
bits so results feed directly into codelength accounting.

Gradients are analytic (reverse mode, written out by hand in the kernels
module) and the training loop is deterministic given (config, data, seed).
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from . import kernels
from .errors import TrainingDiverged
from .store import ReprStore, sentence_bounds
from .tasks import SpanTarget

TENSOR_ORDER = ("proj_w", "proj_b", "attn_v", "w1", "b1", "w2", "b2")

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass
class ProbeConfig:
    """Architecture and training hyperparameters."""

    input_dim: int
    num_classes: int
    num_spans: int = 1
    proj_dim: int = 256
    mlp_hidden: int = 256
    learning_rate: float = 1e-3
    batch_size: int = 64
    max_epochs: int = 50
    patience: int = 5
    optimizer: str = "adam"
    seed: int = 0


def validate_config(config: ProbeConfig) -> None:
    if min(config.input_dim, config.proj_dim, config.mlp_hidden,
           config.batch_size, config.max_epochs) < 1:
        raise ValueError("all dimensions and loop bounds must be >= 1")
    if config.num_classes < 2:
        raise ValueError("need at least 2 classes")
    if config.num_spans not in (1, 2):
        raise ValueError("num_spans must be 1 or 2")
    if config.learning_rate <= 0:
        raise ValueError("learning rate must be positive")
    if config.patience < 1:
        raise ValueError("patience must be >= 1")
    if config.optimizer not in ("adam", "sgd"):
        raise ValueError(f"unknown optimizer {config.optimizer!r}")


@dataclass
class ProbeParams:
    """All trainable tensors, float64 throughout."""

    proj_w: np.ndarray  # (num_spans, H, proj_dim)
    proj_b: np.ndarray  # (num_spans, proj_dim)
    attn_v: np.ndarray  # (num_spans, proj_dim)
    w1: np.ndarray      # (num_spans * proj_dim, mlp_hidden)
    b1: np.ndarray      # (mlp_hidden,)
    w2: np.ndarray      # (mlp_hidden, K)
    b2: np.ndarray      # (K,)

    def tensors(self) -> list[np.ndarray]:
        return [getattr(self, name) for name in TENSOR_ORDER]

    def copy(self) -> "ProbeParams":
        return ProbeParams(*(t.copy() for t in self.tensors()))


def _glorot(rng: np.random.Generator, shape, fan_in: int,
            fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def init_params(config: ProbeConfig,
                rng: np.random.Generator | None = None) -> ProbeParams:
    """Glorot-uniform matrices, zero biases, drawn in fixed tensor order."""
    validate_config(config)
    if rng is None:
        rng = np.random.Generator(np.random.PCG64(config.seed))
    s, h, d = config.num_spans, config.input_dim, config.proj_dim
    m, k = config.mlp_hidden, config.num_classes
    return ProbeParams(
        proj_w=_glorot(rng, (s, h, d), h, d),
        proj_b=np.zeros((s, d)),
        attn_v=_glorot(rng, (s, d), d, 1),
        w1=_glorot(rng, (s * d, m), s * d, m),
        b1=np.zeros(m),
        w2=_glorot(rng, (m, k), m, k),
        b2=np.zeros(k),
    )


# ---------------------------------------------------------------------------
# batches


@dataclass
class SpanBatch:
    """Targets resolved to absolute token ranges, ready for the kernels."""

    starts: np.ndarray  # (B, num_spans) int64
    ends: np.ndarray    # (B, num_spans) int64
    labels: np.ndarray  # (B,) int64

    def __len__(self) -> int:
        return int(self.labels.shape[0])

    def take(self, index) -> "SpanBatch":
        """Sub-batch by slice or integer index array."""
        return SpanBatch(self.starts[index], self.ends[index],
                         self.labels[index])


def make_span_batch(store: ReprStore, targets: list[SpanTarget],
                    num_spans: int) -> SpanBatch:
    """Resolve sentence-local spans to absolute rows, validating bounds."""
    b = len(targets)
    starts = np.empty((b, num_spans), dtype=np.int64)
    ends = np.empty((b, num_spans), dtype=np.int64)
    labels = np.empty(b, dtype=np.int64)
    for i, t in enumerate(targets):
        lo, hi = sentence_bounds(store, t.sentence_id)
        spans = (t.span1,) if num_spans == 1 else (t.span1, t.span2)
        for j, span in enumerate(spans):
            if span is None:
                raise ValueError(f"target {i} lacks span {j + 1}")
            s, e = span
            if not 0 <= s < e <= hi - lo:
                raise ValueError(
                    f"target {i}: span [{s},{e}) outside sentence of "
                    f"{hi - lo} tokens")
            starts[i, j] = lo + s
            ends[i, j] = lo + e
        labels[i] = t.label_id
    return SpanBatch(starts, ends, labels)


# ---------------------------------------------------------------------------
# forward / loss


def attn_pool(projected: np.ndarray, scorer: np.ndarray) -> np.ndarray:
    """Self-attention pooling of an (m, d) span: softmax(A v) weights.

    Softmax subtracts the max score first; the output is a convex
    combination of the input rows.
    """
    if projected.ndim != 2 or projected.shape[0] < 1:
        raise ValueError("need a non-empty (m, d) matrix")
    scores = projected @ scorer
    scores = scores - scores.max()
    e = np.exp(scores)
    alpha = e / e.sum()
    return alpha @ projected


def forward(params: ProbeParams, x: np.ndarray,
            batch: SpanBatch) -> np.ndarray:
    """Raw logits, shape (len(batch), K)."""
    if np.any(batch.ends > x.shape[0]) or np.any(batch.starts < 0):
        raise ValueError("span rows outside the layer matrix")
    return kernels.probe_forward(x, batch.starts, batch.ends,
                                 *(t for t in params.tensors()))


def cross_entropy_bits(logits: np.ndarray, labels: np.ndarray) -> float:
    """Total bits over the batch: -sum log2 softmax(logits)[label]."""
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= logits.shape[1]):
        raise ValueError("label out of range")
    return float(kernels.logits_to_bits(logits, labels).sum())


def grad(params: ProbeParams, x: np.ndarray, batch: SpanBatch,
         need_dx: bool = False):
    """Total bit loss and its gradient for every parameter tensor.

    Returns (bits, grads: list in TENSOR_ORDER, dx or None).
    """
    out = kernels.probe_loss_grad(x, batch.starts, batch.ends, batch.labels,
                                  *(t for t in params.tensors()),
                                  need_dx)
    bits = out[0]
    grads = list(out[1:8])
    dx = out[8] if need_dx else None
    return bits, grads, dx


# ---------------------------------------------------------------------------
# metrics


def micro_f1(preds: np.ndarray, labels: np.ndarray,
             ignore: frozenset[int] = frozenset()) -> float:
    """Micro-averaged F1 over all classes not in ``ignore``.

    A prediction of an ignored class never counts as a false positive; a
    gold ignored label never counts as a false negative.  Returns 0.0 when
    no relevant decisions exist.
    """
    tp = fp = fn = 0
    for p, y in zip(preds.tolist(), labels.tolist()):
        if p == y:
            if y not in ignore:
                tp += 1
        else:
            if p not in ignore:
                fp += 1
            if y not in ignore:
                fn += 1
    denom = 2 * tp + fp + fn
    return 2.0 * tp / denom if denom else 0.0


def evaluate(params: ProbeParams, x: np.ndarray, batch: SpanBatch,
             ignore_for_f1: frozenset[int] = frozenset()) -> dict:
    """total_bits, mean_bits, accuracy and micro_f1 on one batch."""
    if len(batch) == 0:
        raise ValueError("cannot evaluate an empty batch")
    logits = forward(params, x, batch)
    bits = kernels.logits_to_bits(logits, batch.labels)
    preds = np.argmax(logits, axis=1)  # ties resolve to the lowest index
    return {
        "total_bits": float(bits.sum()),
        "mean_bits": float(bits.mean()),
        "accuracy": float(np.mean(preds == batch.labels)),
        "micro_f1": micro_f1(preds, batch.labels, ignore_for_f1),
    }


# ---------------------------------------------------------------------------
# optimization


class AdamState:
    """Per-tensor first/second moment accumulators."""

    def __init__(self, tensors: list[np.ndarray]):
        self.m = [np.zeros_like(t) for t in tensors]
        self.v = [np.zeros_like(t) for t in tensors]
        self.t = 0

    def step(self, tensors: list[np.ndarray], grads: list[np.ndarray],
             lr: float) -> None:
        self.t += 1
        bc1 = 1.0 - ADAM_BETA1 ** self.t
        bc2 = 1.0 - ADAM_BETA2 ** self.t
        for p, g, m, v in zip(tensors, grads, self.m, self.v):
            m *= ADAM_BETA1
            m += (1.0 - ADAM_BETA1) * g
            v *= ADAM_BETA2
            v += (1.0 - ADAM_BETA2) * g * g
            p -= lr * (m / bc1) / (np.sqrt(v / bc2) + ADAM_EPS)


def sgd_step(tensors: list[np.ndarray], grads: list[np.ndarray],
             lr: float) -> None:
    for p, g in zip(tensors, grads):
        p -= lr * g


def train_probe(config: ProbeConfig, x: np.ndarray, train_batch: SpanBatch,
                dev_batch: SpanBatch) -> tuple[ProbeParams, dict]:
    """Minibatch training with early stopping on dev bits.

    The dev set is scored before the first epoch, so the returned
    parameters are the best seen including the initialization.  Raises
    TrainingDiverged on a non-finite loss or gradient.
    """
    validate_config(config)
    if len(train_batch) == 0:
        raise ValueError("empty train split")
    if len(dev_batch) == 0:
        raise ValueError("empty dev split")
    if x.shape[1] != config.input_dim:
        raise ValueError(
            f"layer width {x.shape[1]} != config.input_dim {config.input_dim}")
    if int(train_batch.labels.max()) >= config.num_classes:
        raise ValueError("label id >= num_classes")

    rng = np.random.Generator(np.random.PCG64(config.seed))
    params = init_params(config, rng)
    tensors = params.tensors()
    adam = AdamState(tensors) if config.optimizer == "adam" else None

    best_metrics = evaluate(params, x, dev_batch)
    best = params.copy()
    bad_epochs = 0
    epochs_run = 0
    n = len(train_batch)
    for epoch in range(1, config.max_epochs + 1):
        order = rng.permutation(n)
        for lo in range(0, n, config.batch_size):
            sub = train_batch.take(order[lo:lo + config.batch_size])
            bits, grads, _ = grad(params, x, sub)
            if not np.isfinite(bits):
                raise TrainingDiverged(f"non-finite loss at epoch {epoch}")
            inv_b = 1.0 / len(sub)
            grads = [g * inv_b for g in grads]
            if adam is not None:
                adam.step(tensors, grads, config.learning_rate)
            else:
                sgd_step(tensors, grads, config.learning_rate)
            if not all(np.all(np.isfinite(t)) for t in tensors):
                raise TrainingDiverged(
                    f"non-finite parameters at epoch {epoch}")
        epochs_run = epoch
        metrics = evaluate(params, x, dev_batch)
        if metrics["total_bits"] < best_metrics["total_bits"]:
            best_metrics = metrics
            best = params.copy()
            bad_epochs = 0
        else:
            bad_epochs += 1
            if bad_epochs >= config.patience:
                break
    out = dict(best_metrics)
    out["epochs_run"] = epochs_run
    return best, out


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(path, config: ProbeConfig, params: ProbeParams,
                    metrics: dict | None = None) -> None:
    """Write a probe checkpoint: u64 header length, JSON header, f64 payload.

    The header records config, tensor order and shapes; tensors follow in
    exactly that order as little-endian float64.
    """
    header = {
        "config": asdict(config),
        "tensor_order": list(TENSOR_ORDER),
        "shapes": {name: list(getattr(params, name).shape)
                   for name in TENSOR_ORDER},
        "metrics": metrics or {},
    }
    blob = json.dumps(header, sort_keys=True,
                      separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(np.uint64(len(blob)).tobytes())
        fh.write(blob)
        for name in TENSOR_ORDER:
            fh.write(np.ascontiguousarray(getattr(params, name),
                                          dtype="<f8").tobytes())


def load_checkpoint(path) -> tuple[ProbeConfig, ProbeParams, dict]:
    """Inverse of save_checkpoint."""
    with open(path, "rb") as fh:
        header_len = int(np.frombuffer(fh.read(8), dtype="<u8")[0])
        header = json.loads(fh.read(header_len).decode("utf-8"))
        config = ProbeConfig(**header["config"])
        arrays = {}
        for name in header["tensor_order"]:
            shape = tuple(header["shapes"][name])
            count = int(np.prod(shape)) if shape else 1
            buf = fh.read(8 * count)
            if len(buf) != 8 * count:
                raise ValueError(f"{path}: truncated tensor {name}")
            arrays[name] = np.frombuffer(buf, dtype="<f8").reshape(
                shape).copy()
    return config, ProbeParams(**arrays), header.get("metrics", {})
