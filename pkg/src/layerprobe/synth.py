"""Synthetic stores and tasks with a planted, layer-localized signal.

The generator plants K well-separated Gaussian clusters at one designated
layer: every target's span tokens carry its cluster vector, so span means
separate cleanly there.  Other layers receive the same matrix plus Gaussian
noise whose scale grows with the distance from the signal layer.  A
shuffle_labels switch permutes labels after all representation draws, which
produces a byte-identical store whose labels carry no signal; that is the
control for calibration tests.

Everything is drawn from one seeded PCG64 stream in a fixed order, so equal
(seed, spec) inputs give byte-identical stores and identical tasks.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .store import ReprStore, validate as validate_store
from .tasks import SpanTarget, TaskDataset, validate as validate_task


@dataclass
class SynthTaskSpec:
    """Shape and signal parameters of a synthetic probing task."""

    num_classes: int = 4
    num_spans: int = 1
    train: int = 400
    dev: int = 100
    test: int = 100
    signal_layer: int = 2
    cluster_sep: float = 8.0
    cluster_std: float = 0.0
    layer_noise: float = 1.0
    shuffle_labels: bool = False
    name: str = "synthetic"


def generate_synthetic(seed: int, num_layers: int, hidden_size: int,
                       sentences: int, spec: SynthTaskSpec
                       ) -> tuple[ReprStore, TaskDataset]:
    """Build a (store, task) pair with the planted signal of ``spec``.

    Raises ValueError for infeasible specs (fewer targets than classes,
    signal layer out of range, bad arity or counts).
    """
    total = spec.train + spec.dev + spec.test
    if spec.num_classes < 2:
        raise ValueError("need at least 2 classes")
    if total < spec.num_classes:
        raise ValueError(
            f"{total} targets cannot cover {spec.num_classes} classes")
    if spec.train < 1:
        raise ValueError("train split must be non-empty")
    if spec.dev < 0 or spec.test < 0:
        raise ValueError("split sizes must be non-negative")
    if num_layers < 2:
        raise ValueError("need at least 2 layers")
    if not 0 <= spec.signal_layer < num_layers:
        raise ValueError(
            f"signal layer {spec.signal_layer} outside [0, {num_layers})")
    if spec.num_spans not in (1, 2):
        raise ValueError("num_spans must be 1 or 2")
    if sentences < 1:
        raise ValueError("need at least one sentence")
    if spec.cluster_std < 0 or spec.layer_noise < 0 or spec.cluster_sep <= 0:
        raise ValueError("noise scales must be non-negative, sep positive")

    rng = np.random.Generator(np.random.PCG64(seed))
    k = spec.num_classes

    # cluster means, pairwise distance ~ cluster_sep * sqrt(2)
    mu = spec.cluster_sep * rng.standard_normal((k, hidden_size)) \
        / np.sqrt(hidden_size)

    # the first K targets cover every class, the rest draw uniformly
    labels = np.empty(total, dtype=np.int64)
    labels[:k] = np.arange(k)
    labels[k:] = rng.integers(0, k, size=total - k)

    # distribute targets over sentences as evenly as possible, in order
    base, extra = divmod(total, sentences)
    per_sentence = [base + (1 if s < extra else 0) for s in range(sentences)]

    offsets = [0]
    word_first: list[bool] = []
    span_slots: list[list[tuple[int, int]]] = []  # one list per target
    target_sentence: list[int] = []
    for s in range(sentences):
        length = 0
        local_spans: list[list[tuple[int, int]]] = []
        pre = int(rng.integers(1, 3))
        length += pre
        for _ in range(per_sentence[s]):
            spans = []
            for _ in range(spec.num_spans):
                width = int(rng.integers(1, 4))
                spans.append((length, length + width))
                length += width
                gap = int(rng.integers(1, 3))
                length += gap
            local_spans.append(spans)
        for t_spans in local_spans:
            span_slots.append(t_spans)
            target_sentence.append(s)
        for pos in range(length):
            word_first.append(pos == 0 or bool(rng.random() < 0.7))
        offsets.append(offsets[-1] + length)

    num_tokens = offsets[-1]
    sig = rng.standard_normal((num_tokens, hidden_size))
    for t in range(total):
        sent_lo = offsets[target_sentence[t]]
        for lo, hi in span_slots[t]:
            z = mu[labels[t]] + spec.cluster_std * rng.standard_normal(
                hidden_size)
            sig[sent_lo + lo:sent_lo + hi] = z

    data = np.empty((num_layers, num_tokens, hidden_size), dtype=np.float64)
    for layer in range(num_layers):
        dist = abs(layer - spec.signal_layer)
        if dist == 0:
            data[layer] = sig
        else:
            data[layer] = sig + spec.layer_noise * dist * rng.standard_normal(
                (num_tokens, hidden_size))

    if spec.shuffle_labels:
        labels = labels[rng.permutation(total)]

    store = ReprStore(
        model_id=f"synthetic-seed{seed}",
        num_layers=num_layers,
        hidden_size=hidden_size,
        sentence_offsets=np.asarray(offsets, dtype=np.int64),
        word_first=np.asarray(word_first, dtype=bool),
        data=data.astype("<f4"),
    )
    validate_store(store)

    targets = [
        SpanTarget(sentence_id=target_sentence[t],
                   span1=span_slots[t][0],
                   span2=span_slots[t][1] if spec.num_spans == 2 else None,
                   label_id=int(labels[t]))
        for t in range(total)
    ]
    task = TaskDataset(
        name=spec.name,
        label_names=[f"c{i}" for i in range(k)],
        ignore_for_f1=frozenset(),
        splits={
            "train": targets[:spec.train],
            "dev": targets[spec.train:spec.train + spec.dev],
            "test": targets[spec.train + spec.dev:],
        },
    )
    validate_task(task)
    return store, task
