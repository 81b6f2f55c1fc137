"""Dumping per-layer hidden states into an LPRS store, and checking one.

``extract`` runs a frozen checkpoint over a sentence file and writes every
hidden-state matrix the model exposes: index 0 is the embedding output, so
a model with E encoder blocks yields E + 1 layers.  ``verify`` re-runs the
model on token ids reconstructed from the stored token texts and compares
sampled rows against the file, which catches both payload corruption and
checkpoint/store mismatches.

Inference is forced single-threaded and batched in a fixed order, so the
same checkpoint and input always produce byte-identical stores.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from layerprobe.store import ReprStore, read_store, write_store


class ExtractionError(Exception):
    """Base failure; ``kind`` feeds the CLI error JSON."""

    kind = "ExtractionFailed"


class InputMissing(ExtractionError):
    kind = "InputMissing"


class EmptyInput(ExtractionError):
    kind = "EmptyInput"


class BadConfig(ExtractionError):
    kind = "BadConfig"


class CheckpointLoadFailed(ExtractionError):
    kind = "CheckpointLoadFailed"


class TokenizerMismatch(ExtractionError):
    kind = "TokenizerMismatch"


class StoreNotVerifiable(ExtractionError):
    kind = "StoreNotVerifiable"


@dataclass(frozen=True)
class ExtractionConfig:
    model: str
    input_path: str
    out_path: str
    max_len: int = 128
    batch_size: int = 32
    device: str = "cpu"


@dataclass
class VerifyReport:
    """Outcome of sampled recomputation against a stored payload."""

    checked: int
    tolerance: float
    max_abs_err: float
    mismatches: list = field(default_factory=list)  # [layer, token, err]

    @property
    def ok(self) -> bool:
        return not self.mismatches


def read_sentences(path) -> list[str]:
    """Non-blank lines of the input file, original order."""
    if not os.path.isfile(path):
        raise InputMissing(f"missing input file: {path}")
    with open(path, encoding="utf-8") as fh:
        sentences = [line.strip() for line in fh]
    sentences = [s for s in sentences if s]
    if not sentences:
        raise EmptyInput(f"no sentences in {path}")
    return sentences


def load_checkpoint(model_path: str, device: str = "cpu"):
    """Model in eval mode plus its fast tokenizer.

    Import happens here so that error paths (and the CLI's --help) never
    pay for torch startup.
    """
    import torch
    from transformers import AutoModel, AutoTokenizer

    torch.set_num_threads(1)  # fixed reduction order, reruns match
    try:
        tokenizer = AutoTokenizer.from_pretrained(model_path, use_fast=True)
        model = AutoModel.from_pretrained(model_path)
    except Exception as exc:
        raise CheckpointLoadFailed(f"{model_path}: {exc}") from exc
    if not getattr(tokenizer, "is_fast", False):
        raise TokenizerMismatch(
            "word alignment needs a fast tokenizer; this checkpoint only "
            "provides a slow one")
    model.to(device)
    model.eval()
    return model, tokenizer


def _encode(tokenizer, sentences, max_len):
    """Per-sentence ids, word-first flags and token texts.

    A token is word-initial when the tokenizer aligns it to a different
    word than its predecessor; special tokens align to no word and are
    never word-initial.
    """
    encoded = []
    truncated = 0
    for text in sentences:
        enc = tokenizer(text, truncation=True, max_length=max_len)
        ids = enc["input_ids"]
        word_ids = enc.word_ids()
        if len(tokenizer(text, truncation=False)["input_ids"]) > len(ids):
            truncated += 1
        first = []
        prev = object()
        for wid in word_ids:
            first.append(wid is not None and wid != prev)
            prev = wid
        if not any(first):
            raise TokenizerMismatch(
                f"no word-aligned tokens in {text!r}; cannot satisfy the "
                "store's word-initial invariant")
        encoded.append({
            "ids": ids,
            "word_first": first,
            "tokens": tokenizer.convert_ids_to_tokens(ids),
        })
    return encoded, truncated


def _hidden_states(model, encoded, batch_size, device):
    """Per-sentence (num_layers, t_i, H) float32 arrays, in input order."""
    import torch

    pad_id = model.config.pad_token_id or 0
    out = []
    with torch.no_grad():
        for lo in range(0, len(encoded), batch_size):
            chunk = encoded[lo:lo + batch_size]
            width = max(len(e["ids"]) for e in chunk)
            ids = torch.full((len(chunk), width), pad_id, dtype=torch.long)
            mask = torch.zeros((len(chunk), width), dtype=torch.long)
            for row, e in enumerate(chunk):
                n = len(e["ids"])
                ids[row, :n] = torch.tensor(e["ids"], dtype=torch.long)
                mask[row, :n] = 1
            states = model(input_ids=ids.to(device),
                           attention_mask=mask.to(device),
                           output_hidden_states=True).hidden_states
            stacked = torch.stack(states).cpu().numpy().astype(
                np.float32, copy=False)
            for row, e in enumerate(chunk):
                out.append(stacked[:, row, :len(e["ids"]), :])
    return out


def _build_store(model_path, hidden, encoded) -> ReprStore:
    num_layers = hidden[0].shape[0]
    offsets = np.zeros(len(encoded) + 1, dtype=np.int64)
    np.cumsum([h.shape[1] for h in hidden], out=offsets[1:])
    data = np.concatenate(hidden, axis=1)
    word_first = np.concatenate(
        [np.asarray(e["word_first"], dtype=bool) for e in encoded])
    tokens = [t for e in encoded for t in e["tokens"]]
    return ReprStore(
        model_id=f"{model_path}|layer0=embedding-output",
        num_layers=num_layers,
        hidden_size=int(data.shape[2]),
        sentence_offsets=offsets,
        word_first=word_first,
        data=np.ascontiguousarray(data),
        token_texts=tokens,
    )


def extract(config: ExtractionConfig):
    """Run the checkpoint over the input file and write the store.

    Returns (store, truncated_sentence_count).  Nothing is written until
    every sentence has been encoded, so input errors leave no file behind.
    """
    if config.max_len < 2:
        raise BadConfig(f"max_len must be >= 2, got {config.max_len}")
    if config.batch_size < 1:
        raise BadConfig("batch_size must be >= 1")
    sentences = read_sentences(config.input_path)
    model, tokenizer = load_checkpoint(config.model, config.device)
    encoded, truncated = _encode(tokenizer, sentences, config.max_len)
    hidden = _hidden_states(model, encoded, config.batch_size, config.device)
    store = _build_store(config.model, hidden, encoded)
    write_store(store, config.out_path)
    return store, truncated


def verify(store_path, model_path, k: int, seed: int = 0,
           batch_size: int = 32, tolerance: float = 1e-5,
           device: str = "cpu") -> VerifyReport:
    """Recompute k sampled token vectors and compare against the store.

    Token ids are rebuilt from the stored token texts, so no input file is
    needed, and batching mirrors extract so the recomputation is exact.
    k >= num_layers * num_tokens checks every row once; k <= 0 checks
    nothing and trivially passes.
    """
    store = read_store(store_path)
    if store.token_texts is None:
        raise StoreNotVerifiable(
            f"{store_path} has no token_texts; cannot recompute")
    model, tokenizer = load_checkpoint(model_path, device)
    encoded = []
    off = store.sentence_offsets
    for s in range(store.num_sentences):
        tokens = store.token_texts[int(off[s]):int(off[s + 1])]
        encoded.append({"ids": tokenizer.convert_tokens_to_ids(tokens)})
    hidden = _hidden_states(model, encoded, batch_size, device)
    fresh = np.concatenate(hidden, axis=1)

    total = store.num_layers * store.num_tokens
    if k <= 0:
        return VerifyReport(checked=0, tolerance=tolerance, max_abs_err=0.0)
    if k >= total:
        flat = np.arange(total)
    else:
        rng = np.random.Generator(np.random.PCG64(seed))
        flat = np.sort(rng.choice(total, size=k, replace=False))

    stored = np.asarray(store.data, dtype=np.float32)
    worst = 0.0
    mismatches = []
    for idx in flat:
        layer, token = divmod(int(idx), store.num_tokens)
        err = float(np.max(np.abs(
            stored[layer, token].astype(np.float64)
            - fresh[layer, token].astype(np.float64))))
        if np.isnan(err):
            err = float("inf")  # corrupted bytes can decode to NaN
        worst = max(worst, err)
        if err > tolerance:
            mismatches.append([layer, token, err])
    return VerifyReport(checked=int(flat.size), tolerance=tolerance,
                        max_abs_err=worst, mismatches=mismatches)
