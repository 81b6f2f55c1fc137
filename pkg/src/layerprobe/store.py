"""Reading, writing and slicing token-representation stores.

A store holds one float32 matrix per encoder layer over a shared token
axis, plus sentence boundaries and word-alignment flags.  Layer 0 is the
embedding output, so ``num_layers`` counts every stored matrix: a 12-block
encoder dumps num_layers = 13.  On disk the layout is::

    b"LPRS" | version u32 LE | header_len u64 LE | header JSON | payload

with the payload a single (num_layers, num_tokens, hidden_size) float32
little-endian block in row-major order.  Readers memory-map the payload, so
``layer_view`` is zero-copy.  Analysis code upcasts to float64 at the point
of use; the file itself stays float32.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import (BadMagic, InvariantViolation, TruncatedStore,
                     UnsupportedVersion)
from . import kernels

MAGIC = b"LPRS"
VERSION = 1
_FIXED_HEADER = 16  # magic + u32 version + u64 header length


def rle_encode(bits: np.ndarray) -> list[list[int]]:
    """Run-length encode a boolean vector into [count, bit] pairs."""
    bits = np.asarray(bits, dtype=bool)
    if bits.size == 0:
        return []
    change = np.flatnonzero(np.diff(bits.view(np.int8))) + 1
    starts = np.concatenate(([0], change))
    ends = np.concatenate((change, [bits.size]))
    return [[int(e - s), int(bits[s])] for s, e in zip(starts, ends)]


def rle_decode(pairs: list[list[int]], total: int) -> np.ndarray:
    """Expand [count, bit] pairs to a boolean vector of length ``total``."""
    out = np.empty(total, dtype=bool)
    pos = 0
    for pair in pairs:
        if len(pair) != 2:
            raise InvariantViolation(f"malformed RLE pair {pair!r}")
        count, bit = int(pair[0]), int(pair[1])
        if count < 1 or bit not in (0, 1):
            raise InvariantViolation(f"bad RLE pair {pair!r}")
        if pos + count > total:
            raise InvariantViolation("RLE expands past num_tokens")
        out[pos:pos + count] = bool(bit)
        pos += count
    if pos != total:
        raise InvariantViolation(
            f"RLE covers {pos} tokens, header says {total}")
    return out


@dataclass
class ReprStore:
    """In-memory handle on a layered representation store.

    ``data`` has shape (num_layers, num_tokens, hidden_size) float32; index
    0 is the embedding layer.  ``sentence_offsets`` is end-exclusive and
    must start at 0 and end at num_tokens.
    """

    model_id: str
    num_layers: int
    hidden_size: int
    sentence_offsets: np.ndarray
    word_first: np.ndarray
    data: np.ndarray
    token_texts: list[str] | None = field(default=None)

    @property
    def num_tokens(self) -> int:
        return int(self.data.shape[1])

    @property
    def num_sentences(self) -> int:
        return int(self.sentence_offsets.shape[0]) - 1


def validate(store: ReprStore) -> None:
    """Check internal consistency; raise InvariantViolation otherwise."""
    if store.num_layers < 2:
        raise InvariantViolation("num_layers must be >= 2")
    if store.hidden_size < 1:
        raise InvariantViolation("hidden_size must be >= 1")
    d = store.data
    if d.ndim != 3 or d.shape[0] != store.num_layers:
        raise InvariantViolation(
            f"payload shape {d.shape} does not match num_layers")
    if d.shape[2] != store.hidden_size:
        raise InvariantViolation("payload width does not match hidden_size")
    if d.dtype != np.float32:
        raise InvariantViolation(f"payload dtype {d.dtype}, expected float32")
    off = store.sentence_offsets
    if off.ndim != 1 or off.shape[0] < 2:
        raise InvariantViolation("sentence_offsets needs at least two entries")
    if off[0] != 0:
        raise InvariantViolation("sentence_offsets must start at 0")
    if off[-1] != d.shape[1]:
        raise InvariantViolation(
            f"sentence_offsets end at {off[-1]}, payload has {d.shape[1]} tokens")
    if np.any(np.diff(off) <= 0):
        raise InvariantViolation("sentence_offsets must be strictly increasing")
    if store.word_first.shape != (d.shape[1],):
        raise InvariantViolation("word_first length does not match num_tokens")
    wf = np.asarray(store.word_first, dtype=bool)
    counts = np.add.reduceat(wf.astype(np.int64), off[:-1])
    if np.any(counts < 1):
        raise InvariantViolation(
            "every sentence needs at least one word-initial token")
    if store.token_texts is not None and len(store.token_texts) != d.shape[1]:
        raise InvariantViolation("token_texts length does not match num_tokens")


def write_store(store: ReprStore, path) -> None:
    """Serialize a validated store to ``path``.

    The header JSON is written with sorted keys and no timestamps, so the
    same store always produces byte-identical files.
    """
    validate(store)
    header = {
        "model_id": store.model_id,
        "num_layers": store.num_layers,
        "hidden_size": store.hidden_size,
        "num_tokens": store.num_tokens,
        "sentence_offsets": [int(v) for v in store.sentence_offsets],
        "word_first_token": rle_encode(store.word_first),
        "token_texts": store.token_texts,
    }
    blob = json.dumps(header, sort_keys=True,
                      separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(np.uint32(VERSION).tobytes())
        fh.write(np.uint64(len(blob)).tobytes())
        fh.write(blob)
        payload = np.ascontiguousarray(store.data, dtype="<f4")
        fh.write(payload.tobytes())


def read_store(path, mmap: bool = True) -> ReprStore:
    """Load a store, memory-mapping the payload by default."""
    with open(path, "rb") as fh:
        fixed = fh.read(_FIXED_HEADER)
        if len(fixed) < _FIXED_HEADER:
            raise TruncatedStore(f"{path}: file shorter than fixed header")
        if fixed[:4] != MAGIC:
            raise BadMagic(f"{path}: bad magic {fixed[:4]!r}")
        version = int(np.frombuffer(fixed, dtype="<u4", count=1, offset=4)[0])
        if version != VERSION:
            raise UnsupportedVersion(
                f"{path}: version {version}, reader supports {VERSION}")
        header_len = int(
            np.frombuffer(fixed, dtype="<u8", count=1, offset=8)[0])
        blob = fh.read(header_len)
        if len(blob) < header_len:
            raise TruncatedStore(f"{path}: header cut short")
        try:
            header = json.loads(blob.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise InvariantViolation(f"{path}: header is not JSON: {exc}")
        fh.seek(0, 2)
        file_size = fh.tell()

    try:
        num_layers = int(header["num_layers"])
        hidden = int(header["hidden_size"])
        num_tokens = int(header["num_tokens"])
        offsets = np.asarray(header["sentence_offsets"], dtype=np.int64)
        word_first = rle_decode(header["word_first_token"], num_tokens)
        token_texts = header.get("token_texts")
        model_id = str(header["model_id"])
    except KeyError as exc:
        raise InvariantViolation(f"{path}: header missing field {exc}")

    shape = (num_layers, num_tokens, hidden)
    payload_bytes = 4 * shape[0] * shape[1] * shape[2]
    expected = _FIXED_HEADER + header_len + payload_bytes
    if file_size < expected:
        raise TruncatedStore(
            f"{path}: payload needs {expected} bytes, file has {file_size}")
    if file_size > expected:
        raise InvariantViolation(
            f"{path}: {file_size - expected} trailing bytes after payload")

    if mmap:
        data = np.memmap(path, dtype="<f4", mode="r",
                         offset=_FIXED_HEADER + header_len, shape=shape)
    else:
        with open(path, "rb") as fh:
            fh.seek(_FIXED_HEADER + header_len)
            data = np.fromfile(fh, dtype="<f4",
                               count=shape[0] * shape[1] * shape[2])
        data = data.reshape(shape)
    store = ReprStore(model_id=model_id, num_layers=num_layers,
                      hidden_size=hidden, sentence_offsets=offsets,
                      word_first=word_first, data=data,
                      token_texts=token_texts)
    validate(store)
    return store


def layer_view(store: ReprStore, layer: int) -> np.ndarray:
    """Zero-copy (num_tokens, hidden_size) float32 view of one layer.

    Layer 0 is the embedding layer; valid indices are 0 .. num_layers - 1.
    """
    if not 0 <= layer < store.num_layers:
        raise ValueError(
            f"layer {layer} out of range [0, {store.num_layers})")
    return store.data[layer]


def layer_f64(store: ReprStore, layer: int) -> np.ndarray:
    """Float64 copy of one layer for analysis arithmetic."""
    return np.asarray(layer_view(store, layer), dtype=np.float64)


def sentence_bounds(store: ReprStore, sentence_id: int) -> tuple[int, int]:
    """Absolute [start, end) token range of one sentence."""
    if not 0 <= sentence_id < store.num_sentences:
        raise ValueError(f"sentence {sentence_id} out of range")
    return (int(store.sentence_offsets[sentence_id]),
            int(store.sentence_offsets[sentence_id + 1]))


def mean_pool_sentences(store: ReprStore, layer: int) -> np.ndarray:
    """Per-sentence mean vectors of one layer, float64.

    Sums run over tokens in index order with compensated accumulation, so
    the result matches a sequential Neumaier oracle to the last ulp.
    """
    x = layer_f64(store, layer)
    return kernels.mean_pool(x, store.sentence_offsets)


def sample_word_tokens(store: ReprStore, n: int, seed: int) -> np.ndarray:
    """Sample ``n`` distinct word-initial token indices.

    Raises ValueError when fewer than ``n`` word-initial tokens exist.
    """
    candidates = np.flatnonzero(store.word_first)
    if candidates.size < n:
        raise ValueError(
            f"asked for {n} word-initial tokens, store has {candidates.size}")
    rng = np.random.Generator(np.random.PCG64(seed))
    return rng.choice(candidates, size=n, replace=False)
