"""Store format round-trips, validation errors, views, pooling, sampling."""

import numpy as np
import pytest

from layerprobe.errors import (BadMagic, InvariantViolation, TruncatedStore,
                               UnsupportedVersion)
from layerprobe.store import (layer_view, mean_pool_sentences, read_store,
                              rle_decode, rle_encode, sample_word_tokens,
                              sentence_bounds, write_store)

from conftest import make_store
from test_kernels import neumaier_mean_oracle


def tiny_store(seed=0, layers=2, tokens=7, h=4):
    rng = np.random.Generator(np.random.PCG64(seed))
    data = rng.standard_normal((layers, tokens, h)).astype(np.float32)
    offsets = np.array([0, 3, tokens], dtype=np.int64)
    wf = np.ones(tokens, dtype=bool)
    wf[1] = False
    return make_store(data, offsets, wf, model_id="tiny",
                      token_texts=[f"t{i}" for i in range(tokens)])


# ---------------------------------------------------------------------------
# round trip


def test_write_read_round_trip(tmp_path):
    store = tiny_store()
    path = tmp_path / "s.lprs"
    write_store(store, path)
    back = read_store(path)
    assert back.model_id == store.model_id
    assert back.num_layers == store.num_layers
    assert back.hidden_size == store.hidden_size
    assert back.num_tokens == store.num_tokens
    assert np.array_equal(back.sentence_offsets, store.sentence_offsets)
    assert np.array_equal(back.word_first, store.word_first)
    assert back.token_texts == store.token_texts
    assert np.array_equal(np.asarray(back.data), store.data)


def test_two_writes_are_byte_identical(tmp_path):
    store = tiny_store()
    a, b = tmp_path / "a.lprs", tmp_path / "b.lprs"
    write_store(store, a)
    write_store(store, b)
    assert a.read_bytes() == b.read_bytes()


def test_round_trip_without_token_texts(tmp_path):
    store = tiny_store()
    store.token_texts = None
    path = tmp_path / "s.lprs"
    write_store(store, path)
    assert read_store(path).token_texts is None


def test_read_without_mmap_matches(tmp_path):
    store = tiny_store()
    path = tmp_path / "s.lprs"
    write_store(store, path)
    a = read_store(path, mmap=True)
    b = read_store(path, mmap=False)
    assert np.array_equal(np.asarray(a.data), np.asarray(b.data))


# ---------------------------------------------------------------------------
# format errors


def test_bad_magic(tmp_path):
    path = tmp_path / "s.lprs"
    write_store(tiny_store(), path)
    blob = bytearray(path.read_bytes())
    blob[:4] = b"XXXX"
    path.write_bytes(bytes(blob))
    with pytest.raises(BadMagic):
        read_store(path)


def test_unsupported_version(tmp_path):
    path = tmp_path / "s.lprs"
    write_store(tiny_store(), path)
    blob = bytearray(path.read_bytes())
    blob[4:8] = np.uint32(9).tobytes()
    path.write_bytes(bytes(blob))
    with pytest.raises(UnsupportedVersion):
        read_store(path)


def test_truncated_payload(tmp_path):
    path = tmp_path / "s.lprs"
    write_store(tiny_store(), path)
    blob = path.read_bytes()
    path.write_bytes(blob[:-5])  # drop part of the last row
    with pytest.raises(TruncatedStore):
        read_store(path)


def test_truncated_header(tmp_path):
    path = tmp_path / "s.lprs"
    write_store(tiny_store(), path)
    path.write_bytes(path.read_bytes()[:20])
    with pytest.raises(TruncatedStore):
        read_store(path)


def test_trailing_bytes_rejected(tmp_path):
    path = tmp_path / "s.lprs"
    write_store(tiny_store(), path)
    path.write_bytes(path.read_bytes() + b"junk")
    with pytest.raises(InvariantViolation):
        read_store(path)


def test_header_not_json(tmp_path):
    path = tmp_path / "s.lprs"
    write_store(tiny_store(), path)
    blob = bytearray(path.read_bytes())
    blob[16] = ord("!")
    path.write_bytes(bytes(blob))
    with pytest.raises(InvariantViolation):
        read_store(path)


# ---------------------------------------------------------------------------
# invariant validation


def test_offsets_must_end_at_num_tokens():
    store = tiny_store()
    store.sentence_offsets = np.array([0, 3, 6], dtype=np.int64)
    with pytest.raises(InvariantViolation):
        write_store(store, "/dev/null")


def test_offsets_must_start_at_zero():
    store = tiny_store()
    store.sentence_offsets = np.array([1, 3, 7], dtype=np.int64)
    with pytest.raises(InvariantViolation):
        write_store(store, "/dev/null")


def test_offsets_strictly_increasing():
    store = tiny_store()
    store.sentence_offsets = np.array([0, 3, 3, 7], dtype=np.int64)
    with pytest.raises(InvariantViolation):
        write_store(store, "/dev/null")


def test_single_layer_store_rejected():
    rng = np.random.Generator(np.random.PCG64(0))
    data = rng.standard_normal((1, 4, 3)).astype(np.float32)
    store = make_store(data, [0, 4])
    with pytest.raises(InvariantViolation):
        write_store(store, "/dev/null")


def test_sentence_without_word_initial_token_rejected():
    store = tiny_store()
    wf = store.word_first.copy()
    wf[:3] = False  # first sentence loses all word-initial flags
    store.word_first = wf
    with pytest.raises(InvariantViolation):
        write_store(store, "/dev/null")


# ---------------------------------------------------------------------------
# views


def test_layer_view_values_and_range(tmp_path):
    store = tiny_store()
    store.data[0] = 1.0
    path = tmp_path / "s.lprs"
    write_store(store, path)
    back = read_store(path)
    assert np.all(layer_view(back, 0) == 1.0)
    assert np.array_equal(layer_view(back, 1), store.data[1])
    with pytest.raises(ValueError):
        layer_view(back, 2)
    with pytest.raises(ValueError):
        layer_view(back, -1)


def test_layer_view_is_zero_copy(tmp_path):
    path = tmp_path / "s.lprs"
    write_store(tiny_store(), path)
    back = read_store(path)
    view = layer_view(back, 1)
    assert view.base is not None  # a view into the mapped payload


def test_sentence_bounds():
    store = tiny_store()
    assert sentence_bounds(store, 0) == (0, 3)
    assert sentence_bounds(store, 1) == (3, 7)
    with pytest.raises(ValueError):
        sentence_bounds(store, 2)


# ---------------------------------------------------------------------------
# pooling


def test_mean_pool_one_token_sentence():
    data = np.zeros((2, 3, 2), dtype=np.float32)
    data[0, 0] = [2.0, -4.0]
    store = make_store(data, [0, 1, 3])
    pooled = mean_pool_sentences(store, 0)
    assert np.array_equal(pooled[0], [2.0, -4.0])


def test_mean_pool_two_unit_vectors():
    data = np.zeros((2, 2, 2), dtype=np.float32)
    data[0] = [[1.0, 0.0], [0.0, 1.0]]
    store = make_store(data, [0, 2])
    pooled = mean_pool_sentences(store, 0)
    assert np.array_equal(pooled[0], [0.5, 0.5])


def test_mean_pool_matches_scalar_oracle():
    rng = np.random.Generator(np.random.PCG64(21))
    offsets = np.array([0, 5, 6, 20], dtype=np.int64)
    data = rng.standard_normal((3, 20, 6)).astype(np.float32)
    store = make_store(data, offsets)
    for layer in range(3):
        got = mean_pool_sentences(store, layer)
        want = neumaier_mean_oracle(
            np.asarray(data[layer], dtype=np.float64), offsets)
        assert np.array_equal(got, want)


def test_mean_pool_permutation_equivariant():
    rng = np.random.Generator(np.random.PCG64(22))
    chunks = [rng.standard_normal((n, 4)).astype(np.float32)
              for n in (3, 1, 5)]
    perm = [2, 0, 1]

    def build(order):
        rows = np.concatenate([chunks[i] for i in order])
        offs = np.concatenate(
            ([0], np.cumsum([chunks[i].shape[0] for i in order])))
        data = np.stack([rows, rows])
        return make_store(data, offs)

    base = mean_pool_sentences(build([0, 1, 2]), 0)
    permuted = mean_pool_sentences(build(perm), 0)
    assert np.array_equal(permuted, base[perm])


# ---------------------------------------------------------------------------
# sampling


def test_sample_full_eligible_set():
    store = tiny_store()
    eligible = np.flatnonzero(store.word_first)
    got = sample_word_tokens(store, eligible.size, seed=0)
    assert sorted(got.tolist()) == eligible.tolist()


def test_sample_deterministic_in_seed():
    store = tiny_store()
    a = sample_word_tokens(store, 3, seed=9)
    b = sample_word_tokens(store, 3, seed=9)
    c = sample_word_tokens(store, 3, seed=10)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_sample_never_returns_continuation_tokens():
    rng = np.random.Generator(np.random.PCG64(14))
    tokens = 60
    wf = rng.random(tokens) < 0.5
    wf[0] = True
    wf[30] = True
    data = rng.standard_normal((2, tokens, 3)).astype(np.float32)
    store = make_store(data, [0, 30, tokens], wf)
    for seed in range(20):
        idx = sample_word_tokens(store, 10, seed=seed)
        assert np.all(store.word_first[idx])
        assert len(set(idx.tolist())) == 10


def test_sample_insufficient_tokens():
    store = tiny_store()
    with pytest.raises(ValueError):
        sample_word_tokens(store, store.num_tokens + 1, seed=0)


def test_sample_frequency_uniform_within_three_sigma():
    # 100 fixed seeds; per-sentence draw counts stay within 3 sigma of the
    # binomial expectation, sentence eligibility being deliberately uneven
    rng = np.random.Generator(np.random.PCG64(15))
    num_sentences = 40
    lengths = rng.integers(5, 20, size=num_sentences)
    offsets = np.concatenate(([0], np.cumsum(lengths))).astype(np.int64)
    tokens = int(offsets[-1])
    wf = rng.random(tokens) < 0.7
    for s in range(num_sentences):
        wf[offsets[s]] = True
    data = np.zeros((2, tokens, 2), dtype=np.float32)
    store = make_store(data, offsets, wf)

    eligible = int(wf.sum())
    n, seeds = eligible // 2, 100
    counts = np.zeros(num_sentences)
    for seed in range(seeds):
        idx = sample_word_tokens(store, n, seed=seed)
        hits = np.searchsorted(offsets, idx, side="right") - 1
        counts += np.bincount(hits, minlength=num_sentences)
    p = n / eligible
    for s in range(num_sentences):
        e_s = int(wf[offsets[s]:offsets[s + 1]].sum())
        mean = seeds * e_s * p
        sigma = np.sqrt(seeds * e_s * p * (1.0 - p))
        assert abs(counts[s] - mean) <= 3.0 * sigma


# ---------------------------------------------------------------------------
# run-length encoding


def test_rle_round_trip_property():
    rng = np.random.Generator(np.random.PCG64(16))
    cases = [np.zeros(5, dtype=bool), np.ones(5, dtype=bool),
             np.array([], dtype=bool)]
    cases += [rng.random(int(rng.integers(1, 200))) < rng.random()
              for _ in range(20)]
    for bits in cases:
        pairs = rle_encode(bits)
        assert np.array_equal(rle_decode(pairs, bits.size), bits)
        # runs alternate, so the encoding is minimal
        for (_, a), (_, b) in zip(pairs, pairs[1:]):
            assert a != b


def test_rle_decode_rejects_bad_pairs():
    with pytest.raises(InvariantViolation):
        rle_decode([[0, 1]], 0)
    with pytest.raises(InvariantViolation):
        rle_decode([[3, 2]], 3)
    with pytest.raises(InvariantViolation):
        rle_decode([[2, 1]], 3)
    with pytest.raises(InvariantViolation):
        rle_decode([[4, 1]], 3)
    with pytest.raises(InvariantViolation):
        rle_decode([[1, 1, 1]], 1)
