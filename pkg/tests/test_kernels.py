"""Kernel-level checks: both execution paths, oracles, dispatch flag."""

import os
import subprocess
import sys

import numpy as np
import pytest

from layerprobe import kernels

RTOL = 1e-10


def random_probe_case(seed, b=6, t=40, h=5, d=4, m=7, k=3, spans=2,
                      max_span=4):
    rng = np.random.Generator(np.random.PCG64(seed))
    x = rng.standard_normal((t, h))
    starts = np.empty((b, spans), dtype=np.int64)
    ends = np.empty((b, spans), dtype=np.int64)
    for i in range(b):
        for j in range(spans):
            s = int(rng.integers(0, t - max_span))
            starts[i, j] = s
            ends[i, j] = s + int(rng.integers(1, max_span + 1))
    labels = rng.integers(0, k, size=b).astype(np.int64)
    params = [
        0.5 * rng.standard_normal((spans, h, d)),   # proj_w
        0.5 * rng.standard_normal((spans, d)),      # proj_b
        0.5 * rng.standard_normal((spans, d)),      # attn_v
        0.5 * rng.standard_normal((spans * d, m)),  # w1
        0.5 * rng.standard_normal(m),               # b1
        0.5 * rng.standard_normal((m, k)),          # w2
        0.5 * rng.standard_normal(k),               # b2
    ]
    return x, starts, ends, labels, params


def rel_close(a, b, rtol=RTOL):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    scale = np.maximum(np.maximum(np.abs(a), np.abs(b)), 1.0)
    return np.all(np.abs(a - b) <= rtol * scale)


# ---------------------------------------------------------------------------
# mean pool


def neumaier_mean_oracle(x, offsets):
    """Sequential scalar Neumaier sums, written independently of kernels."""
    out = np.empty((len(offsets) - 1, x.shape[1]))
    for s in range(len(offsets) - 1):
        lo, hi = int(offsets[s]), int(offsets[s + 1])
        for j in range(x.shape[1]):
            acc = 0.0
            comp = 0.0
            for i in range(lo, hi):
                v = float(x[i, j])
                t = acc + v
                if abs(acc) >= abs(v):
                    comp += (acc - t) + v
                else:
                    comp += (v - t) + acc
                acc = t
            out[s, j] = (acc + comp) / (hi - lo)
    return out


def test_mean_pool_within_one_ulp_of_compensated_oracle():
    rng = np.random.Generator(np.random.PCG64(5))
    lengths = rng.integers(1, 65, size=12)
    offsets = np.concatenate(([0], np.cumsum(lengths))).astype(np.int64)
    x = rng.standard_normal((int(offsets[-1]), 8)) * 100.0
    want = neumaier_mean_oracle(x, offsets)
    for got in (kernels.mean_pool_np(x, offsets),
                kernels.mean_pool_nb(x, offsets)):
        diff = np.abs(got - want)
        ulp = np.spacing(np.maximum(np.abs(got), np.abs(want)))
        assert np.all(diff <= ulp)


def test_mean_pool_paths_bitwise_equal():
    rng = np.random.Generator(np.random.PCG64(6))
    offsets = np.array([0, 3, 4, 9, 64], dtype=np.int64)
    x = rng.standard_normal((64, 5))
    a = kernels.mean_pool_np(x, offsets)
    b = kernels.mean_pool_nb(x, offsets)
    assert np.array_equal(a, b)


def test_mean_pool_single_token_sentence_is_identity():
    x = np.array([[1.5, -2.0, 3.0]])
    out = kernels.mean_pool_np(x, np.array([0, 1], dtype=np.int64))
    assert np.array_equal(out[0], x[0])


# ---------------------------------------------------------------------------
# condensed cosine


def test_condensed_cosine_hand_values():
    rows = np.array([[1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
    rows = rows / np.linalg.norm(rows, axis=1, keepdims=True)
    got = kernels.condensed_cosine_np(rows)
    want = np.array([1.0 / np.sqrt(2.0), 0.0, 1.0 / np.sqrt(2.0)])
    assert np.allclose(got, want, atol=1e-15)


def test_condensed_cosine_pair_order_is_row_major_upper_triangle():
    # entry order must be (0,1), (0,2), (0,3), (1,2), (1,3), (2,3)
    rng = np.random.Generator(np.random.PCG64(7))
    x = rng.standard_normal((4, 6))
    xn = x / np.linalg.norm(x, axis=1, keepdims=True)
    got = kernels.condensed_cosine_np(xn)
    k = 0
    for i in range(4):
        for j in range(i + 1, 4):
            assert got[k] == pytest.approx(float(xn[i] @ xn[j]), abs=1e-14)
            k += 1


def test_condensed_cosine_paths_agree():
    rng = np.random.Generator(np.random.PCG64(8))
    x = rng.standard_normal((30, 9))
    xn = x / np.linalg.norm(x, axis=1, keepdims=True)
    assert rel_close(kernels.condensed_cosine_np(xn),
                     kernels.condensed_cosine_nb(xn))


# ---------------------------------------------------------------------------
# probe forward / gradients


@pytest.mark.parametrize("seed", range(4))
def test_probe_forward_paths_agree(seed):
    x, starts, ends, labels, params = random_probe_case(seed)
    a = kernels.probe_forward_np(x, starts, ends, *params)
    b = kernels.probe_forward_nb(x, starts, ends, *params)
    assert a.shape == (6, 3)
    assert rel_close(a, b)


@pytest.mark.parametrize("seed", range(4))
def test_probe_loss_grad_paths_agree(seed):
    x, starts, ends, labels, params = random_probe_case(seed + 100)
    out_np = kernels.probe_loss_grad_np(x, starts, ends, labels, *params,
                                        True)
    out_nb = kernels.probe_loss_grad_nb(x, starts, ends, labels, *params,
                                        True)
    assert rel_close(out_np[0], out_nb[0])
    for a, b in zip(out_np[1:], out_nb[1:]):
        assert rel_close(a, b)


def test_probe_loss_grad_bits_match_forward_loss():
    x, starts, ends, labels, params = random_probe_case(42)
    logits = kernels.probe_forward_np(x, starts, ends, *params)
    bits = float(kernels.logits_to_bits(logits, labels).sum())
    out = kernels.probe_loss_grad_np(x, starts, ends, labels, *params, False)
    assert out[0] == pytest.approx(bits, rel=1e-12)


def test_probe_kernels_deterministic_within_path():
    x, starts, ends, labels, params = random_probe_case(3)
    runs = [kernels.probe_loss_grad_nb(x, starts, ends, labels, *params,
                                       True) for _ in range(2)]
    assert runs[0][0] == runs[1][0]
    for a, b in zip(runs[0][1:], runs[1][1:]):
        assert np.array_equal(a, b)


# ---------------------------------------------------------------------------
# bits


def test_logits_to_bits_uniform_two_classes_is_one_bit():
    logits = np.zeros((1, 2))
    bits = kernels.logits_to_bits(logits, np.array([0]))
    assert bits[0] == pytest.approx(1.0, abs=1e-12)


def test_logits_to_bits_quarter_probability_is_two_bits():
    # softmax([0, log 3]) = (0.25, 0.75)
    logits = np.array([[0.0, np.log(3.0)]])
    bits = kernels.logits_to_bits(logits, np.array([0]))
    assert bits[0] == pytest.approx(2.0, abs=1e-12)


def test_logits_to_bits_saturated_true_class_is_zero():
    logits = np.array([[500.0, 0.0, 0.0]])
    bits = kernels.logits_to_bits(logits, np.array([0]))
    assert bits[0] == pytest.approx(0.0, abs=1e-12)


# ---------------------------------------------------------------------------
# dispatch flag


def _flag_state(env_value):
    env = dict(os.environ)
    if env_value is None:
        env.pop("LAYERPROBE_NUMBA", None)
    else:
        env["LAYERPROBE_NUMBA"] = env_value
    out = subprocess.run(
        [sys.executable, "-c",
         "from layerprobe import kernels; print(kernels.NUMBA_ACTIVE)"],
        capture_output=True, text=True, env=env, check=True)
    return out.stdout.strip()


def test_numba_disabled_by_env_flag():
    assert _flag_state("0") == "False"


@pytest.mark.skipif(not kernels.HAVE_NUMBA, reason="numba not installed")
def test_numba_active_by_default():
    assert _flag_state(None) == "True"
