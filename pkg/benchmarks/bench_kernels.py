"""Times the numpy kernels against their numba-compiled twins.

Run from the repository root:

    python3 benchmarks/bench_kernels.py [--repeat N]

JIT compilation happens during warmup, so the numbers compare steady-state
throughput.  Each pair is also checked for numerical agreement.
"""

import argparse
import time

import numpy as np

from layerprobe import kernels
from layerprobe.probe import ProbeConfig, init_params


def bench(fn, args, warmup=1, repeat=5):
    for _ in range(warmup):
        out = fn(*args)
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best, out


def pool_inputs(rng):
    lengths = rng.integers(4, 24, size=10_000)
    offsets = np.zeros(lengths.size + 1, dtype=np.int64)
    np.cumsum(lengths, out=offsets[1:])
    x = rng.standard_normal((int(offsets[-1]), 256))
    return x, offsets


def cosine_inputs(rng):
    x = rng.standard_normal((1200, 256))
    return (x / np.linalg.norm(x, axis=1, keepdims=True),)


def probe_inputs(rng):
    cfg = ProbeConfig(input_dim=256, num_classes=8, proj_dim=128,
                      mlp_hidden=128, seed=0)
    params = init_params(cfg)
    t = 50_000
    x = rng.standard_normal((t, 256))
    starts = rng.integers(0, t - 3, size=(4096, 1))
    ends = starts + rng.integers(1, 4, size=(4096, 1))
    labels = rng.integers(0, 8, size=4096)
    return x, starts, ends, labels, params


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeat", type=int, default=5,
                        help="timed repetitions per kernel (best is kept)")
    opts = parser.parse_args()

    if not kernels.HAVE_NUMBA:
        raise SystemExit("numba is not importable; nothing to compare")

    rng = np.random.Generator(np.random.PCG64(0))
    x, offsets = pool_inputs(rng)
    (xn,) = cosine_inputs(rng)
    px, starts, ends, labels, params = probe_inputs(rng)
    fwd_args = (px, starts, ends, *params.tensors())
    grad_args = (px, starts, ends, labels, *params.tensors(), False)

    cases = [
        ("mean_pool", kernels.mean_pool_np, kernels.mean_pool_nb,
         (x, offsets)),
        ("condensed_cosine", kernels.condensed_cosine_np,
         kernels.condensed_cosine_nb, (xn,)),
        ("probe_forward", kernels.probe_forward_np,
         kernels.probe_forward_nb, fwd_args),
        ("probe_loss_grad", kernels.probe_loss_grad_np,
         kernels.probe_loss_grad_nb, grad_args),
    ]

    print(f"{'kernel':<18} {'numpy':>10} {'numba':>10} {'speedup':>8}")
    for name, fn_np, fn_nb, args in cases:
        t_np, out_np = bench(fn_np, args, repeat=opts.repeat)
        t_nb, out_nb = bench(fn_nb, args, repeat=opts.repeat)
        if not isinstance(out_np, tuple):
            out_np, out_nb = (out_np,), (out_nb,)
        for a, b in zip(out_np, out_nb):
            assert np.allclose(a, b, rtol=1e-8, atol=1e-10), name
        print(f"{name:<18} {t_np:>9.4f}s {t_nb:>9.4f}s "
              f"{t_np / t_nb:>7.1f}x")


if __name__ == "__main__":
    main()
