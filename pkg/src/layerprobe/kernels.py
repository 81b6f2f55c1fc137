"""Numeric kernels in two interchangeable implementations.

Each hot kernel exists as a vectorized numpy function (``*_np``) and an
explicit-loop variant compiled with numba (``*_nb``) when numba is
importable.  Module-level dispatch functions pick the compiled variant
unless the environment variable ``LAYERPROBE_NUMBA`` is ``0`` or numba is
missing, so call sites never care which backend runs.  Both variants stay
importable side by side for equivalence tests and benchmarks.

Conventions: float64 in, float64 out; losses are measured in bits; span
bounds are absolute token-row ranges, end exclusive.
"""

from __future__ import annotations

import os

import numpy as np

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised via subprocess test
    HAVE_NUMBA = False

#: True when dispatchers route to the compiled kernels.
NUMBA_ACTIVE = HAVE_NUMBA and os.environ.get("LAYERPROBE_NUMBA", "1") != "0"

LN2 = float(np.log(2.0))


# ---------------------------------------------------------------------------
# mean pooling


def mean_pool_np(x: np.ndarray, offsets: np.ndarray) -> np.ndarray:
    """Per-sentence token means using Neumaier-compensated summation.

    Args:
        x: (T, H) float64 token rows.
        offsets: (S + 1,) int64 sentence boundaries, strictly increasing.

    Returns:
        (S, H) float64 matrix of per-sentence means.
    """
    n_sent = offsets.shape[0] - 1
    h = x.shape[1]
    out = np.empty((n_sent, h), dtype=np.float64)
    for s in range(n_sent):
        lo = int(offsets[s])
        hi = int(offsets[s + 1])
        acc = np.zeros(h, dtype=np.float64)
        comp = np.zeros(h, dtype=np.float64)
        for i in range(lo, hi):
            row = x[i]
            t = acc + row
            big = np.abs(acc) >= np.abs(row)
            comp += np.where(big, (acc - t) + row, (row - t) + acc)
            acc = t
        out[s] = (acc + comp) / (hi - lo)
    return out


def _mean_pool_loops(x, offsets):
    n_sent = offsets.shape[0] - 1
    h = x.shape[1]
    out = np.empty((n_sent, h), dtype=np.float64)
    for s in range(n_sent):
        lo = offsets[s]
        hi = offsets[s + 1]
        for j in range(h):
            acc = 0.0
            comp = 0.0
            for i in range(lo, hi):
                v = x[i, j]
                t = acc + v
                # Neumaier update, same op order as the numpy variant
                if abs(acc) >= abs(v):
                    comp += (acc - t) + v
                else:
                    comp += (v - t) + acc
                acc = t
            out[s, j] = (acc + comp) / (hi - lo)
    return out


# ---------------------------------------------------------------------------
# condensed cosine similarities


def condensed_cosine_np(xn: np.ndarray) -> np.ndarray:
    """Upper-triangle (row-major) cosine similarities of pre-normalized rows.

    Args:
        xn: (S, H) float64 rows already scaled to unit L2 norm.

    Returns:
        (S * (S - 1) / 2,) float64 condensed similarity vector.
    """
    s = xn.shape[0]
    iu, ju = np.triu_indices(s, k=1)
    gram = xn @ xn.T
    return np.ascontiguousarray(gram[iu, ju])


def _condensed_cosine_loops(xn):
    s, h = xn.shape
    out = np.empty(s * (s - 1) // 2, dtype=np.float64)
    k = 0
    for i in range(s):
        for j in range(i + 1, s):
            acc = 0.0
            for d in range(h):
                acc += xn[i, d] * xn[j, d]
            out[k] = acc
            k += 1
    return out


# ---------------------------------------------------------------------------
# span probe forward / backward
#
# Parameter layout (n_spans = number of span slots, d = projection width,
# m = MLP hidden width, k = classes):
#   proj_w (n_spans, H, d), proj_b (n_spans, d), attn_v (n_spans, d)
#   w1 (n_spans * d, m), b1 (m,), w2 (m, k), b2 (k,)


def probe_forward_np(x, starts, ends, proj_w, proj_b, attn_v, w1, b1, w2, b2):
    """Logits for a batch of span tuples.

    ``starts``/``ends`` are (B, n_spans) int64 absolute row ranges into
    ``x``.  Returns (B, k) float64 logits.
    """
    b_n, n_spans = starts.shape
    d = proj_w.shape[2]
    u = np.empty((b_n, n_spans * d), dtype=np.float64)
    for b in range(b_n):
        for s in range(n_spans):
            rows = x[starts[b, s]:ends[b, s]]
            a = rows @ proj_w[s] + proj_b[s]
            scores = a @ attn_v[s]
            scores = scores - scores.max()
            e = np.exp(scores)
            alpha = e / e.sum()
            u[b, s * d:(s + 1) * d] = alpha @ a
    hact = np.maximum(u @ w1 + b1, 0.0)
    return hact @ w2 + b2


def _probe_forward_loops(x, starts, ends, proj_w, proj_b, attn_v, w1, b1, w2, b2):
    b_n, n_spans = starts.shape
    d = proj_w.shape[2]
    k_cls = w2.shape[1]
    logits = np.empty((b_n, k_cls), dtype=np.float64)
    for b in range(b_n):
        u = np.empty(n_spans * d, dtype=np.float64)
        for s in range(n_spans):
            lo = starts[b, s]
            hi = ends[b, s]
            rows = np.ascontiguousarray(x[lo:hi])
            a = np.dot(rows, proj_w[s])
            for i in range(hi - lo):
                for jd in range(d):
                    a[i, jd] += proj_b[s, jd]
            scores = np.dot(a, attn_v[s])
            smax = scores[0]
            for i in range(1, scores.shape[0]):
                if scores[i] > smax:
                    smax = scores[i]
            esum = 0.0
            for i in range(scores.shape[0]):
                scores[i] = np.exp(scores[i] - smax)
                esum += scores[i]
            alpha = scores / esum
            pooled = np.dot(alpha, a)
            for jd in range(d):
                u[s * d + jd] = pooled[jd]
        hpre = np.dot(u, w1)
        for j in range(hpre.shape[0]):
            hpre[j] += b1[j]
            if hpre[j] < 0.0:
                hpre[j] = 0.0
        z = np.dot(hpre, w2)
        for j in range(k_cls):
            logits[b, j] = z[j] + b2[j]
    return logits


def probe_loss_grad_np(x, starts, ends, labels, proj_w, proj_b, attn_v,
                       w1, b1, w2, b2, need_dx):
    """Total cross-entropy in bits plus gradients of that total.

    Returns ``(bits, d_proj_w, d_proj_b, d_attn_v, d_w1, d_b1, d_w2, d_b2,
    d_x)`` where ``d_x`` is (T, H) when ``need_dx`` else an empty (0, H)
    array.  Gradients are of the summed (not averaged) bit loss.
    """
    b_n, n_spans = starts.shape
    d = proj_w.shape[2]
    g_proj_w = np.zeros_like(proj_w)
    g_proj_b = np.zeros_like(proj_b)
    g_attn_v = np.zeros_like(attn_v)
    g_w1 = np.zeros_like(w1)
    g_b1 = np.zeros_like(b1)
    g_w2 = np.zeros_like(w2)
    g_b2 = np.zeros_like(b2)
    d_x = np.zeros_like(x) if need_dx else np.zeros((0, x.shape[1]))
    bits = 0.0
    for b in range(b_n):
        a_list = []
        alpha_list = []
        u = np.empty(n_spans * d, dtype=np.float64)
        for s in range(n_spans):
            rows = x[starts[b, s]:ends[b, s]]
            a = rows @ proj_w[s] + proj_b[s]
            scores = a @ attn_v[s]
            scores = scores - scores.max()
            e = np.exp(scores)
            alpha = e / e.sum()
            a_list.append(a)
            alpha_list.append(alpha)
            u[s * d:(s + 1) * d] = alpha @ a
        hpre = u @ w1 + b1
        hact = np.maximum(hpre, 0.0)
        z = hact @ w2 + b2
        zmax = z.max()
        ez = np.exp(z - zmax)
        ezsum = ez.sum()
        lse = zmax + np.log(ezsum)
        y = labels[b]
        bits += (lse - z[y]) / LN2
        dz = (ez / ezsum)
        dz[y] -= 1.0
        dz /= LN2
        g_w2 += np.outer(hact, dz)
        g_b2 += dz
        dupre = (w2 @ dz) * (hpre > 0.0)
        g_w1 += np.outer(u, dupre)
        g_b1 += dupre
        du = w1 @ dupre
        for s in range(n_spans):
            a = a_list[s]
            alpha = alpha_list[s]
            dpooled = du[s * d:(s + 1) * d]
            dalpha = a @ dpooled
            dscores = alpha * (dalpha - float(alpha @ dalpha))
            da = np.outer(alpha, dpooled) + np.outer(dscores, attn_v[s])
            g_attn_v[s] += dscores @ a
            rows = x[starts[b, s]:ends[b, s]]
            g_proj_w[s] += rows.T @ da
            g_proj_b[s] += da.sum(axis=0)
            if need_dx:
                d_x[starts[b, s]:ends[b, s]] += da @ proj_w[s].T
    return bits, g_proj_w, g_proj_b, g_attn_v, g_w1, g_b1, g_w2, g_b2, d_x


def _probe_loss_grad_loops(x, starts, ends, labels, proj_w, proj_b, attn_v,
                           w1, b1, w2, b2, need_dx):
    b_n, n_spans = starts.shape
    h = x.shape[1]
    d = proj_w.shape[2]
    m = w1.shape[1]
    k_cls = w2.shape[1]
    g_proj_w = np.zeros_like(proj_w)
    g_proj_b = np.zeros_like(proj_b)
    g_attn_v = np.zeros_like(attn_v)
    g_w1 = np.zeros_like(w1)
    g_b1 = np.zeros_like(b1)
    g_w2 = np.zeros_like(w2)
    g_b2 = np.zeros_like(b2)
    if need_dx:
        d_x = np.zeros_like(x)
    else:
        d_x = np.zeros((0, h), dtype=np.float64)
    # transposed projection copies so every np.dot sees contiguous inputs
    proj_w_t = np.empty((n_spans, d, h), dtype=np.float64)
    for s in range(n_spans):
        for jd in range(d):
            for jh in range(h):
                proj_w_t[s, jd, jh] = proj_w[s, jh, jd]
    bits = 0.0
    for b in range(b_n):
        u = np.empty(n_spans * d, dtype=np.float64)
        for s in range(n_spans):
            lo = starts[b, s]
            hi = ends[b, s]
            rows = np.ascontiguousarray(x[lo:hi])
            a = np.dot(rows, proj_w[s])
            for i in range(hi - lo):
                for jd in range(d):
                    a[i, jd] += proj_b[s, jd]
            scores = np.dot(a, attn_v[s])
            smax = scores[0]
            for i in range(1, scores.shape[0]):
                if scores[i] > smax:
                    smax = scores[i]
            esum = 0.0
            for i in range(scores.shape[0]):
                scores[i] = np.exp(scores[i] - smax)
                esum += scores[i]
            alpha = scores / esum
            pooled = np.dot(alpha, a)
            for jd in range(d):
                u[s * d + jd] = pooled[jd]
        hpre = np.dot(u, w1)
        hact = np.empty(m, dtype=np.float64)
        for j in range(m):
            hpre[j] += b1[j]
            hact[j] = hpre[j] if hpre[j] > 0.0 else 0.0
        z = np.dot(hact, w2)
        zmax = z[0] + b2[0]
        for j in range(k_cls):
            z[j] += b2[j]
            if z[j] > zmax:
                zmax = z[j]
        ezsum = 0.0
        ez = np.empty(k_cls, dtype=np.float64)
        for j in range(k_cls):
            ez[j] = np.exp(z[j] - zmax)
            ezsum += ez[j]
        y = labels[b]
        bits += (zmax + np.log(ezsum) - z[y]) / LN2
        dz = np.empty(k_cls, dtype=np.float64)
        for j in range(k_cls):
            dz[j] = ez[j] / ezsum
        dz[y] -= 1.0
        for j in range(k_cls):
            dz[j] /= LN2
        for i in range(m):
            for j in range(k_cls):
                g_w2[i, j] += hact[i] * dz[j]
        for j in range(k_cls):
            g_b2[j] += dz[j]
        dupre = np.dot(w2, dz)
        for j in range(m):
            if hpre[j] <= 0.0:
                dupre[j] = 0.0
        for i in range(n_spans * d):
            for j in range(m):
                g_w1[i, j] += u[i] * dupre[j]
        for j in range(m):
            g_b1[j] += dupre[j]
        du = np.dot(w1, dupre)
        for s in range(n_spans):
            lo = starts[b, s]
            hi = ends[b, s]
            mlen = hi - lo
            rows = np.ascontiguousarray(x[lo:hi])
            a = np.dot(rows, proj_w[s])
            for i in range(mlen):
                for jd in range(d):
                    a[i, jd] += proj_b[s, jd]
            scores = np.dot(a, attn_v[s])
            smax = scores[0]
            for i in range(1, mlen):
                if scores[i] > smax:
                    smax = scores[i]
            esum = 0.0
            for i in range(mlen):
                scores[i] = np.exp(scores[i] - smax)
                esum += scores[i]
            alpha = scores / esum
            dpooled = du[s * d:(s + 1) * d].copy()
            dalpha = np.dot(a, dpooled)
            adot = 0.0
            for i in range(mlen):
                adot += alpha[i] * dalpha[i]
            dscores = np.empty(mlen, dtype=np.float64)
            for i in range(mlen):
                dscores[i] = alpha[i] * (dalpha[i] - adot)
            da = np.empty((mlen, d), dtype=np.float64)
            for i in range(mlen):
                for jd in range(d):
                    da[i, jd] = alpha[i] * dpooled[jd] + dscores[i] * attn_v[s, jd]
            gav = np.dot(dscores, a)
            for jd in range(d):
                g_attn_v[s, jd] += gav[jd]
            for i in range(mlen):
                for jh in range(h):
                    v = rows[i, jh]
                    for jd in range(d):
                        g_proj_w[s, jh, jd] += v * da[i, jd]
            for i in range(mlen):
                for jd in range(d):
                    g_proj_b[s, jd] += da[i, jd]
            if need_dx:
                dx_rows = np.dot(da, proj_w_t[s])
                for i in range(mlen):
                    for jh in range(h):
                        d_x[lo + i, jh] += dx_rows[i, jh]
    return bits, g_proj_w, g_proj_b, g_attn_v, g_w1, g_b1, g_w2, g_b2, d_x


# ---------------------------------------------------------------------------
# compilation and dispatch

if HAVE_NUMBA:
    mean_pool_nb = numba.njit(cache=True)(_mean_pool_loops)
    condensed_cosine_nb = numba.njit(cache=True)(_condensed_cosine_loops)
    probe_forward_nb = numba.njit(cache=True)(_probe_forward_loops)
    probe_loss_grad_nb = numba.njit(cache=True)(_probe_loss_grad_loops)
else:  # pragma: no cover
    mean_pool_nb = None
    condensed_cosine_nb = None
    probe_forward_nb = None
    probe_loss_grad_nb = None


def mean_pool(x, offsets):
    """Dispatching wrapper around the active mean-pool kernel."""
    if NUMBA_ACTIVE:
        return mean_pool_nb(x, offsets)
    return mean_pool_np(x, offsets)


def condensed_cosine(xn):
    """Dispatching wrapper around the active condensed-cosine kernel."""
    if NUMBA_ACTIVE:
        return condensed_cosine_nb(xn)
    return condensed_cosine_np(xn)


def probe_forward(x, starts, ends, proj_w, proj_b, attn_v, w1, b1, w2, b2):
    """Dispatching wrapper around the active probe forward kernel."""
    if NUMBA_ACTIVE:
        return probe_forward_nb(x, starts, ends, proj_w, proj_b, attn_v,
                                w1, b1, w2, b2)
    return probe_forward_np(x, starts, ends, proj_w, proj_b, attn_v,
                            w1, b1, w2, b2)


def probe_loss_grad(x, starts, ends, labels, proj_w, proj_b, attn_v,
                    w1, b1, w2, b2, need_dx=False):
    """Dispatching wrapper around the active probe loss/grad kernel."""
    if NUMBA_ACTIVE:
        return probe_loss_grad_nb(x, starts, ends, labels, proj_w, proj_b,
                                  attn_v, w1, b1, w2, b2, need_dx)
    return probe_loss_grad_np(x, starts, ends, labels, proj_w, proj_b,
                              attn_v, w1, b1, w2, b2, need_dx)


def logits_to_bits(logits: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Per-item cross-entropy in bits from raw logits."""
    zmax = logits.max(axis=1, keepdims=True)
    lse = zmax[:, 0] + np.log(np.exp(logits - zmax).sum(axis=1))
    picked = logits[np.arange(logits.shape[0]), labels]
    return (lse - picked) / LN2
