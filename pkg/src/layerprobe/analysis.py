"""Derived analytics over stores and probing results.

Covers per-layer norm statistics, the compression center of gravity and
its fine-tuning delta, global representational similarity analysis with a
sentence-level bootstrap, and per-layer downstream evaluation with a
linear head.  All arithmetic is float64; similarity structures use two-pass
Pearson on condensed cosine matrices.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .edge import normalize_rows
from .errors import DegenerateRdm
from .probe import AdamState
from .store import ReprStore, sample_word_tokens


@dataclass
class NormStats:
    """Per-layer mean L2 norms averaged over runs, with across-run spread."""

    means: np.ndarray
    stds: np.ndarray
    n: int
    runs: int
    seed: int

    @property
    def run_seeds(self) -> list[int]:
        return [self.seed + r for r in range(self.runs)]


def layer_norms(store: ReprStore, n: int = 500, runs: int = 3,
                seed: int = 0) -> NormStats:
    """Mean L2 norm per layer over sampled word-initial tokens.

    Each run samples its own n tokens with seed + run_index; reported means
    average the runs and stds are the population spread across runs.
    """
    if runs < 1:
        raise ValueError("need at least one run")
    per_run = np.empty((runs, store.num_layers))
    for r in range(runs):
        idx = sample_word_tokens(store, n, seed + r)
        for layer in range(store.num_layers):
            rows = np.asarray(store.data[layer][idx], dtype=np.float64)
            per_run[r, layer] = float(np.linalg.norm(rows, axis=1).mean())
    return NormStats(means=per_run.mean(axis=0), stds=per_run.std(axis=0),
                     n=n, runs=runs, seed=seed)


@dataclass
class CogResult:
    """Per-layer scores plus their center of gravity."""

    scores: np.ndarray
    cog: float
    model: str = ""
    task: str = ""


def center_of_gravity(scores) -> float:
    """Score-weighted mean layer index: sum(l * c_l) / sum(c_l)."""
    c = np.asarray(scores, dtype=np.float64)
    if c.ndim != 1 or c.size == 0:
        raise ValueError("scores must be a non-empty vector")
    if not np.all(np.isfinite(c)) or np.any(c < 0):
        raise ValueError("scores must be finite and non-negative")
    total = c.sum()
    if total <= 0:
        raise ValueError("scores sum to zero")
    return float(np.arange(c.size) @ c / total)


def make_cog(scores, model: str = "", task: str = "") -> CogResult:
    return CogResult(scores=np.asarray(scores, dtype=np.float64),
                     cog=center_of_gravity(scores), model=model, task=task)


def delta_cog(fine: CogResult, pre: CogResult) -> float:
    """Fine-tuned minus pre-trained center of gravity."""
    if fine.scores.size != pre.scores.size:
        raise ValueError(
            f"layer counts differ: {fine.scores.size} vs {pre.scores.size}")
    return fine.cog - pre.cog


# ---------------------------------------------------------------------------
# representational similarity


def rdm(pooled: np.ndarray) -> np.ndarray:
    """Condensed pairwise cosine similarities, upper triangle row-major.

    Rows are unit-normalized with an epsilon guard; entries are clipped to
    [-1, 1] to absorb round-off.
    """
    x = np.asarray(pooled, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 3:
        raise ValueError("need at least 3 stimuli rows")
    xn = normalize_rows(x)
    return np.clip(kernels.condensed_cosine(xn), -1.0, 1.0)


def _is_constant(v: np.ndarray) -> bool:
    mean = v.mean()
    return bool(np.max(np.abs(v - mean)) <= 1e-12 * max(1.0, abs(mean)))


def global_rsa(space_a: np.ndarray, space_b: np.ndarray) -> float:
    """Pearson correlation between the two spaces' similarity structures.

    Identical similarity structures short-circuit to exactly 1.0.  Raises
    DegenerateRdm when either RDM is constant (correlation undefined).
    """
    a = np.asarray(space_a, dtype=np.float64)
    b = np.asarray(space_b, dtype=np.float64)
    if a.shape[0] != b.shape[0]:
        raise ValueError(
            f"stimulus counts differ: {a.shape[0]} vs {b.shape[0]}")
    return _condensed_pearson(rdm(a), rdm(b))


def _condensed_pearson(ra: np.ndarray, rb: np.ndarray) -> float:
    if ra.size < 2 or _is_constant(ra) or _is_constant(rb):
        raise DegenerateRdm("constant similarity structure")
    if np.array_equal(ra, rb):
        return 1.0
    # two-pass Pearson in float64
    da = ra - ra.mean()
    db = rb - rb.mean()
    r = float(da @ db / math.sqrt((da @ da) * (db @ db)))
    return min(1.0, max(-1.0, r))


@dataclass
class RsaResult:
    """Point estimate plus percentile bootstrap interval."""

    r: float
    ci_low: float
    ci_high: float
    sentences: int
    resamples: int
    skipped: int
    seed: int


def rsa_bootstrap(space_a: np.ndarray, space_b: np.ndarray,
                  resamples: int = 200, seed: int = 0) -> RsaResult:
    """Bootstrap global_rsa over sentences with percentile 95% bounds.

    Resample i redraws sentence indices with replacement using seed + i.
    Pairs built from two copies of the same original sentence are excluded
    from each resample's correlation: their cosine is exactly 1 in both
    spaces, which would drag the null distribution far above zero.
    Degenerate resamples are skipped and counted.  The interval is widened
    to bracket the full-sample point estimate.
    """
    a = np.asarray(space_a, dtype=np.float64)
    b = np.asarray(space_b, dtype=np.float64)
    s = a.shape[0]
    if s < 10:
        raise ValueError("bootstrap needs at least 10 sentences")
    if resamples < 1:
        raise ValueError("need at least one resample")
    point = global_rsa(a, b)
    rows, cols = np.triu_indices(s, k=1)
    values = []
    skipped = 0
    for i in range(resamples):
        rng = np.random.Generator(np.random.PCG64(seed + i))
        idx = rng.integers(0, s, size=s)
        keep = idx[rows] != idx[cols]
        try:
            values.append(_condensed_pearson(rdm(a[idx])[keep],
                                             rdm(b[idx])[keep]))
        except DegenerateRdm:
            skipped += 1
    if values:
        low, high = np.percentile(values, [2.5, 97.5])
    else:
        low = high = point
    return RsaResult(r=point, ci_low=float(min(low, point)),
                     ci_high=float(max(high, point)), sentences=s,
                     resamples=resamples, skipped=skipped, seed=seed)


# ---------------------------------------------------------------------------
# downstream linear heads


def matthews_corrcoef(preds: np.ndarray, labels: np.ndarray) -> float:
    """Binary Matthews correlation; 0.0 when any margin is empty."""
    preds = np.asarray(preds, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    tp = int(np.sum((preds == 1) & (labels == 1)))
    tn = int(np.sum((preds == 0) & (labels == 0)))
    fp = int(np.sum((preds == 1) & (labels == 0)))
    fn = int(np.sum((preds == 0) & (labels == 1)))
    denom = math.sqrt(float(tp + fp) * (tp + fn) * (tn + fp) * (tn + fn))
    if denom == 0:
        return 0.0
    return (tp * tn - fp * fn) / denom


def _head_bits_and_grad(w, b, x, y, k):
    """Loss in bits plus gradients for a linear head on one batch."""
    n = x.shape[0]
    if k == 2:
        z = x @ w[:, 0] + b[0]
        # stable sigmoid cross-entropy: log(1 + exp(-|z|)) form
        bits = float(np.sum(np.maximum(z, 0.0) - z * y
                            + np.log1p(np.exp(-np.abs(z)))) / kernels.LN2)
        p = 1.0 / (1.0 + np.exp(-z))
        dz = (p - y) / kernels.LN2
        gw = (x.T @ dz)[:, None]
        gb = np.array([dz.sum()])
    else:
        z = x @ w + b
        zmax = z.max(axis=1, keepdims=True)
        ez = np.exp(z - zmax)
        ezsum = ez.sum(axis=1, keepdims=True)
        lse = zmax[:, 0] + np.log(ezsum[:, 0])
        picked = z[np.arange(n), y]
        bits = float(np.sum(lse - picked) / kernels.LN2)
        dz = ez / ezsum
        dz[np.arange(n), y] -= 1.0
        dz /= kernels.LN2
        gw = x.T @ dz
        gb = dz.sum(axis=0)
    return bits, gw, gb


def _train_linear_head(x_train, y_train, x_dev, y_dev, k, lr, batch_size,
                       max_epochs, patience, seed):
    rng = np.random.Generator(np.random.PCG64(seed))
    h = x_train.shape[1]
    cols = 1 if k == 2 else k
    limit = math.sqrt(6.0 / (h + cols))
    w = rng.uniform(-limit, limit, size=(h, cols))
    b = np.zeros(cols)
    adam = AdamState([w, b])

    def dev_bits():
        bits, _, _ = _head_bits_and_grad(w, b, x_dev, y_dev, k)
        return bits

    best_bits = dev_bits()
    best = (w.copy(), b.copy())
    bad = 0
    n = x_train.shape[0]
    for _ in range(max_epochs):
        order = rng.permutation(n)
        for lo in range(0, n, batch_size):
            idx = order[lo:lo + batch_size]
            bits, gw, gb = _head_bits_and_grad(w, b, x_train[idx],
                                               y_train[idx], k)
            inv = 1.0 / idx.size
            adam.step([w, b], [gw * inv, gb * inv], lr)
        cur = dev_bits()
        if cur < best_bits:
            best_bits = cur
            best = (w.copy(), b.copy())
            bad = 0
        else:
            bad += 1
            if bad >= patience:
                break
    return best


def _head_predict(w, b, x, k):
    if k == 2:
        return (x @ w[:, 0] + b[0] > 0.0).astype(np.int64)
    return np.argmax(x @ w + b, axis=1)


def downstream_layer_eval(train_mats, dev_mats, test_mats, y_train, y_dev,
                          y_test, metric: str = "accuracy",
                          learning_rate: float = 5e-4, batch_size: int = 64,
                          max_epochs: int = 50, patience: int = 5,
                          seed: int = 0) -> np.ndarray:
    """Test-set score per layer from linear heads on pooled vectors.

    Binary problems use a single sigmoid logit with binary cross-entropy;
    multi-class uses softmax cross-entropy.  ``metric`` is "accuracy" or
    (binary only) "mcc".  Each layer trains its own head with a seed derived
    from (seed, layer).
    """
    y_train = np.asarray(y_train, dtype=np.int64)
    y_dev = np.asarray(y_dev, dtype=np.int64)
    y_test = np.asarray(y_test, dtype=np.int64)
    labels_all = np.concatenate([y_train, y_dev, y_test])
    k = int(labels_all.max()) + 1
    if k < 2:
        raise ValueError("need at least two classes")
    for name, y in (("train", y_train), ("dev", y_dev), ("test", y_test)):
        if np.unique(y).size < 2:
            raise ValueError(f"{name} split is single-class")
    if metric not in ("accuracy", "mcc"):
        raise ValueError(f"unknown metric {metric!r}")
    if metric == "mcc" and k != 2:
        raise ValueError("mcc is defined for binary problems only")
    num_layers = len(train_mats)
    if not (len(dev_mats) == len(test_mats) == num_layers):
        raise ValueError("per-layer matrix lists differ in length")

    scores = np.empty(num_layers)
    for layer in range(num_layers):
        x_train = np.asarray(train_mats[layer], dtype=np.float64)
        x_dev = np.asarray(dev_mats[layer], dtype=np.float64)
        x_test = np.asarray(test_mats[layer], dtype=np.float64)
        layer_seed = int(np.random.SeedSequence(
            [int(seed), int(layer)]).generate_state(1)[0])
        w, b = _train_linear_head(x_train, y_train, x_dev, y_dev, k,
                                  learning_rate, batch_size, max_epochs,
                                  patience, layer_seed)
        preds = _head_predict(w, b, x_test, k)
        if metric == "accuracy":
            scores[layer] = float(np.mean(preds == y_test))
        else:
            scores[layer] = matthews_corrcoef(preds, y_test)
    return scores
