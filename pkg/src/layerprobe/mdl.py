"""Online-coding codelengths and compression scores.

The online code transmits the first t_1 labels at uniform cost, then for
each schedule step trains a fresh probe on everything sent so far and
charges the next block its cross-entropy in bits under that probe.  The
compression score divides the uniform codelength N*log2(K) by the online
codelength; 1.0 means the representations buy nothing.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .probe import ProbeConfig, SpanBatch, evaluate, train_probe

DEFAULT_FRACTIONS = (0.001, 0.002, 0.004, 0.008, 0.016, 0.032, 0.0625,
                     0.125, 0.25, 0.5, 1.0)

DEV_FRACTION = 0.1


@dataclass(frozen=True)
class CodingSchedule:
    """Monotone prefix sizes t_1 < ... < t_S = N."""

    fractions: tuple[float, ...]
    counts: tuple[int, ...]

    def __len__(self) -> int:
        return len(self.counts)


def make_schedule(n: int, fractions=DEFAULT_FRACTIONS) -> CodingSchedule:
    """Derive prefix counts from fractions of N.

    Counts are round-half-up of f*N, then repaired: clamped to >= 1,
    bumped up where needed to stay strictly increasing, last forced to N
    and the tail walked back down if the force broke monotonicity.
    """
    fractions = tuple(float(f) for f in fractions)
    if not fractions:
        raise ValueError("need at least one fraction")
    if any(not 0.0 < f <= 1.0 for f in fractions):
        raise ValueError("fractions must lie in (0, 1]")
    if any(b <= a for a, b in zip(fractions, fractions[1:])):
        raise ValueError("fractions must be strictly increasing")
    if fractions[-1] != 1.0:
        raise ValueError("last fraction must be 1.0")
    s = len(fractions)
    if n < s:
        raise ValueError(f"N={n} cannot host {s} distinct counts")
    counts = [int(math.floor(f * n + 0.5)) for f in fractions]
    for i in range(s):
        low = 1 if i == 0 else counts[i - 1] + 1
        if counts[i] < low:
            counts[i] = low
    counts[-1] = n
    for i in range(s - 2, -1, -1):
        if counts[i] >= counts[i + 1]:
            counts[i] = counts[i + 1] - 1
    if counts[0] < 1:
        raise ValueError(f"N={n} cannot host {s} distinct counts")
    return CodingSchedule(fractions=fractions, counts=tuple(counts))


def uniform_codelength(n: int, k: int) -> float:
    """N*log2(K) bits: the cost of sending labels with no model at all."""
    if n < 1:
        raise ValueError("need at least one item")
    if k < 2:
        raise ValueError("need at least two classes")
    return n * math.log2(k)


def compression(n: int, k: int, online_bits: float) -> float:
    """Uniform codelength divided by the online codelength."""
    if online_bits <= 0:
        raise ValueError(f"non-positive codelength {online_bits}")
    return uniform_codelength(n, k) / online_bits


def block_seed(base_seed: int, block_index: int) -> int:
    """Deterministic per-block probe seed."""
    seq = np.random.SeedSequence([int(base_seed), int(block_index)])
    return int(seq.generate_state(1)[0])


def online_codelength(config: ProbeConfig, x: np.ndarray, batch: SpanBatch,
                      schedule: CodingSchedule | None = None
                      ) -> tuple[float, list[float]]:
    """Online codelength of a pre-shuffled batch on one layer matrix.

    The caller shuffles ``batch`` once with the run seed; blocks are taken
    in that order.  Each block trains a fresh probe (seed derived from
    config.seed and the block index) on the prefix, holding out the last
    10% (at least one item) of the prefix as dev split, then pays the
    cross-entropy of the next block.  Returns (online_bits, block_bits).
    """
    n = len(batch)
    k = config.num_classes
    if schedule is None:
        schedule = make_schedule(n)
    if schedule.counts[-1] != n:
        raise ValueError(
            f"schedule ends at {schedule.counts[-1]}, batch has {n}")
    online = schedule.counts[0] * math.log2(k)
    block_bits: list[float] = []
    for i in range(len(schedule) - 1):
        t_cur = schedule.counts[i]
        t_next = schedule.counts[i + 1]
        if t_cur >= 2:
            dev_n = max(1, int(math.floor(DEV_FRACTION * t_cur)))
            train_part = batch.take(slice(0, t_cur - dev_n))
            dev_part = batch.take(slice(t_cur - dev_n, t_cur))
        else:
            # a one-item prefix trains and validates on the same item
            train_part = batch.take(slice(0, t_cur))
            dev_part = train_part
        cfg = replace(config, seed=block_seed(config.seed, i))
        params, _ = train_probe(cfg, x, train_part, dev_part)
        ev = evaluate(params, x, batch.take(slice(t_cur, t_next)))
        block_bits.append(ev["total_bits"])
        online += ev["total_bits"]
    return online, block_bits


@dataclass
class MdlResult:
    """One (task, layer, seed) online-coding outcome."""

    task: str
    layer: int
    n: int
    k: int
    uniform_bits: float
    online_bits: float
    compression: float
    block_bits: list[float]
    seed: int

    def to_json_dict(self) -> dict:
        return {
            "task": self.task,
            "layer": self.layer,
            "N": self.n,
            "K": self.k,
            "uniform_bits": self.uniform_bits,
            "online_bits": self.online_bits,
            "compression": self.compression,
            "block_bits": list(self.block_bits),
            "seed": self.seed,
        }

    @classmethod
    def from_json_dict(cls, rec: dict) -> "MdlResult":
        return cls(task=rec["task"], layer=rec["layer"], n=rec["N"],
                   k=rec["K"], uniform_bits=rec["uniform_bits"],
                   online_bits=rec["online_bits"],
                   compression=rec["compression"],
                   block_bits=list(rec["block_bits"]), seed=rec["seed"])


def run_mdl(config: ProbeConfig, x: np.ndarray, batch: SpanBatch,
            task_name: str, layer: int, run_seed: int,
            fractions=DEFAULT_FRACTIONS) -> MdlResult:
    """Shuffle once with ``run_seed``, run the online code, package result."""
    n = len(batch)
    rng = np.random.Generator(np.random.PCG64(run_seed))
    shuffled = batch.take(rng.permutation(n))
    cfg = replace(config, seed=run_seed)
    schedule = make_schedule(n, fractions)
    online, blocks = online_codelength(cfg, x, shuffled, schedule)
    return MdlResult(
        task=task_name, layer=layer, n=n, k=config.num_classes,
        uniform_bits=uniform_codelength(n, config.num_classes),
        online_bits=online,
        compression=compression(n, config.num_classes, online),
        block_bits=blocks, seed=run_seed,
    )
