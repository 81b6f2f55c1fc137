"""Online-coding schedule, codelength accounting and compression scores."""

import math

import numpy as np
import pytest

from layerprobe.mdl import (CodingSchedule, MdlResult, block_seed,
                            compression, make_schedule, online_codelength,
                            run_mdl, uniform_codelength)
from layerprobe.probe import ProbeConfig, make_span_batch
from layerprobe.synth import SynthTaskSpec, generate_synthetic

from reference_data import COMPRESSION_CODELENGTH_PAIRS


# ---------------------------------------------------------------------------
# schedule


def test_default_schedule_for_thousand_items():
    sched = make_schedule(1000)
    assert sched.counts == (1, 2, 4, 8, 16, 32, 63, 125, 250, 500, 1000)


def test_single_fraction_schedule():
    assert make_schedule(77, (1.0,)).counts == (77,)


def test_schedule_walks_tail_down_after_forcing_last():
    # round-half-up gives (6, 10, 10, 11); repairing the tail yields
    # strictly increasing counts ending at N
    sched = make_schedule(11, (0.5, 0.9, 0.95, 1.0))
    assert sched.counts == (6, 9, 10, 11)


def test_schedule_too_many_fractions():
    with pytest.raises(ValueError):
        make_schedule(5, (0.01, 0.02, 0.04, 0.08, 0.16, 1.0))


@pytest.mark.parametrize("fractions", [
    (), (0.5, 0.5, 1.0), (0.5, 0.4, 1.0), (0.0, 1.0), (0.5, 1.1),
    (0.2, 0.5),
])
def test_schedule_rejects_bad_fractions(fractions):
    with pytest.raises(ValueError):
        make_schedule(100, fractions)


def test_schedule_properties_random():
    rng = np.random.Generator(np.random.PCG64(3))
    for _ in range(50):
        s = int(rng.integers(1, 9))
        fracs = np.sort(rng.random(s))
        fracs = tuple(float(f) for f in fracs / fracs[-1])
        n = int(rng.integers(s, 500))
        sched = make_schedule(n, fracs)
        counts = sched.counts
        assert counts[0] >= 1
        assert counts[-1] == n
        assert all(b > a for a, b in zip(counts, counts[1:]))


# ---------------------------------------------------------------------------
# codelengths


def test_uniform_codelength_examples():
    assert uniform_codelength(1000, 2) == 1000.0
    assert uniform_codelength(1, 8) == 3.0


def test_uniform_codelength_validation():
    with pytest.raises(ValueError):
        uniform_codelength(0, 2)
    with pytest.raises(ValueError):
        uniform_codelength(10, 1)


def test_reference_rows_share_a_task_constant():
    # published per-layer (compression, codelength) pairs multiply out to
    # the task's uniform codelength; spot-check three rows of one task
    rows = COMPRESSION_CODELENGTH_PAIRS["deps"]
    products = [rows[0][0][0] * rows[0][0][1],
                rows[1][0][0] * rows[1][0][1],
                rows[7][0][0] * rows[7][0][1]]
    assert products[0] == pytest.approx(1118.3, rel=3e-3)
    for p in products[1:]:
        assert p == pytest.approx(products[0], rel=3e-3)


def test_compression_examples():
    assert compression(100, 2, uniform_codelength(100, 2)) == 1.0
    assert uniform_codelength(100, 2) / compression(100, 2, 50.0) == 50.0
    assert 1118.3 / 186.7 == pytest.approx(5.99, rel=1e-3)
    assert 523.9 / 62.6 == pytest.approx(8.37, rel=1e-3)


def test_compression_strictly_decreasing_in_codelength():
    values = [compression(100, 4, bits) for bits in (50.0, 80.0, 120.0, 400.0)]
    assert all(a > b for a, b in zip(values, values[1:]))


def test_compression_rejects_nonpositive_codelength():
    with pytest.raises(ValueError):
        compression(10, 2, 0.0)


# ---------------------------------------------------------------------------
# online coding


def mdl_fixture(seed=31, n_train=200, k=3, h=16, num_layers=4,
                signal_layer=1, shuffle=False):
    spec = SynthTaskSpec(num_classes=k, train=n_train, dev=10, test=10,
                         signal_layer=signal_layer, cluster_sep=6.0,
                         cluster_std=0.4, layer_noise=1.0,
                         shuffle_labels=shuffle)
    store, task = generate_synthetic(seed, num_layers, h, n_train // 3, spec)
    batch = make_span_batch(store, task.splits["train"], 1)
    cfg = ProbeConfig(input_dim=h, num_classes=k, proj_dim=24, mlp_hidden=24,
                      max_epochs=60, patience=5, seed=0)
    return store, batch, cfg


def test_degenerate_schedule_is_uniform_codelength():
    store, batch, cfg = mdl_fixture()
    n = len(batch)
    sched = CodingSchedule(fractions=(1.0,), counts=(n,))
    x = np.asarray(store.data[1], dtype=np.float64)
    online, blocks = online_codelength(cfg, x, batch, sched)
    assert online == uniform_codelength(n, cfg.num_classes)
    assert blocks == []


def test_online_codelength_accounting_identity():
    store, batch, cfg = mdl_fixture()
    x = np.asarray(store.data[1], dtype=np.float64)
    sched = make_schedule(len(batch))
    online, blocks = online_codelength(cfg, x, batch, sched)
    lead = sched.counts[0] * math.log2(cfg.num_classes)
    assert online == pytest.approx(lead + sum(blocks), rel=1e-9)
    assert len(blocks) == len(sched) - 1


def test_online_codelength_planted_signal_compresses():
    store, batch, cfg = mdl_fixture()
    x = np.asarray(store.data[1], dtype=np.float64)
    online, _ = online_codelength(cfg, x, batch)
    assert online < 0.5 * uniform_codelength(len(batch), cfg.num_classes)


def test_online_codelength_shuffled_control_near_uniform():
    # Shuffled labels carry no signal, so the online code should cost about
    # the same as the uniform code.  Checked at the noisiest layer, where a
    # probe has the most room to memorize its way below calibration.
    spec = SynthTaskSpec(num_classes=4, train=2000, dev=10, test=10,
                         signal_layer=2, cluster_sep=6.0, cluster_std=0.4,
                         layer_noise=0.3, shuffle_labels=True)
    store, task = generate_synthetic(100, 5, 32, 670, spec)
    batch = make_span_batch(store, task.splits["train"], 1)
    cfg = ProbeConfig(input_dim=32, num_classes=4, proj_dim=16, mlp_hidden=16,
                      max_epochs=20, patience=3, seed=0)
    x = np.asarray(store.data[0], dtype=np.float64)
    res = run_mdl(cfg, x, batch, "control", 0, run_seed=0)
    assert 0.9 * res.uniform_bits <= res.online_bits <= 1.1 * res.uniform_bits


def test_schedule_batch_mismatch_rejected():
    store, batch, cfg = mdl_fixture()
    x = np.asarray(store.data[1], dtype=np.float64)
    sched = make_schedule(len(batch) + 5)
    with pytest.raises(ValueError):
        online_codelength(cfg, x, batch, sched)


def test_block_seed_deterministic_and_distinct():
    seeds = [block_seed(7, i) for i in range(6)]
    assert seeds == [block_seed(7, i) for i in range(6)]
    assert len(set(seeds)) == 6
    assert block_seed(8, 0) != block_seed(7, 0)


def test_run_mdl_deterministic():
    store, batch, cfg = mdl_fixture()
    x = np.asarray(store.data[1], dtype=np.float64)
    a = run_mdl(cfg, x, batch, "synthetic", 1, run_seed=5)
    b = run_mdl(cfg, x, batch, "synthetic", 1, run_seed=5)
    assert a.to_json_dict() == b.to_json_dict()


def test_run_mdl_result_consistency():
    store, batch, cfg = mdl_fixture()
    x = np.asarray(store.data[2], dtype=np.float64)
    res = run_mdl(cfg, x, batch, "synthetic", 2, run_seed=1)
    n, k = res.n, res.k
    assert res.uniform_bits == uniform_codelength(n, k)
    # compression is the stored division of the stored codelengths
    assert res.compression == res.uniform_bits / res.online_bits
    lead = make_schedule(n).counts[0] * math.log2(k)
    assert res.online_bits == pytest.approx(lead + sum(res.block_bits),
                                            rel=1e-9)


def test_mdl_result_json_round_trip():
    res = MdlResult(task="t", layer=3, n=100, k=4, uniform_bits=200.0,
                    online_bits=80.0, compression=2.5,
                    block_bits=[10.0, 30.0, 40.0], seed=9)
    assert MdlResult.from_json_dict(res.to_json_dict()) == res


def test_block_losses_trend_down_with_data():
    pytest.importorskip("scipy")
    from scipy.stats import spearmanr

    store, batch, cfg = mdl_fixture(seed=33)
    x = np.asarray(store.data[1], dtype=np.float64)
    sched = make_schedule(len(batch))
    sizes = np.diff(sched.counts)
    per_item = np.zeros(len(sizes))
    for seed in range(5):
        res = run_mdl(cfg, x, batch, "synthetic", 1, run_seed=seed)
        per_item += np.asarray(res.block_bits) / sizes
    rho, p = spearmanr(np.arange(len(sizes)), per_item / 5.0)
    assert rho < 0
    assert p < 0.05
