import numpy as np
import pytest

from layerprobe.store import ReprStore
from layerprobe.synth import SynthTaskSpec, generate_synthetic


def make_store(data, offsets, word_first=None, model_id="test",
               token_texts=None) -> ReprStore:
    """Assemble an in-memory store from raw arrays, defaulting every token
    to word-initial so small hand-built fixtures stay valid."""
    data = np.ascontiguousarray(data, dtype=np.float32)
    offsets = np.asarray(offsets, dtype=np.int64)
    if word_first is None:
        word_first = np.ones(data.shape[1], dtype=bool)
    return ReprStore(model_id=model_id, num_layers=int(data.shape[0]),
                     hidden_size=int(data.shape[2]),
                     sentence_offsets=offsets,
                     word_first=np.asarray(word_first, dtype=bool),
                     data=data, token_texts=token_texts)


@pytest.fixture(scope="session")
def small_pair():
    """A quick fixture with signal at layer 1: 100 single-span targets."""
    spec = SynthTaskSpec(num_classes=3, train=60, dev=20, test=20,
                         signal_layer=1, cluster_sep=6.0, cluster_std=0.3,
                         layer_noise=1.0)
    return generate_synthetic(seed=11, num_layers=4, hidden_size=16,
                              sentences=40, spec=spec)
