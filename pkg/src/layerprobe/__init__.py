"""Layer-wise probing of neural encoder representations.

The package quantifies where labeled information lives across encoder
layers: online-coding MDL probes, scalar-mix edge probes, center-of-gravity
summaries, norm statistics and global representational similarity analysis,
all over a memory-mapped float32 representation store.
"""

from .errors import (BadMagic, DegenerateRdm, InvariantViolation,
                     LayerprobeError, StoreFormatError, TaskFormatError,
                     TrainingDiverged, TruncatedStore, UnsupportedVersion)
from .store import (ReprStore, layer_f64, layer_view, mean_pool_sentences,
                    read_store, sample_word_tokens, sentence_bounds,
                    write_store)
from .tasks import SpanTarget, TaskDataset, load_task, write_task
from .synth import SynthTaskSpec, generate_synthetic
from .probe import (ProbeConfig, ProbeParams, SpanBatch, attn_pool,
                    cross_entropy_bits, evaluate, forward, grad, init_params,
                    load_checkpoint, make_span_batch, micro_f1,
                    save_checkpoint, train_probe)
from .mdl import (CodingSchedule, DEFAULT_FRACTIONS, MdlResult, compression,
                  make_schedule, online_codelength, run_mdl,
                  uniform_codelength)
from .edge import (EdgeResult, ScalarMix, init_mix, mix, mix_weights,
                   normalize_rows, train_edge_probe)
from .analysis import (CogResult, NormStats, RsaResult, center_of_gravity,
                       delta_cog, downstream_layer_eval, global_rsa,
                       layer_norms, make_cog, matthews_corrcoef, rdm,
                       rsa_bootstrap)

__version__ = "0.1.0"
