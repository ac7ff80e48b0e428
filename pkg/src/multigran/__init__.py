"""Multi-granularity negative sampling for dual-encoder response retrieval.

Trains L dual encoders whose negatives come from L disjoint semantic-distance
buckets of the response pool, ensembles their softmax outputs at inference,
and verifies with linear probes that the models capture distinct levels of
representation.
"""

from .autograd import Tape, Tensor, backward
from .config import RunConfig, load_config
from .data import (DialogExample, GeneratorSpec, TrainingExample, Vocabulary,
                   binary_to_retrieval, build_vocab, builtin_topics,
                   generate_synthetic_corpus, load_corpus, load_generator_spec,
                   tokenize, write_corpus)
from .encoder import EncoderParams, encode, encode_batch, init_params
from .ensemble import EnsembleBundle, ensemble_predict, load_bundle, write_bundle_manifest
from .metrics import EvalReport, hits_at_1, mrr, paired_significance, r_n_at_k, rank_of_truth
from .model import DualEncoder, init_model, load_checkpoint, loss, save_checkpoint, score
from .pipeline import Run, open_run, run_all
from .probing import ProbeConfig, ProbeTask, freeze_and_encode, granularity_sweep, train_probe
from .sampling import (BucketIndex, ResponsePool, build_bucket_index, build_corpora,
                       build_pool, cosine_similarity, sample_negatives)
from .training import Adam, TrainResult, clip_global_norm, train

__version__ = "0.1.0"

__all__ = [
    "Adam", "BucketIndex", "DialogExample", "DualEncoder", "EncoderParams",
    "EnsembleBundle", "EvalReport", "GeneratorSpec", "ProbeConfig", "ProbeTask",
    "ResponsePool", "Run", "RunConfig", "Tape", "Tensor", "TrainResult",
    "TrainingExample", "Vocabulary", "backward", "binary_to_retrieval",
    "build_bucket_index", "build_corpora", "build_pool", "build_vocab",
    "builtin_topics", "clip_global_norm", "cosine_similarity", "encode",
    "encode_batch", "ensemble_predict", "freeze_and_encode",
    "generate_synthetic_corpus", "granularity_sweep", "hits_at_1", "init_model",
    "init_params", "load_bundle", "load_checkpoint", "load_config", "load_corpus",
    "load_generator_spec",
    "loss", "mrr", "open_run", "paired_significance", "r_n_at_k", "rank_of_truth",
    "run_all", "sample_negatives", "save_checkpoint", "score", "tokenize", "train",
    "train_probe", "write_bundle_manifest", "write_corpus",
]
