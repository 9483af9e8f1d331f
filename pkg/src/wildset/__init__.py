"""Large-scale weakly supervised dataset tooling.

Descriptor compression, product-quantized nearest-neighbour search,
near-duplicate detection, hashtag canonicalization, frequency-flattening
resampling and learning-rate schedules.
"""

__version__ = "0.1.0"

from .dedup import DuplicateVerdict, lower_bound_accuracy, run_dedup, stage1, stage2
from .descriptor import PCAWhitening, ScalarQuantizer, resize_plan, rmac_pool, rmac_regions
from .hashtag import CanonicalMap, SynsetDB, canonical_merge, relabel, select_vocab, synset_match
from .ivf import IVFPQIndex, SearchResult
from .quantizer import OPQ, ProductQuantizer, kmeans
from .sampler import SoftTargetEncoder, TaggedCorpus, inject_noise, make_target, resample, select_threshold
from .schedule import ScheduleSpec, interpolate_length, lr_at, preset_schedule, scaled_lr

__all__ = [
    "CanonicalMap",
    "DuplicateVerdict",
    "IVFPQIndex",
    "OPQ",
    "PCAWhitening",
    "ProductQuantizer",
    "ScalarQuantizer",
    "ScheduleSpec",
    "SearchResult",
    "SoftTargetEncoder",
    "SynsetDB",
    "TaggedCorpus",
    "canonical_merge",
    "inject_noise",
    "interpolate_length",
    "kmeans",
    "lower_bound_accuracy",
    "lr_at",
    "make_target",
    "preset_schedule",
    "relabel",
    "resample",
    "resize_plan",
    "rmac_pool",
    "rmac_regions",
    "run_dedup",
    "scaled_lr",
    "select_threshold",
    "select_vocab",
    "stage1",
    "stage2",
    "synset_match",
]
