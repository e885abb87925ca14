"""memestream: sliding-window stream clustering of social-media posts with a
sequential reference algorithm and a parallel delta-synchronized engine."""

__version__ = "0.1.0"

from .cluster import ClusterState, OnlineStats, Params, run_sequential
from .evaluation import Cover, MetricsReport, compare_exact, lfk_nmi
from .ingest import StepStream, SynthConfig, Tweet, parse_tweet, synth_stream
from .parallel import Bootstrap, EngineConfig, bootstrap_from_steps, run_parallel
from .protomeme import Marker, Protomeme, RetweetIndex, generate_protomemes
from .sparse import SparseVector, cosine, vec_add, vec_sub

__all__ = [
    "__version__",
    "ClusterState", "OnlineStats", "Params", "run_sequential",
    "Cover", "MetricsReport", "compare_exact", "lfk_nmi",
    "StepStream", "SynthConfig", "Tweet", "parse_tweet", "synth_stream",
    "Bootstrap", "EngineConfig", "bootstrap_from_steps", "run_parallel",
    "Marker", "Protomeme", "RetweetIndex", "generate_protomemes",
    "SparseVector", "cosine", "vec_add", "vec_sub",
]
