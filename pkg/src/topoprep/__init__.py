"""Similarity-driven topology construction for decentralised learning.

Nodes compare soft-label proxies through a breadth-first morphing protocol,
cluster the resulting divergence matrix and wire themselves into a ring of
locally heterogeneous cliques before training with local FedAvg.
"""

from .bftm import MorphConfig, SimilarityMatrix, accounting_run, run_morphing
from .config import ExperimentConfig, load_config, parse_config
from .graph import Topology, ring_of_cliques, split_partitions
from .pipeline import run_experiment, run_pipeline
from .proxy import Proxy, kl_divergence, pair_similarity
from .seeds import derive_seeds
from .selection import ccc_heterogeneous, homogeneous_baseline, kmeans_rows

__version__ = "0.1.0"

__all__ = [
    "ExperimentConfig", "MorphConfig", "Proxy", "SimilarityMatrix", "Topology", "accounting_run",
    "ccc_heterogeneous", "derive_seeds", "homogeneous_baseline", "kl_divergence", "kmeans_rows", "load_config",
    "pair_similarity", "parse_config", "ring_of_cliques", "run_experiment", "run_morphing", "run_pipeline",
    "split_partitions",
]
