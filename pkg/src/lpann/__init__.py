"""Approximate nearest-neighbor search for l_p spaces with p > 2.

Two pipelines over a shared core of exact oracles:

- linf_pipeline: randomized max-stable embedding into the max norm, served by
  a pluggable fixed-radius backend, amplified and driven through a radius
  ladder.
- mazur_pipeline: scaled power-map embedding into the Euclidean norm over a
  net hierarchy, queried by navigating descent with certified termination.
"""

from .core import (
    LINF,
    DistanceReport,
    PointSet,
    SetStats,
    ValidationError,
    brute_force_near,
    brute_force_nn,
    load_points,
    lp_dist,
    lp_norm,
    save_points,
    set_stats,
)
from .embed import (
    FrechetEmbedding,
    JlProjection,
    MazurParams,
    derive_seed,
    frechet_apply,
    frechet_scale_b,
    jl_apply,
    mazur_map,
    net_contraction_threshold,
    sample_frechet,
)
from .hierarchy import CandidateSet, NetHierarchy, build_candidate_sets, build_hierarchy, level_ancestor, verify_nets
from .index_io import load_index, save_index
from .linf_pipeline import (
    AmplifiedStructure,
    LinfAnnIndex,
    LinfParams,
    amplified_query,
    ann_linf,
    build_linf_index,
    build_linf_near,
    build_linf_near_ddim,
    query_linf_near,
)
from .mazur_pipeline import (
    AnnConfig,
    AnnIndex,
    BnnOracle,
    DescentTrace,
    bnn_c,
    build_ann_index,
    build_bnn_oracle,
    coarse_start,
    query_ann,
    query_bnn,
    refine_ann,
)
from .reduction import RadiusLadder, ann_via_ladder, ladder_radii

__version__ = "0.1.0"
