"""Near-neighbor search through the randomized max-norm embedding.

Points are pushed through the coordinate-scaling embedding and served by a
pluggable max-norm backend. Every backend answer is re-verified in the origin
space before being returned, so embedding failures surface as nulls, never as
silently bad answers. Two build variants exist: the plain one (embedding
scale b grows with the cardinality) and a net-based one whose distortion
depends on the doubling dimension instead.
"""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass

import numpy as np

from .core import (
    PointSet,
    SetStats,
    ValidationError,
    brute_force_nn,
    ddim_estimate,
    lp_dist,
    set_stats,
)
from .embed import FrechetEmbedding, derive_seed, frechet_apply, frechet_scale_b, net_contraction_threshold
from .hierarchy import greedy_net
from .reduction import LadderOutcome, RadiusLadder, ann_via_ladder, ladder_radii


class ExactLinfBackend:
    """Exact max-norm scan. Factor-1 contract: answers iff some stored point
    lies within the query radius, and never returns anything farther."""

    c_backend = 1.0

    def __init__(self, embedded: np.ndarray, radius: float):
        self.embedded = embedded
        self.radius = float(radius)

    def query(self, e: np.ndarray) -> int | None:
        dists = np.max(np.abs(self.embedded - e[None, :]), axis=1)
        j = int(np.argmin(dists))
        return j if dists[j] <= self.c_backend * self.radius else None


class GridLinfBackend:
    """Bucketed max-norm scan with the same factor-1 contract.

    Cells of side `radius` over the first few coordinates prune candidates;
    survivors are checked exactly, so answers match the exact backend's
    contract (possibly returning a different in-radius point).
    """

    c_backend = 1.0

    def __init__(self, embedded: np.ndarray, radius: float, grid_dims: int = 2):
        self.embedded = embedded
        self.radius = float(radius)
        self.g = min(grid_dims, embedded.shape[1])
        self.buckets: dict[tuple, list[int]] = defaultdict(list)
        keys = np.floor(embedded[:, : self.g] / self.radius).astype(np.int64)
        for i, key in enumerate(map(tuple, keys)):
            self.buckets[key].append(i)

    def query(self, e: np.ndarray) -> int | None:
        base = np.floor(e[: self.g] / self.radius).astype(np.int64)
        cand: list[int] = []
        for off in np.ndindex(*([3] * self.g)):
            key = tuple(base + np.asarray(off) - 1)
            cand.extend(self.buckets.get(key, ()))
        if not cand:
            return None
        idx = np.asarray(cand)
        dists = np.max(np.abs(self.embedded[idx] - e[None, :]), axis=1)
        j = int(np.argmin(dists))
        return int(idx[j]) if dists[j] <= self.c_backend * self.radius else None


LINF_BACKENDS = {"exact": ExactLinfBackend, "grid": GridLinfBackend}


@dataclass
class LinfNearStructure:
    """Fixed-radius near-neighbor structure for one query radius r."""

    pointset: PointSet
    embedding: FrechetEmbedding
    backend: object
    backend_kind: str
    r: float
    r_embedded: float
    variant: str  # "cardinality" | "ddim"
    certified_bound: float  # origin-space acceptance bound for answers
    seed: int
    net_ids: np.ndarray | None = None  # ddim variant: which rows the backend holds
    net_scale: float | None = None  # ddim variant: net extraction radius
    ddim_est: float | None = None


def build_linf_near(V: PointSet, r: float, backend_kind: str = "exact", seed: int = 0) -> LinfNearStructure:
    """Embed all points with scale b = (3 ln n)^(1/p); backend radius 2*b*r."""
    if r <= 0:
        raise ValidationError(f"radius must be positive, got {r}")
    if V.p <= 2:
        raise ValidationError(f"this pipeline requires p > 2, got {V.p}")
    b = frechet_scale_b(V.n, V.p)
    emb = FrechetEmbedding.generate(V.d, V.p, seed, b=b)
    embedded = frechet_apply(emb, V.points)
    r_embedded = 2.0 * b * r
    backend = LINF_BACKENDS[backend_kind](embedded, r_embedded)
    return LinfNearStructure(
        pointset=V, embedding=emb, backend=backend, backend_kind=backend_kind,
        r=r, r_embedded=r_embedded, variant="cardinality",
        certified_bound=backend.c_backend * r_embedded, seed=seed,
    )


def build_linf_near_ddim(
    V: PointSet,
    r: float,
    seed: int = 0,
    backend_kind: str = "exact",
    ddim_est: float | None = None,
) -> LinfNearStructure:
    """Extract an r-net, rescale by 1/r (minimum distance becomes >= 1),
    embed with b=1, and serve max-norm queries at radius 4."""
    if r <= 0:
        raise ValidationError(f"radius must be positive, got {r}")
    if V.p <= 2:
        raise ValidationError(f"this pipeline requires p > 2, got {V.p}")
    net_ids = greedy_net(V.points, V.p, r)
    scaled = V.points[net_ids] / r
    emb = FrechetEmbedding.generate(V.d, V.p, seed, b=1.0)
    backend = LINF_BACKENDS[backend_kind](frechet_apply(emb, scaled), 4.0)
    if ddim_est is None:
        ddim_est = ddim_estimate(V.points, V.p)
    h = net_contraction_threshold(max(4.0 * backend.c_backend, 4.0), ddim_est, V.p)
    return LinfNearStructure(
        pointset=V, embedding=emb, backend=backend, backend_kind=backend_kind,
        r=r, r_embedded=4.0, variant="ddim",
        certified_bound=h * r, seed=seed,
        net_ids=net_ids, net_scale=r, ddim_est=ddim_est,
    )


def query_linf_near(S: LinfNearStructure, q) -> tuple[int, float] | None:
    """Query; any non-null answer is re-verified in the origin space."""
    q = np.asarray(q, dtype=np.float64)
    if q.shape != (S.pointset.d,):
        raise ValidationError(f"query shape {q.shape} != ({S.pointset.d},)")
    if S.variant == "ddim":
        e = frechet_apply(S.embedding, q / S.net_scale)
    else:
        e = frechet_apply(S.embedding, q)
    idx = S.backend.query(e)
    if idx is None:
        return None
    pid = int(S.net_ids[idx]) if S.net_ids is not None else int(idx)
    dist = lp_dist(q, S.pointset.points[pid], S.pointset.p)
    if dist > S.certified_bound:
        return None  # embedding contraction failure, surfaced as null
    return pid, dist


@dataclass
class AmplifiedStructure:
    """Independent rebuilds of the same structure under derived seeds."""

    copies: list[LinfNearStructure]

    @property
    def k(self) -> int:
        return len(self.copies)


def amplification_count(n: int, p: float, multiplier: int = 3) -> int:
    loglog = math.log2(max(math.log2(max(n, 2)), 1.0001))
    return max(1, math.ceil(loglog / p) * multiplier)


def build_amplified(
    V: PointSet,
    r: float,
    seed: int = 0,
    k: int | None = None,
    variant: str = "cardinality",
    backend_kind: str = "exact",
    multiplier: int = 3,
    ddim_est: float | None = None,
) -> AmplifiedStructure:
    if k is None:
        k = amplification_count(V.n, V.p, multiplier)
    if k < 1:
        raise ValidationError(f"need k >= 1 copies, got {k}")
    copies = []
    for i in range(k):
        s = derive_seed(seed, "copy", i)
        if variant == "ddim":
            copies.append(build_linf_near_ddim(V, r, seed=s, backend_kind=backend_kind, ddim_est=ddim_est))
        else:
            copies.append(build_linf_near(V, r, backend_kind=backend_kind, seed=s))
    return AmplifiedStructure(copies=copies)


def amplified_query(A: AmplifiedStructure, q) -> tuple[int, float] | None:
    """First verified non-null answer across the copies, else null."""
    for s in A.copies:
        ans = query_linf_near(s, q)
        if ans is not None:
            return ans
    return None


@dataclass(frozen=True)
class LinfParams:
    variant: str = "cardinality"  # or "ddim"
    backend_kind: str = "exact"
    amplification_multiplier: int = 3
    include_half_min: bool = False
    seed: int = 0


@dataclass
class LinfAnnIndex:
    """Radius ladder of amplified near-neighbor structures."""

    pointset: PointSet
    stats: SetStats | None
    ladder: RadiusLadder | None
    rungs: list[AmplifiedStructure]
    params: LinfParams
    fallback_count: int = 0

    def query(self, q) -> tuple[int, float, LadderOutcome | None]:
        q = np.asarray(q, dtype=np.float64)
        if self.pointset.n == 1:
            return 0, lp_dist(q, self.pointset.points[0], self.pointset.p), None
        outcome = ann_via_ladder(
            self.ladder,
            lambda j: amplified_query(self.rungs[j], q),
            on_all_null=lambda: brute_force_nn(self.pointset, q),
        )
        if outcome.fallback_used:
            self.fallback_count += 1
        pid, dist = outcome.answer
        return pid, dist, outcome


def build_linf_index(V: PointSet, params: LinfParams = LinfParams()) -> LinfAnnIndex:
    if V.n == 1:
        return LinfAnnIndex(pointset=V, stats=None, ladder=None, rungs=[], params=params)
    stats = set_stats(V)
    ladder = ladder_radii(stats, include_half_min=params.include_half_min)
    dd = stats.ddim_est if params.variant == "ddim" else None
    rungs = [
        build_amplified(
            V, r, seed=derive_seed(params.seed, "rung", j), variant=params.variant,
            backend_kind=params.backend_kind, multiplier=params.amplification_multiplier,
            ddim_est=dd,
        )
        for j, r in enumerate(ladder.radii)
    ]
    return LinfAnnIndex(pointset=V, stats=stats, ladder=ladder, rungs=rungs, params=params)


def ann_linf(V: PointSet, q, params: LinfParams = LinfParams()) -> tuple[int, float]:
    """One-shot build-and-query; reuse LinfAnnIndex for many queries."""
    pid, dist, _ = build_linf_index(V, params).query(q)
    return pid, dist
