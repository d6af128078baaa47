"""Nearest-neighbor search through the power-map embedding into Euclidean space.

The index preprocesses bounded near-neighbor oracles over translated and
rescaled candidate pools drawn from the net hierarchy. A query descends the
hierarchy keeping a single point of interest per level; the descent ends in
one of three certified states (far root, bottom reached, or a null oracle
answer), each carrying an explicit approximation factor. A refinement pass
continues the descent with candidate sets to reach any target (1+eps).
"""

from __future__ import annotations

import math
from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np

from .core import PointSet, SetStats, ValidationError, dist_to_points, lp_dist, pairwise_dists, set_stats
from .embed import JlProjection, MazurParams, derive_seed, jl_apply, mazur_map
from .hierarchy import CandidateSet, NetHierarchy, build_candidate_sets, build_hierarchy


def bnn_c(p: float) -> float:
    """Magnitude bound making the oracle's verification radius work out to c/9."""
    if not p > 2:
        raise ValidationError(f"the bounded oracle needs p > 2, got {p}")
    return p * 18.0 ** (p / 2.0)


class ExactEuclideanBackend:
    """Exact Euclidean scan serving radius-1 queries under a factor-2 contract:
    if a stored point lies within 1, some point within 2 is returned; nothing
    farther than 2 is ever returned."""

    factor = 2.0

    def __init__(self, embedded: np.ndarray, radius: float = 1.0):
        self.embedded = embedded
        self.radius = float(radius)

    def query(self, e: np.ndarray) -> int | None:
        dists = np.linalg.norm(self.embedded - e[None, :], axis=1)
        j = int(np.argmin(dists))
        return j if dists[j] <= self.factor * self.radius else None


EUCLIDEAN_BACKENDS = {"exact": ExactEuclideanBackend}


class BnnOracle:
    """Bounded near-neighbor oracle over one translated/scaled candidate pool.

    Stored points all have magnitude <= c after the transform. A query within
    the promise radius 1 is answered by some point within c/9; the c/9 filter
    is applied deterministically to whatever the Euclidean backend returns.
    Embedded copies are materialized lazily and can be dropped to cap memory.
    """

    def __init__(
        self,
        points: np.ndarray,
        member_ids: np.ndarray,
        translation: np.ndarray,
        scale: float,
        c: float,
        p: float,
        jl_seed: int,
        backend_kind: str = "exact",
        jl_eps0: float = 0.25,
    ):
        self.points = points
        self.member_ids = np.asarray(member_ids, dtype=np.int64)
        self.translation = np.asarray(translation, dtype=np.float64)
        self.scale = float(scale)
        self.c = float(c)
        self.p = float(p)
        self.jl_seed = int(jl_seed)
        self.backend_kind = backend_kind
        self.mazur = MazurParams(p=p, C=c)
        self.jl_eps0 = jl_eps0
        self.out_of_ball = 0
        self._jl: JlProjection | None = None
        self._backend = None
        if self.member_ids.size:
            mags = dist_to_points(self.points[self.member_ids], self.translation, p) * self.scale
            worst = float(mags.max())
            if worst > c * (1.0 + 1e-9):
                raise ValidationError(
                    f"scaled member magnitude {worst:.6g} exceeds the bound c={c:.6g}"
                )

    def scaled_members(self) -> np.ndarray:
        return (self.points[self.member_ids] - self.translation) * self.scale

    @property
    def jl(self) -> JlProjection:
        if self._jl is None:
            self._jl = JlProjection.generate(
                self.points.shape[1], max(int(self.member_ids.size), 2),
                self.jl_seed, eps0=self.jl_eps0,
            )
        return self._jl

    def ensure_embedded(self):
        """Materialize the power-map + projection images of the members."""
        if self._backend is None and self.member_ids.size:
            emb = jl_apply(self.jl, mazur_map(self.scaled_members(), self.mazur))
            self._backend = EUCLIDEAN_BACKENDS[self.backend_kind](emb, radius=1.0)
        return self._backend

    def drop_embedded(self) -> None:
        self._backend = None

    @property
    def embedded(self) -> np.ndarray | None:
        backend = self.ensure_embedded()
        return backend.embedded if backend is not None else None

    def query(self, q: np.ndarray) -> tuple[int, float] | None:
        """Answer in (member id, scaled-space distance) form, or null.

        q is given in untransformed coordinates; translation and scale are
        applied here. Queries outside the c-ball are answered null (the
        map's guarantee does not cover them) and counted.
        """
        if self.member_ids.size == 0:
            return None
        qs = (np.asarray(q, dtype=np.float64) - self.translation) * self.scale
        if lp_dist(qs, np.zeros_like(qs), self.p) > self.c * (1.0 + 1e-9):
            self.out_of_ball += 1
            return None
        backend = self.ensure_embedded()
        e = jl_apply(self.jl, mazur_map(qs, self.mazur))
        j = backend.query(e)
        if j is None:
            return None
        sd = lp_dist(qs, (self.points[self.member_ids[j]] - self.translation) * self.scale, self.p)
        if sd <= self.c / 9.0:
            return int(self.member_ids[j]), float(sd)
        return None


def build_bnn_oracle(
    S: CandidateSet,
    p: float,
    seed: int,
    points: np.ndarray,
    c: float | None = None,
    backend_kind: str = "exact",
) -> BnnOracle:
    """Oracle over a candidate set; c defaults to the value the set's scale
    was derived from."""
    if c is None:
        c = S.scale * 4.5 * 2.0**S.level
    return BnnOracle(
        points=points, member_ids=S.member_ids, translation=S.translation,
        scale=S.scale, c=c, p=p, jl_seed=seed, backend_kind=backend_kind,
    )


def query_bnn(O: BnnOracle, q) -> tuple[int, float] | None:
    return O.query(q)


class _EmbedLru:
    """Bounds how many oracles keep their embedded copies alive."""

    def __init__(self, max_entries: int = 128):
        self.max_entries = max_entries
        self._order: OrderedDict[int, BnnOracle] = OrderedDict()

    def touch(self, oracle: BnnOracle) -> None:
        key = id(oracle)
        if key in self._order:
            self._order.move_to_end(key)
        else:
            self._order[key] = oracle
            while len(self._order) > self.max_entries:
                _, old = self._order.popitem(last=False)
                old.drop_embedded()


@dataclass(frozen=True)
class AnnConfig:
    """Index configuration. c_mode "paper" uses bnn_c(p); "heuristic" allows a
    smaller explicit c (weaker certified factors, recorded per trace)."""

    c_mode: str = "paper"
    c: float | None = None
    amplification_multiplier: int = 3
    seed: int = 0
    backend_kind: str = "exact"
    jl_eps0: float = 0.25

    def resolve_c(self, p: float) -> float:
        if self.c_mode == "paper":
            return bnn_c(p)
        if self.c_mode == "heuristic":
            if self.c is None or self.c <= 9:
                raise ValidationError("heuristic mode needs an explicit c > 9")
            return float(self.c)
        raise ValidationError(f"unknown c_mode {self.c_mode!r}")


@dataclass
class DescentStep:
    level: int
    node: int
    node_dist: float  # working-space distance from the point of interest to q
    bound: float  # 3 * 2^level, the loop invariant ceiling
    outcome: str  # "advance" | "null" | "bottom"
    replicas_tried: int = 0


@dataclass
class DescentTrace:
    steps: list[DescentStep] = field(default_factory=list)
    termination: str = ""  # root_far | bottom_hit | null_stop
    answer_id: int = -1
    answer_dist: float = math.nan  # original-space distance
    certified_factor: float = math.nan
    opt_lower_bound: float | None = None  # working-space certified floor (null cases)
    oracle_calls: int = 0
    termination_level: int = 0


@dataclass
class AnnAnswer:
    id: int
    dist: float
    trace: DescentTrace


@dataclass
class AnnIndex:
    """Net hierarchy plus replicated bounded oracles per (node, level)."""

    pointset: PointSet
    config: AnnConfig
    c: float
    hierarchy: NetHierarchy
    stats: SetStats | None
    replica_count: int
    candidate_sets: dict[tuple[int, int], CandidateSet]
    oracles: dict[tuple[int, int], list[BnnOracle]]
    bottom_members: dict[int, np.ndarray]
    bottom_oracles: dict[int, list[BnnOracle]]
    _lru: _EmbedLru = field(default_factory=_EmbedLru, repr=False)

    def _query_replicas(self, oracles: list[BnnOracle], qn: np.ndarray, trace: DescentTrace):
        for tried, oracle in enumerate(oracles, start=1):
            self._lru.touch(oracle)
            trace.oracle_calls += 1
            ans = oracle.query(qn)
            if ans is not None:
                return ans, tried
        return None, len(oracles)


def _replica_count(V: PointSet, stats: SetStats | None, multiplier: int) -> int:
    ddim = max(stats.ddim_est, 1.0) if stats else 1.0
    loglogd = math.log2(max(math.log2(max(V.d, 2)), 1.0001))
    return max(1, math.ceil(loglogd / (V.p * ddim)) * multiplier)


def _make_oracles(
    V: PointSet,
    hierarchy: NetHierarchy,
    config: AnnConfig,
    c: float,
    replica_count: int,
    candidate_sets: dict[tuple[int, int], CandidateSet],
    bottom_members: dict[int, np.ndarray],
) -> tuple[dict, dict]:
    oracles = {
        (node, level): [
            build_bnn_oracle(
                cs, V.p, derive_seed(config.seed, "bnn", node, level, r),
                hierarchy.points, c=c, backend_kind=config.backend_kind,
            )
            for r in range(replica_count)
        ]
        for (node, level), cs in candidate_sets.items()
    }
    bottom_oracles = {
        w: [
            BnnOracle(
                points=hierarchy.points, member_ids=members, translation=hierarchy.points[w],
                scale=c / 6.0, c=c, p=V.p,
                jl_seed=derive_seed(config.seed, "bottom", w, r),
                backend_kind=config.backend_kind,
            )
            for r in range(replica_count)
        ]
        for w, members in bottom_members.items()
    }
    return oracles, bottom_oracles


def build_ann_index(V: PointSet, config: AnnConfig = AnnConfig()) -> AnnIndex:
    if V.p <= 2:
        raise ValidationError(f"this pipeline requires p > 2, got {V.p}")
    c = config.resolve_c(V.p)
    hierarchy = build_hierarchy(V)
    stats = set_stats(V) if V.n >= 2 else None
    replica_count = _replica_count(V, stats, config.amplification_multiplier)
    candidate_sets = build_candidate_sets(hierarchy, c)

    # per bottom point, everything within distance 6 (the pool for the final
    # oracle query after the descent lands)
    bottom_members: dict[int, np.ndarray] = {}
    bottom = hierarchy.level_members(hierarchy.bottom_level)
    chunk = 256
    for s in range(0, bottom.size, chunk):
        ids = bottom[s : s + chunk]
        D = pairwise_dists(hierarchy.points[ids], hierarchy.points, hierarchy.p)
        for row, w in enumerate(ids):
            bottom_members[int(w)] = np.nonzero(D[row] <= 6.0)[0].astype(np.int64)

    oracles, bottom_oracles = _make_oracles(
        V, hierarchy, config, c, replica_count, candidate_sets, bottom_members
    )
    return AnnIndex(
        pointset=V, config=config, c=c, hierarchy=hierarchy, stats=stats,
        replica_count=replica_count, candidate_sets=candidate_sets,
        oracles=oracles, bottom_members=bottom_members, bottom_oracles=bottom_oracles,
    )


def coarse_start(I: AnnIndex, q, coarse_id: int | None = None) -> tuple[int, int]:
    """Starting point of interest. Default: the root at the top level.

    An externally supplied coarse answer (a database id) is converted into
    its hierarchy ancestor at level ceil(log2 dist), preserving the loop
    invariant without the full top-down walk.
    """
    H = I.hierarchy
    if coarse_id is None:
        return H.root, H.top_level
    qn = np.asarray(q, dtype=np.float64) / H.normalization
    d = lp_dist(qn, H.points[coarse_id], H.p)
    if d <= 0:
        return int(coarse_id), H.bottom_level
    i = min(max(math.ceil(math.log2(d)), H.bottom_level), H.top_level)
    t = H.ancestor(int(coarse_id), i)
    if lp_dist(qn, H.points[t], H.p) <= 3.0 * 2.0**i:
        return t, i
    return H.root, H.top_level  # supplied answer too coarse; fall back


def query_ann(I: AnnIndex, q, coarse_id: int | None = None) -> AnnAnswer:
    """Navigating descent with three certified termination cases."""
    V = I.pointset
    q = np.asarray(q, dtype=np.float64)
    if q.shape != (V.d,):
        raise ValidationError(f"query shape {q.shape} != ({V.d},)")
    H = I.hierarchy
    qn = q / H.normalization
    trace = DescentTrace()
    t, i = coarse_start(I, q, coarse_id)

    dt = lp_dist(qn, H.points[t], H.p)
    if dt > 3.0 * 2.0**i:
        # every point sits within 2*2^top of the root, so the root is a 3-ANN
        trace.termination = "root_far"
        trace.termination_level = i
        trace.certified_factor = 3.0
        trace.opt_lower_bound = dt - 2.0 * 2.0**i
        return _finish(I, q, trace, t)

    while i > H.bottom_level:
        trace.steps.append(DescentStep(level=i, node=t, node_dist=dt, bound=3.0 * 2.0**i, outcome=""))
        ans, tried = I._query_replicas(I.oracles.get((t, i), []), qn, trace)
        trace.steps[-1].replicas_tried = tried
        if ans is None:
            trace.steps[-1].outcome = "null"
            trace.termination = "null_stop"
            trace.termination_level = i
            trace.certified_factor = 6.0 * I.c
            trace.opt_lower_bound = 2.0**i / (2.0 * I.c)
            return _finish(I, q, trace, t)
        member, _sd = ans
        trace.steps[-1].outcome = "advance"
        t = H.ancestor(member, i - 1)
        i -= 1
        dt = lp_dist(qn, H.points[t], H.p)
        if dt > 3.0 * 2.0**i:
            raise AssertionError(f"descent invariant broken at level {i}: {dt} > {3.0 * 2.0 ** i}")

    # bottom: the point of interest w satisfies d(w, q) <= 3; the answer is
    # either w itself or something within 6 of it
    trace.steps.append(DescentStep(level=i, node=t, node_dist=dt, bound=3.0 * 2.0**i, outcome="bottom"))
    trace.termination = "bottom_hit"
    trace.termination_level = i
    ans, tried = I._query_replicas(I.bottom_oracles.get(int(t), []), qn, trace)
    trace.steps[-1].replicas_tried = tried
    if ans is not None:
        member, _sd = ans
        trace.certified_factor = 2.0
        return _finish(I, q, trace, member)
    trace.certified_factor = I.c / 2.0
    trace.opt_lower_bound = 6.0 / I.c
    return _finish(I, q, trace, t)


def _finish(I: AnnIndex, q: np.ndarray, trace: DescentTrace, answer_id: int) -> AnnAnswer:
    dist = lp_dist(q, I.pointset.points[answer_id], I.pointset.p)
    trace.answer_id = int(answer_id)
    trace.answer_dist = float(dist)
    return AnnAnswer(id=int(answer_id), dist=float(dist), trace=trace)


def refine_ann(I: AnnIndex, q, t0: AnnAnswer, eps: float) -> tuple[int, float]:
    """Continue the descent with candidate sets until the level radius is
    small against the best distance found, then the best candidate seen is a
    (1+eps)-approximate answer."""
    if eps <= 0:
        raise ValidationError(f"eps must be positive, got {eps}")
    if 1.0 + eps >= t0.trace.certified_factor:
        return t0.id, t0.dist
    V = I.pointset
    H = I.hierarchy
    q = np.asarray(q, dtype=np.float64)
    qn = q / H.normalization

    j = t0.trace.termination_level
    best_id = t0.id
    best = lp_dist(qn, H.points[best_id], H.p)
    # one extra level of slack for the stopping rule's (1+eps) denominator
    budget = math.ceil(math.log2(6.0 * I.c)) + max(0, math.ceil(math.log2(1.0 / eps))) + 1

    members = H.level_members(j)
    dists = dist_to_points(H.points[members], qn, H.p)
    k = int(np.argmin(dists))
    if dists[k] < best:
        best, best_id = float(dists[k]), int(members[k])
    frontier = members[dists <= best + 2.0 * 2.0**j]

    while j > H.bottom_level and budget > 0 and 2.0 * 2.0**j > (eps / (1.0 + eps)) * best:
        nxt = np.unique(np.concatenate([H.children(int(v), j) for v in frontier]))
        dists = dist_to_points(H.points[nxt], qn, H.p)
        k = int(np.argmin(dists))
        if dists[k] < best:
            best, best_id = float(dists[k]), int(nxt[k])
        j -= 1
        budget -= 1
        frontier = nxt[dists <= best + 2.0 * 2.0**j]

    return best_id, lp_dist(q, V.points[best_id], V.p)
