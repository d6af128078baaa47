"""Leveled nets over a point set, with parent links and candidate sets.

Level i holds a net whose points are pairwise >= 2^i apart while covering the
level below within < 2^i. The bottom level is the whole set (normalized so
the minimum inter-point distance is 1) and the top level is a single root.
Nets are nested, so the structure is stored compressed: each point records
the highest level it reaches and the parent it hands off to above that.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import (
    PointSet,
    ValidationError,
    ddim_estimate,
    dist_to_points,
    pairwise_dists,
)


@dataclass
class NetHierarchy:
    points: np.ndarray  # working coordinates (normalized unless disabled)
    p: float
    normalization: float  # original coordinates = points * normalization
    max_level: np.ndarray  # (n,) highest level at which each point is a net member
    drop_parent: np.ndarray  # (n,) parent adopted at level max_level+1; -1 for the root
    bottom_level: int
    top_level: int
    _level_cache: dict = field(default_factory=dict, repr=False)
    _anc_cache: dict = field(default_factory=dict, repr=False)
    _children_cache: dict = field(default_factory=dict, repr=False)

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def root(self) -> int:
        return int(np.argmax(self.max_level))

    def level_members(self, i: int) -> np.ndarray:
        """Ids of net members at level i, ascending."""
        if not (self.bottom_level <= i <= self.top_level):
            raise ValidationError(f"level {i} outside [{self.bottom_level}, {self.top_level}]")
        if i not in self._level_cache:
            self._level_cache[i] = np.nonzero(self.max_level >= i)[0]
        return self._level_cache[i]

    def ancestor(self, point_id: int, j: int) -> int:
        """Ancestor of a point at level j via parent-chain walking."""
        if not (self.bottom_level <= j <= self.top_level):
            raise ValidationError(f"level {j} outside [{self.bottom_level}, {self.top_level}]")
        x = int(point_id)
        while self.max_level[x] < j:
            x = int(self.drop_parent[x])
        return x

    def ancestor_table(self, j: int) -> np.ndarray:
        """Vector of level-j ancestors for every point (memoized per level)."""
        if not (self.bottom_level <= j <= self.top_level):
            raise ValidationError(f"level {j} outside [{self.bottom_level}, {self.top_level}]")
        if j in self._anc_cache:
            return self._anc_cache[j]
        if j == self.bottom_level:
            table = np.arange(self.n)
        else:
            table = self.ancestor_table(j - 1).copy()
            hop = self.max_level[table] < j
            table[hop] = self.drop_parent[table[hop]]
        self._anc_cache[j] = table
        return table

    def children(self, node: int, i: int) -> np.ndarray:
        """Members of level i-1 whose parent at level i is `node`."""
        if i not in self._children_cache:
            groups: dict[int, list[int]] = {}
            dropped = np.nonzero(self.max_level == i - 1)[0]
            for v in dropped:
                groups.setdefault(int(self.drop_parent[v]), []).append(int(v))
            self._children_cache[i] = groups
        extra = self._children_cache[i].get(int(node), [])
        return np.array([int(node)] + extra, dtype=np.int64)

    def dump_text(self) -> str:
        """Human-readable dump, one level per section (for trace inspection)."""
        lines = []
        for i in range(self.top_level, self.bottom_level - 1, -1):
            members = self.level_members(i)
            lines.append(f"level {i} (radius {2.0 ** i:g}): {members.tolist()}")
            if i > self.bottom_level:
                drops = np.nonzero(self.max_level == i - 1)[0]
                for v in drops:
                    lines.append(f"  {v} -> parent {int(self.drop_parent[v])}")
        return "\n".join(lines) + "\n"


def greedy_net(points: np.ndarray, p: float, radius: float, ids: np.ndarray | None = None) -> np.ndarray:
    """Greedy net in ascending-id order: keep a point iff it is >= radius
    from everything kept so far. Kept points separate by >= radius; every
    rejected point lies within < radius of some kept point."""
    if ids is None:
        ids = np.arange(points.shape[0])
    kept: list[int] = []
    sel: np.ndarray | None = None
    for j, pid in enumerate(ids):
        if sel is None:
            kept.append(int(pid))
            sel = points[j][None, :]
            continue
        if dist_to_points(sel, points[j], p).min() >= radius:
            kept.append(int(pid))
            sel = np.vstack([sel, points[j][None, :]])
    return np.asarray(kept, dtype=np.int64)


def build_hierarchy(V: PointSet, normalize: bool = True) -> NetHierarchy:
    """Construct the full net hierarchy bottom-up by greedy selection."""
    n = V.n
    if n == 1:
        pts = V.points.astype(np.float64)
        return NetHierarchy(
            points=pts, p=V.p, normalization=1.0,
            max_level=np.zeros(1, dtype=np.int64),
            drop_parent=np.full(1, -1, dtype=np.int64),
            bottom_level=0, top_level=0,
        )

    D0 = pairwise_dists(V.points, V.points, V.p)
    iu = np.triu_indices(n, k=1)
    min_dist = float(D0[iu].min())
    if normalize:
        work = V.points / min_dist
        bottom = 0
    else:
        work = V.points.astype(np.float64)
        bottom = math.floor(math.log2(min_dist))

    max_level = np.full(n, bottom, dtype=np.int64)
    drop_parent = np.full(n, -1, dtype=np.int64)

    current = np.arange(n)
    i = bottom
    while current.size > 1:
        i += 1
        radius = 2.0**i
        sub = work[current]
        kept_ids = greedy_net(sub, V.p, radius, ids=current)
        kept_set = set(int(k) for k in kept_ids)
        kept_pts = work[kept_ids]
        for v in current:
            if int(v) in kept_set:
                max_level[v] = i
            else:
                dists = dist_to_points(kept_pts, work[v], V.p)
                j = int(np.argmin(dists))  # first minimum = smallest covering id
                if dists[j] >= radius:
                    raise AssertionError("net covering violated during construction")
                drop_parent[v] = int(kept_ids[j])
        current = kept_ids

    drop_parent[current[0]] = -1
    return NetHierarchy(
        points=np.ascontiguousarray(work), p=V.p, normalization=min_dist if normalize else 1.0,
        max_level=max_level, drop_parent=drop_parent,
        bottom_level=bottom, top_level=int(i if n > 1 else bottom),
    )


def level_ancestor(H: NetHierarchy, point_id: int, j: int) -> int:
    """Ancestor at level j; asserts the geometric bound dist < 2 * 2^j."""
    a = H.ancestor(point_id, j)
    d = dist_to_points(H.points[a][None, :], H.points[point_id], H.p)[0]
    if d >= 2.0 * 2.0**j:
        raise AssertionError(f"ancestor bound violated: dist {d} at level {j}")
    return a


@dataclass(frozen=True)
class CandidateSet:
    """Per-(node, level) search pool, recorded with the transform that takes
    it into a ball of radius c around the origin."""

    node: int
    level: int
    member_ids: np.ndarray
    translation: np.ndarray  # coordinates of the owning node
    scale: float  # c / (4.5 * 2^level)


def build_candidate_sets(H: NetHierarchy, c: float) -> dict[tuple[int, int], CandidateSet]:
    """All candidate sets N(node, level) for levels above the bottom.

    Members are the level-(i-1) net points within 4.5 * 2^i of the node plus
    all their descendants at level i - ceil(log2(4c)) (clamped to the bottom)
    inside the same ball.
    """
    if c <= 1:
        raise ValidationError(f"need c > 1, got {c}")
    k_drop = math.ceil(math.log2(4.0 * c))
    sets: dict[tuple[int, int], CandidateSet] = {}
    for i in range(H.bottom_level + 1, H.top_level + 1):
        radius = 4.5 * 2.0**i
        k = max(i - k_drop, H.bottom_level)
        anc = H.ancestor_table(i - 1)
        in_sk = H.max_level >= k
        for t in H.level_members(i):
            dist_t = dist_to_points(H.points, H.points[t], H.p)
            mask = in_sk & (dist_t <= radius) & (dist_t[anc] <= radius)
            sets[(int(t), i)] = CandidateSet(
                node=int(t), level=i,
                member_ids=np.nonzero(mask)[0].astype(np.int64),
                translation=H.points[t].copy(),
                scale=c / radius,
            )
    return sets


@dataclass
class NetReport:
    ok: bool
    checks: dict[str, bool]
    failures: list[str]


def verify_nets(H: NetHierarchy, ddim_est: float | None = None, max_centers: int = 16) -> NetReport:
    """Brute-force audit: separation, covering, root uniqueness, ancestor
    bound, and the packing inequality per level."""
    checks = {"separation": True, "covering": True, "root": True, "ancestor": True, "packing": True}
    failures: list[str] = []

    if H.level_members(H.top_level).size != 1:
        checks["root"] = False
        failures.append(f"top level has {H.level_members(H.top_level).size} members")

    if ddim_est is None:
        ddim_est = ddim_estimate(H.points, H.p)
    expo = max(1, math.ceil(ddim_est))

    for i in range(H.bottom_level + 1, H.top_level + 1):
        radius = 2.0**i
        members = H.level_members(i)
        below = H.level_members(i - 1)
        Dm = pairwise_dists(H.points[members], H.points[members], H.p)
        if members.size > 1:
            off = Dm[np.triu_indices(members.size, k=1)]
            if off.min() < radius:
                checks["separation"] = False
                failures.append(f"level {i}: separation {off.min():.6g} < {radius:g}")
        cover = pairwise_dists(H.points[below], H.points[members], H.p).min(axis=1)
        for v in below[cover >= radius]:
            checks["covering"] = False
            failures.append(f"level {i}: point {v} uncovered")
        # packing audit on strided sample balls within the level
        sample = members[:: max(1, members.size // max_centers)][:max_centers]
        for x in sample:
            dx = dist_to_points(H.points[members], H.points[x], H.p)
            for R in (2.0 * radius, 8.0 * radius):
                count = int((dx <= R).sum())
                bound = (2.0 * 2.0 * R / radius) ** expo
                if count > bound:
                    checks["packing"] = False
                    failures.append(
                        f"level {i}: ball({x}, {R:g}) holds {count} > bound {bound:.6g}"
                    )

    for v in range(H.n):
        for j in range(H.bottom_level, H.top_level + 1):
            a = H.ancestor(v, j)
            d = dist_to_points(H.points[a][None, :], H.points[v], H.p)[0]
            if d >= 2.0 * 2.0**j:
                checks["ancestor"] = False
                failures.append(f"ancestor({v}, {j}) = {a} at dist {d:.6g} >= {2.0 * 2.0 ** j:g}")

    return NetReport(ok=all(checks.values()), checks=checks, failures=failures)
