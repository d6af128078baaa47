"""Vector primitives, exact brute-force oracles, and point-set statistics.

Everything else in the package is built on top of (and tested against) the
operations in this module, so they stay deliberately simple: quadratic scans,
float64 throughout, no approximations.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np

# Tag selecting coordinate-max semantics for the norm exponent. Only a true
# IEEE infinity triggers the max branch; large finite exponents do not.
LINF = float("inf")

LPAN_MAGIC = b"LPAN"
LPAN_VERSION = 1

# Quiet NaN with zero payload, the on-disk encoding of the LINF exponent.
_NAN_PAYLOAD0 = struct.unpack("<d", struct.pack("<Q", 0x7FF8000000000000))[0]


class ValidationError(ValueError):
    """An input violated a documented precondition."""


def _as_vector(v) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1 or v.size == 0:
        raise ValidationError(f"expected a non-empty 1-D vector, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise ValidationError("vector has non-finite coordinates")
    return v


def abs_pow(x: np.ndarray, p: float) -> np.ndarray:
    """|x|**p elementwise, via exp(p*ln|x|) with an explicit zero branch."""
    a = np.abs(np.asarray(x, dtype=np.float64))
    out = np.zeros_like(a)
    nz = a > 0.0
    out[nz] = np.exp(p * np.log(a[nz]))
    return out


def lp_norm(v, p: float) -> float:
    """(sum |v_i|^p)^(1/p); coordinate max when p is the LINF tag."""
    v = _as_vector(v)
    if math.isinf(p):
        return float(np.max(np.abs(v)))
    if p < 1:
        raise ValidationError(f"norm exponent must be >= 1 or LINF, got {p}")
    s = float(abs_pow(v, p).sum())
    return s ** (1.0 / p) if s > 0.0 else 0.0


def lp_dist(u, v, p: float) -> float:
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape:
        raise ValidationError(f"dimension mismatch: {u.shape} vs {v.shape}")
    return lp_norm(u - v, p)


def dist_to_points(points: np.ndarray, q: np.ndarray, p: float) -> np.ndarray:
    """Distances from q to every row of points (vectorized lp_dist)."""
    diffs = np.abs(points - q[None, :])
    if math.isinf(p):
        return diffs.max(axis=1)
    s = abs_pow(diffs, p).sum(axis=1)
    out = np.zeros_like(s)
    pos = s > 0.0
    out[pos] = np.exp(np.log(s[pos]) / p)
    return out


def pairwise_dists(A: np.ndarray, B: np.ndarray, p: float, chunk: int = 256) -> np.ndarray:
    """Full |A| x |B| distance matrix, chunked to bound peak memory."""
    out = np.empty((A.shape[0], B.shape[0]), dtype=np.float64)
    for i in range(0, A.shape[0], chunk):
        D = np.abs(A[i : i + chunk, None, :] - B[None, :, :])
        if math.isinf(p):
            out[i : i + chunk] = D.max(axis=2)
        else:
            s = abs_pow(D, p).sum(axis=2)
            blk = np.zeros_like(s)
            pos = s > 0.0
            blk[pos] = np.exp(np.log(s[pos]) / p)
            out[i : i + chunk] = blk
    return out


@dataclass(frozen=True)
class PointSet:
    """Database of n d-dimensional float64 vectors with its norm exponent.

    Point ids are the row indices 0..n-1. Construction rejects duplicate
    rows: downstream structures assume a positive minimum inter-point
    distance.
    """

    points: np.ndarray
    p: float

    def __post_init__(self):
        pts = np.array(self.points, dtype=np.float64, copy=True)
        if pts.ndim != 2 or pts.shape[0] < 1 or pts.shape[1] < 1:
            raise ValidationError(f"points must be a non-empty 2-D array, got shape {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise ValidationError("points contain non-finite coordinates")
        if not math.isinf(self.p) and self.p <= 0:
            raise ValidationError(f"norm exponent must be > 0 or LINF, got {self.p}")
        dupes = _duplicate_rows(pts)
        if dupes:
            shown = ", ".join(f"{a}=={b}" for a, b in dupes[:8])
            raise ValidationError(f"duplicate points rejected (ids {shown})")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def d(self) -> int:
        return self.points.shape[1]

    @property
    def ids(self) -> np.ndarray:
        return np.arange(self.n)


def _duplicate_rows(pts: np.ndarray) -> list[tuple[int, int]]:
    order = np.lexsort(pts.T[::-1])
    pairs = []
    for a, b in zip(order[:-1], order[1:]):
        if np.array_equal(pts[a], pts[b]):
            pairs.append((min(a, b), max(a, b)))
    return pairs


@dataclass(frozen=True)
class DistanceReport:
    """One query outcome, with the distance recomputed from raw coordinates."""

    query_id: int
    returned_id: int | None
    dist: float
    opt_dist: float
    ratio: float | None  # undefined (None) when returned_id is None


@dataclass(frozen=True)
class SetStats:
    diam: float
    min_dist: float
    aspect_ratio: float
    ddim_est: float


def brute_force_nn(V: PointSet, q) -> tuple[int, float]:
    """Exact nearest neighbor; ties broken by smallest id."""
    q = _as_vector(q)
    if q.size != V.d:
        raise ValidationError(f"query dim {q.size} != dataset dim {V.d}")
    dists = dist_to_points(V.points, q, V.p)
    i = int(np.argmin(dists))  # argmin returns the first (smallest-id) minimum
    return i, float(dists[i])


def brute_force_near(V: PointSet, q, r: float) -> int | None:
    """Exact fixed-radius oracle: some id at distance <= r, else None."""
    if r <= 0:
        raise ValidationError(f"radius must be positive, got {r}")
    i, d = brute_force_nn(V, q)
    return i if d <= r else None


def set_stats(V: PointSet, max_centers: int = 24) -> SetStats:
    """Exact diameter / minimum distance plus a packing-based dimension estimate."""
    if V.n < 2:
        raise ValidationError("statistics require at least 2 points")
    D = pairwise_dists(V.points, V.points, V.p)
    iu = np.triu_indices(V.n, k=1)
    vals = D[iu]
    diam = float(vals.max())
    min_dist = float(vals.min())
    ddim = ddim_estimate(V.points, V.p, dist_matrix=D, min_dist=min_dist, diam=diam,
                         max_centers=max_centers)
    return SetStats(diam=diam, min_dist=min_dist, aspect_ratio=diam / min_dist, ddim_est=ddim)


def greedy_packing_count(points: np.ndarray, p: float, sep: float) -> int:
    """Size of the greedy (ascending-index) packing with pairwise distance >= sep."""
    if points.shape[0] == 0:
        return 0
    chosen = [0]
    sel = points[0][None, :]
    for i in range(1, points.shape[0]):
        if dist_to_points(sel, points[i], p).min() >= sep:
            chosen.append(i)
            sel = points[chosen]
    return len(chosen)


def ddim_estimate(
    pts: np.ndarray,
    p: float,
    dist_matrix: np.ndarray | None = None,
    min_dist: float | None = None,
    diam: float | None = None,
    max_centers: int = 24,
    ball_cap: int = 256,
) -> float:
    """Doubling-dimension estimate: max log2 of a greedy rho-packing of any
    sampled ball of radius 2*rho, rho swept over powers of two.

    Deterministic (strided) center and ball subsampling; this is an estimate,
    not a certified dimension.
    """
    n = pts.shape[0]
    if n < 2:
        return 0.0
    D = dist_matrix if dist_matrix is not None else pairwise_dists(pts, pts, p)
    if min_dist is None or diam is None:
        iu = np.triu_indices(n, k=1)
        vals = D[iu]
        min_dist, diam = float(vals.min()), float(vals.max())
    centers = np.arange(n)[:: max(1, n // max_centers)][:max_centers]
    best = 0.0
    rho = min_dist
    while rho <= diam:
        for c in centers:
            ball = np.nonzero(D[c] <= 2.0 * rho)[0]
            if ball.size > ball_cap:
                ball = ball[:: max(1, ball.size // ball_cap)][:ball_cap]
            count = greedy_packing_count(pts[ball], p, rho)
            if count > 1:
                best = max(best, math.log2(count))
        rho *= 2.0
    return best


# Container layout: magic "LPAN", u16 version, u64 n, u64 d, f64 p (LINF
# stored as quiet NaN with zero payload), then n*d little-endian f64 row-major.

_HEAD = "<HQQd"


def matrix_to_bytes(points: np.ndarray, p: float) -> bytes:
    pts = np.ascontiguousarray(points, dtype="<f8")
    p_disk = _NAN_PAYLOAD0 if math.isinf(p) else p
    head = LPAN_MAGIC + struct.pack(_HEAD, LPAN_VERSION, pts.shape[0], pts.shape[1], p_disk)
    return head + pts.tobytes()


def matrix_from_bytes(data: bytes) -> tuple[np.ndarray, float]:
    if data[:4] != LPAN_MAGIC:
        raise ValidationError("bad magic: not a point-set container")
    ver, n, d, p_disk = struct.unpack_from(_HEAD, data, 4)
    if ver != LPAN_VERSION:
        raise ValidationError(f"unsupported container version {ver}")
    expect = 4 + struct.calcsize(_HEAD) + 8 * n * d
    if len(data) != expect:
        raise ValidationError(f"truncated container: {len(data)} bytes, expected {expect}")
    pts = np.frombuffer(data, dtype="<f8", offset=4 + struct.calcsize(_HEAD)).reshape(n, d)
    if not np.all(np.isfinite(pts)):
        raise ValidationError("container holds non-finite coordinates")
    p = LINF if math.isnan(p_disk) else p_disk
    return pts.astype(np.float64), p


def save_points(V: PointSet, path: str) -> None:
    with open(path, "wb") as f:
        f.write(matrix_to_bytes(V.points, V.p))


def load_points(path: str) -> PointSet:
    """Load a database point set (duplicate rows rejected)."""
    with open(path, "rb") as f:
        pts, p = matrix_from_bytes(f.read())
    return PointSet(points=pts, p=p)


def save_matrix(points: np.ndarray, p: float, path: str) -> None:
    with open(path, "wb") as f:
        f.write(matrix_to_bytes(points, p))


def load_matrix(path: str) -> tuple[np.ndarray, float]:
    """Load a raw matrix (query files: duplicates permitted)."""
    with open(path, "rb") as f:
        return matrix_from_bytes(f.read())
