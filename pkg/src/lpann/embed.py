"""The three embeddings behind the search pipelines.

1. A randomized coordinate-scaling map into the max norm, built from
   max-stable (Frechet) random variables: distances never shrink with high
   probability, and expand by at most 2b with probability 1 - 2^-p per pair.
2. The scaled Mazur map into the Euclidean norm: deterministic, non-expansive
   on a C-ball, with a distance-dependent contraction floor.
3. A seeded Gaussian random projection sized so that pairwise expansion above
   1x and contraction below 1/2x are both improbable.

All randomness derives from explicit 64-bit seeds so structures rebuild
bit-identically.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import ValidationError, abs_pow

_MASK64 = (1 << 64) - 1


def _splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return x ^ (x >> 31)


def _tag64(tag) -> int:
    if isinstance(tag, (int, np.integer)):
        return int(tag) & _MASK64
    # FNV-1a over the UTF-8 bytes: stable across processes, unlike hash().
    h = 0xCBF29CE484222325
    for b in str(tag).encode("utf-8"):
        h = ((h ^ b) * 0x100000001B3) & _MASK64
    return h


def derive_seed(root: int, *tags) -> int:
    """Derive a component seed: root XOR stable tag, mixed per tag."""
    h = int(root) & _MASK64
    for t in tags:
        h = _splitmix64(h ^ _tag64(t))
    return h


def open_uniform(rng: np.random.Generator, size) -> np.ndarray:
    """Uniforms strictly inside (0, 1): midpoints of a 2^53 grid."""
    return (rng.integers(0, 1 << 53, size=size).astype(np.float64) + 0.5) * 2.0**-53


def sample_frechet(p: float, u):
    """Inverse-CDF sample (-ln u)^(-1/p) of the law P[Z <= x] = exp(-x^-p)."""
    u = np.asarray(u, dtype=np.float64)
    if np.any(u <= 0.0) or np.any(u >= 1.0):
        raise ValidationError("uniform input must lie strictly inside (0, 1)")
    z = (-np.log(u)) ** (-1.0 / p)
    return float(z) if z.ndim == 0 else z


def frechet_scale_b(n: int, p: float) -> float:
    """Scale making the coordinate map non-contractive with probability 1 - 1/n."""
    if n < 2:
        raise ValidationError(f"need n >= 2, got {n}")
    return (3.0 * math.log(n)) ** (1.0 / p)


def net_contraction_threshold(c: float, ddim: float, p: float) -> float:
    """Radius beyond which a 1-separated set stays farther than c in the max norm.

    ddim below 2 is clamped to 2 (the bound is only stated for ddim >= 2).
    """
    if c < 4:
        raise ValidationError(f"need c >= 4, got {c}")
    ddim = max(float(ddim), 2.0)
    return c * (8.0 * math.log2(c) * ddim * math.log(ddim)) ** (1.0 / p)


@dataclass(frozen=True)
class FrechetEmbedding:
    """Coordinate scaling v -> (b*v_1*z_1, ..., b*v_d*z_d) with z_i max-stable."""

    z: np.ndarray
    b: float
    p: float
    seed: int

    def __post_init__(self):
        z = np.asarray(self.z, dtype=np.float64)
        if z.ndim != 1 or not np.all(np.isfinite(z)) or np.any(z <= 0):
            raise ValidationError("scaling coordinates must be positive finite reals")
        z.setflags(write=False)
        object.__setattr__(self, "z", z)

    @property
    def d(self) -> int:
        return self.z.size

    @classmethod
    def generate(cls, d: int, p: float, seed: int, b: float = 1.0) -> "FrechetEmbedding":
        """Regenerating with the same (seed, d, p) reproduces z bit-exactly."""
        rng = np.random.default_rng(seed & _MASK64)
        z = sample_frechet(p, open_uniform(rng, d))
        return cls(z=z, b=float(b), p=float(p), seed=int(seed) & _MASK64)


def frechet_apply(E: FrechetEmbedding, v) -> np.ndarray:
    """Apply the map to a vector or to rows of a matrix. Linear in v."""
    v = np.asarray(v, dtype=np.float64)
    if v.shape[-1] != E.d:
        raise ValidationError(f"dimension mismatch: {v.shape[-1]} != {E.d}")
    return E.b * v * E.z


@dataclass(frozen=True)
class MazurParams:
    """Parameters of the scaled power map from the p-norm into the q-norm.

    The raw map raises coordinate magnitudes to p/q, preserving sign; the
    result is multiplied by scale = q / (p * C^(p/q - 1)) so that the map is
    non-expansive on the ball of p-norm radius C.
    """

    p: float
    C: float
    q: float = 2.0

    def __post_init__(self):
        if not (self.p > self.q):
            raise ValidationError(f"need p > q, got p={self.p}, q={self.q}")
        if not (self.C > 0):
            raise ValidationError(f"need C > 0, got {self.C}")

    @property
    def scale(self) -> float:
        return self.q / (self.p * self.C ** (self.p / self.q - 1.0))

    def contraction_floor(self, u: float) -> float:
        """Lower bound on the image distance of a pair at p-norm distance u."""
        return (self.q / self.p) * (2.0 * self.C) ** (1.0 - self.p / self.q) * u ** (self.p / self.q)


def mazur_map(v, mp: MazurParams, norm_slack: float = 1e-9) -> np.ndarray:
    """Sign-preserving scaled power map; rejects inputs outside the C-ball.

    Magnitudes are normalized by C before exponentiation so intermediates
    stay <= 1 for any p.
    """
    v = np.asarray(v, dtype=np.float64)
    arr = v[None, :] if v.ndim == 1 else v
    if math.isinf(mp.p):
        raise ValidationError("power map requires a finite exponent")
    norms = abs_pow(arr, mp.p).sum(axis=1) ** (1.0 / mp.p)
    bad = norms > mp.C * (1.0 + norm_slack)
    if np.any(bad):
        i = int(np.nonzero(bad)[0][0])
        raise ValidationError(
            f"input norm {norms[i]:.6g} exceeds the map's bound C={mp.C:.6g}"
        )
    # scale * |v|^(p/q) == (q*C/p) * |v/C|^(p/q)
    out = (mp.q * mp.C / mp.p) * np.sign(arr) * abs_pow(arr / mp.C, mp.p / mp.q)
    return out[0] if v.ndim == 1 else out


@dataclass(frozen=True)
class JlProjection:
    """Seeded Gaussian projection into k dims, entries scaled by 1/((1+eps0)*sqrt(k)).

    When k >= d the projection is the identity (matrix is None) and the
    distortion guarantees hold vacuously.
    """

    matrix: np.ndarray | None
    k: int
    d: int
    scale_down: float
    seed: int

    @classmethod
    def generate(cls, d: int, n: int, seed: int, eps0: float = 0.25) -> "JlProjection":
        k = max(32, math.ceil(24.0 * math.log(max(n, 2))))
        scale_down = 1.0 / (1.0 + eps0)
        if k >= d:
            return cls(matrix=None, k=d, d=d, scale_down=scale_down, seed=int(seed) & _MASK64)
        rng = np.random.default_rng(seed & _MASK64)
        m = rng.standard_normal((k, d)) * (scale_down / math.sqrt(k))
        m.setflags(write=False)
        return cls(matrix=m, k=k, d=d, scale_down=scale_down, seed=int(seed) & _MASK64)

    @property
    def is_identity(self) -> bool:
        return self.matrix is None


def jl_apply(J: JlProjection, v) -> np.ndarray:
    """Project a vector or matrix rows; exact identity when k >= d."""
    v = np.asarray(v, dtype=np.float64)
    if v.shape[-1] != J.d:
        raise ValidationError(f"dimension mismatch: {v.shape[-1]} != {J.d}")
    if J.matrix is None:
        return v.copy()
    return v @ J.matrix.T
