"""Reduction from nearest-neighbor search to fixed-radius near-neighbor oracles.

A geometric ladder of radii spans [min_dist/2, diam]; binary search over the
rungs finds the smallest radius whose oracle still answers, which pins the
optimum within a factor 2 on top of the oracle's own factor.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

from .core import SetStats, ValidationError

RungAnswer = Optional[tuple[int, float]]


@dataclass(frozen=True)
class RadiusLadder:
    """Descending radii with exact ratio 2 between consecutive rungs."""

    radii: tuple[float, ...]

    def __post_init__(self):
        if not self.radii:
            raise ValidationError("ladder needs at least one rung")
        for a, b in zip(self.radii[:-1], self.radii[1:]):
            if a != 2.0 * b:
                raise ValidationError("consecutive rung ratio must be exactly 2")

    def __len__(self) -> int:
        return len(self.radii)


def ladder_radii(stats: SetStats, include_half_min: bool = False) -> RadiusLadder:
    """Rungs diam, diam/2, ... down to the first value <= min_dist.

    Length is ceil(log2(aspect_ratio)) + 1; include_half_min appends one
    extra halving below the minimum inter-point distance.
    """
    steps = max(0, math.ceil(math.log2(stats.aspect_ratio)))
    radii = [stats.diam / 2.0**k for k in range(steps + 1)]
    if include_half_min:
        radii.append(radii[-1] / 2.0)
    return RadiusLadder(radii=tuple(radii))


@dataclass
class LadderOutcome:
    answer: RungAnswer
    rung_index: int | None  # rung whose answer was returned
    invocations: int  # oracle calls made by the binary search (memoized)
    fallback_used: bool  # all-null escalation
    inconsistent: bool  # adjacent-rung verification failed, linear rescan used
    scan_invocations: int  # extra calls spent by the linear rescan, if any


def ann_via_ladder(
    ladder: RadiusLadder,
    oracle_query: Callable[[int], RungAnswer],
    on_all_null: Callable[[], RungAnswer] | None = None,
) -> LadderOutcome:
    """Binary search for the smallest-radius rung that answers non-null.

    Rung oracles must obey the near-neighbor contract at their radius; the
    search then returns a 2c-approximate answer in <= ceil(log2 #rungs) + 2
    invocations. Because real oracles can be probabilistic, the boundary is
    re-verified at the adjacent rung; on inconsistency a linear rescan from
    the smallest radius recovers the best available rung (counted apart).
    """
    R = len(ladder)
    memo: dict[int, RungAnswer] = {}
    calls = 0

    def probe(j: int) -> RungAnswer:
        nonlocal calls
        if j not in memo:
            memo[j] = oracle_query(j)
            calls += 1
        return memo[j]

    if probe(0) is None:
        fallback = on_all_null() if on_all_null is not None else None
        return LadderOutcome(answer=fallback, rung_index=None, invocations=calls,
                             fallback_used=True, inconsistent=False, scan_invocations=0)

    lo, hi = 0, R - 1
    while lo < hi:
        mid = (lo + hi + 1) // 2
        if probe(mid) is not None:
            lo = mid
        else:
            hi = mid - 1
    j = lo

    # one extra adjacent probe: the rung below the boundary must be null
    adjacent = probe(j + 1) if j + 1 < R else None
    search_calls = calls
    assert search_calls <= math.ceil(math.log2(R)) + 2, "invocation budget exceeded"

    if adjacent is not None:
        best = None
        for k in range(R - 1, -1, -1):
            if probe(k) is not None:
                best = k
                break
        return LadderOutcome(answer=memo[best], rung_index=best, invocations=search_calls,
                             fallback_used=False, inconsistent=True,
                             scan_invocations=calls - search_calls)

    return LadderOutcome(answer=memo[j], rung_index=j, invocations=search_calls,
                         fallback_used=False, inconsistent=False, scan_invocations=0)
