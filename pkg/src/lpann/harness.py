"""Dataset generators, the experiment runner, and statistical verification.

Every experiment is fully determined by its config plus seed: datasets,
queries, index randomness, and the JSON-lines report bytes all re-derive.
Ground truth comes from exhaustive brute force on every query, which is what
makes approximation-factor claims checkable at this scale.
"""

from __future__ import annotations

import hashlib
import json
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import stats as sps

from .core import (
    DistanceReport,
    PointSet,
    ValidationError,
    abs_pow,
    brute_force_nn,
    ddim_estimate,
    lp_dist,
    lp_norm,
    pairwise_dists,
)
from .embed import (
    FrechetEmbedding,
    MazurParams,
    derive_seed,
    frechet_scale_b,
    jl_apply,
    mazur_map,
    net_contraction_threshold,
    open_uniform,
    sample_frechet,
)
from .hierarchy import verify_nets
from .linf_pipeline import LinfAnnIndex, LinfParams, build_linf_index
from .mazur_pipeline import AnnConfig, AnnIndex, build_ann_index, query_ann, refine_ann

DATASET_KINDS = ("gaussian", "planted", "lowdim-manifold", "grid")


@dataclass(frozen=True)
class DatasetConfig:
    kind: str
    n: int
    d: int
    p: float
    seed: int = 0
    planted_dist: float = 1.0
    manifold_dim: int = 2
    noise: float = 0.01


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: DatasetConfig
    pipeline: str  # linf | linf_ddim | mazur
    n_queries: int = 50
    seed: int = 0
    c_mode: str = "paper"
    c: float | None = None
    amplification_multiplier: int = 3
    backend_kind: str = "exact"
    eps_refine: float | None = None

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        ds = DatasetConfig(**d.pop("dataset"))
        return cls(dataset=ds, **d)

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


def gen_dataset(
    kind: str,
    n: int,
    d: int,
    p: float,
    seed: int = 0,
    n_queries: int = 0,
    planted_dist: float = 1.0,
    manifold_dim: int = 2,
    noise: float = 0.01,
) -> tuple[PointSet, np.ndarray, np.ndarray | None]:
    """Deterministic dataset plus query matrix; planted instances also return
    the exact per-query optimum."""
    if kind not in DATASET_KINDS:
        raise ValidationError(f"unknown dataset kind {kind!r} (have {DATASET_KINDS})")
    if n < 1 or d < 1 or n_queries < 0:
        raise ValidationError(f"bad sizes n={n}, d={d}, n_queries={n_queries}")
    rng = np.random.default_rng(derive_seed(seed, "dataset", kind))
    opts = None

    if kind == "gaussian":
        points = rng.standard_normal((n, d))
        queries = _per_query_gaussian(seed, n_queries, d)
    elif kind == "planted":
        if planted_dist <= 0:
            raise ValidationError("planted_dist must be positive")
        base = rng.standard_normal((n, d))
        if n >= 2:
            D = pairwise_dists(base, base, p)
            m = float(D[np.triu_indices(n, k=1)].min())
            base = base * (11.0 * planted_dist / m)
        points = base
        queries = np.empty((n_queries, d))
        opts = np.full(n_queries, planted_dist)
        for i in range(n_queries):
            qrng = np.random.default_rng(derive_seed(seed, "query", i))
            u = qrng.standard_normal(d)
            u /= lp_norm(u, p)
            queries[i] = points[i % n] + planted_dist * u
    elif kind == "lowdim-manifold":
        k = min(manifold_dim, d)
        basis = np.linalg.qr(rng.standard_normal((d, k)))[0].T  # k orthonormal rows
        points = rng.uniform(-1.0, 1.0, (n, k)) @ basis * 10.0
        points += noise * rng.standard_normal((n, d))
        queries = np.empty((n_queries, d))
        for i in range(n_queries):
            qrng = np.random.default_rng(derive_seed(seed, "query", i))
            queries[i] = qrng.uniform(-1.0, 1.0, k) @ basis * 10.0 + noise * qrng.standard_normal(d)
    else:  # grid
        side = max(2, math.ceil(n ** (1.0 / d)))
        points = np.empty((n, d))
        idx = np.zeros(d, dtype=np.int64)
        for i in range(n):
            points[i] = idx
            for j in range(d - 1, -1, -1):
                idx[j] += 1
                if idx[j] < side:
                    break
                idx[j] = 0
        queries = np.empty((n_queries, d))
        for i in range(n_queries):
            qrng = np.random.default_rng(derive_seed(seed, "query", i))
            queries[i] = qrng.uniform(0.0, side - 1.0, d)

    return PointSet(points=points, p=p), queries, opts


def _per_query_gaussian(seed: int, n_queries: int, d: int) -> np.ndarray:
    out = np.empty((n_queries, d))
    for i in range(n_queries):
        out[i] = np.random.default_rng(derive_seed(seed, "query", i)).standard_normal(d)
    return out


@dataclass
class RunReport:
    config: ExperimentConfig
    reports: list[DistanceReport]
    cases: dict[str, int]
    null_count: int
    fallback_count: int
    certified_violations: int
    oracle_calls: int
    median_ratio: float
    max_ratio: float
    build_seconds: float = field(compare=False, default=0.0)
    query_seconds: float = field(compare=False, default=0.0)

    def to_jsonl(self) -> bytes:
        """Canonical byte content: timings are intentionally excluded so the
        output is reproducible under a fixed seed."""
        lines = []
        for r in self.reports:
            lines.append(json.dumps({
                "dist": r.dist, "opt_dist": r.opt_dist, "query_id": r.query_id,
                "ratio": r.ratio, "returned_id": r.returned_id, "type": "query",
            }, sort_keys=True, separators=(",", ":")))
        lines.append(json.dumps({
            "cases": dict(sorted(self.cases.items())),
            "certified_violations": self.certified_violations,
            "config_hash": self.config.config_hash(),
            "fallback_count": self.fallback_count,
            "max_ratio": self.max_ratio, "median_ratio": self.median_ratio,
            "n_queries": len(self.reports), "null_count": self.null_count,
            "oracle_calls": self.oracle_calls, "seed": self.config.seed,
            "type": "aggregate",
        }, sort_keys=True, separators=(",", ":")))
        return ("\n".join(lines) + "\n").encode("utf-8")

    def summary_table(self) -> str:
        rows = [
            ("pipeline", self.config.pipeline),
            ("queries", str(len(self.reports))),
            ("median ratio", f"{self.median_ratio:.4f}"),
            ("max ratio", f"{self.max_ratio:.4f}"),
            ("cases", json.dumps(self.cases)),
            ("nulls / fallbacks", f"{self.null_count} / {self.fallback_count}"),
            ("certified violations", str(self.certified_violations)),
            ("oracle calls", str(self.oracle_calls)),
            ("build / query sec", f"{self.build_seconds:.2f} / {self.query_seconds:.2f}"),
        ]
        w = max(len(k) for k, _ in rows)
        return "\n".join(f"{k.rjust(w)}  {v}" for k, v in rows)


def build_pipeline(V: PointSet, cfg: ExperimentConfig):
    if cfg.pipeline == "mazur":
        return build_ann_index(V, AnnConfig(
            c_mode=cfg.c_mode, c=cfg.c, seed=cfg.seed,
            amplification_multiplier=cfg.amplification_multiplier,
            backend_kind=cfg.backend_kind,
        ))
    if cfg.pipeline in ("linf", "linf_ddim"):
        return build_linf_index(V, LinfParams(
            variant="ddim" if cfg.pipeline == "linf_ddim" else "cardinality",
            backend_kind=cfg.backend_kind, seed=cfg.seed,
            amplification_multiplier=cfg.amplification_multiplier,
        ))
    raise ValidationError(f"unknown pipeline {cfg.pipeline!r}")


def run_experiment(cfg: ExperimentConfig) -> tuple[RunReport, object]:
    """Build, query, cross-check against brute force. Returns (report, index)."""
    ds = cfg.dataset
    V, queries, planted_opts = gen_dataset(
        ds.kind, ds.n, ds.d, ds.p, seed=ds.seed, n_queries=cfg.n_queries,
        planted_dist=ds.planted_dist, manifold_dim=ds.manifold_dim, noise=ds.noise,
    )
    t0 = time.perf_counter()
    index = build_pipeline(V, cfg)
    build_s = time.perf_counter() - t0

    reports: list[DistanceReport] = []
    cases: dict[str, int] = {}
    nulls = fallbacks = violations = calls = 0
    t0 = time.perf_counter()
    for qi in range(queries.shape[0]):
        q = queries[qi]
        opt_id, opt = brute_force_nn(V, q)
        if planted_opts is not None and abs(opt - planted_opts[qi]) > 1e-9 * max(opt, 1.0):
            raise AssertionError(
                f"planted ground truth mismatch on query {qi}: {opt} vs {planted_opts[qi]}"
            )
        if isinstance(index, AnnIndex):
            ans = query_ann(index, q)
            rid, dist = ans.id, ans.dist
            tr = ans.trace
            cases[tr.termination] = cases.get(tr.termination, 0) + 1
            calls += tr.oracle_calls
            for st in tr.steps:
                if st.node_dist > st.bound:
                    raise AssertionError(f"descent invariant violated on query {qi}: {st}")
            if dist > tr.certified_factor * opt * (1.0 + 1e-9):
                violations += 1
            if cfg.eps_refine is not None:
                rid, dist = refine_ann(index, q, ans, cfg.eps_refine)
        else:
            rid, dist, outcome = index.query(q)
            if outcome is not None:
                calls += outcome.invocations + outcome.scan_invocations
                if outcome.fallback_used:
                    fallbacks += 1
                if outcome.answer is None:
                    nulls += 1
        check = lp_dist(q, V.points[rid], V.p)
        if not math.isclose(check, dist, rel_tol=1e-12, abs_tol=1e-12):
            raise AssertionError(f"distance recomputation mismatch on query {qi}: {check} vs {dist}")
        ratio = 1.0 if opt == dist else (dist / opt if opt > 0 else math.inf)
        if ratio < 1.0 - 1e-12:
            raise AssertionError(f"ratio below 1 on query {qi}: returned better than optimum?")
        reports.append(DistanceReport(query_id=qi, returned_id=rid, dist=dist,
                                      opt_dist=opt, ratio=max(ratio, 1.0)))
    query_s = time.perf_counter() - t0

    ratios = [r.ratio for r in reports]
    report = RunReport(
        config=cfg, reports=reports, cases=cases, null_count=nulls,
        fallback_count=fallbacks, certified_violations=violations, oracle_calls=calls,
        median_ratio=float(np.median(ratios)) if ratios else 1.0,
        max_ratio=float(np.max(ratios)) if ratios else 1.0,
        build_seconds=build_s, query_seconds=query_s,
    )
    return report, index


@dataclass
class CheckResult:
    name: str
    passed: bool
    statistic: float
    threshold: float
    detail: str = ""

    def line(self) -> str:
        tag = "PASS" if self.passed else "FAIL"
        return f"[{tag}] {self.name}: stat={self.statistic:.5g} threshold={self.threshold:.5g} {self.detail}"


def _frechet_cdf(p: float, scale: float = 1.0):
    return lambda x: np.exp(-((np.maximum(x, 1e-300) / scale) ** (-p)))


def check_frechet_cdf(p: float, seed: int = 0, samples: int = 100_000) -> CheckResult:
    """KS distance between inverse-CDF samples and the analytic law."""
    rng = np.random.default_rng(derive_seed(seed, "verify", "cdf", p))
    z = sample_frechet(p, open_uniform(rng, samples))
    ks = sps.kstest(z, _frechet_cdf(p)).statistic
    return CheckResult(f"frechet-cdf-ks p={p:g}", ks <= 0.01, ks, 0.01)


def check_max_stability(v, p: float, seed: int = 0, samples: int = 100_000) -> CheckResult:
    """max_i v_i Z_i must follow the same law scaled by the p-norm of v."""
    v = np.asarray(v, dtype=np.float64)
    rng = np.random.default_rng(derive_seed(seed, "verify", "maxstab", p, v.size))
    Z = sample_frechet(p, open_uniform(rng, (samples, v.size)))
    y = (v[None, :] * Z).max(axis=1)
    ks = sps.kstest(y, _frechet_cdf(p, scale=lp_norm(v, p))).statistic
    return CheckResult(f"max-stability-ks v={v.tolist()} p={p:g}", ks <= 0.01, ks, 0.01)


def _census_pairs(p: float, n: int, d: int, seed: int):
    pts = np.random.default_rng(derive_seed(seed, "census", p)).standard_normal((n, d))
    iu, ju = np.triu_indices(n, k=1)
    diffs = pts[iu] - pts[ju]
    lp = abs_pow(diffs, p).sum(axis=1) ** (1.0 / p)
    return diffs, lp


def check_contraction_rate(
    p: float, n: int = 256, d: int = 16, trials: int = 200, seed: int = 0, b_scale: float = 1.0
) -> CheckResult:
    """Fraction of whole-set embeddings in which any pair gets closer."""
    diffs, lp = _census_pairs(p, n, d, seed)
    b = b_scale * frechet_scale_b(n, p)
    bad = 0
    for t in range(trials):
        E = FrechetEmbedding.generate(d, p, derive_seed(seed, "contr", p, t), b=b)
        emb_inf = np.abs(diffs * E.z[None, :]).max(axis=1) * b
        if np.any(emb_inf < lp):
            bad += 1
    rate, thr = bad / trials, 1.0 / n + 0.04
    return CheckResult(f"contraction-rate p={p:g}", rate <= thr, rate, thr, detail=f"b={b:.4g}")


def check_expansion_rate(
    p: float, n: int = 256, d: int = 16, draws: int = 10_000, seed: int = 0
) -> CheckResult:
    """Per-(pair, embedding) rate of the max-norm image exceeding 2b times
    the original distance; allowed 2^-p plus 3 sigma of sampling noise."""
    diffs, lp = _census_pairs(p, n, d, seed)
    b = frechet_scale_b(n, p)
    prng = np.random.default_rng(derive_seed(seed, "expand", p))
    pick = prng.integers(0, diffs.shape[0], draws)
    Z = sample_frechet(p, open_uniform(prng, (draws, d)))
    emb_inf = np.abs(diffs[pick] * Z).max(axis=1) * b
    q = 2.0**-p
    rate = float(np.mean(emb_inf > 2.0 * b * lp[pick]))
    thr = q + 3.0 * math.sqrt(q * (1 - q) / draws)
    return CheckResult(f"expansion-rate p={p:g}", rate <= thr, rate, thr)


def check_mazur_inequalities(
    p: float, C: float, draws: int = 10_000, seed: int = 0, signed: bool = True, d: int = 8
) -> CheckResult:
    """Non-expansion and the contraction floor are deterministic facts of the
    scaled power map: zero violations allowed (1e-9 relative slack)."""
    mp = MazurParams(p=p, C=C)
    g = np.random.default_rng(derive_seed(seed, "mazur", p, C))
    x = g.standard_normal((draws, d))
    y = g.standard_normal((draws, d))
    for arr in (x, y):
        norms = abs_pow(arr, p).sum(axis=1) ** (1.0 / p)
        arr *= (C * g.uniform(0.05, 1.0, draws) / norms)[:, None]
    if signed:
        fx, fy = mazur_map(x, mp), mazur_map(y, mp)
    else:  # fault-injection variant: drops the sign, collapses antipodes
        fx = mp.scale * abs_pow(x, p / mp.q)
        fy = mp.scale * abs_pow(y, p / mp.q)
    img = np.linalg.norm(fx - fy, axis=1)
    u = abs_pow(x - y, p).sum(axis=1) ** (1.0 / p)
    floor = mp.contraction_floor(u)
    exp_viol = int(np.sum(img > u * (1.0 + 1e-9)))
    con_viol = int(np.sum(img < floor * (1.0 - 1e-9)))
    ok = exp_viol == 0 and con_viol == 0
    return CheckResult(f"mazur-inequalities p={p:g} C={C:g}", ok, exp_viol + con_viol, 0,
                       detail=f"expansion={exp_viol} contraction={con_viol}")


def check_net_contraction(p: float, seed: int = 0, trials: int = 200, c: float = 4.0) -> CheckResult:
    """Points beyond the threshold radius of a separated set should not land
    within c of the query in the max norm, except on a vanishing fraction of
    embeddings."""
    g = np.random.default_rng(derive_seed(seed, "net"))
    d, m = 8, 128
    net = g.standard_normal((m, d)) * 20.0
    dd = max(ddim_estimate(net, p), 2.0)
    h = net_contraction_threshold(c, dd, p)
    q0 = net[0]
    far = net[np.array([lp_dist(v, q0, p) >= h for v in net])]
    bad = 0
    for t in range(trials):
        E = FrechetEmbedding.generate(d, p, derive_seed(seed, "net", t), b=1.0)
        emb = np.abs((far - q0[None, :]) * E.z[None, :]).max(axis=1)
        if emb.size and emb.min() <= c:
            bad += 1
    rate, thr = bad / trials, dd ** (-6.0 * dd) + 0.04
    return CheckResult(f"net-contraction ddim={dd:.2f}", rate <= thr, rate, thr,
                       detail=f"h={h:.3g}, far points={far.shape[0]}")


def verify_embeddings(
    p_list=(3.0, 4.0),
    seed: int = 0,
    ks_samples: int = 100_000,
    trials: int = 200,
    pair_draws: int = 10_000,
    _mazur_signed: bool = True,
    _b_scale: float = 1.0,
) -> list[CheckResult]:
    """Statistical suite for the embeddings. The two underscore knobs exist
    for fault-injection tests (unsigned power map, undersized scale b)."""
    out: list[CheckResult] = []
    for p in p_list:
        out.append(check_frechet_cdf(p, seed=seed, samples=ks_samples))
    for v in ([1.0, 2.0, 2.0], [1.0, 1.0, 1.0, 1.0]):
        for p in p_list:
            out.append(check_max_stability(v, p, seed=seed, samples=ks_samples))
    for p in p_list:
        out.append(check_contraction_rate(p, trials=trials, seed=seed, b_scale=_b_scale))
        out.append(check_expansion_rate(p, draws=pair_draws, seed=seed))
    for p in (2.5, 3.0, 4.0, 6.0):
        for C in (1.0, 10.0):
            out.append(check_mazur_inequalities(p, C, draws=pair_draws, seed=seed,
                                                signed=_mazur_signed))
    out.append(check_net_contraction(p_list[0], seed=seed, trials=trials))
    return out


def verify_index(index, V: PointSet) -> list[CheckResult]:
    """Structural audit of a built (or loaded) index."""
    out: list[CheckResult] = []
    if isinstance(index, AnnIndex):
        rep = verify_nets(index.hierarchy,
                          ddim_est=index.stats.ddim_est if index.stats else None)
        out.append(CheckResult("hierarchy-invariants", rep.ok, float(len(rep.failures)), 0,
                               detail="; ".join(rep.failures[:3])))
        worst = 0.0
        for (node, level), cs in index.candidate_sets.items():
            if cs.member_ids.size:
                mags = pairwise_dists(index.hierarchy.points[cs.member_ids],
                                      cs.translation[None, :], V.p)[:, 0] * cs.scale
                worst = max(worst, float(mags.max()) / index.c)
        out.append(CheckResult("candidate-magnitudes", worst <= 1.0 + 1e-9, worst, 1.0))
        H = index.hierarchy
        ok = True
        for (node, level), cs in list(index.candidate_sets.items())[:64]:
            anc = H.ancestor_table(level - 1)
            dt = pairwise_dists(H.points, H.points[node][None, :], H.p)[:, 0]
            required = np.nonzero(dt[anc] <= 4.5 * 2.0**level)[0]
            anc_required = np.unique(anc[required])
            if not np.all(np.isin(anc_required, cs.member_ids)):
                ok = False
        out.append(CheckResult("candidate-soundness", ok, 0.0 if ok else 1.0, 0))
    elif isinstance(index, LinfAnnIndex):
        ok = True
        detail = ""
        for amp in index.rungs:
            for s in amp.copies:
                if s.variant == "cardinality":
                    b = s.embedding.b
                    if s.r_embedded != 2.0 * b * s.r:
                        ok = False
                        detail = f"r_embedded {s.r_embedded} != 2*b*r"
        out.append(CheckResult("rung-radii", ok, 0.0 if ok else 1.0, 0, detail=detail))
    return out
