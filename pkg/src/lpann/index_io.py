"""Binary index container shared by both pipelines.

Layout: magic "LPIX", u16 version, u8 variant (1 = max-norm ladder index,
2 = hierarchy/oracle index), u64 header length, canonical JSON header
(sorted keys), u64 blob count, then length-prefixed little-endian blobs.
Everything an index needs beyond the dataset itself is either stored or
derived from stored seeds, so rebuilding with equal inputs is byte-identical.
"""

from __future__ import annotations

import hashlib
import json
import struct

import numpy as np

from .core import PointSet, SetStats, ValidationError, matrix_to_bytes
from .embed import FrechetEmbedding
from .hierarchy import CandidateSet, NetHierarchy
from .linf_pipeline import (
    LINF_BACKENDS,
    AmplifiedStructure,
    LinfAnnIndex,
    LinfNearStructure,
    LinfParams,
)
from .mazur_pipeline import AnnConfig, AnnIndex, _make_oracles, _replica_count
from .reduction import RadiusLadder

LPIX_MAGIC = b"LPIX"
LPIX_VERSION = 1
_VARIANT_LINF = 1
_VARIANT_MAZUR = 2


def dataset_hash(V: PointSet) -> str:
    return hashlib.sha256(matrix_to_bytes(V.points, V.p)).hexdigest()


def _pack(variant: int, header: dict, blobs: list[bytes]) -> bytes:
    hj = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    out = [LPIX_MAGIC, struct.pack("<HBQ", LPIX_VERSION, variant, len(hj)), hj,
           struct.pack("<Q", len(blobs))]
    for b in blobs:
        out.append(struct.pack("<Q", len(b)))
        out.append(b)
    return b"".join(out)


def _unpack(data: bytes) -> tuple[int, dict, list[bytes]]:
    if data[:4] != LPIX_MAGIC:
        raise ValidationError("bad magic: not an index container")
    ver, variant, hlen = struct.unpack_from("<HBQ", data, 4)
    if ver != LPIX_VERSION:
        raise ValidationError(f"unsupported index version {ver}")
    off = 4 + struct.calcsize("<HBQ")
    header = json.loads(data[off : off + hlen].decode("utf-8"))
    off += hlen
    (nblobs,) = struct.unpack_from("<Q", data, off)
    off += 8
    blobs = []
    for _ in range(nblobs):
        (blen,) = struct.unpack_from("<Q", data, off)
        off += 8
        blobs.append(data[off : off + blen])
        off += blen
    if off != len(data):
        raise ValidationError("trailing bytes in index container")
    return variant, header, blobs


def _arr_bytes(a: np.ndarray, dtype: str) -> bytes:
    return np.ascontiguousarray(a, dtype=dtype).tobytes()


def _stats_dict(stats: SetStats | None):
    if stats is None:
        return None
    return {"aspect_ratio": stats.aspect_ratio, "ddim_est": stats.ddim_est,
            "diam": stats.diam, "min_dist": stats.min_dist}


def _stats_from(d) -> SetStats | None:
    if d is None:
        return None
    return SetStats(diam=d["diam"], min_dist=d["min_dist"],
                    aspect_ratio=d["aspect_ratio"], ddim_est=d["ddim_est"])


def index_to_bytes(index) -> bytes:
    if isinstance(index, LinfAnnIndex):
        return _linf_to_bytes(index)
    if isinstance(index, AnnIndex):
        return _mazur_to_bytes(index)
    raise ValidationError(f"cannot serialize {type(index).__name__}")


def save_index(index, path: str) -> None:
    with open(path, "wb") as f:
        f.write(index_to_bytes(index))


def load_index(path: str, V: PointSet):
    with open(path, "rb") as f:
        data = f.read()
    return index_from_bytes(data, V)


def index_from_bytes(data: bytes, V: PointSet):
    variant, header, blobs = _unpack(data)
    if header["data_sha256"] != dataset_hash(V):
        raise ValidationError("index was built for a different dataset")
    if variant == _VARIANT_LINF:
        return _linf_from_parts(header, blobs, V)
    if variant == _VARIANT_MAZUR:
        return _mazur_from_parts(header, blobs, V)
    raise ValidationError(f"unknown index variant {variant}")


# max-norm ladder index: embedded copies are stored outright

def _linf_to_bytes(index: LinfAnnIndex) -> bytes:
    blobs: list[bytes] = []
    rungs = []
    for amp in index.rungs:
        copies = []
        for s in amp.copies:
            entry = {
                "b": s.embedding.b, "backend_kind": s.backend_kind,
                "certified_bound": s.certified_bound, "ddim_est": s.ddim_est,
                "embedded_blob": len(blobs), "net_ids_blob": None,
                "net_scale": s.net_scale, "r": s.r, "r_embedded": s.r_embedded,
                "seed": s.seed, "variant": s.variant,
            }
            blobs.append(_arr_bytes(s.backend.embedded, "<f8"))
            if s.net_ids is not None:
                entry["net_ids_blob"] = len(blobs)
                blobs.append(_arr_bytes(s.net_ids, "<i8"))
            copies.append(entry)
        rungs.append({"copies": copies})
    header = {
        "data_sha256": dataset_hash(index.pointset),
        "kind": "linf",
        "n": index.pointset.n, "d": index.pointset.d, "p": index.pointset.p,
        "params": {
            "amplification_multiplier": index.params.amplification_multiplier,
            "backend_kind": index.params.backend_kind,
            "include_half_min": index.params.include_half_min,
            "seed": index.params.seed, "variant": index.params.variant,
        },
        "radii": list(index.ladder.radii) if index.ladder else None,
        "rungs": rungs,
        "stats": _stats_dict(index.stats),
    }
    return _pack(_VARIANT_LINF, header, blobs)


def _linf_from_parts(header: dict, blobs: list[bytes], V: PointSet) -> LinfAnnIndex:
    params = LinfParams(**header["params"])
    rungs = []
    radii = header["radii"]
    for amp_h in header["rungs"]:
        copies = []
        for e in amp_h["copies"]:
            emb = FrechetEmbedding.generate(V.d, V.p, e["seed"], b=e["b"])
            embedded = np.frombuffer(blobs[e["embedded_blob"]], dtype="<f8")
            net_ids = None
            if e["net_ids_blob"] is not None:
                net_ids = np.frombuffer(blobs[e["net_ids_blob"]], dtype="<i8").copy()
            rows = net_ids.size if net_ids is not None else V.n
            backend = LINF_BACKENDS[e["backend_kind"]](embedded.reshape(rows, V.d).copy(), e["r_embedded"])
            copies.append(LinfNearStructure(
                pointset=V, embedding=emb, backend=backend, backend_kind=e["backend_kind"],
                r=e["r"], r_embedded=e["r_embedded"], variant=e["variant"],
                certified_bound=e["certified_bound"], seed=e["seed"],
                net_ids=net_ids, net_scale=e["net_scale"], ddim_est=e["ddim_est"],
            ))
        rungs.append(AmplifiedStructure(copies=copies))
    ladder = RadiusLadder(radii=tuple(radii)) if radii else None
    return LinfAnnIndex(pointset=V, stats=_stats_from(header["stats"]),
                        ladder=ladder, rungs=rungs, params=params)


# hierarchy/oracle index: member id lists plus seeds; embeddings re-derive

def _mazur_to_bytes(index: AnnIndex) -> bytes:
    H = index.hierarchy
    blobs: list[bytes] = [
        _arr_bytes(H.max_level, "<i8"),
        _arr_bytes(H.drop_parent, "<i8"),
    ]
    keys = sorted(index.candidate_sets.keys())
    key_arr = np.array(keys, dtype=np.int64).reshape(len(keys), 2)
    cs_members = [index.candidate_sets[k].member_ids for k in keys]
    offsets = np.zeros(len(keys) + 1, dtype=np.int64)
    for i, m in enumerate(cs_members):
        offsets[i + 1] = offsets[i] + m.size
    flat = np.concatenate(cs_members) if cs_members else np.zeros(0, dtype=np.int64)
    blobs += [_arr_bytes(key_arr, "<i8"), _arr_bytes(offsets, "<i8"), _arr_bytes(flat, "<i8")]

    b_ids = sorted(index.bottom_members.keys())
    b_offsets = np.zeros(len(b_ids) + 1, dtype=np.int64)
    b_lists = [index.bottom_members[w] for w in b_ids]
    for i, m in enumerate(b_lists):
        b_offsets[i + 1] = b_offsets[i] + m.size
    b_flat = np.concatenate(b_lists) if b_lists else np.zeros(0, dtype=np.int64)
    blobs += [_arr_bytes(np.asarray(b_ids, dtype=np.int64), "<i8"),
              _arr_bytes(b_offsets, "<i8"), _arr_bytes(b_flat, "<i8")]

    header = {
        "bottom_level": H.bottom_level,
        "c": index.c,
        "config": {
            "amplification_multiplier": index.config.amplification_multiplier,
            "backend_kind": index.config.backend_kind, "c": index.config.c,
            "c_mode": index.config.c_mode, "jl_eps0": index.config.jl_eps0,
            "seed": index.config.seed,
        },
        "data_sha256": dataset_hash(index.pointset),
        "kind": "mazur",
        "n": index.pointset.n, "d": index.pointset.d, "p": index.pointset.p,
        "normalization": H.normalization,
        "replica_count": index.replica_count,
        "stats": _stats_dict(index.stats),
        "top_level": H.top_level,
    }
    return _pack(_VARIANT_MAZUR, header, blobs)


def _mazur_from_parts(header: dict, blobs: list[bytes], V: PointSet) -> AnnIndex:
    cfg = header["config"]
    config = AnnConfig(c_mode=cfg["c_mode"], c=cfg["c"],
                       amplification_multiplier=cfg["amplification_multiplier"],
                       seed=cfg["seed"], backend_kind=cfg["backend_kind"],
                       jl_eps0=cfg["jl_eps0"])
    c = header["c"]
    norm = header["normalization"]
    H = NetHierarchy(
        points=np.ascontiguousarray(V.points / norm), p=V.p, normalization=norm,
        max_level=np.frombuffer(blobs[0], dtype="<i8").copy(),
        drop_parent=np.frombuffer(blobs[1], dtype="<i8").copy(),
        bottom_level=header["bottom_level"], top_level=header["top_level"],
    )
    key_arr = np.frombuffer(blobs[2], dtype="<i8").reshape(-1, 2)
    offsets = np.frombuffer(blobs[3], dtype="<i8")
    flat = np.frombuffer(blobs[4], dtype="<i8")
    candidate_sets = {}
    for i, (node, level) in enumerate(map(tuple, key_arr)):
        members = flat[offsets[i] : offsets[i + 1]].copy()
        candidate_sets[(int(node), int(level))] = CandidateSet(
            node=int(node), level=int(level), member_ids=members,
            translation=H.points[int(node)].copy(), scale=c / (4.5 * 2.0 ** int(level)),
        )
    b_ids = np.frombuffer(blobs[5], dtype="<i8")
    b_offsets = np.frombuffer(blobs[6], dtype="<i8")
    b_flat = np.frombuffer(blobs[7], dtype="<i8")
    bottom_members = {
        int(w): b_flat[b_offsets[i] : b_offsets[i + 1]].copy() for i, w in enumerate(b_ids)
    }
    stats = _stats_from(header["stats"])
    oracles, bottom_oracles = _make_oracles(
        V, H, config, c, header["replica_count"], candidate_sets, bottom_members
    )
    return AnnIndex(
        pointset=V, config=config, c=c, hierarchy=H, stats=stats,
        replica_count=header["replica_count"], candidate_sets=candidate_sets,
        oracles=oracles, bottom_members=bottom_members, bottom_oracles=bottom_oracles,
    )
