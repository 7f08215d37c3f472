"""Embedding extraction, cosine ranking and CMC / mAP.

A person embedding concatenates the pre-classifier features of the global
stream and, when the sample has a face, of the face net. When either side of
a comparison lacks a face, cosine similarity is taken over the global
sub-vector only. Face-only models cannot embed faceless samples at all: such
queries count as misses and such gallery entries are left out.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import torch

from .errors import NumericError, ProtocolError, ShapeError
from .nets import FaceNet, GlobalStream
from .synth import PROTOCOLS

REPORT_SCHEMA_VERSION = 1


@dataclass
class PersonEmbedding:
    vector: np.ndarray | None  # None when the model cannot embed the sample
    has_face: bool
    identity_id: int
    clothing_id: int
    global_dim: int = 0
    name: str = ""

    @property
    def dim(self) -> int:
        return 0 if self.vector is None else len(self.vector)


@dataclass
class RetrievalResult:
    """Ranking of one query. ``order`` indexes the original gallery list."""

    order: np.ndarray
    scores: np.ndarray
    matches: np.ndarray  # bool per ranked position
    query_name: str = ""
    missing: bool = False  # query had no embedding: counts as a miss everywhere
    num_relevant: int = 0


def _l2(v: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(v)
    return v / n if n > 0 else v


@torch.no_grad()
def embed_batch(images: torch.Tensor | None, faces: torch.Tensor | None, has_face: Sequence[bool],
                identities: Sequence[int], clothing: Sequence[int], global_model: GlobalStream | None,
                face_model: FaceNet | None, normalize_streams: bool = False,
                names: Sequence[str] | None = None) -> list[PersonEmbedding]:
    n = len(has_face)
    names = list(names) if names is not None else [str(i) for i in range(n)]
    g = None
    if global_model is not None:
        g = global_model(images)[0].concat_features().double().numpy()
    f = None
    if face_model is not None:
        rows = [i for i in range(n) if has_face[i]]
        f = np.zeros((n, 0))
        if rows:
            out = face_model(faces[torch.as_tensor(rows)]).concat_features().double().numpy()
            f = np.zeros((n, out.shape[1]))
            f[rows] = out
    result = []
    for i in range(n):
        parts = []
        gdim = 0
        if g is not None:
            parts.append(_l2(g[i]) if normalize_streams else g[i])
            gdim = g.shape[1]
        if f is not None and has_face[i]:
            parts.append(_l2(f[i]) if normalize_streams else f[i])
        vec = np.concatenate(parts) if parts else None
        result.append(PersonEmbedding(vec, bool(has_face[i]), int(identities[i]), int(clothing[i]), gdim, names[i]))
    return result


def embed(sample, global_model: GlobalStream | None, face_model: FaceNet | None,
          normalize_streams: bool = False) -> PersonEmbedding:
    """Embed one :class:`~ccreid.synth.SyntheticSample` with models in eval mode."""
    image = torch.as_tensor(sample.image.transpose(2, 0, 1)[None], dtype=torch.float32)
    has = sample.face_degraded is not None
    face = torch.as_tensor(sample.face_degraded.transpose(2, 0, 1)[None], dtype=torch.float32) if has else None
    return embed_batch(image, face, [has], [sample.identity_id], [sample.clothing_id],
                       global_model, face_model, normalize_streams)[0]


def _comparable(q: PersonEmbedding, g: PersonEmbedding) -> tuple[np.ndarray, np.ndarray]:
    if q.has_face and g.has_face and q.dim == g.dim:
        return q.vector, g.vector
    if q.global_dim == 0 or g.global_dim != q.global_dim:
        raise ShapeError(f"cannot compare {q.name!r} (dim {q.dim}) with {g.name!r} (dim {g.dim})")
    return q.vector[:q.global_dim], g.vector[:g.global_dim]


def cosine_similarities(query: PersonEmbedding, gallery: Sequence[PersonEmbedding]) -> np.ndarray:
    qn = np.linalg.norm(query.vector)
    if qn == 0:
        raise NumericError(f"query {query.name!r} has a zero-norm embedding")
    scores = np.empty(len(gallery))
    full_q = query.vector / qn
    for j, g in enumerate(gallery):
        a, b = _comparable(query, g)
        if a is query.vector:
            an = full_q
        else:
            n = np.linalg.norm(a)
            if n == 0:
                raise NumericError(f"query {query.name!r} has a zero-norm global embedding")
            an = a / n
        bn = np.linalg.norm(b)
        if bn == 0:
            raise NumericError(f"gallery sample {g.name!r} has a zero-norm embedding")
        scores[j] = float(an @ b) / bn
    return scores


def cosine_rank(query: PersonEmbedding, gallery: Sequence[PersonEmbedding],
                exclude: Sequence[bool] | None = None) -> RetrievalResult:
    """Descending cosine similarity, ties by gallery index. ``exclude`` drops entries from the ranking."""
    scores = cosine_similarities(query, gallery)
    order = np.argsort(-scores, kind="stable")
    if exclude is not None:
        ex = np.asarray(exclude, dtype=bool)
        order = order[~ex[order]]
    matches = np.array([gallery[j].identity_id == query.identity_id for j in order], dtype=bool)
    return RetrievalResult(order=order, scores=scores[order], matches=matches, query_name=query.name,
                           num_relevant=int(matches.sum()))


def protocol_exclusions(query: PersonEmbedding, gallery: Sequence[PersonEmbedding], protocol: str) -> np.ndarray:
    """Gallery entries removed for this query: same identity and same clothes under cross_clothes."""
    if protocol not in PROTOCOLS:
        raise ProtocolError(f"unknown protocol {protocol!r}")
    ex = np.zeros(len(gallery), dtype=bool)
    if protocol == "cross_clothes":
        for j, g in enumerate(gallery):
            ex[j] = g.identity_id == query.identity_id and g.clothing_id == query.clothing_id
    return ex


def rank_all(queries: Sequence[PersonEmbedding], gallery: Sequence[PersonEmbedding],
             protocol: str = "cross_clothes") -> list[RetrievalResult]:
    usable = [g for g in gallery if g.vector is not None]
    usable_idx = np.array([j for j, g in enumerate(gallery) if g.vector is not None], dtype=int)
    results = []
    for q in queries:
        ex = protocol_exclusions(q, usable, protocol)
        if q.vector is None:
            rel = sum(1 for g, e in zip(usable, ex) if g.identity_id == q.identity_id and not e)
            results.append(RetrievalResult(np.zeros(0, dtype=int), np.zeros(0), np.zeros(0, dtype=bool),
                                           q.name, missing=True, num_relevant=rel))
            continue
        r = cosine_rank(q, usable, exclude=ex)
        r.order = usable_idx[r.order]
        results.append(r)
    check_results(results)
    return results


def check_results(results: Sequence[RetrievalResult]) -> None:
    bad = [r.query_name for r in results if r.num_relevant == 0]
    if bad:
        raise ProtocolError(f"queries without a valid gallery match: {bad}")


def cmc(results: Sequence[RetrievalResult], max_k: int | None = None) -> np.ndarray:
    """``cmc[k-1]`` = fraction of queries with a correct match in the top k."""
    check_results(results)
    if max_k is None:
        max_k = max((len(r.order) for r in results), default=0)
    hits = np.zeros(max_k)
    for r in results:
        if r.missing:
            continue
        pos = np.flatnonzero(r.matches)
        if len(pos) and pos[0] < max_k:
            hits[pos[0]:] += 1
    return hits / len(results)


def average_precision(r: RetrievalResult) -> float:
    if r.missing:
        return 0.0
    pos = np.flatnonzero(r.matches)
    # sequential sums: the result matches the textbook formula bit for bit
    return sum(j / (int(r) + 1) for j, r in enumerate(pos, start=1)) / len(pos)


def mean_average_precision(results: Sequence[RetrievalResult]) -> float:
    check_results(results)
    return sum(average_precision(r) for r in results) / len(results)


@dataclass
class EvalReport:
    protocol: str
    cmc_curve: list[float]
    mAP: float
    num_queries: int
    num_gallery: int
    checkpoint_id: str = ""
    dataset_seed: int | None = None
    preset: str | None = None
    seed: int | None = None
    per_query: list[dict] = field(default_factory=list)

    def rank(self, k: int) -> float:
        if not self.cmc_curve:
            return 0.0
        return self.cmc_curve[min(k, len(self.cmc_curve)) - 1]

    def to_dict(self) -> dict:
        d = {
            "schema_version": REPORT_SCHEMA_VERSION,
            "protocol": self.protocol,
            "checkpoint_id": self.checkpoint_id,
            "dataset_seed": self.dataset_seed,
            "preset": self.preset,
            "seed": self.seed,
            "cmc": {str(k): self.rank(k) for k in (1, 5, 10)},
            "mAP": self.mAP,
            "cmc_curve": self.cmc_curve,
            "num_queries": self.num_queries,
            "num_gallery": self.num_gallery,
        }
        if self.per_query:
            d["per_query"] = self.per_query
        return d


def evaluate_models(root: str | os.PathLike, manifest, global_model: GlobalStream | None,
                    face_model: FaceNet | None, protocol: str = "cross_clothes",
                    normalize_streams: bool = False, dump_rankings: bool = False,
                    face_input: str = "degraded") -> EvalReport:
    """Rank every query against the gallery under ``protocol``.

    ``face_input`` selects which crops the face net sees: ``degraded`` for a
    student, ``clean`` (the restoration stand-in) for a teacher.
    """
    from .synth import split_protocol
    from .trainer import load_tensors

    m = split_protocol(manifest, protocol)
    embs = {}
    for split in ("query", "gallery"):
        recs = m.by_split(split)
        data = load_tensors(root, m, recs)
        faces = data.faces_clean if face_input == "clean" else data.faces_degraded
        embs[split] = embed_batch(data.images, faces, data.has_face.tolist(),
                                  data.identities.tolist(), data.clothing.tolist(), global_model, face_model,
                                  normalize_streams, names=[r.image for r in recs])
    results = rank_all(embs["query"], embs["gallery"], protocol)
    curve = cmc(results, max_k=len(embs["gallery"]))
    report = EvalReport(protocol=protocol, cmc_curve=[float(x) for x in curve],
                        mAP=mean_average_precision(results), num_queries=len(results),
                        num_gallery=len(embs["gallery"]), dataset_seed=m.dataset_seed)
    if dump_rankings:
        report.per_query = [{"query": r.query_name, "missing": r.missing,
                             "ranking": [int(i) for i in r.order[:10]],
                             "scores": [float(s) for s in r.scores[:10]]} for r in results]
    return report
