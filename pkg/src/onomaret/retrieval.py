"""Cosine-similarity retrieval in the joint space and the zero-shot baseline.

Both retrieval routes produce :class:`RankedList` objects: per-query full
orderings of the opposite-modality candidate pool, scores descending, ties
broken by ascending candidate input index. The trained route projects
queries and candidates with the matching heads (classifier unused); the
zero-shot route ranks raw encoder embeddings directly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .embstore import EmbeddingPack, vector_matrix
from .model import AlignmentModel, project_audio, project_image

I2A = "I2A"
A2I = "A2I"
DIRECTIONS = (I2A, A2I)


class RetrievalError(ValueError):
    """Invalid retrieval inputs (zero vectors, modality mismatches, ...)."""


@dataclass(frozen=True)
class RankedCandidate:
    id: str
    class_id: int
    score: float


@dataclass(frozen=True)
class RankedList:
    """One query's full candidate ordering, scores non-increasing."""

    query_id: str
    query_class: int
    direction: str
    candidates: tuple[RankedCandidate, ...]


def cosine_similarity(a: np.ndarray, b: np.ndarray) -> float:
    """``a . b / (|a| |b|)``; rejects zero-norm vectors as corrupt data."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 1 or b.ndim != 1 or a.shape != b.shape:
        raise RetrievalError(f"vectors must be 1-D of equal length, got {a.shape}, {b.shape}")
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise RetrievalError("zero-norm vector in cosine similarity")
    return float((a @ b) / (na * nb))


def _norms(mat: np.ndarray, what: str) -> np.ndarray:
    norms = np.linalg.norm(mat, axis=1)
    if (norms == 0.0).any():
        bad = int(np.nonzero(norms == 0.0)[0][0])
        raise RetrievalError(f"zero-norm {what} vector at index {bad}")
    return norms


def rank_candidates(
    query: np.ndarray,
    candidates: np.ndarray,
    candidate_ids: Sequence[str],
    candidate_classes: Sequence[int],
    *,
    query_id: str,
    query_class: int,
    direction: str,
) -> RankedList:
    """Order one candidate pool by cosine score against a single query."""
    query = np.asarray(query, dtype=np.float64)
    candidates = np.asarray(candidates, dtype=np.float64)
    if direction not in DIRECTIONS:
        raise RetrievalError(f"unknown direction {direction!r}")
    if candidates.ndim != 2 or candidates.shape[0] == 0:
        raise RetrievalError("candidate set must be a non-empty 2-D batch")
    if query.ndim != 1 or query.shape[0] != candidates.shape[1]:
        raise RetrievalError(
            f"query width {query.shape} does not match candidates {candidates.shape}"
        )
    if not (len(candidate_ids) == len(candidate_classes) == candidates.shape[0]):
        raise RetrievalError("candidate metadata length does not match the matrix")
    qnorm = np.linalg.norm(query)
    if qnorm == 0.0:
        raise RetrievalError("zero-norm query vector")
    scores = (candidates @ query) / (_norms(candidates, "candidate") * qnorm)
    order = np.argsort(-scores, kind="stable")  # ties keep ascending input index
    ranked = tuple(
        RankedCandidate(
            id=candidate_ids[i], class_id=int(candidate_classes[i]), score=float(scores[i])
        )
        for i in order
    )
    return RankedList(
        query_id=query_id, query_class=int(query_class), direction=direction, candidates=ranked
    )


def rank_matrix(
    queries: np.ndarray,
    query_ids: Sequence[str],
    query_classes: Sequence[int],
    candidates: np.ndarray,
    candidate_ids: Sequence[str],
    candidate_classes: Sequence[int],
    direction: str,
) -> list[RankedList]:
    """Rank every query row against the whole candidate matrix."""
    return [
        rank_candidates(
            queries[i],
            candidates,
            candidate_ids,
            candidate_classes,
            query_id=query_ids[i],
            query_class=int(query_classes[i]),
            direction=direction,
        )
        for i in range(len(query_ids))
    ]


def _pack_arrays(pack: EmbeddingPack, modality: str) -> tuple[np.ndarray, list[str], list[int]]:
    for rec in pack.records:
        if rec.modality != modality:
            raise RetrievalError(
                f"record '{rec.id}' has modality {rec.modality!r}, expected {modality!r}"
            )
    ids = [rec.id for rec in pack.records]
    classes = [rec.class_id for rec in pack.records]
    return vector_matrix(pack), ids, classes


def retrieve(
    model: AlignmentModel,
    queries: EmbeddingPack,
    candidates: EmbeddingPack,
    direction: str,
) -> list[RankedList]:
    """Project both packs with the trained heads and rank in the joint space.

    Direction I2A expects image queries and audio candidates; A2I the
    reverse. Projection runs in inference mode; the classifier plays no part.
    """
    if direction == I2A:
        qmat, qids, qclasses = _pack_arrays(queries, "image")
        cmat, cids, cclasses = _pack_arrays(candidates, "audio")
        qproj = project_image(model, qmat)
        cproj = project_audio(model, cmat)
    elif direction == A2I:
        qmat, qids, qclasses = _pack_arrays(queries, "audio")
        cmat, cids, cclasses = _pack_arrays(candidates, "image")
        qproj = project_audio(model, qmat)
        cproj = project_image(model, cmat)
    else:
        raise RetrievalError(f"unknown direction {direction!r}")
    return rank_matrix(qproj, qids, qclasses, cproj, cids, cclasses, direction)


def zero_shot_retrieve(
    image_pack: EmbeddingPack,
    audio_pack: EmbeddingPack,
    direction: str,
) -> list[RankedList]:
    """Rank raw encoder embeddings across modalities with no trained parts.

    Vectors are L2-normalized before scoring; under cosine similarity this
    is a no-op, kept to mirror the published baseline recipe exactly.
    """
    if image_pack.dim != audio_pack.dim:
        raise RetrievalError(
            f"packs disagree on dim ({image_pack.dim} vs {audio_pack.dim})"
        )
    imat, iids, iclasses = _pack_arrays(image_pack, "image")
    amat, aids, aclasses = _pack_arrays(audio_pack, "audio")
    imat = imat / _norms(imat, "image")[:, None]
    amat = amat / _norms(amat, "audio")[:, None]
    if direction == I2A:
        return rank_matrix(imat, iids, iclasses, amat, aids, aclasses, I2A)
    if direction == A2I:
        return rank_matrix(amat, aids, aclasses, imat, iids, iclasses, A2I)
    raise RetrievalError(f"unknown direction {direction!r}")


def write_ranked_jsonl(ranked: Sequence[RankedList], path: str | Path) -> None:
    """Export ranked lists as JSON lines for the metrics layer and external tools."""
    lines = []
    for rl in ranked:
        obj = {
            "query_id": rl.query_id,
            "direction": rl.direction,
            "ranking": [
                {"id": c.id, "class_id": c.class_id, "score": c.score} for c in rl.candidates
            ],
        }
        lines.append(json.dumps(obj, ensure_ascii=True))
    Path(path).write_text("".join(line + "\n" for line in lines), encoding="utf-8")


def read_ranked_jsonl(path: str | Path, query_classes: Mapping[str, int]) -> list[RankedList]:
    """Load exported ranked lists; query classes come from the caller's id map."""
    out = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        obj = json.loads(line)
        qid = obj["query_id"]
        if qid not in query_classes:
            raise RetrievalError(f"line {lineno}: unknown query id '{qid}'")
        out.append(
            RankedList(
                query_id=qid,
                query_class=int(query_classes[qid]),
                direction=obj["direction"],
                candidates=tuple(
                    RankedCandidate(id=c["id"], class_id=int(c["class_id"]), score=float(c["score"]))
                    for c in obj["ranking"]
                ),
            )
        )
    return out
