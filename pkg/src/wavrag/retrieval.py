"""Exact cosine top-k retrieval and the softmax retrieval distribution.

Search is a linear scan: scores are computed in float64 against the whole
store, the top k are selected exactly (boundary ties are resolved by
ascending id, matching a full sort), and ranks are assigned 1-based. No
approximate index; desk-scale corpora make exactness cheap and the oracle
equivalence tests require it.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import IO, Sequence

import numpy as np

from .errors import DimMismatchError
from .store import EmbeddingStore
from .train import ProjectionHead, apply_head

__all__ = [
    "ScoredDoc",
    "RetrievalResult",
    "cosine",
    "top_k",
    "retrieval_distribution",
    "retrieve",
    "format_trec_lines",
    "write_run_file",
]

# Above this many matrix cells the float64 cast is chunked to bound memory.
_CHUNK_CELLS = 1 << 24


@dataclass(frozen=True)
class ScoredDoc:
    id: str
    score: float
    rank: int  # 1-based


@dataclass
class RetrievalResult:
    query_id: str
    hits: list[ScoredDoc]
    distribution: list[tuple[str, float]] | None = None
    elapsed_s: float | None = None

    def to_json_dict(self) -> dict:
        out: dict = {
            "query_id": self.query_id,
            "hits": [{"id": h.id, "score": h.score, "rank": h.rank} for h in self.hits],
        }
        if self.distribution is not None:
            out["distribution"] = [{"id": d, "p": p} for d, p in self.distribution]
        if self.elapsed_s is not None:
            out["elapsed_s"] = self.elapsed_s
        return out


def cosine(u: np.ndarray, v: np.ndarray) -> float:
    """dot(u, v) / (|u| |v|); defensive against non-unit inputs."""
    u = np.asarray(u, dtype=np.float64).reshape(-1)
    v = np.asarray(v, dtype=np.float64).reshape(-1)
    if u.shape[0] != v.shape[0]:
        raise DimMismatchError(f"cosine dims disagree: {u.shape[0]} vs {v.shape[0]}")
    if not (np.all(np.isfinite(u)) and np.all(np.isfinite(v))):
        raise ValueError("cosine inputs must be finite")
    nu = float(np.linalg.norm(u))
    nv = float(np.linalg.norm(v))
    if nu == 0.0 or nv == 0.0:
        raise ValueError("cosine is undefined for zero-norm vectors")
    return float(u @ v) / (nu * nv)


def _scores(store: EmbeddingStore, q: np.ndarray) -> np.ndarray:
    """Float64 cosine scores of the query against every stored unit row."""
    q = np.asarray(q, dtype=np.float64).reshape(-1)
    if q.shape[0] != store.dim:
        raise DimMismatchError(f"query dim {q.shape[0]} != store dim {store.dim}")
    if not np.all(np.isfinite(q)):
        raise ValueError("query vector must be finite")
    norm = float(np.linalg.norm(q))
    if norm == 0.0:
        raise ValueError("query vector must be nonzero")
    q = q / norm
    if store.count * store.dim <= _CHUNK_CELLS:
        return store.rows.astype(np.float64) @ q
    out = np.empty(store.count, dtype=np.float64)
    step = max(1, _CHUNK_CELLS // store.dim)
    for start in range(0, store.count, step):
        out[start : start + step] = store.rows[start : start + step].astype(np.float64) @ q
    return out


def _ranked_order(scores: np.ndarray, ids: np.ndarray) -> np.ndarray:
    # Primary key: score descending; ties broken by ascending id.
    return np.lexsort((ids, -scores))


def top_k(store: EmbeddingStore, q: np.ndarray, k: int) -> list[ScoredDoc]:
    """Exactly min(k, count) docs, score descending, ties by ascending id."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if store.count == 0:
        return []
    scores = _scores(store, q)
    ids = np.array(store.ids)
    if k >= store.count:
        order = _ranked_order(scores, ids)
    else:
        # argpartition may split boundary ties arbitrarily, so pull in every
        # doc tied with the k-th score before sorting.
        part = np.argpartition(-scores, k - 1)[:k]
        boundary = scores[part].min()
        cand = np.flatnonzero(scores >= boundary)
        order = cand[_ranked_order(scores[cand], ids[cand])][:k]
    return [
        ScoredDoc(str(ids[i]), float(scores[i]), rank)
        for rank, i in enumerate(order, start=1)
    ]


def retrieval_distribution(store: EmbeddingStore, q: np.ndarray) -> list[tuple[str, float]]:
    """Softmax of cosine scores over the full corpus, in ranked order.

    ``p(d|q) = exp(sim(q, d)) / sum_i exp(sim(q, d_i))``, computed with
    max-subtraction; probabilities sum to 1 within 1e-9.
    """
    if store.count == 0:
        raise ValueError("retrieval distribution is undefined for an empty store")
    scores = _scores(store, q)
    shifted = np.exp(scores - scores.max())
    probs = shifted / shifted.sum()
    ids = np.array(store.ids)
    order = _ranked_order(scores, ids)
    return [(str(ids[i]), float(probs[i])) for i in order]


def retrieve(
    store: EmbeddingStore,
    backend,
    q,
    k: int,
    head: ProjectionHead | None = None,
    query_id: str = "q0",
    with_distribution: bool = False,
) -> RetrievalResult:
    """Encode, optionally project, and search; elapsed wall time is recorded."""
    if k < 1:
        raise ValueError("k must be >= 1")
    start = time.perf_counter()
    vec = backend.encode(q)
    if head is not None:
        vec = apply_head(head, vec)
    if vec.shape[0] != store.dim:
        raise DimMismatchError(f"encoder dim {vec.shape[0]} != store dim {store.dim}")
    hits = top_k(store, vec, k)
    distribution = retrieval_distribution(store, vec) if with_distribution and store.count else None
    elapsed = time.perf_counter() - start
    return RetrievalResult(query_id, hits, distribution, elapsed)


def format_trec_lines(result: RetrievalResult, run_tag: str = "wavrag") -> list[str]:
    """TREC run lines: ``query_id Q0 doc_id rank score run_tag`` (score at 6 dp)."""
    return [
        f"{result.query_id} Q0 {h.id} {h.rank} {h.score:.6f} {run_tag}"
        for h in result.hits
    ]


def write_run_file(results: Sequence[RetrievalResult], out: IO[str], run_tag: str = "wavrag") -> None:
    for result in results:
        for line in format_trec_lines(result, run_tag):
            out.write(line + "\n")
