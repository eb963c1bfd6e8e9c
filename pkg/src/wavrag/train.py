"""Contrastive projection-head training with the InfoNCE objective.

A :class:`ProjectionHead` is a linear map applied on top of frozen base
embeddings and re-normalized to the unit sphere. It is trained on
(query, positive) pairs with in-batch negatives: for item ``i`` every other
positive in the batch acts as a negative. The per-item loss is

    L = -[ sim(q, k+)/tau - log Z ],   Z = sum_i exp(sim(q, k_i)/tau)

where index 0 of Z is the positive and sim is cosine similarity, computed
with log-sum-exp stabilization. The analytic gradient differentiates through
the projection, the re-normalization, and the cosine of both the query and
knowledge sides; tests verify it against central finite differences.

The optimizer is deliberately plain full-gradient-per-batch SGD with seeded
shuffling, so runs are exactly reproducible and the gradient surface stays
small enough to verify numerically.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DegenerateProjectionError, DimMismatchError, WavragError
from .store import EmbeddingStore, read_head_matrix, write_head_matrix

__all__ = [
    "ProjectionHead",
    "TrainBatch",
    "TrainConfig",
    "TrainResult",
    "apply_head",
    "info_nce_loss",
    "loss_gradient",
    "train",
    "load_pairs_jsonl",
    "SyntheticBenchmark",
    "synthetic_modality_pairs",
    "cluster_recall_at_1",
]


@dataclass
class ProjectionHead:
    """Linear head (d_out x d_in); applying it always re-normalizes the output."""

    weights: np.ndarray

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if self.weights.ndim != 2:
            raise ValueError("head weights must be a 2-D matrix")
        if not np.all(np.isfinite(self.weights)):
            raise ValueError("head weights must be finite")

    @classmethod
    def identity(cls, dim: int) -> "ProjectionHead":
        return cls(np.eye(dim))

    @property
    def d_in(self) -> int:
        return self.weights.shape[1]

    @property
    def d_out(self) -> int:
        return self.weights.shape[0]

    def save(self, path: str | Path) -> None:
        write_head_matrix(self.weights, path)

    @classmethod
    def load(cls, path: str | Path) -> "ProjectionHead":
        return cls(read_head_matrix(path))


def apply_head(head: ProjectionHead, v: np.ndarray) -> np.ndarray:
    """normalize(W @ v); raises on dimension mismatch or a zero projection."""
    v = np.asarray(v, dtype=np.float64).reshape(-1)
    if v.shape[0] != head.d_in:
        raise DimMismatchError(f"head expects dim {head.d_in}, got {v.shape[0]}")
    out = head.weights @ v
    norm = float(np.linalg.norm(out))
    if norm == 0.0:
        raise DegenerateProjectionError("projection produced the zero vector")
    return (out / norm).astype(np.float32)


@dataclass
class TrainBatch:
    """(query, positive) pairs aligned by index, plus optional explicit negatives.

    In-batch negative semantics: for item ``i`` the negatives are all
    positives ``j != i`` plus ``extra_negatives[i]`` when provided. Duplicate
    content is not deduplicated. At least two items are required unless every
    item brings explicit negatives.
    """

    queries: np.ndarray
    positives: np.ndarray
    extra_negatives: list[np.ndarray] | None = None

    def __post_init__(self):
        self.queries = np.asarray(self.queries, dtype=np.float64)
        self.positives = np.asarray(self.positives, dtype=np.float64)
        if self.queries.shape != self.positives.shape or self.queries.ndim != 2:
            raise ValueError("queries and positives must be equal-shape (B, d) arrays")
        b = self.queries.shape[0]
        if self.extra_negatives is not None:
            if len(self.extra_negatives) != b:
                raise ValueError("extra_negatives must align with the batch")
            self.extra_negatives = [
                np.asarray(n, dtype=np.float64).reshape(-1, self.queries.shape[1])
                for n in self.extra_negatives
            ]
        has_extras = self.extra_negatives is not None and all(
            len(n) > 0 for n in self.extra_negatives
        )
        if b < 2 and not has_extras:
            raise ValueError("in-batch negatives need a batch of at least 2")

    @property
    def size(self) -> int:
        return self.queries.shape[0]


@dataclass
class TrainConfig:
    tau: float = 0.05
    lr: float = 0.05
    epochs: int = 100
    batch_size: int = 32
    seed: int = 0

    def __post_init__(self):
        if self.tau <= 0:
            raise ValueError("tau must be positive")
        if self.lr < 0:
            raise ValueError("lr must be non-negative")
        if self.epochs <= 0 or self.batch_size < 2:
            raise ValueError("epochs must be positive and batch_size >= 2")


def _check_unit(v: np.ndarray, name: str) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64).reshape(-1)
    if not np.all(np.isfinite(v)):
        raise ValueError(f"{name} has non-finite components")
    return v


def info_nce_loss(q: np.ndarray, pos: np.ndarray, negs: list[np.ndarray], tau: float) -> float:
    """InfoNCE loss for one (query, positive, negatives) instance.

    All inputs are unit vectors of one dimension. With no negatives the
    partition function reduces to the positive term and the loss is exactly 0.
    """
    if tau <= 0:
        raise ValueError("tau must be positive")
    q = _check_unit(q, "query")
    pos = _check_unit(pos, "positive")
    dim = q.shape[0]
    if pos.shape[0] != dim:
        raise DimMismatchError(f"positive dim {pos.shape[0]} != query dim {dim}")
    logits = [float(q @ pos) / tau]
    for i, neg in enumerate(negs):
        neg = _check_unit(neg, f"negative {i}")
        if neg.shape[0] != dim:
            raise DimMismatchError(f"negative {i} dim {neg.shape[0]} != query dim {dim}")
        logits.append(float(q @ neg) / tau)
    logits_arr = np.array(logits)
    m = logits_arr.max()
    log_z = m + np.log(np.sum(np.exp(logits_arr - m)))
    return float(log_z - logits_arr[0])


def _project_normalized(weights: np.ndarray, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Project rows of x through W and normalize; returns (unit rows, norms)."""
    u = x @ weights.T
    norms = np.linalg.norm(u, axis=1, keepdims=True)
    if np.any(norms == 0.0):
        raise DegenerateProjectionError("projection produced a zero vector inside a batch")
    return u / norms, norms


def _grad_through_normalize(d_unit: np.ndarray, unit: np.ndarray, norms: np.ndarray) -> np.ndarray:
    # d/du of u/||u|| applied to the incoming cotangent: (I - uu^T)/||u||.
    return (d_unit - np.sum(d_unit * unit, axis=1, keepdims=True) * unit) / norms


def loss_gradient(head: ProjectionHead, batch: TrainBatch, tau: float) -> tuple[float, np.ndarray]:
    """Mean per-item InfoNCE loss over the batch and its gradient w.r.t. the weights.

    The head is applied symmetrically: both queries and knowledge vectors are
    projected and re-normalized before the cosine, and the gradient flows
    through both sides.
    """
    if tau <= 0:
        raise ValueError("tau must be positive")
    if batch.queries.shape[1] != head.d_in:
        raise DimMismatchError(f"head expects dim {head.d_in}, got {batch.queries.shape[1]}")
    w = head.weights
    b = batch.size
    q_unit, q_norms = _project_normalized(w, batch.queries)
    p_unit, p_norms = _project_normalized(w, batch.positives)

    extras = batch.extra_negatives
    extra_units: list[np.ndarray] = []
    extra_norms: list[np.ndarray] = []
    max_extra = 0
    if extras is not None:
        for n in extras:
            eu, en = _project_normalized(w, n) if len(n) else (np.zeros((0, head.d_out)), np.zeros((0, 1)))
            extra_units.append(eu)
            extra_norms.append(en)
            max_extra = max(max_extra, len(n))

    # Candidate logits per row: all batch positives, then that row's extras
    # (padded with -inf so the softmax ignores the padding).
    logits = np.full((b, b + max_extra), -np.inf)
    logits[:, :b] = (q_unit @ p_unit.T) / tau
    for i in range(len(extra_units)):
        m = len(extra_units[i])
        if m:
            logits[i, b : b + m] = (extra_units[i] @ q_unit[i]) / tau

    row_max = logits.max(axis=1, keepdims=True)
    exp_shifted = np.exp(logits - row_max)
    z = exp_shifted.sum(axis=1, keepdims=True)
    log_z = row_max + np.log(z)
    loss = float(np.mean(log_z[:, 0] - np.diag(logits[:, :b])))

    softmax = exp_shifted / z
    d_logits = softmax.copy()
    d_logits[np.arange(b), np.arange(b)] -= 1.0
    d_logits /= tau * b

    d_q_unit = d_logits[:, :b] @ p_unit
    d_p_unit = d_logits[:, :b].T @ q_unit
    for i in range(len(extra_units)):
        m = len(extra_units[i])
        if m:
            d_q_unit[i] += d_logits[i, b : b + m] @ extra_units[i]

    d_q = _grad_through_normalize(d_q_unit, q_unit, q_norms)
    d_p = _grad_through_normalize(d_p_unit, p_unit, p_norms)
    grad = d_q.T @ batch.queries + d_p.T @ batch.positives
    for i in range(len(extra_units)):
        m = len(extra_units[i])
        if m:
            d_e_unit = d_logits[i, b : b + m, None] * q_unit[i]
            d_e = _grad_through_normalize(d_e_unit, extra_units[i], extra_norms[i])
            grad += d_e.T @ extras[i]

    if not np.isfinite(loss):
        raise WavragError("non-finite loss; check inputs and tau")
    return loss, grad


@dataclass
class TrainResult:
    head: ProjectionHead
    loss_trace: list[float]  # mean batch loss per epoch


def train(head: ProjectionHead, pairs: tuple[np.ndarray, np.ndarray], cfg: TrainConfig) -> TrainResult:
    """Train a copy of the head on (queries, positives) with seeded SGD.

    Each epoch shuffles the dataset with the seeded generator and walks it in
    batches of ``cfg.batch_size`` (a final partial batch is kept when it still
    has two items). Deterministic: the same seed yields identical weights.
    """
    queries, positives = (np.asarray(a, dtype=np.float64) for a in pairs)
    if queries.ndim != 2 or queries.shape != positives.shape:
        raise ValueError("pairs must be two aligned (N, d) arrays")
    n = queries.shape[0]
    if n == 0:
        raise ValueError("empty training dataset")
    if n < cfg.batch_size:
        raise ValueError(f"dataset size {n} is smaller than batch_size {cfg.batch_size}")

    weights = head.weights.copy()
    rng = np.random.default_rng(cfg.seed)
    trace: list[float] = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        batch_losses: list[float] = []
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            if len(idx) < 2:
                continue
            batch = TrainBatch(queries[idx], positives[idx])
            loss, grad = loss_gradient(ProjectionHead(weights), batch, cfg.tau)
            if not np.isfinite(loss):
                raise WavragError(f"non-finite loss at epoch {epoch}")
            weights = weights - cfg.lr * grad
            batch_losses.append(loss)
        trace.append(float(np.mean(batch_losses)))
    return TrainResult(ProjectionHead(weights), trace)


def load_pairs_jsonl(path: str | Path, store: EmbeddingStore) -> tuple[np.ndarray, np.ndarray]:
    """Join a {"query_id", "positive_id"} JSONL file against an embedding store."""
    queries: list[np.ndarray] = []
    positives: list[np.ndarray] = []
    for line_no, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
            queries.append(store.vector(obj["query_id"]))
            positives.append(store.vector(obj["positive_id"]))
        except (json.JSONDecodeError, KeyError) as exc:
            raise WavragError(f"pairs file line {line_no}: {exc}") from exc
    if not queries:
        raise WavragError("pairs file is empty")
    return np.stack(queries).astype(np.float64), np.stack(positives).astype(np.float64)


@dataclass
class SyntheticBenchmark:
    """Two-modality cluster benchmark: aligned train/held-out pairs plus labels."""

    train_queries: np.ndarray
    train_positives: np.ndarray
    heldout_queries: np.ndarray
    heldout_positives: np.ndarray
    train_clusters: np.ndarray
    heldout_clusters: np.ndarray


def synthetic_modality_pairs(
    dim: int,
    clusters: int,
    n_train: int,
    n_heldout: int,
    noise_sigma: float = 0.1,
    seed: int = 42,
) -> SyntheticBenchmark:
    """Generate the pinned two-modality benchmark.

    Unit cluster latents are drawn once, along with two fixed random
    orthogonal matrices A (query side) and B (knowledge side) obtained by QR.
    Every pair picks a cluster and perturbs its latent independently per side:
    ``query = normalize(A (z_c + eps))``, ``positive = normalize(B (z_c + eps'))``
    with Gaussian noise of scale ``noise_sigma``. Both splits share the same
    latents and matrices; an identity head scores poorly because A differs
    from B, so alignment must be learned.
    """
    rng = np.random.default_rng(seed)
    latents = rng.normal(size=(clusters, dim))
    latents /= np.linalg.norm(latents, axis=1, keepdims=True)
    a = np.linalg.qr(rng.normal(size=(dim, dim)))[0]
    b = np.linalg.qr(rng.normal(size=(dim, dim)))[0]

    n = n_train + n_heldout
    cluster_ids = rng.integers(0, clusters, size=n)
    eps_q = rng.normal(scale=noise_sigma, size=(n, dim))
    eps_p = rng.normal(scale=noise_sigma, size=(n, dim))
    queries = (latents[cluster_ids] + eps_q) @ a.T
    positives = (latents[cluster_ids] + eps_p) @ b.T
    queries /= np.linalg.norm(queries, axis=1, keepdims=True)
    positives /= np.linalg.norm(positives, axis=1, keepdims=True)
    return SyntheticBenchmark(
        queries[:n_train],
        positives[:n_train],
        queries[n_train:],
        positives[n_train:],
        cluster_ids[:n_train],
        cluster_ids[n_train:],
    )


def cluster_recall_at_1(
    head: ProjectionHead,
    queries: np.ndarray,
    positives: np.ndarray,
    cluster_ids: np.ndarray,
) -> float:
    """Recall@1 with one-hot cluster relevance.

    Each query ranks every positive by cosine after the head; a query scores 1
    when the rank-1 item comes from its own cluster (mirrors single-gold R@1:
    within-cluster noise is independent across sides, so the exact paired item
    is not recoverable and the cluster is the gold label).
    """
    q_unit, _ = _project_normalized(head.weights, np.asarray(queries, dtype=np.float64))
    p_unit, _ = _project_normalized(head.weights, np.asarray(positives, dtype=np.float64))
    top1 = (q_unit @ p_unit.T).argmax(axis=1)
    return float(np.mean(np.asarray(cluster_ids)[top1] == np.asarray(cluster_ids)))
