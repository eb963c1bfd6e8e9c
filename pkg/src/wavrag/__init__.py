"""wavrag: retrieval-augmented generation over hybrid audio/text knowledge bases.

The package is organized as a library of composable stages: knowledge-base
ingestion (:mod:`wavrag.kb`), encoding (:mod:`wavrag.encoder`), embedding
persistence (:mod:`wavrag.store`), contrastive projection training
(:mod:`wavrag.train`), exact cosine retrieval (:mod:`wavrag.retrieval`),
audio augmentation (:mod:`wavrag.augment`), generation orchestration
(:mod:`wavrag.orchestrator`), and evaluation (:mod:`wavrag.evaluate`), plus a
CLI (:mod:`wavrag.cli`) and an HTTP service (:mod:`wavrag.service`).
"""

from .audio import AudioBuffer, read_wav, write_wav
from .augment import AugmentConfig, augment_chain, echo, gain, mix_noise_at_snr, replay_chain, resample_linear
from .encoder import RemoteEncoder, ToyEncoder, UnifiedQuery, encode, encode_entry, render_query_template
from .errors import WavragError
from .evaluate import evaluate_answers, evaluate_run, exact_match, latency_stats, ndcg_at_k, recall_at_k
from .generator import RemoteGenerator, ScriptedGenerator
from .kb import IngestReport, KnowledgeBase, KnowledgeEntry, Modality, ingest_manifest
from .orchestrator import AnswerRecord, PromptBundle, ReasoningSample, answer, assemble_prompt, select_self_consistent
from .retrieval import RetrievalResult, ScoredDoc, cosine, retrieval_distribution, retrieve, top_k
from .store import EmbeddingStore, read_store, unit_vector, write_store
from .train import (
    ProjectionHead,
    TrainBatch,
    TrainConfig,
    apply_head,
    info_nce_loss,
    loss_gradient,
    synthetic_modality_pairs,
    train,
)

__version__ = "0.1.0"

__all__ = [
    "AudioBuffer", "read_wav", "write_wav",
    "AugmentConfig", "augment_chain", "echo", "gain", "mix_noise_at_snr", "replay_chain", "resample_linear",
    "RemoteEncoder", "ToyEncoder", "UnifiedQuery", "encode", "encode_entry", "render_query_template",
    "WavragError",
    "evaluate_answers", "evaluate_run", "exact_match", "latency_stats", "ndcg_at_k", "recall_at_k",
    "RemoteGenerator", "ScriptedGenerator",
    "IngestReport", "KnowledgeBase", "KnowledgeEntry", "Modality", "ingest_manifest",
    "AnswerRecord", "PromptBundle", "ReasoningSample", "answer", "assemble_prompt", "select_self_consistent",
    "RetrievalResult", "ScoredDoc", "cosine", "retrieval_distribution", "retrieve", "top_k",
    "EmbeddingStore", "read_store", "unit_vector", "write_store",
    "ProjectionHead", "TrainBatch", "TrainConfig", "apply_head", "info_nce_loss", "loss_gradient",
    "synthetic_modality_pairs", "train",
    "__version__",
]
