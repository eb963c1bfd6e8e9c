"""Generation-stage orchestration: prompt assembly, chain-of-thought sampling,
and self-consistent answer selection.

Prompt template (pinned): the system text, a blank line, one
``[Knowledge {rank}]`` block per retrieved entry in rank order (blank line
between blocks), a blank line, ``Question: {query_text}``, and, when
chain-of-thought is on, a newline plus the magic prompt. Audio entries
contribute their audio reference out-of-band for generators that accept
audio, alongside any stored text.
"""

from __future__ import annotations

import re
import time
from dataclasses import dataclass, field
from enum import Enum

from .encoder import UnifiedQuery
from .errors import ConsistencyError, GeneratorUnavailableError, NotFoundError, WavragError
from .kb import KnowledgeBase
from .retrieval import RetrievalResult, retrieve
from .store import EmbeddingStore
from .train import ProjectionHead

__all__ = [
    "MAGIC_PROMPT",
    "DEFAULT_SYSTEM_TEXT",
    "KnowledgeBlock",
    "PromptBundle",
    "ReasoningSample",
    "SelectionMethod",
    "AnswerRecord",
    "assemble_prompt",
    "extract_answer",
    "generate_cot",
    "usc_selection_prompt",
    "select_self_consistent",
    "answer",
]

MAGIC_PROMPT = "Let's think step-by-step"
DEFAULT_SYSTEM_TEXT = (
    "You are a helpful assistant. Answer the question using the knowledge provided below."
)

_ANSWER_MARKER = re.compile(r"^Answer:", flags=re.MULTILINE)
_INDEX_REPLY = re.compile(r"\d+")


@dataclass(frozen=True)
class KnowledgeBlock:
    rank: int
    text: str
    audio_ref: str | None = None


@dataclass
class PromptBundle:
    """Everything the generator needs for one query, in a fixed serialization."""

    system_text: str
    knowledge_blocks: list[KnowledgeBlock]
    query_text: str
    magic_prompt: str = MAGIC_PROMPT
    cot: bool = False
    query_audio_ref: str | None = None

    def render(self) -> str:
        sections = [self.system_text]
        for block in self.knowledge_blocks:
            sections.append(f"[Knowledge {block.rank}]\n{block.text}")
        sections.append(f"Question: {self.query_text}")
        prompt = "\n\n".join(sections)
        if self.cot:
            prompt += "\n" + self.magic_prompt
        return prompt

    def audio_refs(self) -> list[str]:
        """Query audio first, then knowledge audio in rank order."""
        refs = [self.query_audio_ref] if self.query_audio_ref else []
        refs.extend(b.audio_ref for b in self.knowledge_blocks if b.audio_ref)
        return refs


@dataclass(frozen=True)
class ReasoningSample:
    chain_text: str
    extracted_answer: str


class SelectionMethod(str, Enum):
    USC = "usc"
    MAJORITY_FALLBACK = "majority_fallback"
    SINGLE = "single"


def assemble_prompt(
    q: UnifiedQuery,
    hits: RetrievalResult,
    kb: KnowledgeBase,
    cot: bool,
    system_text: str = DEFAULT_SYSTEM_TEXT,
    magic_prompt: str = MAGIC_PROMPT,
) -> PromptBundle:
    """Build the prompt bundle for a query and its retrieval hits.

    Blocks follow retrieval rank order regardless of hit list order; an
    unresolvable hit id means the index and knowledge base have diverged.
    """
    blocks: list[KnowledgeBlock] = []
    for hit in sorted(hits.hits, key=lambda h: h.rank):
        try:
            entry = kb.get(hit.id)
        except NotFoundError:
            raise ConsistencyError(
                f"retrieved id {hit.id!r} is not in the knowledge base (index/kb skew)"
            ) from None
        blocks.append(KnowledgeBlock(hit.rank, entry.text or "", entry.audio_path))
    return PromptBundle(
        system_text=system_text,
        knowledge_blocks=blocks,
        query_text=q.text or "",
        magic_prompt=magic_prompt,
        cot=cot,
        query_audio_ref=q.audio_path,
    )


def extract_answer(chain_text: str) -> str:
    """Text after the last line-initial ``Answer:`` marker, trimmed.

    Fallback when the marker is absent: the last non-empty line. An empty
    completion yields an empty answer (kept, never dropped).
    """
    matches = list(_ANSWER_MARKER.finditer(chain_text))
    if matches:
        return chain_text[matches[-1].end():].strip()
    lines = [line.strip() for line in chain_text.splitlines() if line.strip()]
    return lines[-1] if lines else ""


def generate_cot(backend, bundle: PromptBundle, n_samples: int, temperature: float) -> list[ReasoningSample]:
    """Sample n reasoning chains and extract an answer from each."""
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    completions = backend.generate(
        bundle.render(), n_samples, temperature, audio_refs=bundle.audio_refs() or None
    )
    return [ReasoningSample(text, extract_answer(text)) for text in completions]


def usc_selection_prompt(samples: list[ReasoningSample]) -> str:
    """Selection prompt listing every reasoning path, numbered from 1."""
    parts = [
        "I have generated the following responses to the question. "
        "Select the most consistent response based on majority consensus."
    ]
    for i, sample in enumerate(samples, start=1):
        parts.append(f"Response {i}:\n{sample.chain_text}")
    parts.append("Reply with only the number of the most consistent response.")
    return "\n\n".join(parts)


def _majority_answer(samples: list[ReasoningSample]) -> str:
    # Exact-string majority; ties go to the answer appearing earliest.
    counts: dict[str, int] = {}
    first_seen: dict[str, int] = {}
    for i, sample in enumerate(samples):
        counts[sample.extracted_answer] = counts.get(sample.extracted_answer, 0) + 1
        first_seen.setdefault(sample.extracted_answer, i)
    best = max(counts.items(), key=lambda kv: (kv[1], -first_seen[kv[0]]))
    return best[0]


def select_self_consistent(backend, samples: list[ReasoningSample]) -> tuple[str, SelectionMethod]:
    """Pick the final answer via Universal Self-Consistency.

    The backend is shown all numbered reasoning paths and asked for the
    1-based index of the most consistent one. An unparseable or out-of-range
    reply, or a backend failure, falls back to exact-string majority vote over
    the extracted answers (ties resolved by lowest sample index); the pipeline
    never hard-fails here.
    """
    if not samples:
        raise ValueError("samples must be non-empty")
    if len(samples) == 1:
        return samples[0].extracted_answer, SelectionMethod.SINGLE
    try:
        reply = backend.generate(usc_selection_prompt(samples), 1, 0.0)[0]
    except (GeneratorUnavailableError, WavragError):
        return _majority_answer(samples), SelectionMethod.MAJORITY_FALLBACK
    match = _INDEX_REPLY.search(reply)
    if match:
        index = int(match.group())
        if 1 <= index <= len(samples):
            return samples[index - 1].extracted_answer, SelectionMethod.USC
    return _majority_answer(samples), SelectionMethod.MAJORITY_FALLBACK


@dataclass
class AnswerRecord:
    query_id: str
    final_answer: str
    method: SelectionMethod
    samples: list[ReasoningSample]
    hits: RetrievalResult
    timings: dict[str, float] = field(default_factory=dict)

    def to_json_dict(self) -> dict:
        return {
            "query_id": self.query_id,
            "final_answer": self.final_answer,
            "method": self.method.value,
            "samples": [
                {"chain_text": s.chain_text, "extracted_answer": s.extracted_answer}
                for s in self.samples
            ],
            "hits": self.hits.to_json_dict(),
            "timings": dict(self.timings),
        }


def answer(
    store: EmbeddingStore,
    kb: KnowledgeBase,
    enc_backend,
    gen_backend,
    q: UnifiedQuery,
    k: int,
    n_samples: int = 5,
    cot: bool = True,
    head: ProjectionHead | None = None,
    temperature: float = 0.7,
    query_id: str = "q0",
    system_text: str = DEFAULT_SYSTEM_TEXT,
) -> AnswerRecord:
    """Full pipeline: retrieve, assemble, sample reasoning chains, select.

    Timings record the retrieval, generation, and selection stages separately;
    any stage error propagates and no partial record is emitted.
    """
    hits = retrieve(store, enc_backend, q, k, head=head, query_id=query_id)
    bundle = assemble_prompt(q, hits, kb, cot, system_text=system_text)
    gen_start = time.perf_counter()
    samples = generate_cot(gen_backend, bundle, n_samples, temperature)
    gen_elapsed = time.perf_counter() - gen_start
    sel_start = time.perf_counter()
    final, method = select_self_consistent(gen_backend, samples)
    sel_elapsed = time.perf_counter() - sel_start
    timings = {
        "retrieval_s": hits.elapsed_s or 0.0,
        "generation_s": gen_elapsed,
        "selection_s": sel_elapsed,
    }
    timings["total_s"] = timings["retrieval_s"] + gen_elapsed + sel_elapsed
    return AnswerRecord(query_id, final, method, samples, hits, timings)
