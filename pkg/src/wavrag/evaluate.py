"""IR and generation metrics over run files and answer records.

Relevance is binary. Recall@k is the fraction of a query's relevant docs in
the top k; NDCG@k discounts hits by 1/log2(rank+1) and normalizes by the
ideal ranking. Exact Match follows the SQuAD normalization convention
(lowercase, strip punctuation, drop English articles, collapse whitespace).
Latency percentiles use the nearest-rank rule.
"""

from __future__ import annotations

import json
import logging
import math
import string
from dataclasses import dataclass, field
from pathlib import Path

from .errors import WavragError

__all__ = [
    "load_qrels",
    "read_run_file",
    "recall_at_k",
    "ndcg_at_k",
    "normalize_answer",
    "exact_match",
    "latency_stats",
    "MetricReport",
    "evaluate_run",
    "evaluate_answers",
    "render_report_text",
]

logger = logging.getLogger(__name__)

_PUNCT_TABLE = str.maketrans("", "", string.punctuation)
_ARTICLES = {"a", "an", "the"}


def recall_at_k(ranked: list[str], relevant: set[str], k: int) -> float:
    """|top-k intersection relevant| / |relevant|."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if not relevant:
        raise ValueError("relevant set must be non-empty")
    return len(set(ranked[:k]) & relevant) / len(relevant)


def ndcg_at_k(ranked: list[str], relevant: set[str], k: int = 10) -> float:
    """Binary-gain NDCG with discount 1/log2(rank+1), 1-based ranks."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if not relevant:
        raise ValueError("relevant set must be non-empty")
    dcg = sum(
        1.0 / math.log2(i + 1)
        for i, doc in enumerate(ranked[:k], start=1)
        if doc in relevant
    )
    idcg = sum(1.0 / math.log2(i + 1) for i in range(1, min(k, len(relevant)) + 1))
    return dcg / idcg


def normalize_answer(s: str) -> str:
    s = s.lower().translate(_PUNCT_TABLE)
    tokens = [t for t in s.split() if t not in _ARTICLES]
    return " ".join(tokens)


def exact_match(prediction: str, gold: list[str]) -> int:
    """1 iff the normalized prediction equals any normalized gold answer."""
    if not gold:
        raise ValueError("gold answers must be non-empty")
    pred = normalize_answer(prediction)
    return int(any(pred == normalize_answer(g) for g in gold))


def latency_stats(samples: list[float]) -> dict[str, float]:
    """Arithmetic mean plus nearest-rank p50/p95."""
    if not samples:
        raise ValueError("latency samples must be non-empty")
    ordered = sorted(samples)
    n = len(ordered)

    def nearest_rank(p: float) -> float:
        return ordered[max(0, math.ceil(p / 100.0 * n) - 1)]

    return {"mean": sum(ordered) / n, "p50": nearest_rank(50), "p95": nearest_rank(95)}


def load_qrels(path: str | Path) -> dict[str, set[str]]:
    """Parse TREC qrels (``query_id 0 doc_id rel``); rel > 0 marks relevance."""
    qrels: dict[str, set[str]] = {}
    for line_no, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != 4:
            raise WavragError(f"qrels line {line_no}: expected 4 fields, got {len(parts)}")
        qid, _, doc_id, rel = parts
        try:
            relevance = int(rel)
        except ValueError:
            raise WavragError(f"qrels line {line_no}: bad relevance {rel!r}") from None
        qrels.setdefault(qid, set())
        if relevance > 0:
            qrels[qid].add(doc_id)
    return qrels


def read_run_file(path: str | Path) -> dict[str, list[str]]:
    """Parse a TREC run file into ranked doc-id lists, ordered by the rank field."""
    per_query: dict[str, list[tuple[int, str]]] = {}
    for line_no, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != 6:
            raise WavragError(f"run line {line_no}: expected 6 fields, got {len(parts)}")
        qid, _, doc_id, rank, _score, _tag = parts
        try:
            rank_no = int(rank)
        except ValueError:
            raise WavragError(f"run line {line_no}: bad rank {rank!r}") from None
        per_query.setdefault(qid, []).append((rank_no, doc_id))
    return {
        qid: [doc for _, doc in sorted(entries)]
        for qid, entries in per_query.items()
    }


@dataclass
class MetricReport:
    per_query: dict[str, dict[str, float]]
    means: dict[str, float]
    warnings: list[str] = field(default_factory=list)

    def to_json_dict(self) -> dict:
        return {
            "per_query": {q: dict(v) for q, v in sorted(self.per_query.items())},
            "means": dict(self.means),
            "warnings": list(self.warnings),
        }


def evaluate_run(run_path: str | Path, qrels_path: str | Path) -> MetricReport:
    """Score a run file against qrels: R@1/R@5/R@10 and NDCG@10 per query plus means."""
    run = read_run_file(run_path)
    if not run:
        raise WavragError("no queries in run file")
    qrels = load_qrels(qrels_path)
    per_query: dict[str, dict[str, float]] = {}
    warnings: list[str] = []
    for qid in sorted(run):
        relevant = qrels.get(qid)
        if relevant is None:
            warnings.append(f"query {qid} missing from qrels; skipped")
            logger.warning("query %s missing from qrels; skipped", qid)
            continue
        if not relevant:
            warnings.append(f"query {qid} has no relevant docs; skipped")
            logger.warning("query %s has no relevant docs; skipped", qid)
            continue
        ranked = run[qid]
        per_query[qid] = {
            "recall@1": recall_at_k(ranked, relevant, 1),
            "recall@5": recall_at_k(ranked, relevant, 5),
            "recall@10": recall_at_k(ranked, relevant, 10),
            "ndcg@10": ndcg_at_k(ranked, relevant, 10),
        }
    if not per_query:
        raise WavragError("no evaluable queries (none present in qrels)")
    metric_names = ["recall@1", "recall@5", "recall@10", "ndcg@10"]
    means = {
        name: sum(v[name] for v in per_query.values()) / len(per_query)
        for name in metric_names
    }
    return MetricReport(per_query, means, warnings)


def evaluate_answers(answers_path: str | Path, gold_path: str | Path) -> MetricReport:
    """Score answer records (JSONL) against gold answers: EM plus latency stats."""
    gold: dict[str, list[str]] = {}
    for line_no, line in enumerate(Path(gold_path).read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
            gold[obj["query_id"]] = list(obj["answers"])
        except (json.JSONDecodeError, KeyError) as exc:
            raise WavragError(f"gold line {line_no}: {exc}") from exc

    per_query: dict[str, dict[str, float]] = {}
    latencies: list[float] = []
    warnings: list[str] = []
    n_records = 0
    for line_no, line in enumerate(Path(answers_path).read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        n_records += 1
        try:
            obj = json.loads(line)
            qid = obj["query_id"]
            final = obj["final_answer"]
        except (json.JSONDecodeError, KeyError) as exc:
            raise WavragError(f"answers line {line_no}: {exc}") from exc
        references = gold.get(qid)
        if not references:
            warnings.append(f"query {qid} missing from gold; skipped")
            logger.warning("query %s missing from gold; skipped", qid)
            continue
        per_query[qid] = {"em": float(exact_match(final, references))}
        total = obj.get("timings", {}).get("total_s")
        if total is not None:
            per_query[qid]["latency_s"] = float(total)
            latencies.append(float(total))
    if n_records == 0:
        raise WavragError("no queries in answers file")
    if not per_query:
        raise WavragError("no evaluable queries (none present in gold)")
    means = {"em": sum(v["em"] for v in per_query.values()) / len(per_query)}
    if latencies:
        stats = latency_stats(latencies)
        means["latency_mean_s"] = stats["mean"]
        means["latency_p50_s"] = stats["p50"]
        means["latency_p95_s"] = stats["p95"]
    return MetricReport(per_query, means, warnings)


def render_report_text(report: MetricReport) -> str:
    """Human-readable table: one row per query, then the corpus means."""
    names = sorted({name for values in report.per_query.values() for name in values})
    width = max([len("query")] + [len(q) for q in report.per_query])
    header = "query".ljust(width) + "".join(f"  {name:>12}" for name in names)
    lines = [header, "-" * len(header)]
    for qid in sorted(report.per_query):
        row = qid.ljust(width)
        for name in names:
            value = report.per_query[qid].get(name)
            row += f"  {value:>12.4f}" if value is not None else "  " + " " * 12
        lines.append(row)
    lines.append("-" * len(header))
    for name, value in report.means.items():
        lines.append(f"mean {name}: {value:.6f}")
    for warning in report.warnings:
        lines.append(f"warning: {warning}")
    return "\n".join(lines)
