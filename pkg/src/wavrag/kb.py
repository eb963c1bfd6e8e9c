"""Hybrid audio/text knowledge base: entries, manifest ingestion, lookup.

On disk a knowledge base is a directory holding ``entries.jsonl`` (one
validated entry per line, append-only). Ingestion takes an exclusive lock on
the directory via a lockfile, so the layout supports many concurrent readers
or a single writer. Loaded knowledge bases are immutable snapshots.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

from .errors import IngestLockError, NotFoundError

__all__ = ["Modality", "KnowledgeEntry", "IngestReport", "KnowledgeBase", "ingest_manifest"]

ENTRIES_FILENAME = "entries.jsonl"
LOCK_FILENAME = ".ingest.lock"


class Modality(str, Enum):
    TEXT = "text"
    AUDIO = "audio"
    AUDIO_TEXT = "audio_text"


@dataclass(frozen=True)
class KnowledgeEntry:
    """One knowledge-base item. ids are caller-supplied, opaque, case-sensitive."""

    id: str
    modality: Modality
    text: str | None = None
    audio_path: str | None = None
    meta: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        # Validation errors use the exact reason strings ingest reports per line.
        if not isinstance(self.id, str) or not self.id:
            raise ValueError("empty id")
        modality = Modality(self.modality)
        object.__setattr__(self, "modality", modality)
        if modality in (Modality.TEXT, Modality.AUDIO_TEXT) and not self.text:
            raise ValueError("missing text")
        if modality in (Modality.AUDIO, Modality.AUDIO_TEXT) and not self.audio_path:
            raise ValueError("missing audio_path")
        if modality is Modality.TEXT and self.audio_path is not None:
            raise ValueError("unexpected audio_path")
        if modality is Modality.AUDIO and self.text is not None:
            raise ValueError("unexpected text")

    def to_json_dict(self) -> dict:
        out: dict = {"id": self.id, "modality": self.modality.value}
        if self.text is not None:
            out["text"] = self.text
        if self.audio_path is not None:
            out["audio_path"] = self.audio_path
        if self.meta:
            out["meta"] = dict(self.meta)
        return out


@dataclass
class IngestReport:
    """accepted + rejected covers every non-blank manifest line."""

    accepted: int
    rejected: list[tuple[int, str]]  # (1-based line number, reason)


def _entry_from_manifest_line(obj: dict, manifest_dir: Path) -> KnowledgeEntry:
    if not isinstance(obj, dict):
        raise ValueError("invalid json")
    if "id" not in obj:
        raise ValueError("missing id")
    if not isinstance(obj["id"], str):
        raise ValueError("invalid id")
    modality_raw = obj.get("modality")
    try:
        modality = Modality(modality_raw)
    except ValueError:
        raise ValueError("invalid modality") from None
    text = obj.get("text")
    if text is not None and not isinstance(text, str):
        raise ValueError("invalid text")
    audio_path = obj.get("audio_path")
    if audio_path is not None and not isinstance(audio_path, str):
        raise ValueError("invalid audio_path")
    meta = obj.get("meta") or {}
    if not isinstance(meta, dict) or not all(
        isinstance(k, str) and isinstance(v, str) for k, v in meta.items()
    ):
        raise ValueError("invalid meta")
    if audio_path is not None:
        resolved = Path(audio_path)
        if not resolved.is_absolute():
            resolved = manifest_dir / resolved
        if not resolved.is_file():
            raise ValueError("missing audio file")
        audio_path = str(resolved)
    return KnowledgeEntry(obj["id"], modality, text, audio_path, dict(meta))


class _DirLock:
    """Exclusive advisory lock on a knowledge-base directory."""

    def __init__(self, kb_dir: Path):
        self.path = kb_dir / LOCK_FILENAME

    def __enter__(self):
        try:
            fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise IngestLockError(f"knowledge base is locked by another writer: {self.path}") from None
        with os.fdopen(fd, "w") as f:
            f.write(str(os.getpid()))
        return self

    def __exit__(self, *exc):
        try:
            os.unlink(self.path)
        except FileNotFoundError:
            pass
        return False


def ingest_manifest(manifest_path: str | Path, kb_dir: str | Path) -> IngestReport:
    """Validate a JSONL manifest line by line and append accepted entries.

    A bad line is rejected with a reason and never touches the store; blank
    lines are skipped. Duplicate ids (against the existing knowledge base or
    earlier manifest lines) are rejected.
    """
    manifest_path = Path(manifest_path)
    kb_dir = Path(kb_dir)
    try:
        lines = manifest_path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise NotFoundError(f"cannot read manifest {manifest_path}: {exc}") from exc
    kb_dir.mkdir(parents=True, exist_ok=True)

    with _DirLock(kb_dir):
        existing = KnowledgeBase.load(kb_dir)
        seen = set(existing.ids())
        accepted: list[KnowledgeEntry] = []
        rejected: list[tuple[int, str]] = []
        for line_no, line in enumerate(lines, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError:
                rejected.append((line_no, "invalid json"))
                continue
            try:
                entry = _entry_from_manifest_line(obj, manifest_path.parent)
            except ValueError as exc:
                rejected.append((line_no, str(exc)))
                continue
            if entry.id in seen:
                rejected.append((line_no, "duplicate id"))
                continue
            seen.add(entry.id)
            accepted.append(entry)
        if accepted:
            with open(kb_dir / ENTRIES_FILENAME, "a", encoding="utf-8") as f:
                for entry in accepted:
                    f.write(json.dumps(entry.to_json_dict(), ensure_ascii=False) + "\n")
                f.flush()
                os.fsync(f.fileno())
    return IngestReport(len(accepted), rejected)


class KnowledgeBase:
    """Immutable snapshot of a knowledge base's entries."""

    def __init__(self, entries: list[KnowledgeEntry]):
        self._entries = list(entries)
        self._by_id = {e.id: e for e in self._entries}
        if len(self._by_id) != len(self._entries):
            raise ValueError("duplicate ids in knowledge base")

    @classmethod
    def load(cls, kb_dir: str | Path) -> "KnowledgeBase":
        kb_dir = Path(kb_dir)
        if not kb_dir.is_dir():
            raise NotFoundError(f"knowledge base directory not found: {kb_dir}")
        entries_file = kb_dir / ENTRIES_FILENAME
        entries: list[KnowledgeEntry] = []
        if entries_file.is_file():
            for line in entries_file.read_text(encoding="utf-8").splitlines():
                if not line.strip():
                    continue
                obj = json.loads(line)
                entries.append(
                    KnowledgeEntry(
                        obj["id"],
                        Modality(obj["modality"]),
                        obj.get("text"),
                        obj.get("audio_path"),
                        obj.get("meta") or {},
                    )
                )
        return cls(entries)

    def get(self, entry_id: str) -> KnowledgeEntry:
        try:
            return self._by_id[entry_id]
        except KeyError:
            raise NotFoundError(f"unknown knowledge entry: {entry_id!r}") from None

    def ids(self) -> list[str]:
        return [e.id for e in self._entries]

    def __contains__(self, entry_id: str) -> bool:
        return entry_id in self._by_id

    def __iter__(self):
        return iter(self._entries)

    def __len__(self) -> int:
        return len(self._entries)
