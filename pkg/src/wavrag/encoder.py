"""Query/entry encoders: instruction templating, toy hashing backend, remote client.

Every backend turns an instruction-templated input into one unit-norm vector.
The production path is a remote HTTP encoder behind ``POST /embed``; tests and
CI use :class:`ToyEncoder`, a fully pinned, dependency-free scheme that any
implementation can reproduce:

* Text: lowercase the rendered template and split on ASCII whitespace. For
  each token take the FNV-1a 64-bit hash ``h`` and add ``+1`` if ``h`` is even
  else ``-1`` to component ``(h // 2) mod dim``.
* Audio: decode to mono samples in [-1, 1], split into ``dim`` equal
  contiguous frames (last frame zero-padded), and add each frame's RMS to the
  matching component (scale 1.0).
* Sum the text and audio parts, then L2-normalize. An all-zero sum normalizes
  to the unit basis vector e0.
"""

from __future__ import annotations

import base64
import json
import urllib.error
import urllib.request
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .audio import read_wav
from .errors import DimMismatchError, EncoderUnavailableError
from .kb import KnowledgeEntry
from .store import unit_vector

__all__ = [
    "UnifiedQuery",
    "render_query_template",
    "ToyEncoder",
    "RemoteEncoder",
    "encode",
    "encode_entry",
    "fnv1a64",
]

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_U64 = (1 << 64) - 1


@dataclass(frozen=True)
class UnifiedQuery:
    """Instruction plus text and/or audio; at least one payload must be present."""

    instruction: str
    text: str | None = None
    audio_path: str | None = None

    def __post_init__(self):
        if not self.instruction:
            raise ValueError("instruction must be non-empty")
        if self.text is None and self.audio_path is None:
            raise ValueError("query needs text or audio")


def render_query_template(q: UnifiedQuery) -> str:
    """Render the instruction template; audio is carried out-of-band, never inlined."""
    return f"Instruction: {q.instruction} Query: {q.text if q.text is not None else ''}"


def fnv1a64(data: bytes) -> int:
    h = _FNV_OFFSET
    for byte in data:
        h ^= byte
        h = (h * _FNV_PRIME) & _U64
    return h


class ToyEncoder:
    """Deterministic hashing encoder (see module docstring for the scheme).

    ``seed`` is accepted for config parity with other backends but the pinned
    scheme does not consume randomness, so it never affects output.
    """

    def __init__(self, dim: int, seed: int = 0):
        if dim <= 0:
            raise ValueError("dim must be positive")
        self.dim = int(dim)
        self.seed = int(seed)

    def encode(self, q: UnifiedQuery) -> np.ndarray:
        v = self._text_component(render_query_template(q))
        if q.audio_path is not None:
            v += self._audio_component(read_wav(q.audio_path).samples)
        if not np.any(v):
            basis = np.zeros(self.dim, dtype=np.float32)
            basis[0] = 1.0
            return basis
        return unit_vector(v)

    def _text_component(self, template: str) -> np.ndarray:
        v = np.zeros(self.dim, dtype=np.float64)
        for token in template.lower().split():
            h = fnv1a64(token.encode("utf-8"))
            v[(h // 2) % self.dim] += 1.0 if h % 2 == 0 else -1.0
        return v

    def _audio_component(self, samples: np.ndarray) -> np.ndarray:
        n = len(samples)
        if n == 0:
            return np.zeros(self.dim, dtype=np.float64)
        frame_len = -(-n // self.dim)  # ceil division
        padded = np.zeros(frame_len * self.dim, dtype=np.float64)
        padded[:n] = samples
        frames = padded.reshape(self.dim, frame_len)
        return np.sqrt(np.mean(np.square(frames), axis=1))


class RemoteEncoder:
    """HTTP client for the remote encoder wire protocol (``POST /embed``)."""

    def __init__(self, endpoint: str, timeout_ms: int = 10_000):
        if timeout_ms <= 0:
            raise ValueError("timeout_ms must be positive")
        self.endpoint = endpoint.rstrip("/")
        self.timeout_ms = int(timeout_ms)

    def encode(self, q: UnifiedQuery) -> np.ndarray:
        body: dict = {"instruction": q.instruction}
        if q.text is not None:
            body["text"] = q.text
        if q.audio_path is not None:
            body["audio_b64"] = base64.b64encode(Path(q.audio_path).read_bytes()).decode("ascii")
        request = urllib.request.Request(
            self.endpoint + "/embed",
            data=json.dumps(body).encode("utf-8"),
            headers={"Content-Type": "application/json"},
            method="POST",
        )
        try:
            with urllib.request.urlopen(request, timeout=self.timeout_ms / 1000.0) as resp:
                payload = json.loads(resp.read().decode("utf-8"))
        except urllib.error.HTTPError as exc:
            raise EncoderUnavailableError(f"encoder returned HTTP {exc.code}") from exc
        except (urllib.error.URLError, TimeoutError, OSError) as exc:
            raise EncoderUnavailableError(f"encoder unreachable: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise EncoderUnavailableError(f"encoder returned invalid JSON: {exc}") from exc
        if not isinstance(payload, dict) or "dim" not in payload or "embedding" not in payload:
            raise EncoderUnavailableError("encoder response missing dim/embedding")
        embedding = payload["embedding"]
        if len(embedding) != payload["dim"]:
            raise DimMismatchError(
                f"encoder returned {len(embedding)} components but claims dim {payload['dim']}"
            )
        try:
            return unit_vector(embedding)
        except ValueError as exc:
            raise EncoderUnavailableError(f"encoder returned a bad embedding: {exc}") from exc


def encode(backend, q: UnifiedQuery) -> np.ndarray:
    """Encode a query with any backend exposing ``.encode``; unit-norm output."""
    return backend.encode(q)


def encode_entry(backend, entry: KnowledgeEntry, instruction: str) -> np.ndarray:
    """Encode a knowledge entry exactly as a UnifiedQuery with the same fields."""
    return backend.encode(UnifiedQuery(instruction, entry.text, entry.audio_path))
