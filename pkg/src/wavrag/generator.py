"""Generator backends: a remote HTTP client and a scripted test double.

Wire protocol: ``POST {endpoint}/generate`` with
``{"prompt": str, "audio_refs": [str]?, "n": int, "temperature": float}``,
answered by ``{"completions": [str]}`` with exactly n entries.
"""

from __future__ import annotations

import hashlib
import json
import urllib.error
import urllib.request

from .errors import GeneratorUnavailableError

__all__ = ["ScriptedGenerator", "RemoteGenerator", "prompt_key"]


def prompt_key(prompt: str) -> str:
    """Canonical key for scripted completions: SHA-256 hex of the UTF-8 prompt."""
    return hashlib.sha256(prompt.encode("utf-8")).hexdigest()


class ScriptedGenerator:
    """Deterministic generator mapping prompt hashes to canned completions.

    When more samples are requested than a prompt has canned completions, the
    list is cycled; an unknown prompt raises unless a default completion was
    configured.
    """

    def __init__(self, canned: dict[str, list[str]] | None = None, default: str | None = None):
        self._canned = dict(canned or {})
        self._default = default

    def add(self, prompt: str, completions: list[str]) -> None:
        self._canned[prompt_key(prompt)] = list(completions)

    def generate(self, prompt: str, n: int, temperature: float = 0.0,
                 audio_refs: list[str] | None = None) -> list[str]:
        if n < 1:
            raise ValueError("n must be >= 1")
        completions = self._canned.get(prompt_key(prompt))
        if completions is None:
            if self._default is not None:
                return [self._default] * n
            raise GeneratorUnavailableError(
                f"no scripted completion for prompt hash {prompt_key(prompt)[:12]}..."
            )
        return [completions[i % len(completions)] for i in range(n)]


class RemoteGenerator:
    """HTTP client for the generator wire protocol."""

    def __init__(self, endpoint: str, timeout_ms: int = 30_000):
        if timeout_ms <= 0:
            raise ValueError("timeout_ms must be positive")
        self.endpoint = endpoint.rstrip("/")
        self.timeout_ms = int(timeout_ms)

    def generate(self, prompt: str, n: int, temperature: float = 0.7,
                 audio_refs: list[str] | None = None) -> list[str]:
        if n < 1:
            raise ValueError("n must be >= 1")
        body: dict = {"prompt": prompt, "n": n, "temperature": temperature}
        if audio_refs:
            body["audio_refs"] = list(audio_refs)
        request = urllib.request.Request(
            self.endpoint + "/generate",
            data=json.dumps(body).encode("utf-8"),
            headers={"Content-Type": "application/json"},
            method="POST",
        )
        try:
            with urllib.request.urlopen(request, timeout=self.timeout_ms / 1000.0) as resp:
                payload = json.loads(resp.read().decode("utf-8"))
        except urllib.error.HTTPError as exc:
            raise GeneratorUnavailableError(f"generator returned HTTP {exc.code}") from exc
        except (urllib.error.URLError, TimeoutError, OSError) as exc:
            raise GeneratorUnavailableError(f"generator unreachable: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise GeneratorUnavailableError(f"generator returned invalid JSON: {exc}") from exc
        completions = payload.get("completions") if isinstance(payload, dict) else None
        if not isinstance(completions, list) or len(completions) != n:
            raise GeneratorUnavailableError("generator response lacks n completions")
        return [str(c) for c in completions]
