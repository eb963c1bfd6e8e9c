"""HTTP retrieval/answer service over an immutable knowledge-base snapshot.

Endpoints:

* ``GET /v1/health`` -> ``{"status": "ok", "dim": int, "count": int}``
* ``POST /v1/retrieve`` with ``{"instruction", "text"?, "audio_b64"?, "k"?}``
  -> RetrievalResult JSON including per-request latency
* ``POST /v1/answer`` adds ``"n_samples"``, ``"cot"``, ``"temperature"``
  -> AnswerRecord JSON

Responses are reproducible via the CLI with the same configuration; the
service never mutates the knowledge base. Backend unavailability maps to 503
with a stage tag, malformed bodies to 400 with the offending field, and an
exceeded request deadline (encoder + generator timeouts + 1 s scheduling
budget) to 504.
"""

from __future__ import annotations

import base64
import binascii
import json
import logging
import tempfile
import time
from dataclasses import dataclass
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

from .config import EngineConfig
from .encoder import UnifiedQuery
from .errors import (
    ConfigError,
    EncoderUnavailableError,
    GeneratorUnavailableError,
    WavragError,
)
from .kb import KnowledgeBase
from .orchestrator import DEFAULT_SYSTEM_TEXT, answer
from .retrieval import retrieve
from .store import EmbeddingStore, read_store
from .train import ProjectionHead

__all__ = ["EngineRuntime", "build_runtime", "make_server", "serve_forever"]

logger = logging.getLogger(__name__)


@dataclass
class EngineRuntime:
    """Everything a request needs, loaded once and treated as immutable."""

    store: EmbeddingStore
    kb: KnowledgeBase | None
    encoder: object
    generator: object | None
    head: ProjectionHead | None
    k_default: int
    n_samples_default: int
    temperature_default: float
    system_text: str = DEFAULT_SYSTEM_TEXT
    deadline_s: float = 60.0


def build_runtime(cfg: EngineConfig) -> EngineRuntime:
    from .cli import make_encoder, make_generator

    if cfg.store is None:
        raise ConfigError("config value 'store' is required to serve")
    store = read_store(cfg.store)
    kb = KnowledgeBase.load(cfg.kb_dir) if cfg.kb_dir else None
    generator = make_generator(cfg) if cfg.generator else None
    head = ProjectionHead.load(cfg.head) if cfg.head else None
    deadline = (cfg.encoder_timeout_ms + cfg.generator_timeout_ms) / 1000.0 + 1.0
    return EngineRuntime(
        store=store,
        kb=kb,
        encoder=make_encoder(cfg),
        generator=generator,
        head=head,
        k_default=cfg.k,
        n_samples_default=cfg.n_samples,
        temperature_default=cfg.temperature,
        deadline_s=deadline,
    )


class _BadRequest(Exception):
    def __init__(self, message: str, fieldname: str):
        super().__init__(message)
        self.fieldname = fieldname


def _require_query_fields(body: dict, runtime: EngineRuntime) -> dict:
    if "instruction" not in body:
        raise _BadRequest("instruction is required", "instruction")
    instruction = body["instruction"]
    if not isinstance(instruction, str) or not instruction:
        raise _BadRequest("instruction must be a non-empty string", "instruction")
    text = body.get("text")
    if text is not None and not isinstance(text, str):
        raise _BadRequest("text must be a string", "text")
    audio_b64 = body.get("audio_b64")
    if audio_b64 is not None and not isinstance(audio_b64, str):
        raise _BadRequest("audio_b64 must be a base64 string", "audio_b64")
    if text is None and audio_b64 is None:
        raise _BadRequest("provide text and/or audio_b64", "text")
    k = body.get("k", runtime.k_default)
    if not isinstance(k, int) or isinstance(k, bool) or k < 1:
        raise _BadRequest("k must be an integer >= 1", "k")
    return {"instruction": instruction, "text": text, "audio_b64": audio_b64, "k": k}


class _Handler(BaseHTTPRequestHandler):
    server: "_Server"

    def log_message(self, fmt, *args):  # route through logging, not stderr
        logger.debug("%s - %s", self.address_string(), fmt % args)

    def _send(self, code: int, payload: dict) -> None:
        raw = json.dumps(payload, ensure_ascii=False).encode("utf-8")
        self.send_response(code)
        self.send_header("Content-Type", "application/json; charset=utf-8")
        self.send_header("Content-Length", str(len(raw)))
        self.end_headers()
        self.wfile.write(raw)

    def _read_body(self) -> dict:
        length = int(self.headers.get("Content-Length") or 0)
        raw = self.rfile.read(length)
        try:
            body = json.loads(raw.decode("utf-8"))
        except (json.JSONDecodeError, UnicodeDecodeError):
            raise _BadRequest("request body must be a JSON object", "body") from None
        if not isinstance(body, dict):
            raise _BadRequest("request body must be a JSON object", "body")
        return body

    def do_GET(self):
        if self.path != "/v1/health":
            self._send(404, {"error": f"unknown path {self.path}"})
            return
        runtime = self.server.runtime
        self._send(200, {"status": "ok", "dim": runtime.store.dim, "count": runtime.store.count})

    def do_POST(self):
        runtime = self.server.runtime
        start = time.perf_counter()
        tmp_audio: Path | None = None
        try:
            if self.path not in ("/v1/retrieve", "/v1/answer"):
                self._send(404, {"error": f"unknown path {self.path}"})
                return
            body = self._read_body()
            fields = _require_query_fields(body, runtime)
            audio_path = None
            if fields["audio_b64"] is not None:
                try:
                    audio_bytes = base64.b64decode(fields["audio_b64"], validate=True)
                except (binascii.Error, ValueError):
                    raise _BadRequest("audio_b64 is not valid base64", "audio_b64") from None
                with tempfile.NamedTemporaryFile(suffix=".wav", delete=False) as tmp:
                    tmp.write(audio_bytes)
                    tmp_audio = Path(tmp.name)
                audio_path = str(tmp_audio)
            query = UnifiedQuery(fields["instruction"], fields["text"], audio_path)

            if self.path == "/v1/retrieve":
                result = retrieve(
                    runtime.store, runtime.encoder, query, fields["k"],
                    head=runtime.head, query_id=str(body.get("query_id", "q0")),
                )
                payload = result.to_json_dict()
            else:
                if runtime.generator is None or runtime.kb is None:
                    raise ConfigError("answer endpoint needs a generator and a knowledge base")
                n_samples = body.get("n_samples", runtime.n_samples_default)
                if not isinstance(n_samples, int) or isinstance(n_samples, bool) or n_samples < 1:
                    raise _BadRequest("n_samples must be an integer >= 1", "n_samples")
                cot = body.get("cot", True)
                if not isinstance(cot, bool):
                    raise _BadRequest("cot must be a boolean", "cot")
                temperature = body.get("temperature", runtime.temperature_default)
                if not isinstance(temperature, (int, float)) or isinstance(temperature, bool):
                    raise _BadRequest("temperature must be a number", "temperature")
                record = answer(
                    runtime.store, runtime.kb, runtime.encoder, runtime.generator, query,
                    fields["k"], n_samples=n_samples, cot=cot, head=runtime.head,
                    temperature=float(temperature), query_id=str(body.get("query_id", "q0")),
                    system_text=runtime.system_text,
                )
                payload = record.to_json_dict()

            if time.perf_counter() - start > runtime.deadline_s:
                self._send(504, {"error": "request deadline exceeded"})
                return
            self._send(200, payload)
        except _BadRequest as exc:
            self._send(400, {"error": str(exc), "field": exc.fieldname})
        except EncoderUnavailableError as exc:
            self._send(503, {"error": str(exc), "stage": "encode"})
        except GeneratorUnavailableError as exc:
            self._send(503, {"error": str(exc), "stage": "generate"})
        except (WavragError, ValueError) as exc:
            self._send(500, {"error": str(exc)})
        finally:
            if tmp_audio is not None:
                tmp_audio.unlink(missing_ok=True)


class _Server(ThreadingHTTPServer):
    daemon_threads = True

    def __init__(self, address, runtime: EngineRuntime):
        super().__init__(address, _Handler)
        self.runtime = runtime


def make_server(runtime: EngineRuntime, host: str, port: int) -> _Server:
    return _Server((host, port), runtime)


def serve_forever(cfg: EngineConfig) -> None:
    runtime = build_runtime(cfg)
    host, port = cfg.bind_host_port()
    server = make_server(runtime, host, port)
    logger.info("serving on %s:%d (dim=%d, count=%d)",
                host, server.server_address[1], runtime.store.dim, runtime.store.count)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
