"""Command-line surface binding every pipeline stage.

Subcommands: ingest, embed, train-head, retrieve, answer, augment,
eval-retrieval, eval-generation, export-embeddings, serve. Exit codes:
0 success, 1 usage error, 2 runtime error. Diagnostics go to stderr; data
goes to stdout or the requested output files.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import augment as aug
from .audio import read_wav, write_wav
from .config import DEFAULT_INSTRUCTION, EngineConfig, load_config
from .encoder import RemoteEncoder, ToyEncoder, UnifiedQuery, encode_entry
from .errors import ConfigError, UsageError, WavragError
from .evaluate import evaluate_answers, evaluate_run, render_report_text
from .generator import RemoteGenerator, ScriptedGenerator
from .kb import KnowledgeBase, ingest_manifest
from .orchestrator import answer as run_answer
from .retrieval import format_trec_lines, retrieve
from .store import EmbeddingStore, read_store, write_store
from .train import ProjectionHead, TrainConfig, load_pairs_jsonl, train

PROG = "wavrag"


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage problems must exit 1, not argparse's 2
        raise UsageError(f"{message}\n{self.format_usage()}")


def make_encoder(cfg: EngineConfig):
    if cfg.encoder == "toy":
        return ToyEncoder(cfg.encoder_dim, cfg.encoder_seed)
    return RemoteEncoder(cfg.encoder, cfg.encoder_timeout_ms)


def make_generator(cfg: EngineConfig):
    if cfg.generator is None:
        raise ConfigError("a generator backend is required (URL or scripted:<file>)")
    if cfg.generator.startswith("scripted:"):
        payload = json.loads(Path(cfg.generator[len("scripted:"):]).read_text(encoding="utf-8"))
        if "canned" in payload or "default" in payload:
            return ScriptedGenerator(payload.get("canned"), payload.get("default"))
        return ScriptedGenerator(payload)
    return RemoteGenerator(cfg.generator, cfg.generator_timeout_ms)


def _config_from_args(args) -> EngineConfig:
    overrides = {
        name: getattr(args, name)
        for name in (
            "kb_dir", "store", "head", "encoder", "encoder_dim", "encoder_seed",
            "encoder_timeout_ms", "generator", "generator_timeout_ms", "k", "tau",
            "n_samples", "temperature", "instruction", "bind",
        )
        if hasattr(args, name)
    }
    return load_config(getattr(args, "config", None), overrides=overrides)


def _load_head(cfg: EngineConfig) -> ProjectionHead | None:
    return ProjectionHead.load(cfg.head) if cfg.head else None


def _query_from_args(args, cfg: EngineConfig) -> UnifiedQuery:
    if args.query_text is None and args.query_audio is None:
        raise UsageError("provide --query-text and/or --query-audio")
    return UnifiedQuery(cfg.instruction, args.query_text, args.query_audio)


def cmd_ingest(args) -> int:
    report = ingest_manifest(args.manifest, args.kb_dir)
    json.dump(
        {"accepted": report.accepted,
         "rejected": [{"line": n, "reason": r} for n, r in report.rejected]},
        sys.stdout, indent=2,
    )
    print()
    return 0


def cmd_embed(args) -> int:
    cfg = _config_from_args(args)
    kb = KnowledgeBase.load(args.kb_dir)
    backend = make_encoder(cfg)
    ids, vectors = [], []
    for entry in kb:
        ids.append(entry.id)
        vectors.append(encode_entry(backend, entry, cfg.instruction))
    if ids:
        store = EmbeddingStore.from_vectors(ids, vectors)
    else:
        store = EmbeddingStore.empty(cfg.encoder_dim)
    write_store(store, args.store)
    # The binary format has no metadata slot; record the encoding instruction
    # in a sidecar so qrels joins stay reproducible.
    Path(str(args.store) + ".meta.json").write_text(
        json.dumps({"instruction": cfg.instruction, "encoder": cfg.encoder, "dim": store.dim})
        + "\n",
        encoding="utf-8",
    )
    print(json.dumps({"count": store.count, "dim": store.dim}))
    return 0


def cmd_train_head(args) -> int:
    store = read_store(args.store)
    pairs = load_pairs_jsonl(args.pairs, store)
    train_cfg = TrainConfig(
        tau=args.tau, lr=args.lr, epochs=args.epochs, batch_size=args.batch_size, seed=args.seed
    )
    d_out = args.dim_out or store.dim
    if d_out == store.dim:
        head = ProjectionHead.identity(store.dim)
    else:
        rng = np.random.default_rng(args.seed)
        head = ProjectionHead(rng.normal(scale=1.0 / np.sqrt(store.dim), size=(d_out, store.dim)))
    result = train(head, pairs, train_cfg)
    result.head.save(args.out)
    print(json.dumps({
        "initial_loss": result.loss_trace[0],
        "final_loss": result.loss_trace[-1],
        "epochs": len(result.loss_trace),
        "out": str(args.out),
    }))
    return 0


def _retrieve_queries(args, cfg: EngineConfig):
    if args.queries:
        for line_no, line in enumerate(
            Path(args.queries).read_text(encoding="utf-8").splitlines(), start=1
        ):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                yield obj["query_id"], UnifiedQuery(
                    obj.get("instruction", cfg.instruction), obj.get("text"), obj.get("audio_path")
                )
            except (json.JSONDecodeError, KeyError, ValueError) as exc:
                raise WavragError(f"queries file line {line_no}: {exc}") from exc
    else:
        yield args.query_id, _query_from_args(args, cfg)


def cmd_retrieve(args) -> int:
    cfg = _config_from_args(args)
    store = read_store(args.store)
    backend = make_encoder(cfg)
    head = _load_head(cfg)
    out = open(args.out, "w", encoding="utf-8") if args.out else sys.stdout
    try:
        for query_id, query in _retrieve_queries(args, cfg):
            result = retrieve(store, backend, query, cfg.k, head=head, query_id=query_id)
            for line in format_trec_lines(result, args.run_tag):
                out.write(line + "\n")
    finally:
        if args.out:
            out.close()
    return 0


def cmd_answer(args) -> int:
    cfg = _config_from_args(args)
    store = read_store(args.store)
    kb = KnowledgeBase.load(args.kb_dir)
    record = run_answer(
        store, kb, make_encoder(cfg), make_generator(cfg),
        _query_from_args(args, cfg), cfg.k,
        n_samples=cfg.n_samples, cot=not args.no_cot, head=_load_head(cfg),
        temperature=cfg.temperature, query_id=args.query_id,
    )
    print(json.dumps(record.to_json_dict(), ensure_ascii=False))
    return 0


def cmd_augment(args) -> int:
    in_dir, noise_dir, out_dir = Path(args.in_dir), Path(args.noise_dir), Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    chain_cfg = aug.AugmentConfig(
        echo_delay_ms=tuple(args.echo_delay_ms), echo_scale=tuple(args.echo_scale),
        snr_db=tuple(args.snr_db), noise_prob=args.noise_prob,
        gain_db=tuple(args.gain_db), gain_prob=args.gain_prob, seed=args.seed,
    )
    noise_files = sorted(noise_dir.glob("*.wav"))
    if not noise_files and chain_cfg.noise_prob > 0:
        raise WavragError(f"no noise WAVs in {noise_dir}")
    noise_corpus = [read_wav(p) for p in noise_files]
    inputs = sorted(in_dir.glob("*.wav"))
    if not inputs:
        raise WavragError(f"no input WAVs in {in_dir}")
    for index, path in enumerate(inputs):
        rng = np.random.default_rng([args.seed, index])
        buf = read_wav(path)
        out, log = aug.augment_chain(buf, noise_corpus, chain_cfg, rng=rng)
        write_wav(out, out_dir / path.name)
        with open(out_dir / (path.name + ".jsonl"), "w", encoding="utf-8") as f:
            for record in log:
                if record["op"] == "noise":
                    record = dict(record, file=noise_files[record["index"]].name)
                f.write(json.dumps(record) + "\n")
    print(json.dumps({"processed": len(inputs), "out_dir": str(out_dir)}))
    return 0


def _print_report(report, as_json: bool) -> None:
    if as_json:
        print(json.dumps(report.to_json_dict(), indent=2))
    else:
        print(render_report_text(report))


def cmd_eval_retrieval(args) -> int:
    _print_report(evaluate_run(args.run, args.qrels), args.json)
    return 0


def cmd_eval_generation(args) -> int:
    _print_report(evaluate_answers(args.answers, args.gold), args.json)
    return 0


def cmd_export_embeddings(args) -> int:
    store = read_store(args.store)
    out = open(args.out, "w", encoding="utf-8") if args.out else sys.stdout
    try:
        out.write("id," + ",".join(f"v{i}" for i in range(store.dim)) + "\n")
        for doc_id in store.ids:
            row = store.vector(doc_id)
            out.write(doc_id + "," + ",".join(f"{float(x):.9g}" for x in row) + "\n")
    finally:
        if args.out:
            out.close()
    return 0


def cmd_serve(args) -> int:
    from .service import serve_forever

    cfg = _config_from_args(args)
    serve_forever(cfg)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog=PROG, description=__doc__)
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    def common(p, *, config=True):
        if config:
            p.add_argument("--config", default=None, help="key = value config file")

    p = sub.add_parser("ingest", help="validate a JSONL manifest and append entries")
    p.add_argument("--manifest", required=True)
    p.add_argument("--kb", dest="kb_dir", required=True)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("embed", help="encode every knowledge entry into a store")
    common(p)
    p.add_argument("--kb", dest="kb_dir", required=True)
    p.add_argument("--store", required=True, help="output store path")
    p.add_argument("--encoder", default=None, help="'toy' or a remote base URL")
    p.add_argument("--dim", dest="encoder_dim", type=int, default=None)
    p.add_argument("--seed", dest="encoder_seed", type=int, default=None)
    p.add_argument("--instruction", default=None)
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("train-head", help="train a projection head on (query, positive) pairs")
    p.add_argument("--store", required=True)
    p.add_argument("--pairs", required=True, help='JSONL of {"query_id", "positive_id"}')
    p.add_argument("--out", required=True)
    p.add_argument("--tau", type=float, default=0.05)
    p.add_argument("--lr", type=float, default=0.05)
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--dim-out", type=int, default=None)
    p.set_defaults(func=cmd_train_head)

    def query_flags(p):
        p.add_argument("--query-text", default=None)
        p.add_argument("--query-audio", default=None)
        p.add_argument("--query-id", default="q0")
        p.add_argument("--instruction", default=None)
        p.add_argument("--encoder", default=None)
        p.add_argument("--dim", dest="encoder_dim", type=int, default=None)
        p.add_argument("--seed", dest="encoder_seed", type=int, default=None)
        p.add_argument("--head", default=None)
        p.add_argument("--k", type=int, default=None)

    p = sub.add_parser("retrieve", help="top-k search for one query or a query file")
    common(p)
    p.add_argument("--store", required=True)
    query_flags(p)
    p.add_argument("--queries", default=None, help="JSONL query file for batch runs")
    p.add_argument("--run-tag", default="wavrag")
    p.add_argument("--out", default=None, help="run file path (default stdout)")
    p.set_defaults(func=cmd_retrieve)

    p = sub.add_parser("answer", help="retrieve, reason, and select a final answer")
    common(p)
    p.add_argument("--store", required=True)
    p.add_argument("--kb", dest="kb_dir", required=True)
    query_flags(p)
    p.add_argument("--generator", default=None, help="remote base URL or scripted:<file>")
    p.add_argument("--n-samples", dest="n_samples", type=int, default=None)
    p.add_argument("--temperature", type=float, default=None)
    p.add_argument("--no-cot", action="store_true")
    p.set_defaults(func=cmd_answer)

    p = sub.add_parser("augment", help="run the echo/noise/gain chain over a WAV directory")
    p.add_argument("--in", dest="in_dir", required=True)
    p.add_argument("--noise", dest="noise_dir", required=True)
    p.add_argument("--out", dest="out_dir", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--echo-delay-ms", nargs=2, type=float, default=(100.0, 500.0))
    p.add_argument("--echo-scale", nargs=2, type=float, default=(0.0, 0.2))
    p.add_argument("--snr-db", nargs=2, type=float, default=(-4.0, 14.0))
    p.add_argument("--noise-prob", type=float, default=0.5)
    p.add_argument("--gain-db", nargs=2, type=float, default=(-4.0, 15.0))
    p.add_argument("--gain-prob", type=float, default=0.5)
    p.set_defaults(func=cmd_augment)

    p = sub.add_parser("eval-retrieval", help="score a TREC run file against qrels")
    p.add_argument("--run", required=True)
    p.add_argument("--qrels", required=True)
    p.add_argument("--json", action="store_true", help="machine-readable report")
    p.set_defaults(func=cmd_eval_retrieval)

    p = sub.add_parser("eval-generation", help="score answer records against gold answers")
    p.add_argument("--answers", required=True)
    p.add_argument("--gold", required=True)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_eval_generation)

    p = sub.add_parser("export-embeddings", help="dump a store as CSV (id + components)")
    p.add_argument("--store", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_export_embeddings)

    p = sub.add_parser("serve", help="HTTP retrieval/answer service over a loaded KB")
    common(p)
    p.add_argument("--store", required=True)
    p.add_argument("--kb", dest="kb_dir", required=True)
    p.add_argument("--encoder", default=None)
    p.add_argument("--dim", dest="encoder_dim", type=int, default=None)
    p.add_argument("--seed", dest="encoder_seed", type=int, default=None)
    p.add_argument("--head", default=None)
    p.add_argument("--generator", default=None)
    p.add_argument("--bind", default=None)
    p.add_argument("--k", type=int, default=None)
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv: list[str] | None = None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not getattr(args, "func", None):
            raise UsageError(parser.format_usage())
        return args.func(args)
    except UsageError as exc:
        print(str(exc), file=sys.stderr)
        return 1
    except SystemExit as exc:  # argparse --help
        return int(exc.code or 0)
    except (WavragError, OSError) as exc:
        print(f"{PROG}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
