import json

import numpy as np
import pytest

from wavrag.cli import main
from wavrag.config import EngineConfig, load_config
from wavrag.errors import ConfigError
from wavrag.evaluate import evaluate_run
from wavrag.generator import prompt_key

from conftest import make_wav, sine, write_manifest
from test_evaluate import write_fixture_files


def run_cli(capsys, *argv):
    code = main(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


@pytest.fixture
def fixture_kb(tmp_path, capsys):
    texts = [
        "paris is the capital of france",
        "the boiling point of water is one hundred degrees",
        "mount everest is the tallest mountain",
        "the moon orbits the earth every month",
        "honey never spoils when sealed",
    ]
    manifest = write_manifest(
        tmp_path / "manifest.jsonl",
        [{"id": f"doc-{i}", "modality": "text", "text": t} for i, t in enumerate(texts)],
    )
    kb_dir = tmp_path / "kb"
    store = tmp_path / "kb.wvrg"
    assert main(["ingest", "--manifest", str(manifest), "--kb", str(kb_dir)]) == 0
    assert main([
        "embed", "--kb", str(kb_dir), "--store", str(store),
        "--encoder", "toy", "--dim", "64", "--instruction", "inst",
    ]) == 0
    capsys.readouterr()  # drop setup output so tests capture only their own
    return kb_dir, store


def test_no_args_usage_exit_1(capsys):
    code, out, err = run_cli(capsys)
    assert code == 1
    assert "usage" in err.lower()


def test_unknown_subcommand_exit_1(capsys):
    code, _, err = run_cli(capsys, "frobnicate")
    assert code == 1
    assert "usage" in err.lower()


def test_missing_required_flag_exit_1(capsys):
    code, _, err = run_cli(capsys, "retrieve")
    assert code == 1


def test_runtime_error_exit_2(capsys, tmp_path):
    code, _, err = run_cli(
        capsys, "retrieve", "--store", str(tmp_path / "missing.wvrg"),
        "--query-text", "x", "--instruction", "i",
    )
    assert code == 2
    assert "error" in err.lower()


def test_ingest_reports_rejects(capsys, tmp_path):
    manifest = write_manifest(
        tmp_path / "m.jsonl",
        [{"id": "a", "modality": "text", "text": "x"}, {"id": "a", "modality": "text", "text": "y"}],
    )
    code, out, _ = run_cli(capsys, "ingest", "--manifest", str(manifest), "--kb", str(tmp_path / "kb"))
    assert code == 0
    report = json.loads(out)
    assert report == {"accepted": 1, "rejected": [{"line": 2, "reason": "duplicate id"}]}


def test_embed_writes_store_and_meta(capsys, fixture_kb, tmp_path):
    _, store = fixture_kb
    meta = json.loads((tmp_path / "kb.wvrg.meta.json").read_text())
    assert meta["instruction"] == "inst"
    assert meta["dim"] == 64
    from wavrag.store import read_store

    assert read_store(store).count == 5


def test_retrieve_three_trec_lines(capsys, fixture_kb):
    kb_dir, store = fixture_kb
    code, out, _ = run_cli(
        capsys, "retrieve", "--store", str(store), "--query-text", "capital of france",
        "--instruction", "inst", "--k", "3",
    )
    assert code == 0
    lines = out.strip().splitlines()
    assert len(lines) == 3
    first = lines[0].split()
    assert first[0] == "q0" and first[1] == "Q0" and first[2] == "doc-0" and first[3] == "1"


def test_retrieve_batch_queries_to_run_file(capsys, fixture_kb, tmp_path):
    _, store = fixture_kb
    queries = tmp_path / "queries.jsonl"
    queries.write_text(
        json.dumps({"query_id": "qa", "instruction": "inst", "text": "capital of france"}) + "\n"
        + json.dumps({"query_id": "qb", "instruction": "inst", "text": "tallest mountain"}) + "\n"
    )
    run_path = tmp_path / "out.run"
    code, out, _ = run_cli(
        capsys, "retrieve", "--store", str(store), "--queries", str(queries),
        "--k", "2", "--out", str(run_path), "--run-tag", "tagged",
    )
    assert code == 0
    lines = run_path.read_text().strip().splitlines()
    assert len(lines) == 4
    assert lines[0].startswith("qa Q0 ") and lines[0].endswith(" tagged")
    assert lines[2].startswith("qb Q0 ")


def test_answer_with_scripted_generator(capsys, fixture_kb, tmp_path):
    kb_dir, store = fixture_kb
    from wavrag.encoder import ToyEncoder, UnifiedQuery
    from wavrag.kb import KnowledgeBase
    from wavrag.orchestrator import assemble_prompt, usc_selection_prompt, ReasoningSample
    from wavrag.retrieval import retrieve
    from wavrag.store import read_store

    query = UnifiedQuery("inst", "capital of france", None)
    hits = retrieve(read_store(store), ToyEncoder(64), query, 2)
    bundle = assemble_prompt(query, hits, KnowledgeBase.load(kb_dir), cot=True)
    chains = ["thinking\nAnswer: Paris", "more thinking\nAnswer: Paris", "hmm\nAnswer: Lyon"]
    samples = [ReasoningSample(c, c.rsplit("Answer: ")[-1]) for c in chains]
    canned = {
        prompt_key(bundle.render()): chains,
        prompt_key(usc_selection_prompt(samples)): ["1"],
    }
    gen_file = tmp_path / "gen.json"
    gen_file.write_text(json.dumps(canned))

    code, out, _ = run_cli(
        capsys, "answer", "--store", str(store), "--kb", str(kb_dir),
        "--query-text", "capital of france", "--instruction", "inst",
        "--generator", f"scripted:{gen_file}", "--k", "2", "--n-samples", "3",
    )
    assert code == 0
    record = json.loads(out)
    assert record["final_answer"] == "Paris"
    assert record["method"] == "usc"
    assert len(record["samples"]) == 3
    assert record["timings"]["total_s"] > 0


def test_eval_retrieval_json_matches_library(capsys, tmp_path):
    run, qrels = write_fixture_files(tmp_path)
    code, out, _ = run_cli(capsys, "eval-retrieval", "--run", str(run), "--qrels", str(qrels), "--json")
    assert code == 0
    assert json.loads(out) == evaluate_run(run, qrels).to_json_dict()


def test_eval_retrieval_table(capsys, tmp_path):
    run, qrels = write_fixture_files(tmp_path)
    code, out, _ = run_cli(capsys, "eval-retrieval", "--run", str(run), "--qrels", str(qrels))
    assert code == 0
    assert "mean ndcg@10" in out


def test_eval_generation(capsys, tmp_path):
    answers = tmp_path / "answers.jsonl"
    answers.write_text(json.dumps({"query_id": "q1", "final_answer": "An Owl", "timings": {"total_s": 0.05}}) + "\n")
    gold = tmp_path / "gold.jsonl"
    gold.write_text(json.dumps({"query_id": "q1", "answers": ["owl"]}) + "\n")
    code, out, _ = run_cli(capsys, "eval-generation", "--answers", str(answers), "--gold", str(gold), "--json")
    assert code == 0
    assert json.loads(out)["means"]["em"] == 1.0


def test_export_embeddings_csv(capsys, fixture_kb, tmp_path):
    _, store = fixture_kb
    out_csv = tmp_path / "emb.csv"
    code, _, _ = run_cli(capsys, "export-embeddings", "--store", str(store), "--out", str(out_csv))
    assert code == 0
    lines = out_csv.read_text().strip().splitlines()
    assert lines[0].split(",")[:2] == ["id", "v0"]
    assert len(lines) == 6  # header + 5 docs
    first = lines[1].split(",")
    assert first[0] == "doc-0"
    vec = np.array([float(x) for x in first[1:]])
    assert abs(np.linalg.norm(vec) - 1.0) < 1e-5


def test_train_head_cli(capsys, tmp_path):
    from wavrag.store import EmbeddingStore, write_store

    rng = np.random.default_rng(0)
    rows = rng.normal(size=(24, 8)).astype(np.float32)
    rows /= np.linalg.norm(rows, axis=1, keepdims=True)
    ids = [f"v{i}" for i in range(24)]
    store_path = tmp_path / "s.wvrg"
    write_store(EmbeddingStore(8, rows, ids), store_path)
    pairs_path = tmp_path / "pairs.jsonl"
    pairs_path.write_text(
        "\n".join(json.dumps({"query_id": f"v{i}", "positive_id": f"v{(i + 1) % 24}"}) for i in range(24)) + "\n"
    )
    out_path = tmp_path / "head.wvrh"
    code, out, _ = run_cli(
        capsys, "train-head", "--store", str(store_path), "--pairs", str(pairs_path),
        "--out", str(out_path), "--epochs", "3", "--batch-size", "8", "--seed", "1",
    )
    assert code == 0
    summary = json.loads(out)
    assert out_path.exists()
    assert summary["epochs"] == 3
    from wavrag.train import ProjectionHead

    assert ProjectionHead.load(out_path).weights.shape == (8, 8)


def test_augment_cli_with_replay(capsys, tmp_path):
    in_dir, noise_dir, out_dir = tmp_path / "in", tmp_path / "noise", tmp_path / "out"
    in_dir.mkdir(), noise_dir.mkdir()
    rng = np.random.default_rng(5)
    make_wav(in_dir / "a.wav", sine(440, 0.25))
    make_wav(in_dir / "b.wav", sine(220, 0.25))
    make_wav(noise_dir / "n1.wav", rng.normal(scale=0.1, size=2000))
    make_wav(noise_dir / "n2.wav", rng.normal(scale=0.2, size=1500))

    code, out, _ = run_cli(
        capsys, "augment", "--in", str(in_dir), "--noise", str(noise_dir),
        "--out", str(out_dir), "--seed", "7",
    )
    assert code == 0
    assert json.loads(out)["processed"] == 2
    produced = sorted(p.name for p in out_dir.glob("*.wav"))
    assert produced == ["a.wav", "b.wav"]

    # replaying the sidecar log reproduces the emitted WAV bit for bit
    from wavrag.audio import read_wav, write_wav
    from wavrag.augment import replay_chain

    log = [json.loads(line) for line in (out_dir / "a.wav.jsonl").read_text().splitlines()]
    noise_corpus = [read_wav(p) for p in sorted(noise_dir.glob("*.wav"))]
    replayed = replay_chain(read_wav(in_dir / "a.wav"), noise_corpus, log)
    write_wav(replayed, tmp_path / "replay.wav")
    assert (tmp_path / "replay.wav").read_bytes() == (out_dir / "a.wav").read_bytes()

    # deterministic per seed: the same invocation produces identical bytes
    out2 = tmp_path / "out2"
    run_cli(capsys, "augment", "--in", str(in_dir), "--noise", str(noise_dir),
            "--out", str(out2), "--seed", "7")
    assert (out2 / "a.wav").read_bytes() == (out_dir / "a.wav").read_bytes()
    assert (out2 / "a.wav.jsonl").read_text() == (out_dir / "a.wav.jsonl").read_text()


def test_help_exits_zero(capsys):
    assert main(["--help"]) == 0


class TestConfig:
    def test_defaults(self):
        cfg = load_config()
        assert cfg.k == 3 and cfg.tau == 0.05 and cfg.encoder == "toy"

    def test_file_env_flag_precedence(self, tmp_path):
        config_file = tmp_path / "engine.cfg"
        config_file.write_text("k = 5\ntau = 0.2\nencoder_dim = 16\n# comment\nbind = '0.0.0.0:9000'\n")
        env = {"WAVRAG_K": "7", "WAVRAG_ENCODER_DIM": "32"}
        cfg = load_config(config_file, env=env, overrides={"k": 9})
        assert cfg.k == 9            # flag beats env and file
        assert cfg.encoder_dim == 32  # env beats file
        assert cfg.tau == 0.2        # file beats default
        assert cfg.bind == "0.0.0.0:9000"

    def test_range_parsing(self, tmp_path):
        config_file = tmp_path / "engine.cfg"
        config_file.write_text("snr_db = -2,10\n")
        cfg = load_config(config_file, env={})
        assert cfg.snr_db == (-2.0, 10.0)

    def test_unknown_key_rejected(self, tmp_path):
        config_file = tmp_path / "engine.cfg"
        config_file.write_text("mystery = 1\n")
        with pytest.raises(ConfigError, match="mystery"):
            load_config(config_file, env={})

    def test_invalid_values(self, tmp_path):
        with pytest.raises(ConfigError):
            load_config(tmp_path / "missing.cfg", env={})
        with pytest.raises(ConfigError):
            EngineConfig(k=0)
        with pytest.raises(ConfigError):
            EngineConfig(bind="nohost").bind_host_port()

    def test_bind_parsing(self):
        assert EngineConfig(bind="127.0.0.1:8123").bind_host_port() == ("127.0.0.1", 8123)
