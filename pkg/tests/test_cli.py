import json

import numpy as np

from pxby import corpus
from pxby.cli import main
from pxby.model import SeqModel, SeqModelConfig
from pxby.synthetic import make_records, write_fixture_dir
from pxby.tokenizer import MODALITY_SWITCH_ID, Tokenizer
from pxby.training import save_checkpoint


def run(argv):
    return main([str(a) for a in argv])


def read_bytes(path):
    with open(path, "rb") as f:
        return f.read()


def test_tokenize_empty_dir(tmp_path, capsys):
    src = tmp_path / "src"
    src.mkdir()
    out = tmp_path / "out"
    assert run(["--out", out, "tokenize", src]) == 0
    records = corpus.read_corpus(out / "corpus.pxtk")
    assert records == []


def test_tokenize_single_text_file(tmp_path, capsys):
    src = tmp_path / "src"
    src.mkdir()
    (src / "a.txt").write_text("ab")
    out = tmp_path / "out"
    assert run(["--out", out, "tokenize", src]) == 0
    assert "text tokens: 2" in capsys.readouterr().out
    records = corpus.read_corpus(out / "corpus.pxtk")
    assert len(records[0]) == 2


def test_tokenize_mixed_records_switch_count(tmp_path):
    src = tmp_path / "src"
    rng = np.random.default_rng(0)
    write_fixture_dir(src, make_records(rng, 3))
    out = tmp_path / "out"
    assert run(["--out", out, "tokenize", src]) == 0
    for stream in corpus.read_corpus(out / "corpus.pxtk"):
        switches = int(np.sum(stream.tokens == MODALITY_SWITCH_ID))
        assert switches == len(stream.segments) - 1


def test_tokenize_missing_dir_fails(tmp_path, capsys):
    assert run(["--out", tmp_path / "o", "tokenize", tmp_path / "nope"]) == 1
    assert "nope" in capsys.readouterr().err


def test_tokenize_raw_rgb_is_quantized(tmp_path):
    from pxby.palette import load_palette
    pal = load_palette()
    src = tmp_path / "src"
    src.mkdir()
    h, w = 2, 3
    idx = np.random.default_rng(9).integers(0, 55, size=(h, w))
    rgb = pal.rgb[idx]
    body = "\n".join(" ".join(str(int(v)) for v in rgb[y, x]) for y in range(h)
                     for x in range(w))
    (src / "img.ppm").write_text(f"P3\n{w} {h}\n255\n{body}\n")
    out = tmp_path / "out"
    assert run(["--out", out, "tokenize", src]) == 0
    stream = corpus.read_corpus(out / "corpus.pxtk")[0]
    dec = Tokenizer().decode(stream)
    assert np.array_equal(dec.frames[0], idx)


def test_detokenize_round_trip(tmp_path):
    src = tmp_path / "src"
    rng = np.random.default_rng(1)
    write_fixture_dir(src, make_records(rng, 2))
    out1 = tmp_path / "o1"
    assert run(["--out", out1, "tokenize", src]) == 0
    out2 = tmp_path / "o2"
    assert run(["--out", out2, "detokenize", out1 / "corpus.pxtk"]) == 0
    out3 = tmp_path / "o3"
    assert run(["--out", out3, "tokenize", out2]) == 0
    assert read_bytes(out1 / "corpus.pxtk") == read_bytes(out3 / "corpus.pxtk")


def test_build_seq_writes_arrays(tmp_path):
    src = tmp_path / "src"
    write_fixture_dir(src, make_records(np.random.default_rng(2), 2))
    out = tmp_path / "out"
    run(["--out", out, "tokenize", src])
    out2 = tmp_path / "seq"
    assert run(["--out", out2, "build-seq", out / "corpus.pxtk"]) == 0
    data = np.load(out2 / "sequences.npz")
    streams = corpus.read_corpus(out / "corpus.pxtk")
    assert data["contexts_0"].shape == (len(streams[0]), 6)
    assert np.array_equal(data["targets_0"][:, 0], streams[0].tokens)


def test_gen_control_deterministic(tmp_path):
    cfgp = tmp_path / "c.json"
    cfgp.write_text(json.dumps({"n_traces": 4, "steps": 40}))
    outs = []
    for name in ("a", "b"):
        out = tmp_path / name
        assert run(["--seed", 3, "--config", cfgp, "--out", out, "gen-control"]) == 0
        outs.append(read_bytes(out / "control.pxtk") + read_bytes(out / "traces.csv"))
    assert outs[0] == outs[1]
    with open(tmp_path / "a" / "traces.csv") as f:
        header = f.readline().strip()
    assert header == "t,setpoint,output,action,controller"


def test_train_one_epoch_writes_single_csv_row(tmp_path):
    src = tmp_path / "src"
    write_fixture_dir(src, make_records(np.random.default_rng(3), 3))
    tok_out = tmp_path / "tok"
    run(["--out", tok_out, "tokenize", src])
    cfgp = tmp_path / "t.json"
    cfgp.write_text(json.dumps({
        "train": {"epochs": 1, "batch_size": 4, "seq_len": 16, "mode": "predictive"},
        "model": {"embed_dim": 12, "hidden": 8},
    }))
    out = tmp_path / "run"
    assert run(["--seed", 1, "--config", cfgp, "--out", out, "train",
                tok_out / "corpus.pxtk"]) == 0
    lines = (out / "metrics.csv").read_text().strip().splitlines()
    assert len(lines) == 2
    assert (out / "best.pxck").exists()
    assert json.loads((out / "run_config.json").read_text())["seed"] == 1


def test_train_determinism(tmp_path):
    src = tmp_path / "src"
    write_fixture_dir(src, make_records(np.random.default_rng(4), 3))
    tok_out = tmp_path / "tok"
    run(["--out", tok_out, "tokenize", src])
    cfgp = tmp_path / "t.json"
    cfgp.write_text(json.dumps({
        "train": {"epochs": 2, "batch_size": 4, "seq_len": 16, "mode": "autoregressive"},
        "model": {"embed_dim": 12, "hidden": 8},
    }))
    blobs = []
    for name in ("r1", "r2"):
        out = tmp_path / name
        assert run(["--seed", 7, "--config", cfgp, "--out", out, "train",
                    tok_out / "corpus.pxtk"]) == 0
        blobs.append(read_bytes(out / "metrics.csv") + read_bytes(out / "best.pxck"))
    assert blobs[0] == blobs[1]


def test_generate_streams_ids(tmp_path):
    src = tmp_path / "src"
    write_fixture_dir(src, make_records(np.random.default_rng(5), 2))
    tok_out = tmp_path / "tok"
    run(["--out", tok_out, "tokenize", src])
    cfg = SeqModelConfig(mode="predictive", embed_dim=12, hidden=8)
    model = SeqModel(cfg, rng=np.random.default_rng(0))
    ckpt = tmp_path / "m.pxck"
    save_checkpoint(ckpt, model.params, {"model": cfg.to_dict()}, 0)
    out = tmp_path / "gen"
    assert run(["--seed", 2, "--out", out, "generate", tok_out / "corpus.pxtk",
                "--checkpoint", ckpt, "--steps", 8]) == 0
    ids = [int(v) for v in (out / "generated.txt").read_text().split()]
    assert len(ids) == 8
    assert all(0 <= v < 151 for v in ids)


def test_generate_missing_checkpoint_fails(tmp_path, capsys):
    src = tmp_path / "src"
    write_fixture_dir(src, make_records(np.random.default_rng(6), 1))
    tok_out = tmp_path / "tok"
    run(["--out", tok_out, "tokenize", src])
    assert run(["--out", tmp_path / "g", "generate", tok_out / "corpus.pxtk",
                "--checkpoint", tmp_path / "missing.pxck"]) == 1
    assert "missing" in capsys.readouterr().err


def test_eval_identical_corpora(tmp_path, capsys):
    src = tmp_path / "src"
    write_fixture_dir(src, make_records(np.random.default_rng(7), 2))
    tok_out = tmp_path / "tok"
    run(["--out", tok_out, "tokenize", src])
    out = tmp_path / "eval"
    assert run(["--out", out, "eval", tok_out / "corpus.pxtk",
                tok_out / "corpus.pxtk"]) == 0
    text = capsys.readouterr().out
    assert "hamming 0.000 ± 0.000" in text
    assert "cosine 1.000 ± 0.000" in text
    assert "bleu 1.000 ± 0.000" in text


def test_lock_file_blocks_second_run(tmp_path, capsys):
    src = tmp_path / "src"
    src.mkdir()
    out = tmp_path / "out"
    out.mkdir()
    (out / ".lock").touch()
    assert run(["--out", out, "tokenize", src]) == 1
    assert "locked" in capsys.readouterr().err
    (out / ".lock").unlink()
    assert run(["--out", out, "tokenize", src]) == 0


def test_control_demo_with_tiny_checkpoint(tmp_path):
    cfg = SeqModelConfig(mode="diffusion", embed_dim=12, hidden=8,
                         bidirectional=True, n_diffusion_steps=4)
    model = SeqModel(cfg, rng=np.random.default_rng(1))
    ckpt = tmp_path / "d.pxck"
    save_checkpoint(ckpt, model.params, {"model": cfg.to_dict()}, 0)
    cfgp = tmp_path / "demo.json"
    cfgp.write_text(json.dumps({"warmup_steps": 10, "horizon": 5,
                                "n_repeat": 1, "terminal_window": 3}))
    blobs = []
    for name in ("d1", "d2"):
        out = tmp_path / name
        assert run(["--seed", 5, "--config", cfgp, "--out", out, "control-demo",
                    "--checkpoint", ckpt, "--repetitions", 2]) == 0
        blobs.append(read_bytes(out / "demo_summary.csv")
                     + read_bytes(out / "demo_trace.csv"))
    assert blobs[0] == blobs[1]
    lines = (tmp_path / "d1" / "demo_summary.csv").read_text().strip().splitlines()
    assert lines[0] == "rep,terminal_error,chatter_amplitude,success"
    assert len(lines) == 3
