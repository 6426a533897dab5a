"""Command-line entry point: tokenize, detokenize, build-seq,
gen-control, train, generate, eval, control-demo.

Every run takes a single lock on its output directory, logs the
resolved configuration and seed there, and is deterministic given
(inputs, seed).
"""

import argparse
import contextlib
import json
import os
import sys

import numpy as np

from . import control, corpus, metrics, synthetic
from .model import SeqModel, SeqModelConfig, generate
from .palette import quantize_frames
from .sequence import record_context_array, reduce_stream
from .tokenizer import Record, Tokenizer
from .training import TrainConfig, load_model, train_model


def _load_config(path):
    if path is None:
        return {}
    with open(path) as f:
        return json.load(f)


@contextlib.contextmanager
def _run_dir(args, config):
    os.makedirs(args.out, exist_ok=True)
    lock = os.path.join(args.out, ".lock")
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise RuntimeError(f"output directory {args.out} is locked by another run")
    os.close(fd)
    try:
        with open(os.path.join(args.out, "run_config.json"), "w") as f:
            json.dump({"command": args.command, "seed": args.seed,
                       "config": config}, f, indent=2, sort_keys=True)
            f.write("\n")
        yield args.out
    finally:
        os.remove(lock)


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_tokenize(args, out, config, rng):
    tok = Tokenizer()
    stems = {}
    if not os.path.isdir(args.input):
        raise RuntimeError(f"not a directory: {args.input}")
    for name in sorted(os.listdir(args.input)):
        stem, ext = os.path.splitext(name)
        if ext in (".txt", ".pgm", ".ppm", ".wav"):
            stems.setdefault(stem, {})[ext] = os.path.join(args.input, name)
    records = []
    for stem in sorted(stems):
        files = stems[stem]
        rec = Record()
        try:
            if ".txt" in files:
                with open(files[".txt"]) as f:
                    rec.text = f.read()
            if ".pgm" in files:
                rec.frames = synthetic.read_pgm(files[".pgm"])[None, :, :]
            elif ".ppm" in files:  # raw rgb, quantized on the way in
                rgb = synthetic.read_ppm(files[".ppm"])
                rec.frames = quantize_frames(rgb[None], tok.palette)
            if ".wav" in files:
                rec.audio = synthetic.read_wav(files[".wav"])
        except (OSError, ValueError) as exc:
            raise RuntimeError(f"{stem}: {exc}")
        records.append(tok.encode_record(rec))
    path = os.path.join(out, "corpus.pxtk")
    corpus.write_corpus(path, records)
    counts = {"text": 0, "image": 0, "audio": 0}
    for stream in records:
        for seg in stream.segments:
            counts[seg.modality] += seg.length
    for mod in ("text", "image", "audio"):
        print(f"{mod} tokens: {counts[mod]}")
    print(f"records: {len(records)} -> {path}")
    return 0


def cmd_detokenize(args, out, config, rng):
    tok = Tokenizer()
    for i, stream in enumerate(corpus.read_corpus(args.corpus)):
        rec = tok.decode(stream)
        stem = os.path.join(out, f"rec{i:04d}")
        if rec.text is not None:
            with open(stem + ".txt", "w", newline="\n") as f:
                f.write(rec.text)
        if rec.frames is not None:
            synthetic.write_pgm(stem + ".pgm", rec.frames[0])
        if rec.audio is not None:
            synthetic.write_wav(stem + ".wav", rec.audio)
    print(f"decoded into {out}")
    return 0


def cmd_build_seq(args, out, config, rng):
    tok = Tokenizer()
    arrays = {}
    total = 0
    for i, stream in enumerate(corpus.read_corpus(args.corpus)):
        c, y = record_context_array(tok, stream)
        arrays[f"contexts_{i}"] = c
        arrays[f"targets_{i}"] = y
        total += len(c)
    path = os.path.join(out, "sequences.npz")
    np.savez(path, **arrays)
    print(f"{total} context rows -> {path}")
    return 0


def cmd_gen_control(args, out, config, rng):
    ccfg = control.ControlDatasetConfig()
    for k, v in config.items():
        if hasattr(ccfg, k):
            setattr(ccfg, k, tuple(v) if isinstance(v, list) else v)
    streams, traces = control.build_control_dataset(ccfg, rng)
    path = os.path.join(out, "control.pxtk")
    corpus.write_corpus(path, streams)
    with open(os.path.join(out, "traces.csv"), "w") as f:
        f.write("t,setpoint,output,action,controller\n")
        for tr in traces:
            for i in range(len(tr.times)):
                f.write(f"{tr.times[i]:.4f},{tr.setpoint[i]:.6f},"
                        f"{tr.output[i]:.6f},{tr.action[i]:.6f},{tr.controller}\n")
    print(f"{len(streams)} traces -> {path}")
    return 0


def _split_records(streams, rng, val_fraction=0.1):
    idx = rng.permutation(len(streams))
    n_val = max(1, int(len(streams) * val_fraction)) if len(streams) > 1 else 0
    val = [streams[i] for i in idx[:n_val]]
    train = [streams[i] for i in idx[n_val:]]
    return train, val


def cmd_train(args, out, config, rng):
    tok = Tokenizer()
    streams = corpus.read_corpus(args.corpus)
    if not streams:
        raise RuntimeError(f"empty corpus: {args.corpus}")
    tcfg = TrainConfig(seed=args.seed, **config.get("train", {}))
    mcfg = SeqModelConfig(mode=tcfg.mode, **config.get("model", {}))
    reduced = [reduce_stream(tok, s, tcfg.audio_reduction, tcfg.image_reduction)
               for s in streams]
    train_streams, val_streams = _split_records(reduced, rng)
    if not val_streams:
        val_streams = train_streams
    train_items = [record_context_array(tok, s) for s in train_streams]
    val_items = [record_context_array(tok, s) for s in val_streams]
    model = SeqModel(mcfg, rng=rng)
    rows = train_model(model, train_items, val_items, tcfg, out_dir=out)
    last = rows[-1]
    print(f"epoch {last[0]}: train_loss {last[1]:.4f} train_acc {last[2]:.4f} "
          f"val_loss {last[3]:.4f} val_acc {last[4]:.4f}")
    print(f"metrics -> {os.path.join(out, 'metrics.csv')}")
    return 0


def cmd_generate(args, out, config, rng):
    if not os.path.exists(args.checkpoint):
        raise RuntimeError(f"missing checkpoint: {args.checkpoint}")
    model = load_model(args.checkpoint)
    streams = corpus.read_corpus(args.corpus)
    if args.record >= len(streams):
        raise RuntimeError(f"record {args.record} not in corpus")
    tok = Tokenizer()
    c, _ = record_context_array(tok, streams[args.record])
    seed_len = min(args.seed_len, len(c))
    result = generate(model, c[None, :seed_len], args.temperature,
                      args.steps, rng)
    path = os.path.join(out, "generated.txt")
    with open(path, "w") as f:
        if result.tokens is not None:
            for t in np.asarray(result.tokens).reshape(-1):
                f.write(f"{int(t)}\n")
        else:  # diffusion fills the context array in place
            for row in result.contexts[0]:
                f.write(" ".join(str(int(v)) for v in row) + "\n")
    print(f"generated -> {path}")
    return 0


def cmd_eval(args, out, config, rng):
    gen = corpus.read_corpus(args.generated)
    ref = corpus.read_corpus(args.reference)
    if len(gen) != len(ref):
        raise RuntimeError("generated and reference corpora differ in length")
    report = metrics.evaluate_pairs(
        (g.tokens, r.tokens) for g, r in zip(gen, ref))
    lines = report.lines()
    with open(os.path.join(out, "eval.txt"), "w") as f:
        f.write("\n".join(lines) + "\n")
    for line in lines:
        print(line)
    return 0


def demo_plant():
    """The demo transfer function 1/(s+1) as a state-space system."""
    return control.StateSpaceSystem(
        np.array([[-1.0]]), np.array([[1.0]]), np.array([[1.0]]),
        np.zeros((1, 1)))


def train_demo_model(rng, n_traces=96, steps=160, epochs=20,
                     setpoint_range=(-0.7, 0.7)):
    """Small bidirectional diffusion model fitted to traces of the demo plant."""
    tok = Tokenizer()
    ccfg = control.ControlDatasetConfig(
        n_traces=n_traces, steps=steps, lqr_fraction=0.7,
        setpoints=setpoint_range, bang_bang_delay=(0, 2),
        noise_standard_deviation=(0.0, 0.05), r_weight=1.0)
    streams, _ = control.build_control_dataset(ccfg, rng, plant=demo_plant())
    items = [record_context_array(tok, s) for s in streams]
    n_val = max(1, len(items) // 10)
    mcfg = SeqModelConfig(mode="diffusion", embed_dim=24, hidden=48,
                          layers=1, bidirectional=True, n_diffusion_steps=8)
    tcfg = TrainConfig(epochs=epochs, batch_size=32, seq_len=48, overlap=16,
                       learning_rate=3e-3, mode="diffusion", seed=int(rng.integers(2**31)))
    model = SeqModel(mcfg, rng=rng)
    rows = train_model(model, items[n_val:], items[:n_val], tcfg)
    return model, rows


def cmd_control_demo(args, out, config, rng):
    plant = demo_plant()
    if args.checkpoint:
        if not os.path.exists(args.checkpoint):
            raise RuntimeError(f"missing checkpoint: {args.checkpoint}")
        model = load_model(args.checkpoint)
    else:
        print("no checkpoint given; training a demo diffusion model")
        model, rows = train_demo_model(rng, epochs=config.get("train_epochs", 20))
        print(f"demo model trained, final train loss {rows[-1][1]:.4f}")

    setpoint = config.get("setpoint", 0.5)
    warmup = config.get("warmup_steps", 126)
    horizon = config.get("horizon", 125)
    reps = args.repetitions
    terminal_window = config.get("terminal_window", 25)

    successes = 0
    summary_path = os.path.join(out, "demo_summary.csv")
    with open(summary_path, "w") as f:
        f.write("rep,terminal_error,chatter_amplitude,success\n")
        for rep in range(reps):
            run_rng = np.random.default_rng(args.seed + 1000 + rep)
            trace = control.diffusion_control_rollout(
                model, plant, setpoint, warmup, horizon,
                n_repeat=config.get("n_repeat", 3), rng=run_rng)
            bb_rng = np.random.default_rng(args.seed + 1000 + rep)
            bb = control.bang_bang_rollout(
                plant, np.zeros(plant.order), setpoint, -1.0, 1.0,
                trace.delay, trace.noise_sigma, trace.dt,
                warmup + horizon, bb_rng)
            err = float(np.mean(np.abs(trace.output[-terminal_window:] - setpoint)))
            amp = control.chatter_amplitude(bb)
            ok = err < amp
            successes += ok
            f.write(f"{rep},{err:.6f},{amp:.6f},{int(ok)}\n")
            if rep == 0:
                with open(os.path.join(out, "demo_trace.csv"), "w") as tf:
                    tf.write("t,setpoint,output,action,controller\n")
                    for i in range(len(trace.times)):
                        ctype = "bang-bang" if i < warmup else "diffusion"
                        tf.write(f"{trace.times[i]:.4f},{trace.setpoint[i]:.6f},"
                                 f"{trace.output[i]:.6f},{trace.action[i]:.6f},{ctype}\n")
    print(f"{successes}/{reps} runs beat the bang-bang chatter amplitude")
    print(f"summary -> {summary_path}")
    return 0


# ---------------------------------------------------------------------------

def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="pxby",
        description="unified multimodal token pipeline and control demo")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--config", help="JSON config file")
    parser.add_argument("--out", default="out", help="output directory")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("tokenize", help="encode a fixture directory into PXTK")
    p.add_argument("input")

    p = sub.add_parser("detokenize", help="decode a PXTK corpus back to files")
    p.add_argument("corpus")

    p = sub.add_parser("build-seq", help="context/target arrays from a corpus")
    p.add_argument("corpus")

    sub.add_parser("gen-control", help="generate the optimal-control corpus")

    p = sub.add_parser("train", help="train a sequence model on a corpus")
    p.add_argument("corpus")

    p = sub.add_parser("generate", help="sample from a trained model")
    p.add_argument("corpus")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--record", type=int, default=0)
    p.add_argument("--seed-len", type=int, default=32)
    p.add_argument("--steps", type=int, default=64)
    p.add_argument("--temperature", type=float, default=1.0)

    p = sub.add_parser("eval", help="hamming/cosine/BLEU between corpora")
    p.add_argument("generated")
    p.add_argument("reference")

    p = sub.add_parser("control-demo", help="setpoint following with diffusion")
    p.add_argument("--checkpoint")
    p.add_argument("--repetitions", type=int, default=100)

    args = parser.parse_args(argv)
    handlers = {
        "tokenize": cmd_tokenize,
        "detokenize": cmd_detokenize,
        "build-seq": cmd_build_seq,
        "gen-control": cmd_gen_control,
        "train": cmd_train,
        "generate": cmd_generate,
        "eval": cmd_eval,
        "control-demo": cmd_control_demo,
    }
    config = _load_config(args.config)
    rng = np.random.default_rng(args.seed)
    try:
        with _run_dir(args, config) as out:
            return handlers[args.command](args, out, config, rng)
    except (RuntimeError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
