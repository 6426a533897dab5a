"""Synthetic fixture corpora: structured text/sprite/audio records for
desk-scale training, and on-disk fixture directories for the CLI."""

import os
import struct
import wave

import numpy as np

from .control import gameboy_filter
from .palette import PALETTE_SIZE
from .tokenizer import Record

_NAMES = ["pixa", "byteling", "gridmote", "spritch", "tokko", "flicker",
          "rasterpup", "chipmur", "blipfin", "scanling"]
_ADJS = ["small", "bright", "dusty", "swift", "quiet", "bold", "pale", "round"]
_NOUNS = ["creature", "sprite", "critter", "machine", "drone", "beast"]
_VERBS = ["hums", "blinks", "hops", "drifts", "clicks", "spins"]


def make_text(rng, sentences=3):
    parts = []
    for _ in range(sentences):
        parts.append("{} is a {} {} that {} near the {} {}.".format(
            rng.choice(_NAMES), rng.choice(_ADJS), rng.choice(_NOUNS),
            rng.choice(_VERBS), rng.choice(_ADJS), rng.choice(_NOUNS)))
    return "\n".join(parts) + "\n"


def make_frames(rng, t=1, h=6, w=6):
    """Sprite-like index frames: vertical stripes under a small box.

    Columns are constant, so every spatial neighbor is recoverable
    from nearby context rather than long-range memory."""
    c1, c2, fg = (int(v) for v in rng.choice(PALETTE_SIZE, size=3, replace=False))
    period = int(rng.integers(2, 4))
    stripe = np.where((np.arange(w) // period) % 2 == 0, c1, c2)
    frames = np.broadcast_to(stripe, (t, h, w)).copy()
    bh = int(rng.integers(2, max(3, h // 2)))
    bw = int(rng.integers(2, max(3, w // 2)))
    y0 = int(rng.integers(0, h - bh))
    x0 = int(rng.integers(0, w - bw))
    for ti in range(t):
        xo = min(x0 + ti, w - bw)
        frames[ti, y0:y0 + bh, xo:xo + bw] = fg
    return frames


def make_audio(rng, n=100, sample_rate=200.0):
    """Two channels: a noisy wandering signal and its speaker-filtered copy.

    The raw channel mixes slowly but carries real per-sample innovation,
    so the next sample is genuinely uncertain while past samples remain
    exactly recoverable from context.
    """
    drive = rng.normal(0.0, 0.45, size=n)
    raw = np.empty(n)
    s = float(rng.uniform(-0.5, 0.5))
    for i in range(n):
        s = 0.9 * s + drive[i]
        raw[i] = s
    raw = np.clip(raw, -1.5, 1.5)
    filtered = gameboy_filter(raw, k_gain=1.0, omega_n=2 * np.pi * 6.0,
                              zeta=0.7, sample_rate=sample_rate)
    return np.stack([raw, filtered])


def make_records(rng, n_records, text_sentences=3, frame_shape=(1, 6, 6),
                 audio_samples=100):
    records = []
    for _ in range(n_records):
        records.append(Record(
            text=make_text(rng, text_sentences),
            frames=make_frames(rng, *frame_shape),
            audio=make_audio(rng, audio_samples),
        ))
    return records


# ---------------------------------------------------------------------------
# On-disk fixture directories for the CLI (one record per filename stem)
# ---------------------------------------------------------------------------

def write_pgm(path, frame):
    """Single-frame palette-index grid as plain (P2) PGM."""
    h, w = frame.shape
    with open(path, "w", newline="\n") as f:
        f.write(f"P2\n{w} {h}\n{PALETTE_SIZE - 1}\n")
        for row in frame:
            f.write(" ".join(str(int(v)) for v in row) + "\n")


def read_pgm(path):
    with open(path) as f:
        tokens = f.read().split()
    if not tokens or tokens[0] != "P2":
        raise ValueError(f"{path}: expected a plain P2 grid")
    w, h, _maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    vals = np.array([int(v) for v in tokens[4:4 + w * h]], dtype=np.int64)
    if len(vals) != w * h:
        raise ValueError(f"{path}: truncated pixel data")
    return vals.reshape(h, w)


def read_ppm(path):
    """Plain (P3) RGB image as an (H, W, 3) uint8 array."""
    with open(path) as f:
        tokens = f.read().split()
    if not tokens or tokens[0] != "P3":
        raise ValueError(f"{path}: expected a plain P3 image")
    w, h, _maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    vals = np.array([int(v) for v in tokens[4:4 + 3 * w * h]], dtype=np.int64)
    if len(vals) != 3 * w * h:
        raise ValueError(f"{path}: truncated pixel data")
    return vals.reshape(h, w, 3).astype(np.uint8)


def write_wav(path, audio, sample_rate=8000):
    """(C, N) floats in [-1, 1] as PCM16."""
    audio = np.asarray(audio, dtype=np.float64)
    if audio.ndim == 1:
        audio = audio[None, :]
    pcm = np.clip(np.round(audio * 32767.0), -32768, 32767).astype("<i2")
    with wave.open(os.fspath(path), "wb") as wf:
        wf.setnchannels(pcm.shape[0])
        wf.setsampwidth(2)
        wf.setframerate(sample_rate)
        wf.writeframes(pcm.T.tobytes())


def read_wav(path):
    with wave.open(os.fspath(path), "rb") as wf:
        n = wf.getnframes()
        channels = wf.getnchannels()
        if wf.getsampwidth() != 2:
            raise ValueError(f"{path}: only PCM16 wav is supported")
        raw = wf.readframes(n)
    flat = np.array(struct.unpack(f"<{n * channels}h", raw), dtype=np.float64)
    return flat.reshape(n, channels).T / 32767.0


def write_fixture_dir(path, records, sample_rate=8000):
    """Lay records out as <stem>.txt / <stem>.pgm / <stem>.wav files."""
    os.makedirs(path, exist_ok=True)
    for i, rec in enumerate(records):
        stem = os.path.join(path, f"rec{i:04d}")
        if rec.text is not None:
            with open(stem + ".txt", "w", newline="\n") as f:
                f.write(rec.text)
        if rec.frames is not None:
            write_pgm(stem + ".pgm", rec.frames[0])
        if rec.audio is not None:
            write_wav(stem + ".wav", rec.audio, sample_rate)
