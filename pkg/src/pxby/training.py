"""Training loop: per-mode losses, Adam updates with gradient
accumulation, frequency-based class weights, metrics CSV, and a
binary checkpoint container.

Loss bookkeeping accumulates unnormalized sums (per-target loss and
weight) and divides once per optimizer step, which makes k
accumulation steps on batch b numerically equivalent to one step on
batch k*b.
"""

import json
import math
import struct
from dataclasses import dataclass

import numpy as np

from .model import SeqModel, SeqModelConfig, softmax
from .sequence import WindowedDataset


@dataclass
class TrainConfig:
    epochs: int = 10
    batch_size: int = 32
    seq_len: int = 64
    learning_rate: float = 1e-3
    grad_accum_steps: int = 1
    mode: str = "autoregressive"
    audio_reduction: int = 1
    image_reduction: int = 1
    overlap: int = 0
    seed: int = 0

    def __post_init__(self):
        for name in ("epochs", "batch_size", "seq_len", "grad_accum_steps"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")

    @property
    def stride(self):
        return self.seq_len - self.overlap

    def to_dict(self):
        return {k: getattr(self, k) for k in (
            "epochs", "batch_size", "seq_len", "learning_rate",
            "grad_accum_steps", "mode", "audio_reduction", "image_reduction",
            "overlap", "seed")}


def class_weights(frequencies):
    """Per-token loss weights w_i = sqrt(sum_j f_j) / sqrt(f_i).

    Unseen tokens (f_i == 0) get weight 0 and drop out of the loss.
    """
    f = np.asarray(frequencies, dtype=np.float64)
    if np.any(f < 0):
        raise ValueError("frequencies must be nonnegative")
    total = f.sum()
    if total == 0:
        raise ValueError("all token frequencies are zero")
    w = np.zeros_like(f)
    nz = f > 0
    w[nz] = np.sqrt(total) / np.sqrt(f[nz])
    return w


def context_frequencies(items, vocab_size):
    """Token counts over all context entries (the diffusion targets)."""
    counts = np.zeros(vocab_size, dtype=np.int64)
    for contexts, _ in items:
        counts += np.bincount(np.asarray(contexts).reshape(-1), minlength=vocab_size)
    return counts


class Adam:
    def __init__(self, params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, params, grads):
        self.t += 1
        b1c = 1.0 - self.beta1 ** self.t
        b2c = 1.0 - self.beta2 ** self.t
        for k, g in grads.items():
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * g * g
            params[k] -= self.lr * (self.m[k] / b1c) / (np.sqrt(self.v[k] / b2c) + self.eps)


# ---------------------------------------------------------------------------
# Per-mode losses (sums, for exact accumulation)
# ---------------------------------------------------------------------------

def _ce_terms(logits, targets, select, weights=None):
    """Cross entropy over selected slots.

    logits (..., V), targets (...), select (...) bool. Returns
    (loss_sum, weight_sum, correct, count, dlogits) with dlogits the
    gradient of loss_sum.
    """
    probs = softmax(logits)
    flatp = probs.reshape(-1, probs.shape[-1])
    flatt = targets.reshape(-1)
    flats = select.reshape(-1)
    idx = np.flatnonzero(flats)
    w = np.ones(len(idx)) if weights is None else weights[flatt[idx]]
    picked = flatp[idx, flatt[idx]]
    loss_sum = float(-(w * np.log(np.maximum(picked, 1e-300))).sum())
    correct = int((flatp[idx].argmax(axis=1) == flatt[idx])[w > 0].sum())
    count = int((w > 0).sum())
    dflat = np.zeros_like(flatp)
    dflat[idx] = flatp[idx] * w[:, None]
    dflat[idx, flatt[idx]] -= w
    return loss_sum, float(w.sum()), correct, count, dflat.reshape(logits.shape)


def batch_loss(model: SeqModel, contexts, targets, weights=None, rng=None):
    """Forward one batch and compute the mode's loss.

    predictive: logits row i vs target token i (pads excluded).
    autoregressive: logits row i vs context row i+1 (pads excluded).
    diffusion: logits row i vs clean context row i, only at noised
    slots, weighted by the class weights.
    Returns (loss_sum, weight_sum, correct, count, dlogits).
    """
    mode = model.cfg.mode
    x = np.asarray(contexts)
    logits = model.forward(x, rng=rng)
    if mode == "predictive":
        y = np.asarray(targets).reshape(x.shape[0], x.shape[1])
        return logits, _ce_terms(logits, y, y != 0)
    if mode == "autoregressive":
        y = np.zeros_like(x)
        y[:, :-1] = x[:, 1:]
        select = y != 0
        select[:, -1] = False
        return logits, _ce_terms(logits, y, select)
    # diffusion: reconstruct the clean rows at noised slots
    m = model.last_noise_mask
    return logits, _ce_terms(logits, x, m == 0, weights=weights)


def process_epoch(model: SeqModel, dataset: WindowedDataset, batch_size,
                  optimizer: Adam | None = None, grad_accum_steps=1,
                  weights=None, rng=None):
    """One pass over the dataset; returns (mean_loss, accuracy).

    With an optimizer, gradients are accumulated over
    ``grad_accum_steps`` batches (normalized by the accumulated target
    weight) before each update. Window order is shuffled when training.
    """
    n = len(dataset)
    if n == 0:
        raise ValueError("empty dataset")
    if rng is None:
        rng = np.random.default_rng(0)
    order = np.arange(n)
    if optimizer is not None:
        rng.shuffle(order)

    total_loss = total_weight = 0.0
    total_correct = total_count = 0
    acc_grads = None
    acc_weight = 0.0
    pending = 0

    def apply_step():
        nonlocal acc_grads, acc_weight, pending
        if acc_grads is None or acc_weight == 0.0:
            acc_grads, acc_weight, pending = None, 0.0, 0
            return
        optimizer.step(model.params, {k: g / acc_weight for k, g in acc_grads.items()})
        model.params["embed"][0] = 0.0
        acc_grads, acc_weight, pending = None, 0.0, 0

    for lo in range(0, n, batch_size):
        batch = [dataset[int(k)] for k in order[lo:lo + batch_size]]
        cx = np.stack([b[0] for b in batch])
        ty = np.stack([b[1] for b in batch])
        _, (loss_sum, weight_sum, correct, count, dlogits) = batch_loss(
            model, cx, ty, weights=weights, rng=rng)
        total_loss += loss_sum
        total_weight += weight_sum
        total_correct += correct
        total_count += count
        if optimizer is not None:
            grads = model.backward(dlogits)
            if acc_grads is None:
                acc_grads = grads
            else:
                for k in acc_grads:
                    acc_grads[k] += grads[k]
            acc_weight += weight_sum
            pending += 1
            if pending >= grad_accum_steps:
                apply_step()
    if optimizer is not None and pending:
        apply_step()

    mean_loss = total_loss / total_weight if total_weight else 0.0
    accuracy = total_correct / total_count if total_count else 0.0
    return mean_loss, accuracy


def train_model(model: SeqModel, train_items, val_items, tcfg: TrainConfig,
                out_dir=None, csv_name="metrics.csv", ckpt_name="best.pxck"):
    """Alternate train/val epochs; log CSV rows; keep the lowest-val-loss
    checkpoint. Returns the per-epoch metrics list."""
    import os

    rng = np.random.default_rng(tcfg.seed)
    train_ds = WindowedDataset(train_items, tcfg.seq_len, tcfg.stride)
    val_ds = WindowedDataset(val_items, tcfg.seq_len, tcfg.stride)
    weights = None
    if model.cfg.mode == "diffusion":
        weights = class_weights(context_frequencies(train_items, model.cfg.vocab_size))
    optimizer = Adam(model.params, tcfg.learning_rate)

    rows = []
    best_val = math.inf
    csv_path = ckpt_path = None
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        csv_path = os.path.join(out_dir, csv_name)
        ckpt_path = os.path.join(out_dir, ckpt_name)
        with open(csv_path, "w") as f:
            f.write("epoch,train_loss,train_accuracy,val_loss,val_accuracy\n")

    for epoch in range(1, tcfg.epochs + 1):
        tl, ta = process_epoch(model, train_ds, tcfg.batch_size, optimizer,
                               tcfg.grad_accum_steps, weights=weights, rng=rng)
        vl, va = process_epoch(model, val_ds, tcfg.batch_size, optimizer=None,
                               weights=weights, rng=rng)
        rows.append((epoch, tl, ta, vl, va))
        if csv_path is not None:
            with open(csv_path, "a") as f:
                f.write(f"{epoch},{tl:.6f},{ta:.6f},{vl:.6f},{va:.6f}\n")
        if vl < best_val:
            best_val = vl
            if ckpt_path is not None:
                save_checkpoint(ckpt_path, model.params,
                                {"model": model.cfg.to_dict(),
                                 "train": tcfg.to_dict(), "epoch": epoch},
                                tcfg.seed)
    return rows


# ---------------------------------------------------------------------------
# Checkpoint container: named float64 little-endian arrays + config echo
# ---------------------------------------------------------------------------

CKPT_MAGIC = b"PXCK"
CKPT_VERSION = 1


def save_checkpoint(path, params, config_echo: dict, seed: int):
    names = sorted(params)
    header = json.dumps({
        "config": config_echo,
        "seed": seed,
        "arrays": [{"name": k, "shape": list(params[k].shape)} for k in names],
    }, sort_keys=True).encode()
    with open(path, "wb") as f:
        f.write(CKPT_MAGIC)
        f.write(bytes([CKPT_VERSION]))
        f.write(struct.pack("<I", len(header)))
        f.write(header)
        for k in names:
            f.write(np.ascontiguousarray(params[k], dtype="<f8").tobytes())


def load_checkpoint(path):
    with open(path, "rb") as f:
        data = f.read()
    if data[:4] != CKPT_MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    if data[4] != CKPT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {data[4]}")
    (hlen,) = struct.unpack_from("<I", data, 5)
    header = json.loads(data[9:9 + hlen])
    pos = 9 + hlen
    params = {}
    for entry in header["arrays"]:
        shape = tuple(entry["shape"])
        n = int(np.prod(shape)) if shape else 1
        params[entry["name"]] = np.frombuffer(
            data, dtype="<f8", count=n, offset=pos).reshape(shape).copy()
        pos += 8 * n
    return params, header["config"], header["seed"]


def load_model(path) -> SeqModel:
    params, config, _ = load_checkpoint(path)
    cfg = SeqModelConfig(**config["model"])
    return SeqModel(cfg, params=params)
