"""LSTM sequence model over 6-entry token contexts.

Three operating modes share one backbone:
  predictive     -> (B, L, V) logits, one next-token distribution per step
  autoregressive -> (B, L, 6, V) logits, one distribution per context slot
  diffusion      -> autoregressive head plus embedding-space noising with
                    schedule alpha = 1 - t/n_steps and a keep-mask

All math is float64 numpy with explicit backward passes.
"""

import math
from dataclasses import dataclass

import numpy as np

from .tokenizer import VOCAB_SIZE
from .embed import sigmoid

MODES = ("predictive", "autoregressive", "diffusion")


@dataclass
class SeqModelConfig:
    mode: str
    vocab_size: int = VOCAB_SIZE
    embed_dim: int = 48            # total; each of the 6 slots gets embed_dim/6
    hidden: int = 64
    layers: int = 1
    bidirectional: bool = False
    n_diffusion_steps: int = 8
    context_width: int = 6

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.embed_dim % self.context_width != 0:
            raise ValueError("embed_dim must be divisible by the context width")
        if self.mode == "diffusion" and self.n_diffusion_steps < 1:
            raise ValueError("diffusion needs at least one step")

    @property
    def slot_dim(self):
        return self.embed_dim // self.context_width

    @property
    def dirs(self):
        return 2 if self.bidirectional else 1

    @property
    def out_dim(self):
        if self.mode == "predictive":
            return self.vocab_size
        return self.context_width * self.vocab_size

    def to_dict(self):
        return {k: getattr(self, k) for k in (
            "mode", "vocab_size", "embed_dim", "hidden", "layers",
            "bidirectional", "n_diffusion_steps", "context_width")}


def init_params(rng, cfg: SeqModelConfig) -> dict:
    """Uniform +-1/sqrt(hidden) gate weights with forget bias +1."""
    h = cfg.hidden
    s = 1.0 / math.sqrt(h)
    params = {}
    emb = rng.uniform(-1.0, 1.0, size=(cfg.vocab_size, cfg.slot_dim)) / math.sqrt(cfg.slot_dim)
    emb[0] = 0.0
    params["embed"] = emb
    in_dim = cfg.embed_dim
    for layer in range(cfg.layers):
        for d in range(cfg.dirs):
            w = rng.uniform(-s, s, size=(in_dim + h, 4 * h))
            b = np.zeros(4 * h)
            b[h:2 * h] = 1.0  # forget gate bias
            params[f"lstm{layer}d{d}_w"] = w
            params[f"lstm{layer}d{d}_b"] = b
        in_dim = h * cfg.dirs
    params["head_w"] = rng.uniform(-1.0, 1.0, size=(h * cfg.dirs, cfg.out_dim)) / math.sqrt(h * cfg.dirs)
    params["head_b"] = np.zeros(cfg.out_dim)
    return params


def embed_contexts(x, params, cfg: SeqModelConfig):
    """(B, L, 6) ids -> (B, L, 6, slot_dim) per-slot embeddings."""
    x = np.asarray(x)
    if x.ndim != 3 or x.shape[2] != cfg.context_width:
        raise ValueError("expected a B x L x 6 id array")
    if x.size and (x.min() < 0 or x.max() >= cfg.vocab_size):
        raise ValueError("token id out of vocabulary")
    return params["embed"][x]


# ---------------------------------------------------------------------------
# LSTM core
# ---------------------------------------------------------------------------

def _lstm_direction_forward(x, w, b, reverse=False):
    """One direction over (B, L, D_in); returns outputs and the step cache."""
    bsz, length, _ = x.shape
    h = w.shape[1] // 4
    hs = np.zeros((bsz, length, h))
    steps = []
    h_prev = np.zeros((bsz, h))
    c_prev = np.zeros((bsz, h))
    order = range(length - 1, -1, -1) if reverse else range(length)
    for t in order:
        cat = np.concatenate([x[:, t], h_prev], axis=1)
        z = cat @ w + b
        i = sigmoid(z[:, :h])
        f = sigmoid(z[:, h:2 * h])
        g = np.tanh(z[:, 2 * h:3 * h])
        o = sigmoid(z[:, 3 * h:])
        c = f * c_prev + i * g
        tc = np.tanh(c)
        hs[:, t] = o * tc
        steps.append((t, cat, i, f, g, o, c_prev, tc))
        h_prev, c_prev = hs[:, t], c
    return hs, steps


def _lstm_direction_backward(dhs, w, steps):
    """Backprop one direction; returns (dx, dw, db)."""
    h = w.shape[1] // 4
    bsz = dhs.shape[0]
    in_dim = w.shape[0] - h
    dx = np.zeros((bsz, dhs.shape[1], in_dim))
    dw = np.zeros_like(w)
    db = np.zeros(4 * h)
    dh_next = np.zeros((bsz, h))
    dc_next = np.zeros((bsz, h))
    for t, cat, i, f, g, o, c_prev, tc in reversed(steps):
        dh = dhs[:, t] + dh_next
        do = dh * tc
        dc = dc_next + dh * o * (1.0 - tc * tc)
        di = dc * g
        df = dc * c_prev
        dg = dc * i
        dz = np.concatenate([
            di * i * (1.0 - i),
            df * f * (1.0 - f),
            dg * (1.0 - g * g),
            do * o * (1.0 - o),
        ], axis=1)
        dw += cat.T @ dz
        db += dz.sum(axis=0)
        dcat = dz @ w.T
        dx[:, t] = dcat[:, :in_dim]
        dh_next = dcat[:, in_dim:]
        dc_next = dc * f
    return dx, dw, db


def lstm_forward(x, params, cfg: SeqModelConfig, cache=None):
    """Stacked (optionally bidirectional) LSTM: (B, L, D) -> (B, L, hidden*dirs)."""
    out = np.asarray(x, dtype=np.float64)
    for layer in range(cfg.layers):
        feats = []
        for d in range(cfg.dirs):
            hs, steps = _lstm_direction_forward(
                out, params[f"lstm{layer}d{d}_w"], params[f"lstm{layer}d{d}_b"],
                reverse=(d == 1))
            feats.append(hs)
            if cache is not None:
                cache[(layer, d)] = steps
        out = np.concatenate(feats, axis=2) if cfg.dirs > 1 else feats[0]
    return out


# ---------------------------------------------------------------------------
# Full model
# ---------------------------------------------------------------------------

class SeqModel:
    def __init__(self, cfg: SeqModelConfig, params: dict | None = None, rng=None):
        self.cfg = cfg
        if params is None:
            params = init_params(rng if rng is not None else np.random.default_rng(0), cfg)
        self.params = params
        self._cache = None

    def forward(self, x, t=None, m=None, rng=None):
        """Contexts (B, L, 6) -> logits; diffusion mode noises the embeddings.

        t: diffusion step in [0, n_steps] (sampled uniform on [1, n_steps]
           when omitted). m: keep-mask, (B, L) or (B, L, 6); entries equal
           to 1 keep their clean embedding, everything else is blended
           toward unit Gaussian noise by 1 - alpha with alpha = 1 - t/n_steps.
        """
        cfg = self.cfg
        x = np.asarray(x)
        e4 = embed_contexts(x, self.params, cfg)   # (B, L, 6, slot)
        bsz, length = x.shape[:2]

        noise_info = None
        if cfg.mode == "diffusion":
            if rng is None:
                rng = np.random.default_rng(0)
            nd = cfg.n_diffusion_steps
            if t is None:
                t = int(rng.integers(1, nd + 1))
            if not 0 <= t <= nd:
                raise ValueError(f"diffusion step {t} outside [0, {nd}]")
            if m is None:
                m = np.ones((bsz, length), dtype=np.int64)
                n_mask = math.ceil(3 * length / 4)
                for bi in range(bsz):
                    pos = rng.choice(length, size=n_mask, replace=False)
                    m[bi, pos] = 0
            m = np.asarray(m)
            if m.shape == (bsz, length):
                m = np.repeat(m[:, :, None], cfg.context_width, axis=2)
            if m.shape != (bsz, length, cfg.context_width):
                raise ValueError("mask shape mismatch")
            alpha = 1.0 - t / nd
            keep = (m == 1)[..., None]
            noise = rng.standard_normal(e4.shape)
            e4 = np.where(keep, e4, (1.0 - alpha) * noise + alpha * e4)
            noise_info = (keep, alpha, m, t)

        e = e4.reshape(bsz, length, cfg.embed_dim)
        lstm_cache = {}
        h = lstm_forward(e, self.params, cfg, cache=lstm_cache)
        logits = h @ self.params["head_w"] + self.params["head_b"]
        if cfg.mode != "predictive":
            logits = logits.reshape(bsz, length, cfg.context_width, cfg.vocab_size)

        self._cache = dict(x=x, h=h, lstm=lstm_cache, noise=noise_info,
                           e4=e4, shape=(bsz, length))
        return logits

    @property
    def last_noise_mask(self):
        """Keep-mask (B, L, 6) of the most recent diffusion forward, else None."""
        if self._cache is None or self._cache["noise"] is None:
            return None
        return self._cache["noise"][2]

    def backward(self, dlogits):
        """Upstream gradient on logits -> gradients for every parameter."""
        if self._cache is None:
            raise RuntimeError("backward called before forward")
        cfg = self.cfg
        c = self._cache
        bsz, length = c["shape"]
        dlogits = np.asarray(dlogits).reshape(bsz, length, cfg.out_dim)

        h2 = c["h"].reshape(bsz * length, -1)
        d2 = dlogits.reshape(bsz * length, cfg.out_dim)
        grads = {
            "head_w": h2.T @ d2,
            "head_b": d2.sum(axis=0),
        }
        dh = (d2 @ self.params["head_w"].T).reshape(bsz, length, -1)

        for layer in range(cfg.layers - 1, -1, -1):
            dx_total = None
            for d in range(cfg.dirs):
                part = dh[:, :, d * cfg.hidden:(d + 1) * cfg.hidden]
                dx, dw, db = _lstm_direction_backward(
                    part, self.params[f"lstm{layer}d{d}_w"], c["lstm"][(layer, d)])
                grads[f"lstm{layer}d{d}_w"] = dw
                grads[f"lstm{layer}d{d}_b"] = db
                dx_total = dx if dx_total is None else dx_total + dx
            dh = dx_total

        de4 = dh.reshape(bsz, length, cfg.context_width, cfg.slot_dim)
        if c["noise"] is not None:
            keep, alpha, _, _ = c["noise"]
            de4 = np.where(keep, de4, alpha * de4)
        dembed = np.zeros_like(self.params["embed"])
        np.add.at(dembed, c["x"].reshape(-1), de4.reshape(-1, cfg.slot_dim))
        dembed[0] = 0.0  # pad row never trains
        grads["embed"] = dembed
        return grads


# ---------------------------------------------------------------------------
# Sampling / generation
# ---------------------------------------------------------------------------

def softmax(z, axis=-1):
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def sample_categorical(p, rng):
    """Sample ids from probability rows p (..., V) with an inverse CDF."""
    flat = p.reshape(-1, p.shape[-1])
    cdf = np.cumsum(flat, axis=1)
    u = rng.random((flat.shape[0], 1)) * cdf[:, -1:]
    idx = (cdf < u).sum(axis=1)
    return idx.reshape(p.shape[:-1])


class RasterTracker:
    """Incremental context-row construction for one raster-scanned grid.

    Mirrors the training-time neighbor rule: given the flat token
    history and the grid geometry (rows x columns per frame), produces
    the 6-entry context of the next position to generate.
    """

    def __init__(self, grid_h, grid_w, tokens=()):
        self.h = grid_h
        self.w = grid_w
        self.tokens = list(tokens)

    def _get(self, t, h, w):
        if t < 0 or h < 0 or h >= self.h or w < 0 or w >= self.w:
            return 0
        q = (t * self.h + h) * self.w + w
        return self.tokens[q] if 0 <= q < len(self.tokens) else 0

    def next_context(self):
        p = len(self.tokens)
        t, rem = divmod(p, self.h * self.w)
        h, w = divmod(rem, self.w)
        return np.array([
            self._get(t - 1, h - 1, w),
            self._get(t - 1, h, w),
            self._get(t - 1, h + 1, w),
            self._get(t, h - 1, w - 1),
            self._get(t, h, w - 1),
            self.tokens[p - 1] if p >= 1 else 0,
        ], dtype=np.int64)

    def push(self, token):
        self.tokens.append(int(token))


@dataclass
class GenOutput:
    contexts: np.ndarray            # final (B, L', 6) context array
    tokens: np.ndarray | None = None  # sampled tokens, modes that emit them


def generate(model: SeqModel, seed, temperature, max_len, rng,
             grid_shape=None, seed_tokens=None, mask=None, window=None):
    """Sample continuations per the model's mode.

    predictive: sample the last row's target, extend the context array
    with the next raster position's row (grid_shape + seed_tokens give
    the geometry; without them rows carry only the previous token), and
    slide once the array exceeds ``window`` rows.
    diffusion: iteratively pick a random still-masked row, sample its
    6 entries, write them back, and mark the row clean.
    autoregressive: sample a full 6-entry row from the last position
    and concatenate it.
    """
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    cfg = model.cfg
    c = np.array(seed, dtype=np.int64, copy=True)
    if c.ndim != 3 or c.shape[2] != cfg.context_width:
        raise ValueError("seed must be B x L x 6")
    bsz = c.shape[0]
    if window is None:
        window = c.shape[1]

    if cfg.mode == "predictive":
        trackers = None
        if grid_shape is not None:
            if seed_tokens is None:
                raise ValueError("grid_shape requires seed_tokens")
            trackers = [RasterTracker(*grid_shape, tokens=list(np.asarray(st)))
                        for st in np.broadcast_to(seed_tokens, (bsz, len(seed_tokens)))]
        sampled = np.zeros((bsz, max_len), dtype=np.int64)
        for j in range(max_len):
            logits = model.forward(c)
            p = softmax(logits[:, -1] / temperature)
            tok = sample_categorical(p, rng)       # (B,)
            sampled[:, j] = tok
            rows = np.zeros((bsz, 1, cfg.context_width), dtype=np.int64)
            for bi in range(bsz):
                if trackers is not None:
                    trackers[bi].push(tok[bi])
                    rows[bi, 0] = trackers[bi].next_context()
                else:
                    rows[bi, 0, 5] = tok[bi]
            c = np.concatenate([c, rows], axis=1)
            if c.shape[1] > window:
                c = c[:, c.shape[1] - window:]
        return GenOutput(contexts=c, tokens=sampled)

    if cfg.mode == "diffusion":
        if mask is None:
            mask = np.zeros((bsz, c.shape[1]), dtype=np.int64)
        mask = np.asarray(mask).copy()
        if mask.shape == (bsz, c.shape[1]):
            mask = np.repeat(mask[:, :, None], cfg.context_width, axis=2)
        for _ in range(max_len):
            open_rows = [np.flatnonzero((mask[bi] == 0).any(axis=1)) for bi in range(bsz)]
            if all(len(r) == 0 for r in open_rows):
                break
            logits = model.forward(c, t=cfg.n_diffusion_steps, m=mask, rng=rng)
            for bi in range(bsz):
                if len(open_rows[bi]) == 0:
                    continue
                ps = int(rng.choice(open_rows[bi]))
                p = softmax(logits[bi, ps] / temperature)   # (6, V)
                row = sample_categorical(p, rng)
                noised = mask[bi, ps] == 0
                c[bi, ps, noised] = row[noised]
                mask[bi, ps] = 1
        return GenOutput(contexts=c, tokens=None)

    # autoregressive: sample one full context row per step
    sampled = np.zeros((bsz, max_len, cfg.context_width), dtype=np.int64)
    for j in range(max_len):
        logits = model.forward(c)
        p = softmax(logits[:, -1] / temperature)    # (B, 6, V)
        row = sample_categorical(p, rng)            # (B, 6)
        sampled[:, j] = row
        c = np.concatenate([c, row[:, None, :]], axis=1)
    return GenOutput(contexts=c, tokens=sampled)
