"""Patch embedding: per-token embeddings mixed with a 3x3 convolution
through a learned sigmoid gate, projected and layer-normalized.

Everything is float64 numpy with hand-written backward passes so the
gradients can be checked against finite differences exactly.
"""

import numpy as np

K = 3  # kernel/patch size is fixed
LN_EPS = 1e-5


def internal_dim(embed_dim: int) -> int:
    return max(K * K, embed_dim // (K * K))


def sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def init_params(rng, vocab_size: int, embed_dim: int) -> dict:
    """Seeded parameter set; the gate starts at equal mixing (alpha = 0)."""
    e = internal_dim(embed_dim)
    fan_conv = e * K * K

    def u(shape, fan):
        return rng.uniform(-1.0, 1.0, size=shape) / np.sqrt(fan)

    w_emb = u((vocab_size, e), e)
    w_emb[0] = 0.0  # pad row stays zero and receives no gradient
    return {
        "w_emb": w_emb,
        "w_patch": u((e, e, K, K), fan_conv),
        "w_proj": u((e * K * K, embed_dim), fan_conv),
        "alpha": np.zeros((1, 1, K, K)),
        "ln_gain": np.ones(embed_dim),
        "ln_bias": np.zeros(embed_dim),
    }


class PxByEmbed:
    """3x3-window token embedding with gated convolutional mixing."""

    def __init__(self, vocab_size: int, embed_dim: int, params: dict | None = None,
                 rng=None):
        self.vocab_size = vocab_size
        self.embed_dim = embed_dim
        self.e_int = internal_dim(embed_dim)
        if params is None:
            params = init_params(rng if rng is not None else np.random.default_rng(0),
                                 vocab_size, embed_dim)
        self.params = params
        self._cache = None

    def forward(self, x):
        """x: (B, L, 3, 3) token ids -> (B, L, D) embeddings."""
        x = np.asarray(x)
        if x.ndim != 4 or x.shape[2:] != (K, K):
            raise ValueError("expected a B x L x 3 x 3 id array")
        if x.size and (x.min() < 0 or x.max() >= self.vocab_size):
            raise ValueError("token id out of vocabulary")
        p = self.params
        b, l = x.shape[:2]
        n = b * l
        e = self.e_int

        ids = x.reshape(n, K, K)
        emb = p["w_emb"][ids]                      # (n, 3, 3, e)
        emb = np.ascontiguousarray(emb.transpose(0, 3, 1, 2))  # (n, e, 3, 3)

        xp = np.zeros((n, e, K + 2, K + 2))
        xp[:, :, 1:K + 1, 1:K + 1] = emb
        patch = np.zeros_like(emb)
        for ki in range(K):
            for kj in range(K):
                win = xp[:, :, ki:ki + K, kj:kj + K]
                patch += np.einsum("oe,bexy->boxy", p["w_patch"][:, :, ki, kj], win)

        gate = sigmoid(p["alpha"])                 # (1, 1, 3, 3)
        combined = gate * emb + (1.0 - gate) * patch
        flat = combined.reshape(n, e * K * K)
        proj = flat @ p["w_proj"]                  # (n, D)

        mu = proj.mean(axis=1, keepdims=True)
        var = proj.var(axis=1, keepdims=True)
        inv = 1.0 / np.sqrt(var + LN_EPS)
        xhat = (proj - mu) * inv
        out = p["ln_gain"] * xhat + p["ln_bias"]

        self._cache = dict(ids=ids, emb=emb, xp=xp, patch=patch, gate=gate,
                           flat=flat, xhat=xhat, inv=inv, shape=(b, l))
        return out.reshape(b, l, self.embed_dim)

    def backward(self, dout):
        """dout: (B, L, D) upstream gradient -> dict of parameter gradients
        (plus d_emb_rows, the gradient w.r.t. the gathered embeddings)."""
        if self._cache is None:
            raise RuntimeError("backward called before forward")
        c = self._cache
        p = self.params
        b, l = c["shape"]
        n = b * l
        e = self.e_int
        d = self.embed_dim

        dout = np.asarray(dout).reshape(n, d)
        # layer norm
        dgain = (dout * c["xhat"]).sum(axis=0)
        dbias = dout.sum(axis=0)
        dxhat = dout * p["ln_gain"]
        dproj = c["inv"] * (
            dxhat
            - dxhat.mean(axis=1, keepdims=True)
            - c["xhat"] * (dxhat * c["xhat"]).mean(axis=1, keepdims=True)
        )

        dw_proj = c["flat"].T @ dproj
        dflat = dproj @ p["w_proj"].T
        dcombined = dflat.reshape(n, e, K, K)

        gate = c["gate"]
        dgate = (dcombined * (c["emb"] - c["patch"])).sum(axis=(0, 1))  # (3, 3)
        dalpha = (dgate * (gate * (1.0 - gate))[0, 0]).reshape(1, 1, K, K)
        demb = dcombined * gate
        dpatch = dcombined * (1.0 - gate)

        dw_patch = np.zeros_like(p["w_patch"])
        dxp = np.zeros_like(c["xp"])
        for ki in range(K):
            for kj in range(K):
                win = c["xp"][:, :, ki:ki + K, kj:kj + K]
                dw_patch[:, :, ki, kj] = np.einsum("boxy,bexy->oe", dpatch, win)
                dxp[:, :, ki:ki + K, kj:kj + K] += np.einsum(
                    "oe,boxy->bexy", p["w_patch"][:, :, ki, kj], dpatch)
        demb += dxp[:, :, 1:K + 1, 1:K + 1]

        demb_rows = demb.transpose(0, 2, 3, 1)     # (n, 3, 3, e)
        dw_emb = np.zeros_like(p["w_emb"])
        np.add.at(dw_emb, c["ids"].reshape(-1), demb_rows.reshape(-1, e))
        dw_emb[0] = 0.0

        return {
            "w_emb": dw_emb,
            "w_patch": dw_patch,
            "w_proj": dw_proj,
            "alpha": dalpha,
            "ln_gain": dgain,
            "ln_bias": dbias,
        }
