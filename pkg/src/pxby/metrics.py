"""Sequence-quality metrics: normalized Hamming distance, vocabulary
cosine similarity, and BLEU with add-one smoothing on higher orders."""

from collections import Counter
from dataclasses import dataclass

import numpy as np

from .tokenizer import VOCAB_SIZE


def hamming(a, b) -> float:
    """Fraction of differing positions, after truncating to the shorter."""
    a = np.asarray(a)
    b = np.asarray(b)
    n = min(len(a), len(b))
    if n == 0:
        raise ValueError("empty sequence")
    return float(np.mean(a[:n] != b[:n]))


def cosine(a, b, vocab_size=VOCAB_SIZE) -> float:
    """Cosine between token-count vectors over the vocabulary."""
    a = np.asarray(a)
    b = np.asarray(b)
    if len(a) == 0 or len(b) == 0:
        raise ValueError("empty sequence")
    ca = np.bincount(a, minlength=vocab_size).astype(np.float64)
    cb = np.bincount(b, minlength=vocab_size).astype(np.float64)
    na = np.linalg.norm(ca)
    nb = np.linalg.norm(cb)
    if na == 0 or nb == 0:
        return 0.0
    return float(ca @ cb / (na * nb))


def _ngrams(seq, n):
    return Counter(tuple(seq[i:i + n]) for i in range(len(seq) - n + 1))


def bleu(candidate, reference, max_n=4) -> float:
    """Geometric mean of clipped n-gram precisions times the brevity
    penalty. Zero counts at order n >= 2 are add-one smoothed; a zero
    unigram precision makes the whole score 0."""
    cand = [int(t) for t in candidate]
    ref = [int(t) for t in reference]
    if not cand or not ref:
        raise ValueError("empty sequence")
    log_sum = 0.0
    for n in range(1, max_n + 1):
        cn = _ngrams(cand, n)
        rn = _ngrams(ref, n)
        clipped = sum(min(c, rn[g]) for g, c in cn.items())
        total = sum(cn.values())
        if n == 1:
            if clipped == 0:
                return 0.0
        elif clipped == 0:
            clipped += 1
            total += 1
        log_sum += np.log(clipped / total) / max_n
    bp = 1.0 if len(cand) >= len(ref) else np.exp(1.0 - len(ref) / len(cand))
    return float(bp * np.exp(log_sum))


@dataclass
class MetricReport:
    hamming_values: np.ndarray
    cosine_values: np.ndarray
    bleu_values: np.ndarray

    def lines(self):
        out = []
        for name, vals in (("hamming", self.hamming_values),
                           ("cosine", self.cosine_values),
                           ("bleu", self.bleu_values)):
            out.append(f"{name} {np.mean(vals):.3f} ± {np.std(vals):.3f}")
        return out


def evaluate_pairs(pairs) -> MetricReport:
    """Score (generated, reference) token-sequence pairs."""
    pairs = list(pairs)
    if not pairs:
        raise ValueError("no pairs to evaluate")
    return MetricReport(
        hamming_values=np.array([hamming(g, r) for g, r in pairs]),
        cosine_values=np.array([cosine(g, r) for g, r in pairs]),
        bleu_values=np.array([bleu(g, r) for g, r in pairs]),
    )
