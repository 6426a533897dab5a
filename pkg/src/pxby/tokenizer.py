"""Multimodal tokenizer over one 151-token vocabulary.

Layout: id 0 pads, id 1 is the line break, id 2 switches modality;
then 69 case-folded printable ASCII symbols, 55 palette colors, and
24 action bins over [-1, 1]. Encoders emit a TokenStream whose
segments remember enough geometry to invert the mapping (up to the
lossy quantization steps).
"""

from dataclasses import dataclass, replace

import numpy as np

from .palette import PALETTE_SIZE, Palette, load_palette

PAD_ID = 0
LINE_BREAK_ID = 1
MODALITY_SWITCH_ID = 2

TEXT_BASE = 3
N_TEXT = 69
PALETTE_BASE = TEXT_BASE + N_TEXT          # 72
N_ACTIONS = 24
ACTION_BASE = PALETTE_BASE + PALETTE_SIZE  # 127
VOCAB_SIZE = ACTION_BASE + N_ACTIONS       # 151

# Printable ASCII 0x20..0x7E with uppercase folded onto lowercase:
# 95 - 26 = 69 symbols, kept in byte order.
_TEXT_CHARS = bytes(b for b in range(0x20, 0x7F) if not 0x41 <= b <= 0x5A)
assert len(_TEXT_CHARS) == N_TEXT
_BYTE_TO_TEXT_ID = {}
for _i, _b in enumerate(_TEXT_CHARS):
    _BYTE_TO_TEXT_ID[_b] = TEXT_BASE + _i
for _b in range(0x41, 0x5B):  # 'A'..'Z' -> 'a'..'z'
    _BYTE_TO_TEXT_ID[_b] = _BYTE_TO_TEXT_ID[_b + 0x20]

# Centers of the 24 uniform action bins on [-1, 1].
ACTION_BIN_CENTERS = -1.0 + (2.0 * np.arange(N_ACTIONS) + 1.0) / N_ACTIONS


@dataclass(frozen=True)
class VocabLayout:
    """How the 151 ids split across special, text, pixel and action tokens."""
    pad_id: int = PAD_ID
    line_break_id: int = LINE_BREAK_ID
    modality_switch_id: int = MODALITY_SWITCH_ID
    text_ids: range = range(TEXT_BASE, TEXT_BASE + N_TEXT)
    palette_ids: range = range(PALETTE_BASE, PALETTE_BASE + PALETTE_SIZE)
    action_ids: range = range(ACTION_BASE, ACTION_BASE + N_ACTIONS)

    def __post_init__(self):
        ids = [self.pad_id, self.line_break_id, self.modality_switch_id]
        ids += [*self.text_ids, *self.palette_ids, *self.action_ids]
        if sorted(ids) != list(range(VOCAB_SIZE)):
            raise ValueError("vocabulary ranges must partition the id space")


VOCAB = VocabLayout()


def quantize_actions(values):
    """Nearest action-bin index for each value; inputs are clipped to [-1, 1].

    A value sitting exactly on a bin boundary goes to the higher
    (more positive) bin.
    """
    x = np.asarray(values, dtype=np.float64)
    idx = np.floor((x + 1.0) * (N_ACTIONS / 2.0)).astype(np.int64)
    return np.clip(idx, 0, N_ACTIONS - 1)


def dequantize_actions(indices):
    idx = np.asarray(indices)
    if idx.size and (idx.min() < 0 or idx.max() >= N_ACTIONS):
        raise ValueError("not an action bin index")
    return ACTION_BIN_CENTERS[idx]


@dataclass(frozen=True)
class Segment:
    modality: str                 # 'text' | 'image' | 'audio'
    start: int
    length: int
    frames_shape: tuple | None = None  # (T, H, W) for image segments

    def __post_init__(self):
        if self.modality not in ("text", "image", "audio"):
            raise ValueError(f"unknown modality {self.modality!r}")
        if self.modality == "image" and self.frames_shape is None:
            raise ValueError("image segment requires frame geometry")


@dataclass(frozen=True)
class TokenStream:
    tokens: np.ndarray            # (N,) int64, every id < VOCAB_SIZE
    segments: tuple[Segment, ...] = ()
    dropped_bytes: int = 0        # non-encodable text bytes discarded

    def __len__(self):
        return len(self.tokens)

    def validate(self):
        if len(self.tokens) and (self.tokens.min() < 0 or self.tokens.max() >= VOCAB_SIZE):
            raise ValueError("token id out of range")
        pos = 0
        for i, seg in enumerate(self.segments):
            if i > 0:
                if self.tokens[pos] != MODALITY_SWITCH_ID:
                    raise ValueError(f"missing modality switch at offset {pos}")
                pos += 1
            if seg.start != pos:
                raise ValueError(f"segment {i} starts at {seg.start}, expected {pos}")
            pos += seg.length
        if pos != len(self.tokens):
            raise ValueError(f"trailing tokens after offset {pos}")


@dataclass
class Record:
    """One multimodal example: any subset of text, image frames, audio."""
    text: str | None = None
    frames: np.ndarray | None = None  # (T, H, W) palette indices
    audio: np.ndarray | None = None   # (C, N) float samples


class Tokenizer:
    """Stateless encoder/decoder bound to a palette."""

    def __init__(self, palette: Palette | None = None):
        self.palette = palette if palette is not None else load_palette()

    # -- per-modality encoders -------------------------------------------

    def encode_text(self, text) -> TokenStream:
        data = text.encode("ascii", errors="replace") if isinstance(text, str) else bytes(text)
        ids = []
        dropped = 0
        for b in data:
            if b == 0x0A:
                ids.append(LINE_BREAK_ID)
            elif b in _BYTE_TO_TEXT_ID:
                ids.append(_BYTE_TO_TEXT_ID[b])
            else:
                dropped += 1
        if not ids:
            return TokenStream(np.zeros(0, dtype=np.int64), (), dropped)
        seg = Segment("text", 0, len(ids))
        return TokenStream(np.array(ids, dtype=np.int64), (seg,), dropped)

    def encode_frames(self, indices) -> TokenStream:
        arr = np.asarray(indices, dtype=np.int64)
        if arr.ndim != 3:
            raise ValueError("expected a T x H x W index array")
        if arr.size == 0:
            raise ValueError("empty frame stack")
        if arr.min() < 0 or arr.max() >= PALETTE_SIZE:
            raise ValueError("not a palette index")
        t, h, w = arr.shape
        grid = np.empty((t, h, w + 1), dtype=np.int64)
        grid[:, :, :w] = arr + PALETTE_BASE
        grid[:, :, w] = LINE_BREAK_ID
        seg = Segment("image", 0, t * h * (w + 1), frames_shape=(t, h, w))
        return TokenStream(grid.reshape(-1), (seg,))

    def encode_audio(self, samples) -> TokenStream:
        arr = np.asarray(samples, dtype=np.float64)
        if arr.ndim == 1:
            arr = arr[None, :]
        if arr.ndim != 2 or arr.shape[1] == 0:
            raise ValueError("expected at least one sample per channel")
        # Center each channel, then scale into [-1, 1]. Channels that are
        # silent after centering stay zero; the threshold absorbs the
        # float residue that mean removal leaves on constant signals.
        centered = arr - arr.mean(axis=1, keepdims=True)
        peak = np.abs(centered).max(axis=1, keepdims=True)
        eps = 1e-12 * np.maximum(1.0, np.abs(arr).max(axis=1, keepdims=True))
        live = peak > eps
        normed = np.where(live, centered / np.where(live, peak, 1.0), 0.0)
        # A channel whose samples already sit on bin centers is a decoded
        # channel: pass it through so decode -> encode is the identity.
        on_centers = self._center_valued(arr)
        normed = np.where(on_centers[:, None], arr, normed)
        ids = quantize_actions(normed) + ACTION_BASE  # (C, N)
        c, n = ids.shape
        if c > 1:
            grid = np.empty((n, c + 1), dtype=np.int64)
            grid[:, :c] = ids.T
            grid[:, c] = LINE_BREAK_ID
            tokens = grid.reshape(-1)
        else:
            tokens = ids[0]
        seg = Segment("audio", 0, len(tokens))
        return TokenStream(tokens, (seg,))

    @staticmethod
    def _center_valued(arr):
        """Per-channel flag: every sample coincides with an action bin center."""
        nearest = ACTION_BIN_CENTERS[quantize_actions(arr)]
        return np.all(np.abs(arr - nearest) < 1e-12, axis=1) & \
            np.all(np.abs(arr) <= 1.0, axis=1)

    def encode_record(self, record: Record) -> TokenStream:
        parts = []
        if record.text is not None:
            parts.append(self.encode_text(record.text))
        if record.frames is not None:
            parts.append(self.encode_frames(record.frames))
        if record.audio is not None:
            parts.append(self.encode_audio(record.audio))
        parts = [p for p in parts if len(p)]
        if not parts:
            raise ValueError("record has no encodable content")
        return concat_streams(parts)

    # -- decoding ---------------------------------------------------------

    def decode(self, stream: TokenStream) -> Record:
        stream.validate()
        rec = Record()
        for seg in stream.segments:
            chunk = stream.tokens[seg.start:seg.start + seg.length]
            if seg.modality == "text":
                if rec.text is not None:
                    raise ValueError("multiple text segments")
                rec.text = self._decode_text(chunk, seg.start)
            elif seg.modality == "image":
                if rec.frames is not None:
                    raise ValueError("multiple image segments")
                rec.frames = self._decode_frames(chunk, seg)
            else:
                if rec.audio is not None:
                    raise ValueError("multiple audio segments")
                rec.audio = self._decode_audio(chunk, seg.start)
        return rec

    def _decode_text(self, tokens, offset):
        chars = []
        for j, t in enumerate(tokens):
            if t == LINE_BREAK_ID:
                chars.append("\n")
            elif TEXT_BASE <= t < TEXT_BASE + N_TEXT:
                chars.append(chr(_TEXT_CHARS[t - TEXT_BASE]))
            else:
                raise ValueError(f"non-text token at offset {offset + j}")
        return "".join(chars)

    def _decode_frames(self, tokens, seg: Segment):
        t, h, w = seg.frames_shape
        if len(tokens) != t * h * (w + 1):
            raise ValueError(f"segment at offset {seg.start}: geometry/length mismatch")
        grid = np.asarray(tokens).reshape(t, h, w + 1)
        if not np.all(grid[:, :, w] == LINE_BREAK_ID):
            raise ValueError(f"segment at offset {seg.start}: missing row break")
        pix = grid[:, :, :w]
        if pix.size and (pix.min() < PALETTE_BASE or pix.max() >= PALETTE_BASE + PALETTE_SIZE):
            raise ValueError(f"segment at offset {seg.start}: non-pixel token in pixel area")
        return (pix - PALETTE_BASE).astype(np.int64)

    def _decode_audio(self, tokens, offset):
        tokens = np.asarray(tokens)
        breaks = np.flatnonzero(tokens == LINE_BREAK_ID)
        if len(breaks) == 0:
            channels = 1
            ids = tokens[None, :]
        else:
            channels = int(breaks[0])
            step = channels + 1
            if channels < 2 or len(tokens) % step != 0:
                raise ValueError(f"segment at offset {offset}: malformed channel interleave")
            grid = tokens.reshape(-1, step)
            if not np.all(grid[:, channels] == LINE_BREAK_ID):
                raise ValueError(f"segment at offset {offset}: malformed channel interleave")
            ids = grid[:, :channels].T
        if ids.size and (ids.min() < ACTION_BASE or ids.max() >= ACTION_BASE + N_ACTIONS):
            raise ValueError(f"segment at offset {offset}: non-action token")
        return dequantize_actions(ids - ACTION_BASE)

    # -- geometry helpers used by the sequence builder --------------------

    def segment_grid(self, stream: TokenStream, seg: Segment) -> np.ndarray:
        """The segment's tokens arranged as the (T, H, W) scan grid."""
        chunk = stream.tokens[seg.start:seg.start + seg.length]
        if seg.modality == "image":
            t, h, w = seg.frames_shape
            return np.asarray(chunk).reshape(t, h, w + 1)
        if seg.modality == "audio":
            chunk = np.asarray(chunk)
            breaks = np.flatnonzero(chunk == LINE_BREAK_ID)
            if len(breaks) == 0:
                return chunk.reshape(-1, 1, 1)
            step = int(breaks[0]) + 1
            return chunk.reshape(-1, 1, step)
        return np.asarray(chunk).reshape(1, 1, -1)


def concat_streams(parts) -> TokenStream:
    """Join streams in order, inserting one modality switch between segments."""
    tokens = []
    segments = []
    dropped = 0
    pos = 0
    for p in parts:
        dropped += p.dropped_bytes
        for seg in p.segments:
            if segments:
                tokens.append(np.array([MODALITY_SWITCH_ID], dtype=np.int64))
                pos += 1
            tokens.append(np.asarray(p.tokens[seg.start:seg.start + seg.length]))
            segments.append(replace(seg, start=pos))
            pos += seg.length
    return TokenStream(np.concatenate(tokens) if tokens else np.zeros(0, dtype=np.int64),
                       tuple(segments), dropped)
