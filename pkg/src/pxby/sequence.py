"""Causal context/target pair construction and windowed datasets.

Every token in a (T, H, W) scan grid gets a 6-entry context: three
column neighbors from the previous frame, the two causal neighbors
from the current frame, and the previous token in raster order.
Out-of-range neighbors read as the pad id 0.
"""

from dataclasses import dataclass

import numpy as np

from .tokenizer import (MODALITY_SWITCH_ID, Record, Segment, TokenStream,
                        Tokenizer)

CONTEXT_WIDTH = 6


def create_sequence_data(x):
    """Build the (T*H*W, 6) context matrix and (T*H*W, 1) targets for a grid.

    Contexts are extracted with a zero-padded slice per position, then
    the last column is overwritten with the previous raster-order
    target for every row but the first (the autoregressive column).
    """
    x = np.asarray(x, dtype=np.int64)
    if x.ndim != 3 or x.size == 0:
        raise ValueError("expected a non-empty T x H x W array")
    t, h, w = x.shape
    p = np.zeros((t + 1, h + 2, w + 2), dtype=np.int64)
    p[1:, 1:h + 1, 1:w + 1] = x
    slices = [
        p[0:t, 0:h, 1:w + 1],      # (t-1, h-1, w)
        p[0:t, 1:h + 1, 1:w + 1],  # (t-1, h,   w)
        p[0:t, 2:h + 2, 1:w + 1],  # (t-1, h+1, w)
        p[1:t + 1, 0:h, 0:w],      # (t,   h-1, w-1)
        p[1:t + 1, 1:h + 1, 0:w],  # (t,   h,   w-1)
        p[1:t + 1, 0:h, 1:w + 1],  # (t,   h-1, w), replaced below
    ]
    contexts = np.stack(slices, axis=-1).reshape(t * h * w, CONTEXT_WIDTH)
    targets = x.reshape(-1, 1)
    contexts[1:, 5] = targets[:-1, 0]
    return contexts, targets


def record_context_array(tokenizer: Tokenizer, stream: TokenStream):
    """Context/target rows for a whole record, one row per stream token.

    Per-segment grids are contextualized independently; the modality
    switch tokens between segments get otherwise-empty rows, and the
    autoregressive column is chained across segment boundaries so that
    contexts[i][5] == targets[i-1] holds over the full record.
    """
    stream.validate()
    if not stream.segments:
        raise ValueError("empty stream")
    ctx_parts, tgt_parts = [], []
    prev = None
    for seg in stream.segments:
        if prev is not None:
            ctx_parts.append(np.array([[0, 0, 0, 0, 0, prev]], dtype=np.int64))
            tgt_parts.append(np.array([[MODALITY_SWITCH_ID]], dtype=np.int64))
            prev = MODALITY_SWITCH_ID
        grid = tokenizer.segment_grid(stream, seg)
        c, y = create_sequence_data(grid)
        if prev is not None:
            c[0, 5] = prev
        ctx_parts.append(c)
        tgt_parts.append(y)
        prev = int(y[-1, 0])
    return np.concatenate(ctx_parts), np.concatenate(tgt_parts)


def build_context_2d(tokenizer: Tokenizer, stream: TokenStream):
    """First-generation 3x3 windows, one per stream token.

    Pixel tokens see their spatial 3x3 neighborhood (self at center,
    pad 0 outside the frame). All other tokens, including row breaks
    and switches, see their up-to-8 preceding stream tokens
    right-aligned in the flattened window.
    """
    stream.validate()
    n = len(stream.tokens)
    windows = np.zeros((n, 3, 3), dtype=np.int64)
    is_pixel = np.zeros(n, dtype=bool)

    for seg in stream.segments:
        if seg.modality != "image":
            continue
        t, h, w = seg.frames_shape
        grid = np.asarray(stream.tokens[seg.start:seg.start + seg.length]).reshape(t, h, w + 1)
        padded = np.zeros((t, h + 2, w + 2), dtype=np.int64)
        padded[:, 1:h + 1, 1:w + 1] = grid[:, :, :w]
        for ti in range(t):
            for hi in range(h):
                for wi in range(w):
                    pos = seg.start + ti * h * (w + 1) + hi * (w + 1) + wi
                    windows[pos] = padded[ti, hi:hi + 3, wi:wi + 3]
                    is_pixel[pos] = True

    flat = windows.reshape(n, 9)
    for pos in np.flatnonzero(~is_pixel):
        lo = max(0, pos - 8)
        prev = stream.tokens[lo:pos]
        if len(prev):
            flat[pos, 9 - len(prev):] = prev
    return windows


@dataclass
class WindowedDataset:
    """Fixed-length (contexts, targets) windows over a list of items.

    Window starts are multiples of ``stride`` within each item; a
    window running past the item's end wraps circularly to the item's
    own start, so no window ever mixes two items.
    """

    items: list           # list of (contexts (N,6), targets (N,1)) pairs
    seq_len: int
    stride: int

    def __post_init__(self):
        if self.seq_len < 1:
            raise ValueError("seq_len must be >= 1")
        if not 1 <= self.stride <= self.seq_len:
            raise ValueError("stride must be in 1..seq_len")
        self._index = []
        for i, (c, y) in enumerate(self.items):
            if len(c) != len(y):
                raise ValueError("context/target length mismatch")
            for start in range(0, len(c), self.stride):
                self._index.append((i, start))

    def __len__(self):
        return len(self._index)

    def __getitem__(self, k):
        item_i, start = self._index[k]
        c, y = self.items[item_i]
        rows = (start + np.arange(self.seq_len)) % len(c)
        return c[rows], y[rows]


def window(items, seq_len, stride):
    """Iterate (contexts LxW, targets Lx1) windows; see WindowedDataset."""
    ds = WindowedDataset(items, seq_len, stride)
    for k in range(len(ds)):
        yield ds[k]


def reduce_modalities(record: Record, audio_factor: int, image_factor: int) -> Record:
    """Temporal subsampling: keep every factor-th audio sample / image frame."""
    for f in (audio_factor, image_factor):
        if not isinstance(f, (int, np.integer)) or f < 1:
            raise ValueError("reduction factors must be integers >= 1")
    frames = record.frames
    if frames is not None:
        frames = frames[::image_factor]
    audio = record.audio
    if audio is not None:
        audio = np.asarray(audio)
        audio = audio[..., ::audio_factor]
    return Record(text=record.text, frames=frames, audio=audio)


def reduce_stream(tokenizer: Tokenizer, stream: TokenStream,
                  audio_factor: int, image_factor: int) -> TokenStream:
    """Token-level counterpart of reduce_modalities for encoded corpora.

    Subsamples whole grid rows (audio time steps, image frames) so no
    value is ever requantized.
    """
    from .tokenizer import concat_streams

    for f in (audio_factor, image_factor):
        if not isinstance(f, (int, np.integer)) or f < 1:
            raise ValueError("reduction factors must be integers >= 1")
    parts = []
    for seg in stream.segments:
        grid = tokenizer.segment_grid(stream, seg)
        if seg.modality == "image":
            grid = grid[::image_factor]
            t, h, w1 = grid.shape
            new_seg = Segment("image", 0, grid.size, frames_shape=(t, h, w1 - 1))
        elif seg.modality == "audio":
            grid = grid[::audio_factor]
            new_seg = Segment("audio", 0, grid.size)
        else:
            new_seg = Segment("text", 0, grid.size)
        parts.append(TokenStream(grid.reshape(-1), (new_seg,)))
    return concat_streams(parts)
