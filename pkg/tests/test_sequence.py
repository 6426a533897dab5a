import numpy as np
import pytest

from pxby.sequence import (WindowedDataset, build_context_2d,
                           create_sequence_data, record_context_array,
                           reduce_modalities, reduce_stream, window)
from pxby.tokenizer import (MODALITY_SWITCH_ID, PALETTE_BASE, Record,
                            Tokenizer)


def neighbor_oracle(x):
    """Direct (t,h,w) indexing, written independently of the slicing path."""
    t, h, w = x.shape

    def g(ti, hi, wi):
        if 0 <= ti < t and 0 <= hi < h and 0 <= wi < w:
            return int(x[ti, hi, wi])
        return 0

    rows = []
    for ti in range(t):
        for hi in range(h):
            for wi in range(w):
                rows.append([g(ti - 1, hi - 1, wi), g(ti - 1, hi, wi),
                             g(ti - 1, hi + 1, wi), g(ti, hi - 1, wi - 1),
                             g(ti, hi, wi - 1), g(ti, hi - 1, wi)])
    c = np.array(rows, dtype=np.int64)
    y = x.reshape(-1, 1)
    c[1:, 5] = y[:-1, 0]
    return c, y


def test_single_cell():
    c, y = create_sequence_data(np.array([[[9]]]))
    assert c.tolist() == [[0, 0, 0, 0, 0, 0]]
    assert y.tolist() == [[9]]


def test_1x2x2_worked_case():
    x = np.array([[[1, 2], [3, 4]]])
    c, y = create_sequence_data(x)
    co, yo = neighbor_oracle(x)
    assert np.array_equal(c, co)
    assert np.array_equal(y, yo)


def test_matches_oracle_on_200_random_arrays():
    rng = np.random.default_rng(0)
    for _ in range(200):
        shape = rng.integers(1, 6, size=3)
        x = rng.integers(0, 151, size=shape)
        c, y = create_sequence_data(x)
        co, yo = neighbor_oracle(x)
        assert np.array_equal(c, co)
        assert np.array_equal(y, yo)


def test_autoregressive_column_identity():
    rng = np.random.default_rng(1)
    x = rng.integers(0, 151, size=(3, 4, 5))
    c, y = create_sequence_data(x)
    assert np.array_equal(c[1:, 5], y[:-1, 0])


def test_invalid_shape():
    with pytest.raises(ValueError):
        create_sequence_data(np.zeros((2, 2)))


# -- 3x3 windows ------------------------------------------------------------

def test_first_text_token_window_is_empty():
    tok = Tokenizer()
    s = tok.encode_text("abc")
    win = build_context_2d(tok, s)
    assert np.all(win[0] == 0)


def test_text_windows_hold_previous_tokens_right_aligned():
    tok = Tokenizer()
    s = tok.encode_text("abcdefghij")
    win = build_context_2d(tok, s)
    flat = win.reshape(len(s), 9)
    # third token sees exactly the two previous ids, right-aligned
    assert flat[2, :7].tolist() == [0] * 7
    assert flat[2, 7:].tolist() == s.tokens[:2].tolist()
    # deep inside, the window holds the 8 preceding tokens
    assert flat[9, 0] == 0
    assert flat[9, 1:].tolist() == s.tokens[1:9].tolist()


def test_interior_pixel_window():
    tok = Tokenizer()
    frames = np.arange(9).reshape(1, 3, 3)
    s = tok.encode_frames(frames)
    win = build_context_2d(tok, s)
    center_pos = 1 * 4 + 1  # row 1, col 1 in the (3, 4) grid with breaks
    expect = frames[0] + PALETTE_BASE
    assert np.array_equal(win[center_pos], expect)


def test_corner_pixel_window_padding():
    tok = Tokenizer()
    frames = np.arange(9).reshape(1, 3, 3)
    s = tok.encode_frames(frames)
    win = build_context_2d(tok, s)
    corner = win[0]
    assert np.all(corner[0, :] == 0)
    assert np.all(corner[:, 0] == 0)
    assert corner[1, 1] == PALETTE_BASE + 0
    # brute-force check of every pixel window
    g = frames[0] + PALETTE_BASE
    for hi in range(3):
        for wi in range(3):
            pos = hi * 4 + wi
            for dy in range(-1, 2):
                for dx in range(-1, 2):
                    y, x = hi + dy, wi + dx
                    want = g[y, x] if 0 <= y < 3 and 0 <= x < 3 else 0
                    assert win[pos][dy + 1, dx + 1] == want


# -- windowing ---------------------------------------------------------------

def _items(n, start=10):
    c = np.arange(n * 6).reshape(n, 6) + start
    y = np.arange(n).reshape(n, 1) + start
    return [(c, y)]


def test_short_item_wraps_circularly():
    items = _items(5)
    out = list(window(items, seq_len=8, stride=8))
    assert len(out) == 1
    c, y = out[0]
    rows = [0, 1, 2, 3, 4, 0, 1, 2]
    assert np.array_equal(y[:, 0], items[0][1][rows, 0])


def test_exact_fit_single_window():
    items = _items(8)
    out = list(window(items, seq_len=8, stride=8))
    assert len(out) == 1
    assert np.array_equal(out[0][0], items[0][0])


def test_overlapping_windows_match_reference_enumerator():
    items = _items(10)
    out = list(window(items, seq_len=8, stride=4))
    starts = [0, 4, 8]
    assert len(out) == len(starts)
    for (c, y), s in zip(out, starts):
        rows = [(s + j) % 10 for j in range(8)]
        assert np.array_equal(y[:, 0], items[0][1][rows, 0])


def test_every_row_covered():
    rng = np.random.default_rng(2)
    for _ in range(20):
        n = int(rng.integers(1, 30))
        seq_len = int(rng.integers(1, 12))
        stride = int(rng.integers(1, seq_len + 1))
        ds = WindowedDataset(_items(n), seq_len, stride)
        seen = set()
        for k in range(len(ds)):
            _, y = ds[k]
            seen.update(int(v) for v in y[:, 0])
        assert seen == {int(v) for v in _items(n)[0][1][:, 0]}


def test_windows_never_mix_items():
    items = _items(5, start=100) + _items(7, start=500)
    ds = WindowedDataset(items, seq_len=6, stride=3)
    for k in range(len(ds)):
        _, y = ds[k]
        vals = y[:, 0]
        assert np.all(vals >= 500) or np.all(vals < 500)


def test_stride_bounds_checked():
    with pytest.raises(ValueError):
        WindowedDataset(_items(5), seq_len=4, stride=5)
    with pytest.raises(ValueError):
        WindowedDataset(_items(5), seq_len=0, stride=1)


# -- record assembly ---------------------------------------------------------

def test_record_context_chain_across_segments():
    tok = Tokenizer()
    rng = np.random.default_rng(3)
    stream = tok.encode_record(Record(
        text="hi", frames=rng.integers(0, 55, size=(1, 2, 2)),
        audio=rng.uniform(-1, 1, size=12)))
    c, y = record_context_array(tok, stream)
    assert len(c) == len(stream.tokens)
    assert np.array_equal(y[:, 0], stream.tokens)
    assert np.array_equal(c[1:, 5], y[:-1, 0])
    # switch rows carry only the autoregressive entry
    for i in np.flatnonzero(y[:, 0] == MODALITY_SWITCH_ID):
        assert c[i, :5].tolist() == [0] * 5


def test_reduce_modalities_identity_and_arithmetic():
    rng = np.random.default_rng(4)
    rec = Record(text="abc", frames=rng.integers(0, 55, size=(4, 2, 2)),
                 audio=rng.uniform(-1, 1, size=(1, 100)))
    same = reduce_modalities(rec, 1, 1)
    assert same.text == rec.text
    assert np.array_equal(same.frames, rec.frames)
    assert np.array_equal(same.audio, rec.audio)
    red = reduce_modalities(rec, 4, 2)
    assert red.frames.shape[0] == 2
    assert red.audio.shape[1] == 25
    assert red.text == rec.text


def test_reduce_audio_length_halves():
    rec = Record(audio=np.arange(8, dtype=float))
    assert reduce_modalities(rec, 2, 1).audio.shape[-1] == 4


def test_reduce_rejects_zero_factor():
    with pytest.raises(ValueError):
        reduce_modalities(Record(text="x"), 0, 1)


def test_reduce_stream_matches_grid_subsampling():
    tok = Tokenizer()
    rng = np.random.default_rng(5)
    frames = rng.integers(0, 55, size=(4, 2, 3))
    rec = Record(text="ab", frames=frames, audio=rng.uniform(-1, 1, (2, 10)))
    stream = tok.encode_record(rec)
    red = reduce_stream(tok, stream, audio_factor=2, image_factor=2)
    dec = tok.decode(red)
    assert np.array_equal(dec.frames, frames[::2])
    assert dec.audio.shape == (2, 5)
    assert dec.text == "ab"
