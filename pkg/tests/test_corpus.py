import numpy as np
import pytest

from pxby.corpus import CorpusFormatError, dumps, loads, read_corpus, write_corpus
from pxby.tokenizer import Record, Tokenizer


def test_golden_bytes_single_text_record():
    # magic + version + count, then: token count 2, 1 segment,
    # (text=0, start=0, len=2), ids (text 'a' = 3 + rank of 'a')
    tok = Tokenizer()
    stream = tok.encode_text("ab")
    data = dumps([stream])
    a_id = int(stream.tokens[0])
    b_id = a_id + 1
    expect = (b"PXTK" + bytes([1])
              + (1).to_bytes(4, "little")
              + (2).to_bytes(4, "little") + bytes([1])
              + bytes([0]) + (0).to_bytes(4, "little") + (2).to_bytes(4, "little")
              + a_id.to_bytes(2, "little") + b_id.to_bytes(2, "little"))
    assert data == expect


def test_golden_bytes_image_header():
    tok = Tokenizer()
    stream = tok.encode_frames(np.array([[[0]]]))
    data = dumps([stream])
    # image segment header carries u16 T,H,W after modality/start/length
    seg_hdr = (bytes([1]) + (0).to_bytes(4, "little") + (2).to_bytes(4, "little")
               + (1).to_bytes(2, "little") * 3)
    assert seg_hdr in data


def test_round_trip_random_corpora():
    tok = Tokenizer()
    rng = np.random.default_rng(0)
    records = []
    for _ in range(10):
        records.append(tok.encode_record(Record(
            text="word " * int(rng.integers(1, 5)),
            frames=rng.integers(0, 55, size=(2, 3, 3)),
            audio=rng.uniform(-1, 1, size=(2, 12)))))
    back = loads(dumps(records))
    assert len(back) == len(records)
    for a, b in zip(records, back):
        assert np.array_equal(a.tokens, b.tokens)
        assert a.segments == b.segments


def test_file_round_trip(tmp_path):
    tok = Tokenizer()
    path = tmp_path / "c.pxtk"
    write_corpus(path, [tok.encode_text("hello")])
    back = read_corpus(path)
    assert tok.decode(back[0]).text == "hello"


def test_empty_corpus_is_valid():
    data = dumps([])
    assert data == b"PXTK" + bytes([1]) + (0).to_bytes(4, "little")
    assert loads(data) == []


def test_bad_magic():
    with pytest.raises(CorpusFormatError, match="magic"):
        loads(b"NOPE" + bytes(16))


def test_bad_version():
    with pytest.raises(CorpusFormatError, match="version"):
        loads(b"PXTK" + bytes([9]) + (0).to_bytes(4, "little"))


def test_trailing_bytes_rejected():
    data = dumps([]) + b"x"
    with pytest.raises(CorpusFormatError, match="trailing"):
        loads(data)
