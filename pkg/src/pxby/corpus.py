"""PXTK: bit-exact binary container for tokenized corpora.

Layout (all integers little-endian):
    magic b"PXTK", version byte 0x01, u32 record count;
    per record: u32 token count, u8 segment count,
        per segment: u8 modality, u32 start, u32 length,
                     and for images u16 T, u16 H, u16 W;
        then the token ids as u16.
"""

import struct

import numpy as np

from .tokenizer import Segment, TokenStream, VOCAB_SIZE

MAGIC = b"PXTK"
VERSION = 1

_MODALITY_CODE = {"text": 0, "image": 1, "audio": 2}
_CODE_MODALITY = {v: k for k, v in _MODALITY_CODE.items()}


class CorpusFormatError(ValueError):
    pass


def dumps(records) -> bytes:
    """Serialize a list of TokenStreams."""
    out = bytearray()
    out += MAGIC
    out.append(VERSION)
    out += struct.pack("<I", len(records))
    for stream in records:
        stream.validate()
        out += struct.pack("<IB", len(stream.tokens), len(stream.segments))
        for seg in stream.segments:
            out += struct.pack("<BII", _MODALITY_CODE[seg.modality], seg.start, seg.length)
            if seg.modality == "image":
                out += struct.pack("<HHH", *seg.frames_shape)
        out += np.asarray(stream.tokens, dtype="<u2").tobytes()
    return bytes(out)


def loads(data: bytes):
    """Parse PXTK bytes back into a list of TokenStreams."""
    if data[:4] != MAGIC:
        raise CorpusFormatError("bad magic")
    if data[4] != VERSION:
        raise CorpusFormatError(f"unsupported version {data[4]}")
    (n_records,) = struct.unpack_from("<I", data, 5)
    pos = 9
    records = []
    for _ in range(n_records):
        n_tokens, n_segments = struct.unpack_from("<IB", data, pos)
        pos += 5
        segments = []
        for _ in range(n_segments):
            code, start, length = struct.unpack_from("<BII", data, pos)
            pos += 9
            if code not in _CODE_MODALITY:
                raise CorpusFormatError(f"unknown modality code {code} at byte {pos - 9}")
            shape = None
            if _CODE_MODALITY[code] == "image":
                shape = struct.unpack_from("<HHH", data, pos)
                pos += 6
            segments.append(Segment(_CODE_MODALITY[code], start, length, frames_shape=shape))
        tokens = np.frombuffer(data, dtype="<u2", count=n_tokens, offset=pos).astype(np.int64)
        pos += 2 * n_tokens
        if tokens.size and tokens.max() >= VOCAB_SIZE:
            raise CorpusFormatError("token id out of range")
        stream = TokenStream(tokens, tuple(segments))
        stream.validate()
        records.append(stream)
    if pos != len(data):
        raise CorpusFormatError(f"trailing bytes after offset {pos}")
    return records


def write_corpus(path, records):
    with open(path, "wb") as f:
        f.write(dumps(records))


def read_corpus(path):
    with open(path, "rb") as f:
        return loads(f.read())
