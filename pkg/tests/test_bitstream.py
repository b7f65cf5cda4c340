import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from diffsoundstream import bitstream
from diffsoundstream.tokens import AcousticTokenSeq, ConditioningSpec, SemanticTokenSeq, token_frames

SPECS = [ConditioningSpec(n_s, n_a) for n_s, n_a in itertools.product((0, 1), range(1, 9))]


def random_stream(rng, spec, frames):
    sem = SemanticTokenSeq(rng.integers(0, 2048, frames)) if spec.n_s else None
    ac = AcousticTokenSeq(rng.integers(0, 2048, (frames, 8)))
    return sem, ac


@pytest.mark.parametrize("spec", SPECS, ids=lambda s: f"s{s.n_s}a{s.n_a}")
def test_round_trip_all_specs(spec, rng):
    for frames in (0, 1, 7, 125):
        sem, ac = random_stream(rng, spec, frames)
        data = bitstream.pack(sem, ac, spec).to_bytes()
        assert len(data) == bitstream.file_size(frames, spec)
        sem2, ac2, spec2 = bitstream.unpack(data)
        assert spec2 == spec
        assert ac2 == ac.truncate(spec.n_a) if frames else len(ac2) == 0
        assert (sem2 == sem) if spec.n_s else sem2 is None


def test_full_depth_ten_seconds():
    spec = ConditioningSpec(1, 8)
    frames = token_frames(10 * 24000)
    assert frames == 125
    assert bitstream.payload_bits(frames, spec) == 12375
    assert bitstream.file_size(frames, spec) == bitstream.HEADER_SIZE + 1547


def test_header_layout():
    spec = ConditioningSpec(1, 3)
    data = bitstream.pack(SemanticTokenSeq([5]), AcousticTokenSeq([[1, 2, 3]]), spec).to_bytes()
    assert data[:4] == b"DSTK" and data[4] == 1
    assert int.from_bytes(data[5:9], "little") == 24000
    assert int.from_bytes(data[9:13], "little") == 1250
    assert tuple(data[13:16]) == (1, 3, 11)
    assert int.from_bytes(data[16:20], "little") == 1


def test_msb_first_packing():
    # ids 1 and 2047 -> 00000000001 11111111111 + 2 pad bits
    assert bitstream.pack_ids(np.array([[1, 2047]])) == bytes([0x00, 0x3F, 0xFC])


def test_errors():
    spec = ConditioningSpec(1, 2)
    good = bitstream.pack(SemanticTokenSeq([1, 2]), AcousticTokenSeq([[3, 4], [5, 6]]), spec).to_bytes()
    with pytest.raises(bitstream.BadMagicError):
        bitstream.unpack(b"XXXX" + good[4:])
    with pytest.raises(bitstream.UnsupportedVersionError):
        bitstream.unpack(good[:4] + b"\x02" + good[5:])
    with pytest.raises(bitstream.TruncatedError):
        bitstream.unpack(good[:-1])
    with pytest.raises(bitstream.TruncatedError):
        bitstream.unpack(good[:10])
    with pytest.raises(bitstream.HeaderError):
        bitstream.unpack(good + b"\x00")
    with pytest.raises(bitstream.HeaderError):
        bitstream.unpack(good[:14] + b"\x09" + good[15:])
    with pytest.raises(bitstream.PaddingError):
        bitstream.unpack(good[:-1] + bytes([good[-1] | 1]))
    with pytest.raises(ValueError):
        bitstream.pack(None, AcousticTokenSeq([[1, 2]]), spec)
    with pytest.raises(ValueError):
        bitstream.pack(SemanticTokenSeq([1]), AcousticTokenSeq([[1]]), spec)


def test_file_write_read(tmp_path, rng):
    spec = ConditioningSpec(0, 4)
    sem, ac = random_stream(rng, spec, 13)
    bitstream.pack(sem, ac, spec).write(tmp_path / "x.dstk")
    _, ac2, _ = bitstream.read(tmp_path / "x.dstk")
    assert ac2 == ac.truncate(4)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.integers(0, 2047), max_size=64))
def test_pack_unpack_ids_property(ids):
    data = bitstream.pack_ids(np.array(ids, dtype=np.int64))
    assert len(data) == -(-len(ids) * 11 // 8)
    assert bitstream.unpack_ids(data, len(ids)).tolist() == ids
