import numpy as np
import pytest

from fvqsd import rng


# Random123 known-answer vectors for philox4x32-10.
KAT = [
    ((0, 0, 0, 0), (0, 0),
     (0x6627E8D5, 0xE169C58D, 0xBC57AC4C, 0x9B00DBD8)),
    ((0xFFFFFFFF,) * 4, (0xFFFFFFFF,) * 2,
     (0x408F276D, 0x41C83B0E, 0xA20BC7C6, 0x6D5451FD)),
    ((0x243F6A88, 0x85A308D3, 0x13198A2E, 0x03707344),
     (0xA4093822, 0x299F31D0),
     (0xD16CFE09, 0x94FDCCEB, 0x5001E420, 0x24126EA1)),
]


@pytest.mark.parametrize("counter,key,expected", KAT)
def test_philox_known_answers(counter, key, expected):
    seed = (key[1] << 32) | key[0]
    packed = (counter[3] << 32) | counter[2]
    got = rng.philox_block(seed, np.uint64(packed), np.uint64(counter[0]),
                           np.uint64(counter[1]))
    assert tuple(int(v) for v in got) == expected


def test_replay_is_bit_exact():
    sid = rng.StreamId(replica=3, particle=17, rebirth_epoch=2,
                       purpose=rng.DIFFUSION)
    a = rng.RngStream(123, sid).normals(1001)
    b = rng.RngStream(123, sid).normals(1001)
    assert np.array_equal(a, b)
    c = rng.RngStream(124, sid).normals(1001)
    assert not np.array_equal(a, c)


def test_distinct_streams_are_uncorrelated():
    n = 20_000
    base = dict(replica=0, rebirth_epoch=0, purpose=rng.DIFFUSION)
    x = rng.RngStream(7, rng.StreamId(particle=0, **base)).normals(n)
    y = rng.RngStream(7, rng.StreamId(particle=1, **base)).normals(n)
    r = np.corrcoef(x, y)[0, 1]
    assert abs(r) < 4.0 / np.sqrt(n)
    assert abs(x.mean()) < 4.0 / np.sqrt(n)
    assert abs(x.std() - 1.0) < 4.0 / np.sqrt(n)


def test_purpose_and_epoch_change_the_stream():
    a = rng.RngStream(1, rng.StreamId(0, 0, 0, rng.DIFFUSION)).uniforms(8)
    b = rng.RngStream(1, rng.StreamId(0, 0, 0, rng.BRIDGE)).uniforms(8)
    c = rng.RngStream(1, rng.StreamId(0, 0, 1, rng.DIFFUSION)).uniforms(8)
    assert not np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_uniforms_live_in_half_open_unit_interval():
    u = rng.RngStream(9, rng.StreamId(0, 0, 0, rng.INIT)).uniforms(5000)
    assert np.all(u > 0.0) and np.all(u <= 1.0)
    assert abs(u.mean() - 0.5) < 0.02


def test_exponentials_match_minus_log_uniform():
    sid = rng.StreamId(0, 5, 0, rng.BRIDGE)
    e = rng.RngStream(11, sid).exponentials(1000)
    assert np.all(e > 0)
    assert abs(e.mean() - 1.0) < 0.15


def test_pack_stream_bounds():
    with pytest.raises(ValueError):
        rng.pack_stream(rng.MAX_PARTICLE, 0, 0, 0)
    with pytest.raises(ValueError):
        rng.pack_stream(0, rng.MAX_EPOCH, 0, 0)
    with pytest.raises(ValueError):
        rng.pack_stream(0, 0, rng.MAX_REPLICA, 0)


def test_rebirth_uniform_is_a_pure_function():
    a = rng.rebirth_index_uniform(5, 1, 7, 3)
    b = rng.rebirth_index_uniform(5, 1, 7, 3)
    assert a == b
    assert rng.rebirth_index_uniform(5, 1, 7, 4) != a
