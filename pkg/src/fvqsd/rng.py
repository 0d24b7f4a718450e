"""Counter-based random number streams (Philox4x32-10).

Every random quantity in the toolkit is addressed, not sequenced: a draw is a
pure function of (seed, stream id, counter), where the stream id is the tuple
(replica, particle, rebirth_epoch, purpose).  This gives bit-exact replay,
statistically independent per-particle streams, and lets two coupled particle
systems share their rebirth-index draws simply by addressing the same stream.

Layout used by the simulation kernels (both backends implement the same one):

* purpose DIFFUSION: at step ``s`` within an epoch, dimension pair ``k`` reads
  the Philox block with counter ``(c0=s, c1=k)``; each 128-bit block yields two
  uniforms which Box-Muller maps to two normals.
* purpose BRIDGE: counter ``(s, 0)``; first uniform mapped to an Exp(1) draw
  used for the boundary-crossing test.
* purpose REBIRTH_INDEX: counter ``(0, 0)``; one uniform, one draw per epoch.
* purpose INIT: counter ``(0, k)``; uniforms for initial-condition sampling.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Purposes (4-bit field of the stream id).
DIFFUSION = 0
REBIRTH_INDEX = 1
BRIDGE = 2
INIT = 3

_PURPOSE_NAMES = {DIFFUSION: "diffusion", REBIRTH_INDEX: "rebirth_index",
                  BRIDGE: "bridge", INIT: "init"}

# Philox4x32 constants (Random123).
_M0 = np.uint64(0xD2511F53)
_M1 = np.uint64(0xCD9E8D57)
_W0 = np.uint64(0x9E3779B9)
_W1 = np.uint64(0xBB67AE85)
_MASK32 = np.uint64(0xFFFFFFFF)
_SHIFT32 = np.uint64(32)

# Stream-id field widths: particle 24, epoch 20, replica 16, purpose 4.
MAX_PARTICLE = 1 << 24
MAX_EPOCH = 1 << 20
MAX_REPLICA = 1 << 16

_TWO53_INV = float(2.0 ** -53)
_TWO_PI = 2.0 * np.pi


def pack_stream(particle, epoch, replica, purpose):
    """Pack a stream id into the 64 bits carried by Philox counter words 2-3.

    Accepts scalars or arrays; bounds are checked because silent wraparound
    would alias streams.
    """
    particle = np.asarray(particle, dtype=np.uint64)
    epoch = np.asarray(epoch, dtype=np.uint64)
    replica = np.asarray(replica, dtype=np.uint64)
    if np.any(particle >= MAX_PARTICLE):
        raise ValueError(f"particle index must be < {MAX_PARTICLE}")
    if np.any(epoch >= MAX_EPOCH):
        raise ValueError(f"rebirth epoch must be < {MAX_EPOCH}")
    if np.any(replica >= MAX_REPLICA):
        raise ValueError(f"replica id must be < {MAX_REPLICA}")
    if not 0 <= purpose < 16:
        raise ValueError("purpose must be a 4-bit value")
    return (
        (particle << np.uint64(40))
        | (epoch << np.uint64(20))
        | (replica << np.uint64(4))
        | np.uint64(purpose)
    )


def philox_block(seed, packed_id, c0, c1):
    """Philox4x32-10 of counter (c0, c1, packed_lo, packed_hi) under `seed`.

    All inputs broadcast; returns four uint64 arrays holding 32-bit words.
    """
    seed = np.uint64(seed)
    packed_id = np.asarray(packed_id, dtype=np.uint64)
    x0 = np.asarray(c0, dtype=np.uint64) & _MASK32
    x1 = np.asarray(c1, dtype=np.uint64) & _MASK32
    x2 = packed_id & _MASK32
    x3 = packed_id >> _SHIFT32
    x0, x1, x2, x3 = np.broadcast_arrays(x0, x1, x2, x3)
    k0 = seed & _MASK32
    k1 = seed >> _SHIFT32
    for _ in range(10):
        p0 = _M0 * x0
        p1 = _M1 * x2
        x0, x1, x2, x3 = (
            (p1 >> _SHIFT32) ^ x1 ^ k0,
            p1 & _MASK32,
            (p0 >> _SHIFT32) ^ x3 ^ k1,
            p0 & _MASK32,
        )
        k0 = (k0 + _W0) & _MASK32
        k1 = (k1 + _W1) & _MASK32
    return x0, x1, x2, x3


def block_uniforms(seed, packed_id, c0, c1):
    """Two uniforms in (0, 1] per counter block (53-bit resolution)."""
    w0, w1, w2, w3 = philox_block(seed, packed_id, c0, c1)
    a = (((w0 << _SHIFT32) | w1) >> np.uint64(11)) + np.uint64(1)
    b = (((w2 << _SHIFT32) | w3) >> np.uint64(11)) + np.uint64(1)
    return a.astype(np.float64) * _TWO53_INV, b.astype(np.float64) * _TWO53_INV


def block_normals(seed, packed_id, c0, c1):
    """Two standard normals per counter block (Box-Muller)."""
    ua, ub = block_uniforms(seed, packed_id, c0, c1)
    r = np.sqrt(-2.0 * np.log(ua))
    return r * np.cos(_TWO_PI * ub), r * np.sin(_TWO_PI * ub)


def block_exponential(seed, packed_id, c0, c1):
    """One Exp(1) draw per counter block (first uniform)."""
    ua, _ = block_uniforms(seed, packed_id, c0, c1)
    return -np.log(ua)


@dataclass(frozen=True)
class StreamId:
    replica: int
    particle: int
    rebirth_epoch: int
    purpose: int

    @property
    def purpose_name(self):
        return _PURPOSE_NAMES.get(self.purpose, str(self.purpose))

    def packed(self):
        return pack_stream(self.particle, self.rebirth_epoch, self.replica,
                           self.purpose)


class RngStream:
    """Replayable handle on one stream: (seed, stream_id) plus a counter.

    The counter indexes 128-bit blocks; re-creating the stream at counter 0
    reproduces the identical sequence bit for bit.
    """

    def __init__(self, seed, stream_id, counter=0):
        self.seed = int(seed)
        self.stream_id = stream_id
        self.counter = int(counter)
        self._packed = stream_id.packed()

    def _next_blocks(self, n):
        c = self.counter + np.arange(n, dtype=np.uint64)
        self.counter += n
        return c & _MASK32, c >> _SHIFT32

    def uniforms(self, n):
        c0, c1 = self._next_blocks((n + 1) // 2)
        a, b = block_uniforms(self.seed, self._packed, c0, c1)
        return np.stack([a, b], axis=1).ravel()[:n]

    def normals(self, n):
        c0, c1 = self._next_blocks((n + 1) // 2)
        a, b = block_normals(self.seed, self._packed, c0, c1)
        return np.stack([a, b], axis=1).ravel()[:n]

    def exponentials(self, n):
        c0, c1 = self._next_blocks(n)
        return np.atleast_1d(block_exponential(self.seed, self._packed, c0, c1))


def rebirth_index_uniform(seed, replica, particle, epoch):
    """The single uniform attached to a particle's n-th rebirth."""
    packed = pack_stream(particle, epoch, replica, REBIRTH_INDEX)
    ua, _ = block_uniforms(seed, packed, np.uint64(0), np.uint64(0))
    return ua


def init_uniforms(seed, replica, n_particles, dim):
    """(n_particles, dim) uniforms for sampling initial positions."""
    particles = np.arange(n_particles, dtype=np.uint64)[:, None]
    blocks = np.arange((dim + 1) // 2, dtype=np.uint64)[None, :]
    packed = pack_stream(particles, 0, replica, INIT)
    a, b = block_uniforms(seed, packed, np.uint64(0), blocks)
    u = np.stack([a, b], axis=2).reshape(n_particles, -1)
    return u[:, :dim]
