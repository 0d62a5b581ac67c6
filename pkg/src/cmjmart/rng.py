"""Deterministic counter-based random streams.

Every random draw in this package is a pure function of a 64-bit stream
key and a draw counter.  Keys are derived by hashing the path that leads
to the draw: replica index from the master seed, individual label from
the parent's key and the child rank, offspring-process entry from the
individual's key, superposition component from the entry's key.  Two
consequences matter:

* a simulation is reproducible regardless of processing order, and
* extending a sampling window only appends draws (the common prefix of
  the stream is re-read verbatim), so enlarging a tail cutoff refines a
  tree without disturbing it.

The hash is the splitmix64 output stage; draw ``n`` of stream ``key`` is
``finalize(key + (n + 1) * GOLDEN)`` where ``GOLDEN`` is the 64-bit
golden-ratio constant.  All arithmetic is modulo 2**64.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

_MASK = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB

# Domain-separation salts for key derivation.
SALT_REPLICA = 0x243F6A8885A308D3
SALT_ANCESTOR = 0x13198A2E03707344
SALT_ROOT = 0xA4093822299F31D0
SALT_CHILD = 0x082EFA98EC4E6C89
SALT_ENTRY = 0x452821E638D01377
SALT_COMPONENT = 0xBE5466CF34E90C6C

_U64_GOLDEN = np.uint64(GOLDEN)
_U64_MIX1 = np.uint64(_MIX1)
_U64_MIX2 = np.uint64(_MIX2)


def mix64(x: int) -> int:
    """splitmix64 finalizer on a Python integer (exact 64-bit wraparound)."""
    x &= _MASK
    x ^= x >> 30
    x = (x * _MIX1) & _MASK
    x ^= x >> 27
    x = (x * _MIX2) & _MASK
    x ^= x >> 31
    return x


def combine(key: int, value: int) -> int:
    """Derive a new stream key from ``key`` and a small integer ``value``."""
    return mix64((key + (mix64(value & _MASK) | 1)) & _MASK)


def replica_seed(master_seed: int, replica: int) -> int:
    return combine(master_seed ^ SALT_REPLICA, replica)


def root_key(seed: int) -> int:
    return combine(seed ^ SALT_ROOT, 0)


def ancestor_type_key(seed: int) -> int:
    return combine(seed ^ SALT_ANCESTOR, 0)


def child_key(parent_key: int, rank: int) -> int:
    """Stream key of the ``rank``-th child (1-based) of an individual."""
    return combine(parent_key ^ SALT_CHILD, rank)


def entry_key(ind_key: int, i: int, j: int, p: int) -> int:
    """Stream key for the (i, j) offspring-process entry of an individual."""
    return combine(ind_key ^ SALT_ENTRY, (i - 1) * p + (j - 1))


def component_key(ent_key: int, index: int) -> int:
    """Stream key for one component of a superposition."""
    return combine(ent_key ^ SALT_COMPONENT, index)


def _finalize_u64(x: np.ndarray) -> np.ndarray:
    if not (isinstance(x, np.ndarray) and x.dtype == np.uint64):
        x = np.asarray(x, dtype=np.uint64)
    x = x.copy()
    _finalize_inplace(x)
    return x


def _finalize_inplace(x: np.ndarray) -> np.ndarray:
    """Finalizer applied in place to a scratch uint64 array."""
    x ^= x >> np.uint64(30)
    x *= _U64_MIX1
    x ^= x >> np.uint64(27)
    x *= _U64_MIX2
    x ^= x >> np.uint64(31)
    return x


def mix64_array(x: np.ndarray) -> np.ndarray:
    """Vectorized splitmix64 finalizer over a uint64 array."""
    return _finalize_u64(np.asarray(x, dtype=np.uint64))


def combine_array(keys: np.ndarray, values: np.ndarray) -> np.ndarray:
    keys = np.asarray(keys, dtype=np.uint64)
    values = mix64_array(np.asarray(values, dtype=np.uint64)) | np.uint64(1)
    return _finalize_u64(keys + values)


def child_key_array(parent_keys: np.ndarray, ranks: np.ndarray) -> np.ndarray:
    return combine_array(np.asarray(parent_keys, np.uint64) ^ np.uint64(SALT_CHILD), ranks)


def entry_key_array(ind_keys: np.ndarray, i: int, j: int, p: int) -> np.ndarray:
    tag = np.uint64((i - 1) * p + (j - 1))
    base = np.asarray(ind_keys, np.uint64) ^ np.uint64(SALT_ENTRY)
    return combine_array(base, np.full(len(base), tag, dtype=np.uint64))


def component_key_array(ent_keys: np.ndarray, index: int) -> np.ndarray:
    base = np.asarray(ent_keys, np.uint64) ^ np.uint64(SALT_COMPONENT)
    return combine_array(base, np.full(len(base), index, dtype=np.uint64))


def _to_unit_interval(bits: np.ndarray) -> np.ndarray:
    # 53 significant bits, shifted into (0, 1): never exactly 0 or 1.
    return ((bits >> np.uint64(11)).astype(np.float64) + 0.5) * (2.0 ** -53)


def uniforms(key: int, start: int, count: int) -> np.ndarray:
    """Draws ``start .. start+count-1`` of stream ``key``, uniform on (0, 1)."""
    counters = np.arange(start + 1, start + count + 1, dtype=np.uint64)
    states = np.uint64(key) + counters * _U64_GOLDEN
    return _to_unit_interval(_finalize_inplace(states))


def uniform_block(keys: np.ndarray, start: int, width: int) -> np.ndarray:
    """Uniform (0,1) block of shape (len(keys), width); row ``r`` holds draws
    ``start .. start+width-1`` of stream ``keys[r]``."""
    keys = np.asarray(keys, dtype=np.uint64)
    counters = np.arange(start + 1, start + width + 1, dtype=np.uint64)
    states = keys[:, None] + counters[None, :] * _U64_GOLDEN
    return _to_unit_interval(_finalize_inplace(states))


_SCRATCH: dict = {}


def scratch(n: int, dtype) -> np.ndarray:
    """Reusable flat scratch buffer (single-threaded use; the package
    parallelizes across processes, never threads)."""
    dtype = np.dtype(dtype)
    buf = _SCRATCH.get(dtype)
    if buf is None or buf.size < n:
        buf = np.empty(int(n * 1.3) + 64, dtype=dtype)
        _SCRATCH[dtype] = buf
    return buf[:n]


def uniform_block_scratch(keys: np.ndarray, start: int, width: int) -> np.ndarray:
    """Like :func:`uniform_block` but returns a view of a reused scratch
    buffer; the caller must finish with it before the next scratch call."""
    keys = np.asarray(keys, dtype=np.uint64)
    n = len(keys)
    states = scratch(n * width, np.uint64).reshape(n, width)
    steps = np.arange(start + 1, start + width + 1, dtype=np.uint64) * _U64_GOLDEN
    np.add(keys[:, None], steps[None, :], out=states)
    _finalize_inplace(states)
    out = scratch(n * width, np.float64).reshape(n, width)
    np.right_shift(states, np.uint64(11), out=states)
    np.multiply(states, 2.0 ** -53, out=out, casting="same_kind")
    out += 2.0 ** -54
    return out


@dataclass
class Stream:
    """Sequential view of a counter-based stream.

    Draws advance an internal counter; the values depend only on
    ``(key, counter)``, never on previous draws.
    """

    key: int
    counter: int = field(default=0)

    def uniform(self, n: int) -> np.ndarray:
        out = uniforms(self.key, self.counter, n)
        self.counter += n
        return out

    def exponential(self, rate: float, n: int) -> np.ndarray:
        return -np.log(self.uniform(n)) / rate

    def integers(self, n: int, bound: int) -> np.ndarray:
        # Modulo bias is irrelevant at 64-bit width for small bounds.
        counters = np.arange(self.counter + 1, self.counter + n + 1, dtype=np.uint64)
        self.counter += n
        bits = _finalize_u64(np.uint64(self.key) + counters * _U64_GOLDEN)
        return (bits % np.uint64(bound)).astype(np.int64)

    def choice(self, probs) -> int:
        """Index sampled from a probability vector."""
        u = float(self.uniform(1)[0])
        acc = 0.0
        for idx, w in enumerate(probs):
            acc += w
            if u <= acc:
                return idx
        return len(probs) - 1
