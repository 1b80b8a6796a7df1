"""Shared pseudo-random input generation.

Both parties step an identical 32-bit Galois LFSR built on the CRC-32
polynomial (x^32 + x^26 + x^23 + x^22 + x^16 + x^12 + x^11 + x^10 + x^8 +
x^7 + x^5 + x^4 + x^2 + x + 1).  The register shifts right; the bit shifted
out is the output bit and, when it is 1, the reflected polynomial
0xEDB88320 is xored into the register.  Equal seeds give equal streams, so
keeping the seed secret authenticates the exchange.
"""

from __future__ import annotations

import numpy as np

MASK32 = 0xFFFFFFFF
CRC32_POLY = 0x04C11DB7
CRC32_POLY_REFLECTED = 0xEDB88320


def _build_byte_tables() -> tuple[list[int], list[int]]:
    # Eight right-shift steps only look at the low byte of the state, so
    # (out_byte, xor_mask) can be tabulated like a table-driven CRC.
    outs, masks = [], []
    for low in range(256):
        state = low
        out = 0
        for i in range(8):
            bit = state & 1
            out |= bit << i
            state >>= 1
            if bit:
                state ^= CRC32_POLY_REFLECTED
        outs.append(out)
        masks.append(state)
    return outs, masks


_BYTE_OUT, _BYTE_MASK = _build_byte_tables()


class DegenerateSeedError(ValueError):
    pass


class SharedInputGenerator:
    """Galois LFSR owned by one session; not safe for concurrent stepping."""

    __slots__ = ("state",)

    def __init__(self, seed: int):
        seed = int(seed)
        if not 0 <= seed <= MASK32:
            raise ValueError(f"seed must fit in 32 bits, got {seed:#x}")
        if seed == 0:
            raise DegenerateSeedError("degenerate seed: the all-zero LFSR state is absorbing")
        self.state = seed

    def __repr__(self) -> str:
        return f"SharedInputGenerator(state={self.state:#010x})"

    def copy(self) -> SharedInputGenerator:
        return SharedInputGenerator(self.state)

    def next_bit(self) -> int:
        state = self.state
        bit = state & 1
        state >>= 1
        if bit:
            state ^= CRC32_POLY_REFLECTED
        self.state = state
        return bit

    def next_bits(self, count: int) -> np.ndarray:
        """Return the next ``count`` output bits as a uint8 array of 0/1."""
        out = np.empty(count, dtype=np.uint8)
        nbytes, rest = divmod(count, 8)
        if nbytes:
            state = self.state
            packed = bytearray(nbytes)
            for i in range(nbytes):
                low = state & 0xFF
                packed[i] = _BYTE_OUT[low]
                state = (state >> 8) ^ _BYTE_MASK[low]
            self.state = state
            out[: nbytes * 8] = np.unpackbits(np.frombuffer(bytes(packed), dtype=np.uint8), bitorder="little")
        for i in range(nbytes * 8, count):
            out[i] = self.next_bit()
        return out

    def next_input(self, K: int, N: int) -> np.ndarray:
        """Draw K*N bits (row-major, unit k outer) and map 0 -> -1, 1 -> +1."""
        bits = self.next_bits(K * N).astype(np.int8)
        return (2 * bits - 1).reshape(K, N)

    def next_inputs(self, count: int, K: int, N: int) -> np.ndarray:
        """``count`` consecutive input vectors stacked as (count, K, N)."""
        bits = self.next_bits(count * K * N).astype(np.int8)
        return (2 * bits - 1).reshape(count, K, N)

    def skip(self, count: int) -> None:
        for _ in range(count):
            self.next_bit()


def seed_generator(seed: int) -> SharedInputGenerator:
    return SharedInputGenerator(seed)


def next_bit(gen: SharedInputGenerator) -> int:
    return gen.next_bit()


def next_input(gen: SharedInputGenerator, K: int, N: int) -> np.ndarray:
    return gen.next_input(K, N)


def parse_seed(text: str) -> int:
    """Parse a 32-bit seed given as hex (``0x`` prefix optional)."""
    value = int(text, 16)
    if not 0 < value <= MASK32:
        raise ValueError(f"seed must be a nonzero 32-bit value, got {text!r}")
    return value


def trial_seed(base_seed: int, index: int) -> int:
    """Per-trial input seed: ``base_seed ^ (index + 1)``, never zero."""
    seed = (base_seed ^ (index + 1)) & MASK32
    return seed or MASK32
