"""Tree Parity Machine arithmetic.

Weights are plain ``(K, N)`` integer numpy arrays bounded to ``[-L, L]``,
inputs are ``(K, N)`` arrays over ``{-1, +1}``.  Every function here is pure:
arrays passed in are never modified.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

WEIGHT_DTYPE = np.int32


class Role(str, enum.Enum):
    A = "A"
    B = "B"

    @property
    def opposite(self) -> Role:
        return Role.B if self is Role.A else Role.A

    @property
    def zero_sign(self) -> int:
        """Hidden-unit sign assigned to a zero field under this role's convention."""
        return 1 if self is Role.A else -1


class TieBreak(str, enum.Enum):
    # COMMON: both parties resolve a zero field with role A's sign (+1).
    # PARTY: each party uses its own role's sign; synchronized weights then
    # disagree on every zero field.
    COMMON = "common"
    PARTY = "party"


def expected_sync_time(K: int, N: int, L: int) -> int:
    """Rough expected synchronization time used to size the watchdog.

    Anchored at 400 iterations for K=3, N=100, L=3 and scaled with L**2 and
    (for large N) ln N.
    """
    del K
    scale = (L / 3.0) ** 2 * max(1.0, math.log(N) / math.log(100))
    return max(100, int(math.ceil(400 * scale)))


@dataclass(frozen=True)
class TpmParams:
    K: int = 3
    N: int = 100
    L: int = 3
    b: int = 32
    t_min: int = 96
    watchdog_max: int | None = None
    role: Role = Role.A
    tie_break: TieBreak = TieBreak.COMMON

    def __post_init__(self):
        for name in ("K", "N", "L", "b", "t_min"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")
        object.__setattr__(self, "role", Role(self.role))
        object.__setattr__(self, "tie_break", TieBreak(self.tie_break))
        if self.watchdog_max is None:
            object.__setattr__(self, "watchdog_max", 10 * expected_sync_time(self.K, self.N, self.L))
        elif self.watchdog_max < 1:
            raise ValueError(f"watchdog_max must be >= 1, got {self.watchdog_max}")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.K, self.N)

    @property
    def tie_role(self) -> Role:
        """Role whose zero-field convention this party evaluates with."""
        return self.role if self.tie_break is TieBreak.PARTY else Role.A

    @property
    def key_bits(self) -> int:
        return self.K * self.N * bits_per_weight(self.L)

    def for_role(self, role: Role) -> TpmParams:
        return TpmParams(self.K, self.N, self.L, self.b, self.t_min, self.watchdog_max, Role(role), self.tie_break)

    def compatible_with(self, other: TpmParams) -> bool:
        return (self.K, self.N, self.L, self.b, self.t_min, self.tie_break) == (
            other.K, other.N, other.L, other.b, other.t_min, other.tie_break)


@dataclass(frozen=True)
class Evaluation:
    output: int
    hidden: np.ndarray = field(repr=False)
    fields: np.ndarray = field(repr=False)

    def __eq__(self, other):
        if not isinstance(other, Evaluation):
            return NotImplemented
        return (self.output == other.output
                and np.array_equal(self.hidden, other.hidden)
                and np.array_equal(self.fields, other.fields))


@dataclass(frozen=True)
class KeyMaterial:
    data: bytes
    nbits: int
    params_echo: tuple[int, int, int]

    @property
    def bits(self) -> str:
        return "".join(f"{byte:08b}" for byte in self.data)[: self.nbits]

    def fingerprint(self) -> str:
        """First 64 bits as hex."""
        return self.data[:8].hex()

    def __len__(self) -> int:
        return self.nbits


class Overlap(NamedTuple):
    per_unit: np.ndarray
    mean: float
    frac_equal: float


def _check_shape(weights: np.ndarray, x: np.ndarray) -> None:
    if weights.ndim != 2 or weights.shape != x.shape:
        raise ValueError(f"dimension mismatch: weights {weights.shape} vs input {x.shape}")


def init_weights(rng: np.random.Generator, params: TpmParams) -> np.ndarray:
    return rng.integers(-params.L, params.L + 1, size=params.shape, dtype=WEIGHT_DTYPE)


def evaluate(weights: np.ndarray, x: np.ndarray, role: Role = Role.A) -> Evaluation:
    _check_shape(weights, x)
    fields = np.einsum("kj,kj->k", weights.astype(np.int64), x.astype(np.int64))
    hidden = np.where(fields > 0, 1, np.where(fields < 0, -1, Role(role).zero_sign)).astype(np.int8)
    output = int(np.prod(hidden, dtype=np.int64))
    return Evaluation(output, hidden, fields)


def clip_weight(w: int, L: int) -> int:
    if abs(w) > L:
        return L if w > 0 else -L
    return w


def hebbian_update(weights: np.ndarray, x: np.ndarray, ev: Evaluation, peer_output: int, L: int) -> np.ndarray:
    """Learn on agreement: rows whose hidden sign equals the output move by output*x, then clip."""
    _check_shape(weights, x)
    if ev.output != peer_output:
        return weights.copy()
    new = weights.copy()
    rows = ev.hidden == ev.output
    new[rows] = np.clip(new[rows] + ev.output * x[rows], -L, L)
    return new


def bits_per_weight(L: int) -> int:
    return (2 * L).bit_length()


def extract_key(weights: np.ndarray, L: int) -> KeyMaterial:
    """Offset-binary serialization, unit k outer, input j inner, MSB first."""
    width = bits_per_weight(L)
    shifted = (weights.astype(np.int64) + L).ravel()
    if shifted.min(initial=0) < 0 or shifted.max(initial=0) > 2 * L:
        raise ValueError("weights out of [-L, L]")
    planes = (shifted[:, None] >> np.arange(width - 1, -1, -1)) & 1
    bitvec = planes.astype(np.uint8).ravel()
    K, N = weights.shape
    return KeyMaterial(np.packbits(bitvec).tobytes(), int(bitvec.size), (K, N, L))


def overlap(a: np.ndarray, b: np.ndarray) -> Overlap:
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    a = a.astype(np.float64)
    b = b.astype(np.float64)
    dots = np.einsum("kj,kj->k", a, b)
    norms = np.sqrt(np.einsum("kj,kj->k", a, a) * np.einsum("kj,kj->k", b, b))
    per_unit = np.divide(dots, norms, out=np.zeros_like(dots), where=norms > 0)
    return Overlap(per_unit, float(per_unit.mean()), float(np.mean(a == b)))
