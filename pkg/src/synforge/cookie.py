"""SYN-cookie encoding, validation, and exhaustive enumeration.

A cookie is a server-chosen initial sequence number whose bit fields carry
a coarse timer, the index of the negotiated MSS, and a keyed hash of the
connection four-tuple:

    | timer (high) | mss index | keyed hash (low) |

Field widths are configurable; shrinking the hash width makes exhaustive
enumeration and Monte Carlo experiments affordable while preserving the
structure of the full-width cookie.
"""

from __future__ import annotations

import hashlib
import struct
from bisect import bisect_right
from dataclasses import dataclass, field
from functools import lru_cache
from typing import NamedTuple

# One counter tick every 64 simulated seconds.
COUNTER_PERIOD_US = 64_000_000

# Accepted counter deltas: a cookie minted at counter t validates while the
# current counter is t or t+1.
DEFAULT_WINDOW: tuple[int, ...] = (0, 1)
HISTORICAL_WINDOW: tuple[int, ...] = (0, 1, 2, 3)

# validate_cookie failure reasons
STALE_TIMER = "stale-timer"
BAD_MSS = "bad-mss"
BAD_HASH = "bad-hash"
OUT_OF_RANGE = "out-of-range"


def counter_at(now_us: int) -> int:
    """Coarse cookie counter for a simulation timestamp in microseconds."""
    return now_us // COUNTER_PERIOD_US


class FourTuple(NamedTuple):
    """Connection identity as seen by the server."""

    client_addr: int
    client_port: int
    server_addr: int
    server_port: int


@dataclass(frozen=True)
class CookieLayout:
    """Bit widths of the three cookie fields, high to low.

    Derived masks and shifts are precomputed; they sit on the validation
    hot path.
    """

    timer_bits: int = 5
    mss_bits: int = 3
    hash_bits: int = 24
    total_bits: int = field(init=False, repr=False, compare=False)
    timer_shift: int = field(init=False, repr=False, compare=False)
    timer_mask: int = field(init=False, repr=False, compare=False)
    mss_mask: int = field(init=False, repr=False, compare=False)
    hash_mask: int = field(init=False, repr=False, compare=False)
    space: int = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        if self.timer_bits < 1:
            raise ValueError("timer_bits must be >= 1")
        if self.mss_bits < 1:
            raise ValueError("mss_bits must be >= 1")
        if self.hash_bits < 4:
            raise ValueError("hash_bits must be >= 4")
        total = self.timer_bits + self.mss_bits + self.hash_bits
        if total > 32:
            raise ValueError("cookie wider than 32 bits")
        write = object.__setattr__
        write(self, "total_bits", total)
        write(self, "timer_shift", self.mss_bits + self.hash_bits)
        write(self, "timer_mask", (1 << self.timer_bits) - 1)
        write(self, "mss_mask", (1 << self.mss_bits) - 1)
        write(self, "hash_mask", (1 << self.hash_bits) - 1)
        write(self, "space", 1 << total)

    def split(self, isn: int) -> tuple[int, int, int]:
        """Decompose an ISN into (timer_field, mss_field, hash_field)."""
        return (
            (isn >> self.timer_shift) & self.timer_mask,
            (isn >> self.hash_bits) & self.mss_mask,
            isn & self.hash_mask,
        )


@dataclass(frozen=True)
class MssTable:
    """Ordered MSS values the server is willing to round-trip."""

    values: tuple[int, ...] = (536, 1300, 1440, 1460)

    def __post_init__(self) -> None:
        if not self.values:
            raise ValueError("MSS table must not be empty")
        if any(v < 1 for v in self.values):
            raise ValueError("MSS values must be positive")
        if any(a >= b for a, b in zip(self.values, self.values[1:])):
            raise ValueError("MSS values must be strictly increasing")

    def __len__(self) -> int:
        return len(self.values)


DEFAULT_MSS_TABLE = MssTable()
HISTORICAL_MSS_TABLE = MssTable((536, 1024, 1220, 1300, 1400, 1440, 1460, 4096))


@dataclass(frozen=True)
class SecretKey:
    """128-bit server secret. Never serialized into traces or logs."""

    material: bytes

    def __post_init__(self) -> None:
        if len(self.material) != 16:
            raise ValueError("key must be 16 bytes")

    def __repr__(self) -> str:  # keep key bytes out of any output
        return "SecretKey(<redacted>)"

    @classmethod
    def from_seed(cls, seed: int) -> "SecretKey":
        digest = hashlib.blake2b(
            seed.to_bytes(8, "big", signed=True), digest_size=16, person=b"synforge-key"
        ).digest()
        return cls(digest)


class Validation(NamedTuple):
    """Outcome of validate_cookie: Valid carries the decoded MSS."""

    ok: bool
    mss: int | None = None
    reason: str | None = None


def mss_index_of(client_mss: int, table: MssTable = DEFAULT_MSS_TABLE) -> int:
    """Index of the largest table value <= client_mss, clamped to 0 below the table."""
    if client_mss < 1:
        raise ValueError("client MSS must be >= 1")
    return max(0, bisect_right(table.values, client_mss) - 1)


_TUPLE_PACK = struct.Struct("!IHIHQ")


@lru_cache(maxsize=1 << 16)
def secret_hash(key: SecretKey, tuple_: FourTuple, t: int, layout: CookieLayout) -> int:
    """Keyed hash of the connection identity and counter, truncated to the hash width."""
    msg = _TUPLE_PACK.pack(*tuple_, t)
    digest = hashlib.blake2b(msg, digest_size=8, key=key.material).digest()
    return int.from_bytes(digest, "big") & layout.hash_mask


def encode_cookie(
    tuple_: FourTuple,
    t: int,
    mss_index: int,
    key: SecretKey,
    layout: CookieLayout = CookieLayout(),
    table: MssTable = DEFAULT_MSS_TABLE,
) -> int:
    """Mint the ISN for a SYN-ACK: timer and MSS fields plus the keyed hash."""
    if not 0 <= mss_index < len(table):
        raise ValueError(f"mss_index {mss_index} outside table of size {len(table)}")
    return (
        ((t & layout.timer_mask) << layout.timer_shift)
        | (mss_index << layout.hash_bits)
        | secret_hash(key, tuple_, t, layout)
    )


def validate_cookie(
    isn: int,
    tuple_: FourTuple,
    now: int,
    key: SecretKey,
    layout: CookieLayout = CookieLayout(),
    table: MssTable = DEFAULT_MSS_TABLE,
    window: tuple[int, ...] = DEFAULT_WINDOW,
) -> Validation:
    """Check a returned ISN against the current counter without stored state.

    The mint-time counter is reconstructed as the largest t' <= now whose low
    timer bits match the cookie's timer field; the cookie is accepted when
    now - t' falls inside the window, the MSS field indexes the table, and the
    hash field matches the keyed hash for t'.
    """
    if isn >> layout.total_bits:
        return Validation(False, None, OUT_OF_RANGE)
    timer_field = (isn >> layout.timer_shift) & layout.timer_mask
    delta = (now - timer_field) & layout.timer_mask
    minted = now - delta
    if delta not in window or minted < 0:
        return Validation(False, None, STALE_TIMER)
    mss_field = (isn >> layout.hash_bits) & layout.mss_mask
    if mss_field >= len(table):
        return Validation(False, None, BAD_MSS)
    if (isn & layout.hash_mask) != secret_hash(key, tuple_, minted, layout):
        return Validation(False, None, BAD_HASH)
    return Validation(True, table.values[mss_field], None)


def valid_cookie_set(
    tuple_: FourTuple,
    now: int,
    key: SecretKey,
    layout: CookieLayout = CookieLayout(),
    table: MssTable = DEFAULT_MSS_TABLE,
    window: tuple[int, ...] = DEFAULT_WINDOW,
) -> set[int]:
    """Every ISN the server would accept right now.

    This is the test oracle; attack code never calls it.
    """
    accepted: set[int] = set()
    for delta in window:
        minted = now - delta
        if minted < 0:
            continue
        for idx in range(len(table)):
            accepted.add(encode_cookie(tuple_, minted, idx, key, layout, table))
    return accepted
