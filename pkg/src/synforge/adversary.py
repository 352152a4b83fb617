"""SYN flood and blind ACK-guess generation.

The attacker sees only public configuration (field widths, MSS table size)
and its own traffic; nothing in this module reads the server's secret key,
its state, or the valid-cookie oracle.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass
from random import Random
from typing import Collection, NamedTuple

from .cookie import CookieLayout, FourTuple
from .errors import ConfigError, SearchExhausted
from .segment import ACK, MASK32, SYN, Segment

# Odd multiplicative constant; any odd stride walks the full cycle of a
# power-of-two space without repeats.
DEFAULT_STRIDE = 2654435761

# Attacker-chosen client sequence number for forged ACKs; the server does not
# check it, pinning it keeps traces reproducible.
ATTACKER_SEQ = 1000

DEFAULT_PAYLOAD = b"GET /secret HTTP/1.1\r\n\r\n"

FLOOD_MSS = 1460


@dataclass(frozen=True)
class StrideSearch:
    """Walk the ISN space by a fixed odd increment."""

    start: int = 0
    stride: int = DEFAULT_STRIDE

    def __post_init__(self) -> None:
        if self.stride % 2 == 0:
            raise ConfigError("attack.stride: must be odd for full-cycle coverage")


@dataclass(frozen=True)
class StructuredSearch:
    """Enumerate only cookies whose timer and MSS fields are currently valid.

    counter_estimate None means the driver must learn it from a probe
    connection before guessing starts.
    """

    counter_estimate: int | None = None
    prefix_order: tuple[tuple[int, int], ...] | None = None


@dataclass(frozen=True)
class UniformRandom:
    """Independent uniform draws over the cookie space.

    seed None is filled in from the scenario's master seed at run time.
    """

    seed: int | None = None


Strategy = StrideSearch | StructuredSearch | UniformRandom


def strategy_name(strategy: Strategy) -> str:
    return {StrideSearch: "stride", StructuredSearch: "structured",
            UniformRandom: "random"}[type(strategy)]


@dataclass(frozen=True)
class AttackPlan:
    spoofed: FourTuple
    strategy: Strategy
    rate: float = 20000.0
    payload: bytes = DEFAULT_PAYLOAD

    def __post_init__(self) -> None:
        if self.rate <= 0:
            raise ConfigError("attack.rate: must be positive")


class GuessState(NamedTuple):
    issued: int = 0


def structured_prefixes(
    estimate: int, layout: CookieLayout, table_len: int
) -> tuple[tuple[int, int], ...]:
    """(timer_field, mss_field) pairs worth guessing: current and previous tick."""
    tmask = layout.timer_mask
    return tuple(
        (t & tmask, m) for t in (estimate, estimate - 1) for m in range(table_len)
    )


def resolve_strategy(strategy: Strategy, layout: CookieLayout, table_len: int) -> Strategy:
    """Fill in derived fields and validate against the public layout."""
    if isinstance(strategy, StructuredSearch):
        if strategy.counter_estimate is None and strategy.prefix_order is None:
            raise ConfigError("attack.counter_estimate: unresolved (send a probe first)")
        order = strategy.prefix_order
        if order is None:
            order = structured_prefixes(strategy.counter_estimate, layout, table_len)
        for tf, mf in order:
            if not 0 <= tf <= layout.timer_mask:
                raise ConfigError("attack.prefix_order: timer field out of range")
            if not 0 <= mf < table_len:
                raise ConfigError("attack.prefix_order: mss field outside table")
        return StructuredSearch(strategy.counter_estimate, order)
    return strategy


def guess_value(plan: AttackPlan, issued: int, layout: CookieLayout, table_len: int) -> int:
    """The issued-th ISN guess under the plan's strategy."""
    s = plan.strategy
    if type(s) is StrideSearch:
        return (s.start + issued * s.stride) & (layout.space - 1)
    if type(s) is UniformRandom:
        if s.seed is None:
            raise ConfigError("attack.seed: unresolved uniform-random seed")
        return _uniform_draw(s.seed, issued, layout.total_bits)
    order = s.prefix_order
    if order is None:
        if s.counter_estimate is None:
            raise ConfigError("attack.counter_estimate: unresolved (send a probe first)")
        order = structured_prefixes(s.counter_estimate, layout, table_len)
    prefix_idx, suffix = divmod(issued, 1 << layout.hash_bits)
    if prefix_idx >= len(order):
        raise SearchExhausted(f"all {len(order)} prefixes enumerated")
    timer_field, mss_field = order[prefix_idx]
    return (timer_field << layout.timer_shift) | (mss_field << layout.hash_bits) | suffix


_DRAW_PACK = struct.Struct("!QQ")


def _uniform_draw(seed: int, issued: int, bits: int) -> int:
    """Counter-mode keyless hash draw: slice number `issued` of width `bits`.

    One 64-bit digest yields 64 // bits consecutive draws, top-aligned.
    """
    per_digest = 64 // bits
    block, slot = divmod(issued, per_digest)
    digest = hashlib.blake2b(
        _DRAW_PACK.pack(seed & 0xFFFFFFFFFFFFFFFF, block), digest_size=8
    ).digest()
    word = int.from_bytes(digest, "big")
    return (word >> (64 - bits * (slot + 1))) & ((1 << bits) - 1)


def guess_stream_fn(plan: AttackPlan, layout: CookieLayout, table_len: int):
    """Specialized issued -> guess closure; agrees with guess_value everywhere.

    Used by the simulation loop to keep per-guess overhead low.
    """
    s = plan.strategy
    if type(s) is StrideSearch:
        start, stride, mask = s.start, s.stride, layout.space - 1
        return lambda i: (start + i * stride) & mask
    if type(s) is UniformRandom:
        if s.seed is None:
            raise ConfigError("attack.seed: unresolved uniform-random seed")
        seed, bits = s.seed & 0xFFFFFFFFFFFFFFFF, layout.total_bits
        per_digest = 64 // bits
        value_mask = (1 << bits) - 1
        pack = _DRAW_PACK.pack
        blake2b = hashlib.blake2b
        state = [-1, 0]  # cached digest block

        def uniform(i: int) -> int:
            block, slot = divmod(i, per_digest)
            if block != state[0]:
                state[0] = block
                state[1] = int.from_bytes(
                    blake2b(pack(seed, block), digest_size=8).digest(), "big"
                )
            return (state[1] >> (64 - bits * (slot + 1))) & value_mask

        return uniform
    order = s.prefix_order
    if order is None:
        if s.counter_estimate is None:
            raise ConfigError("attack.counter_estimate: unresolved (send a probe first)")
        order = structured_prefixes(s.counter_estimate, layout, table_len)
    prefixes = tuple(
        (tf << layout.timer_shift) | (mf << layout.hash_bits) for tf, mf in order
    )
    suffixes = 1 << layout.hash_bits

    def structured(i: int) -> int:
        block, suffix = divmod(i, suffixes)
        if block >= len(prefixes):
            raise SearchExhausted(f"all {len(prefixes)} prefixes enumerated")
        return prefixes[block] | suffix

    return structured


def next_guess(
    plan: AttackPlan, gs: GuessState, layout: CookieLayout, table_len: int
) -> tuple[GuessState, Segment]:
    """One forged ACK from the spoofed tuple; ack carries guess + 1."""
    value = guess_value(plan, gs.issued, layout, table_len)
    spoofed = plan.spoofed
    seg = Segment(
        spoofed.client_addr, spoofed.client_port,
        spoofed.server_addr, spoofed.server_port,
        ACK, seq=ATTACKER_SEQ, ack=(value + 1) & MASK32, payload=plan.payload,
    )
    return GuessState(gs.issued + 1), seg


def flood_batch(
    n: int,
    rng: Random,
    server_addr: int,
    server_port: int,
    forbidden_pairs: Collection[tuple[int, int]] = (),
    reserved_addrs: Collection[int] = (),
    seen: set[tuple[int, int]] | None = None,
    mss: int = FLOOD_MSS,
) -> list[Segment]:
    """n SYNs from distinct spoofed sources, never the victim's identity.

    Passing a persistent `seen` set keeps sources distinct across batches.
    """
    if n < 1:
        raise ValueError("flood batch size must be >= 1")
    if seen is None:
        seen = set()
    forbidden = set(forbidden_pairs)
    out: list[Segment] = []
    while len(out) < n:
        addr = rng.getrandbits(32)
        port = rng.randrange(1024, 65536)
        pair = (addr, port)
        if pair in seen or pair in forbidden or addr in reserved_addrs:
            continue
        seen.add(pair)
        out.append(Segment(addr, port, server_addr, server_port, SYN,
                           seq=rng.getrandbits(32), mss_option=mss))
    return out


class SinkBehavior:
    """Host that silently drops every inbound segment."""

    def __init__(self) -> None:
        self.received = 0

    def on_deliver(self, seg: Segment, now: int) -> list[Segment]:
        self.received += 1
        return []


def victim_sink_policy() -> SinkBehavior:
    """Behavior installed on the spoofed victim: drop everything, emit nothing."""
    return SinkBehavior()
