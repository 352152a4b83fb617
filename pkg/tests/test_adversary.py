import inspect
import random

import pytest

import synforge.adversary as adversary
from synforge.adversary import (
    ATTACKER_SEQ,
    DEFAULT_STRIDE,
    AttackPlan,
    GuessState,
    StrideSearch,
    StructuredSearch,
    UniformRandom,
    flood_batch,
    guess_value,
    next_guess,
    resolve_strategy,
    structured_prefixes,
    victim_sink_policy,
)
from synforge.cookie import CookieLayout, FourTuple, SecretKey, valid_cookie_set
from synforge.errors import ConfigError, SearchExhausted
from synforge.segment import ACK, SYN, Segment

SPOOFED = FourTuple(0x0A000007, 7777, 0x0A000001, 80)
H8 = CookieLayout(hash_bits=8)


def drain_guesses(plan, layout, table_len, n):
    gs = GuessState()
    out = []
    for _ in range(n):
        gs, seg = next_guess(plan, gs, layout, table_len)
        out.append(seg)
    return gs, out


class TestFloodBatch:
    def test_distinct_source_pairs(self):
        batch = flood_batch(500, random.Random(3), 0x0A000001, 80)
        pairs = {(s.src_addr, s.src_port) for s in batch}
        assert len(pairs) == 500

    def test_same_seed_same_batch(self):
        a = flood_batch(50, random.Random(9), 0x0A000001, 80)
        b = flood_batch(50, random.Random(9), 0x0A000001, 80)
        assert a == b

    def test_never_reuses_victim_identity(self):
        forbidden = ((0x0A000007, 7777),)
        batch = flood_batch(2000, random.Random(1), 0x0A000001, 80, forbidden_pairs=forbidden)
        assert all((s.src_addr, s.src_port) != (0x0A000007, 7777) for s in batch)

    def test_reserved_addresses_avoided(self):
        reserved = (0x0A000001, 0x0A000002)
        batch = flood_batch(1000, random.Random(2), 0x0A000001, 80, reserved_addrs=reserved)
        assert all(s.src_addr not in reserved for s in batch)

    def test_all_syns_target_server(self):
        batch = flood_batch(20, random.Random(4), 0x0A000001, 80)
        for s in batch:
            assert s.flags == SYN
            assert (s.dst_addr, s.dst_port) == (0x0A000001, 80)
            assert s.mss_option is not None

    def test_persistent_seen_set_spans_batches(self):
        rng = random.Random(8)
        seen = set()
        a = flood_batch(300, rng, 0x0A000001, 80, seen=seen)
        b = flood_batch(300, rng, 0x0A000001, 80, seen=seen)
        pairs = {(s.src_addr, s.src_port) for s in a + b}
        assert len(pairs) == 600

    def test_rejects_nonpositive_n(self):
        with pytest.raises(ValueError):
            flood_batch(0, random.Random(0), 1, 80)


class TestStrideSearch:
    def test_first_three_guesses_and_acks(self):
        plan = AttackPlan(SPOOFED, StrideSearch(start=0, stride=3))
        _, segs = drain_guesses(plan, CookieLayout(), 4, 3)
        assert [s.ack for s in segs] == [1, 4, 7]
        assert all(s.flags == ACK for s in segs)
        assert all(s.seq == ATTACKER_SEQ for s in segs)

    def test_odd_stride_covers_space_without_repeats(self):
        layout = CookieLayout(timer_bits=2, mss_bits=2, hash_bits=4)  # 256 values
        plan = AttackPlan(SPOOFED, StrideSearch(start=17, stride=DEFAULT_STRIDE))
        values = [guess_value(plan, i, layout, 4) for i in range(layout.space)]
        assert len(set(values)) == layout.space

    def test_even_stride_rejected(self):
        with pytest.raises(ConfigError):
            StrideSearch(stride=2)

    def test_wraps_modulo_space(self):
        layout = CookieLayout(timer_bits=2, mss_bits=2, hash_bits=4)
        plan = AttackPlan(SPOOFED, StrideSearch(start=250, stride=9))
        assert guess_value(plan, 1, layout, 4) == (250 + 9) % 256
        assert guess_value(plan, 10, layout, 4) == (250 + 90) % 256


class TestStructuredSearch:
    def test_exhausts_after_eight_blocks(self):
        plan = AttackPlan(SPOOFED, StructuredSearch(counter_estimate=5))
        gs, segs = drain_guesses(plan, H8, 4, 8 * 256)
        assert len(segs) == 2048
        with pytest.raises(SearchExhausted):
            next_guess(plan, gs, H8, 4)

    def test_guesses_are_distinct(self):
        plan = AttackPlan(SPOOFED, StructuredSearch(counter_estimate=5))
        values = [guess_value(plan, i, H8, 4) for i in range(2048)]
        assert len(set(values)) == 2048

    def test_prefixes_cover_current_and_previous_tick(self):
        order = structured_prefixes(5, H8, 4)
        assert order == tuple((t, m) for t in (5, 4) for m in range(4))

    def test_prefix_wraps_at_zero_estimate(self):
        order = structured_prefixes(0, H8, 4)
        assert order[:4] == ((0, 0), (0, 1), (0, 2), (0, 3))
        # estimate - 1 wraps to the top of the 5-bit timer field
        assert order[4:] == ((31, 0), (31, 1), (31, 2), (31, 3))

    def test_superset_of_valid_cookie_set(self):
        key = SecretKey(b"adversary-orac1e")
        now = 9
        plan = AttackPlan(SPOOFED, StructuredSearch(counter_estimate=now))
        guesses = {guess_value(plan, i, H8, 4) for i in range(8 * 256)}
        oracle = valid_cookie_set(SPOOFED, now, key, H8)
        assert oracle <= guesses

    def test_unresolved_estimate_rejected(self):
        plan = AttackPlan(SPOOFED, StructuredSearch())
        with pytest.raises(ConfigError):
            next_guess(plan, GuessState(), H8, 4)

    def test_resolve_fills_prefix_order(self):
        resolved = resolve_strategy(StructuredSearch(counter_estimate=3), H8, 4)
        assert resolved.prefix_order is not None
        assert len(resolved.prefix_order) == 8

    def test_resolve_rejects_bad_prefixes(self):
        with pytest.raises(ConfigError):
            resolve_strategy(StructuredSearch(3, ((0, 9),)), H8, 4)


class TestUniformRandom:
    def test_draws_stay_inside_space(self):
        plan = AttackPlan(SPOOFED, UniformRandom(seed=12))
        layout = CookieLayout(hash_bits=10)
        for i in range(5000):
            assert 0 <= guess_value(plan, i, layout, 4) < layout.space

    def test_deterministic_per_seed(self):
        plan = AttackPlan(SPOOFED, UniformRandom(seed=12))
        a = [guess_value(plan, i, H8, 4) for i in range(100)]
        b = [guess_value(plan, i, H8, 4) for i in range(100)]
        assert a == b
        other = AttackPlan(SPOOFED, UniformRandom(seed=13))
        assert a != [guess_value(other, i, H8, 4) for i in range(100)]

    def test_roughly_uniform(self):
        plan = AttackPlan(SPOOFED, UniformRandom(seed=77))
        layout = CookieLayout(timer_bits=2, mss_bits=2, hash_bits=4)
        n = 64 * 256
        counts = [0] * layout.space
        for i in range(n):
            counts[guess_value(plan, i, layout, 4)] += 1
        # 3-sigma binomial band per cell around n/256
        mean = n / layout.space
        sigma = (n * (1 / layout.space) * (1 - 1 / layout.space)) ** 0.5
        assert all(abs(c - mean) < 5 * sigma for c in counts)

    def test_unresolved_seed_rejected(self):
        plan = AttackPlan(SPOOFED, UniformRandom())
        with pytest.raises(ConfigError):
            guess_value(plan, 0, H8, 4)


class TestPlanAndPayload:
    def test_guess_carries_plan_payload(self):
        plan = AttackPlan(SPOOFED, StrideSearch(), payload=b"GET /x HTTP/1.1\r\n\r\n")
        _, [seg] = drain_guesses(plan, CookieLayout(), 4, 1)
        assert seg.payload == b"GET /x HTTP/1.1\r\n\r\n"
        assert (seg.src_addr, seg.src_port) == (SPOOFED.client_addr, SPOOFED.client_port)

    def test_rate_must_be_positive(self):
        with pytest.raises(ConfigError):
            AttackPlan(SPOOFED, StrideSearch(), rate=0)

    def test_issued_counter_increments(self):
        plan = AttackPlan(SPOOFED, StrideSearch())
        gs, _ = drain_guesses(plan, CookieLayout(), 4, 10)
        assert gs.issued == 10


class TestVictimSink:
    def test_drops_everything_emits_nothing(self):
        sink = victim_sink_policy()
        synack = Segment(0x0A000001, 80, 0x0A000007, 7777, SYN | ACK, seq=1, ack=2,
                         mss_option=1460)
        rst = Segment(0x0A000001, 80, 0x0A000007, 7777, 0x04, seq=1)
        assert sink.on_deliver(synack, 0) == []
        assert sink.on_deliver(rst, 1) == []
        for i in range(10_000):
            assert sink.on_deliver(rst, i) == []
        assert sink.received == 10_002


class TestStreamSpecialization:
    @pytest.mark.parametrize("strategy", [
        StrideSearch(start=5, stride=2654435761),
        UniformRandom(seed=99),
        StructuredSearch(counter_estimate=7),
    ])
    def test_stream_fn_matches_guess_value(self, strategy):
        from synforge.adversary import guess_stream_fn

        plan = AttackPlan(SPOOFED, strategy)
        layout = CookieLayout(hash_bits=10)
        fn = guess_stream_fn(plan, layout, 4)
        for i in range(3000):
            assert fn(i) == guess_value(plan, i, layout, 4)

    def test_stream_fn_raises_exhausted_like_guess_value(self):
        from synforge.adversary import guess_stream_fn

        plan = AttackPlan(SPOOFED, StructuredSearch(counter_estimate=7))
        fn = guess_stream_fn(plan, H8, 4)
        with pytest.raises(SearchExhausted):
            fn(8 * 256)
        with pytest.raises(SearchExhausted):
            guess_value(plan, 8 * 256, H8, 4)


class TestOracleIsolation:
    def test_module_never_references_the_oracle_or_key(self):
        source = inspect.getsource(adversary)
        for forbidden in ("valid_cookie_set", "secret_hash", "validate_cookie",
                          "encode_cookie", "SecretKey"):
            assert forbidden not in source, f"adversary module must not use {forbidden}"
