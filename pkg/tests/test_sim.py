import random

import pytest

from synforge.adversary import StrideSearch, StructuredSearch, UniformRandom
from synforge.cookie import CookieLayout
from synforge.endpoint import DefenseConfig, EndpointConfig
from synforge.errors import ConfigError
from synforge.segment import Segment, ip_to_int
from synforge.sim import (
    DELIVER_OK,
    DROP_LOSS,
    DROP_UNKNOWN_HOST,
    ScenarioConfig,
    SimClock,
    Simulation,
    Topology,
    plan_delivery,
    run,
)

H8 = CookieLayout(hash_bits=8)
H10 = CookieLayout(hash_bits=10)


def scenario(**overrides):
    endpoint_overrides = overrides.pop("endpoint_overrides", {})
    endpoint = EndpointConfig(backlog_max=4, **endpoint_overrides)
    defaults = dict(
        seed=1,
        endpoint=endpoint,
        strategy=UniformRandom(),
        rate=100_000.0,
        freeze_timer=True,
        trace=True,
    )
    defaults.update(overrides)
    return ScenarioConfig(**defaults)


def parse_trace(text):
    events = []
    for line in text.splitlines():
        time_us, seq, kind, detail = line.split(" ", 3)
        events.append((int(time_us), int(seq), kind, detail))
    return events


class TestClock:
    def test_frozen_counter_never_advances(self):
        clock = SimClock(0, frozen_counter=1)
        clock.advance_to(10 * 60 * 1_000_000)
        assert clock.counter() == 1

    def test_unfrozen_counter_advances_by_two_over_128s(self):
        clock = SimClock(0)
        before = clock.counter()
        clock.advance_to(128_000_000)
        assert clock.counter() == before + 2

    def test_monotonic(self):
        clock = SimClock(100)
        with pytest.raises(ValueError):
            clock.advance_to(99)

    def test_freeze_captures_current_counter(self):
        clock = SimClock(130_000_000)
        clock.freeze()
        clock.advance_to(10**12)
        assert clock.counter() == 2
        clock.unfreeze()
        assert clock.counter() == 10**12 // 64_000_000


class TestPlanDelivery:
    def test_known_host_delivers_after_latency(self):
        topo = Topology({5: object()}, latency_us=200)
        seg = Segment(1, 1, 5, 80, 0x02, mss_option=536)
        assert plan_delivery(topo, seg, 1000, random.Random(0)) == (DELIVER_OK, 1200)

    def test_unknown_host_drops(self):
        topo = Topology({5: object()}, latency_us=200)
        seg = Segment(1, 1, 6, 80, 0x02, mss_option=536)
        outcome, _ = plan_delivery(topo, seg, 1000, random.Random(0))
        assert outcome == DROP_UNKNOWN_HOST

    def test_loss_rate_one_always_drops(self):
        topo = Topology({5: object()}, loss_rate=1.0)
        seg = Segment(1, 1, 5, 80, 0x10)
        for i in range(100):
            outcome, _ = plan_delivery(topo, seg, i, random.Random(i))
            assert outcome == DROP_LOSS

    def test_loss_half_within_three_sigma(self):
        topo = Topology({5: object()}, loss_rate=0.5)
        seg = Segment(1, 1, 5, 80, 0x10)
        rng = random.Random(123)
        n = 10_000
        delivered = sum(
            plan_delivery(topo, seg, 0, rng)[0] == DELIVER_OK for _ in range(n)
        )
        sigma = (n * 0.25) ** 0.5
        assert abs(delivered - n * 0.5) <= 3 * sigma


class TestDeterminism:
    def test_same_seed_byte_identical_outputs(self):
        a = run(scenario(endpoint_overrides=dict(layout=H8)))
        b = run(scenario(endpoint_overrides=dict(layout=H8)))
        assert a.trace_text == b.trace_text
        assert a.to_text() == b.to_text()
        assert a.log_snapshot == b.log_snapshot

    def test_different_seed_different_outcome(self):
        a = run(scenario(endpoint_overrides=dict(layout=H8)))
        b = run(scenario(seed=2, endpoint_overrides=dict(layout=H8)))
        assert a.trace_text != b.trace_text


class TestTraceInvariants:
    def test_conservation_every_send_terminates(self):
        report = run(scenario(endpoint_overrides=dict(layout=H8)))
        events = parse_trace(report.trace_text)
        sends = sum(1 for e in events if e[2] == "Send")
        delivers = sum(1 for e in events if e[2] == "Deliver")
        drops = sum(1 for e in events if e[2] == "Drop")
        assert sends == delivers + drops
        assert sends == report.packets_total

    def test_known_hosts_only_scenario_has_no_drops(self):
        # no flood and no guesses: just the legitimate client handshake
        cfg = scenario(
            flood_burst=0, flood_rate=0, guess_budget=0,
            client_connect_at_us=1000, client_addr=ip_to_int("10.0.0.9"),
        )
        report = run(cfg)
        events = parse_trace(report.trace_text)
        sends = [e for e in events if e[2] == "Send"]
        delivers = [e for e in events if e[2] == "Deliver"]
        assert len(sends) > 0
        assert len(sends) == len(delivers)

    def test_causality_deliver_lags_send_by_latency(self):
        cfg = scenario(
            flood_burst=0, flood_rate=0, guess_budget=0,
            client_connect_at_us=1000, client_addr=ip_to_int("10.0.0.9"),
            latency_us=350,
        )
        report = run(cfg)
        events = parse_trace(report.trace_text)
        sends = {}
        for t, _, kind, detail in events:
            if kind == "Send":
                sends.setdefault(detail, []).append(t)
        for t, _, kind, detail in events:
            if kind == "Deliver":
                assert t - 350 in sends[detail]

    def test_trace_times_monotone(self):
        report = run(scenario(endpoint_overrides=dict(layout=H8)))
        times = [e[0] for e in parse_trace(report.trace_text)]
        assert times == sorted(times)


class TestAttackRuns:
    def test_uniform_random_forgery_found_h8(self):
        report = run(scenario(endpoint_overrides=dict(layout=H8)))
        assert report.stop_reason == "first-forgery"
        assert len(report.forgeries) >= 1
        assert report.first_forgery_time_us == report.forgeries[0][0]
        assert "10.0.0.7" in report.log_snapshot

    def test_structured_bounded_by_eight_blocks(self):
        cfg = scenario(
            strategy=StructuredSearch(counter_estimate=1),
            endpoint_overrides=dict(layout=H8),
        )
        report = run(cfg)
        assert report.stop_reason == "first-forgery"
        assert report.guesses_sent <= 8 * 256
        assert "10.0.0.7" in report.log_snapshot

    def test_probe_learns_counter_estimate(self):
        cfg = scenario(
            strategy=StructuredSearch(),  # no estimate: attacker probes
            endpoint_overrides=dict(layout=H8),
        )
        report = run(cfg)
        assert report.stop_reason == "first-forgery"
        assert report.guesses_sent <= 8 * 256

    def test_victim_transmits_nothing(self):
        report = run(scenario(endpoint_overrides=dict(layout=H8)))
        assert report.victim_transmits == 0
        assert report.transmits_by_origin.get(ip_to_int("10.0.0.7"), 0) == 0

    def test_guess_budget_zero_is_empty_run(self):
        report = run(scenario(guess_budget=0, flood_rate=0))
        assert report.guesses_sent == 0
        assert report.forgeries == []
        assert report.stop_reason == "guess-budget"

    def test_guess_budget_exact(self):
        cfg = scenario(guess_budget=500, endpoint_overrides=dict(layout=CookieLayout()))
        report = run(cfg)
        assert report.guesses_sent == 500
        assert report.stop_reason == "guess-budget"

    def test_rate_contract_spacing(self):
        cfg = scenario(rate=10_000.0, guess_budget=50, stop_on_first_forgery=False)
        report = run(cfg)
        guess_sends = [
            t for t, _, kind, detail in parse_trace(report.trace_text)
            if kind == "Send" and detail.startswith("10.0.0.7:7777")
        ]
        assert len(guess_sends) == 50
        gaps = [b - a for a, b in zip(guess_sends, guess_sends[1:])]
        assert all(g >= 100 for g in gaps)  # 10k guesses/s: at least 100 us apart

    def test_forgeries_match_log_planted_events(self):
        cfg = scenario(
            stop_on_first_forgery=False, guess_budget=120_000, seed=8,
            endpoint_overrides=dict(layout=H8),
        )
        report = run(cfg)
        events = parse_trace(report.trace_text)
        planted = [
            e for e in events if e[2] == "LogPlanted" and e[3].startswith("10.0.0.7:7777")
        ]
        assert len(planted) == len(report.forgeries) >= 1
        assert [t for t, *_ in planted] == [t for t, _ in report.forgeries]

    def test_mode_change_engaged_in_trace(self):
        report = run(scenario(endpoint_overrides=dict(layout=H8)))
        events = parse_trace(report.trace_text)
        assert any(k == "ModeChange" and "normal->cookie" in d for _, _, k, d in events)

    def test_flood_fills_but_does_not_grow_backlog(self):
        cfg = scenario(endpoint_overrides=dict(layout=H8))
        sim = Simulation(cfg)
        report = sim.run()
        assert len(sim.endpoint.backlog) <= cfg.endpoint.backlog_max
        assert report.flood_syns_sent >= cfg.endpoint.backlog_max + 1

    def test_time_budget_stops_run(self):
        cfg = scenario(
            strategy=StrideSearch(start=0, stride=3),
            guess_budget=None, time_budget_us=50_000, stop_on_first_forgery=False,
            endpoint_overrides=dict(layout=CookieLayout()),
        )
        report = run(cfg)
        assert report.stop_reason == "time-budget"

    def test_stride_run_deterministic_guess_count(self):
        cfg = scenario(
            strategy=StrideSearch(start=7, stride=2654435761),
            endpoint_overrides=dict(layout=H8),
        )
        a = run(cfg)
        b = run(cfg)
        assert a.guesses_sent == b.guesses_sent
        assert a.stop_reason == "first-forgery"


class TestLegitimateClient:
    def test_client_handshake_logs_request(self):
        cfg = scenario(
            flood_burst=0, flood_rate=0, guess_budget=0,
            client_connect_at_us=1000, client_addr=ip_to_int("10.0.0.9"),
            client_request=b"GET /real HTTP/1.1\r\n\r\n",
        )
        report = run(cfg)
        assert "10.0.0.9" in report.log_snapshot
        assert '"GET /real HTTP/1.1"' in report.log_snapshot
        assert report.endpoint_counters["established"] == 1

    def test_client_lost_response_no_retransmit_in_cookie_mode(self):
        # forged ACK delivered, response segment lost: server emits nothing more
        cfg = scenario(
            strategy=StructuredSearch(counter_estimate=1),
            endpoint_overrides=dict(layout=H8),
        )
        report = run(cfg)
        forged_at = report.first_forgery_time_us
        events = parse_trace(report.trace_text)
        later_server_sends = [
            e for e in events
            if e[2] == "Send" and e[0] > forged_at and e[3].startswith("10.0.0.1:80 10.0.0.7:7777")
        ]
        # exactly the single response to the forged request, nothing after
        assert len(later_server_sends) <= 1


class TestDefenseCollateral:
    def test_legit_client_blocked_during_attack(self):
        cfg = scenario(
            strategy=StrideSearch(),
            rate=1_000_000.0,  # 1 us spacing trips the gate immediately
            guess_budget=10_000,
            stop_on_first_forgery=False,
            client_connect_at_us=5_000,
            endpoint_overrides=dict(layout=H8, defense=DefenseConfig(min_gap_us=100)),
        )
        sim = Simulation(cfg)
        report = sim.run()
        events = parse_trace(report.trace_text)
        blocked = [e for e in events if e[2] == "Blocked"]
        assert any(":55555" in d for _, _, _, d in blocked), "client SYN must be gated"
        assert sim._client_state.state == "syn-sent"  # never answered
        assert "10.0.0.7" not in report.log_snapshot
        assert report.forgeries == []


class TestConfigValidation:
    def test_duplicate_addresses_rejected(self):
        with pytest.raises(ConfigError):
            ScenarioConfig(server_addr=1, attacker_addr=1, victim_addr=2).validate()

    def test_bad_loss_rate_rejected(self):
        with pytest.raises(ConfigError):
            ScenarioConfig(loss_rate=1.5).validate()

    def test_bad_rate_rejected(self):
        with pytest.raises(ConfigError):
            ScenarioConfig(rate=0).validate()

    def test_unbounded_run_rejected(self):
        with pytest.raises(ConfigError):
            ScenarioConfig(stop_on_first_forgery=False).validate()

    def test_spoofed_port_collision_rejected(self):
        with pytest.raises(ConfigError):
            ScenarioConfig(spoofed_port=55555, client_port=55555).validate()

    def test_error_names_offending_field(self):
        with pytest.raises(ConfigError, match="loss_rate"):
            ScenarioConfig(loss_rate=-0.1).validate()


class TestLossyRuns:
    def test_loss_rate_one_no_delivers(self):
        cfg = scenario(loss_rate=1.0, guess_budget=100, stop_on_first_forgery=False)
        report = run(cfg)
        events = parse_trace(report.trace_text)
        assert sum(1 for e in events if e[2] == "Deliver") == 0
        assert sum(1 for e in events if e[2] == "Drop") == report.packets_total

    def test_structured_retries_after_loss(self):
        # heavy loss can swallow winning guesses; probe-refresh restarts the cursor
        cfg = scenario(
            strategy=StructuredSearch(counter_estimate=1),
            loss_rate=0.7,
            endpoint_overrides=dict(layout=H8),
            seed=5,
        )
        report = run(cfg)
        assert report.stop_reason == "first-forgery"
