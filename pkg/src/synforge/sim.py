"""Deterministic discrete-event simulation of the flood-then-guess attack.

A single heap-ordered event loop drives four hosts behind one gateway: the
server endpoint, the attacker (flood source, optional probe, guess stream),
the spoofed victim sink, and an optional scripted legitimate client. Equal
(config, seed) pairs produce byte-identical traces and reports.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field, replace
from random import Random
from typing import NamedTuple

from .adversary import (
    ATTACKER_SEQ,
    AttackPlan,
    GuessState,
    SinkBehavior,
    StructuredSearch,
    UniformRandom,
    flood_batch,
    guess_stream_fn,
    resolve_strategy,
    structured_prefixes,
    victim_sink_policy,
)
from .cookie import FourTuple, SecretKey, counter_at
from .endpoint import LOG_PLANTED, Endpoint, EndpointConfig, EndpointEvent
from .errors import ConfigError, SearchExhausted
from .segment import ACK, MASK32, SYN, Segment, int_to_ip, ip_to_int

US_PER_S = 1_000_000

# trace record kinds (endpoint event kinds are reused as-is)
SEND = "Send"
DELIVER = "Deliver"
DROP = "Drop"

# heap event codes
_EV_DELIVER = 0
_EV_TICK = 1
_EV_GUESS = 2
_EV_FLOOD = 3
_EV_PROBE = 4
_EV_PROBE_RETRY = 5
_EV_CLIENT = 6

_PROBE_RETRY_US = 500_000
_PROBE_MAX_TRIES = 100


@dataclass
class SimClock:
    """Monotonic microsecond clock with an optionally frozen cookie counter."""

    now_us: int = 0
    frozen_counter: int | None = None

    def advance_to(self, t_us: int) -> None:
        if t_us < self.now_us:
            raise ValueError("clock must not run backwards")
        self.now_us = t_us

    def counter(self) -> int:
        if self.frozen_counter is not None:
            return self.frozen_counter
        return counter_at(self.now_us)

    def freeze(self, counter: int | None = None) -> None:
        self.frozen_counter = self.counter() if counter is None else counter

    def unfreeze(self) -> None:
        self.frozen_counter = None


@dataclass
class Topology:
    """Hosts behind one gateway with uniform latency and i.i.d. loss."""

    hosts: dict[int, object]
    latency_us: int = 200
    loss_rate: float = 0.0


DELIVER_OK = "deliver"
DROP_LOSS = "loss"
DROP_UNKNOWN_HOST = "unknown-host"


def plan_delivery(topology: Topology, seg: Segment, now: int, rng: Random) -> tuple[str, int]:
    """Route one segment: (outcome, event_time). Loss is drawn from rng."""
    if topology.loss_rate and rng.random() < topology.loss_rate:
        return DROP_LOSS, now
    if seg.dst_addr not in topology.hosts:
        return DROP_UNKNOWN_HOST, now
    return DELIVER_OK, now + topology.latency_us


class TraceEvent(NamedTuple):
    time_us: int
    seq: int
    kind: str
    detail: str

    def line(self) -> str:
        return f"{self.time_us} {self.seq} {self.kind} {self.detail}"


@dataclass
class SimReport:
    stop_reason: str
    sim_end_us: int
    guesses_sent: int
    packets_total: int
    flood_syns_sent: int
    victim_transmits: int
    transmits_by_origin: dict[int, int]
    forgeries: list[tuple[int, int]]
    first_forgery_time_us: int | None
    search_restarts: int
    endpoint_counters: dict[str, int]
    log_snapshot: str
    trace_text: str | None = None

    def to_text(self) -> str:
        lines = [
            f"stop_reason={self.stop_reason}",
            f"sim_end_us={self.sim_end_us}",
            f"guesses_sent={self.guesses_sent}",
            f"packets_total={self.packets_total}",
            f"flood_syns_sent={self.flood_syns_sent}",
            f"victim_transmits={self.victim_transmits}",
            f"search_restarts={self.search_restarts}",
            "first_forgery_time_us="
            + ("none" if self.first_forgery_time_us is None else str(self.first_forgery_time_us)),
            f"forgeries_count={len(self.forgeries)}",
        ]
        for t, isn in self.forgeries:
            lines.append(f"forgery time_us={t} isn=0x{isn:08x}")
        for addr in sorted(self.transmits_by_origin):
            lines.append(f"transmits {int_to_ip(addr)}={self.transmits_by_origin[addr]}")
        for name, value in self.endpoint_counters.items():
            lines.append(f"counter {name}={value}")
        lines.append("access_log:")
        lines.append(self.log_snapshot)
        return "\n".join(lines)


@dataclass
class ScenarioConfig:
    """One attack run: endpoint, attacker plan, topology, and stop conditions."""

    seed: int = 1
    # hosts
    server_addr: int = ip_to_int("10.0.0.1")
    server_port: int = 80
    attacker_addr: int = ip_to_int("10.0.0.2")
    victim_addr: int = ip_to_int("10.0.0.7")
    spoofed_port: int = 7777
    # endpoint
    endpoint: EndpointConfig = field(default_factory=EndpointConfig)
    # attack
    strategy: object = field(default_factory=UniformRandom)
    rate: float = 20000.0
    payload: bytes = b"GET /secret HTTP/1.1\r\n\r\n"
    flood_burst: int | None = None  # None: backlog_max + 1
    flood_rate: float = 50.0  # sustained SYNs per second; 0 disables
    # topology
    latency_us: int = 200
    loss_rate: float = 0.0
    # clock
    freeze_timer: bool = False
    frozen_counter: int = 1
    # stop conditions
    stop_on_first_forgery: bool = True
    guess_budget: int | None = None
    time_budget_us: int | None = None
    # optional legitimate client (defaults to the victim's real address)
    client_connect_at_us: int | None = None
    client_addr: int | None = None
    client_port: int = 55555
    client_request: bytes = b"GET /real HTTP/1.1\r\n\r\n"
    # trace recording
    trace: bool = True

    def spoofed_tuple(self) -> FourTuple:
        return FourTuple(self.victim_addr, self.spoofed_port, self.server_addr, self.server_port)

    def validate(self) -> None:
        hosts = (self.server_addr, self.attacker_addr, self.victim_addr)
        if len(set(hosts)) != len(hosts):
            raise ConfigError("topology: server, attacker, and victim addresses must be distinct")
        client = self.client_addr if self.client_addr is not None else self.victim_addr
        if client in (self.server_addr, self.attacker_addr):
            raise ConfigError("topology.client_addr: must differ from server and attacker")
        if client == self.victim_addr and self.client_port == self.spoofed_port:
            raise ConfigError("topology.client_port: collides with the spoofed port")
        if self.rate <= 0:
            raise ConfigError("attack.rate: must be positive")
        if self.flood_rate < 0:
            raise ConfigError("attack.flood_rate: must be >= 0")
        if self.flood_burst is not None and self.flood_burst < 0:
            raise ConfigError("attack.flood_burst: must be >= 0")
        if self.latency_us < 0:
            raise ConfigError("topology.latency_us: must be >= 0")
        if not 0.0 <= self.loss_rate <= 1.0:
            raise ConfigError("topology.loss_rate: must be within [0, 1]")
        if self.guess_budget is not None and self.guess_budget < 0:
            raise ConfigError("run.guess_budget: must be >= 0")
        if self.time_budget_us is not None and self.time_budget_us <= 0:
            raise ConfigError("run.time_budget_us: must be positive")
        if self.frozen_counter < 0:
            raise ConfigError("run.frozen_counter: must be >= 0")
        if not self.stop_on_first_forgery and self.guess_budget is None \
                and self.time_budget_us is None:
            raise ConfigError("run: need a guess or time budget when not stopping on first forgery")


class Simulation:
    """Owns all mutable state for one run; single-threaded and deterministic."""

    def __init__(self, config: ScenarioConfig) -> None:
        config.validate()
        self.cfg = config
        seed = config.seed
        self.rng_loss = Random(f"{seed}:loss")
        self.rng_flood = Random(f"{seed}:flood")
        self.rng_isn = Random(f"{seed}:server-isn")
        self.rng_attacker = Random(f"{seed}:attacker")
        self.rng_client = Random(f"{seed}:client")

        epcfg = config.endpoint
        if epcfg.key is None:
            epcfg = replace(epcfg, key=SecretKey.from_seed(seed))
        frozen = config.frozen_counter if config.freeze_timer else None
        self.clock = SimClock(0, frozen)
        self.endpoint = Endpoint(
            epcfg, addr=config.server_addr, port=config.server_port,
            rng=self.rng_isn, frozen_counter=frozen,
        )
        self.layout = epcfg.layout
        self.table_len = len(epcfg.table)

        strategy = resolve_strategy_or_defer(config.strategy, self.layout, self.table_len, seed)
        self._needs_probe = isinstance(strategy, StructuredSearch) and strategy.prefix_order is None
        self.plan = AttackPlan(config.spoofed_tuple(), strategy, config.rate, config.payload)
        self.gs = GuessState(0)
        self._guess_fn = None if self._needs_probe else guess_stream_fn(
            self.plan, self.layout, self.table_len
        )
        self.guess_spacing_us = max(1, math.ceil(US_PER_S / config.rate))

        self.sink: SinkBehavior = victim_sink_policy()
        self._client_state: _ClientState | None = None
        client_addr = config.client_addr if config.client_addr is not None else config.victim_addr
        if config.client_connect_at_us is not None:
            self._client_state = _ClientState(client_addr, config.client_port, config.client_request)

        hosts: dict[int, object] = {
            config.server_addr: self._server_deliver,
            config.attacker_addr: self._attacker_deliver,
            config.victim_addr: self._victim_deliver,
        }
        if self._client_state is not None and client_addr != config.victim_addr:
            hosts[client_addr] = self._client_deliver
        self.topology = Topology(hosts, config.latency_us, config.loss_rate)

        burst = config.flood_burst
        self._flood_burst_left = epcfg.backlog_max + 1 if burst is None else burst
        self._flood_spacing_us = (
            max(1, round(US_PER_S / config.flood_rate)) if config.flood_rate > 0 else None
        )

        budget = config.guess_budget
        if budget is None and config.time_budget_us is None:
            valid = len(epcfg.window) * self.table_len
            budget = 50 * (self.layout.space // valid)
        self.guess_budget = budget

        self._heap: list = []
        self._seq = 0
        self._tracing = config.trace
        self.trace: list[TraceEvent] = []
        self._trace_seq = 0
        self._stopped = False
        self._stop_reason: str | None = None
        self._tick_at: int | None = None
        self._awaiting_probe = False
        self._probe_port = 0
        self._probe_tries = 0
        self._flood_seen: set[tuple[int, int]] = set()
        self._reserved_addrs = (
            config.server_addr, config.attacker_addr, config.victim_addr, client_addr,
        )
        self._forbidden_pairs = ((config.victim_addr, config.spoofed_port),)

        self.guesses_sent = 0
        self.packets_total = 0
        self.flood_syns_sent = 0
        self.search_restarts = 0
        self.transmits: dict[int, int] = {}
        self.forgeries: list[tuple[int, int]] = []
        self._spoofed_pair = (config.victim_addr, config.spoofed_port)

    # -- scheduling ------------------------------------------------------

    def _push(self, t_us: int, code: int, data=None) -> None:
        self._seq += 1
        heapq.heappush(self._heap, (t_us, self._seq, code, data))

    def _trace(self, t_us: int, kind: str, detail: str) -> None:
        self._trace_seq += 1
        self.trace.append(TraceEvent(t_us, self._trace_seq, kind, detail))

    def _stop(self, reason: str) -> None:
        if not self._stopped:
            self._stopped = True
            self._stop_reason = reason

    # -- transmission -----------------------------------------------------

    def _send(self, origin: int, seg: Segment, now: int) -> None:
        self.packets_total += 1
        self.transmits[origin] = self.transmits.get(origin, 0) + 1
        if self._tracing:
            self._trace(now, SEND, seg.describe())
        topo = self.topology
        if not topo.loss_rate and seg.dst_addr in topo.hosts:
            self._push(now + topo.latency_us, _EV_DELIVER, seg)
            return
        outcome, at = plan_delivery(topo, seg, now, self.rng_loss)
        if outcome == DELIVER_OK:
            self._push(at, _EV_DELIVER, seg)
        elif self._tracing:
            self._trace(at, DROP, f"{outcome} {seg.describe()}")

    # -- host behaviors ----------------------------------------------------

    def _server_deliver(self, seg: Segment, now: int) -> list[Segment]:
        out, events = self.endpoint.on_segment(seg, now)
        if events:
            self._on_endpoint_events(events)
        if out or events or seg.flags != ACK:
            self._reconcile_tick()
        return out

    def _attacker_deliver(self, seg: Segment, now: int) -> list[Segment]:
        if (
            self._awaiting_probe
            and seg.flags == SYN | ACK
            and seg.dst_port == self._probe_port
        ):
            self._awaiting_probe = False
            field_value = (seg.seq >> self.layout.timer_shift) & self.layout.timer_mask
            order = structured_prefixes(field_value, self.layout, self.table_len)
            self.plan = replace(self.plan, strategy=StructuredSearch(field_value, order))
            self._guess_fn = guess_stream_fn(self.plan, self.layout, self.table_len)
            self.gs = GuessState(0)
            if not self._stopped:
                self._push(now + self.guess_spacing_us, _EV_GUESS)
        return []

    def _victim_deliver(self, seg: Segment, now: int) -> list[Segment]:
        st = self._client_state
        if st is not None and st.addr == self.cfg.victim_addr and seg.dst_port == st.port:
            return self._client_deliver(seg, now)
        return self.sink.on_deliver(seg, now)

    def _client_deliver(self, seg: Segment, now: int) -> list[Segment]:
        st = self._client_state
        if st.state == "syn-sent" and seg.flags == SYN | ACK and seg.ack == (st.isn + 1) & MASK32:
            st.state = "established"
            base = (st.isn + 1) & MASK32
            ack_no = (seg.seq + 1) & MASK32
            server = self.cfg.server_addr
            sport = self.cfg.server_port
            return [
                Segment(st.addr, st.port, server, sport, ACK, seq=base, ack=ack_no),
                Segment(st.addr, st.port, server, sport, ACK, seq=base, ack=ack_no,
                        payload=st.request),
            ]
        if seg.payload and seg.flags == ACK:
            st.got_response = True
        return []

    # -- event handlers -------------------------------------------------------

    def _on_endpoint_events(self, events: list[EndpointEvent]) -> None:
        for ev in events:
            if self._tracing:
                self._trace(ev.time_us, ev.kind, ev.describe())
            if ev.kind == LOG_PLANTED and (ev.addr, ev.port) == self._spoofed_pair:
                self.forgeries.append((ev.time_us, ev.isn))
                if self.cfg.stop_on_first_forgery:
                    self._stop("first-forgery")

    def _reconcile_tick(self) -> None:
        nt = self.endpoint.next_timer_at()
        if nt is not None and (self._tick_at is None or nt < self._tick_at):
            self._tick_at = nt
            self._push(nt, _EV_TICK, nt)

    def _fire_tick(self, now: int, scheduled: int) -> None:
        if scheduled == self._tick_at:
            self._tick_at = None
        if self._stopped or self._past_time_budget(now):
            return
        out, events = self.endpoint.tick(now)
        if events:
            self._on_endpoint_events(events)
        for seg in out:
            self._send(self.cfg.server_addr, seg, now)
        self._reconcile_tick()

    def _fire_flood(self, now: int) -> None:
        if self._stopped or self._past_time_budget(now):
            return
        seg = flood_batch(
            1, self.rng_flood, self.cfg.server_addr, self.cfg.server_port,
            self._forbidden_pairs, self._reserved_addrs, seen=self._flood_seen,
        )[0]
        self._send(self.cfg.attacker_addr, seg, now)
        self.flood_syns_sent += 1
        if self._flood_burst_left > 1:
            self._flood_burst_left -= 1
            self._push(now + 1, _EV_FLOOD)
        elif self._flood_spacing_us is not None:
            self._flood_burst_left = 0
            self._push(now + self._flood_spacing_us, _EV_FLOOD)

    def _start_probe(self, now: int) -> None:
        if self._stopped or self._past_time_budget(now):
            return
        if self._probe_tries >= _PROBE_MAX_TRIES:
            self._stop("probe-failed")
            return
        self._probe_tries += 1
        self._probe_port = 40000 + self._probe_tries
        self._awaiting_probe = True
        probe = Segment(
            self.cfg.attacker_addr, self._probe_port,
            self.cfg.server_addr, self.cfg.server_port,
            SYN, seq=self.rng_attacker.getrandbits(32), mss_option=1460,
        )
        self._send(self.cfg.attacker_addr, probe, now)
        self._push(now + _PROBE_RETRY_US, _EV_PROBE_RETRY)

    def _fire_guess(self, now: int) -> None:
        if self._stopped or self._past_time_budget(now):
            return
        if self.guess_budget is not None and self.guesses_sent >= self.guess_budget:
            self._stop("guess-budget")
            return
        try:
            value = self._guess_fn(self.gs.issued)
        except SearchExhausted:
            # refresh the counter estimate with a fresh probe and restart
            self.search_restarts += 1
            self.gs = GuessState(0)
            self._awaiting_probe = False
            self._start_probe(now)
            return
        self.gs = GuessState(self.gs.issued + 1)
        spoofed = self.plan.spoofed
        seg = Segment(
            spoofed.client_addr, spoofed.client_port,
            spoofed.server_addr, spoofed.server_port,
            ACK, ATTACKER_SEQ, (value + 1) & MASK32, self.plan.payload,
        )
        self._send(self.cfg.attacker_addr, seg, now)
        self.guesses_sent += 1
        if self.guess_budget is not None and self.guesses_sent >= self.guess_budget:
            self._stop("guess-budget")
            return
        self._push(now + self.guess_spacing_us, _EV_GUESS)

    def _fire_client(self, now: int) -> None:
        if self._stopped or self._past_time_budget(now):
            return
        st = self._client_state
        st.isn = self.rng_client.getrandbits(32)
        st.state = "syn-sent"
        syn = Segment(st.addr, st.port, self.cfg.server_addr, self.cfg.server_port,
                      SYN, seq=st.isn, mss_option=1460)
        self._send(st.addr, syn, now)

    def _past_time_budget(self, now: int) -> bool:
        budget = self.cfg.time_budget_us
        if budget is not None and now > budget:
            self._stop("time-budget")
            return True
        return False

    # -- main loop ---------------------------------------------------------------

    def run(self) -> SimReport:
        cfg = self.cfg
        burst = self._flood_burst_left
        if burst > 0:
            self._push(0, _EV_FLOOD)
        guess_start = burst + 2 * cfg.latency_us + 1000
        if self.guess_budget is None or self.guess_budget > 0:
            if self._needs_probe:
                self._push(burst + cfg.latency_us + 500, _EV_PROBE)
            else:
                self._push(guess_start, _EV_GUESS)
        if cfg.client_connect_at_us is not None:
            self._push(cfg.client_connect_at_us, _EV_CLIENT)

        heap = self._heap
        hosts = self.topology.hosts
        end = 0
        while heap:
            t_us, _, code, data = heapq.heappop(heap)
            end = t_us
            self.clock.now_us = t_us
            if code == _EV_DELIVER:
                if self._tracing:
                    self._trace(t_us, DELIVER, data.describe())
                for reply in hosts[data.dst_addr](data, t_us):
                    self._send(data.dst_addr, reply, t_us)
            elif code == _EV_GUESS:
                self._fire_guess(t_us)
            elif code == _EV_FLOOD:
                self._fire_flood(t_us)
            elif code == _EV_TICK:
                self._fire_tick(t_us, data)
            elif code == _EV_PROBE:
                self._start_probe(t_us)
            elif code == _EV_PROBE_RETRY:
                if self._awaiting_probe:
                    self._start_probe(t_us)
            elif code == _EV_CLIENT:
                self._fire_client(t_us)

        if self._stop_reason is None:
            if self.guess_budget is not None and self.guesses_sent >= self.guess_budget:
                self._stop_reason = "guess-budget"
            else:
                self._stop_reason = "idle"
        return self._report(end)

    def _report(self, end_us: int) -> SimReport:
        return SimReport(
            stop_reason=self._stop_reason,
            sim_end_us=end_us,
            guesses_sent=self.guesses_sent,
            packets_total=self.packets_total,
            flood_syns_sent=self.flood_syns_sent,
            victim_transmits=self.transmits.get(self.cfg.victim_addr, 0),
            transmits_by_origin=dict(self.transmits),
            forgeries=list(self.forgeries),
            first_forgery_time_us=self.forgeries[0][0] if self.forgeries else None,
            search_restarts=self.search_restarts,
            endpoint_counters=self.endpoint.counters(),
            log_snapshot=self.endpoint.render_access_log(),
            trace_text=self.trace_text() if self._tracing else None,
        )

    def trace_text(self) -> str:
        return "".join(ev.line() + "\n" for ev in self.trace)


@dataclass(slots=True)
class _ClientState:
    addr: int
    port: int
    request: bytes
    isn: int = 0
    state: str = "idle"
    got_response: bool = False


def resolve_strategy_or_defer(strategy, layout, table_len: int, seed: int):
    """Resolve derived strategy fields; leave probe-driven structured search pending."""
    if isinstance(strategy, UniformRandom) and strategy.seed is None:
        return UniformRandom(seed)
    if isinstance(strategy, StructuredSearch) and strategy.counter_estimate is None \
            and strategy.prefix_order is None:
        return strategy  # estimate learned from the probe at run time
    return resolve_strategy(strategy, layout, table_len)


def run(config: ScenarioConfig) -> SimReport:
    """Execute one scenario and return its report (trace inline when enabled)."""
    return Simulation(config).run()
