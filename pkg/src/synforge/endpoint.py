"""Server-side TCP listener model.

Normal mode keeps a bounded half-open backlog with SYN-ACK retransmission
and an eventual RST; when a SYN arrives while the backlog is full the reply
carries a cookie ISN and nothing is stored. A bare ACK whose acknowledged
ISN validates as a cookie establishes a connection with no prior state.
Requests delivered on established connections land in the access log.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

from .cookie import (
    DEFAULT_MSS_TABLE,
    DEFAULT_WINDOW,
    CookieLayout,
    FourTuple,
    MssTable,
    SecretKey,
    counter_at,
    encode_cookie,
    mss_index_of,
    validate_cookie,
)
from .errors import ConfigError
from .segment import ACK, MASK32, RST, SYN, Segment, int_to_ip

ALLOW = "allow"
BLOCK = "block"

# Event kinds double as trace record kinds.
MODE_CHANGE = "ModeChange"
ESTABLISHED = "Established"
LOG_PLANTED = "LogPlanted"
EXPIRED = "Expired"
BLOCKED = "Blocked"

_METHODS = (b"GET ", b"HEAD ", b"POST ", b"PUT ", b"DELETE ", b"OPTIONS ")

RESPONSE_PAYLOAD = b"HTTP/1.1 200 OK\r\n\r\n"


def parse_request_line(payload: bytes) -> str | None:
    """First CRLF-terminated line if it starts with a method token, else None."""
    end = payload.find(b"\r\n")
    if end < 0:
        return None
    line = payload[:end]
    if not line.startswith(_METHODS):
        return None
    try:
        return line.decode("ascii")
    except UnicodeDecodeError:
        return None


class EndpointEvent(NamedTuple):
    kind: str
    time_us: int
    addr: int = 0
    port: int = 0
    isn: int = 0
    note: str = ""

    def describe(self) -> str:
        parts = []
        if self.addr or self.port:
            parts.append(f"{int_to_ip(self.addr)}:{self.port}")
        if self.kind in (ESTABLISHED, LOG_PLANTED):
            parts.append(f"isn={self.isn}")
        if self.note:
            parts.append(self.note)
        return " ".join(parts)


class AccessLogEntry(NamedTuple):
    addr: int
    port: int
    time_us: int
    request_line: str
    status: int


@dataclass(frozen=True)
class DefenseConfig:
    """Rate gate: block a source whose packets arrive closer than min_gap_us."""

    min_gap_us: int = 100
    block_duration_us: int = 10_000_000


@dataclass
class EndpointConfig:
    key: SecretKey | None = None
    backlog_max: int = 4
    retransmit_limit: int = 5
    retransmit_interval_us: int = 1_000_000
    layout: CookieLayout = CookieLayout()
    table: MssTable = DEFAULT_MSS_TABLE
    window: tuple[int, ...] = DEFAULT_WINDOW
    defense: DefenseConfig | None = None
    rst_on_invalid_cookie: bool = False
    sticky_cookie_mode: bool = False

    def validate(self) -> None:
        if self.key is None:
            raise ConfigError("endpoint.key: secret key required")
        if self.backlog_max < 1:
            raise ConfigError("endpoint.backlog_max: must be >= 1")
        if self.retransmit_limit < 0:
            raise ConfigError("endpoint.retransmit_limit: must be >= 0")
        if self.retransmit_interval_us < 1:
            raise ConfigError("endpoint.retransmit_interval_us: must be >= 1")
        if len(self.table) > (1 << self.layout.mss_bits):
            raise ConfigError("endpoint.table: more entries than mss_bits can encode")
        if not self.window:
            raise ConfigError("endpoint.window: must not be empty")
        if any(not 0 <= d < (1 << self.layout.timer_bits) for d in self.window):
            raise ConfigError("endpoint.window: deltas must fit the timer field")
        if self.defense is not None and self.defense.min_gap_us < 1:
            raise ConfigError("endpoint.defense.min_gap_us: must be >= 1")


@dataclass(slots=True)
class HalfOpenEntry:
    client_addr: int
    client_port: int
    server_isn: int
    ack_no: int
    mss: int
    retransmits_sent: int
    next_retransmit_at: int
    interval_us: int


@dataclass(slots=True)
class ConnectionRecord:
    client_addr: int
    client_port: int
    server_isn: int
    rcv_nxt: int
    mss: int
    established_at: int
    via_cookie: bool


class Endpoint:
    """Listener state machine; owned and driven by a single simulation loop."""

    def __init__(
        self,
        config: EndpointConfig,
        addr: int,
        port: int = 80,
        rng=None,
        frozen_counter: int | None = None,
    ) -> None:
        config.validate()
        self.config = config
        self.addr = addr
        self.port = port
        self.rng = rng
        self.frozen_counter = frozen_counter
        # hot-path copies; config is treated as frozen once the endpoint exists
        self._layout = config.layout
        self._window = config.window
        self._table_len = len(config.table)
        self._key = config.key
        self._backlog_max = config.backlog_max
        self._defense = config.defense
        self._rst_on_invalid = config.rst_on_invalid_cookie
        self.backlog: dict[tuple[int, int], HalfOpenEntry] = {}
        self.established: dict[tuple[int, int], ConnectionRecord] = {}
        self.access_log: list[AccessLogEntry] = []
        self._last_arrival: dict[int, int] = {}
        self._blocked_until: dict[int, int] = {}
        self._cookie_mode = False
        self._sticky_engaged = False
        # per-event statistics
        self.n_syn = 0
        self.n_ack = 0
        self.n_rst_in = 0
        self.n_malformed = 0
        self.n_synack_sent = 0
        self.n_cookies_minted = 0
        self.n_invalid_cookie = 0
        self.n_established = 0
        self.n_rst_sent = 0
        self.n_blocked = 0
        self.n_expired = 0
        self.n_stale_segments = 0
        self.n_requests_logged = 0

    # -- clock ---------------------------------------------------------

    def current_counter(self, now: int) -> int:
        if self.frozen_counter is not None:
            return self.frozen_counter
        return counter_at(now)

    # -- mode ----------------------------------------------------------

    def cookie_mode_active(self) -> bool:
        return self._sticky_engaged or len(self.backlog) >= self._backlog_max

    # -- defense gate ----------------------------------------------------

    def defense_check(self, src_addr: int, now: int) -> str:
        """Rate gate verdict for one arrival; records the arrival either way."""
        cfg = self.config.defense
        last = self._last_arrival.get(src_addr)
        in_window = now < self._blocked_until.get(src_addr, 0)
        too_fast = last is not None and now - last < cfg.min_gap_us
        if too_fast:
            self._blocked_until[src_addr] = now + cfg.block_duration_us
        self._last_arrival[src_addr] = now
        if in_window or too_fast:
            self.n_blocked += 1
            return BLOCK
        return ALLOW

    # -- segment dispatch ------------------------------------------------

    def on_segment(self, seg: Segment, now: int) -> tuple[list[Segment], list[EndpointEvent]]:
        if self._defense is not None and self.defense_check(seg.src_addr, now) == BLOCK:
            return [], [EndpointEvent(BLOCKED, now, seg.src_addr, seg.src_port)]
        flags = seg.flags
        if flags == ACK:
            return self._on_ack(seg, now)
        if flags & RST:
            self.n_rst_in += 1
            self.backlog.pop((seg.src_addr, seg.src_port), None)
            return [], []
        if flags & SYN and not flags & ACK:
            return self._on_syn(seg, now)
        if flags & ACK and not flags & SYN:
            return self._on_ack(seg, now)
        self.n_malformed += 1
        return [], []

    def _on_syn(self, seg: Segment, now: int) -> tuple[list[Segment], list[EndpointEvent]]:
        self.n_syn += 1
        cfg = self.config
        key = (seg.src_addr, seg.src_port)
        if key in self.established:
            self.n_stale_segments += 1
            return [], []
        entry = self.backlog.get(key)
        if entry is not None:
            # client SYN retransmit: repeat the SYN-ACK, keep the entry
            self.n_synack_sent += 1
            return [self._synack(entry.client_addr, entry.client_port, entry.server_isn,
                                 entry.ack_no, entry.mss)], []

        events: list[EndpointEvent] = []
        mode_cookie = self._sticky_engaged or len(self.backlog) >= cfg.backlog_max
        if mode_cookie != self._cookie_mode:
            label = "normal->cookie" if mode_cookie else "cookie->normal"
            events.append(EndpointEvent(MODE_CHANGE, now, note=label))
            self._cookie_mode = mode_cookie
        if mode_cookie and cfg.sticky_cookie_mode:
            self._sticky_engaged = True

        client_mss = seg.mss_option if seg.mss_option is not None else cfg.table.values[0]
        idx = mss_index_of(client_mss, cfg.table)
        mss = cfg.table.values[idx]
        if mode_cookie:
            isn = encode_cookie(
                FourTuple(seg.src_addr, seg.src_port, self.addr, self.port),
                self.current_counter(now), idx, cfg.key, cfg.layout, cfg.table,
            )
            self.n_cookies_minted += 1
        else:
            isn = self.rng.getrandbits(32) if self.rng is not None else 0
            self.backlog[key] = HalfOpenEntry(
                seg.src_addr, seg.src_port, isn, (seg.seq + 1) & MASK32, mss,
                retransmits_sent=0,
                next_retransmit_at=now + cfg.retransmit_interval_us,
                interval_us=cfg.retransmit_interval_us,
            )
        self.n_synack_sent += 1
        return [self._synack(seg.src_addr, seg.src_port, isn, (seg.seq + 1) & MASK32, mss)], events

    def _on_ack(self, seg: Segment, now: int) -> tuple[list[Segment], list[EndpointEvent]]:
        self.n_ack += 1
        key = (seg.src_addr, seg.src_port)
        conn = self.established.get(key)
        if conn is not None:
            return self._consume_data(conn, key, seg, now)
        entry = self.backlog.get(key)
        if entry is not None:
            if seg.ack == (entry.server_isn + 1) & MASK32:
                del self.backlog[key]
                return self._establish(seg, now, entry.server_isn, entry.mss, via_cookie=False)
            self.n_rst_sent += 1
            return [self._rst(seg)], []
        if self._sticky_engaged or len(self.backlog) >= self._backlog_max:
            guessed = (seg.ack - 1) & MASK32
            lay = self._layout
            # necessary-condition prefilter on the cheap bit fields; anything
            # passing still goes through the full keyed-hash validation
            ok_fields = (
                guessed >> lay.total_bits == 0
                and (self.current_counter(now) - (guessed >> lay.timer_shift)) & lay.timer_mask
                in self._window
                and (guessed >> lay.hash_bits) & lay.mss_mask < self._table_len
            )
            if ok_fields:
                result = validate_cookie(
                    guessed,
                    FourTuple(seg.src_addr, seg.src_port, self.addr, self.port),
                    self.current_counter(now), self._key, lay, self.config.table, self._window,
                )
                if result.ok:
                    return self._establish(seg, now, guessed, result.mss, via_cookie=True)
            self.n_invalid_cookie += 1
            if self._rst_on_invalid:
                self.n_rst_sent += 1
                return [self._rst(seg)], []
            return [], []
        # normal mode, no state for this tuple
        self.n_rst_sent += 1
        return [self._rst(seg)], []

    # -- establishment and data -------------------------------------------

    def _establish(
        self, seg: Segment, now: int, server_isn: int, mss: int, via_cookie: bool
    ) -> tuple[list[Segment], list[EndpointEvent]]:
        key = (seg.src_addr, seg.src_port)
        rec = ConnectionRecord(
            seg.src_addr, seg.src_port, server_isn,
            rcv_nxt=seg.seq, mss=mss, established_at=now, via_cookie=via_cookie,
        )
        self.established[key] = rec
        self.n_established += 1
        events = [EndpointEvent(
            ESTABLISHED, now, seg.src_addr, seg.src_port, isn=server_isn,
            note="cookie" if via_cookie else "handshake",
        )]
        if seg.payload:
            out, more = self._consume_data(rec, key, seg, now)
            return out, events + more
        return [], events

    def _consume_data(
        self, rec: ConnectionRecord, key: tuple[int, int], seg: Segment, now: int
    ) -> tuple[list[Segment], list[EndpointEvent]]:
        if not seg.payload:
            return [], []
        if seg.seq != rec.rcv_nxt:
            self.n_stale_segments += 1
            return [], []
        rec.rcv_nxt = (rec.rcv_nxt + len(seg.payload)) & MASK32
        line = parse_request_line(seg.payload)
        if line is None:
            return [], []
        self.access_log.append(AccessLogEntry(seg.src_addr, seg.src_port, now, line, 200))
        self.n_requests_logged += 1
        events = [EndpointEvent(LOG_PLANTED, now, seg.src_addr, seg.src_port, isn=rec.server_isn)]
        response = Segment(
            self.addr, self.port, seg.src_addr, seg.src_port, ACK,
            seq=(rec.server_isn + 1) & MASK32, ack=rec.rcv_nxt, payload=RESPONSE_PAYLOAD,
        )
        # single-request connection: forget it once the response is out
        del self.established[key]
        return [response], events

    # -- helpers -----------------------------------------------------------

    def _synack(self, addr: int, port: int, isn: int, ack_no: int, mss: int) -> Segment:
        return Segment(self.addr, self.port, addr, port, SYN | ACK,
                       seq=isn, ack=ack_no, mss_option=mss)

    def _rst(self, seg: Segment) -> Segment:
        return Segment(self.addr, self.port, seg.src_addr, seg.src_port, RST, seq=seg.ack)

    # -- timers --------------------------------------------------------------

    def next_timer_at(self) -> int | None:
        if not self.backlog:
            return None
        return min(e.next_retransmit_at for e in self.backlog.values())

    def tick(self, now: int) -> tuple[list[Segment], list[EndpointEvent]]:
        """Fire due retransmit timers; RST and drop entries past the limit.

        Gaps between scheduled retransmissions double exactly; catching up
        after a large time jump replays the whole schedule deterministically.
        """
        out: list[Segment] = []
        events: list[EndpointEvent] = []
        limit = self.config.retransmit_limit
        for key, e in list(self.backlog.items()):
            while e.next_retransmit_at <= now:
                if e.retransmits_sent < limit:
                    out.append(self._synack(e.client_addr, e.client_port,
                                            e.server_isn, e.ack_no, e.mss))
                    self.n_synack_sent += 1
                    e.retransmits_sent += 1
                    e.interval_us *= 2
                    e.next_retransmit_at += e.interval_us
                else:
                    out.append(Segment(self.addr, self.port, e.client_addr, e.client_port,
                                       RST, seq=(e.server_isn + 1) & MASK32))
                    self.n_rst_sent += 1
                    self.n_expired += 1
                    del self.backlog[key]
                    events.append(EndpointEvent(EXPIRED, now, e.client_addr, e.client_port))
                    break
        return out, events

    # -- access log ------------------------------------------------------------

    def render_access_log(self) -> str:
        """Common-log-style text, one line per request, in arrival order."""
        lines = []
        for e in self.access_log:
            ts = f"{e.time_us // 1_000_000}.{e.time_us % 1_000_000:06d}"
            lines.append(f'{int_to_ip(e.addr)} - - [{ts}] "{e.request_line}" {e.status} -\n')
        return "".join(lines)

    def counters(self) -> dict[str, int]:
        return {
            "syn": self.n_syn,
            "ack": self.n_ack,
            "rst_in": self.n_rst_in,
            "malformed": self.n_malformed,
            "synack_sent": self.n_synack_sent,
            "cookies_minted": self.n_cookies_minted,
            "invalid_cookie": self.n_invalid_cookie,
            "established": self.n_established,
            "rst_sent": self.n_rst_sent,
            "blocked": self.n_blocked,
            "expired": self.n_expired,
            "stale_segments": self.n_stale_segments,
            "requests_logged": self.n_requests_logged,
        }
