"""synforge: deterministic SYN-cookie handshake and forgery-attack simulator."""

from .adversary import (
    AttackPlan,
    GuessState,
    StrideSearch,
    StructuredSearch,
    UniformRandom,
    flood_batch,
    next_guess,
    victim_sink_policy,
)
from .bench import (
    Campaign,
    CampaignStats,
    TheoreticalOdds,
    emit_timeline_plot,
    run_campaign,
    theoretical_success_probability,
)
from .cookie import (
    DEFAULT_MSS_TABLE,
    DEFAULT_WINDOW,
    CookieLayout,
    FourTuple,
    MssTable,
    SecretKey,
    Validation,
    counter_at,
    encode_cookie,
    mss_index_of,
    secret_hash,
    valid_cookie_set,
    validate_cookie,
)
from .endpoint import (
    AccessLogEntry,
    DefenseConfig,
    Endpoint,
    EndpointConfig,
    EndpointEvent,
    parse_request_line,
)
from .errors import ConfigError, SearchExhausted
from .segment import ACK, FIN, RST, SYN, Segment, int_to_ip, ip_to_int
from .sim import ScenarioConfig, SimClock, SimReport, Simulation, run

__version__ = "0.1.0"
