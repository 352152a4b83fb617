"""Command-line front end.

Subcommands: simulate, campaign, analyze, plot, probe. Configuration can
come from a flat INI file (sections: endpoint, attack, topology, run,
campaign); every key has a CLI flag override of the same name.

Exit codes: 0 success, 1 configuration error, 2 I/O error,
3 every campaign trial censored.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import sys
from pathlib import Path

from .adversary import StrideSearch, StructuredSearch, UniformRandom
from .bench import (
    Campaign,
    aggregate_results,
    analyze_csv,
    emit_timeline_plot,
    plot_rows,
    read_campaign_csv,
    run_campaign,
    theoretical_success_probability,
)
from .cookie import CookieLayout, MssTable, SecretKey
from .endpoint import DefenseConfig, EndpointConfig
from .errors import ConfigError
from .segment import ip_to_int
from .sim import ScenarioConfig, Simulation

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_IO = 2
EXIT_CENSORED = 3


def _load_ini(path: str | None) -> configparser.ConfigParser:
    cp = configparser.ConfigParser()
    if path is not None:
        if not Path(path).exists():
            raise ConfigError(f"config: file not found: {path}")
        cp.read(path)
    return cp


def _get(cp, section, key, override, fallback):
    if override is not None:
        return str(override)
    if cp.has_option(section, key):
        return cp.get(section, key)
    return fallback


def _get_bool(cp, section, key, override, fallback):
    raw = _get(cp, section, key, override, str(fallback))
    if isinstance(raw, bool):
        return raw
    return raw.strip().lower() in ("1", "true", "yes", "on")


def _int_list(raw: str) -> tuple[int, ...]:
    return tuple(int(x) for x in raw.split(",") if x.strip())


def build_scenario(cp: configparser.ConfigParser, args: argparse.Namespace) -> ScenarioConfig:
    layout = CookieLayout(
        timer_bits=int(_get(cp, "endpoint", "timer_bits", None, "5")),
        mss_bits=int(_get(cp, "endpoint", "mss_bits", None, "3")),
        hash_bits=int(_get(cp, "endpoint", "hash_bits", getattr(args, "hash_bits", None), "24")),
    )
    table = MssTable(_int_list(_get(cp, "endpoint", "mss_table", None, "536,1300,1440,1460")))
    window = _int_list(_get(cp, "endpoint", "window", None, "0,1"))
    gap = int(_get(cp, "endpoint", "defense", getattr(args, "defense", None), "0"))
    defense = None
    if gap > 0:
        defense = DefenseConfig(
            min_gap_us=gap,
            block_duration_us=int(_get(cp, "endpoint", "defense_block_us", None, "10000000")),
        )
    key_hex = _get(cp, "endpoint", "key_hex", None, "")
    endpoint = EndpointConfig(
        key=SecretKey(bytes.fromhex(key_hex)) if key_hex else None,
        backlog_max=int(_get(cp, "endpoint", "backlog", getattr(args, "backlog", None), "4")),
        retransmit_limit=int(_get(cp, "endpoint", "retransmit_limit", None, "5")),
        retransmit_interval_us=int(_get(cp, "endpoint", "retransmit_interval_us", None, "1000000")),
        layout=layout,
        table=table,
        window=window,
        defense=defense,
        rst_on_invalid_cookie=_get_bool(cp, "endpoint", "rst_on_invalid", None, False),
        sticky_cookie_mode=_get_bool(cp, "endpoint", "sticky_cookie", None, False),
    )

    name = _get(cp, "attack", "strategy", getattr(args, "strategy", None), "random").strip()
    if name == "stride":
        strategy = StrideSearch(
            start=int(_get(cp, "attack", "start", None, "0")),
            stride=int(_get(cp, "attack", "stride", getattr(args, "stride", None), "2654435761")),
        )
    elif name == "structured":
        raw = _get(cp, "attack", "counter_estimate",
                   getattr(args, "counter_estimate", None), "").strip()
        strategy = StructuredSearch(counter_estimate=int(raw) if raw else None)
    elif name == "random":
        strategy = UniformRandom()
    else:
        raise ConfigError(f"attack.strategy: unknown strategy {name!r}")

    request_line = _get(cp, "attack", "request_line", None, "GET /secret HTTP/1.1")
    stop = _get(cp, "run", "stop", None, "first-forgery").strip()
    if stop not in ("first-forgery", "budget"):
        raise ConfigError(f"run.stop: must be first-forgery or budget, not {stop!r}")
    budget_raw = _get(cp, "run", "guess_budget", getattr(args, "guess_budget", None), "").strip()
    time_raw = _get(cp, "run", "time_budget_s", getattr(args, "time_budget_s", None), "")
    time_raw = str(time_raw).strip()
    connect_raw = _get(cp, "topology", "client_connect_at_s", None, "").strip()
    client_addr_raw = _get(cp, "topology", "client_addr", None, "").strip()

    return ScenarioConfig(
        seed=int(_get(cp, "run", "seed", getattr(args, "seed", None), "1")),
        server_addr=ip_to_int(_get(cp, "topology", "server_addr", None, "10.0.0.1")),
        server_port=int(_get(cp, "topology", "server_port", None, "80")),
        attacker_addr=ip_to_int(_get(cp, "topology", "attacker_addr", None, "10.0.0.2")),
        victim_addr=ip_to_int(_get(cp, "topology", "victim_addr", None, "10.0.0.7")),
        spoofed_port=int(_get(cp, "attack", "spoofed_port", None, "7777")),
        endpoint=endpoint,
        strategy=strategy,
        rate=float(_get(cp, "attack", "rate", getattr(args, "rate", None), "20000")),
        payload=(request_line + "\r\n\r\n").encode("ascii"),
        flood_burst=None,
        flood_rate=float(_get(cp, "attack", "flood_rate", None, "50")),
        latency_us=int(_get(cp, "topology", "latency_us", None, "200")),
        loss_rate=float(_get(cp, "topology", "loss_rate", getattr(args, "loss_rate", None), "0")),
        freeze_timer=_get_bool(cp, "run", "freeze_timer", getattr(args, "freeze_timer", None), False),
        frozen_counter=int(_get(cp, "run", "frozen_counter", None, "1")),
        stop_on_first_forgery=(stop == "first-forgery"),
        guess_budget=int(budget_raw) if budget_raw else None,
        time_budget_us=int(float(time_raw) * 1e6) if time_raw else None,
        client_connect_at_us=int(float(connect_raw) * 1e6) if connect_raw else None,
        client_addr=ip_to_int(client_addr_raw) if client_addr_raw else None,
        client_port=int(_get(cp, "topology", "client_port", None, "55555")),
        trace=not getattr(args, "no_trace", False)
        and _get_bool(cp, "run", "trace", None, True),
    )


def _write_outputs(out_dir: Path, report, allow_empty_plot: bool) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "report.txt").write_text(report.to_text() + "\n")
    (out_dir / "access.log").write_text(report.log_snapshot)
    if report.trace_text is not None:
        (out_dir / "trace.log").write_text(report.trace_text)
    if report.forgeries or allow_empty_plot:
        emit_timeline_plot(report, out_dir / "timeline.png", allow_empty=allow_empty_plot)


def cmd_simulate(args: argparse.Namespace) -> int:
    cp = _load_ini(args.config)
    config = build_scenario(cp, args)
    report = Simulation(config).run()
    print(report.to_text())
    if args.out is not None:
        _write_outputs(Path(args.out), report, args.allow_empty)
    return EXIT_OK


def cmd_campaign(args: argparse.Namespace) -> int:
    cp = _load_ini(args.config)
    base = build_scenario(cp, args)
    base.trace = False
    campaign = Campaign(
        base,
        trials=int(_get(cp, "campaign", "trials", args.trials, "100")),
        seed_base=int(_get(cp, "campaign", "seed_base", args.seed, "1000")),
        timeout_factor=float(_get(cp, "campaign", "timeout_factor", None, "50")),
        out_dir=Path(args.out) if args.out is not None else Path("synforge-out"),
        jobs=int(_get(cp, "campaign", "jobs", args.jobs, "1")),
    )
    stats = run_campaign(campaign)
    print(stats.to_text(), end="")
    if stats.censored < stats.trials:
        emit_timeline_plot(stats, Path(campaign.out_dir) / "timeline.png")
    if stats.all_censored():
        print("all trials censored", file=sys.stderr)
        return EXIT_CENSORED
    return EXIT_OK


def cmd_analyze(args: argparse.Namespace) -> int:
    theory = float("nan")
    if args.hash_bits is not None:
        layout = CookieLayout(hash_bits=int(args.hash_bits))
        theory = float(theoretical_success_probability(layout).expected_guesses)
    stats = analyze_csv(Path(args.csv), theoretical_mean=theory)
    print(stats.to_text(), end="")
    if args.out is not None:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "stats.txt").write_text(stats.to_text())
    return EXIT_OK


def cmd_plot(args: argparse.Namespace) -> int:
    path = Path(args.csv)
    if not path.exists():
        raise ConfigError(f"plot.csv: file not found: {path}")
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        raw_rows = list(reader)
    if header is None:
        raise ConfigError(f"plot.csv: {path} is empty")
    if header[0] == "trial" and "seed" in header:
        results = read_campaign_csv(path)
        stats = aggregate_results(results, len(results), float("nan"))
        image = emit_timeline_plot(
            stats, Path(args.image), csv_path=Path(args.image).with_suffix(".csv"),
            allow_empty=args.allow_empty,
        )
    else:
        rows = [tuple(int(x) for x in row) for row in raw_rows]
        if not rows and not args.allow_empty:
            raise ConfigError("no forgery events to plot; pass --allow-empty")
        image = plot_rows(header, rows, Path(args.image))
    print(image)
    return EXIT_OK


def cmd_probe(args: argparse.Namespace) -> int:
    cp = _load_ini(args.config)
    config = build_scenario(cp, args)
    odds = theoretical_success_probability(
        config.endpoint.layout, config.endpoint.window, config.endpoint.table
    )
    layout = config.endpoint.layout
    print(f"layout timer_bits={layout.timer_bits} mss_bits={layout.mss_bits} "
          f"hash_bits={layout.hash_bits}")
    print(f"valid_count={odds.valid_count}")
    print(f"space={odds.space}")
    print(f"probability={odds.probability} ({float(odds.probability):.3e})")
    print(f"expected_guesses={odds.expected_guesses}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="synforge",
        description="SYN-cookie handshake and blind ACK-forgery simulator",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out=True):
        p.add_argument("--config", help="INI config file")
        p.add_argument("--seed", type=int, help="master seed (campaign: seed base)")
        p.add_argument("--hash-bits", dest="hash_bits", type=int, help="cookie hash width")
        p.add_argument("--strategy", choices=["stride", "structured", "random"])
        p.add_argument("--stride", type=int, help="odd stride for stride search")
        p.add_argument("--rate", type=float, help="guesses per simulated second")
        p.add_argument("--backlog", type=int, help="half-open backlog capacity")
        p.add_argument("--freeze-timer", dest="freeze_timer", action="store_const", const=True,
                       help="pin the cookie counter for the whole run")
        p.add_argument("--defense", type=int, help="rate-gate gap in microseconds (0 disables)")
        p.add_argument("--guess-budget", dest="guess_budget", type=int)
        p.add_argument("--time-budget-s", dest="time_budget_s", type=float)
        p.add_argument("--loss-rate", dest="loss_rate", type=float)
        p.add_argument("--counter-estimate", dest="counter_estimate", type=int)
        if out:
            p.add_argument("--out", help="output directory")

    p_sim = sub.add_parser("simulate", help="run one scenario, print the report")
    common(p_sim)
    p_sim.add_argument("--no-trace", dest="no_trace", action="store_true")
    p_sim.add_argument("--allow-empty", dest="allow_empty", action="store_true")
    p_sim.set_defaults(func=cmd_simulate)

    p_camp = sub.add_parser("campaign", help="Monte Carlo over seeds, write CSV and stats")
    common(p_camp)
    p_camp.add_argument("--trials", type=int)
    p_camp.add_argument("--jobs", type=int, help="parallel trial workers")
    p_camp.set_defaults(func=cmd_campaign)

    p_an = sub.add_parser("analyze", help="recompute statistics from a campaign CSV")
    p_an.add_argument("--csv", required=True)
    p_an.add_argument("--hash-bits", dest="hash_bits", type=int,
                      help="layout for the theoretical mean")
    p_an.add_argument("--out", help="output directory")
    p_an.set_defaults(func=cmd_analyze)

    p_plot = sub.add_parser("plot", help="render a timeline image from a CSV")
    p_plot.add_argument("--csv", required=True)
    p_plot.add_argument("--image", required=True)
    p_plot.add_argument("--allow-empty", dest="allow_empty", action="store_true")
    p_plot.set_defaults(func=cmd_plot)

    p_probe = sub.add_parser("probe", help="print theoretical odds for a config")
    common(p_probe, out=False)
    p_probe.set_defaults(func=cmd_probe)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
