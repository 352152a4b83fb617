"""Campaign runner and analytics: exact odds, Monte Carlo trials, CSV, plots.

The CSV is the artifact of record; plots are a thin presentation layer on
top of it.
"""

from __future__ import annotations

import csv
import math
import statistics
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from fractions import Fraction
from pathlib import Path
from typing import NamedTuple

from .adversary import strategy_name
from .cookie import DEFAULT_MSS_TABLE, DEFAULT_WINDOW, CookieLayout, MssTable
from .errors import ConfigError
from .sim import ScenarioConfig, SimReport, Simulation

HISTOGRAM_BINS = 16


@dataclass(frozen=True)
class TheoreticalOdds:
    """Per-guess success odds under independent uniform guessing."""

    probability: Fraction
    expected_guesses: Fraction
    valid_count: int
    space: int


def theoretical_success_probability(
    layout: CookieLayout = CookieLayout(),
    window: tuple[int, ...] = DEFAULT_WINDOW,
    table: MssTable = DEFAULT_MSS_TABLE,
) -> TheoreticalOdds:
    """Exact odds that one uniform guess validates: valid count over the space."""
    valid = len(window) * len(table)
    probability = Fraction(valid, layout.space)
    return TheoreticalOdds(probability, 1 / probability, valid, layout.space)


class TrialResult(NamedTuple):
    trial: int
    seed: int
    guesses: int
    forgery_time_us: int | None
    strategy: str


@dataclass
class Campaign:
    """Monte Carlo campaign: trial i runs the base scenario with seed_base + i."""

    base: ScenarioConfig
    trials: int = 100
    seed_base: int = 1000
    timeout_factor: float = 50.0
    out_dir: Path | None = None
    jobs: int = 1

    def validate(self) -> None:
        if self.trials < 1:
            raise ConfigError("campaign.trials: must be >= 1")
        if self.timeout_factor <= 0:
            raise ConfigError("campaign.timeout_factor: must be positive")
        if self.jobs < 1:
            raise ConfigError("campaign.jobs: must be >= 1")


@dataclass
class CampaignStats:
    results: list[TrialResult]
    trials: int
    censored: int
    sample_mean: float | None
    sample_variance: float | None
    theoretical_mean: float
    histogram: list[tuple[int, int, int]] = field(default_factory=list)
    csv_path: Path | None = None

    def all_censored(self) -> bool:
        return self.censored == self.trials

    def to_text(self) -> str:
        lines = [
            f"trials={self.trials}",
            f"censored={self.censored}",
            "sample_mean=" + (f"{self.sample_mean:.6f}" if self.sample_mean is not None else "none"),
            "sample_variance="
            + (f"{self.sample_variance:.6f}" if self.sample_variance is not None else "none"),
            f"theoretical_mean={self.theoretical_mean:.6f}",
        ]
        for lo, hi, count in self.histogram:
            lines.append(f"hist [{lo},{hi}) {count}")
        return "\n".join(lines) + "\n"


def _trial_config(base: ScenarioConfig, seed: int, budget: int) -> ScenarioConfig:
    return replace(
        base, seed=seed, trace=False, stop_on_first_forgery=True, guess_budget=budget,
    )


def _run_trial(args: tuple[ScenarioConfig, int, int, int]) -> TrialResult:
    base, trial, seed, budget = args
    report = Simulation(_trial_config(base, seed, budget)).run()
    forged_at = report.first_forgery_time_us
    return TrialResult(
        trial, seed, report.guesses_sent, forged_at, strategy_name(base.strategy),
    )


def run_campaign(campaign: Campaign) -> CampaignStats:
    """Run every trial, aggregate guesses-to-first-forgery, optionally write CSV."""
    campaign.validate()
    base = campaign.base
    odds = theoretical_success_probability(
        base.endpoint.layout, base.endpoint.window, base.endpoint.table
    )
    budget = base.guess_budget
    if budget is None:
        budget = math.ceil(campaign.timeout_factor * odds.expected_guesses)
    jobs = [
        (base, i, campaign.seed_base + i, budget) for i in range(campaign.trials)
    ]
    if campaign.jobs > 1:
        with ProcessPoolExecutor(max_workers=campaign.jobs) as pool:
            results = sorted(pool.map(_run_trial, jobs), key=lambda r: r.trial)
    else:
        results = [_run_trial(j) for j in jobs]

    stats = aggregate_results(results, campaign.trials, float(odds.expected_guesses))
    if campaign.out_dir is not None:
        out = Path(campaign.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        stats.csv_path = out / "campaign.csv"
        write_campaign_csv(results, stats.csv_path)
        (out / "stats.txt").write_text(stats.to_text())
    return stats


def aggregate_results(
    results: list[TrialResult], trials: int, theoretical_mean: float
) -> CampaignStats:
    """Fold trial rows into campaign statistics (order-independent)."""
    successes = [r.guesses for r in results if r.forgery_time_us is not None]
    censored = trials - len(successes)
    mean = statistics.fmean(successes) if successes else None
    variance = statistics.variance(successes) if len(successes) > 1 else None
    return CampaignStats(
        results=results,
        trials=trials,
        censored=censored,
        sample_mean=mean,
        sample_variance=variance,
        theoretical_mean=theoretical_mean,
        histogram=_histogram(successes),
    )


def _histogram(values: list[int], bins: int = HISTOGRAM_BINS) -> list[tuple[int, int, int]]:
    if not values:
        return []
    top = max(values)
    width = max(1, -(-top // bins))
    counts = [0] * bins
    for v in values:
        counts[min(v // width, bins - 1)] += 1
    return [(i * width, (i + 1) * width, c) for i, c in enumerate(counts)]


def write_campaign_csv(results: list[TrialResult], path: Path) -> None:
    """One row per trial; an empty forgery time marks a censored trial."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["trial", "seed", "guesses", "forgery_time_us", "strategy"])
        for r in results:
            writer.writerow([
                r.trial, r.seed, r.guesses,
                "" if r.forgery_time_us is None else r.forgery_time_us,
                r.strategy,
            ])


def read_campaign_csv(path: Path) -> list[TrialResult]:
    results = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            results.append(TrialResult(
                int(row["trial"]), int(row["seed"]), int(row["guesses"]),
                int(row["forgery_time_us"]) if row["forgery_time_us"] else None,
                row["strategy"],
            ))
    return results


def analyze_csv(path: Path, theoretical_mean: float = float("nan")) -> CampaignStats:
    """Recompute campaign statistics from a previously written CSV."""
    results = read_campaign_csv(path)
    if not results:
        raise ConfigError(f"campaign CSV {path} has no rows")
    stats = aggregate_results(results, len(results), theoretical_mean)
    stats.csv_path = Path(path)
    return stats


def _timeline_rows(source) -> tuple[list[str], list[tuple]]:
    if isinstance(source, SimReport):
        header = ["index", "time_us", "isn"]
        rows = [(i + 1, t, isn) for i, (t, isn) in enumerate(source.forgeries)]
    elif isinstance(source, CampaignStats):
        header = ["trial", "time_us", "guesses"]
        rows = [
            (r.trial, r.forgery_time_us, r.guesses)
            for r in source.results
            if r.forgery_time_us is not None
        ]
    else:
        raise TypeError(f"cannot plot a {type(source).__name__}")
    return header, rows


def plot_rows(header: list[str], rows: list[tuple], image_path: Path) -> Path:
    """Scatter timeline rows (column 1 is microseconds, column 0 the series)."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(8, 4))
    times = [r[1] / 1e6 for r in rows]
    ys = [r[0] for r in rows]
    ax.plot(times, ys, linestyle="", marker="o", markersize=4)
    ax.set_xlabel("simulated time (s)")
    ax.set_ylabel(header[0])
    ax.set_title("forgery events over simulated time")
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(image_path, dpi=120)
    plt.close(fig)
    return Path(image_path)


def emit_timeline_plot(
    source: SimReport | CampaignStats,
    image_path: Path,
    csv_path: Path | None = None,
    allow_empty: bool = False,
) -> Path:
    """Scatter forgery events over simulated time; writes a CSV twin alongside.

    Every plotted mark corresponds to exactly one CSV data row.
    """
    header, rows = _timeline_rows(source)
    if not rows and not allow_empty:
        raise ConfigError("no forgery events to plot; pass allow_empty to emit an empty plot")

    image_path = Path(image_path)
    if csv_path is None:
        csv_path = image_path.with_suffix(".csv")
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)
    return plot_rows(header, rows, image_path)
