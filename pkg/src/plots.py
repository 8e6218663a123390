"""SVG charts for reports. Presentation only; the CSV files are the data of record."""

import logging
from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

logger = logging.getLogger(__name__)

# Fixed hash salt and no date metadata keep repeated runs byte-identical.
matplotlib.rcParams["svg.hashsalt"] = "quantbench"
_SVG_METADATA = {"Date": None, "Creator": "quantbench"}


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, format="svg", metadata=_SVG_METADATA, bbox_inches="tight")
    plt.close(fig)
    logger.info("Wrote chart %s", path)
    return path


def plot_equity_curves(report, path) -> Path:
    """Continuous and indicative equity curves of one backtest."""
    fig, ax = plt.subplots(figsize=(10, 5))
    ax.plot(report.continuous.dates, report.continuous.values, label=f"{report.ticker} Continuous Investing")
    ax.plot(report.indicative.dates, report.indicative.values, label=f"{report.ticker} Indicative Investing")
    ax.set_xlabel("Date")
    ax.set_ylabel("Portfolio value")
    ax.set_title(f"{report.ticker} {report.strategy.value}")
    ax.legend()
    fig.autofmt_xdate()
    return _save(fig, path)


def plot_scatter(summary, path) -> Path:
    """Mean volatility ratio against mean outperformance, one point per pair."""
    fig, ax = plt.subplots(figsize=(7, 6))
    if summary.points:
        xs, ys = zip(*summary.points)
        ax.scatter(xs, ys, s=6)
    title = "Volatility vs outperformance"
    if summary.correlation is not None:
        title += f" (r = {summary.correlation:.3f})"
    ax.set_title(title)
    ax.set_xlabel("Average volatility ratio")
    ax.set_ylabel("Average outperformance %")
    return _save(fig, path)


def plot_trend(aggregates: Sequence, label: str, path) -> Path:
    """Per-period means (per short or per long SMA) as two stacked panels."""
    keys = [a.key for a in aggregates]
    fig, (top, bottom) = plt.subplots(2, 1, sharex=True, figsize=(8, 6))
    top.plot(keys, [a.mean_outperformance_pct for a in aggregates])
    top.set_ylabel("Average outperformance %")
    bottom.plot(keys, [a.mean_volatility_ratio for a in aggregates])
    bottom.set_ylabel("Average volatility ratio")
    bottom.set_xlabel(label)
    return _save(fig, path)


def plot_crossover(short_sma, long_sma, diff, path) -> Path:
    """Both moving averages over their difference, on the cropped dates."""
    fig, (top, bottom) = plt.subplots(2, 1, sharex=True, figsize=(10, 6))
    ticker = short_sma.source_ticker
    top.plot(short_sma.dates, short_sma.values, label=f"{ticker} SMA {short_sma.period}")
    top.plot(long_sma.dates, long_sma.values, label=f"{ticker} SMA {long_sma.period}")
    top.set_ylabel("Adjusted close")
    top.legend()
    bottom.plot(diff.dates, diff.values, label="Short minus long")
    bottom.axhline(0.0, color="grey", linewidth=0.8)
    bottom.set_ylabel("Difference")
    bottom.set_xlabel("Date")
    bottom.legend()
    fig.autofmt_xdate()
    return _save(fig, path)
