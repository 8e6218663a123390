import argparse
import json
import logging
import sys
import uuid
from dataclasses import asdict
from pathlib import Path
from typing import Any, Dict, List, Optional

import logs
from backtest import StrategyKind, crossover_window, run_backtest
from cache import open_cache
from config import RunConfig, build_config
from errors import EXIT_OK, ConfigError, QuantbenchError
from indicators import align_crop, difference, sma
from marketdata import DateRange, build_session, fetch_history, safe_ticker
from optimizer import (
    GroupBy,
    RankMetric,
    RankingTable,
    aggregate,
    aggregate_csv,
    enumerate_pairs,
    rank,
    ranking_csv,
    run_grid,
    scatter_csv,
    scatter_export,
    scatter_summary_json,
    skipped_csv,
    trials_csv,
)
from plots import plot_crossover, plot_equity_curves, plot_scatter, plot_trend

logger = logging.getLogger(__name__)

SEPARATOR = "-" * 72


class UsageParser(argparse.ArgumentParser):
    """argparse exits with status 2 on bad flags; here that is a usage error (1)."""

    def error(self, message):
        raise ConfigError(f"{self.prog}: {message}")


def _shared_flags() -> argparse.ArgumentParser:
    shared = argparse.ArgumentParser(add_help=False)
    shared.add_argument(
        "--ticker", dest="tickers", action="append", help="Ticker symbol (repeatable for optimize)."
    )
    shared.add_argument("--start", help="First date, YYYY-MM-DD (evaluation start for backtest).")
    shared.add_argument("--end", help="Last date, YYYY-MM-DD.")
    shared.add_argument("--provider-url", help="Download URL template with {ticker}, {period1}, {period2}.")
    shared.add_argument("--cache-dir", help="Cache directory or s3://bucket/prefix (env QUANTBENCH_CACHE_DIR).")
    shared.add_argument("--out-dir", help="Directory for reports (default: out).")
    shared.add_argument("--seed", type=int, help="Random seed for splits and folds (default: 0).")
    shared.add_argument(
        "--format",
        dest="formats",
        action="append",
        choices=["json", "csv"],
        help="Output format, repeatable (default: json and csv).",
    )
    shared.add_argument("--plot", action="store_true", default=None, help="Also write SVG charts.")
    shared.add_argument("--config", help="JSON file with defaults; flags override it.")
    return shared


def build_parser() -> argparse.ArgumentParser:
    parser = UsageParser(
        prog="quantbench",
        description="Backtest SMA crossover and predictive trading strategies on daily price data.",
        formatter_class=argparse.RawTextHelpFormatter,
    )
    commands = parser.add_subparsers(dest="command", required=True)
    shared = _shared_flags()

    commands.add_parser("fetch", parents=[shared], help="Download a price history into the cache.")

    backtest = commands.add_parser("backtest", parents=[shared], help="Run one strategy on one ticker.")
    backtest.add_argument(
        "--strategy",
        "--model",
        dest="strategy",
        choices=[k.value for k in StrategyKind],
        help="crossover: SMA crossover (needs --short, --long)\n"
        "linreg, knn: walk-forward prediction (needs --train-start)\n"
        "(default: crossover)",
    )
    backtest.add_argument("--short", type=int, help="Short SMA period.")
    backtest.add_argument("--long", type=int, help="Long SMA period.")
    backtest.add_argument("--train-start", help="First training date for linreg/knn.")
    backtest.add_argument("--test-fraction", type=float, help="Held-out share per fit (default: 0.2).")

    optimize = commands.add_parser("optimize", parents=[shared], help="Grid-search crossover periods.")
    optimize.add_argument("--tickers-file", help="File with one ticker per line (# comments allowed).")
    optimize.add_argument("--short-min", type=int)
    optimize.add_argument("--short-max", type=int)
    optimize.add_argument("--long-min", type=int)
    optimize.add_argument("--long-max", type=int)
    optimize.add_argument("--workers", type=int, help="Worker processes (env QUANTBENCH_WORKERS, default: CPU count).")
    optimize.add_argument("--top", type=int, help="Rows printed from each end of the rankings (default: 5).")
    return parser


def read_tickers_file(path) -> List[str]:
    path = Path(path)
    try:
        lines = path.read_text().splitlines()
    except OSError as e:
        raise ConfigError(f"Cannot read tickers file '{path}': {e.strerror or e}")
    tickers = [line.split("#", 1)[0].strip() for line in lines]
    tickers = [t for t in tickers if t]
    if not tickers:
        raise ConfigError(f"Tickers file '{path}' lists no tickers.")
    return tickers


def config_from_args(args: argparse.Namespace, environ=None) -> RunConfig:
    flags: Dict[str, Any] = {k: v for k, v in vars(args).items() if k not in ("config", "tickers_file")}
    tickers_file = getattr(args, "tickers_file", None)
    if tickers_file:
        flags["tickers"] = (flags.get("tickers") or []) + read_tickers_file(tickers_file)
    return build_config(flags, args.config, environ)


def _write(path: Path, text: str) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)
    logger.info("Wrote %s", path)
    return path


def _loader(config: RunConfig):
    cache = open_cache(config.cache_dir)
    session = build_session()

    def load(ticker: str, rng: DateRange):
        return fetch_history(ticker, rng, config.provider_url, cache=cache, session=session)

    return load, cache


def _print_settings(config: RunConfig) -> None:
    print(f"  Command: {config.command}")
    print(f"  Tickers: {', '.join(config.tickers)}")
    print(f"  Range: {config.fetch_range}")
    print(f"  Seed: {config.seed}")
    print(SEPARATOR)


# --- commands ----------------------------------------------------------------


def cmd_fetch(config: RunConfig) -> int:
    load, cache = _loader(config)
    rng = config.fetch_range
    series = load(config.ticker, rng)
    print(
        f"{config.ticker}: {len(series)} rows, {series.dropped_rows} dropped, "
        f"{series.first_date}..{series.last_date} -> {cache.path_for(config.ticker, rng)}"
    )
    return EXIT_OK


def cmd_backtest(config: RunConfig) -> int:
    backtest_config = config.backtest_config()
    load, _ = _loader(config)
    series = load(config.ticker, config.fetch_range)
    report = run_backtest(series, backtest_config)

    print(report.text_block())
    out = Path(config.out_dir)
    stem = f"{safe_ticker(config.ticker)}_{config.strategy.value}"
    if "json" in config.formats:
        body = json.dumps(report.to_json_dict(), indent=2, sort_keys=True)
        _write(out / f"{stem}_report.json", body + "\n")
    if "csv" in config.formats:
        _write(out / f"{stem}_curves.csv", report.curves_csv())
    if config.plot:
        plot_equity_curves(report, out / f"{stem}_curves.svg")
        if backtest_config.strategy is StrategyKind.CROSSOVER:
            window = crossover_window(series, backtest_config)
            short_sma, long_sma = align_crop(sma(window, backtest_config.short), sma(window, backtest_config.long))
            plot_crossover(short_sma, long_sma, difference(short_sma, long_sma), out / f"{stem}_averages.svg")
    return EXIT_OK


def _print_ranking(title: str, table: RankingTable, n: int) -> None:
    print(f"{title}: top {n}")
    for row in table.top(n):
        print(f"  {row.rank:>5}  ({row.short}, {row.long})  {row.value:.4f}")
    print(f"{title}: bottom {n}")
    for row in table.bottom(n):
        print(f"  {row.rank:>5}  ({row.short}, {row.long})  {row.value:.4f}")


def cmd_optimize(config: RunConfig) -> int:
    pairs = enumerate_pairs(config.short_min, config.short_max, config.long_min, config.long_max)
    load, _ = _loader(config)
    result = run_grid(
        config.tickers, DateRange(config.start, config.end), pairs, load, workers=config.workers
    )
    records = result.records

    per_pair = aggregate(records, GroupBy.PAIR)
    by_outperformance = rank(per_pair, RankMetric.OUTPERFORMANCE_DESC)
    by_volatility = rank(per_pair, RankMetric.VOLATILITY_ASC)
    per_short = aggregate(records, GroupBy.SHORT)
    per_long = aggregate(records, GroupBy.LONG)
    per_ratio = aggregate(records, GroupBy.RATIO_BUCKET, config.ratio_width)
    scatter = scatter_export(records)

    out = Path(config.out_dir)
    if "csv" in config.formats:
        _write(out / "trials.csv", trials_csv(records))
        _write(out / "skipped.csv", skipped_csv(result.skipped))
        _write(out / "pairs.csv", aggregate_csv(per_pair, GroupBy.PAIR))
        _write(out / "ranking_outperformance.csv", ranking_csv(by_outperformance))
        _write(out / "ranking_volatility.csv", ranking_csv(by_volatility))
        _write(out / "by_short.csv", aggregate_csv(per_short, GroupBy.SHORT))
        _write(out / "by_long.csv", aggregate_csv(per_long, GroupBy.LONG))
        _write(out / "by_ratio.csv", aggregate_csv(per_ratio, GroupBy.RATIO_BUCKET))
        _write(out / "scatter.csv", scatter_csv(scatter))
    if "json" in config.formats:
        _write(out / "scatter_summary.json", scatter_summary_json(scatter) + "\n")
        summary = {
            "seed": config.seed,
            "tickers": sorted(set(config.tickers)),
            "requested": result.requested,
            "completed": len(records),
            "skipped": len(result.skipped),
            "correlation": scatter.correlation,
            "topOutperformance": [asdict(r) for r in by_outperformance.top(config.top)],
            "topVolatility": [asdict(r) for r in by_volatility.top(config.top)],
        }
        _write(out / "optimize_summary.json", json.dumps(summary, indent=2, sort_keys=True) + "\n")
    if config.plot:
        plot_scatter(scatter, out / "scatter.svg")
        plot_trend(per_short, "Short SMA period", out / "trend_short.svg")
        plot_trend(per_long, "Long SMA period", out / "trend_long.svg")

    print(f"Trials: {len(records)} completed, {len(result.skipped)} skipped of {result.requested}")
    _print_ranking("Outperformance %", by_outperformance, config.top)
    _print_ranking("Volatility ratio", by_volatility, config.top)
    if scatter.correlation is not None:
        print(f"Volatility/outperformance correlation: {scatter.correlation:.4f}")
    print(f"Seed: {config.seed}")
    return EXIT_OK


COMMANDS = {"fetch": cmd_fetch, "backtest": cmd_backtest, "optimize": cmd_optimize}


# --- Main Execution ---
def main(argv: Optional[List[str]] = None) -> int:
    token = logs.run_id_var.set(uuid.uuid4().hex[:16])
    try:
        args = build_parser().parse_args(argv)
        config = config_from_args(args)
        _print_settings(config)
        return COMMANDS[config.command](config)
    except QuantbenchError as e:
        logger.error("Command failed: %s", e)
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code
    finally:
        logs.run_id_var.reset(token)


if __name__ == "__main__":
    sys.exit(main())
