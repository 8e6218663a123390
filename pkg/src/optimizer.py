"""Exhaustive grid search over SMA crossover periods.

Every (ticker, short, long) trial is independent. Trials run in chunks on a
process pool; results are collected and sorted by key, so the output does not
depend on the worker count or on completion order.
"""

import io
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

import logs
from backtest import crossover_metrics
from errors import ConfigError, DataError, EmptyGrid, EmptyInput, NoDataForTicker
from indicators import rolling_mean
from marketdata import DateRange, PriceSeries

logger = logging.getLogger(__name__)

TRIALS_HEADER = "Ticker,Short,Long,OutperformancePct,VolatilityRatio"
RANKING_HEADER = "Rank,Short,Long,Metric"
SCATTER_HEADER = "VolatilityRatio,OutperformancePct"
DEFAULT_BOUNDS = (5, 49, 10, 149)
DEFAULT_RATIO_WIDTH = 0.25
DEFAULT_CHUNK = 500


@dataclass(frozen=True, order=True)
class SmaPair:
    short: int
    long: int

    def __post_init__(self):
        if self.short < 1 or self.long <= self.short:
            raise ConfigError(f"Invalid SMA pair ({self.short}, {self.long}); need 1 <= short < long.")


@dataclass(frozen=True)
class TrialRecord:
    ticker: str
    pair: SmaPair
    outperformance_pct: float
    volatility_ratio: float

    @property
    def key(self):
        return (self.ticker, self.pair.short, self.pair.long)


@dataclass(frozen=True)
class SkippedTrial:
    ticker: str
    pair: SmaPair
    reason: str

    @property
    def key(self):
        return (self.ticker, self.pair.short, self.pair.long)


@dataclass
class GridResult:
    records: List[TrialRecord]
    skipped: List[SkippedTrial]
    requested: int

    @property
    def accounted(self) -> int:
        return len(self.records) + len(self.skipped)


class GroupBy(str, Enum):
    PAIR = "pair"
    SHORT = "short"
    LONG = "long"
    RATIO_BUCKET = "ratio"


@dataclass(frozen=True)
class PairAggregate:
    """Means over the trials sharing `key`: a (short, long) tuple, a short or
    long period, or the lower edge of a long/short ratio bucket."""

    key: Union[Tuple[int, int], int, float]
    mean_outperformance_pct: float
    mean_volatility_ratio: float
    count: int


class RankMetric(str, Enum):
    OUTPERFORMANCE_DESC = "outperformance"
    VOLATILITY_ASC = "volatility"


@dataclass(frozen=True)
class RankingRow:
    rank: int
    short: int
    long: int
    value: float


@dataclass
class RankingTable:
    metric: RankMetric
    rows: List[RankingRow]

    def top(self, n: int) -> List[RankingRow]:
        return self.rows[:n]

    def bottom(self, n: int) -> List[RankingRow]:
        return self.rows[-n:] if n else []


@dataclass
class ScatterSummary:
    points: List[Tuple[float, float]] = field(default_factory=list)
    correlation: Optional[float] = None


# --- grid --------------------------------------------------------------------


def count_pairs(short_min: int, short_max: int, long_min: int, long_max: int) -> int:
    return sum(max(0, long_max - max(long_min - 1, s)) for s in range(short_min, short_max + 1))


def enumerate_pairs(
    short_min: int = DEFAULT_BOUNDS[0],
    short_max: int = DEFAULT_BOUNDS[1],
    long_min: int = DEFAULT_BOUNDS[2],
    long_max: int = DEFAULT_BOUNDS[3],
) -> List[SmaPair]:
    """All (short, long) with long > short inside the bounds, lexicographic."""
    if min(short_min, short_max, long_min, long_max) < 1:
        raise ConfigError("Grid bounds must be positive.")
    if short_min > short_max or long_min > long_max:
        raise ConfigError(
            f"Grid bounds out of order: short {short_min}..{short_max}, long {long_min}..{long_max}."
        )
    pairs = [
        SmaPair(s, l)
        for s in range(short_min, short_max + 1)
        for l in range(max(long_min, s + 1), long_max + 1)
    ]
    if not pairs:
        raise EmptyGrid(
            f"No pairs with long > short in short {short_min}..{short_max}, long {long_min}..{long_max}."
        )
    return pairs


def _run_chunk(
    ticker: str, closes: np.ndarray, pairs: Sequence[Tuple[int, int]], run_id: Optional[str]
) -> Tuple[List[TrialRecord], List[SkippedTrial]]:
    """Worker entry point: one ticker, a slice of the pair list."""
    if run_id:
        logs.run_id_var.set(run_id)
    averages: Dict[int, np.ndarray] = {}
    records, skipped = [], []
    for short, long in pairs:
        pair = SmaPair(short, long)
        if len(closes) <= long:
            skipped.append(
                SkippedTrial(ticker, pair, f"series has {len(closes)} bars, needs more than {long}")
            )
            continue
        for period in (short, long):
            if period not in averages:
                averages[period] = rolling_mean(closes, period)
        try:
            outperformance, ratio = crossover_metrics(
                closes, averages[short], averages[long], short, long
            )
        except DataError as e:
            skipped.append(SkippedTrial(ticker, pair, str(e)))
            continue
        records.append(TrialRecord(ticker, pair, outperformance, ratio))
    return records, skipped


def run_grid(
    tickers: Sequence[str],
    rng: DateRange,
    pairs: Sequence[SmaPair],
    loader: Callable[[str, DateRange], PriceSeries],
    workers: int = 1,
    chunk_size: int = DEFAULT_CHUNK,
) -> GridResult:
    """Crossover backtest for every (ticker, pair).

    Tickers that cannot be loaded, and pairs a series is too short for, are
    reported in `skipped` with a reason instead of aborting the grid.
    """
    pairs = sorted(set(pairs))
    tickers = sorted(set(tickers))
    requested = len(tickers) * len(pairs)
    skipped: List[SkippedTrial] = []
    tasks = []
    for ticker in tickers:
        try:
            series = loader(ticker, rng)
        except DataError as e:
            logger.warning("Skipping ticker %s: %s", ticker, e)
            skipped.extend(SkippedTrial(ticker, p, str(e)) for p in pairs)
            continue
        closes = np.array(series.adj_close)
        for start in range(0, len(pairs), chunk_size):
            chunk = [(p.short, p.long) for p in pairs[start:start + chunk_size]]
            tasks.append((ticker, closes, chunk))

    logger.info(
        "Running %d trials (%d tickers x %d pairs) in %d chunk(s) on %d worker(s)",
        requested,
        len(tickers),
        len(pairs),
        len(tasks),
        workers,
    )
    run_id = logs.run_id_var.get()
    if workers <= 1 or len(tasks) <= 1:
        results = [_run_chunk(t, c, p, run_id) for t, c, p in tasks]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(_run_chunk, t, c, p, run_id) for t, c, p in tasks]
            results = [f.result() for f in futures]

    records: List[TrialRecord] = []
    for chunk_records, chunk_skipped in results:
        records.extend(chunk_records)
        skipped.extend(chunk_skipped)
    records.sort(key=lambda r: r.key)
    skipped.sort(key=lambda s: s.key)

    if not records:
        raise NoDataForTicker(f"No trial succeeded for tickers {tickers}.")
    if skipped:
        logger.warning("%d of %d trials skipped", len(skipped), requested)
    return GridResult(records=records, skipped=skipped, requested=requested)


# --- aggregation -----------------------------------------------------------------


def records_frame(records: Sequence[TrialRecord]) -> pd.DataFrame:
    return pd.DataFrame(
        {
            "ticker": [r.ticker for r in records],
            "short": [r.pair.short for r in records],
            "long": [r.pair.long for r in records],
            "outperformance": [r.outperformance_pct for r in records],
            "volatility": [r.volatility_ratio for r in records],
        }
    )


def aggregate(
    records: Sequence[TrialRecord],
    group_by: GroupBy = GroupBy.PAIR,
    ratio_width: float = DEFAULT_RATIO_WIDTH,
) -> List[PairAggregate]:
    """Arithmetic means of both metrics per group, ordered by key."""
    if not records:
        raise EmptyInput("Nothing to aggregate: no trial records.")
    group_by = GroupBy(group_by)
    frame = records_frame(records)
    if group_by is GroupBy.PAIR:
        keys = ["short", "long"]
    elif group_by is GroupBy.RATIO_BUCKET:
        if ratio_width <= 0:
            raise ConfigError(f"Ratio bucket width must be positive, got {ratio_width}.")
        # exact rationals: 1.2 / 0.1 must land in bucket 12, not 11
        width = Fraction(str(ratio_width))
        frame["bucket"] = [
            math.floor(Fraction(int(long), int(short)) / width) for short, long in zip(frame["short"], frame["long"])
        ]
        keys = ["bucket"]
    else:
        keys = [group_by.value]

    grouped = frame.groupby(keys, sort=True).agg(
        outperformance=("outperformance", "mean"),
        volatility=("volatility", "mean"),
        count=("outperformance", "size"),
    )
    aggregates = []
    for key, row in grouped.iterrows():
        if isinstance(key, tuple) and len(key) == 1:
            key = key[0]
        if group_by is GroupBy.PAIR:
            key = (int(key[0]), int(key[1]))
        elif group_by is GroupBy.RATIO_BUCKET:
            key = round(int(key) * ratio_width, 10)
        else:
            key = int(key)
        aggregates.append(
            PairAggregate(key, float(row["outperformance"]), float(row["volatility"]), int(row["count"]))
        )
    return aggregates


def rank(aggregates: Sequence[PairAggregate], metric: RankMetric) -> RankingTable:
    """Best-first ranking of per-pair aggregates; ties go to (short, long) ascending."""
    if not aggregates:
        raise EmptyInput("Nothing to rank.")
    metric = RankMetric(metric)
    if any(not isinstance(a.key, tuple) for a in aggregates):
        raise ConfigError("Ranking needs aggregates keyed by (short, long) pair.")
    if metric is RankMetric.OUTPERFORMANCE_DESC:
        ordered = sorted(aggregates, key=lambda a: (-a.mean_outperformance_pct, a.key))
        value = lambda a: a.mean_outperformance_pct  # noqa: E731
    else:
        ordered = sorted(aggregates, key=lambda a: (a.mean_volatility_ratio, a.key))
        value = lambda a: a.mean_volatility_ratio  # noqa: E731
    rows = [RankingRow(i, a.key[0], a.key[1], value(a)) for i, a in enumerate(ordered, start=1)]
    return RankingTable(metric, rows)


def pearson(xs: Sequence[float], ys: Sequence[float]) -> Optional[float]:
    """Sample Pearson correlation, or None when either side has no spread."""
    x = np.asarray(xs, dtype=np.float64)
    y = np.asarray(ys, dtype=np.float64)
    if len(x) < 2 or np.all(x == x[0]) or np.all(y == y[0]):
        return None
    r = float(np.corrcoef(x, y)[0, 1])
    return None if math.isnan(r) else r


def scatter_export(records: Sequence[TrialRecord]) -> ScatterSummary:
    """One (volatility ratio, outperformance %) point per pair, plus their correlation."""
    per_pair = aggregate(records, GroupBy.PAIR)
    points = [(a.mean_volatility_ratio, a.mean_outperformance_pct) for a in per_pair]
    return ScatterSummary(points, pearson([p[0] for p in points], [p[1] for p in points]))


# --- CSV / JSON --------------------------------------------------------------------


def trials_csv(records: Sequence[TrialRecord]) -> str:
    lines = [TRIALS_HEADER]
    lines += [
        f"{r.ticker},{r.pair.short},{r.pair.long},{r.outperformance_pct!r},{r.volatility_ratio!r}"
        for r in records
    ]
    return "\n".join(lines) + "\n"


def parse_trials_csv(text: str) -> List[TrialRecord]:
    frame = pd.read_csv(io.StringIO(text), dtype={"Ticker": str}, keep_default_na=False)
    return [
        TrialRecord(
            row.Ticker,
            SmaPair(int(row.Short), int(row.Long)),
            float(row.OutperformancePct),
            float(row.VolatilityRatio),
        )
        for row in frame.itertuples(index=False)
    ]


def skipped_csv(skipped: Sequence[SkippedTrial]) -> str:
    frame = pd.DataFrame(
        {
            "Ticker": [s.ticker for s in skipped],
            "Short": [s.pair.short for s in skipped],
            "Long": [s.pair.long for s in skipped],
            "Reason": [s.reason for s in skipped],
        },
        columns=["Ticker", "Short", "Long", "Reason"],
    )
    return frame.to_csv(index=False, lineterminator="\n")


def ranking_csv(table: RankingTable, top: Optional[int] = None, bottom: Optional[int] = None) -> str:
    """Full ranking, or only the top/bottom N rows when either is given."""
    rows = table.rows
    if top is not None or bottom is not None:
        head = table.top(top or 0)
        tail = [r for r in table.bottom(bottom or 0) if r.rank > len(head)]
        rows = head + tail
    lines = [RANKING_HEADER] + [f"{r.rank},{r.short},{r.long},{r.value!r}" for r in rows]
    return "\n".join(lines) + "\n"


def parse_ranking_csv(text: str) -> List[RankingRow]:
    frame = pd.read_csv(io.StringIO(text))
    return [
        RankingRow(int(r.Rank), int(r.Short), int(r.Long), float(r.Metric))
        for r in frame.itertuples(index=False)
    ]


_GROUP_COLUMN = {GroupBy.SHORT: "Short", GroupBy.LONG: "Long", GroupBy.RATIO_BUCKET: "RatioBucket"}


def aggregate_csv(aggregates: Sequence[PairAggregate], group_by: GroupBy) -> str:
    group_by = GroupBy(group_by)
    if group_by is GroupBy.PAIR:
        lines = ["Short,Long,MeanOutperformancePct,MeanVolatilityRatio,Trials"]
        keys = [f"{a.key[0]},{a.key[1]}" for a in aggregates]
    else:
        lines = [f"{_GROUP_COLUMN[group_by]},MeanOutperformancePct,MeanVolatilityRatio,Trials"]
        keys = [repr(a.key) if isinstance(a.key, float) else str(a.key) for a in aggregates]
    lines += [
        f"{k},{a.mean_outperformance_pct!r},{a.mean_volatility_ratio!r},{a.count}"
        for k, a in zip(keys, aggregates)
    ]
    return "\n".join(lines) + "\n"


def scatter_csv(summary: ScatterSummary) -> str:
    lines = [SCATTER_HEADER] + [f"{v!r},{o!r}" for v, o in summary.points]
    return "\n".join(lines) + "\n"


def scatter_summary_json(summary: ScatterSummary) -> str:
    return json.dumps({"points": len(summary.points), "correlation": summary.correlation}, sort_keys=True)
