"""Simple moving averages and crossover detection.

All types here are immutable and every operation is a pure function, so
indicator values can be shared freely between optimizer workers.
"""

from dataclasses import dataclass
from enum import Enum
from typing import Sequence, Tuple, Union

import numpy as np
import pandas as pd

from errors import (
    MisalignedInputs,
    MismatchedSource,
    PeriodOrderViolation,
    PeriodTooLong,
    ZeroPeriod,
)
from marketdata import PriceSeries


class Signal(str, Enum):
    BUY = "Buy"
    SELL = "Sell"
    HOLD = "Hold"


BUY, HOLD, SELL = 1, 0, -1
_CODE_TO_SIGNAL = {BUY: Signal.BUY, HOLD: Signal.HOLD, SELL: Signal.SELL}


def _frozen(arr, dtype=None) -> np.ndarray:
    arr = np.array(arr, dtype=dtype)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class SmaSeries:
    """Moving average of `period` days, one value per date from the
    source's (period - 1)-th bar onward."""

    period: int
    dates: np.ndarray
    values: np.ndarray
    source_ticker: str = ""
    source_end: object = None

    def __post_init__(self):
        object.__setattr__(self, "dates", _frozen(self.dates, "datetime64[D]"))
        object.__setattr__(self, "values", _frozen(self.values, np.float64))
        if self.source_end is None and len(self.dates):
            object.__setattr__(self, "source_end", self.dates[-1])

    def __len__(self):
        return len(self.values)

    def items(self):
        return [(d.item(), float(v)) for d, v in zip(self.dates, self.values)]


@dataclass(frozen=True, eq=False)
class DifferenceSeries:
    """short SMA minus long SMA; positive means short above long."""

    dates: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "dates", _frozen(self.dates, "datetime64[D]"))
        object.__setattr__(self, "values", _frozen(self.values, np.float64))

    def __len__(self):
        return len(self.values)


@dataclass(frozen=True, eq=False)
class SignalSeries:
    dates: np.ndarray
    codes: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "dates", _frozen(self.dates, "datetime64[D]"))
        object.__setattr__(self, "codes", _frozen(self.codes, np.int8))

    def __len__(self):
        return len(self.codes)

    @property
    def events(self) -> Tuple[Signal, ...]:
        return tuple(_CODE_TO_SIGNAL[int(c)] for c in self.codes)

    def items(self):
        return [(d.item(), e) for d, e in zip(self.dates, self.events)]


# --- SMA -----------------------------------------------------------------------


def check_period(period, length: int) -> int:
    if isinstance(period, bool) or int(period) != period:
        raise ZeroPeriod(f"SMA period must be a positive integer, got {period!r}.")
    period = int(period)
    if period < 1:
        raise ZeroPeriod(f"SMA period must be at least 1, got {period}.")
    if period > length:
        raise PeriodTooLong(f"SMA period {period} exceeds series length {length}.")
    return period


def rolling_mean(values: np.ndarray, period: int) -> np.ndarray:
    """Windowed means, len(values) - period + 1 of them.

    Uses the compensated running sum of pandas rolling windows, O(N) per period.
    """
    values = np.asarray(values, dtype=np.float64)
    period = check_period(period, len(values))
    means = pd.Series(values).rolling(period).mean().to_numpy()
    return means[period - 1:]


def sma(
    prices: Union[PriceSeries, Sequence[Tuple[object, float]]],
    period: int,
    source_ticker: str = "",
) -> SmaSeries:
    """Simple moving average of adjusted closes.

    Accepts a PriceSeries or an ordered list of (date, price) pairs.
    """
    if isinstance(prices, PriceSeries):
        dates, values = prices.dates, prices.adj_close
        source_ticker = source_ticker or prices.ticker
    else:
        dates = np.array([d for d, _ in prices], dtype="datetime64[D]")
        values = np.array([p for _, p in prices], dtype=np.float64)
    means = rolling_mean(values, period)
    return SmaSeries(
        period=int(period),
        dates=dates[int(period) - 1:],
        values=means,
        source_ticker=source_ticker,
        source_end=dates[-1],
    )


def align_crop(short: SmaSeries, long: SmaSeries) -> Tuple[SmaSeries, SmaSeries]:
    """Crop both averages to the long average's first date."""
    if short.period >= long.period:
        raise PeriodOrderViolation(
            f"Short period ({short.period}) must be smaller than long period ({long.period})."
        )
    if short.source_ticker != long.source_ticker or short.source_end != long.source_end:
        raise MismatchedSource("Moving averages were computed from different price series.")

    start = np.searchsorted(short.dates, long.dates[0])
    if start >= len(short.dates) or short.dates[start] != long.dates[0]:
        raise MismatchedSource("Long average starts on a date the short average lacks.")
    cropped = short.dates[start:]
    if len(cropped) != len(long.dates) or np.any(cropped != long.dates):
        raise MismatchedSource("Moving averages do not share a date vector after cropping.")
    if start == 0:
        return short, long
    return (
        SmaSeries(
            period=short.period,
            dates=cropped,
            values=short.values[start:],
            source_ticker=short.source_ticker,
            source_end=short.source_end,
        ),
        long,
    )


def difference(short: SmaSeries, long: SmaSeries) -> DifferenceSeries:
    if len(short.dates) != len(long.dates) or np.any(short.dates != long.dates):
        raise MisalignedInputs("Difference needs moving averages on identical dates; align_crop first.")
    return DifferenceSeries(dates=short.dates, values=short.values - long.values)


# --- crossovers ----------------------------------------------------------------


def carried_signs(values: np.ndarray) -> np.ndarray:
    """Sign of each value, with exact zeros taking the previous day's sign.

    Leading zeros stay 0.
    """
    signs = np.sign(np.asarray(values, dtype=np.float64)).astype(np.int8)
    if len(signs) == 0:
        return signs
    last_nonzero = np.where(signs != 0, np.arange(len(signs)), 0)
    np.maximum.accumulate(last_nonzero, out=last_nonzero)
    return signs[last_nonzero]


def signal_codes(diff_values: np.ndarray) -> np.ndarray:
    """+1 Buy (negative to positive), -1 Sell (positive to negative), 0 Hold."""
    carried = carried_signs(diff_values)
    codes = np.zeros(len(carried), dtype=np.int8)
    if len(carried) > 1:
        prev, cur = carried[:-1], carried[1:]
        codes[1:][(prev < 0) & (cur > 0)] = BUY
        codes[1:][(prev > 0) & (cur < 0)] = SELL
    return codes


def crossover_signals(diff: DifferenceSeries) -> SignalSeries:
    return SignalSeries(dates=diff.dates, codes=signal_codes(diff.values))
