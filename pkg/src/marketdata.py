"""Historical price series: parsing, validation, slicing and fetching.

The wire format is the daily-history CSV of the public finance data provider:
``Date,Open,High,Low,Close,Adj Close,Volume``. Rows carrying ``null`` in any
numeric field (the provider emits them for non-trading placeholders) are
dropped and counted, never interpolated.
"""

import io
import logging
import re
from dataclasses import dataclass, field
from datetime import date, datetime, time, timedelta, timezone
from pathlib import Path
from typing import List, Optional, Tuple, Union

import numpy as np
import pandas as pd
import requests
from requests.adapters import HTTPAdapter
from urllib3.util.retry import Retry

from errors import (
    ConfigError,
    DuplicateDate,
    EmptySeries,
    MalformedCsv,
    NetworkError,
    UnknownTicker,
)

logger = logging.getLogger(__name__)

CSV_HEADER = "Date,Open,High,Low,Close,Adj Close,Volume"
COLUMNS = ["Date", "Open", "High", "Low", "Close", "Adj Close", "Volume"]
PRICE_COLUMNS = ["Open", "High", "Low", "Close", "Adj Close"]
NULL_TOKENS = {"", "null", "NULL", "nan", "NaN"}
DATE_FORMATS = ("%Y-%m-%d", "%Y/%m/%d")

DEFAULT_PROVIDER_URL = (
    "https://query1.finance.yahoo.com/v7/finance/download/{ticker}"
    "?period1={period1}&period2={period2}&interval=1d&events=history"
)


def parse_date(text: str) -> date:
    """Accepts YYYY-MM-DD and YYYY/M/D."""
    text = text.strip()
    for fmt in DATE_FORMATS:
        try:
            return datetime.strptime(text, fmt).date()
        except ValueError:
            continue
    raise MalformedCsv(f"Unparseable date '{text}' (expected YYYY-MM-DD or YYYY/M/D).")


@dataclass(frozen=True)
class DateRange:
    """Inclusive calendar range."""

    start: date
    end: date

    def __post_init__(self):
        if self.start > self.end:
            raise ConfigError(f"Range start {self.start} is after end {self.end}.")

    def __contains__(self, day: date) -> bool:
        return self.start <= day <= self.end

    def __str__(self):
        return f"{self.start.isoformat()}..{self.end.isoformat()}"


@dataclass(frozen=True)
class Bar:
    date: date
    open: float
    high: float
    low: float
    close: float
    adj_close: float
    volume: int

    def __post_init__(self):
        check_bar_values(
            self.date, self.open, self.high, self.low, self.close, self.adj_close, self.volume
        )


def check_bar_values(day, open_, high, low, close, adj_close, volume):
    if not adj_close > 0:
        raise MalformedCsv(f"Non-positive adjusted close on {day}.")
    if volume < 0:
        raise MalformedCsv(f"Negative volume on {day}.")
    if not (low <= min(open_, close) and max(open_, close) <= high):
        raise MalformedCsv(f"Bar on {day} violates low <= open/close <= high.")


def _frozen(values, dtype) -> np.ndarray:
    arr = np.array(values, dtype=dtype)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class PriceSeries:
    """Dated daily bars for one ticker, strictly increasing by date.

    Columns are stored as read-only numpy arrays so a series can be shared
    across threads and worker processes without copying on every access.
    """

    ticker: str
    dates: np.ndarray
    open: np.ndarray
    high: np.ndarray
    low: np.ndarray
    close: np.ndarray
    adj_close: np.ndarray
    volume: np.ndarray
    dropped_rows: int = field(default=0, compare=False)

    def __post_init__(self):
        for name in ("dates", "open", "high", "low", "close", "adj_close", "volume"):
            dtype = {"dates": "datetime64[D]", "volume": np.int64}.get(name, np.float64)
            object.__setattr__(self, name, _frozen(getattr(self, name), dtype))
        n = len(self.dates)
        if n == 0:
            raise EmptySeries(f"Price series for '{self.ticker}' has no bars.")
        if any(len(getattr(self, c)) != n for c in ("open", "high", "low", "close", "adj_close", "volume")):
            raise MalformedCsv("Price series columns have different lengths.")
        steps = np.diff(self.dates).astype(np.int64)
        if np.any(steps == 0):
            dup = self.dates[1:][steps == 0][0]
            raise DuplicateDate(f"Duplicate date {dup} in series '{self.ticker}'.")
        if np.any(steps < 0):
            raise MalformedCsv(f"Dates of series '{self.ticker}' are not increasing.")

    def __len__(self):
        return len(self.dates)

    @property
    def first_date(self) -> date:
        return self.dates[0].item()

    @property
    def last_date(self) -> date:
        return self.dates[-1].item()

    @property
    def bars(self) -> Tuple[Bar, ...]:
        return tuple(
            Bar(d.item(), float(o), float(h), float(lo), float(c), float(a), int(v))
            for d, o, h, lo, c, a, v in zip(
                self.dates, self.open, self.high, self.low, self.close, self.adj_close, self.volume
            )
        )

    def features(self) -> np.ndarray:
        """Per-day feature rows: open, high, low, close, adj close, volume."""
        return np.column_stack(
            [self.open, self.high, self.low, self.close, self.adj_close, self.volume.astype(np.float64)]
        )

    def take(self, mask_or_index) -> "PriceSeries":
        return PriceSeries(
            ticker=self.ticker,
            dates=self.dates[mask_or_index],
            open=self.open[mask_or_index],
            high=self.high[mask_or_index],
            low=self.low[mask_or_index],
            close=self.close[mask_or_index],
            adj_close=self.adj_close[mask_or_index],
            volume=self.volume[mask_or_index],
        )


# --- CSV ---------------------------------------------------------------------


def parse_csv(text: Union[str, io.TextIOBase], ticker: str = "") -> PriceSeries:
    """Parse provider CSV into a PriceSeries.

    Columns are located by header name, not position. Rows with any null
    numeric field are dropped and counted on `dropped_rows`.
    """
    if not isinstance(text, str):
        text = text.read()
    try:
        frame = pd.read_csv(io.StringIO(text), dtype=str, keep_default_na=False)
    except pd.errors.EmptyDataError:
        raise MalformedCsv("CSV input is empty (no header row).")
    except pd.errors.ParserError as e:
        raise MalformedCsv(f"CSV could not be parsed: {e}")

    frame.columns = [c.strip() for c in frame.columns]
    missing = [c for c in COLUMNS if c not in frame.columns]
    if missing:
        raise MalformedCsv(f"CSV is missing required columns: {missing}")

    numeric = frame[COLUMNS[1:]].apply(lambda col: col.str.strip())
    null_rows = numeric.isin(NULL_TOKENS).any(axis=1)
    dropped = int(null_rows.sum())
    if dropped:
        logger.warning("Dropped %d row(s) with null fields from '%s' CSV.", dropped, ticker or "?")
    frame = frame[~null_rows]
    numeric = numeric[~null_rows]

    if frame.empty:
        raise EmptySeries(f"CSV for '{ticker or '?'}' has no fully-populated rows.")

    days = [parse_date(d) for d in frame["Date"]]
    try:
        values = numeric.apply(pd.to_numeric, errors="raise")
    except (ValueError, TypeError) as e:
        raise MalformedCsv(f"Unparseable number in CSV: {e}")

    volume = values["Volume"].to_numpy(dtype=np.float64)
    if np.any(volume != np.floor(volume)):
        raise MalformedCsv("Volume must be a whole number of shares.")

    order = np.argsort(np.array(days, dtype="datetime64[D]"), kind="stable")
    cols = {c: values[c].to_numpy(dtype=np.float64)[order] for c in PRICE_COLUMNS}
    volume = volume[order].astype(np.int64)
    days = [days[i] for i in order]

    for i, day in enumerate(days):
        check_bar_values(
            day,
            cols["Open"][i],
            cols["High"][i],
            cols["Low"][i],
            cols["Close"][i],
            cols["Adj Close"][i],
            volume[i],
        )

    return PriceSeries(
        ticker=ticker,
        dates=days,
        open=cols["Open"],
        high=cols["High"],
        low=cols["Low"],
        close=cols["Close"],
        adj_close=cols["Adj Close"],
        volume=volume,
        dropped_rows=dropped,
    )


def serialize_csv(series: PriceSeries) -> str:
    """Inverse of parse_csv: provider header, ISO dates, shortest round-trip floats."""
    lines = [CSV_HEADER]
    for bar in series.bars:
        lines.append(
            ",".join(
                [
                    bar.date.isoformat(),
                    repr(bar.open),
                    repr(bar.high),
                    repr(bar.low),
                    repr(bar.close),
                    repr(bar.adj_close),
                    str(bar.volume),
                ]
            )
        )
    return "\n".join(lines) + "\n"


def load_csv(path: Union[str, Path], ticker: Optional[str] = None) -> PriceSeries:
    path = Path(path)
    return parse_csv(path.read_text(), ticker=ticker or path.stem.split("_")[0])


# --- slicing -----------------------------------------------------------------


def slice_series(series: PriceSeries, rng: DateRange) -> PriceSeries:
    """Bars with rng.start <= date <= rng.end, order preserved."""
    start = np.datetime64(rng.start, "D")
    end = np.datetime64(rng.end, "D")
    mask = (series.dates >= start) & (series.dates <= end)
    if not mask.any():
        raise EmptySeries(f"No bars of '{series.ticker}' fall in {rng}.")
    return series.take(mask)


def adjusted_closes(series: PriceSeries) -> List[Tuple[date, float]]:
    return [(d.item(), float(p)) for d, p in zip(series.dates, series.adj_close)]


# --- provider ----------------------------------------------------------------


# Provider HTTP statuses with a user-actionable message. Anything not listed
# falls through to a generic NetworkError naming the status.
_PROVIDER_ERROR_MESSAGES = {
    401: "Access denied by the data provider (HTTP 401); check the provider URL/key.",
    403: "Access denied by the data provider (HTTP 403); check the provider URL/key.",
    429: "Rate limited by the data provider (HTTP 429); retry later.",
}


def _provider_error(status: int, ticker: str):
    if status in (400, 404):
        return UnknownTicker(ticker)
    message = _PROVIDER_ERROR_MESSAGES.get(
        status, f"Data provider returned HTTP {status} for '{ticker}'."
    )
    return NetworkError(message)


def _epoch(day: date) -> int:
    return int(datetime.combine(day, time(), tzinfo=timezone.utc).timestamp())


def provider_url(template: str, ticker: str, rng: DateRange) -> str:
    return template.format(
        ticker=ticker,
        start=rng.start.isoformat(),
        end=rng.end.isoformat(),
        period1=_epoch(rng.start),
        period2=_epoch(rng.end + timedelta(days=1)),
    )


def build_session(retries: int = 3, backoff: float = 0.5) -> requests.Session:
    """HTTP session retrying connection errors and 5xx with exponential backoff."""
    retry = Retry(
        total=retries,
        backoff_factor=backoff,
        status_forcelist=(500, 502, 503, 504),
        allowed_methods=frozenset({"GET"}),
        raise_on_status=False,
    )
    session = requests.Session()
    session.mount("https://", HTTPAdapter(max_retries=retry))
    session.mount("http://", HTTPAdapter(max_retries=retry))
    session.headers["User-Agent"] = "quantbench/1.0"
    return session


def fetch_history(
    ticker: str,
    rng: DateRange,
    provider: str = DEFAULT_PROVIDER_URL,
    cache=None,
    session: Optional[requests.Session] = None,
    timeout: float = 30.0,
) -> PriceSeries:
    """Download (or replay from cache) the daily history of `ticker` over `rng`.

    A cache hit never touches the network. A successful download is written
    back to the cache under the (ticker, start, end) key.
    """
    ticker = (ticker or "").strip()
    if not ticker:
        raise ConfigError("Ticker must be non-empty.")

    if cache is not None:
        cached = cache.get(ticker, rng)
        if cached is not None:
            logger.info("Cache hit for %s %s", ticker, rng)
            return parse_csv(cached, ticker=ticker)

    url = provider_url(provider, ticker, rng)
    logger.info("Downloading %s %s from %s", ticker, rng, url)
    session = session or build_session()
    try:
        response = session.get(url, timeout=timeout)
    except requests.RequestException as e:
        logger.error("Request for '%s' failed: %s", ticker, e, exc_info=True)
        raise NetworkError(f"Could not reach the data provider for '{ticker}': {e}")

    if response.status_code != 200:
        raise _provider_error(response.status_code, ticker)
    body = response.text
    if not body.strip():
        raise UnknownTicker(ticker)

    try:
        series = parse_csv(body, ticker=ticker)
    except EmptySeries:
        raise UnknownTicker(ticker)
    try:
        series = slice_series(series, rng)
    except EmptySeries:
        raise UnknownTicker(ticker)

    if cache is not None:
        cache.put(ticker, rng, serialize_csv(series))
    logger.info("Fetched %d bars for %s (%d null rows dropped)", len(series), ticker, series.dropped_rows)
    return series


_SAFE_TICKER_RE = re.compile(r"[^A-Za-z0-9.\-]")


def safe_ticker(ticker: str) -> str:
    """Filesystem/object-key safe form of a ticker (``^DJI`` -> ``_DJI``)."""
    return _SAFE_TICKER_RE.sub("_", ticker)
