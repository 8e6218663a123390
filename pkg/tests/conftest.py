import os
import sys
from datetime import date, timedelta
from pathlib import Path

import numpy as np
import pytest

# Make the application modules under src/ importable from tests.
sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from marketdata import PriceSeries  # noqa: E402

FIXTURES = Path(__file__).parent / "fixtures"


def series_from_closes(closes, ticker="TEST", start=date(2020, 1, 1), volume=None):
    """Daily series (calendar days) whose OHLC all equal the given closes."""
    closes = np.asarray(closes, dtype=np.float64)
    n = len(closes)
    return PriceSeries(
        ticker=ticker,
        dates=[start + timedelta(days=i) for i in range(n)],
        open=closes,
        high=closes,
        low=closes,
        close=closes,
        adj_close=closes,
        volume=np.full(n, 1000, dtype=np.int64) if volume is None else volume,
    )


@pytest.fixture
def fixtures_dir():
    return FIXTURES


@pytest.fixture
def make_series():
    return series_from_closes


@pytest.fixture
def np_rng():
    return np.random.default_rng(12345)
