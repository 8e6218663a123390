"""Tests for CSV parsing, slicing and the provider client.

The provider is a MagicMock session: the point is the status handling,
retry wiring and cache interplay, not a live download.
"""

from datetime import date
from unittest.mock import MagicMock

import pytest
import requests

from cache import LocalCache
from errors import (
    ConfigError,
    DuplicateDate,
    EmptySeries,
    MalformedCsv,
    NetworkError,
    UnknownTicker,
)
from marketdata import (
    CSV_HEADER,
    DateRange,
    adjusted_closes,
    build_session,
    fetch_history,
    load_csv,
    parse_csv,
    parse_date,
    provider_url,
    serialize_csv,
    slice_series,
)

RNG = DateRange(date(2019, 1, 1), date(2019, 1, 31))


# --- parsing ----------------------------------------------------------------


def test_sample_table_drops_null_row(fixtures_dir):
    series = load_csv(fixtures_dir / "GSPC_sample.csv", ticker="GSPC")
    assert len(series) == 3
    assert series.dropped_rows == 1
    assert series.first_date == date(2018, 1, 1)


def test_adjusted_closes_of_sample_table(fixtures_dir):
    series = load_csv(fixtures_dir / "GSPC_sample.csv")
    assert adjusted_closes(series) == [
        (date(2018, 1, 1), 1251.420044),
        (date(2018, 2, 1), 1201.869995),
        (date(2018, 3, 1), 1157.369995),
    ]


def test_columns_located_by_header_not_position():
    text = "Volume,Adj Close,Date,Close,Low,High,Open\n100,10.5,2020-01-02,10.5,10,11,10.2\n"
    series = parse_csv(text, ticker="X")
    bar = series.bars[0]
    assert bar.open == 10.2 and bar.high == 11 and bar.low == 10
    assert bar.adj_close == 10.5 and bar.volume == 100


def test_rows_sorted_by_date():
    text = CSV_HEADER + "\n2020-01-03,2,2,2,2,2,1\n2020-01-02,1,1,1,1,1,1\n"
    series = parse_csv(text)
    assert [p for _, p in adjusted_closes(series)] == [1.0, 2.0]


def test_header_only_is_empty_series():
    with pytest.raises(EmptySeries):
        parse_csv(CSV_HEADER + "\n")


def test_duplicate_date_rejected():
    text = CSV_HEADER + "\n2018/1/1,1,1,1,1,1,1\n2018/1/1,2,2,2,2,2,1\n"
    with pytest.raises(DuplicateDate):
        parse_csv(text)


@pytest.mark.parametrize(
    "text",
    [
        "Date,Open,High,Low,Close,Volume\n2020-01-02,1,1,1,1,1\n",
        CSV_HEADER + "\n2020-01-02,1,1,1,abc,1,1\n",
        CSV_HEADER + "\nnot-a-date,1,1,1,1,1,1\n",
        CSV_HEADER + "\n2020-01-02,1,1,1,1,1,1.5\n",
        CSV_HEADER + "\n2020-01-02,1,1,1,1,-1,1\n",
        CSV_HEADER + "\n2020-01-02,5,4,1,1,1,1\n",
    ],
    ids=["missing-column", "bad-number", "bad-date", "fractional-volume", "negative-adj", "high-below-open"],
)
def test_malformed_rows(text):
    with pytest.raises(MalformedCsv):
        parse_csv(text)


def test_both_date_formats_accepted():
    assert parse_date("2018/1/1") == date(2018, 1, 1)
    assert parse_date("2018-01-01") == date(2018, 1, 1)


def test_serialized_fixture_is_byte_identical(fixtures_dir):
    text = (fixtures_dir / "FRZN.csv").read_text()
    assert serialize_csv(parse_csv(text, ticker="FRZN")) == text


def test_parse_serialize_identity_on_random_series(make_series, np_rng):
    for _ in range(20):
        closes = np_rng.uniform(1, 500, size=int(np_rng.integers(1, 60)))
        series = make_series(closes)
        again = parse_csv(serialize_csv(series), ticker=series.ticker)
        assert list(again.adj_close) == list(series.adj_close)
        assert list(again.dates) == list(series.dates)


def test_series_arrays_are_read_only(make_series):
    series = make_series([1.0, 2.0, 3.0])
    with pytest.raises(ValueError):
        series.adj_close[0] = 5.0


# --- slicing ----------------------------------------------------------------


def test_slice_covering_everything_is_identity(make_series):
    series = make_series([1.0, 2.0, 3.0], start=date(2020, 1, 1))
    sliced = slice_series(series, DateRange(date(2019, 1, 1), date(2021, 1, 1)))
    assert adjusted_closes(sliced) == adjusted_closes(series)


def test_slice_middle_bar(make_series):
    series = make_series([1.0, 2.0, 3.0], start=date(2020, 1, 1))
    sliced = slice_series(series, DateRange(date(2020, 1, 2), date(2020, 1, 2)))
    assert adjusted_closes(sliced) == [(date(2020, 1, 2), 2.0)]


def test_slice_before_first_date(make_series):
    series = make_series([1.0, 2.0, 3.0], start=date(2020, 1, 1))
    with pytest.raises(EmptySeries):
        slice_series(series, DateRange(date(2019, 1, 1), date(2019, 12, 31)))


def test_slice_is_idempotent_and_within_range(make_series, np_rng):
    series = make_series(np_rng.uniform(10, 20, size=100), start=date(2020, 1, 1))
    rng = DateRange(date(2020, 2, 1), date(2020, 3, 1))
    once = slice_series(series, rng)
    assert all(d in rng for d, _ in adjusted_closes(once))
    assert adjusted_closes(slice_series(once, rng)) == adjusted_closes(once)


def test_date_range_rejects_reversed_bounds():
    with pytest.raises(ConfigError):
        DateRange(date(2020, 2, 1), date(2020, 1, 1))


# --- provider ---------------------------------------------------------------


def _session(status=200, text=""):
    session = MagicMock()
    session.get.return_value = MagicMock(status_code=status, text=text)
    return session


def test_provider_url_fills_placeholders():
    url = provider_url("https://example.test/{ticker}?a={period1}&b={period2}", "AMD", RNG)
    assert url.startswith("https://example.test/AMD?a=")
    assert "{" not in url


def test_fetch_writes_cache_and_replays_offline(tmp_path, fixtures_dir):
    cache = LocalCache(tmp_path)
    body = (fixtures_dir / "FRZN.csv").read_text()
    online = _session(text=body)
    series = fetch_history("FRZN", RNG, "https://example.test/{ticker}", cache=cache, session=online)
    assert len(series) == 20
    assert cache.path_for("FRZN", RNG).exists()

    offline = MagicMock()
    offline.get.side_effect = requests.ConnectionError("offline")
    again = fetch_history("FRZN", RNG, "https://example.test/{ticker}", cache=cache, session=offline)
    offline.get.assert_not_called()
    assert adjusted_closes(again) == adjusted_closes(series)


def test_fetch_slices_to_range(fixtures_dir):
    body = (fixtures_dir / "FRZN.csv").read_text()
    rng = DateRange(date(2019, 1, 15), date(2019, 1, 17))
    series = fetch_history("FRZN", rng, "https://example.test/{ticker}", session=_session(text=body))
    assert [p for _, p in adjusted_closes(series)] == [19.0, 20.0, 21.0]


@pytest.mark.parametrize("status", [400, 404])
def test_fetch_unknown_ticker_status(status):
    with pytest.raises(UnknownTicker) as exc:
        fetch_history("NOPE", RNG, "https://example.test/{ticker}", session=_session(status=status))
    assert "NOPE" in str(exc.value)


def test_fetch_empty_body_is_unknown_ticker():
    with pytest.raises(UnknownTicker):
        fetch_history("NOPE", RNG, "https://example.test/{ticker}", session=_session(text=CSV_HEADER + "\n"))


@pytest.mark.parametrize(
    "status, fragment",
    [(401, "Access denied"), (403, "Access denied"), (429, "Rate limited"), (502, "HTTP 502")],
)
def test_fetch_provider_errors_map_to_network_error(status, fragment):
    with pytest.raises(NetworkError) as exc:
        fetch_history("AMD", RNG, "https://example.test/{ticker}", session=_session(status=status))
    assert fragment in str(exc.value)


def test_fetch_connection_failure_is_network_error():
    session = MagicMock()
    session.get.side_effect = requests.ConnectionError("boom")
    with pytest.raises(NetworkError):
        fetch_history("AMD", RNG, "https://example.test/{ticker}", session=session)


def test_fetch_rejects_blank_ticker():
    with pytest.raises(ConfigError):
        fetch_history("  ", RNG, "https://example.test/{ticker}", session=_session())


def test_session_retries_server_errors():
    adapter = build_session(retries=4).get_adapter("https://example.test")
    assert adapter.max_retries.total == 4
    assert 503 in adapter.max_retries.status_forcelist
