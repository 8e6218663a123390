"""Tests for the local and S3 price caches.

S3 is a MagicMock client; ClientError simulates missing keys and denied access.
"""

import threading
from datetime import date
from unittest.mock import MagicMock, patch

import pytest
from botocore.exceptions import ClientError

from cache import LocalCache, S3Cache, cache_key, open_cache
from errors import NetworkError
from marketdata import DateRange

RNG = DateRange(date(2019, 1, 1), date(2019, 12, 31))


def test_cache_key_is_ticker_and_range():
    assert cache_key("AMD", RNG) == "AMD_2019-01-01_2019-12-31.csv"


def test_cache_key_sanitizes_ticker():
    assert "/" not in cache_key("../etc", RNG)
    assert cache_key("^GSPC", RNG).endswith("_2019-01-01_2019-12-31.csv")


# --- local ------------------------------------------------------------------


def test_local_miss_returns_none(tmp_path):
    assert LocalCache(tmp_path / "cache").get("AMD", RNG) is None


def test_local_put_then_get(tmp_path):
    cache = LocalCache(tmp_path / "cache")
    path = cache.put("AMD", RNG, "Date,Open\n")
    assert path == cache.path_for("AMD", RNG)
    assert cache.get("AMD", RNG) == "Date,Open\n"
    # No temp files left behind by the atomic write.
    assert [p.name for p in (tmp_path / "cache").iterdir()] == [path.name]


def test_local_concurrent_writes_leave_one_complete_file(tmp_path):
    cache = LocalCache(tmp_path)
    bodies = [f"body-{i}\n" * 1000 for i in range(8)]
    threads = [threading.Thread(target=cache.put, args=("AMD", RNG, b)) for b in bodies]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert cache.get("AMD", RNG) in bodies


def test_local_key_locks_live_only_while_held(tmp_path):
    cache = LocalCache(tmp_path)
    held = cache._lock("pinned")
    assert cache._lock("pinned") is held

    paths = [cache.put(f"T{i}", RNG, "Date,Open\n") for i in range(50)]
    assert not any(str(p) in LocalCache._locks for p in paths)

    del held
    assert "pinned" not in LocalCache._locks


# --- S3---------------------------------------------------------------------


def _client_error(code, op):
    return ClientError({"Error": {"Code": code}}, op)


def test_s3_get_hit():
    s3 = MagicMock()
    s3.get_object.return_value = {"Body": MagicMock(read=MagicMock(return_value=b"csv-text"))}
    cache = S3Cache(s3, "prices", "daily/")
    assert cache.get("AMD", RNG) == "csv-text"
    s3.get_object.assert_called_once_with(Bucket="prices", Key="daily/AMD_2019-01-01_2019-12-31.csv")


@pytest.mark.parametrize("code", ["NoSuchKey", "404"])
def test_s3_missing_key_is_a_miss(code):
    s3 = MagicMock()
    s3.get_object.side_effect = _client_error(code, "GetObject")
    assert S3Cache(s3, "prices").get("AMD", RNG) is None


def test_s3_access_denied_is_network_error():
    s3 = MagicMock()
    s3.get_object.side_effect = _client_error("AccessDenied", "GetObject")
    with pytest.raises(NetworkError) as exc:
        S3Cache(s3, "prices").get("AMD", RNG)
    assert "AccessDenied" in str(exc.value)


def test_s3_put_writes_csv_object():
    s3 = MagicMock()
    location = S3Cache(s3, "prices", "daily").put("AMD", RNG, "csv-text")
    assert location == "s3://prices/daily/AMD_2019-01-01_2019-12-31.csv"
    kwargs = s3.put_object.call_args.kwargs
    assert kwargs["Body"] == b"csv-text"
    assert kwargs["ContentType"] == "text/csv"


def test_s3_put_failure_is_network_error():
    s3 = MagicMock()
    s3.put_object.side_effect = _client_error("NoSuchBucket", "PutObject")
    with pytest.raises(NetworkError):
        S3Cache(s3, "prices").put("AMD", RNG, "csv-text")


# --- selection ----------------------------------------------------------------


def test_open_cache_local_directory(tmp_path):
    assert isinstance(open_cache(tmp_path), LocalCache)


def test_open_cache_s3_location_uses_given_client():
    s3 = MagicMock()
    cache = open_cache("s3://prices/daily", s3_client=s3)
    assert isinstance(cache, S3Cache)
    assert (cache.bucket, cache.prefix, cache.s3_client) == ("prices", "daily", s3)


@patch("cache.boto3.Session")
def test_open_cache_s3_builds_client_from_default_chain(mock_session):
    cache = open_cache("s3://prices")
    mock_session.return_value.client.assert_called_once_with("s3")
    assert cache.prefix == ""


@patch("cache.boto3.Session", side_effect=Exception("no credentials"))
def test_open_cache_s3_client_failure_is_network_error(_):
    with pytest.raises(NetworkError):
        open_cache("s3://prices")
