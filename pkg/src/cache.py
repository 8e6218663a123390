"""On-disk and S3 caches for downloaded price histories.

Both backends store one provider-format CSV per (ticker, start, end) key and
never expire entries. A location of the form ``s3://bucket/prefix`` selects the
S3 backend so several hosts (or API replicas) can share one cache.
"""

import logging
import os
import tempfile
import threading
import weakref
from pathlib import Path
from typing import Optional

import boto3
from botocore.exceptions import ClientError

from errors import NetworkError
from marketdata import DateRange, safe_ticker

logger = logging.getLogger(__name__)


def cache_key(ticker: str, rng: DateRange) -> str:
    return f"{safe_ticker(ticker)}_{rng.start.isoformat()}_{rng.end.isoformat()}.csv"


class _KeyLock:
    """A lock the weak-value registry can drop once no writer holds it."""

    __slots__ = ("_lock", "__weakref__")

    def __init__(self):
        self._lock = threading.Lock()

    def __enter__(self):
        self._lock.acquire()
        return self

    def __exit__(self, *exc):
        self._lock.release()


class LocalCache:
    """Directory of CSV files. Writes are atomic and serialized per key."""

    _locks: "weakref.WeakValueDictionary[str, _KeyLock]" = weakref.WeakValueDictionary()
    _locks_guard = threading.Lock()

    def __init__(self, directory):
        self.directory = Path(directory)

    def __repr__(self):
        return f"LocalCache({str(self.directory)!r})"

    def path_for(self, ticker: str, rng: DateRange) -> Path:
        return self.directory / cache_key(ticker, rng)

    def _lock(self, key: str) -> _KeyLock:
        with self._locks_guard:
            lock = self._locks.get(key)
            if lock is None:
                lock = self._locks[key] = _KeyLock()
            return lock

    def get(self, ticker: str, rng: DateRange) -> Optional[str]:
        path = self.path_for(ticker, rng)
        if not path.exists():
            return None
        return path.read_text()

    def put(self, ticker: str, rng: DateRange, text: str) -> Path:
        path = self.path_for(ticker, rng)
        with self._lock(str(path)):
            self.directory.mkdir(parents=True, exist_ok=True)
            fd, tmp = tempfile.mkstemp(dir=self.directory, prefix=".tmp-", suffix=".csv")
            try:
                with os.fdopen(fd, "w") as handle:
                    handle.write(text)
                os.replace(tmp, path)
            except BaseException:
                if os.path.exists(tmp):
                    os.unlink(tmp)
                raise
        logger.info("Cached %s -> %s", cache_key(ticker, rng), path)
        return path


class S3Cache:
    """Objects under ``s3://bucket/prefix/`` with the same keys as LocalCache."""

    def __init__(self, s3_client, bucket: str, prefix: str = ""):
        self.s3_client = s3_client
        self.bucket = bucket
        self.prefix = prefix.strip("/")

    def __repr__(self):
        return f"S3Cache('s3://{self.bucket}/{self.prefix}')"

    def path_for(self, ticker: str, rng: DateRange) -> str:
        key = cache_key(ticker, rng)
        return f"{self.prefix}/{key}" if self.prefix else key

    def get(self, ticker: str, rng: DateRange) -> Optional[str]:
        key = self.path_for(ticker, rng)
        try:
            resp = self.s3_client.get_object(Bucket=self.bucket, Key=key)
        except ClientError as e:
            code = e.response.get("Error", {}).get("Code")
            if code in ("NoSuchKey", "404"):
                return None
            logger.error("Reading s3://%s/%s failed (%s)", self.bucket, key, code, exc_info=True)
            raise NetworkError(f"Could not read cache object s3://{self.bucket}/{key} ({code}).")
        return resp["Body"].read().decode("utf-8")

    def put(self, ticker: str, rng: DateRange, text: str) -> str:
        key = self.path_for(ticker, rng)
        try:
            self.s3_client.put_object(
                Bucket=self.bucket,
                Key=key,
                Body=text.encode("utf-8"),
                ContentType="text/csv",
            )
        except ClientError as e:
            code = e.response.get("Error", {}).get("Code")
            logger.error("Writing s3://%s/%s failed (%s)", self.bucket, key, code, exc_info=True)
            raise NetworkError(f"Could not write cache object s3://{self.bucket}/{key} ({code}).")
        logger.info("Cached %s -> s3://%s/%s", cache_key(ticker, rng), self.bucket, key)
        return f"s3://{self.bucket}/{key}"


def get_s3_client(region=None):
    """S3 client from the default credential chain (env, profile, role)."""
    try:
        return boto3.Session(region_name=region).client("s3")
    except Exception as e:
        logger.error("Error initializing S3 client: %s", e, exc_info=True)
        raise NetworkError(f"Could not initialize the S3 cache client: {e}")


def open_cache(location, s3_client=None):
    location = str(location)
    if location.startswith("s3://"):
        bucket, _, prefix = location[len("s3://"):].partition("/")
        return S3Cache(s3_client or get_s3_client(), bucket, prefix)
    return LocalCache(location)
