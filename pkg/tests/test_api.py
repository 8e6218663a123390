"""Tests for the REST API.

Price loading is patched to read the frozen fixture; handlers are driven both
directly and through FastAPI's TestClient (for status codes and middleware).
"""

import asyncio
from datetime import date
from unittest.mock import patch

import pytest
from fastapi import HTTPException
from fastapi.testclient import TestClient

from api import BacktestRequest, OptimizeRequest, app, backtest, optimize
from config import build_config
from errors import SingularSystem, UnknownTicker
from marketdata import load_csv

client = TestClient(app)

BACKTEST_BODY = {"ticker": "FRZN", "start": "2019-01-02", "end": "2019-01-30", "short": 5, "long": 10}


@pytest.fixture
def fixture_loader(fixtures_dir):
    def load(ticker, rng):
        if ticker not in ("FRZN", "FRZB"):
            raise UnknownTicker(ticker)
        return load_csv(fixtures_dir / "FRZN.csv", ticker=ticker)

    with patch("api._loader", return_value=load) as loader:
        yield loader


# --- health -------------------------------------------------------------------


def test_health():
    response = client.get("/health")
    assert response.status_code == 200
    assert response.json()["status"] == "healthy"


def test_request_id_is_echoed():
    response = client.get("/", headers={"X-Request-ID": "abc123"})
    assert response.headers["X-Request-ID"] == "abc123"


def test_request_id_generated_when_missing():
    assert len(client.get("/").headers["X-Request-ID"]) == 16


# --- backtest -------------------------------------------------------------------


def test_backtest_handler_returns_report(fixture_loader):
    body = asyncio.run(backtest(BacktestRequest(**BACKTEST_BODY)))
    assert body["ticker"] == "FRZN"
    assert body["indicative_final"] == 16.0
    assert body["curves"]["Date"][0] == "2019-01-15"
    assert body["outperformance_pct"] == pytest.approx(300 / 11)


def test_backtest_over_http(fixture_loader):
    response = client.post("/backtest", json=BACKTEST_BODY)
    assert response.status_code == 200
    assert response.json()["trades"] == 1


def test_backtest_invalid_periods_is_400(fixture_loader):
    response = client.post("/backtest", json={**BACKTEST_BODY, "short": 10, "long": 5})
    assert response.status_code == 400
    assert "short period" in response.json()["detail"]
    fixture_loader.assert_not_called()


def test_backtest_unknown_ticker_is_422(fixture_loader):
    with pytest.raises(HTTPException) as exc:
        asyncio.run(backtest(BacktestRequest(**{**BACKTEST_BODY, "ticker": "NOPE"})))
    assert exc.value.status_code == 422


@patch("api.run_backtest", side_effect=SingularSystem("normal equations are singular"))
def test_backtest_model_failure_is_500(_, fixture_loader):
    response = client.post("/backtest", json=BACKTEST_BODY)
    assert response.status_code == 500
    assert "singular" in response.json()["detail"]


def test_backtest_request_schema_is_validated():
    assert client.post("/backtest", json={"ticker": "FRZN"}).status_code == 422


def test_backtest_engine_config_error_is_400(fixture_loader):
    flags = {k: v for k, v in BACKTEST_BODY.items() if k != "ticker"}
    valid = build_config({"command": "backtest", "tickers": ["FRZN"], **flags})
    inverted = valid.model_copy(update={"short": 20})
    with patch("api.build_config", return_value=inverted):
        response = client.post("/backtest", json=BACKTEST_BODY)
    assert response.status_code == 400
    assert "Invalid backtest configuration" in response.json()["detail"]
    fixture_loader.assert_not_called()


# --- optimize ---------------------------------------------------------------------


def test_optimize_handler(fixture_loader):
    request = OptimizeRequest(
        tickers=["FRZN", "FRZB", "NOPE"],
        start=date(2019, 1, 2),
        end=date(2019, 1, 30),
        short_min=2,
        short_max=3,
        long_min=5,
        long_max=6,
        top=2,
    )
    result = asyncio.run(optimize(request))
    assert result.requested == 12
    assert result.completed == 8
    assert {s["ticker"] for s in result.skipped} == {"NOPE"}
    assert len(result.top_outperformance) == 2
    assert [row["key"] for row in result.per_short] == [2, 3]


def test_optimize_over_http(fixture_loader):
    body = {
        "tickers": ["FRZN"],
        "start": "2019-01-02",
        "end": "2019-01-30",
        "short_min": 2,
        "short_max": 3,
        "long_min": 5,
        "long_max": 6,
    }
    response = client.post("/optimize", json=body)
    assert response.status_code == 200
    assert response.json()["completed"] == 4


def test_optimize_empty_grid_is_400(fixture_loader):
    body = {
        "tickers": ["FRZN"],
        "start": "2019-01-02",
        "end": "2019-01-30",
        "short_min": 5,
        "short_max": 6,
        "long_min": 1,
        "long_max": 4,
    }
    assert client.post("/optimize", json=body).status_code == 400


def test_optimize_needs_tickers():
    body = {"tickers": [], "start": "2019-01-02", "end": "2019-01-30"}
    assert client.post("/optimize", json=body).status_code == 422
