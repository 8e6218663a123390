"""REST API server for QuantBench: backtests and grid searches as a web service.

Request bodies are validated through the same RunConfig as the CLI, and the
CLI's exit codes map onto HTTP statuses.
"""

import logging
import uuid
from dataclasses import asdict
from datetime import date
from typing import Any, Dict, List, Optional

from fastapi import FastAPI, HTTPException, Request
from fastapi.concurrency import run_in_threadpool
from pydantic import BaseModel, Field

from backtest import StrategyKind, run_backtest
from cache import open_cache
from config import RunConfig, build_config
from errors import EXIT_DATA, EXIT_MODEL, EXIT_USAGE, QuantbenchError
from logs import run_id_var
from marketdata import DateRange, build_session, fetch_history
from optimizer import GroupBy, RankMetric, aggregate, enumerate_pairs, rank, run_grid, scatter_export
from version import __version__

logger = logging.getLogger(__name__)

HTTP_STATUS = {EXIT_USAGE: 400, EXIT_DATA: 422, EXIT_MODEL: 500}

app = FastAPI(
    title="QuantBench API",
    description="Backtest SMA crossover and predictive strategies, and grid-search crossover periods",
    version=__version__,
)


@app.middleware("http")
async def request_id_middleware(request: Request, call_next):
    """Bind the caller's X-Request-ID (or a new one) as the run id for every
    log line of this request."""
    request_id = request.headers.get("X-Request-ID") or uuid.uuid4().hex[:16]
    token = run_id_var.set(request_id)
    try:
        response = await call_next(request)
    finally:
        run_id_var.reset(token)
    response.headers["X-Request-ID"] = request_id
    return response


class BacktestRequest(BaseModel):
    ticker: str = Field(..., description="Ticker symbol")
    start: date = Field(..., description="Evaluation start")
    end: date
    strategy: StrategyKind = StrategyKind.CROSSOVER
    short: Optional[int] = Field(None, description="Short SMA period (crossover)")
    long: Optional[int] = Field(None, description="Long SMA period (crossover)")
    train_start: Optional[date] = Field(None, description="Training start (linreg/knn)")
    seed: int = 0
    test_fraction: Optional[float] = None
    knn_minmax: Optional[bool] = None


class OptimizeRequest(BaseModel):
    tickers: List[str] = Field(..., min_length=1)
    start: date
    end: date
    short_min: Optional[int] = None
    short_max: Optional[int] = None
    long_min: Optional[int] = None
    long_max: Optional[int] = None
    workers: int = Field(1, ge=1)
    ratio_width: Optional[float] = None
    top: Optional[int] = None


class OptimizeResponse(BaseModel):
    requested: int
    completed: int
    skipped: List[Dict[str, Any]] = []
    correlation: Optional[float] = None
    top_outperformance: List[Dict[str, Any]] = []
    top_volatility: List[Dict[str, Any]] = []
    per_short: List[Dict[str, Any]] = []
    per_long: List[Dict[str, Any]] = []
    per_ratio: List[Dict[str, Any]] = []


def _http_error(e: QuantbenchError) -> HTTPException:
    return HTTPException(status_code=HTTP_STATUS.get(e.exit_code, 500), detail=str(e))


def _config(command: str, body: BaseModel) -> RunConfig:
    flags = body.model_dump(exclude_none=True)
    if "ticker" in flags:
        flags["tickers"] = [flags.pop("ticker")]
    return build_config({"command": command, **flags})


def _loader(config: RunConfig):
    cache = open_cache(config.cache_dir)
    session = build_session()
    return lambda ticker, rng: fetch_history(ticker, rng, config.provider_url, cache=cache, session=session)


def _backtest(request: BacktestRequest) -> Dict[str, Any]:
    config = _config("backtest", request)
    backtest_config = config.backtest_config()
    series = _loader(config)(config.ticker, config.fetch_range)
    return run_backtest(series, backtest_config).to_json_dict()


def _aggregate_rows(aggregates) -> List[Dict[str, Any]]:
    return [
        {"key": a.key, "meanOutperformancePct": a.mean_outperformance_pct,
         "meanVolatilityRatio": a.mean_volatility_ratio, "trials": a.count}
        for a in aggregates
    ]


def _optimize(request: OptimizeRequest) -> OptimizeResponse:
    config = _config("optimize", request)
    pairs = enumerate_pairs(config.short_min, config.short_max, config.long_min, config.long_max)
    result = run_grid(
        config.tickers, DateRange(config.start, config.end), pairs, _loader(config), workers=config.workers
    )
    per_pair = aggregate(result.records, GroupBy.PAIR)
    return OptimizeResponse(
        requested=result.requested,
        completed=len(result.records),
        skipped=[
            {"ticker": s.ticker, "short": s.pair.short, "long": s.pair.long, "reason": s.reason}
            for s in result.skipped
        ],
        correlation=scatter_export(result.records).correlation,
        top_outperformance=[asdict(r) for r in rank(per_pair, RankMetric.OUTPERFORMANCE_DESC).top(config.top)],
        top_volatility=[asdict(r) for r in rank(per_pair, RankMetric.VOLATILITY_ASC).top(config.top)],
        per_short=_aggregate_rows(aggregate(result.records, GroupBy.SHORT)),
        per_long=_aggregate_rows(aggregate(result.records, GroupBy.LONG)),
        per_ratio=_aggregate_rows(aggregate(result.records, GroupBy.RATIO_BUCKET, config.ratio_width)),
    )


@app.get("/", tags=["Health"])
async def root():
    return {"status": "healthy", "service": "QuantBench API"}


@app.get("/health", tags=["Health"])
async def health_check():
    return {"status": "healthy", "service": "QuantBench API", "version": __version__}


@app.post("/backtest", tags=["Backtest"])
async def backtest(request: BacktestRequest):
    """Run one strategy on one ticker and return the report with both curves."""
    logger.info("Backtest requested: %s %s %s..%s", request.ticker, request.strategy.value, request.start, request.end)
    try:
        return await run_in_threadpool(_backtest, request)
    except QuantbenchError as e:
        logger.error("Backtest failed: %s", e)
        raise _http_error(e)


@app.post("/optimize", response_model=OptimizeResponse, tags=["Optimize"])
async def optimize(request: OptimizeRequest):
    """Grid-search crossover periods over the given tickers."""
    logger.info("Optimize requested: %d ticker(s) %s..%s", len(request.tickers), request.start, request.end)
    try:
        return await run_in_threadpool(_optimize, request)
    except QuantbenchError as e:
        logger.error("Optimize failed: %s", e)
        raise _http_error(e)


# Server entry point for running with uvicorn
if __name__ == "__main__":
    import uvicorn

    uvicorn.run(app, host="0.0.0.0", port=8000, log_config=None)
