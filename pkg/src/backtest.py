"""Strategy backtests and the comparison metrics.

Two equity curves are produced for every run. Continuous investing holds the
stock for the whole evaluation window. Indicative investing captures a day's
price change only while the strategy holds a Bought position.
"""

import logging
from datetime import date
from enum import Enum
from typing import Any, Dict, List, Literal, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from errors import (
    InvalidCandidate,
    MisalignedCurves,
    ModelError,
    PeriodOrderViolation,
    PredictiveStepError,
    SeriesTooShort,
    TooFewValues,
    ZeroDenominator,
    ZeroPeriod,
    ZeroVariance,
)
from indicators import BUY, SELL, align_crop, crossover_signals, difference, signal_codes, sma
from marketdata import PriceSeries
from models import (
    DEFAULT_FOLDS,
    DEFAULT_K_CANDIDATES,
    DEFAULT_RIDGE,
    FeatureMatrix,
    ScalerKind,
    apply_scaler,
    fit_knn,
    fit_linear,
    fit_scaler,
    grid_search_k,
    predict_knn,
    predict_knn_many,
    predict_linear,
    r2_score,
    train_test_split,
)

logger = logging.getLogger(__name__)

MIN_TRAINING_BARS = 30
# derived metrics in written reports; curves keep full precision
REPORT_DECIMALS = 10
ROUNDED_FIELDS = ("outperformance_pct", "volatility_ratio", "avg_confidence", "initial_confidence")


class CurveLabel(str, Enum):
    CONTINUOUS = "Continuous"
    INDICATIVE = "Indicative"


class Position(str, Enum):
    BOUGHT = "Bought"
    FLAT = "Flat"


class StrategyKind(str, Enum):
    CROSSOVER = "crossover"
    LINREG = "linreg"
    KNN = "knn"


class EquityCurve(BaseModel):
    """Dated portfolio values."""

    model_config = ConfigDict(frozen=True)

    label: CurveLabel
    dates: List[date]
    values: List[float]

    @model_validator(mode="after")
    def _check_shape(self):
        if len(self.dates) != len(self.values):
            raise ValueError("curve dates and values differ in length")
        if any(b <= a for a, b in zip(self.dates, self.dates[1:])):
            raise ValueError("curve dates must be strictly increasing")
        return self

    def __len__(self):
        return len(self.values)

    @property
    def final(self) -> float:
        return self.values[-1]


class BacktestConfig(BaseModel):
    """What to run. Predictive strategies need train_start < eval_start."""

    model_config = ConfigDict(use_enum_values=False)

    strategy: StrategyKind
    short: Optional[int] = Field(None, ge=1)
    long: Optional[int] = Field(None, ge=2)
    train_start: Optional[date] = None
    eval_start: Optional[date] = None
    end: Optional[date] = None
    seed: int = Field(0, ge=0)
    forecast_horizon: Literal[1] = 1
    test_fraction: float = Field(0.2, gt=0, lt=1)
    k_candidates: List[int] = Field(default_factory=lambda: list(DEFAULT_K_CANDIDATES))
    folds: int = Field(DEFAULT_FOLDS, ge=2)
    knn_minmax: bool = True
    ridge: Optional[float] = Field(DEFAULT_RIDGE, ge=0)

    @model_validator(mode="after")
    def _check_strategy(self):
        if self.strategy is StrategyKind.CROSSOVER:
            if self.short is None or self.long is None:
                raise ValueError("crossover needs both short and long periods")
            if self.short >= self.long:
                raise ValueError(f"short period ({self.short}) must be smaller than long period ({self.long})")
        else:
            if self.train_start is None or self.eval_start is None:
                raise ValueError("predictive strategies need train_start and eval_start")
            if self.train_start >= self.eval_start:
                raise ValueError("training range must end before the evaluation start")
        if self.eval_start and self.end and self.eval_start > self.end:
            raise ValueError("evaluation start is after end")
        return self


class BacktestReport(BaseModel):
    model_config = ConfigDict(frozen=True)

    ticker: str
    strategy: StrategyKind
    parameters: Dict[str, Any] = Field(default_factory=dict)
    seed: Optional[int] = None
    continuous_final: float
    indicative_final: float
    outperformance_pct: float = Field(ge=0, le=100)
    volatility_ratio: float = Field(ge=0)
    avg_confidence: Optional[float] = None
    initial_confidence: Optional[float] = None
    trades: Optional[int] = None
    final_position: Optional[Position] = None
    confidences: Optional[List[Optional[float]]] = None
    decisions: Optional[List[Dict[str, Any]]] = None
    continuous: EquityCurve
    indicative: EquityCurve

    def to_json_dict(self) -> Dict[str, Any]:
        """Report fields plus both curves as parallel date/value arrays."""
        body = self.model_dump(mode="json", exclude={"continuous", "indicative"})
        for name in ROUNDED_FIELDS:
            if body[name] is not None:
                body[name] = round(body[name], REPORT_DECIMALS)
        body["curves"] = {
            "Date": [d.isoformat() for d in self.continuous.dates],
            "Continuous": list(self.continuous.values),
            "Indicative": list(self.indicative.values),
        }
        return body

    def curves_csv(self) -> str:
        lines = ["Date,Continuous,Indicative"]
        for d, c, i in zip(self.continuous.dates, self.continuous.values, self.indicative.values):
            lines.append(f"{d.isoformat()},{c!r},{i!r}")
        return "\n".join(lines) + "\n"

    def text_block(self) -> str:
        lines = [
            f"{self.ticker} ({self.strategy.value})",
            f"Continuous Investing Final Price: {self.continuous_final:.2f}",
            f"Indicative Investing Final Price: {self.indicative_final:.2f}",
        ]
        if self.avg_confidence is not None:
            lines.append(f"AVG Model Confidence: {self.avg_confidence:.4f}")
        lines += [
            f"Outperformance Percentage: {self.outperformance_pct:.2f}%",
            f"Volatility Ratio: {self.volatility_ratio:.4f}",
        ]
        if self.seed is not None:
            lines.append(f"Seed: {self.seed}")
        return "\n".join(lines)


# --- metrics -----------------------------------------------------------------

CurveLike = Union[EquityCurve, Sequence[float], np.ndarray]


def _values(curve: CurveLike) -> np.ndarray:
    if isinstance(curve, EquityCurve):
        return np.asarray(curve.values, dtype=np.float64)
    return np.asarray(curve, dtype=np.float64)


def std_dev(values, ddof: int = 1) -> float:
    """Population (ddof=0) or sample (ddof=1) standard deviation."""
    if ddof not in (0, 1):
        raise ValueError(f"ddof must be 0 or 1, got {ddof}.")
    values = np.asarray(values, dtype=np.float64)
    if len(values) < ddof + 1:
        raise TooFewValues(f"Standard deviation with ddof={ddof} needs at least {ddof + 1} values.")
    return float(np.std(values, ddof=ddof))


def volatility_ratio(indicative: CurveLike, continuous: CurveLike) -> float:
    """Sample SD of the indicative curve over that of the continuous curve."""
    ind, cont = _values(indicative), _values(continuous)
    if len(ind) != len(cont):
        raise MisalignedCurves(f"Curves differ in length ({len(ind)} vs {len(cont)}).")
    if len(cont) < 2:
        raise TooFewValues("Volatility ratio needs at least 2 days.")
    denominator = std_dev(cont, ddof=1)
    if denominator == 0:
        raise ZeroDenominator("Continuous curve is constant; volatility ratio is undefined.")
    return std_dev(ind, ddof=1) / denominator


def report_volatility_ratio(indicative: CurveLike, continuous: CurveLike) -> float:
    """volatility_ratio, with identical curves reported as 1.0 even when flat or a single day."""
    try:
        return volatility_ratio(indicative, continuous)
    except (ZeroDenominator, TooFewValues):
        if np.array_equal(_values(indicative), _values(continuous)):
            return 1.0
        raise


def outperformance_pct(indicative: CurveLike, continuous: CurveLike) -> float:
    """Percentage of days on which indicative strictly beats continuous."""
    ind, cont = _values(indicative), _values(continuous)
    if len(ind) != len(cont) or len(cont) == 0:
        raise MisalignedCurves(f"Curves must have equal non-zero lengths ({len(ind)} vs {len(cont)}).")
    return 100.0 * int(np.count_nonzero(ind > cont)) / len(cont)


# --- crossover -----------------------------------------------------------------


def simulate_crossover(
    closes: np.ndarray, diff_values: np.ndarray, codes: np.ndarray
) -> Tuple[List[float], int, Position]:
    """Walk the position state machine over the cropped window.

    Starts Bought when the first difference is positive. A Bought day captures
    that day's price change, the Sell day included; a Buy takes effect from
    the next day's change. Returns the indicative curve, the trade count and
    the closing position.
    """
    prices = closes.tolist()
    signals = codes.tolist()
    bought = bool(diff_values[0] > 0)
    equity = prices[0]
    curve = [equity]
    trades = 0
    for i in range(1, len(prices)):
        if bought:
            # Captured changes telescope: equity stays at a fixed offset from
            # the price while held.
            equity = prices[i] + (equity - prices[i - 1])
        signal = signals[i]
        if signal == SELL and bought:
            bought = False
            trades += 1
        elif signal == BUY and not bought:
            bought = True
            trades += 1
        curve.append(equity)
    return curve, trades, Position.BOUGHT if bought else Position.FLAT


def check_periods(short: int, long: int) -> None:
    if short < 1 or long < 1:
        raise ZeroPeriod(f"SMA periods must be positive, got ({short}, {long}).")
    if short >= long:
        raise PeriodOrderViolation(
            f"Short period ({short}) must be smaller than long period ({long})."
        )


def run_crossover(series: PriceSeries, short: int, long: int) -> BacktestReport:
    check_periods(short, long)
    if len(series) <= long:
        raise SeriesTooShort(
            f"Series '{series.ticker}' has {len(series)} bars; crossover ({short}, {long}) needs more than {long}."
        )
    short_sma, long_sma = align_crop(sma(series, short), sma(series, long))
    diff = difference(short_sma, long_sma)
    signals = crossover_signals(diff)

    closes = series.adj_close[long - 1:]
    curve, trades, position = simulate_crossover(closes, diff.values, signals.codes)
    dates = [d.item() for d in diff.dates]
    continuous = closes.tolist()

    logger.info(
        "Crossover (%d, %d) on %s: %d days, %d trades", short, long, series.ticker, len(dates), trades
    )
    return BacktestReport(
        ticker=series.ticker,
        strategy=StrategyKind.CROSSOVER,
        parameters={"short": short, "long": long},
        continuous_final=continuous[-1],
        indicative_final=curve[-1],
        outperformance_pct=outperformance_pct(curve, continuous),
        volatility_ratio=report_volatility_ratio(curve, continuous),
        trades=trades,
        final_position=position,
        continuous=EquityCurve(label=CurveLabel.CONTINUOUS, dates=dates, values=continuous),
        indicative=EquityCurve(label=CurveLabel.INDICATIVE, dates=dates, values=curve),
    )


def crossover_metrics(
    closes: np.ndarray, short_sma: np.ndarray, long_sma: np.ndarray, short: int, long: int
) -> Tuple[float, float]:
    """(outperformance %, volatility ratio) from precomputed full-length averages.

    `short_sma` and `long_sma` are rolling means over all of `closes`, as
    returned by indicators.rolling_mean; the grid search computes each period
    once per ticker and reuses it across pairs.
    """
    check_periods(short, long)
    if len(closes) <= long:
        raise SeriesTooShort(f"{len(closes)} bars; crossover ({short}, {long}) needs more than {long}.")
    diff = short_sma[long - short:] - long_sma
    curve, _, _ = simulate_crossover(closes[long - 1:], diff, signal_codes(diff))
    continuous = closes[long - 1:]
    return outperformance_pct(curve, continuous), report_volatility_ratio(curve, continuous)


# --- walk-forward predictive ---------------------------------------------------


class BarHistory:
    """The walk-forward loop's only view of prices used for fitting.

    Returns bars dated strictly before the requested day.
    """

    def __init__(self, series: PriceSeries):
        self._series = series

    def bars_before(self, day: date) -> PriceSeries:
        stop = int(np.searchsorted(self._series.dates, np.datetime64(day, "D"), side="left"))
        if stop == 0:
            raise SeriesTooShort(f"No bars before {day}.")
        return self._series.take(slice(0, stop))


def window_features(window: PriceSeries) -> Tuple[FeatureMatrix, np.ndarray, float]:
    """Standardized features with next-day adjusted-close targets.

    The last bar has no target yet; its row is returned as the query.
    """
    features = FeatureMatrix(window.features())
    scaled = apply_scaler(fit_scaler(ScalerKind.STANDARDIZE, features), features).rows
    closes = window.adj_close
    return FeatureMatrix(scaled[:-1], closes[1:]), scaled[-1], float(closes[-1])


def _confidence(predicted, actual) -> Optional[float]:
    try:
        return r2_score(predicted, actual)
    except ZeroVariance:
        return None


def _fit_and_predict(
    config: BacktestConfig, data: FeatureMatrix, query: np.ndarray, seed: int
) -> Tuple[float, Optional[float]]:
    train, test = train_test_split(data, config.test_fraction, seed)
    if config.strategy is StrategyKind.LINREG:
        model = fit_linear(train, ridge=config.ridge)
        confidence = _confidence(predict_linear(model, test.rows), test.targets)
        return float(predict_linear(model, query)), confidence

    if config.knn_minmax:
        params = fit_scaler(ScalerKind.MINMAX, train)
        train, test = apply_scaler(params, train), apply_scaler(params, test)
        query = apply_scaler(params, FeatureMatrix(query[None, :])).rows[0]
    cv = grid_search_k(train, config.k_candidates, config.folds, seed)
    model = fit_knn(train, cv.best_k)
    confidence = _confidence(predict_knn_many(model, test.rows), test.targets)
    return predict_knn(model, query), confidence


def run_predictive(
    series: PriceSeries, config: BacktestConfig, history: Optional[BarHistory] = None
) -> BacktestReport:
    """Walk-forward backtest of the linear-regression or k-NN strategy.

    For each evaluation day after the first, a model is fitted on every bar
    from the training start up to the previous day and asked for the next
    adjusted close. A prediction above the last known close holds the stock
    through the day.
    """
    if config.strategy is StrategyKind.CROSSOVER:
        raise ValueError("run_predictive needs a linreg or knn configuration.")

    train_start = np.datetime64(config.train_start, "D")
    eval_start = np.datetime64(config.eval_start, "D")
    end = np.datetime64(config.end, "D") if config.end else series.dates[-1]

    n_train = int(np.count_nonzero((series.dates >= train_start) & (series.dates < eval_start)))
    if n_train < MIN_TRAINING_BARS:
        raise SeriesTooShort(
            f"Training range of '{series.ticker}' has {n_train} bars; at least {MIN_TRAINING_BARS} are needed."
        )
    in_eval = (series.dates >= eval_start) & (series.dates <= end)
    if not in_eval.any():
        raise SeriesTooShort(f"Evaluation range of '{series.ticker}' has no bars.")

    if history is None:
        history = BarHistory(series.take((series.dates >= train_start) & (series.dates <= end)))
    evaluation = series.take(in_eval)
    closes = evaluation.adj_close.tolist()
    dates = [d.item() for d in evaluation.dates]

    def step(index: int) -> Tuple[float, Optional[float], float]:
        day = dates[index]
        try:
            data, query, last_close = window_features(history.bars_before(day))
            prediction, confidence = _fit_and_predict(config, data, query, config.seed + index)
        except (ModelError, InvalidCandidate) as e:
            raise PredictiveStepError(index, day, e) from e
        return prediction, confidence, last_close

    _, initial_confidence, _ = step(0)

    equity = closes[0]
    curve = [equity]
    confidences: List[Optional[float]] = [initial_confidence]
    decisions: List[Dict[str, Any]] = []
    for r in range(1, len(closes)):
        prediction, confidence, last_close = step(r)
        confidences.append(confidence)
        hold = prediction > last_close
        decisions.append(
            {"date": dates[r].isoformat(), "predicted": prediction, "lastClose": last_close, "hold": hold}
        )
        if hold:
            equity = closes[r] + (equity - closes[r - 1])
        curve.append(equity)

    scored = [c for c in confidences[1:] if c is not None]
    avg_confidence = float(np.mean(scored)) if scored else None
    logger.info(
        "Walk-forward %s on %s: %d days, avg confidence %s",
        config.strategy.value,
        series.ticker,
        len(closes),
        avg_confidence,
    )

    parameters: Dict[str, Any] = {
        "train_start": config.train_start.isoformat(),
        "eval_start": config.eval_start.isoformat(),
        "test_fraction": config.test_fraction,
    }
    if config.strategy is StrategyKind.KNN:
        parameters.update(k_candidates=list(config.k_candidates), folds=config.folds, knn_minmax=config.knn_minmax)

    return BacktestReport(
        ticker=series.ticker,
        strategy=config.strategy,
        parameters=parameters,
        seed=config.seed,
        continuous_final=closes[-1],
        indicative_final=curve[-1],
        outperformance_pct=outperformance_pct(curve, closes),
        volatility_ratio=report_volatility_ratio(curve, closes),
        avg_confidence=avg_confidence,
        initial_confidence=initial_confidence,
        confidences=confidences,
        decisions=decisions,
        continuous=EquityCurve(label=CurveLabel.CONTINUOUS, dates=dates, values=closes),
        indicative=EquityCurve(label=CurveLabel.INDICATIVE, dates=dates, values=curve),
    )


def crossover_window(series: PriceSeries, config: BacktestConfig) -> PriceSeries:
    """Bars a crossover run sees: eval_start (or the first bar) through end."""
    start = np.datetime64(config.eval_start, "D") if config.eval_start else series.dates[0]
    end = np.datetime64(config.end, "D") if config.end else series.dates[-1]
    return series.take((series.dates >= start) & (series.dates <= end))


def run_backtest(series: PriceSeries, config: BacktestConfig) -> BacktestReport:
    if config.strategy is StrategyKind.CROSSOVER:
        report = run_crossover(crossover_window(series, config), config.short, config.long)
        return report.model_copy(update={"seed": config.seed})
    return run_predictive(series, config)
