"""Run configuration for the CLI and the API.

Values are merged from four sources, highest precedence first: command-line
flags, a JSON config file, QUANTBENCH_* environment variables, and the
defaults declared on RunConfig.
"""

import json
import logging
import os
from datetime import date
from pathlib import Path
from typing import Any, Dict, List, Literal, Mapping, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from backtest import BacktestConfig, StrategyKind
from errors import ConfigError
from marketdata import DEFAULT_PROVIDER_URL, DateRange
from models import DEFAULT_FOLDS, DEFAULT_K_CANDIDATES, DEFAULT_RIDGE
from optimizer import DEFAULT_BOUNDS, DEFAULT_RATIO_WIDTH

logger = logging.getLogger(__name__)

DEFAULT_CACHE_DIR = ".quantbench-cache"
DEFAULT_OUT_DIR = "out"
DEFAULT_TOP = 5

# Environment variable -> RunConfig field.
ENV_VARS = {
    "QUANTBENCH_CACHE_DIR": "cache_dir",
    "QUANTBENCH_PROVIDER_URL": "provider_url",
    "QUANTBENCH_WORKERS": "workers",
}


def _cpu_count() -> int:
    return os.cpu_count() or 1


class RunConfig(BaseModel):
    """Everything one command needs. Validated before any data is touched."""

    model_config = ConfigDict(extra="forbid")

    command: Literal["fetch", "backtest", "optimize"]
    tickers: List[str] = Field(default_factory=list)
    start: date
    end: date
    train_start: Optional[date] = None

    strategy: StrategyKind = StrategyKind.CROSSOVER
    short: Optional[int] = Field(None, ge=1)
    long: Optional[int] = Field(None, ge=1)
    seed: int = Field(0, ge=0)
    test_fraction: float = Field(0.2, gt=0, lt=1)
    k_candidates: List[int] = Field(default_factory=lambda: list(DEFAULT_K_CANDIDATES))
    folds: int = Field(DEFAULT_FOLDS, ge=2)
    knn_minmax: bool = True
    ridge: Optional[float] = Field(DEFAULT_RIDGE, ge=0)

    short_min: int = Field(DEFAULT_BOUNDS[0], ge=1)
    short_max: int = Field(DEFAULT_BOUNDS[1], ge=1)
    long_min: int = Field(DEFAULT_BOUNDS[2], ge=1)
    long_max: int = Field(DEFAULT_BOUNDS[3], ge=1)
    workers: int = Field(default_factory=_cpu_count, ge=1)
    ratio_width: float = Field(DEFAULT_RATIO_WIDTH, gt=0)
    top: int = Field(DEFAULT_TOP, ge=0)

    provider_url: str = DEFAULT_PROVIDER_URL
    cache_dir: str = DEFAULT_CACHE_DIR
    out_dir: str = DEFAULT_OUT_DIR
    formats: List[Literal["json", "csv"]] = Field(default_factory=lambda: ["json", "csv"])
    plot: bool = False

    @field_validator("tickers")
    @classmethod
    def _strip_tickers(cls, tickers: List[str]) -> List[str]:
        cleaned = [t.strip() for t in tickers if t and t.strip()]
        # Keep first-seen order; duplicates add nothing.
        return list(dict.fromkeys(cleaned))

    @model_validator(mode="after")
    def _check(self):
        if not self.tickers:
            raise ValueError("at least one ticker is required")
        if self.start > self.end:
            raise ValueError(f"start ({self.start}) is after end ({self.end})")
        if self.command in ("fetch", "backtest") and len(self.tickers) != 1:
            raise ValueError(f"{self.command} takes exactly one ticker")
        if self.command == "backtest":
            if self.strategy is StrategyKind.CROSSOVER:
                if self.short is None or self.long is None:
                    raise ValueError("crossover needs --short and --long")
                if self.short >= self.long:
                    raise ValueError(
                        f"short period ({self.short}) must be smaller than long period ({self.long})"
                    )
            else:
                if self.train_start is None:
                    raise ValueError(f"{self.strategy.value} needs --train-start")
                if self.train_start >= self.start:
                    raise ValueError(
                        f"training start ({self.train_start}) must be before the evaluation start ({self.start})"
                    )
        if self.command == "optimize":
            if self.short_min > self.short_max or self.long_min > self.long_max:
                raise ValueError("grid bounds out of order")
        return self

    @property
    def ticker(self) -> str:
        return self.tickers[0]

    @property
    def fetch_range(self) -> DateRange:
        """Dates to load: the training start when one applies, else start, through end."""
        first = self.start
        if self.command == "backtest" and self.strategy is not StrategyKind.CROSSOVER:
            first = self.train_start
        return DateRange(first, self.end)

    def backtest_config(self) -> BacktestConfig:
        """Engine config for `backtest`; ConfigError when the strategy flags do not fit together."""
        try:
            return BacktestConfig(
                strategy=self.strategy,
                short=self.short,
                long=self.long,
                train_start=self.train_start,
                eval_start=self.start,
                end=self.end,
                seed=self.seed,
                test_fraction=self.test_fraction,
                k_candidates=self.k_candidates,
                folds=self.folds,
                knn_minmax=self.knn_minmax,
                ridge=self.ridge,
            )
        except ValidationError as e:
            raise ConfigError(f"Invalid backtest configuration: {describe_validation_error(e)}")


def env_values(environ: Optional[Mapping[str, str]] = None) -> Dict[str, Any]:
    environ = os.environ if environ is None else environ
    return {field: environ[var] for var, field in ENV_VARS.items() if environ.get(var)}


def read_config_file(path) -> Dict[str, Any]:
    path = Path(path)
    try:
        values = json.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError(f"Config file '{path}' does not exist.")
    except json.JSONDecodeError as e:
        raise ConfigError(f"Config file '{path}' is not valid JSON: {e}")
    if not isinstance(values, dict):
        raise ConfigError(f"Config file '{path}' must hold a JSON object.")
    # Files may use the flag spelling (short-min) as well as the field name.
    return {key.replace("-", "_"): value for key, value in values.items()}


def describe_validation_error(error: ValidationError) -> str:
    parts = []
    for item in error.errors():
        where = ".".join(str(p) for p in item.get("loc", ()))
        message = item.get("msg", "invalid value").removeprefix("Value error, ")
        parts.append(f"{where}: {message}" if where else message)
    return "; ".join(parts)


def build_config(
    flags: Mapping[str, Any],
    config_file=None,
    environ: Optional[Mapping[str, str]] = None,
) -> RunConfig:
    """Merge the sources and validate. Flags left unset (None) fall through."""
    merged: Dict[str, Any] = {}
    merged.update(env_values(environ))
    if config_file:
        merged.update(read_config_file(config_file))
    merged.update({key: value for key, value in flags.items() if value is not None})
    try:
        config = RunConfig.model_validate(merged)
    except ValidationError as e:
        raise ConfigError(f"Invalid configuration: {describe_validation_error(e)}")
    logger.debug("Resolved configuration: %s", config.model_dump(mode="json", exclude={"provider_url"}))
    return config
