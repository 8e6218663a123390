import json
from datetime import date

import pytest

from backtest import StrategyKind
from config import DEFAULT_CACHE_DIR, build_config, env_values, read_config_file
from errors import ConfigError

BASE = {"command": "backtest", "tickers": ["AMD"], "start": "2020-01-02", "end": "2020-06-30", "short": 5, "long": 20}


def test_defaults():
    config = build_config(BASE, environ={})
    assert config.cache_dir == DEFAULT_CACHE_DIR
    assert config.strategy is StrategyKind.CROSSOVER
    assert config.formats == ["json", "csv"]
    assert config.seed == 0
    assert config.workers >= 1


def test_env_file_and_flag_precedence(tmp_path):
    config_file = tmp_path / "quantbench.json"
    config_file.write_text(json.dumps({"cache-dir": "from-file", "out_dir": "file-out", "seed": 3}))
    environ = {"QUANTBENCH_CACHE_DIR": "from-env", "QUANTBENCH_WORKERS": "2"}

    config = build_config({**BASE, "seed": None, "out_dir": "flag-out"}, config_file, environ)
    assert config.cache_dir == "from-file"
    assert config.out_dir == "flag-out"
    assert config.seed == 3
    assert config.workers == 2


def test_env_values_ignores_blank_and_unknown():
    assert env_values({"QUANTBENCH_CACHE_DIR": "", "QUANTBENCH_OTHER": "x"}) == {}


def test_tickers_are_stripped_and_deduplicated():
    config = build_config({**BASE, "command": "optimize", "tickers": [" AMD", "INTC ", "AMD", ""]}, environ={})
    assert config.tickers == ["AMD", "INTC"]


@pytest.mark.parametrize(
    "override, message",
    [
        ({"tickers": []}, "at least one ticker"),
        ({"start": "2020-07-01"}, "is after end"),
        ({"tickers": ["AMD", "INTC"]}, "exactly one ticker"),
        ({"short": 20, "long": 20}, "must be smaller than long period"),
        ({"strategy": "knn"}, "needs --train-start"),
        ({"strategy": "linreg", "train_start": "2020-01-02"}, "must be before the evaluation start"),
        ({"start": "2020-02-30"}, "start"),
        ({"workers": 0}, "workers"),
        ({"nonsense": 1}, "nonsense"),
    ],
)
def test_invalid_configurations(override, message):
    with pytest.raises(ConfigError) as exc:
        build_config({**BASE, **override}, environ={})
    assert message in str(exc.value)
    assert exc.value.exit_code == 1


def test_optimize_bounds_must_be_ordered():
    with pytest.raises(ConfigError):
        build_config({**BASE, "command": "optimize", "short_min": 9, "short_max": 5}, environ={})


def test_fetch_range_starts_at_training_for_predictive():
    config = build_config({**BASE, "strategy": "linreg", "train_start": "2019-01-02"}, environ={})
    assert config.fetch_range.start == date(2019, 1, 2)
    assert config.backtest_config().eval_start == date(2020, 1, 2)
    assert build_config(BASE, environ={}).fetch_range.start == date(2020, 1, 2)


def test_backtest_config_errors_are_usage_errors():
    # model_copy skips RunConfig validation
    config = build_config(BASE, environ={}).model_copy(update={"short": 20, "long": 5})
    with pytest.raises(ConfigError, match=r"short period \(20\) must be smaller than long period \(5\)") as exc:
        config.backtest_config()
    assert exc.value.exit_code == 1


def test_config_file_errors(tmp_path):
    with pytest.raises(ConfigError, match="does not exist"):
        read_config_file(tmp_path / "missing.json")
    broken = tmp_path / "broken.json"
    broken.write_text("{not json")
    with pytest.raises(ConfigError, match="not valid JSON"):
        read_config_file(broken)
    listing = tmp_path / "list.json"
    listing.write_text("[1, 2]")
    with pytest.raises(ConfigError, match="JSON object"):
        read_config_file(listing)
