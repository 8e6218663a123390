from indicators import align_crop, difference, sma
from marketdata import load_csv
from optimizer import GroupBy, PairAggregate, ScatterSummary, aggregate, scatter_export
from plots import plot_crossover, plot_scatter, plot_trend

from test_optimizer import RECORDS


def test_scatter_chart_names_correlation(tmp_path):
    path = plot_scatter(scatter_export(RECORDS), tmp_path / "charts" / "scatter.svg")
    text = path.read_text()
    assert text.lstrip().startswith("<?xml")
    assert "r = " in text


def test_scatter_chart_without_correlation(tmp_path):
    path = plot_scatter(ScatterSummary([(0.5, 40.0)], None), tmp_path / "scatter.svg")
    assert "r = " not in path.read_text()


def test_trend_chart(tmp_path):
    path = plot_trend(aggregate(RECORDS, GroupBy.SHORT), "Short SMA period", tmp_path / "trend.svg")
    assert "Short SMA period" in path.read_text()


def test_crossover_chart_shows_averages_and_difference(tmp_path, fixtures_dir):
    series = load_csv(fixtures_dir / "FRZN.csv")
    short, long = align_crop(sma(series, 5), sma(series, 10))
    path = plot_crossover(short, long, difference(short, long), tmp_path / "averages.svg")
    text = path.read_text()
    for label in ("FRZN SMA 5", "FRZN SMA 10", "Short minus long", "Difference"):
        assert label in text


def test_charts_are_reproducible(tmp_path):
    aggregates = [PairAggregate(s, 10.0 * s, 0.1 * s, 1) for s in range(5, 10)]
    first = plot_trend(aggregates, "Short", tmp_path / "a.svg").read_bytes()
    second = plot_trend(aggregates, "Short", tmp_path / "b.svg").read_bytes()
    assert first == second
