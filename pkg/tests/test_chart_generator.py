import numpy as np

from utils.chart_generator import ChartGenerator
from utils.metrics_calculator import MetricsCalculator


def _sweep():
    rows = [{"epsilon": eps, "weighted_length": 2.0, "free_energy": 2.0 * np.pi * abs(np.log(eps)) + 1.0,
             "upper_bound": 2.0 * np.pi * abs(np.log(eps)) + 3.0} for eps in (0.2, 0.14, 0.1)]
    return MetricsCalculator().sweep_table(rows)


def test_figures(profile):
    charts = ChartGenerator()
    fig = charts.create_profile_chart(profile)
    assert len(fig.data) == 2
    assert max(fig.data[0].x) == 20.0
    assert len(charts.create_sweep_chart(_sweep()).data) == 3
    onset = charts.create_onset_chart([0.0, 1.0, 2.0], [1.0, 0.2, -0.5], crossing=1.3, hc1=1.2)
    assert list(onset.data[0].y) == [1.0, 0.2, -0.5]
    assert len(charts.create_lambda_chart([0.1, 0.4, 0.5]).data[0].x) == 3


def test_render_all(profile, tmp_path):
    written = ChartGenerator().render_all({"profile": profile, "sweep": _sweep()}, str(tmp_path))
    assert written == [f"{tmp_path}/profile.html", f"{tmp_path}/sweep.html"]
    assert "<html>" in (tmp_path / "sweep.html").read_text()
    assert ChartGenerator().render_all({}, str(tmp_path)) == []
