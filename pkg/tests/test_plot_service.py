import xml.etree.ElementTree as ET

import numpy as np

from models.traffic_models import FrequencyStats, MetricsSummary, VehicleSample
from services.plot_service import _grouped, bar_chart, emit_plots, frequency_chart, trajectory_snapshot

SVG_NS = "{http://www.w3.org/2000/svg}"


def summary(policy: str, level: float, distribution: str, jfi: float) -> MetricsSummary:
    return MetricsSummary(
        label=f"{policy}_{int(level)}_{distribution}", policy=policy, demand_level=level,
        distribution=distribution, jfi_final=jfi, gini_final=1.0 - jfi,
        ctrl_freq=FrequencyStats(avg=120.0, min=80.0, max=150.0, p10=95.0, p90=140.0),
    )


SUMMARIES = [
    summary("proposed", 990, "balanced", 0.97),
    summary("all-way-stop", 990, "balanced", 0.91),
    summary("proposed", 3600, "unbalanced", 0.95),
    summary("all-way-stop", 3600, "unbalanced", 0.88),
]


def test_empty_summaries_still_render(tmp_path):
    paths = emit_plots(tmp_path, [])
    assert [p.name for p in paths] == ["jfi.svg", "gini.svg", "frequency.svg"]
    for p in paths:
        assert ET.parse(p).getroot().tag == f"{SVG_NS}svg"


def test_one_bar_per_policy_and_scenario(tmp_path):
    labels, groups = _grouped(SUMMARIES, lambda s: s.jfi_final)
    assert labels == ["990\nbalanced", "3600\nunbalanced"]
    assert groups == {"proposed": [0.97, 0.95], "all-way-stop": [0.91, 0.88]}
    assert bar_chart(tmp_path / "jfi.svg", SUMMARIES, lambda s: s.jfi_final, "JFI", "JFI").exists()


def test_missing_cells_are_nan(tmp_path):
    labels, groups = _grouped(SUMMARIES[:3], lambda s: s.jfi_final)
    assert np.isnan(groups["all-way-stop"][1])
    path = bar_chart(tmp_path / "gaps.svg", SUMMARIES, lambda s: None, "none", "none")
    assert path.exists()


def test_frequency_without_timing(tmp_path):
    path = frequency_chart(tmp_path / "frequency.svg", [MetricsSummary(label="idle")])
    assert ET.parse(path).getroot().tag == f"{SVG_NS}svg"


def test_identical_input_is_byte_identical(tmp_path):
    a = emit_plots(tmp_path / "a", SUMMARIES)
    b = emit_plots(tmp_path / "b", SUMMARIES)
    for pa, pb in zip(a, b):
        assert pa.read_bytes() == pb.read_bytes()


def test_trajectory_snapshot(tmp_path):
    samples = [
        VehicleSample(t=0.02 * k, id=vid, px=-60.0 + 2.0 * k, py=1.75 * vid, theta=0.0, v=8.0, omega=0.0,
                      delta_cmd=0.0, a_cmd=0.0, authority_flag=0, min_h=1.0, u2_norm=0.0, beta=1.0)
        for vid in (1, 2) for k in range(30)
    ]
    path = trajectory_snapshot(tmp_path / "trajectories.svg", samples, half_box=7.0, extent=67.0)
    assert ET.parse(path).getroot().tag == f"{SVG_NS}svg"
    assert len(emit_plots(tmp_path / "all", SUMMARIES[:1], samples)) == 4
