import zipfile
from io import BytesIO

import numpy as np
import pandas as pd
import plotly.graph_objects as go

from signalgraph.data_models import EpisodeResult
from signalgraph.evaluation import compare_all
from signalgraph.exports import (
    create_parameters_sheet,
    delay_curve_figure,
    duration_box_figure,
    export_report_to_excel,
    mean_delay_curves,
    network_figure,
    paired_histogram_figure,
    programs_table,
    report_figure,
    save_report_workbook,
    training_figure,
)


def _episode(policy_id, seed, delays, durations):
    n = len(durations)
    return EpisodeResult(
        policy_id=policy_id,
        scenario_seed=seed,
        regime="default",
        delays=np.asarray(delays, dtype=float),
        queued=np.zeros(len(delays), dtype=int),
        n_vehicles=np.zeros(len(delays), dtype=int),
        n_blocked=np.zeros(len(delays), dtype=int),
        trips=pd.DataFrame(
            {
                "trip_id": [f"t{i}" for i in range(n)],
                "depart_s": [0] * n,
                "arrive_s": [float(d) for d in durations],
                "duration_s": [float(d) for d in durations],
                "censored": [False] * n,
            }
        ),
    )


RESULTS = [
    _episode("fixed_time", 0, [0, 2, 4], [30, 40]),
    _episode("fixed_time", 1, [0, 4, 2], [35, 45]),
    _episode("igrl", 0, [0, 1, 1], [25, 38]),
    _episode("igrl", 1, [0, 1, 3], [30, 41]),
]


def test_mean_delay_curves_average_over_seeds():
    curves = mean_delay_curves(RESULTS)
    fixed = curves[curves["policy_id"] == "fixed_time"]
    assert fixed["total_delay"].tolist() == [0.0, 3.0, 3.0]
    assert mean_delay_curves([]).empty


def test_result_figures():
    assert len(delay_curve_figure(RESULTS).data) == 2
    assert len(duration_box_figure(RESULTS).data) == 1
    comparisons = compare_all(RESULTS, "fixed_time")
    histogram = paired_histogram_figure(comparisons)
    assert len(histogram.data) == 1
    assert histogram.data[0].name == "igrl - fixed_time (default)"
    assert len(report_figure(RESULTS, comparisons).data) == 4


def test_figures_accept_empty_results():
    assert isinstance(delay_curve_figure([]), go.Figure)
    assert len(duration_box_figure([]).data) == 0
    assert len(report_figure([], []).data) == 0


def test_network_figure_and_programs(one_net):
    fig = network_figure(one_net, title="fixture")
    assert len(fig.data) == len(one_net.edges) + 2
    assert fig.layout.title.text == "fixture"
    programs = programs_table(one_net)
    assert programs["state"].tolist() == ["GGrr", "yyrr", "rrGG", "rryy"]
    assert programs["duration_s"].tolist() == [30, 5, 30, 5]


def test_training_figure():
    log = pd.DataFrame(
        {
            "update": [0, 50, 100],
            "loss": [np.nan, 2.0, 1.0],
            "mean_episode_reward": [np.nan, -40.0, -30.0],
            "heldout_loss": [3.0, 2.5, 1.5],
        }
    )
    fig = training_figure(log)
    assert [trace.name for trace in fig.data] == ["batch loss", "reference batch loss", "episode reward"]


def _sheet_names(data: bytes):
    with zipfile.ZipFile(BytesIO(data)) as archive:
        workbook = archive.read("xl/workbook.xml").decode("utf-8")
    return [part.split('"')[0] for part in workbook.split('<sheet name="')[1:]]


def test_excel_workbook_sheets(tmp_path):
    workbook = export_report_to_excel(RESULTS, "fixed_time")
    assert _sheet_names(workbook.getvalue()) == ["Parameters", "Summary", "Paired Tests", "Delay Curves", "Trips"]

    path = tmp_path / "out" / "report.xlsx"
    save_report_workbook(RESULTS, str(path), "fixed_time")
    assert zipfile.is_zipfile(path)


def test_parameters_sheet():
    sheet = create_parameters_sheet()
    values = dict(zip(sheet["Parameter"], sheet["Value"]))
    assert values["Yellow duration"] == 5
    assert values["Completion cap"] == 10800
