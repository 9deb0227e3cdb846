"""Figures and workbook exports for evaluation and training outputs.

This module builds the plotly figures shown by the dashboard and written
into reports (delay curves, trip-duration box plots, paired-difference
histograms, network drawings, training curves) and the Excel workbook
offered for download.
"""

import logging
import os
from io import BytesIO
from typing import Optional, Sequence

import pandas as pd
import plotly.express as px
import plotly.graph_objects as go
from plotly.subplots import make_subplots

from . import parameters as prm
from .data_models import EpisodeResult, RoadNetwork

logger = logging.getLogger(__name__)


def mean_delay_curves(results: Sequence[EpisodeResult]) -> pd.DataFrame:
    """Total delay per step averaged over seeds, per (policy, regime)."""
    from .evaluation import delay_table

    delays = delay_table(results)
    if delays.empty:
        return pd.DataFrame(columns=["policy_id", "regime", "t", "total_delay", "total_queued"])
    return (
        delays.groupby(["policy_id", "regime", "t"], as_index=False)[["total_delay", "total_queued"]]
        .mean()
        .sort_values(["policy_id", "regime", "t"])
    )


def delay_curve_figure(results: Sequence[EpisodeResult], metric: str = "total_delay") -> go.Figure:
    curves = mean_delay_curves(results)
    if curves.empty:
        return go.Figure().update_layout(title="Total delay over time (no data)")
    curves["series"] = curves["policy_id"] + " / " + curves["regime"]
    labels = {"t": "Time (s)", "total_delay": "Total delay", "total_queued": "Queued vehicles"}
    fig = px.line(curves, x="t", y=metric, color="series", labels=labels, title=f"{labels[metric]} over time")
    fig.update_layout(height=450)
    return fig


def duration_box_figure(results: Sequence[EpisodeResult]) -> go.Figure:
    from .evaluation import trips_table

    trips = trips_table(results)
    trips = trips[~trips["censored"].astype(bool)]
    if trips.empty:
        return go.Figure().update_layout(title="Trip durations (no data)")
    fig = px.box(
        trips,
        x="policy_id",
        y="duration_s",
        color="regime",
        labels={"policy_id": "Policy", "duration_s": "Trip duration (s)"},
        title="Trip durations",
    )
    fig.update_layout(height=450)
    return fig


def paired_histogram_figure(comparisons) -> go.Figure:
    fig = go.Figure()
    for comparison in comparisons:
        if comparison.deltas.empty:
            continue
        fig.add_trace(
            go.Histogram(
                x=comparison.deltas["delta"],
                nbinsx=prm.HISTOGRAM_BINS,
                name=f"{comparison.policy_a} - {comparison.policy_b} ({comparison.regime})",
                opacity=0.6,
            )
        )
    fig.update_layout(
        barmode="overlay",
        title="Paired trip-duration differences",
        xaxis_title="Duration difference (s)",
        yaxis_title="Trips",
        height=450,
    )
    fig.add_vline(x=0, line_dash="dash", line_color="gray")
    return fig


def report_figure(results: Sequence[EpisodeResult], comparisons) -> go.Figure:
    """Three-panel summary: delay curves, duration box plots, paired histograms."""
    fig = make_subplots(
        rows=3,
        cols=1,
        subplot_titles=("Total delay over time", "Trip durations", "Paired differences vs reference"),
        vertical_spacing=0.08,
    )
    for trace in delay_curve_figure(results).data:
        fig.add_trace(trace, row=1, col=1)
    for trace in duration_box_figure(results).data:
        fig.add_trace(trace, row=2, col=1)
    for trace in paired_histogram_figure(comparisons).data:
        fig.add_trace(trace, row=3, col=1)
    fig.update_layout(height=1200, width=1000, barmode="overlay", boxmode="group")
    fig.update_xaxes(title_text="Time (s)", row=1, col=1)
    fig.update_yaxes(title_text="Total delay", row=1, col=1)
    fig.update_yaxes(title_text="Duration (s)", row=2, col=1)
    fig.update_xaxes(title_text="Difference (s)", row=3, col=1)
    return fig


def write_report_svg(results: Sequence[EpisodeResult], comparisons, path: str) -> None:
    """Render the report figure to SVG (needs kaleido)."""
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    report_figure(results, comparisons).write_image(path, format="svg")
    logger.info("Wrote %s", path)


# ============================================================================
# NETWORK AND TRAINING FIGURES
# ============================================================================

def network_figure(network: RoadNetwork, title: Optional[str] = None) -> go.Figure:
    """Draw intersections (signalized in color) and edges."""
    fig = go.Figure()
    for edge in network.edges.values():
        a = network.intersections[edge.from_node]
        b = network.intersections[edge.to_node]
        fig.add_trace(
            go.Scatter(
                x=[a.x, b.x],
                y=[a.y, b.y],
                mode="lines",
                line=dict(width=1 + edge.lanes, color="#999"),
                hoverinfo="text",
                text=f"{edge.id}: {edge.length:.0f} m, {edge.lanes} lane(s)",
                showlegend=False,
            )
        )
    nodes = pd.DataFrame(
        [
            {"id": n.id, "x": n.x, "y": n.y, "kind": "signalized" if n.tsc else "fringe"}
            for n in network.intersections.values()
        ]
    )
    for kind, color in (("signalized", "#d62728"), ("fringe", "#1f77b4")):
        subset = nodes[nodes["kind"] == kind]
        fig.add_trace(
            go.Scatter(
                x=subset["x"],
                y=subset["y"],
                mode="markers+text",
                text=subset["id"],
                textposition="top center",
                marker=dict(size=14 if kind == "signalized" else 8, color=color),
                name=kind,
            )
        )
    fig.update_layout(
        title=title or "Road network",
        xaxis=dict(scaleanchor="y", showgrid=False, zeroline=False),
        yaxis=dict(showgrid=False, zeroline=False),
        height=550,
    )
    return fig


def programs_table(network: RoadNetwork) -> pd.DataFrame:
    rows = []
    for tsc, program in network.programs.items():
        for k, phase in enumerate(program):
            rows.append(
                {"tsc": tsc, "phase": k, "kind": phase.kind.value, "duration_s": phase.duration, "state": phase.state}
            )
    return pd.DataFrame(rows, columns=["tsc", "phase", "kind", "duration_s", "state"])


def training_figure(log: pd.DataFrame) -> go.Figure:
    """Loss (batch and frozen reference batch) and mean episode reward by update."""
    fig = make_subplots(rows=2, cols=1, shared_xaxes=True, subplot_titles=("TD loss", "Mean episode reward"))
    fig.add_trace(go.Scatter(x=log["update"], y=log["loss"], name="batch loss"), row=1, col=1)
    if "heldout_loss" in log:
        fig.add_trace(go.Scatter(x=log["update"], y=log["heldout_loss"], name="reference batch loss"), row=1, col=1)
    fig.add_trace(go.Scatter(x=log["update"], y=log["mean_episode_reward"], name="episode reward"), row=2, col=1)
    fig.update_yaxes(type="log", row=1, col=1)
    fig.update_xaxes(title_text="Update", row=2, col=1)
    fig.update_layout(height=600)
    return fig


# ============================================================================
# EXCEL
# ============================================================================

def create_parameters_sheet() -> pd.DataFrame:
    """Key constants of the simulation and evaluation protocol."""
    rows = [
        ("Simulation", "Step length", prm.STEP_LENGTH, "s"),
        ("Simulation", "Vehicle length", prm.VEHICLE_LENGTH, "m"),
        ("Simulation", "Minimum gap", prm.MIN_GAP, "m"),
        ("Simulation", "Acceleration", prm.ACCELERATION, "m/s^2"),
        ("Simulation", "Deceleration", prm.DECELERATION, "m/s^2"),
        ("Signals", "Yellow duration", prm.YELLOW_DURATION, "s"),
        ("Signals", "Minimum time between switches", prm.MIN_TIME_BETWEEN_SWITCHES, "s"),
        ("Signals", "Fixed-time green duration", prm.DEFAULT_GREEN_DURATION, "s"),
        ("Sensing", "Stopped speed threshold", round(prm.STOPPED_SPEED_THRESHOLD, 5), "m/s"),
        ("Sensing", "Queue detection range", prm.QUEUE_DETECTION_RANGE, "m"),
        ("Evaluation", "Demand horizon", prm.EVALUATION_HORIZON, "s"),
        ("Evaluation", "Completion cap", prm.completion_cap(prm.EVALUATION_HORIZON), "s"),
        ("Evaluation", "Significance level", prm.SIGNIFICANCE_LEVEL, ""),
    ]
    return pd.DataFrame(rows, columns=["Category", "Parameter", "Value", "Unit"])


def export_report_to_excel(results: Sequence[EpisodeResult], reference: Optional[str] = None) -> BytesIO:
    """Export an evaluation report as a multi-sheet Excel workbook.

    Sheets: Parameters, Summary, Paired Tests, Delay Curves, Trips.

    Args:
        results: Episode results of every compared policy
        reference: Policy the paired tests compare against

    Returns:
        BytesIO object containing the workbook
    """
    from .evaluation import compare_all, paired_table, summary_table, trips_table

    output = BytesIO()
    with pd.ExcelWriter(output, engine="xlsxwriter") as writer:
        workbook = writer.book
        header_format = workbook.add_format({"bold": True, "bg_color": "#4472C4", "font_color": "white", "border": 1})
        seconds_format = workbook.add_format({"num_format": "#,##0.0"})

        sheets = {
            "Parameters": create_parameters_sheet(),
            "Summary": summary_table(results),
            "Paired Tests": paired_table(compare_all(results, reference)),
            "Delay Curves": mean_delay_curves(results),
            "Trips": trips_table(results),
        }
        for name, frame in sheets.items():
            frame.to_excel(writer, sheet_name=name, index=False)
            worksheet = writer.sheets[name]
            for col_idx, column in enumerate(frame.columns):
                worksheet.write(0, col_idx, column, header_format)
            worksheet.set_column(0, max(len(frame.columns) - 1, 0), 14)

        summary = sheets["Summary"]
        for col_name in ("mean", "std", "min", "q1", "median", "q3", "max"):
            if col_name in summary.columns:
                col_idx = summary.columns.get_loc(col_name)
                writer.sheets["Summary"].set_column(col_idx, col_idx, 12, seconds_format)

    output.seek(0)
    return output


def save_report_workbook(results: Sequence[EpisodeResult], path: str, reference: Optional[str] = None) -> None:
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    with open(path, "wb") as handle:
        handle.write(export_report_to_excel(results, reference).getvalue())
    logger.info("Wrote %s", path)
