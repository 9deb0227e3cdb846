"""Evaluation Report page for SignalGraph."""

import os

import streamlit as st

from signalgraph.errors import PairingError
from signalgraph.evaluation import compare_all, load_results, paired_table, summary_table
from signalgraph.exports import (
    delay_curve_figure,
    duration_box_figure,
    export_report_to_excel,
    paired_histogram_figure,
)

st.set_page_config(page_title="Evaluation Report - SignalGraph", page_icon="📊", layout="wide")

st.title("📊 Evaluation Report")
st.markdown("Trip durations, delay evolution and paired comparisons against a reference controller")

results_dir = st.session_state.get("results_dir", "results")
report_dirs = []
if os.path.isdir(results_dir):
    for root, _, files in os.walk(results_dir):
        if "trips.csv" in files and "delay.csv" in files:
            report_dirs.append(root)
report_dirs.sort()

if not report_dirs:
    st.info(f"No evaluation results (trips.csv + delay.csv) under {results_dir!r}.")
    st.stop()

# Sidebar filters
st.sidebar.markdown("## 🔍 Filters")

selected_dirs = st.sidebar.multiselect("Result directories", report_dirs, default=report_dirs[:1])


@st.cache_data
def load_cached(path: str):
    return load_results(path)


results = [r for path in selected_dirs for r in load_cached(path)]
if not results:
    st.info("Select at least one result directory.")
    st.stop()

policies = sorted({r.policy_id for r in results})
regimes = sorted({r.regime for r in results})
selected_regimes = st.sidebar.multiselect("Regimes", regimes, default=regimes)
selected_policies = st.sidebar.multiselect("Policies", policies, default=policies)
results = [r for r in results if r.regime in selected_regimes and r.policy_id in selected_policies]

reference_options = sorted({r.policy_id for r in results})
default_reference = reference_options.index("fixed_time") if "fixed_time" in reference_options else 0
reference = st.sidebar.selectbox("Reference policy", reference_options, index=default_reference)

st.sidebar.markdown(f"**{len(results)} episodes selected**")

# Summary
st.markdown("## 📈 Trip Duration Summary")

summary = summary_table(results)

col1, col2, col3, col4 = st.columns(4)

with col1:
    st.metric("Policies", summary["policy_id"].nunique())

with col2:
    st.metric("Episodes", len(results))

with col3:
    st.metric("Trips", f"{int(summary['n_trips'].sum()):,}")

with col4:
    censored = int(summary["n_censored"].sum())
    st.metric("Censored Trips", f"{censored:,}")
    if censored:
        st.caption("Unfinished trips are excluded from paired tests")

st.dataframe(summary.round(2), use_container_width=True, hide_index=True)

col1, col2 = st.columns(2)

with col1:
    metric = st.radio("Curve", ["total_delay", "total_queued"], horizontal=True)
    st.plotly_chart(delay_curve_figure(results, metric), use_container_width=True)

with col2:
    st.plotly_chart(duration_box_figure(results), use_container_width=True)

st.markdown("---")

# Paired comparisons
st.markdown(f"## ⚖️ Paired Comparison vs {reference}")

try:
    comparisons = compare_all(results, reference)
except PairingError as exc:
    st.error(f"Results cannot be paired: {exc}")
    comparisons = []

if comparisons:
    st.plotly_chart(paired_histogram_figure(comparisons), use_container_width=True)
    st.dataframe(paired_table(comparisons).round(4), use_container_width=True, hide_index=True)
    st.caption("Negative differences mean the policy finished trips faster than the reference.")
else:
    st.info("Select at least one other policy evaluated on the same seeds as the reference.")

st.markdown("---")

try:
    workbook = export_report_to_excel(results, reference)
    st.download_button(
        "📥 Download Excel report",
        data=workbook,
        file_name="evaluation_report.xlsx",
        mime="application/vnd.openxmlformats-officedocument.spreadsheetml.sheet",
    )
except PairingError as exc:
    st.warning(f"Excel export unavailable: {exc}")
