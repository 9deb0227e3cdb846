"""Training Monitor page for SignalGraph."""

import os

import pandas as pd
import streamlit as st

from signalgraph.exports import training_figure

st.set_page_config(page_title="Training Monitor - SignalGraph", page_icon="📈", layout="wide")

st.title("📈 Training Monitor")
st.markdown("Loss on sampled batches and on a frozen reference batch, and mean episode reward")

training_dir = st.session_state.get("training_dir", "runs")
runs = []
if os.path.isdir(training_dir):
    for root, _, files in os.walk(training_dir):
        if "training_log.csv" in files:
            runs.append(root)
runs.sort()

uploaded = st.sidebar.file_uploader("Or upload a training_log.csv", type=["csv"])

if uploaded is not None:
    log = pd.read_csv(uploaded)
    run_name = uploaded.name
elif runs:
    run_name = st.sidebar.selectbox("Run", runs)
    log = pd.read_csv(os.path.join(run_name, "training_log.csv"))
else:
    st.info(f"No training_log.csv found under {training_dir!r}. Set the directory on the main page.")
    st.stop()

if log.empty:
    st.warning("The training log is empty.")
    st.stop()

last = log.iloc[-1]
first = log.iloc[0]

col1, col2, col3, col4 = st.columns(4)

with col1:
    st.metric("Updates", f"{int(last['update']):,}")

with col2:
    st.metric("Environment Steps", f"{int(last['env_steps']):,}")

with col3:
    reduction = None
    if pd.notna(first["heldout_loss"]) and first["heldout_loss"] > 0 and pd.notna(last["heldout_loss"]):
        reduction = 1 - last["heldout_loss"] / first["heldout_loss"]
    st.metric(
        "Reference Batch Loss",
        f"{last['heldout_loss']:.4f}" if pd.notna(last["heldout_loss"]) else "n/a",
        delta=f"{-reduction*100:.0f}%" if reduction is not None else None,
        delta_color="inverse",
    )

with col4:
    reward = last["mean_episode_reward"]
    st.metric("Mean Episode Reward", f"{reward:.1f}" if pd.notna(reward) else "n/a")

st.plotly_chart(training_figure(log), use_container_width=True)

config_path = os.path.join(run_name, "config.yaml") if uploaded is None else None
if config_path and os.path.exists(config_path):
    with st.expander("Run configuration"):
        with open(config_path, "r", encoding="utf-8") as handle:
            st.code(handle.read(), language="yaml")

with st.expander("Raw log"):
    st.dataframe(log, use_container_width=True, hide_index=True)
