"""Network Explorer page for SignalGraph."""

import streamlit as st
import plotly.express as px

from signalgraph import parameters as prm
from signalgraph.data_models import GraphMode
from signalgraph.errors import SignalGraphError
from signalgraph.exports import network_figure, programs_table
from signalgraph.graphenc import encode
from signalgraph.loaders import network_to_text, parse_network
from signalgraph.scenario import GenerationParams, generate_demand, generate_network
from signalgraph.sim import reset

st.set_page_config(page_title="Network Explorer - SignalGraph", page_icon="🗺️", layout="wide")

st.title("🗺️ Network Explorer")
st.markdown("Generate a random road network or load one from a file, then inspect its signal programs")

# Sidebar
st.sidebar.markdown("## ⚙️ Network")

source = st.sidebar.radio("Source", ["Generate", "Upload"])

network = None
if source == "Generate":
    seed = st.sidebar.number_input("Seed", min_value=0, value=7, step=1)
    n_intersections = st.sidebar.slider(
        "Intersections", prm.MIN_INTERSECTIONS, prm.MAX_INTERSECTIONS, prm.MIN_INTERSECTIONS
    )
    max_lanes = st.sidebar.slider("Max lanes per edge", 1, prm.MAX_LANES_PER_EDGE, prm.DEFAULT_MAX_GENERATED_LANES)
    params = GenerationParams(max_lanes=max_lanes).with_intersections(n_intersections)
    network = generate_network(int(seed), params)
else:
    uploaded = st.sidebar.file_uploader("Network file", type=["txt"])
    lenient = st.sidebar.checkbox("Accept any program timing", value=False)
    if uploaded is not None:
        try:
            network = parse_network(uploaded.getvalue().decode("utf-8"), path=uploaded.name, strict=not lenient)
        except SignalGraphError as exc:
            st.error(f"Could not load network: {exc}")

if network is None:
    st.info("Upload a network file to begin.")
    st.stop()

# Summary metrics
counts = network.describe()
col1, col2, col3, col4 = st.columns(4)

with col1:
    st.metric("Signalized Intersections", counts["tscs"])

with col2:
    st.metric("Edges", counts["edges"])

with col3:
    st.metric("Lanes", counts["lanes"])

with col4:
    st.metric("Connections", counts["connections"])

st.plotly_chart(network_figure(network), use_container_width=True)

st.download_button(
    "Download network file",
    data=network_to_text(network),
    file_name="network.txt",
    mime="text/plain",
)

st.markdown("---")

# Phase programs
st.markdown("## 🚦 Phase Programs")

programs = programs_table(network)
selected_tsc = st.selectbox("Controller", network.tsc_ids)
st.dataframe(programs[programs["tsc"] == selected_tsc], use_container_width=True, hide_index=True)

connections = [
    {"link": c.link_index, "connection": c.id, "from_lane": c.from_lane, "to_lane": c.to_lane}
    for c in network.tsc_connections[selected_tsc]
]
st.caption("Column k of each phase state is the signal of link k below.")
st.dataframe(connections, use_container_width=True, hide_index=True)

st.markdown("---")

# Observation graph
st.markdown("## 🔗 Observation Graph at t = 0")

mode = st.radio("Graph mode", [m.value for m in GraphMode], horizontal=True)
try:
    trips = generate_demand(0, network, prm.regime_rate("default"), 60)
except SignalGraphError as exc:
    st.warning(f"No demand can be generated on this network: {exc}")
    st.stop()
graph = encode(reset(network, trips, 0), network, GraphMode(mode))
summary = graph.summary()

col1, col2 = st.columns(2)

with col1:
    fig = px.bar(summary[summary["kind"] == "node"], x="type", y="count", title="Nodes by type")
    fig.update_layout(height=350)
    st.plotly_chart(fig, use_container_width=True)

with col2:
    fig = px.bar(summary[summary["kind"] == "edge"], x="type", y="count", title="Edges by relation")
    fig.update_layout(height=350)
    st.plotly_chart(fig, use_container_width=True)
