"""Main Streamlit application for SignalGraph.

This is the entrypoint for the multi-page dashboard over generated road
networks, training logs and evaluation reports.
"""

import streamlit as st
import sys
from pathlib import Path

# Add parent directory to path for imports
sys.path.insert(0, str(Path(__file__).parent.parent))

import plotly.graph_objects as go

from signalgraph import __version__
from signalgraph import parameters as prm
from signalgraph.scenario import GenerationParams, generate_network


# Page configuration
st.set_page_config(
    page_title="SignalGraph - Traffic Signal Control",
    page_icon="🚦",
    layout="wide",
    initial_sidebar_state="expanded",
)


st.markdown("""
<style>
    .main-header {
        font-size: 2.5rem;
        font-weight: bold;
        color: #d62728;
        margin-bottom: 0.5rem;
    }
    .sub-header {
        font-size: 1.2rem;
        color: #666;
        margin-bottom: 2rem;
    }
</style>
""", unsafe_allow_html=True)


@st.cache_data
def network_stats(seed: int, n_intersections: int):
    """Size of generated networks, cached per (seed, size)."""
    network = generate_network(seed, GenerationParams().with_intersections(n_intersections))
    return network.describe()


# Initialize session state
if "results_dir" not in st.session_state:
    st.session_state.results_dir = "results"
if "training_dir" not in st.session_state:
    st.session_state.training_dir = "runs"


# Sidebar
with st.sidebar:
    st.markdown("### 🚦 SignalGraph")
    st.markdown(f"**Graph Q-learning for signal control** v{__version__}")
    st.markdown("---")

    st.markdown("### 📁 Locations")
    st.session_state.training_dir = st.text_input("Training run directory", st.session_state.training_dir)
    st.session_state.results_dir = st.text_input("Evaluation results directory", st.session_state.results_dir)

    st.markdown("---")
    st.markdown("""
    ### 📖 Navigation

    - **Network Explorer**: generate or load networks, inspect phase programs
    - **Training Monitor**: loss and reward curves of a training run
    - **Evaluation Report**: delay curves, trip durations, paired tests
    """)


# Main content
st.markdown('<div class="main-header">🚦 SignalGraph</div>', unsafe_allow_html=True)
st.markdown('<div class="sub-header">Decentralized traffic signal control with graph Q-learning</div>',
            unsafe_allow_html=True)

st.markdown("""
Every signal controller of a road network is scored by one shared relational graph
network. Controllers decide each second whether to **prolong** the current green
phase or **switch** to the next one; the network is trained with double deep
Q-learning on a simplified microscopic simulator and compared with fixed-time,
greedy and per-intersection Q-learning controllers.

### Workflow

1. Generate a target network: `python -m signalgraph gen-net --seed 7 --out net.txt`
2. Train: `python -m signalgraph train --config configs/s_igrl_l.yaml --out runs/s_igrl_l`
3. Evaluate: `python -m signalgraph eval --policy runs/s_igrl_l/final.npz --network net.txt --out results/igrl`
4. Open the pages on the left to inspect the outputs.
""")

st.markdown("### 📊 Simulation Constants")

col1, col2, col3, col4 = st.columns(4)

with col1:
    st.metric("Yellow Duration", f"{prm.YELLOW_DURATION} s")

with col2:
    st.metric("Min Time Between Switches", f"{prm.MIN_TIME_BETWEEN_SWITCHES} s")

with col3:
    st.metric("Default Demand", f"{prm.REGIME_RATES['default']:.1f} trips/s")

with col4:
    st.metric("Completion Cap", f"{prm.completion_cap(prm.EVALUATION_HORIZON)} s")

st.markdown("---")

st.markdown("### 🗺️ Generated Network Sizes")

sizes = list(range(prm.MIN_INTERSECTIONS, prm.MAX_INTERSECTIONS + 1))
stats = [network_stats(7, n) for n in sizes]

fig = go.Figure(data=[
    go.Bar(name="Lanes", x=sizes, y=[s["lanes"] for s in stats]),
    go.Bar(name="Connections", x=sizes, y=[s["connections"] for s in stats]),
])
fig.update_layout(
    title="Lanes and connections of seed-7 networks by number of intersections",
    xaxis_title="Intersections",
    yaxis_title="Count",
    barmode="group",
    height=400,
)
st.plotly_chart(fig, use_container_width=True)
