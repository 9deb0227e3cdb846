"""Streamlit dashboard for SignalGraph."""
