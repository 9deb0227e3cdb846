"""SignalGraph - decentralized traffic signal control with graph Q-learning

A shared relational graph network scores every signal controller of any
road network, trained with double deep Q-learning on a simplified
microscopic simulator and evaluated against fixed-time, greedy and
per-intersection baselines.
"""

__version__ = "1.0.0"
