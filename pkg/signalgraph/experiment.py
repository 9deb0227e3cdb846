"""Train-then-evaluate comparison runs.

An experiment trains every labelled training config (for instance a
specialist, a generalist and a no-correction ablation), optionally the
per-intersection MARL baseline, and evaluates them with the fixed-time and
greedy controllers on the target network and on a held-out topology that
no training set contains. Training and evaluation are repeated for each
robustness repeat with fresh seeds, and one report per network compares
every method against the reference policy.
"""

import logging
import os
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Tuple

import pandas as pd

from .agent import LearnedPolicy, SharedGraphModel, TrainingResult, train
from .baselines import baseline_policy, marl_policy, marl_train
from .config import ExperimentConfig, TrainingConfig, load_training_config, save_config
from .data_models import EpisodeResult, RoadNetwork
from .evaluation import emit_report, evaluate, summary_table
from .exports import save_report_workbook
from .loaders import load_network, network_signature, save_network
from .scenario import GenerationParams, generate_network

logger = logging.getLogger(__name__)

TARGET = "target"
HELDOUT = "heldout"
MARL_ID = "MARL-IQL"


@dataclass
class ExperimentResult:
    """Episodes per network tag, training runs per (label, repeat), written files."""
    results: Dict[str, List[EpisodeResult]] = field(default_factory=dict)
    training: Dict[Tuple[str, int], TrainingResult] = field(default_factory=dict)
    outputs: Dict[str, Dict[str, str]] = field(default_factory=dict)
    summary: pd.DataFrame = field(default_factory=pd.DataFrame)


# ============================================================================
# NETWORKS
# ============================================================================

def _sized(params: GenerationParams, n: Optional[int]) -> GenerationParams:
    return params.with_intersections(n) if n is not None else params


def experiment_networks(config: ExperimentConfig) -> Dict[str, RoadNetwork]:
    """Target network and a held-out network with a different topology."""
    params = GenerationParams()
    if config.target_network:
        target = load_network(config.target_network)
    else:
        target = generate_network(config.target_network_seed, _sized(params, config.target_intersections))
    seed = config.heldout_network_seed
    heldout = generate_network(seed, _sized(params, config.heldout_intersections))
    while network_signature(heldout) == network_signature(target):
        seed += 1
        heldout = generate_network(seed, _sized(params, config.heldout_intersections))
    return {TARGET: target, HELDOUT: heldout}


# ============================================================================
# TRAINING
# ============================================================================

def _repeat_config(config: TrainingConfig, target_path: str, repeat: int) -> TrainingConfig:
    return replace(config, target_network=target_path, seed=config.seed + repeat).validate()


def train_methods(
    config: ExperimentConfig,
    networks: Dict[str, RoadNetwork],
    target_path: str,
    repeat: int,
    out_dir: str,
) -> Tuple[Dict[str, LearnedPolicy], Dict[Tuple[str, int], TrainingResult]]:
    """Train every labelled config (and MARL when enabled) for one repeat."""
    policies: Dict[str, LearnedPolicy] = {}
    runs: Dict[Tuple[str, int], TrainingResult] = {}
    for label, path in sorted(config.training.items()):
        training_config = _repeat_config(load_training_config(path), target_path, repeat)
        run_dir = os.path.join(out_dir, "train", label, f"repeat_{repeat}")
        logger.info("Training %s (repeat %d) into %s", label, repeat, run_dir)
        result = train(training_config, run_dir, exclude=[networks[HELDOUT]])
        runs[(label, repeat)] = result
        if training_config.model == "marl":
            policies[label] = marl_policy(result, networks[TARGET], policy_id=label)
        else:
            model = SharedGraphModel(training_config.graph_mode)
            policies[label] = LearnedPolicy(model, result.params, policy_id=label)

    if config.include_marl:
        marl_config = _repeat_config(load_training_config(config.marl_config), target_path, repeat)
        run_dir = os.path.join(out_dir, "train", MARL_ID, f"repeat_{repeat}")
        result = marl_train(marl_config, networks[TARGET], run_dir)
        runs[(MARL_ID, repeat)] = result
        policies[MARL_ID] = marl_policy(result, networks[TARGET], policy_id=MARL_ID)
    return policies, runs


# ============================================================================
# DRIVER
# ============================================================================

def _transferable(policy) -> bool:
    return not (isinstance(policy, LearnedPolicy) and hasattr(policy.model, "network_signature"))


def run_experiment(config: ExperimentConfig, out_dir: Optional[str] = None, write_svg: bool = True) -> ExperimentResult:
    """Train, evaluate and report every method of an experiment config.

    Args:
        config: Validated experiment configuration
        out_dir: Output directory (defaults to config.out_dir)
        write_svg: Also render report.svg per network

    Returns:
        ExperimentResult with every episode and the written report paths
    """
    config.validate()
    out_dir = out_dir or config.out_dir
    os.makedirs(out_dir, exist_ok=True)
    save_config(config, os.path.join(out_dir, "experiment.yaml"))

    networks = experiment_networks(config)
    paths = {}
    for tag, network in networks.items():
        paths[tag] = os.path.join(out_dir, "networks", f"{tag}.net.txt")
        save_network(network, paths[tag])

    outcome = ExperimentResult(results={tag: [] for tag in networks})
    for repeat in range(config.robustness_repeats):
        policies, runs = train_methods(config, networks, paths[TARGET], repeat, out_dir)
        outcome.training.update(runs)
        for name in config.baselines:
            policies[name] = baseline_policy(name)

        seeds = range(repeat * config.evaluation_seeds, (repeat + 1) * config.evaluation_seeds)
        for tag, network in networks.items():
            for policy_id, policy in sorted(policies.items()):
                if tag != TARGET and not _transferable(policy):
                    logger.info("Skipping %s on %s: parameters are bound to the target network", policy_id, tag)
                    continue
                for regime in config.regimes:
                    outcome.results[tag].extend(
                        evaluate(policy, network, regime, seeds, config.horizon, jobs=config.jobs)
                    )

    frames = []
    for tag, results in outcome.results.items():
        report_dir = os.path.join(out_dir, "report", tag)
        outcome.outputs[tag] = emit_report(results, report_dir, reference=config.reference, write_svg=write_svg)
        workbook = os.path.join(report_dir, "report.xlsx")
        save_report_workbook(results, workbook, reference=config.reference)
        outcome.outputs[tag]["workbook"] = workbook
        frame = summary_table(results)
        frame.insert(0, "network", tag)
        frames.append(frame)
    outcome.summary = pd.concat(frames, ignore_index=True) if frames else pd.DataFrame()
    outcome.summary.to_csv(os.path.join(out_dir, "summary.csv"), index=False)
    logger.info("Experiment %s finished: %s", config.name, {tag: len(r) for tag, r in outcome.results.items()})
    return outcome
