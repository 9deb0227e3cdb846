"""Command-line entry point: generate, train, evaluate, compare, inspect.

Usage:
    python -m signalgraph gen-net --seed 7 --out net.txt
    python -m signalgraph gen-demand --network net.txt --seed 0 --regime heavy --out trips.txt
    python -m signalgraph train --config configs/g_igrl_l.yaml --out runs/g_igrl_l
    python -m signalgraph eval --policy runs/g_igrl_l/final.npz --network held_out.txt --out results/igrl
    python -m signalgraph compare --a results/igrl --b results/fixed --out results/paired
    python -m signalgraph inspect-graph --network net.txt --mode vehicle --steps 60 --out graph.txt
    python -m signalgraph experiment --config configs/experiment1.yaml

Exit codes: 0 ok, 1 runtime failure, 2 usage or configuration error.
"""

import argparse
import logging
import os
import sys
from dataclasses import replace
from typing import List, Optional, Sequence

from . import __version__
from . import parameters as prm
from .baselines import BASELINE_POLICIES, FixedTimePolicy, baseline_policy
from .data_models import GraphMode, Regime, RoadNetwork
from .errors import ConfigError, SignalGraphError

logger = logging.getLogger("signalgraph")

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2


def parse_seeds(text: str) -> List[int]:
    """'10' -> 0..9, '3:6' -> 3,4,5, '1,4,9' -> 1,4,9."""
    try:
        if "," in text:
            return [int(s) for s in text.split(",") if s.strip()]
        if ":" in text:
            start, stop = text.split(":", 1)
            return list(range(int(start), int(stop)))
        return list(range(int(text)))
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid seed list {text!r}") from None


# ============================================================================
# SUBCOMMANDS
# ============================================================================

def _network_from_args(args) -> RoadNetwork:
    from .loaders import load_network
    from .scenario import GenerationParams, generate_network

    if args.network:
        return load_network(args.network, strict=not getattr(args, "lenient", False))
    params = GenerationParams()
    if getattr(args, "intersections", None):
        params = params.with_intersections(args.intersections)
    return generate_network(args.network_seed if args.network_seed is not None else args.seed, params)


def cmd_gen_net(args) -> int:
    from .loaders import save_network
    from .scenario import GenerationParams, generate_network

    params = GenerationParams(max_lanes=args.max_lanes)
    if args.intersections:
        params = params.with_intersections(args.intersections)
    network = generate_network(args.seed, params)
    save_network(network, args.out)
    counts = network.describe()
    print(f"✓ Generated network (seed {args.seed}): {counts['tscs']} TSCs, {counts['lanes']} lanes, "
          f"{counts['connections']} connections")
    print(f"✓ Network saved to {args.out}")
    return EXIT_OK


def cmd_gen_demand(args) -> int:
    from .loaders import load_network, save_trips
    from .scenario import generate_demand

    network = load_network(args.network)
    rate = args.rate if args.rate is not None else prm.regime_rate(args.regime)
    trips = generate_demand(args.seed, network, rate, args.horizon)
    save_trips(trips, args.out)
    print(f"✓ Generated {len(trips)} trips at {rate} trips/s over {args.horizon}s")
    print(f"✓ Trips saved to {args.out}")
    return EXIT_OK


def cmd_train(args) -> int:
    from .agent import train
    from .config import TrainingConfig, load_training_config

    config = load_training_config(args.config) if args.config else TrainingConfig()
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.total_steps is not None:
        overrides["total_steps"] = args.total_steps
    if args.network:
        overrides["target_network"] = args.network
    config = replace(config, **overrides).validate()
    result = train(config, args.out)
    print(f"✓ Trained {config.model} ({config.training_set}, {config.mode}): "
          f"{result.updates} updates over {result.env_steps} environment steps")
    print(f"✓ Checkpoint and training log saved to {args.out}/")
    return EXIT_OK


def _policy_from_args(args, network: RoadNetwork):
    from .agent import load_policy

    if args.policy in BASELINE_POLICIES:
        return baseline_policy(args.policy)
    if not os.path.exists(args.policy):
        raise ConfigError(
            "policy", f"{args.policy!r} is neither a baseline ({sorted(BASELINE_POLICIES)}) nor a checkpoint file"
        )
    return load_policy(args.policy, network, policy_id=args.policy_id)


def cmd_eval(args) -> int:
    from .evaluation import emit_report, evaluate, run_episode, summary_table
    from .loaders import load_trips

    network = _network_from_args(args)
    policy = _policy_from_args(args, network)
    if args.trips:
        trips = load_trips(args.trips, network)
        results = [
            run_episode(policy, network, trips, seed, args.regime, args.horizon, args.fixed_duration)
            for seed in args.seeds
        ]
    else:
        results = evaluate(
            policy, network, args.regime, args.seeds, args.horizon, jobs=args.jobs, fixed_duration=args.fixed_duration
        )
    emit_report(results, args.out, reference=None, write_svg=not args.no_svg)
    summary = summary_table(results)
    for row in summary.itertuples(index=False):
        print(f"✓ {row.policy_id} [{row.regime}]: mean {row.mean:.1f}s, median {row.median:.1f}s "
              f"over {row.n_trips} trips ({row.n_censored} censored)")
    print(f"✓ Results saved to {args.out}/")
    return EXIT_OK


def cmd_compare(args) -> int:
    from .evaluation import compare_result_dirs, load_results, paired_table
    from .exports import write_report_svg

    comparisons = compare_result_dirs(args.a, args.b, args.policy_a, args.policy_b)
    table = paired_table(comparisons)
    os.makedirs(args.out, exist_ok=True)
    table.to_csv(os.path.join(args.out, "paired.csv"), index=False)
    if not args.no_svg:
        write_report_svg(load_results(args.a) + load_results(args.b), comparisons, os.path.join(args.out, "report.svg"))
    for c in comparisons:
        verdict = "significant" if c.t_defined and c.p_value < prm.SIGNIFICANCE_LEVEL else "not significant"
        print(f"✓ {c.policy_a} - {c.policy_b} [{c.regime}]: mean {c.mean:+.2f}s over {c.n_pairs} trips, "
              f"t={c.t_stat:.2f}, p={c.p_value:.3g} ({verdict})")
    print(f"✓ Paired report saved to {args.out}/")
    return EXIT_OK


def cmd_inspect_graph(args) -> int:
    from .graphenc import dump_graph, encode
    from .scenario import generate_demand
    from .sim import reset, step

    network = _network_from_args(args)
    trips = generate_demand(args.seed, network, prm.regime_rate(args.regime), max(args.steps, 1))
    state = reset(network, trips, args.seed)
    controller = FixedTimePolicy()
    for _ in range(args.steps):
        state, _ = step(state, controller.act(state))
    graph = encode(state, network, GraphMode(args.mode))
    if args.out:
        dump_graph(graph, args.out)
    print(f"✓ Observation graph at t={state.clock}: {graph.n_nodes} nodes")
    print(graph.summary().to_string(index=False))
    if args.out:
        print(f"✓ Edge list saved to {args.out}")
    return EXIT_OK


def cmd_experiment(args) -> int:
    from .config import load_experiment_config
    from .experiment import run_experiment

    config = load_experiment_config(args.config)
    if args.jobs is not None:
        config.jobs = args.jobs
    outcome = run_experiment(config, args.out, write_svg=not args.no_svg)
    out_dir = args.out or config.out_dir
    print(f"✓ Experiment {config.name}: {sum(len(r) for r in outcome.results.values())} episodes evaluated")
    print(outcome.summary[["network", "policy_id", "regime", "mean", "median", "n_censored"]].to_string(index=False))
    print(f"✓ Reports saved to {out_dir}/report/")
    return EXIT_OK


# ============================================================================
# PARSER
# ============================================================================

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="random seed (default 0, or the config's seed)")
    common.add_argument("-v", "--verbose", action="count", default=0, help="more logging (-v info, -vv debug)")

    network_args = argparse.ArgumentParser(add_help=False)
    network_args.add_argument("--network", help="network text file (generated from --network-seed when omitted)")
    network_args.add_argument("--network-seed", type=int, default=None, help="seed of a generated network")
    network_args.add_argument("--intersections", type=int, default=None, help="size of a generated network")
    network_args.add_argument("--lenient", action="store_true", help="accept imported programs of any timing")

    parser = argparse.ArgumentParser(
        prog="signalgraph",
        description="Graph-based decentralized traffic signal control: generate, train, evaluate.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="command")
    sub.required = True

    p = sub.add_parser("gen-net", parents=[common], help="generate a random road network")
    p.add_argument("--out", required=True, help="output network file")
    p.add_argument("--intersections", type=int, default=None, help="exact number of intersections")
    p.add_argument("--max-lanes", type=int, default=prm.DEFAULT_MAX_GENERATED_LANES, help="maximum lanes per edge")
    p.set_defaults(func=cmd_gen_net)

    p = sub.add_parser("gen-demand", parents=[common], help="generate a trip table for a network")
    p.add_argument("--network", required=True, help="network text file")
    p.add_argument("--regime", choices=[r.value for r in Regime], default=Regime.DEFAULT.value)
    p.add_argument("--rate", type=float, default=None, help="trips per second (overrides --regime)")
    p.add_argument("--horizon", type=int, default=prm.EVALUATION_HORIZON, help="demand horizon in seconds")
    p.add_argument("--out", required=True, help="output trips file")
    p.set_defaults(func=cmd_gen_demand)

    p = sub.add_parser("train", parents=[common], help="train a Q-learning model from a YAML config")
    p.add_argument("--config", default=None, help="training config (YAML)")
    p.add_argument("--network", default=None, help="target network file (overrides the config)")
    p.add_argument("--total-steps", type=int, default=None, help="environment steps (overrides the config)")
    p.add_argument("--out", required=True, help="output directory for checkpoints and logs")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", parents=[common, network_args], help="evaluate a policy over demand seeds")
    p.add_argument("--policy", required=True, help=f"checkpoint file or one of {sorted(BASELINE_POLICIES)}")
    p.add_argument("--policy-id", default=None, help="label of a checkpoint policy in the results")
    p.add_argument("--regime", choices=[r.value for r in Regime], default=Regime.DEFAULT.value)
    p.add_argument("--seeds", type=parse_seeds, default=list(range(prm.EVALUATION_SEEDS)),
                   help="'N' for 0..N-1, 'a:b' or a comma list")
    p.add_argument("--trips", default=None, help="trip file to replay instead of generated demand")
    p.add_argument("--horizon", type=int, default=prm.EVALUATION_HORIZON, help="demand horizon in seconds")
    p.add_argument("--fixed-duration", type=int, default=None, help="stop episodes after this many seconds")
    p.add_argument("--jobs", type=int, default=os.cpu_count() or 1, help="worker processes")
    p.add_argument("--no-svg", action="store_true", help="skip report.svg")
    p.add_argument("--out", required=True, help="output results directory")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("compare", parents=[common], help="paired comparison of two results directories")
    p.add_argument("--a", required=True, help="results directory of policy a")
    p.add_argument("--b", required=True, help="results directory of policy b")
    p.add_argument("--policy-a", default=None, help="policy to take from --a when it holds several")
    p.add_argument("--policy-b", default=None, help="policy to take from --b when it holds several")
    p.add_argument("--no-svg", action="store_true", help="skip report.svg")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("inspect-graph", parents=[common, network_args], help="dump the observation graph")
    p.add_argument("--mode", choices=[m.value for m in GraphMode], default=GraphMode.LANE.value)
    p.add_argument("--steps", type=int, default=0, help="fixed-time steps to simulate before encoding")
    p.add_argument("--regime", choices=[r.value for r in Regime], default=Regime.DEFAULT.value)
    p.add_argument("--out", default=None, help="edge-list output file")
    p.set_defaults(func=cmd_inspect_graph)

    p = sub.add_parser("experiment", parents=[common], help="train and compare every method of an experiment")
    p.add_argument("--config", required=True, help="experiment config (YAML)")
    p.add_argument("--jobs", type=int, default=None, help="worker processes (overrides the config)")
    p.add_argument("--no-svg", action="store_true", help="skip report.svg")
    p.add_argument("--out", default=None, help="output directory (overrides the config)")
    p.set_defaults(func=cmd_experiment)
    return parser


def _configure_logging(verbosity: int) -> None:
    level = logging.WARNING if verbosity <= 0 else logging.INFO if verbosity == 1 else logging.DEBUG
    logging.basicConfig(level=level, format="%(asctime)s %(levelname)s %(name)s: %(message)s")


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Parse arguments, run one subcommand and return its exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    _configure_logging(args.verbose)
    if args.command not in ("train", "experiment") and args.seed is None:
        args.seed = 0
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (SignalGraphError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        logger.debug("command failed", exc_info=True)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
