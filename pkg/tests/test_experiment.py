from pathlib import Path

import pandas as pd
import yaml

from signalgraph.cli import main
from signalgraph.config import ExperimentConfig
from signalgraph.experiment import HELDOUT, TARGET, experiment_networks, run_experiment
from signalgraph.loaders import load_network, network_signature

SMOKE_CONFIG = Path(__file__).resolve().parent.parent / "configs" / "smoke.yaml"


def test_heldout_network_differs_from_target():
    networks = experiment_networks(ExperimentConfig())
    assert len(networks[TARGET].tsc_ids) == 2
    assert len(networks[HELDOUT].tsc_ids) == 3
    assert network_signature(networks[TARGET]) != network_signature(networks[HELDOUT])


def test_baseline_only_experiment(tmp_path):
    config = ExperimentConfig(
        name="tiny", evaluation_seeds=2, robustness_repeats=2, regimes=["default"], horizon=30, jobs=1
    )
    outcome = run_experiment(config, str(tmp_path), write_svg=False)

    for tag in (TARGET, HELDOUT):
        results = outcome.results[tag]
        assert len(results) == 2 * 2 * 2
        assert {r.scenario_seed for r in results} == {0, 1, 2, 3}
        assert Path(outcome.outputs[tag]["workbook"]).exists()
        paired = pd.read_csv(tmp_path / "report" / tag / "paired.csv")
        assert paired[["policy_a", "policy_b"]].values.tolist() == [["greedy", "fixed_time"]]
        load_network(str(tmp_path / "networks" / f"{tag}.net.txt"))

    summary = pd.read_csv(tmp_path / "summary.csv")
    assert sorted(zip(summary["network"], summary["policy_id"])) == [
        (HELDOUT, "fixed_time"), (HELDOUT, "greedy"), (TARGET, "fixed_time"), (TARGET, "greedy"),
    ]


def test_experiment_command_trains_and_compares(tmp_path, capsys):
    config_path = tmp_path / "exp.yaml"
    config_path.write_text(yaml.safe_dump({
        "name": "smoke",
        "evaluation_seeds": 1,
        "robustness_repeats": 1,
        "regimes": ["default"],
        "horizon": 30,
        "training": {"S-IG-RL-L": str(SMOKE_CONFIG)},
    }))
    out = tmp_path / "out"
    assert main(["experiment", "--config", str(config_path), "--jobs", "1", "--no-svg", "--out", str(out)]) == 0

    assert (out / "train" / "S-IG-RL-L" / "repeat_0" / "final.npz").exists()
    summary = pd.read_csv(out / "summary.csv")
    assert set(summary[summary["network"] == HELDOUT]["policy_id"]) == {"S-IG-RL-L", "fixed_time", "greedy"}
    assert "✓ Experiment smoke" in capsys.readouterr().out
