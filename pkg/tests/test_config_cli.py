"""Experiment configs and the qnn-fat command line, end to end on tiny IDX files."""

import json
from pathlib import Path

import pytest
import yaml
from test_datasets import idx_bytes, write_mnist_like

from qnn_fat.cli import main
from qnn_fat.config import ExperimentConfig, config_from_mapping, dump_config, load_config
from qnn_fat.errors import ConfigurationError
from qnn_fat.evaluation import read_report_csv, read_scatter_csv
from qnn_fat.replication import read_frontier_csv
from qnn_fat.training import read_training_log

CONFIG_DIR = Path(__file__).parent.parent / "configs"

# ---------------------------------------------------------------------------
# Config files
# ---------------------------------------------------------------------------


def test_minimal_sat_config():
    config = config_from_mapping({"method": "sat", "dataset": "mnist"})
    assert config.p is None
    assert config.epochs == 30
    assert config.to_train_config().p == 0.0


def test_unknown_keys_are_listed():
    with pytest.raises(ConfigurationError) as ctx:
        config_from_mapping({"method": "sat", "dataset": "mnist", "lr": 1, "epoch": 2})
    assert ctx.value.keys == ["epoch", "lr"]
    assert "Unknown config keys: epoch, lr" in str(ctx.value)


def test_missing_keys_are_listed():
    with pytest.raises(ConfigurationError) as ctx:
        config_from_mapping({"p": 5})
    assert ctx.value.keys == ["dataset", "method"]


def test_fat_needs_p():
    with pytest.raises(ConfigurationError) as ctx:
        config_from_mapping({"method": "fat2", "dataset": "mnist"})
    assert ctx.value.keys == ["p"]


@pytest.mark.parametrize(
    "key, value",
    [("epochs", "ten"), ("epochs", 2.5), ("cost_include_fc", "yes"), ("p", True),
     ("sweep_layers", [0, "1"]), ("sweep_mode", "rows"), ("dataset_format", "png"),
     ("workers", 0)],
)
def test_bad_values(key, value):
    with pytest.raises(ConfigurationError):
        config_from_mapping({"method": "fat1", "p": 5, "dataset": "mnist", key: value})


def test_overrides_win_and_none_is_ignored():
    config = config_from_mapping(
        {"method": "fat1", "p": 5, "dataset": "mnist", "seed": 1},
        {"seed": 9, "workers": None},
    )
    assert config.seed == 9
    assert config.workers is None
    assert isinstance(config.p, float)


def test_yaml_round_trip(tmp_path):
    path = tmp_path / "fat2.yaml"
    path.write_text("method: fat2\np: 5\ndataset: mnist\nsweep_layers: [0, 1, 2]\n")
    config = load_config(path)
    assert config.sweep_layers == [0, 1, 2]
    again = load_config(dump_config(config, tmp_path / "copy.yaml"))
    assert again == config


def test_yaml_errors(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_config(tmp_path / "missing.yaml")
    broken = tmp_path / "broken.yaml"
    broken.write_text("method: [sat\n")
    with pytest.raises(ConfigurationError):
        load_config(broken)
    listing = tmp_path / "list.yaml"
    listing.write_text("- sat\n")
    with pytest.raises(ConfigurationError):
        load_config(listing)


@pytest.mark.parametrize("path", sorted(CONFIG_DIR.glob("*.yaml")), ids=lambda p: p.name)
def test_shipped_configs_are_valid(path):
    config = load_config(path)
    assert config.to_train_config().run_name.startswith(config.topology)


def test_experiment_config_is_a_dataclass():
    config = ExperimentConfig(method="sat", dataset="mnist")
    assert config.to_dict()["output_dir"] == "results"


# ---------------------------------------------------------------------------
# Command line
# ---------------------------------------------------------------------------


@pytest.fixture
def workspace(tmp_path):
    data = tmp_path / "mnist"
    data.mkdir()
    write_mnist_like(data, n_train=12, n_test=6, seed=4)
    config = {
        "method": "fat1",
        "p": 10,
        "dataset": "mnist-synthetic",
        "data_path": str(data),
        "topology": "toy",
        "epochs": 2,
        "batch_size": 4,
        "eval_subset_size": 6,
        "workers": 1,
        "seed": 5,
    }
    path = tmp_path / "fat1.yaml"
    path.write_text(yaml.safe_dump(config))
    return tmp_path, path


def test_end_to_end(workspace, capsys):
    root, config = workspace
    out = root / "results"

    assert main(["train", "--config", str(config), "--out-dir", str(out), "--no-progress"]) == 0
    checkpoint = out / "toy_w1a1_fat1_p10_channel.qfat"
    assert checkpoint.exists()
    records = read_training_log(out / "toy_w1a1_fat1_p10_channel_train_log.csv")
    assert [r.steps for r in records] == [3, 3]
    assert load_config(out / "toy_w1a1_fat1_p10_channel_config.yaml").method == "fat1"
    assert f"wrote {checkpoint}" in capsys.readouterr().out

    assert main(["sweep", "--config", str(config), "--checkpoint", str(checkpoint),
                 "--out-dir", str(out), "--no-progress"]) == 0
    rows = read_report_csv(out / "toy_w1a1_fat1_p10_channel_channel_sweep.csv")
    assert len(rows) == 2 * 4
    assert (out / "toy_w1a1_fat1_p10_channel_channel_summary.csv").exists()
    report = out / "toy_w1a1_fat1_p10_channel_channel_sweep.json"

    assert main(["pareto", "--report", str(report), "--checkpoint", str(checkpoint),
                 "--out-dir", str(out)]) == 0
    frontier = read_frontier_csv(out / "toy_w1a1_fat1_p10_channel_channel_frontier.csv")
    assert [p.k for p in frontier] == [0, 1, 2, 3, 4]
    assert (out / "toy_w1a1_fat1_p10_channel_channel_frontier.json").exists()

    capsys.readouterr()
    assert main(["report", str(report), "--out-dir", str(out), "--json"]) == 0
    payload = json.loads(capsys.readouterr().out)
    assert payload["command"] == "report"
    assert payload["outputs"] == [str(out / "summary_toy_w1a1_fat1_p10_channel_channel.csv"),
                                  str(out / "scatter.csv")]
    assert list(read_scatter_csv(out / "scatter.csv")) == ["toy_w1a1_fat1_p10_channel_channel"]


def test_reruns_are_byte_identical(workspace):
    root, config = workspace
    for name in ("a", "b"):
        out = root / name
        assert main(["train", "--config", str(config), "--out-dir", str(out),
                     "--no-progress"]) == 0
        assert main(["sweep", "--config", str(config), "--checkpoint",
                     str(out / "toy_w1a1_fat1_p10_channel.qfat"), "--mode", "pixel",
                     "--out-dir", str(out), "--no-progress"]) == 0
    for name in ("toy_w1a1_fat1_p10_channel.qfat", "toy_w1a1_fat1_p10_channel_train_log.csv",
                 "toy_w1a1_fat1_p10_channel_pixel_sweep.csv", "toy_w1a1_fat1_p10_channel_pixel_summary.csv"):
        assert (root / "a" / name).read_bytes() == (root / "b" / name).read_bytes(), name


def test_seed_override_changes_the_checkpoint(workspace):
    root, config = workspace
    main(["train", "--config", str(config), "--out-dir", str(root / "a"), "--no-progress"])
    main(["train", "--config", str(config), "--out-dir", str(root / "b"), "--no-progress",
          "--seed", "6"])
    name = "toy_w1a1_fat1_p10_channel.qfat"
    assert (root / "a" / name).read_bytes() != (root / "b" / name).read_bytes()


def test_debug_output_in_json(workspace, capsys):
    root, config = workspace
    out = root / "results"
    main(["train", "--config", str(config), "--out-dir", str(out), "--no-progress"])
    capsys.readouterr()
    assert main(["sweep", "--config", str(config), "--checkpoint",
                 str(out / "toy_w1a1_fat1_p10_channel.qfat"), "--out-dir", str(out),
                 "--json", "--debug"]) == 0
    payload = json.loads(capsys.readouterr().out)
    assert "[SWEEP] channel mode, 8 configurations" in payload["debug"]
    assert "DEBUG: Fault L0 channel 0 s@-1" in payload["debug"]


def test_missing_config_flag(capsys):
    assert main(["train"]) == 2
    err = capsys.readouterr().err
    assert err.startswith("error[configuration]")
    assert "--config" in err


def test_missing_config_file(tmp_path, capsys):
    assert main(["train", "--config", str(tmp_path / "none.yaml")]) == 4
    assert "error[io]" in capsys.readouterr().err


def test_unknown_key_exit_code_and_json_error(tmp_path, capsys):
    path = tmp_path / "bad.yaml"
    path.write_text("method: sat\ndataset: mnist\nlearning_rate: 0.1\n")
    assert main(["train", "--config", str(path), "--json"]) == 2
    error = json.loads(capsys.readouterr().err)
    assert error["error"] == "configuration"
    assert "learning_rate" in error["message"]


def test_corrupt_dataset_exit_code(workspace, capsys):
    root, config = workspace
    labels = root / "mnist" / "train-labels-idx1-ubyte"
    labels.write_bytes(idx_bytes(list(range(12)))[:-3])
    assert main(["train", "--config", str(config), "--out-dir", str(root / "out"),
                 "--no-progress"]) == 3
    assert "expected" in capsys.readouterr().err


def test_pareto_rejects_pixel_reports(workspace):
    root, config = workspace
    out = root / "results"
    main(["train", "--config", str(config), "--out-dir", str(out), "--no-progress"])
    main(["sweep", "--config", str(config), "--checkpoint", str(out / "toy_w1a1_fat1_p10_channel.qfat"),
          "--mode", "pixel", "--out-dir", str(out), "--no-progress"])
    assert main(["pareto", "--report", str(out / "toy_w1a1_fat1_p10_channel_pixel_sweep.json"),
                 "--checkpoint", str(out / "toy_w1a1_fat1_p10_channel.qfat"),
                 "--out-dir", str(out)]) == 2
