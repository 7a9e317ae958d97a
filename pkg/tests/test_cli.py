import csv
import json

import pytest

from irbseg import cli
from irbseg.datamodel import load_manifest
from irbseg.irb import IrbRunState
from irbseg.metrics import IoUReport

import test_trainer  # noqa: F401  registers the "oracle" lookup model
from test_synthgen import tree_hash

SMALL = {
    "seed": 3,
    "out_dir": "out",
    "scene": {"image_size": [32, 32]},
    "generate": {"n_sim": 12, "n_real": 40, "real_splits": [0.7, 0.15, 0.15]},
    "blend": {"total_budget": 10, "max_iterations": 4},
    "spectral": {"beta": 0.05},
    "trainer": {"epochs": 1, "batch_size": 8, "image_size": [32, 32], "base_width": 4},
}


def write_config(tmp_path, doc=None, **changes):
    doc = json.loads(json.dumps(doc or SMALL))
    doc.update(changes)
    path = tmp_path / "run.json"
    path.write_text(json.dumps(doc))
    return path


@pytest.fixture(scope="module")
def generated(tmp_path_factory):
    root = tmp_path_factory.mktemp("gen")
    cfg = cli.load_config(write_config(root))
    return root, cli.cmd_generate(cfg)


def data_section(paths):
    return {k: str(v) for k, v in paths.items()}


class StubTrainer:
    def __init__(self, ranking):
        self.ranking = ranking

    def __call__(self, trainset, eval_set, iteration, work_dir):
        iou = {0: 0.9, **{k: 0.1 * (i + 1) for i, k in enumerate(self.ranking)}}
        return None, IoUReport(iou, iou, 0.5 + 0.01 * iteration, 0.5, tuple(self.ranking))


def test_generate_writes_splits(generated):
    root, paths = generated
    pool, val, test = (load_manifest(paths[k]) for k in ("target_pool", "target_val", "target_test"))
    assert (len(pool), len(val), len(test)) == (28, 6, 6)
    assert not (pool.sample_ids & val.sample_ids) and not (val.sample_ids & test.sample_ids)
    assert len(load_manifest(paths["source"])) == 12


def test_generate_deterministic(tmp_path):
    for sub in ("a", "b"):
        (tmp_path / sub).mkdir()
        assert cli.main(["generate", "--config", str(write_config(tmp_path / sub))]) == 0
    assert tree_hash(tmp_path / "a" / "out") == tree_hash(tmp_path / "b" / "out")


def test_seed_override(tmp_path):
    path = write_config(tmp_path, blend={"total_budget": 10, "seed": 99})
    assert cli.load_config(path).blend.seed == 99
    assert cli.load_config(path).spectral.seed == 3
    import argparse

    forced = cli.load_config(path, argparse.Namespace(seed=7, beta=0.1, max_iterations=2, cpu_only=True))
    assert forced.blend.seed == 7 and forced.scene.seed == 7
    assert forced.spectral.beta == 0.1 and forced.blend.max_iterations == 2
    assert forced.trainer.device_hint == "cpu-only"


@pytest.mark.parametrize(
    "changes, argv",
    [
        ({"blend": {"bogus": 1}}, []),
        ({"spectral": {"beta": 0.9}}, []),
        ({"generate": {"real_splits": [0.5, 0.5, 0.5]}}, []),
        ({"seed": "zero"}, []),
        ({}, ["--beta", "-1"]),
        ({}, ["--max-iterations", "0"]),
    ],
)
def test_config_errors_exit_2(tmp_path, changes, argv, capsys):
    path = write_config(tmp_path, **changes)
    assert cli.main(["generate", "--config", str(path), *argv]) == 2
    assert "config error" in capsys.readouterr().err


def test_missing_config_and_data(tmp_path):
    assert cli.main(["train", "--config", str(tmp_path / "none.json")]) == 2
    assert cli.main(["train", "--config", str(write_config(tmp_path))]) == 2
    bad = write_config(tmp_path, data={"source": "missing.json"})
    assert cli.main(["stylize", "--config", str(bad)]) == 2


def test_runtime_error_exit_1(tmp_path, capsys):
    broken = tmp_path / "broken.json"
    broken.write_text("{not json")
    path = write_config(tmp_path, data={"source": str(broken), "target_pool": str(broken)})
    assert cli.main(["stylize", "--config", str(path)]) == 1
    assert "error" in capsys.readouterr().err


def test_train_epochs_zero_and_evaluate(generated, tmp_path):
    _, paths = generated
    trainer = {**SMALL["trainer"], "epochs": 0}
    path = write_config(tmp_path, trainer=trainer, data=data_section(paths))
    assert cli.main(["train", "--config", str(path)]) == 0
    ckpt = tmp_path / "out" / "checkpoint"
    meta = json.loads((ckpt / "checkpoint.json").read_text())
    assert meta["training_log"] == []
    path = write_config(tmp_path, trainer=trainer, data={**data_section(paths), "checkpoint": str(ckpt)})
    assert cli.main(["evaluate", "--config", str(path)]) == 0
    report = json.loads((tmp_path / "out" / "evaluation.json").read_text())
    assert set(report) >= {"miou", "macc", "per_class_iou"}


def test_evaluate_oracle_is_perfect(generated, tmp_path):
    _, paths = generated
    data = {**data_section(paths), "train": str(paths["target_val"]), "eval": str(paths["target_val"])}
    cfg = cli.load_config(write_config(tmp_path, trainer={**SMALL["trainer"], "model_name": "oracle"}, data=data))
    ckpt = cli.cmd_train(cfg)
    cfg.data["checkpoint"] = str(ckpt)
    out = cli.cmd_evaluate(cfg)
    assert json.loads(out.read_text())["miou"] == 1.0


def test_stylize_command(generated, tmp_path):
    _, paths = generated
    cfg = cli.load_config(write_config(tmp_path, data=data_section(paths)))
    styled = load_manifest(cli.cmd_stylize(cfg))
    assert styled.sample_ids == load_manifest(paths["source"]).sample_ids


def test_irb_run_fixed_ranking_two_rows(generated, tmp_path):
    _, paths = generated
    cfg = cli.load_config(write_config(tmp_path, data=data_section(paths)))
    out = cli.cmd_irb_run(cfg, trainer=StubTrainer((2, 3, 1)))
    state = IrbRunState.load(out["run_log"])
    assert len(state.iterations) == 2
    rows = list(csv.DictReader(out["csv"].open()))
    assert [r["label"] for r in rows] == ["10-r", "10-253"]  # EP worst gets 5, UV 3, GL 2
    assert rows[1]["best"] == "1"


def test_irb_run_cap_one(generated, tmp_path):
    _, paths = generated
    cfg = cli.load_config(write_config(tmp_path, blend={"total_budget": 10, "max_iterations": 1}, data=data_section(paths)))
    out = cli.cmd_irb_run(cfg, trainer=StubTrainer((1, 2, 3)))
    assert len(list(csv.DictReader(out["csv"].open()))) == 1


def test_report_command(generated, tmp_path):
    _, paths = generated
    cfg = cli.load_config(write_config(tmp_path, data=data_section(paths)))
    out = cli.cmd_irb_run(cfg, trainer=StubTrainer((3, 2, 1)))
    path = write_config(tmp_path, out_dir="rep", data={"run_logs": [str(out["run_log"])]})
    assert cli.main(["report", "--config", str(path)]) == 0
    assert (tmp_path / "rep" / "report.csv").read_bytes() == out["csv"].read_bytes()
    assert cli.main(["report", "--config", str(write_config(tmp_path, data={}))]) == 2


def test_parser_lists_commands():
    parser = cli.build_parser()
    for cmd in ("generate", "stylize", "train", "evaluate", "irb-run", "report"):
        assert parser.parse_args([cmd, "--config", "x"]).command == cmd
    with pytest.raises(SystemExit):
        parser.parse_args(["generate"])
