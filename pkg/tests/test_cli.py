import json

import pytest

from advdrive import cli, data, models
from advdrive.config import DEFAULTS, load_config, parse_set
from advdrive.errors import ConfigError

# small enough that a whole pipeline runs in well under a minute
TINY = {
    "data": {"class_count": 3, "per_class": 12, "size": 32},
    "classifier": {"epochs": 1, "batch_size": 8},
    "advgan": {"epochs": 1, "batch_size": 8},
    "retrain": {"epochs": 1, "batch_size": 8},
    "sim": {"collect_steps": 48, "collect_cars": 4, "driver_epochs": 1, "driver_batch_size": 8,
            "advgan_epochs": 1, "retrain_epochs": 1, "bench_steps": 24, "bench_cars": 12},
}
METRIC_KEYS = {"stage", "accuracy", "per_class_recall", "n_samples", "epochs", "seed",
               "wall_time_s"}


@pytest.fixture
def tiny_config(tmp_path):
    path = tmp_path / "tiny.json"
    path.write_text(json.dumps(TINY))
    return str(path)


def run(*argv):
    return cli.main([str(a) for a in argv])


class TestConfig:
    def test_defaults_validate(self):
        cfg = load_config()
        assert cfg == DEFAULTS

    def test_dotted_override(self):
        cfg = load_config(sets=["advgan.epochs=3", "sim.track.radius=30"])
        assert cfg["advgan"]["epochs"] == 3
        assert cfg["sim"]["track"]["radius"] == 30.0

    def test_parse_set_keeps_strings(self):
        assert parse_set("data.path=/tmp/x.asds") == {"data": {"path": "/tmp/x.asds"}}

    @pytest.mark.parametrize("item", ["nope=1", "advgan.epochs=abc", "advgan=3", "advgan.epochs"])
    def test_bad_override(self, item):
        with pytest.raises(ConfigError):
            load_config(sets=[item])

    def test_seed_flag_wins(self, tiny_config):
        assert load_config(tiny_config, seed=9)["seed"] == 9

    @pytest.mark.parametrize("item", ["split.train=0.9", "advgan.epsilon=1.5",
                                      "sim.bench_steps=100", "advgan.batch_size=1"])
    def test_invalid_values(self, item):
        with pytest.raises(ConfigError):
            load_config(sets=[item])


class TestExitCodes:
    def test_unknown_key_is_exit_2(self, tmp_path, capsys):
        assert run("synth-data", "--out", tmp_path / "o", "--set", "bogus=1") == 2
        assert "unknown config key" in capsys.readouterr().err

    def test_missing_dataset_leaves_no_artifacts(self, tmp_path):
        out = tmp_path / "o"
        assert run("split", "--out", out, "--data", tmp_path / "missing.asds") == 2
        assert not out.exists()

    def test_pipeline_missing_dataset(self, tmp_path):
        out = tmp_path / "o"
        assert run("pipeline", "--out", out, "--set", f"data.path={tmp_path / 'nope.asds'}") == 2
        assert not out.exists()

    def test_bad_magic_is_exit_2(self, tmp_path):
        bad = tmp_path / "bad.asds"
        bad.write_bytes(b"XXXX" + bytes(40))
        assert run("split", "--out", tmp_path / "o", "--data", bad) == 2

    def test_outputs_are_write_once(self, tmp_path, tiny_config):
        out = tmp_path / "o"
        assert run("synth-data", "--config", tiny_config, "--out", out) == 0
        before = (out / "dataset.asds").read_bytes()
        assert run("synth-data", "--config", tiny_config, "--out", out, "--seed", 4) == 2
        assert (out / "dataset.asds").read_bytes() == before

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_numerical_failure_is_exit_3(self, tmp_path, tiny_config, capsys):
        assert run("synth-data", "--config", tiny_config, "--out", tmp_path / "d") == 0
        assert run("split", "--config", tiny_config, "--out", tmp_path / "s",
                   "--data", tmp_path / "d" / "dataset.asds") == 0
        code = run("train-classifier", "--config", tiny_config, "--out", tmp_path / "c",
                   "--train", tmp_path / "s" / "train.asds", "--set", "classifier.lr=1e38",
                   "--set", "classifier.epochs=3")
        assert code == 3
        assert "epoch" in capsys.readouterr().err
        assert not (tmp_path / "c" / "manifest.json").exists()


class TestHashing:
    def test_json_hash_ignores_wall_time(self, tmp_path):
        a, b = tmp_path / "a.json", tmp_path / "b.json"
        a.write_text(json.dumps({"accuracy": 0.5, "wall_time_s": 1.0}))
        b.write_text(json.dumps({"wall_time_s": 7.5, "accuracy": 0.5}))
        assert cli.content_hash(a) == cli.content_hash(b)

    def test_json_hash_sees_other_fields(self, tmp_path):
        a, b = tmp_path / "a.json", tmp_path / "b.json"
        a.write_text(json.dumps({"accuracy": 0.5}))
        b.write_text(json.dumps({"accuracy": 0.6}))
        assert cli.content_hash(a) != cli.content_hash(b)


@pytest.fixture(scope="module")
def pipeline_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("pipe")
    cfg = root / "tiny.json"
    cfg.write_text(json.dumps(TINY))
    code = run("pipeline", "--config", cfg, "--out", root / "run", "--seed", 3)
    return code, root / "run"


class TestPipeline:
    def test_exit_zero(self, pipeline_run):
        assert pipeline_run[0] == 0

    def test_artifacts(self, pipeline_run):
        out = pipeline_run[1]
        for rel in ("baseline/classifier.asdm", "attack/generator.asdm",
                    "retrained/retrained.asdm", "sim_driver/driver.asdm",
                    "sim_retrained/driver_retrained.asdm", "bench_baseline/baseline.json",
                    "bench_baseline_perturbed/baseline_perturbed.json",
                    "bench_retrained_perturbed/retrained_perturbed.json"):
            assert (out / rel).is_file(), rel
        assert len(list(out.glob("eval_*/*.csv"))) == 4

    def test_metrics_schema(self, pipeline_run):
        doc = json.loads((pipeline_run[1] / "eval_baseline_clean" /
                          "baseline_clean_metrics.json").read_text())
        assert set(doc) == METRIC_KEYS
        assert doc["seed"] == 3 and doc["epochs"] == 1
        assert doc["n_samples"] == data.load(pipeline_run[1] / "split" / "test.asds").n

    def test_manifests_hash_outputs(self, pipeline_run):
        out = pipeline_run[1]
        top = json.loads((out / "manifest.json").read_text())
        assert len(top["stages"]) >= 15
        m = json.loads((out / "attack" / "manifest.json").read_text())
        for entry in m["outputs"].values():
            assert cli.content_hash(entry["path"]) == entry["sha256"]
        assert set(m["inputs"]) == {"model", "train", "val"}

    def test_adversarial_set_respects_budget(self, pipeline_run):
        out = pipeline_run[1]
        clean = data.load(out / "split" / "test.asds")
        adv = data.load(out / "adversarial_test" / "test_adv.asds")
        ref = data.to_bytes(data.preprocess(clean))
        # epsilon = 16/255 is exactly 16 byte levels
        assert abs(adv.pixels.astype(int) - ref.astype(int)).max() <= 16
        assert (adv.labels == clean.labels).all()

    def test_benchmark_json(self, pipeline_run):
        doc = json.loads((pipeline_run[1] / "bench_baseline" / "baseline.json").read_text())
        assert doc["steps"] == 24
        assert set(doc["collisions"]) == {"clear", "rain", "fog"}

    def test_eval_reads_checkpoints(self, pipeline_run):
        out = pipeline_run[1]
        net = models.load_network(out / "retrained" / "retrained.asdm", models.build_classifier)
        assert models.n_classes_of(net) == 3

    def test_sim_attack_targets_steering(self, pipeline_run):
        out = pipeline_run[1]
        assert json.loads((out / "attack" / "advgan_report.json").read_text())["groups"] == "class"
        doc = json.loads((out / "sim_attack" / "advgan_report.json").read_text())
        assert doc["groups"] == "steer"

    def test_steer_groups_need_a_driver(self, pipeline_run, tmp_path):
        out = pipeline_run[1]
        code = cli.main(["attack", "--out", str(tmp_path / "a"),
                         "--model", str(out / "baseline" / "classifier.asdm"),
                         "--train", str(out / "split" / "train.asds"), "--groups", "steer"])
        assert code == 2
