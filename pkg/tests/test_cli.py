"""Config parsing, the run driver and the command line."""

import os

import pytest

from gib import cli
from gib.config import SCHEMA, ConfigError, load, parse_text, resolve
from gib.experiments import run_experiment

SMALL = {
    "colored": """
experiment = colored
seeds = 0
data.samples_per_env = 120
data.test_samples = 60
model.hidden = 16   # tiny network
gate.period = 5
train.epochs = 1
train.batch_size = 40
""",
    "sem": """
experiment = sem
seeds = 1
data.samples_per_env = 100
data.test_samples = 50
train.epochs = 2
""",
    "adversarial": """
experiment = adversarial
method = erm
data.samples_per_env = 100
data.test_samples = 40
model.hidden = 8
train.epochs = 1
train.batch_size = 50
attack.epsilons = 0.1, 0.0
""",
    "ood": """
experiment = ood
data.samples_per_env = 100
data.test_samples = 40
model.hidden = 8
train.epochs = 1
train.batch_size = 50
""",
    "sweep": """
experiment = sweep
seeds = 0
data.samples_per_env = 100
data.test_samples = 100
model.hidden = 8
train.epochs = 1
sweep.lambdas = 0.0, 0.1
""",
    "verify-bounds": """
experiment = verify-bounds
bounds.trials = 20
""",
}


def write(tmp_path, text, name="c.cfg"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


class TestConfig:
    def test_comments_and_dotted_keys(self):
        v = parse_text("# header\n\ngate.tau = 0.3  # inline\nmodel.hidden = 4, 5\nsem.scale_x2_noise = yes\n")
        assert v == {"gate.tau": 0.3, "model.hidden": [4, 5], "sem.scale_x2_noise": True}

    def test_empty_list(self):
        assert parse_text("model.hidden =\n")["model.hidden"] == []

    @pytest.mark.parametrize("text,line,fragment", [
        ("gate.tau = 0.5\ngate.tua = 0.5\n", 2, "unknown key"),
        ("seeds = 1\n\nseeds = 2\n", 3, "duplicate key"),
        ("train.epochs = ten\n", 1, "bad value"),
        ("just words\n", 1, "expected"),
    ])
    def test_errors_name_the_line(self, text, line, fragment):
        with pytest.raises(ConfigError) as info:
            parse_text(text, "x.cfg")
        assert info.value.line == line
        assert fragment in str(info.value) and f"x.cfg:{line}:" in str(info.value)

    def test_presets_then_file(self):
        cfg = resolve({"experiment": "sem", "train.epochs": 3})
        assert cfg["train.lambda"] == 1e-2 and cfg["train.epochs"] == 3 and cfg["model.hidden"] == []

    def test_snapshot_roundtrip(self, tmp_path):
        cfg = resolve(parse_text(SMALL["colored"]))
        text = cfg.snapshot()
        assert len(text.splitlines()) == len(SCHEMA)
        assert load(write(tmp_path, text)).values == cfg.values

    @pytest.mark.parametrize("assigned", [
        {"method": "sgd"},
        {"seeds": []},
        {"experiment": "colored", "n_envs": 1},
        {"experiment": "sem", "n_envs": 3},
        {"experiment": "sweep", "sweep.lambdas": []},
        {"experiment": "mnist"},
    ])
    def test_validation(self, assigned):
        with pytest.raises(ConfigError):
            resolve(assigned)

    def test_missing_data_file_named(self, tmp_path):
        missing = str(tmp_path / "nope-images.idx")
        with pytest.raises(ConfigError, match="nope-images.idx"):
            resolve({"data.source": "idx", "data.train_images": missing, "data.train_labels": missing,
                     "data.test_images": missing, "data.test_labels": missing})


class TestRun:
    @pytest.mark.parametrize("experiment", sorted(SMALL))
    def test_byte_identical_reruns(self, tmp_path, experiment):
        cfg = resolve(parse_text(SMALL[experiment]))
        outputs = []
        for run in ("a", "b"):
            root = str(tmp_path / run)
            run_experiment(cfg, root)
            files = {}
            for dirpath, _, names in os.walk(root):
                for n in names:
                    full = os.path.join(dirpath, n)
                    with open(full, "rb") as fh:
                        files[os.path.relpath(full, root)] = fh.read()
            outputs.append(files)
        assert outputs[0] == outputs[1]
        assert "summary.csv" in outputs[0] and "config.resolved" in outputs[0]

    def test_colored_artifacts(self, tmp_path):
        cfg = resolve(parse_text(SMALL["colored"]))
        _, rows = run_experiment(cfg, str(tmp_path))
        seed_dir = tmp_path / "seed_0"
        for name in ("metrics.csv", "gate_trace.csv", "checkpoint.gibc"):
            assert (seed_dir / name).exists()
        assert rows[0]["method"] == "gib" and 0.0 <= rows[0]["test_accuracy"] <= 1.0


class TestCommandLine:
    def test_run_and_seed_override(self, tmp_path, capsys):
        path = write(tmp_path, SMALL["verify-bounds"])
        assert cli.main(["run", "--config", path, "--seed", "4", "--out", str(tmp_path / "o")]) == 0
        assert (tmp_path / "o" / "seed_4" / "bounds.txt").exists()
        assert "lemma2" in capsys.readouterr().out

    def test_verify_bounds(self, tmp_path, capsys):
        assert cli.main(["verify-bounds", "--trials", "30", "--out", str(tmp_path)]) == 0
        out = capsys.readouterr().out
        assert out.count("pass") == 4
        assert (tmp_path / "bounds.txt").read_text() == out

    def test_gen_data(self, tmp_path):
        path = write(tmp_path, SMALL["colored"])
        assert cli.main(["gen-data", "--config", path, "--out", str(tmp_path / "d")]) == 0
        assert sorted(os.listdir(tmp_path / "d")) == ["config.resolved", "env_0.gibd", "env_1.gibd", "test.gibd"]

    def test_config_error_exit_code(self, tmp_path, capsys):
        path = write(tmp_path, "train.epochz = 3\n")
        assert cli.main(["run", "--config", path]) == 2
        err = capsys.readouterr().err
        assert "unknown key" in err and ":1:" in err

    def test_missing_config(self, tmp_path, capsys):
        assert cli.main(["run", "--config", str(tmp_path / "absent.cfg")]) == 2
        assert "absent.cfg" in capsys.readouterr().err

    def test_missing_idx_file_named(self, tmp_path, capsys):
        missing = tmp_path / "train-images.idx"
        text = "data.source = idx\n" + "".join(
            f"data.{k} = {missing}\n" for k in ("train_images", "train_labels", "test_images", "test_labels"))
        assert cli.main(["run", "--config", write(tmp_path, text)]) == 2
        assert str(missing) in capsys.readouterr().err


class TestPlot:
    def test_attack_curves_sorted(self, tmp_path):
        csv = tmp_path / "summary.csv"
        csv.write_text("seed,method,attack,epsilon,accuracy,mean_loss\n"
                       "0,gib,fgsm,0.2,0.5,1\n0,gib,fgsm,0.0,0.9,1\n0,gib,pgd,0.1,0.6,1\n0,gib,fgsm,0.1,0.7,1\n")
        written = cli.emit_plot_data(str(csv), str(tmp_path / "p"))
        assert [os.path.basename(p) for p in written] == ["summary_fgsm_accuracy.dat", "summary_pgd_accuracy.dat"]
        lines = open(written[0]).read().splitlines()
        assert lines == ["# epsilon accuracy", "0.0 0.9", "0.1 0.7", "0.2 0.5"]

    def test_sweep_curve(self, tmp_path):
        csv = tmp_path / "s.csv"
        csv.write_text("seed,lambda,test_accuracy,active_features\n0,0.1,0.8,3\n0,0.0,0.9,8\n")
        (path,) = cli.emit_plot_data(str(csv), str(tmp_path))
        assert open(path).read() == "# lambda active_features\n0.0 8.0\n0.1 3.0\n"

    @pytest.mark.parametrize("text,line", [
        ("", None),
        ("epsilon,accuracy,attack\n", None),
        ("epsilon,accuracy,attack\n0.1,0.5,fgsm\n0.2,0.4\n", 3),
        ("epsilon,accuracy,attack\n0.1,oops,fgsm\n", 2),
    ])
    def test_bad_input_writes_nothing(self, tmp_path, text, line):
        csv = tmp_path / "bad.csv"
        csv.write_text(text)
        out = tmp_path / "p"
        with pytest.raises(cli.PlotDataError) as info:
            cli.emit_plot_data(str(csv), str(out))
        assert info.value.line == line
        assert not out.exists()

    def test_plot_command_reports_line(self, tmp_path, capsys):
        csv = tmp_path / "bad.csv"
        csv.write_text("lambda,active_features\n0.1\n")
        assert cli.main(["plot", str(csv)]) == 2
        assert "line 2" in capsys.readouterr().err
