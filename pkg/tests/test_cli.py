import json

import numpy as np
import pytest

from teachrobust import cli, shapes

from helpers import SAME_SEED_RUNS, run, same_seed_identical, tree


def report(out):
    return json.loads((out / "report.json").read_text())


class TestParseConfig:
    def test_shapes_train_defaults(self, tmp_path):
        path = tmp_path / "c.json"
        path.write_text('{"experiment":"shapes-train","seed":1,"prefilter":true}')
        cfg = cli.parse_config(["run", "--config", str(path)])
        assert cfg.experiment == "shapes-train" and cfg.seed == 1
        assert cfg.params["epochs"] == 10 and cfg.params["batch_size"] == 50
        assert cfg.params["prefilter"] is True and cfg.params["train_count"] == 1000

    def test_documented_defaults(self):
        assert cli.parse_config(["parity-active"]).params["d"] == 100
        assert cli.parse_config(["example1"]).params["n_per_class"] == 1000
        assert cli.parse_config(["shapes-gen"]).params["count"] == 1000

    def test_flag_overrides_file(self, tmp_path):
        path = tmp_path / "c.json"
        path.write_text('{"experiment":"shapes-train","epochs":10}')
        cfg = cli.parse_config(["shapes-train", "--config", str(path), "--epochs", "2", "--prefilter", "on"])
        assert cfg.params["epochs"] == 2 and cfg.params["prefilter"] is True

    def test_missing_experiment(self):
        with pytest.raises(cli.ConfigError, match="experiment"):
            cli.config_from_dict({"seed": 1})

    def test_unknown_key(self):
        with pytest.raises(cli.ConfigError, match="bogus"):
            cli.config_from_dict({"experiment": "example1", "bogus": 3})

    @pytest.mark.parametrize("raw, key", [
        ({"experiment": "parity-active", "d": 0}, "d"),
        ({"experiment": "parity-sq", "tolerance": 1.5}, "tolerance"),
        ({"experiment": "parity-sq", "support_size": 20}, "support_size"),
        ({"experiment": "shapes-train", "epochs": 2.5}, "epochs"),
        ({"experiment": "shapes-train", "prefilter": "maybe"}, "prefilter"),
        ({"experiment": "shapes-gen", "dist": "weird"}, "dist"),
        ({"experiment": "robust-eval", "delta": "nan"}, "delta"),
    ])
    def test_out_of_range_names_key(self, raw, key):
        with pytest.raises(cli.ConfigError, match=key):
            cli.config_from_dict(raw)

    def test_mismatched_command(self, tmp_path):
        path = tmp_path / "c.json"
        path.write_text('{"experiment":"example1"}')
        with pytest.raises(cli.ConfigError, match="experiment"):
            cli.parse_config(["parity-active", "--config", str(path)])

    def test_malformed_json_exit_code(self, tmp_path, capsys):
        path = tmp_path / "c.json"
        path.write_text('{"experiment": ')
        assert run(["run", "--config", path]) == 2
        assert "malformed JSON" in capsys.readouterr().err

    def test_unknown_key_exit_code(self, tmp_path, capsys):
        path = tmp_path / "c.json"
        path.write_text('{"experiment": "parity-active", "dd": 3}')
        assert run(["run", "--config", path]) == 2
        assert "dd" in capsys.readouterr().err


class TestRuns:
    def test_parity_active(self, tmp_path):
        out = tmp_path / "pa"
        assert run(["parity-active", "--d", 100, "--trials", 100, "--out-dir", out]) == 0
        r = report(out)
        assert r["results"]["recovery_rate"] == 1.0
        assert r["results"]["queries_per_trial"] == 101
        assert r["config"] == {"experiment": "parity-active", "seed": 0, "d": 100, "trials": 100}
        assert len((out / "trials.csv").read_text().splitlines()) == 101

    def test_parity_sq(self, tmp_path):
        out = tmp_path / "sq"
        assert run(["parity-sq", "--out-dir", out]) == 0
        res = report(out)["results"]
        assert res["linear_on_mu"]["accuracy_mu"] == 1.0
        assert res["linear_on_mu"]["accuracy_nu"] == 0.5
        assert res["sq_student"]["accuracy_nu"] <= 0.52
        assert res["sq_student"]["queries"] == 1 + 16 + 120

    def test_example1_report(self, tmp_path):
        out = tmp_path / "ex1"
        assert run(["example1", "--out-dir", out, "--sparse-seeds", 3]) == 0
        res = report(out)["results"]
        for key in ("dense_train_accuracy", "flip_success_rate", "sparse_coefficients",
                    "rounded_grid", "eps_min", "sparse_counterexample"):
            assert key in res
        assert res["rounded_grid"] == {"n_evaluated": 101 * 101, "n_disagree": 0}
        assert res["teacher_unchanged_rate"] == 1.0
        assert len((out / "coefficients.csv").read_text().splitlines()) == 101

    def test_shapes_gen(self, tmp_path):
        out = tmp_path / "gen"
        assert run(["shapes-gen", "--count", 10, "--dist", "adversarial", "--pgm", 2, "--out-dir", out]) == 0
        ds = shapes.load_dataset(out / "dataset.shd")
        assert ds == shapes.gen_dataset(10, "adversarial", "exact", seed=0)
        assert (out / "image_0001.pgm").exists() and not (out / "image_0002.pgm").exists()

    def test_shapes_train_history(self, tmp_path):
        out = tmp_path / "train"
        argv = ["shapes-train", "--train-count", 10, "--epochs", 2, "--batch-size", 5,
                "--eval-count", 10, "--prefilter", "off", "--save-params", "--out-dir", out]
        assert run(argv) == 0
        lines = (out / "history.csv").read_bytes().split(b"\n")
        assert lines[0] == b"epoch,train_loss,test_accuracy,adversarial_accuracy"
        assert len(lines) == 2 + 2 and lines[-1] == b""
        fields = lines[1].split(b",")
        assert fields[0] == b"1" and all(len(f.split(b".")[1]) == 6 for f in fields[1:])
        assert (out / "params.nnp").exists()

    @pytest.mark.parametrize("argv, key, value", [
        (["--mode", "strong", "--pairing", "quadrant", "--resolution", 41], "n_disagree", 0),
        (["--mode", "strong", "--pairing", "rounded-comparison", "--resolution", 101], "n_disagree", 0),
        (["--mode", "weak", "--pairing", "max-margin", "--attack", "identity"], "agreement", 1.0),
        (["--mode", "weak", "--pairing", "quadrant", "--attack", "lp2", "--delta", 0.3], "agreement", 1.0),
    ])
    def test_robust_eval(self, tmp_path, argv, key, value):
        out = tmp_path / "re"
        assert run(["robust-eval", *argv, "--out-dir", out]) == 0
        assert report(out)["results"][key] == value

    def test_robust_eval_finds_counterexample(self, tmp_path):
        out = tmp_path / "re"
        assert run(["robust-eval", "--pairing", "max-margin", "--resolution", 41, "--out-dir", out]) == 0
        assert report(out)["results"]["n_disagree"] > 0

    def test_lp_dist(self, tmp_path, capsys):
        a = shapes.render_shape(shapes.ShapeSpec("square", 20, 50, 50))
        b = shapes.render_shape(shapes.ShapeSpec("square", 20, 50, 50, textured=True))
        shapes.export_pgm(a, tmp_path / "a.pgm")
        shapes.export_pgm(b, tmp_path / "b.pgm")
        out = tmp_path / "lp"
        assert run(["lp-dist", "--p", 0, tmp_path / "a.pgm", tmp_path / "b.pgm", "--out-dir", out]) == 0
        n_half = int(np.count_nonzero(b.pixels == 0.5))
        assert float(capsys.readouterr().out) == n_half
        assert report(out)["results"]["distance"] == n_half

    def test_lp_dist_needs_paths(self, tmp_path):
        assert run(["lp-dist", "--out-dir", tmp_path / "x"]) == 2

    def test_refuses_non_empty_out_dir(self, tmp_path):
        out = tmp_path / "pa"
        out.mkdir()
        (out / "keep.txt").write_text("x")
        assert run(["parity-active", "--d", 5, "--trials", 2, "--out-dir", out]) == 2
        assert not (out / "report.json").exists()
        assert run(["parity-active", "--d", 5, "--trials", 2, "--out-dir", out, "--force"]) == 0

    def test_module_error_flags_partial(self, tmp_path):
        out = tmp_path / "lp"
        shapes.export_pgm(np.zeros((100, 100)), tmp_path / "a.pgm")
        (tmp_path / "bad.pgm").write_bytes(b"P2\n")
        assert run(["lp-dist", tmp_path / "a.pgm", tmp_path / "bad.pgm", "--out-dir", out]) == 1
        assert (out / "FAILED").exists() and not (out / "report.json").exists()


class TestDeterminism:
    @pytest.mark.parametrize("argv", SAME_SEED_RUNS, ids=lambda a: a[0])
    def test_byte_identical(self, tmp_path, argv):
        assert same_seed_identical(argv, tmp_path)

    def test_seed_matters(self, tmp_path):
        assert run(["shapes-gen", "--count", 4, "--seed", 1, "--out-dir", tmp_path / "a"]) == 0
        assert run(["shapes-gen", "--count", 4, "--seed", 2, "--out-dir", tmp_path / "b"]) == 0
        assert tree(tmp_path / "a") != tree(tmp_path / "b")
