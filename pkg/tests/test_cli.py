import json
import os
import subprocess
import sys

import numpy as np
import pytest

from hsunmix.cli import main
from hsunmix.io import RunConfig, load_config, load_cube, read_pgm
from hsunmix.mixing import load_endmembers, ppnmm_image
from hsunmix.training import read_checkpoint

TINY_CONFIG = "C = 6\nspectral_channels = 4\nspectral_stage_count = 1\nepochs = 3\n"


@pytest.fixture
def tiny_cfg(tmp_path):
    path = tmp_path / "tiny.cfg"
    path.write_text(TINY_CONFIG)
    return path


def synth(out, *extra, model="ppnmm"):
    argv = ["synth", "--model", model, "--rows", "16", "--cols", "16", "-R", "3", "-L", "16",
            "--seed", "7", "-o", str(out), *extra]
    assert main(argv) == 0


def train(data, out, cfg, *extra):
    return main(["train", "-d", str(data), "-c", str(cfg), "-o", str(out), "-q", *extra])


class TestSynth:
    def test_writes_cube_and_ground_truth(self, tmp_path):
        synth(tmp_path / "d", "--snr", "30")
        names = {p.name for p in (tmp_path / "d").iterdir()}
        assert {"cube.bin", "cube.bin.json", "abund.bin", "abund.bin.json", "endmembers.csv",
                "bfield.bin", "bfield.bin.json", "dataset.meta.json"} <= names
        meta = json.loads((tmp_path / "d" / "dataset.meta.json").read_text())
        assert (meta["model"], meta["R"], meta["snr_db"]) == ("ppnmm", 3, 30.0)
        assert load_cube(tmp_path / "d" / "cube.bin").shape == (16, 16, 16)

    def test_lmm_has_no_bfield(self, tmp_path):
        synth(tmp_path / "d", model="ppnmm")
        synth(tmp_path / "d", model="lmm")
        assert not (tmp_path / "d" / "bfield.bin").exists()
        assert not (tmp_path / "d" / "bfield.bin.json").exists()

    def test_gbm_writes_interaction_weights(self, tmp_path):
        synth(tmp_path / "d", model="gbm")
        assert load_cube(tmp_path / "d" / "beta.bin").shape == (16, 16, 3)

    def test_clean_cube_matches_the_forward_model(self, tmp_path):
        synth(tmp_path / "d", "--snr", "clean")
        d = tmp_path / "d"
        A, M, B = load_cube(d / "abund.bin"), load_endmembers(d / "endmembers.csv"), load_cube(d / "bfield.bin")
        np.testing.assert_allclose(load_cube(d / "cube.bin"), ppnmm_image(A, M, B), atol=1e-6)
        assert json.loads((d / "dataset.meta.json").read_text())["snr_db"] is None

    def test_idempotent(self, tmp_path):
        synth(tmp_path / "a")
        synth(tmp_path / "b")
        for name in ("cube.bin", "abund.bin", "bfield.bin", "endmembers.csv"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    @pytest.mark.parametrize("argv", [["synth", "--model", "fan", "-o", "x"],
                                      ["synth", "--model", "lmm", "--rows", "0", "-o", "x"],
                                      ["synth", "--model", "lmm", "--snr", "loud", "-o", "x"],
                                      ["synth", "--model", "lmm"], [], ["fit"]])
    def test_usage_errors_exit_1(self, argv, capsys):
        assert main(argv) == 1

    def test_bad_extents_exit_2(self, tmp_path):
        assert main(["synth", "--model", "lmm", "-R", "5", "-L", "3", "-o", str(tmp_path / "d")]) == 2


class TestTrain:
    @pytest.fixture
    def data(self, tmp_path):
        synth(tmp_path / "d")
        return tmp_path / "d"

    def test_outputs_and_config_echo(self, data, tmp_path, tiny_cfg):
        assert train(data, tmp_path / "run", tiny_cfg, "--seed", "1") == 0
        run = tmp_path / "run"
        for name in ("checkpoint.bin", "losses.csv", "endmembers.csv", "abund.bin", "bfield.bin", "config.txt"):
            assert (run / name).exists(), name
        assert len((run / "losses.csv").read_text().splitlines()) == 4
        A = load_cube(run / "abund.bin")
        assert A.shape == (16, 16, 3) and np.abs(A.sum(-1) - 1).max() <= 1e-6
        assert load_cube(run / "bfield.bin").shape == (16, 16, 1)
        assert read_pgm(run / "abund_2.pgm").shape == (16, 16)
        echoed = load_config(run / "config.txt")
        assert echoed == RunConfig(C=6, spectral_channels=4, spectral_stage_count=1, epochs=3, seed=1)

    def test_same_seed_gives_identical_files(self, data, tmp_path, tiny_cfg):
        for name in ("a", "b"):
            assert train(data, tmp_path / name, tiny_cfg, "--seed", "1") == 0
        for name in ("losses.csv", "checkpoint.bin", "abund.bin"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_flags_override_the_file(self, data, tmp_path, tiny_cfg):
        assert train(data, tmp_path / "run", tiny_cfg, "--epochs", "2", "--set", "alpha=0.25",
                     "--init", "farthest_point", "--ablate", "spectral") == 0
        cfg = load_config(tmp_path / "run" / "config.txt")
        assert (cfg.epochs, cfg.alpha, cfg.init, cfg.ablate) == (2, 0.25, "farthest_point", "spectral")
        header, _ = read_checkpoint(tmp_path / "run" / "checkpoint.bin")
        assert header["model"]["ablate"] == "spectral"

    def test_farthest_point_init_is_deterministic(self, data, tmp_path, tiny_cfg):
        for name in ("a", "b"):
            assert train(data, tmp_path / name, tiny_cfg, "--init", "farthest_point", "--set",
                         "lr_endmember=0") == 0
        a = load_endmembers(tmp_path / "a" / "endmembers.csv")
        assert (a == load_endmembers(tmp_path / "b" / "endmembers.csv")).all()

    def test_data_errors_exit_2(self, data, tmp_path, tiny_cfg):
        assert train(tmp_path / "nowhere", tmp_path / "run", tiny_cfg) == 2
        bad = tmp_path / "bad.cfg"
        bad.write_text("colour = blue\n")
        assert train(data, tmp_path / "run", bad) == 2
        assert train(data, tmp_path / "run", tiny_cfg, "--set", "C=ten") == 2
        (data / "cube.bin.json").unlink()
        assert train(data, tmp_path / "run", tiny_cfg) == 2


class TestEval:
    def test_truth_against_itself_scores_zero(self, tmp_path, capsys):
        synth(tmp_path / "d")
        assert main(["eval", "--run", str(tmp_path / "d"), "--truth", str(tmp_path / "d"),
                     "-o", str(tmp_path / "r.json"), "--bins", "5"]) == 0
        rep = json.loads((tmp_path / "r.json").read_text())
        assert rep == {"rmse_abun": 0.0, "sad_end": 0.0, "rmse_b": 0.0, "permutation": [0, 1, 2]}
        lines = (tmp_path / "b_histogram.csv").read_text().splitlines()
        assert lines[0] == "bin_center,count" and len(lines) == 6
        assert sum(int(line.split(",")[1]) for line in lines[1:]) == 256

    def test_lmm_truth_omits_rmse_b(self, tmp_path, tiny_cfg):
        synth(tmp_path / "d", model="lmm")
        assert train(tmp_path / "d", tmp_path / "run", tiny_cfg) == 0
        assert main(["eval", "--run", str(tmp_path / "run"), "--truth", str(tmp_path / "d")]) == 0
        rep = json.loads((tmp_path / "run" / "eval.json").read_text())
        assert "rmse_b" not in rep and sorted(rep["permutation"]) == [0, 1, 2]
        assert rep["rmse_abun"] > 0

    def test_endmember_count_mismatch_exits_2(self, tmp_path):
        synth(tmp_path / "a")
        assert main(["synth", "--model", "ppnmm", "--rows", "16", "--cols", "16", "-R", "4", "-L", "16",
                     "-o", str(tmp_path / "b")]) == 0
        assert main(["eval", "--run", str(tmp_path / "a"), "--truth", str(tmp_path / "b")]) == 2

    def test_missing_directory_exits_2(self, tmp_path):
        assert main(["eval", "--run", str(tmp_path / "x"), "--truth", str(tmp_path / "y")]) == 2


class TestGradcheck:
    def test_restricted_run(self, capsys):
        assert main(["gradcheck", "--op", "swda", "--op", "relu"]) == 0
        out = capsys.readouterr().out
        assert "swda" in out and "relu" in out and "2/2 passed" in out and "gelu" not in out

    def test_eps_override_is_reported(self, capsys):
        assert main(["gradcheck", "--op", "sigmoid", "--eps", "1e-3"]) == 0
        assert "eps 0.001" in capsys.readouterr().out

    def test_failure_exits_3(self, capsys):
        assert main(["gradcheck", "--op", "gelu", "--tol", "0"]) == 3
        assert "FAIL" in capsys.readouterr().out

    @pytest.mark.parametrize("argv", [["gradcheck", "--op", "nope"], ["gradcheck", "--eps", "1"]])
    def test_usage(self, argv):
        assert main(argv) == 1


def test_console_entry_point_and_thread_variable(tmp_path):
    env = dict(os.environ, HSUNMIX_THREADS="0")
    bad = subprocess.run([sys.executable, "-m", "hsunmix.cli", "gradcheck", "--op", "relu"],
                         env=env, capture_output=True, text=True)
    assert bad.returncode == 1 and "HSUNMIX_THREADS" in bad.stderr
    env["HSUNMIX_THREADS"] = "2"
    ok = subprocess.run([sys.executable, "-m", "hsunmix.cli", "gradcheck", "--op", "relu"],
                        env=env, capture_output=True, text=True)
    assert ok.returncode == 0 and "1/1 passed" in ok.stdout
