"""End-to-end command-line behavior: file outputs, determinism, error lines."""

import hashlib
import os

import numpy as np
import pytest

from urwkv.cli import main
from urwkv.data import read_image

TINY_OVERRIDES = [
    "--override", "dims=8",
    "--override", "depths=1,1,1,1",
    "--override", "decoder_depths=1,1,1,1",
    "--override", "image_size=32",
    "--override", "epochs=1",
    "--override", "batch_size=4",
    "--override", "lr=0.001",
]


def sha_tree(root):
    digests = {}
    for dirpath, _, files in os.walk(root):
        for name in sorted(files):
            path = os.path.join(dirpath, name)
            rel = os.path.relpath(path, root)
            digests[rel] = hashlib.sha256(open(path, "rb").read()).hexdigest()
    return digests


@pytest.fixture(scope="module")
def tiny_dataset(tmp_path_factory):
    root = str(tmp_path_factory.mktemp("data") / "set")
    assert main(["gen-data", "--count", "10", "--size", "32",
                 "--seed", "3", "--out", root]) == 0
    return root


class TestGenData:
    def test_counts_and_manifest_split(self, tmp_path):
        out = str(tmp_path / "d")
        assert main(["gen-data", "--count", "10", "--size", "32",
                     "--seed", "7", "--out", out]) == 0
        rows = open(os.path.join(out, "manifest.csv")).read().strip().splitlines()
        assert rows[0] == "stem,split"
        assert len(rows) == 11
        assert sum(r.endswith(",train") for r in rows) == 8
        assert sum(r.endswith(",test") for r in rows) == 2
        assert len(os.listdir(os.path.join(out, "images"))) == 10
        assert len(os.listdir(os.path.join(out, "masks"))) == 10

    def test_zero_count_warns_and_writes_empty_manifest(self, tmp_path, capsys):
        out = str(tmp_path / "d0")
        assert main(["gen-data", "--count", "0", "--out", out]) == 0
        err = capsys.readouterr().err
        assert "warning" in err
        rows = open(os.path.join(out, "manifest.csv")).read().strip().splitlines()
        assert rows == ["stem,split"]

    def test_rerun_same_seed_identical_hashes(self, tmp_path):
        a = str(tmp_path / "a")
        b = str(tmp_path / "b")
        for out in (a, b):
            assert main(["gen-data", "--count", "6", "--size", "32",
                         "--seed", "11", "--out", out]) == 0
        assert sha_tree(a) == sha_tree(b)


class TestTrain:
    def test_one_epoch_writes_log_and_checkpoint(self, tiny_dataset, tmp_path):
        out = str(tmp_path / "run")
        assert main(["train", "--data", tiny_dataset, "--out", out,
                     "--quiet"] + TINY_OVERRIDES) == 0
        log = open(os.path.join(out, "log.csv")).read().strip().splitlines()
        assert log[0] == "epoch,loss,dsc,iou"
        assert len(log) == 2
        assert os.path.exists(os.path.join(out, "best.ckpt"))
        assert os.path.exists(os.path.join(out, "config.txt"))

    def test_same_seed_runs_are_file_identical(self, tiny_dataset, tmp_path):
        trees = []
        for name in ("r1", "r2"):
            out = str(tmp_path / name)
            args = ["train", "--data", tiny_dataset, "--out", out, "--quiet"] \
                + TINY_OVERRIDES[:-2] + ["--override", "lr=0.001",
                                         "--override", "epochs=2"]
            assert main(args) == 0
            trees.append(sha_tree(out))
        assert set(trees[0]) >= {"log.csv", "best.ckpt", "config.txt"}
        assert trees[0] == trees[1]

    def test_missing_dataset_is_parseable_error(self, tmp_path, capsys):
        rc = main(["train", "--data", str(tmp_path / "nope"),
                   "--out", str(tmp_path / "o")])
        assert rc != 0
        err = capsys.readouterr().err.strip().splitlines()[-1]
        assert err.startswith("error: ")

    def test_invalid_override_is_parseable_error(self, tiny_dataset, tmp_path, capsys):
        rc = main(["train", "--data", tiny_dataset, "--out", str(tmp_path / "o"),
                   "--override", "dims=13"])
        assert rc != 0
        assert capsys.readouterr().err.startswith("error: ConfigError")


@pytest.fixture(scope="module")
def trained(tiny_dataset, tmp_path_factory):
    out = str(tmp_path_factory.mktemp("trained"))
    assert main(["train", "--data", tiny_dataset, "--out", out,
                 "--quiet"] + TINY_OVERRIDES) == 0
    return out


class TestEvalPredict:

    def test_eval_reproduces_logged_best(self, tiny_dataset, trained, capsys):
        log = open(os.path.join(trained, "log.csv")).read().strip().splitlines()
        best_logged = max(float(r.split(",")[2]) for r in log[1:])
        assert main(["eval", "--ckpt", os.path.join(trained, "best.ckpt"),
                     "--data", tiny_dataset, "--out", trained]) == 0
        out = capsys.readouterr().out
        line = next(l for l in out.splitlines() if l.startswith("foreground mean"))
        dsc = float(line.split("dsc")[1].split()[0])
        assert abs(dsc - best_logged) < 1e-6
        assert os.path.exists(os.path.join(trained, "eval.csv"))

    def test_predict_mask_dims_match_input(self, tiny_dataset, trained, tmp_path):
        out = str(tmp_path / "preds")
        assert main(["predict", "--ckpt", os.path.join(trained, "best.ckpt"),
                     "--data", tiny_dataset, "--out", out, "--probs"]) == 0
        masks = sorted(f for f in os.listdir(out) if f.endswith("_mask.png"))
        assert len(masks) == 2  # test split of 10 samples
        arr = read_image(os.path.join(out, masks[0]))
        assert arr.shape == (32, 32)
        probs = [f for f in os.listdir(out) if "_prob" in f]
        assert len(probs) == 4  # 2 images x 2 classes

    def test_missing_checkpoint_error(self, tiny_dataset, tmp_path, capsys):
        rc = main(["eval", "--ckpt", str(tmp_path / "none.ckpt"),
                   "--data", tiny_dataset])
        assert rc != 0
        assert capsys.readouterr().err.startswith("error: FileNotFoundError")


class TestAblate:
    def test_four_reproducible_rows(self, tmp_path):
        data = str(tmp_path / "d")
        assert main(["gen-data", "--count", "8", "--size", "64",
                     "--seed", "5", "--out", data]) == 0
        csvs = []
        for name in ("a1", "a2"):
            out = str(tmp_path / name)
            assert main(["ablate", "--data", data, "--out", out,
                         "--override", "dims=8",
                         "--override", "depths=1,1,1,1",
                         "--override", "decoder_depths=1,1,1,1",
                         "--override", "image_size=64",
                         "--override", "epochs=1",
                         "--override", "batch_size=4"]) == 0
            csvs.append(open(os.path.join(out, "ablation.csv")).read())
        rows = csvs[0].strip().splitlines()
        assert rows[0] == "config,fawa,mscf,dsc,iou"
        assert len(rows) == 5
        assert [r.split(",")[0] for r in rows[1:]] == ["base", "fawa", "mscf",
                                                       "fawa+mscf"]
        assert csvs[0] == csvs[1]
        assert os.path.exists(os.path.join(str(tmp_path / "a1"), "ablation.md"))

    def test_base_row_equals_standalone_train(self, tmp_path):
        data = str(tmp_path / "d")
        assert main(["gen-data", "--count", "8", "--size", "64",
                     "--seed", "5", "--out", data]) == 0
        overrides = ["--override", "dims=8",
                     "--override", "depths=1,1,1,1",
                     "--override", "decoder_depths=1,1,1,1",
                     "--override", "image_size=64",
                     "--override", "epochs=1",
                     "--override", "batch_size=4"]
        abl = str(tmp_path / "abl")
        assert main(["ablate", "--data", data, "--out", abl] + overrides) == 0
        base_row = open(os.path.join(abl, "ablation.csv")).read() \
            .strip().splitlines()[1]
        base_dsc = float(base_row.split(",")[3])
        solo = str(tmp_path / "solo")
        assert main(["train", "--data", data, "--out", solo,
                     "--quiet"] + overrides) == 0
        log = open(os.path.join(solo, "log.csv")).read().strip().splitlines()
        solo_dsc = max(float(r.split(",")[2]) for r in log[1:])
        assert base_dsc == pytest.approx(solo_dsc, abs=1e-6)


class TestBench:
    def test_csv_schema_and_single_t(self, tmp_path, capsys):
        out = str(tmp_path / "bench.csv")
        assert main(["bench-wkv", "--t-list", "64", "--channels", "4",
                     "--reps", "1", "--out", out]) == 0
        rows = open(out).read().strip().splitlines()
        assert rows[0] == "form,T,C,ns_per_token"
        assert len(rows) == 3

    def test_zero_reps_is_error(self, capsys):
        rc = main(["bench-wkv", "--t-list", "64", "--reps", "0"])
        assert rc != 0
        assert capsys.readouterr().err.startswith("error: ")

    def test_both_backends_labelled(self, capsys):
        assert main(["bench-wkv", "--t-list", "32,64", "--channels", "2",
                     "--reps", "1", "--backend", "both"]) == 0
        out = capsys.readouterr().out
        assert "naive[pure]" in out and "scan[ext]" in out or "scan[pure]" in out


class TestGradcheckCommand:
    def test_exit_zero(self, capsys):
        assert main(["gradcheck"]) == 0
        out = capsys.readouterr().out
        assert "PASS" in out and "FAIL" not in out
