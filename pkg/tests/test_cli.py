import json
import os

import pytest

from lltts.cli import cli
from lltts.data import load_dataset

CONFIG_TEMPLATE = """
[experiment]
epochs_per_stage = 2
batch_size = 8
buffer_capacity = 10
seed = 0
output_dir = {out}

[topology]
vocab_size = 8
embed_dim = 3
encoder_hidden = 4
trunk_dim = 4
frame_dim = 3
postnet_hidden = 3

[strategy]
kind = {kind}

[task 0]
seed = 1
n_train = 30
n_dev = 4
n_test = 3
seq_len_min = 2
seq_len_max = 4

[task 1]
seed = 2
n_train = 30
n_dev = 4
n_test = 3
seq_len_min = 2
seq_len_max = 4
"""


def write_config(tmp_path, kind="replay_dual", name="exp.ini"):
    out = tmp_path / f"run_{kind}"
    path = tmp_path / name
    path.write_text(CONFIG_TEMPLATE.format(out=out, kind=kind))
    return path, out


class TestGenData:
    def test_writes_datasets(self, tmp_path):
        cfg, out = write_config(tmp_path)
        assert cli(["gen-data", "--config", str(cfg)]) == 0
        for lang in (0, 1):
            ds = load_dataset(out / "data" / f"lang{lang}.lltts")
            assert len(ds.train) == 30

    def test_deterministic_files(self, tmp_path):
        cfg, out = write_config(tmp_path)
        cli(["gen-data", "--config", str(cfg)])
        first = (out / "data" / "lang0.lltts").read_bytes()
        cli(["gen-data", "--config", str(cfg)])
        assert (out / "data" / "lang0.lltts").read_bytes() == first


class TestTrain:
    def test_produces_outputs(self, tmp_path):
        cfg, out = write_config(tmp_path)
        assert cli(["train", "--config", str(cfg)]) == 0
        assert (out / "checkpoints" / "stage0.ckpt").exists()
        assert (out / "checkpoints" / "stage1.ckpt").exists()
        assert (out / "curves.csv").read_text().startswith("epoch,language,raw,smoothed")
        record = json.loads((out / "result.json").read_text())
        assert record["strategy"] == "REPLAY_DUAL"
        assert len(record["reports"]) == 2
        assert (out / "report.csv").exists()

    def test_missing_config_fails(self, tmp_path):
        assert cli(["train", "--config", str(tmp_path / "nope.ini")]) == 1

    def test_unknown_subcommand_exits_2(self, capsys):
        assert cli(["frobnicate"]) == 2


class TestReport:
    def test_aggregates_runs_with_mcdr(self, tmp_path):
        for kind in ("fine_tune", "replay_dual"):
            cfg, _ = write_config(tmp_path, kind=kind, name=f"{kind}.ini")
            assert cli(["train", "--config", str(cfg)]) == 0
        out_csv = tmp_path / "table.csv"
        assert cli(["report", "--in", str(tmp_path), "--out", str(out_csv)]) == 0
        lines = out_csv.read_text().strip().split("\n")
        assert len(lines) == 3
        assert lines[1].startswith("FINE_TUNE")
        dual_row = lines[2].split(",")
        assert dual_row[0] == "REPLAY_DUAL"
        assert dual_row[-1].endswith("%")

    def test_empty_dir_fails(self, tmp_path):
        os.makedirs(tmp_path / "empty")
        assert cli(["report", "--in", str(tmp_path / "empty"), "--out", str(tmp_path / "o.csv")]) == 1


class TestDeterminismAndResume:
    def test_rerun_byte_identical(self, tmp_path):
        cfg, out = write_config(tmp_path)
        cli(["train", "--config", str(cfg)])
        report1 = (out / "report.csv").read_bytes()
        result1 = (out / "result.json").read_bytes()
        cli(["train", "--config", str(cfg)])
        assert (out / "report.csv").read_bytes() == report1
        assert (out / "result.json").read_bytes() == result1

    def test_resume_matches_uninterrupted(self, tmp_path):
        cfg, out = write_config(tmp_path)
        cli(["train", "--config", str(cfg)])
        uninterrupted = (out / "report.csv").read_bytes()

        # simulate a kill after stage 0: drop the stage-1 checkpoint and
        # downstream outputs, then resume
        os.unlink(out / "checkpoints" / "stage1.ckpt")
        os.unlink(out / "report.csv")
        os.unlink(out / "result.json")
        assert cli(["train", "--config", str(cfg), "--resume"]) == 0
        assert (out / "report.csv").read_bytes() == uninterrupted

    def test_resume_with_changed_config_refused(self, tmp_path):
        cfg, out = write_config(tmp_path)
        cli(["train", "--config", str(cfg)])
        text = cfg.read_text().replace("seed = 0", "seed = 9")
        cfg.write_text(text)
        assert cli(["train", "--config", str(cfg), "--resume"]) == 1
        assert cli(["train", "--config", str(cfg), "--resume", "--force"]) == 0
