import json

import numpy as np
import pytest

from suncet.cli import main
from suncet.data import Dataset, save_dataset
from suncet.report import read_tsv

FAST = """\
epochs = 2
suncet_off_epoch = 1
eval_every = 1
encoder_dims = 16,8
proj_dims = 8,4
unsup_batch = 16
sup_classes_per_batch = 2
sup_samples_per_class = 3
lineval_epochs = 5
lineval_milestones = 3,4
finetune_epochs = 2
sweep_switchoff = 0,1,2
label_fraction = 0.5
"""


@pytest.fixture
def workdir(tmp_path):
    g = np.random.default_rng(0)
    y = np.arange(60) % 3
    x = (g.standard_normal((60, 5)) + y[:, None]).astype(np.float32)
    save_dataset(Dataset(x, y, 3), tmp_path / "train.snds")
    yt = np.array([0, 0, 0, 1, 2, 1, 0, 2])
    save_dataset(Dataset(np.zeros((8, 5)), yt, 3), tmp_path / "test.snds")
    cfg = FAST + f"dataset_path = {tmp_path / 'train.snds'}\ntest_path = {tmp_path / 'test.snds'}\n"
    (tmp_path / "cfg.txt").write_text(cfg)
    return tmp_path


def test_pretrain_writes_artifacts_and_is_deterministic(workdir):
    for name in ("a", "b"):
        assert main(["pretrain", "--config", str(workdir / "cfg.txt"), "--out",
                     str(workdir / name)]) == 0
    for f in ("checkpoint.snck", "metrics.csv", "config.txt"):
        assert (workdir / "a" / f).read_bytes() == (workdir / "b" / f).read_bytes()
    manifest = json.loads((workdir / "a" / "manifest.json").read_text())
    assert manifest["command"] == "pretrain" and "metrics" in manifest["artifacts"]


def test_resolved_config_reproduces_run(workdir):
    main(["pretrain", "--config", str(workdir / "cfg.txt"), "--seed", "5", "--out", str(workdir / "a")])
    main(["pretrain", "--config", str(workdir / "a" / "config.txt"), "--out", str(workdir / "b")])
    assert (workdir / "a" / "checkpoint.snck").read_bytes() == \
        (workdir / "b" / "checkpoint.snck").read_bytes()


def test_eval_untrained_is_class_zero_frequency(workdir, capsys):
    main(["pretrain", "--config", str(workdir / "cfg.txt"), "--out", str(workdir / "a")])
    capsys.readouterr()
    assert main(["eval", "--config", str(workdir / "cfg.txt"), "--checkpoint",
                 str(workdir / "a" / "checkpoint.snck")]) == 0
    assert capsys.readouterr().out.strip() == f"top1 {4 / 8!r}"


def test_finetune_and_lineval(workdir):
    main(["pretrain", "--config", str(workdir / "cfg.txt"), "--out", str(workdir / "a")])
    ck = str(workdir / "a" / "checkpoint.snck")
    for cmd in ("finetune", "lineval"):
        assert main([cmd, "--config", str(workdir / "cfg.txt"), "--checkpoint", ck, "--out",
                     str(workdir / cmd)]) == 0
        assert (workdir / cmd / "checkpoint.snck").exists()
        assert main(["eval", "--config", str(workdir / "cfg.txt"), "--checkpoint",
                     str(workdir / cmd / "checkpoint.snck")]) == 0


def test_sweep_single_entry_matches_pretrain(workdir):
    (workdir / "one.txt").write_text((workdir / "cfg.txt").read_text().replace(
        "sweep_switchoff = 0,1,2", "sweep_switchoff = 0").replace(
        "suncet_off_epoch = 1", "suncet_off_epoch = 0"))
    assert main(["sweep-switchoff", "--config", str(workdir / "one.txt"), "--out",
                 str(workdir / "sw")]) == 0
    assert main(["pretrain", "--config", str(workdir / "one.txt"), "--out", str(workdir / "p")]) == 0
    rows = read_tsv(workdir / "sw" / "sweep.tsv")
    assert len(rows) == 1 and rows[0]["switchoff_epoch"] == "0"
    assert (workdir / "sw" / "off_0" / "metrics.csv").read_bytes() == \
        (workdir / "p" / "metrics.csv").read_bytes()


def test_sweep_flops_nondecreasing(workdir):
    assert main(["sweep-switchoff", "--config", str(workdir / "cfg.txt"), "--out",
                 str(workdir / "sw")]) == 0
    flops = [int(r["total_flops"]) for r in read_tsv(workdir / "sw" / "sweep.tsv")]
    assert flops == sorted(flops) and flops[0] < flops[-1]


def test_report_command(workdir):
    main(["pretrain", "--config", str(workdir / "cfg.txt"), "--out", str(workdir / "a")])
    m = str(workdir / "a" / "metrics.csv")
    assert main(["report", "--baseline", m, "--comparison", m, "--out", str(workdir / "r")]) == 0
    assert read_tsv(workdir / "r" / "savings.tsv")[0]["saved_flops"] == "0"


@pytest.mark.parametrize("content,code", [("tau = -1\n", 2), ("bogus = 1\n", 2)])
def test_config_errors_exit_2(tmp_path, content, code):
    (tmp_path / "bad.txt").write_text(content)
    assert main(["pretrain", "--config", str(tmp_path / "bad.txt"), "--out", str(tmp_path / "o")]) == code


def test_data_error_exit_3(tmp_path):
    (tmp_path / "bad.snds").write_bytes(b"JUNKJUNKJUNKJUNKJUNKJUNKJUNKJUNK")
    (tmp_path / "c.txt").write_text(f"dataset_path = {tmp_path / 'bad.snds'}\n")
    assert main(["pretrain", "--config", str(tmp_path / "c.txt")]) == 3


def test_missing_file_exit_5(tmp_path):
    (tmp_path / "c.txt").write_text(f"dataset_path = {tmp_path / 'nope.snds'}\n")
    assert main(["pretrain", "--config", str(tmp_path / "c.txt")]) == 5


def test_divergence_exit_4(workdir):
    (workdir / "hot.txt").write_text((workdir / "cfg.txt").read_text()
                                     + "optimizer = sgd_nesterov\nbase_lr = 1e200\nwarmup_epochs = 0\n")
    assert main(["pretrain", "--config", str(workdir / "hot.txt")]) == 4
