"""Command line surface, run in process for speed."""

import csv
import filecmp
import os

import numpy as np
import pytest

from conftest import make_tiny_cfg
from trifuse.cli import main
from trifuse.config import save_config
from trifuse.tensor import default_dtype, set_default_dtype


@pytest.fixture
def tiny_cfg_path(tmp_path):
    path = str(tmp_path / "tiny.cfg")
    save_config(path, make_tiny_cfg())
    return path


def _train_args(cfg_path, out, extra=()):
    return ["--config", cfg_path, "--seed", "5", "--out", out,
            "train-toy", *extra]


def test_train_toy_writes_run_directory(tiny_cfg_path, tmp_path, capsys):
    out = str(tmp_path / "run")
    assert main(_train_args(tiny_cfg_path, out)) == 0
    for name in ("config.cfg", "metrics.tsv", "eval.tsv"):
        assert os.path.exists(os.path.join(out, name))
    assert os.path.isdir(os.path.join(out, "checkpoint"))
    assert capsys.readouterr().out.rstrip().splitlines()[-1].startswith("final map")

    with open(os.path.join(out, "metrics.tsv")) as fh:
        rows = fh.read().rstrip().split("\n")
    assert rows[0].split("\t")[:3] == ["step", "lr", "total"]
    assert len(rows) == 1 + 4  # header + one row per step


def test_shared_flags_accepted_on_either_side_of_subcommand():
    from trifuse.cli import build_parser
    parser = build_parser()
    before = parser.parse_args(["--seed", "3", "--out", "x", "train-toy"])
    after = parser.parse_args(["train-toy", "--seed", "3", "--out", "x"])
    assert vars(before) == vars(after)
    # the occurrence after the subcommand wins
    mixed = parser.parse_args(["--seed", "1", "train-toy", "--seed", "3"])
    assert mixed.seed == 3


def test_same_seed_runs_are_byte_identical(tiny_cfg_path, tmp_path):
    a = str(tmp_path / "a")
    b = str(tmp_path / "b")
    assert main(_train_args(tiny_cfg_path, a)) == 0
    assert main(_train_args(tiny_cfg_path, b)) == 0
    for name in ("metrics.tsv", "eval.tsv", "config.cfg"):
        assert filecmp.cmp(os.path.join(a, name), os.path.join(b, name),
                           shallow=False), f"{name} differs between runs"


def test_eval_subcommand_reports_on_checkpoint(tiny_cfg_path, tmp_path, capsys):
    out = str(tmp_path / "run")
    main(_train_args(tiny_cfg_path, out))
    capsys.readouterr()

    assert main(["--seed", "5", "--out", out, "eval"]) == 0
    text = capsys.readouterr().out
    assert "mAP" in text
    report = os.path.join(out, "eval_report.csv")
    with open(report, newline="") as fh:
        rows = {r[0]: r[1] for r in csv.reader(fh)}
    assert 0.0 <= float(rows["mAP"]) <= 1.0

    # the report reproduces the final eval row of the training log
    with open(os.path.join(out, "eval.tsv")) as fh:
        last = fh.read().rstrip().split("\n")[-1].split("\t")
    assert float(rows["mAP"]) == float(last[1])


def test_eval_rejects_non_run_directory(tmp_path):
    empty = str(tmp_path / "empty")
    os.makedirs(empty)
    with pytest.raises(SystemExit):
        main(["--out", empty, "eval"])


def test_train_requires_out():
    with pytest.raises(SystemExit):
        main(["train-toy"])


def test_unknown_config_key_is_an_error(tmp_path):
    path = str(tmp_path / "bad.cfg")
    with open(path, "w") as fh:
        fh.write("not_a_knob = 1\n")
    with pytest.raises(ValueError, match="not_a_knob"):
        main(["--config", path, "--out", str(tmp_path / "x"), "train-toy"])


def test_halt_and_resume_flags(tiny_cfg_path, tmp_path):
    out = str(tmp_path / "run")
    ref = str(tmp_path / "ref")
    main(_train_args(tiny_cfg_path, out, extra=["--halt-after", "2"]))
    main(_train_args(tiny_cfg_path, out,
                     extra=["--resume-from", os.path.join(out, "checkpoint")]))
    main(_train_args(tiny_cfg_path, ref))
    assert filecmp.cmp(os.path.join(out, "metrics.tsv"),
                       os.path.join(ref, "metrics.tsv"), shallow=False)


def test_bench_subcommand_smoke(tmp_path, capsys):
    cfg_path = str(tmp_path / "bench.cfg")
    save_config(cfg_path, make_tiny_cfg(bench_lengths="16,32",
                                        bench_reps=1, bench_warmup=0))
    out = str(tmp_path / "bench")
    assert main(["--config", cfg_path, "--out", out, "bench"]) == 0
    text = capsys.readouterr().out
    for kind in ("scan", "attention", "block"):
        assert f"{kind}: linear fit" in text
    with open(os.path.join(out, "bench.csv"), newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["kind", "n", "seconds", "flops"]
    assert len(rows) == 1 + 3 * 2


def test_precision_flag_switches_dtype(tiny_cfg_path, tmp_path):
    out = str(tmp_path / "f32")
    try:
        assert main(_train_args(tiny_cfg_path, out)[:-1]
                    + ["--precision", "f32", "train-toy"]) == 0
        assert default_dtype() == np.float32
        assert os.path.exists(os.path.join(out, "metrics.tsv"))
    finally:
        set_default_dtype(np.float64)


def test_threads_flag_sets_environment(tiny_cfg_path, tmp_path, capsys):
    saved = {k: os.environ.get(k) for k in
             ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS")}
    out = str(tmp_path / "run")
    try:
        assert main(["--threads", "1"] + _train_args(tiny_cfg_path, out)) == 0
        assert os.environ["OMP_NUM_THREADS"] == "1"
        # numpy is long imported inside the test process, so the CLI warns
        assert "numpy already imported" in capsys.readouterr().err
    finally:
        for key, value in saved.items():
            if value is None:
                os.environ.pop(key, None)
            else:
                os.environ[key] = value


@pytest.mark.slow
def test_ablate_grid_structure(tiny_cfg_path, tmp_path):
    out = str(tmp_path / "grid")
    assert main(["--config", tiny_cfg_path, "--seed", "5", "--out", out,
                 "ablate"]) == 0
    with open(os.path.join(out, "ablation.tsv")) as fh:
        rows = [line.split("\t") for line in fh.read().rstrip().split("\n")]
    assert rows[0] == ["variant", "map", "cmc1", "trainable"]
    variants = [r[0] for r in rows[1:]]
    assert variants == ["frozen", "pfa", "srp", "pfa_srp", "full"]
    trainable = {r[0]: int(r[3]) for r in rows[1:]}
    assert (trainable["frozen"] < trainable["pfa"]
            < trainable["pfa_srp"] < trainable["full"])
    for r in rows[1:]:
        assert 0.0 <= float(r[1]) <= 1.0
        assert os.path.isdir(os.path.join(out, r[0], "checkpoint"))