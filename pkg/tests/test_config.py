"""Flat key=value configuration files."""

import dataclasses

import pytest

from trifuse.config import RunConfig, load_config, save_config


def test_save_load_round_trip(tmp_path):
    cfg = RunConfig(lr=1.25e-4, steps=37, use_srp=False, srp_mode="separation",
                    rho=0.8125, bench_lengths="16,32")
    path = str(tmp_path / "run.cfg")
    save_config(path, cfg)
    assert load_config(path) == cfg


def test_float_precision_survives_round_trip(tmp_path):
    cfg = RunConfig(lr=1.0 / 3.0, sigma=0.1 + 0.2)
    path = str(tmp_path / "run.cfg")
    save_config(path, cfg)
    back = load_config(path)
    assert back.lr == cfg.lr
    assert back.sigma == cfg.sigma


def test_comments_blank_lines_and_spacing(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text(
        "# a full-line comment\n"
        "\n"
        "steps=9\n"
        "  lr =  1e-3   # trailing comment\n"
        "use_ma = off\n")
    cfg = load_config(str(path))
    assert cfg.steps == 9
    assert cfg.lr == 1e-3
    assert cfg.use_ma is False
    # untouched keys keep their defaults
    assert cfg.embed_dim == RunConfig().embed_dim


def test_unknown_key_rejected_with_location(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("steps = 5\nlerning_rate = 1e-3\n")
    with pytest.raises(ValueError, match="2.*lerning_rate"):
        load_config(str(path))


def test_malformed_line_rejected(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("steps 5\n")
    with pytest.raises(ValueError, match="key = value"):
        load_config(str(path))


@pytest.mark.parametrize("raw,value", [
    ("true", True), ("1", True), ("YES", True), ("on", True),
    ("false", False), ("0", False), ("No", False), ("off", False),
])
def test_boolean_spellings(tmp_path, raw, value):
    path = tmp_path / "run.cfg"
    path.write_text(f"gelu_exact = {raw}\n")
    assert load_config(str(path)).gelu_exact is value


def test_bad_boolean_and_int_rejected(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("use_pfa = maybe\n")
    with pytest.raises(ValueError, match="boolean"):
        load_config(str(path))
    path.write_text("steps = 2.5\n")
    with pytest.raises(ValueError):
        load_config(str(path))


def test_base_config_overlay(tmp_path):
    base = RunConfig(steps=50, lr=9e-4)
    path = tmp_path / "run.cfg"
    path.write_text("steps = 60\n")
    merged = load_config(str(path), base=dataclasses.replace(base))
    assert merged.steps == 60
    assert merged.lr == 9e-4
