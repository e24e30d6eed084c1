import csv
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tdpo.cli import main
from tdpo.config import ConfigError, RunConfig, parse_config, serialize_config
from tdpo.envs import PendulumEnv, pendulum_angles
from tdpo.mdp import rollout
from tdpo.policy import init_params, save_checkpoint, zeros_like_policy

SMOKE = """\
# tiny pendulum run
env.variant=main
policy.hidden=6,6
train.iterations=2
train.eval_every=1
explore.branches=3
output.wall_time=false
"""


def write(tmp_path, text, name="run.cfg"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh, strict=True))


def test_minimal_config_uses_main_targets():
    cfg = parse_config("env.variant=main")
    assert (cfg.env.f_min, cfg.env.f_max) == (1.7, 2.0)
    assert (cfg.env.target_offset, cfg.env.target_amplitude) == (0.524, 0.28)


def test_empty_config_gives_defaults():
    cfg = parse_config("")
    assert cfg.train.seed == 0
    assert cfg.surrogate.c1 == cfg.surrogate.c2 == pytest.approx(3600 * 5 / 25)
    assert cfg.surrogate.delta_max == pytest.approx(5 / 600)
    assert cfg.explore.sigma == pytest.approx(5 / 60)


def test_overrides_survive_defaults():
    cfg = parse_config("policy.action_scale=2\nsurrogate.delta_max=0.5\nenv.variant=v3\nenv.f_max=2.5")
    assert cfg.surrogate.delta_max == 0.5
    assert cfg.surrogate.c1 == pytest.approx(3600 * 5 / 4)
    assert cfg.env.f_max == 2.5


@pytest.mark.parametrize(
    "text, line",
    [
        ("train.gamma=1.2", 1),
        ("# c\ntrain.bogus=3", 2),
        ("env.variant=main\nenv.variant=v2", 2),
        ("train.iterations=0", 1),
        ("train.iterations=two", 1),
        ("nonsense", 1),
        ("output.dump_samples=maybe", 1),
    ],
)
def test_bad_configs_report_line(text, line):
    with pytest.raises(ConfigError) as info:
        parse_config(text)
    assert info.value.line == line and f"line {line}" in str(info.value)


def test_cross_key_invariant_rejected():
    with pytest.raises(ConfigError):
        parse_config("env.f_min=3\nenv.f_max=2")


@settings(max_examples=50, deadline=None)
@given(
    hidden=st.lists(st.integers(1, 64), max_size=3),
    gamma=st.floats(0, 0.999),
    beta=st.floats(0.1, 50),
    seed=st.integers(0, 2**31),
    ls=st.sampled_from(["off", "default", "2,1,0.5"]),
    variant=st.sampled_from(["main", "v2", "v5", "v9"]),
)
def test_config_round_trip(hidden, gamma, beta, seed, ls, variant):
    text = (
        f"env.variant={variant}\npolicy.hidden={','.join(map(str, hidden))}\n"
        f"train.gamma={gamma!r}\npolicy.action_scale={beta!r}\ntrain.seed={seed}\ntrain.line_search={ls}\n"
    )
    cfg = parse_config(text)
    again = parse_config(serialize_config(cfg))
    assert isinstance(again, RunConfig) and again == cfg


def test_train_smoke_and_artifacts(tmp_path):
    cfg = write(tmp_path, SMOKE)
    out = tmp_path / "out"
    assert main(["train", cfg, "--out", str(out), "--quiet"]) == 0
    rows = read_csv(out / "curve.csv")
    assert len(rows) == 3 and all(len(r) == 9 for r in rows)
    names = {p.name for p in out.iterdir()}
    assert {"curve.csv", "ckpt_1", "ckpt_2", "ckpt_final", "trajectory.csv", "config.txt"} <= names
    assert all(len(r) == 6 for r in read_csv(out / "trajectory.csv"))


def test_train_is_byte_reproducible(tmp_path):
    cfg = write(tmp_path, SMOKE)
    for name in ("a", "b"):
        assert main(["train", cfg, "--out", str(tmp_path / name), "--quiet", "--workers", "2"]) == 0
    assert (tmp_path / "a" / "curve.csv").read_bytes() == (tmp_path / "b" / "curve.csv").read_bytes()


def test_invalid_config_leaves_nothing(tmp_path, capsys):
    cfg = write(tmp_path, "train.gamma=1.2\n")
    out = tmp_path / "never"
    assert main(["train", cfg, "--out", str(out)]) == 2
    assert not out.exists()
    assert sorted(p.name for p in tmp_path.iterdir()) == ["run.cfg"]
    assert "line 1" in capsys.readouterr().err


def test_missing_config_is_config_error(tmp_path):
    assert main(["train", str(tmp_path / "nope.cfg")]) == 2


def test_seed_env_override(tmp_path, monkeypatch):
    cfg = write(tmp_path, SMOKE)
    monkeypatch.setenv("TDPO_SEED", "7")
    assert main(["train", cfg, "--out", str(tmp_path / "s7"), "--quiet"]) == 0
    assert "train.seed=7" in (tmp_path / "s7" / "config.txt").read_text()
    monkeypatch.setenv("TDPO_SEED", "seven")
    assert main(["train", cfg, "--out", str(tmp_path / "bad"), "--quiet"]) == 2


def test_spectrum_of_null_policy(tmp_path, capsys):
    cfg = write(tmp_path, "policy.hidden=4\n")
    ckpt = tmp_path / "zero"
    save_checkpoint(zeros_like_policy(init_params((3, 4, 1), np.random.default_rng(0), action_scale=5.0)), ckpt)
    out = tmp_path / "spec"
    assert main(["spectrum", cfg, str(ckpt), "--out", str(out)]) == 0
    spectrum = read_csv(out / "spectrum.csv")
    assert spectrum[0] == ["freq_hz", "magnitude"] and len(spectrum) == 102
    summary = dict(read_csv(out / "spectrum_summary.csv")[1:])
    assert float(summary["band_power_fraction"]) < 0.5
    assert (summary["target_bin_min"], summary["target_bin_max"]) == ("17", "20")

    env = PendulumEnv(seed=0)
    env.reset()
    theta = pendulum_angles(rollout(env, lambda obs: np.zeros(1), 200))
    assert float(summary["dc_mean"]) == pytest.approx(theta.mean(), abs=1e-12)


def test_architecture_mismatch_is_runtime_error(tmp_path, capsys):
    cfg = write(tmp_path, "policy.hidden=4\n")
    ckpt = tmp_path / "wide"
    save_checkpoint(init_params((3, 9, 1), np.random.default_rng(0), action_scale=5.0), ckpt)
    assert main(["spectrum", cfg, str(ckpt), "--out", str(tmp_path / "x")]) == 3
    assert "does not match" in capsys.readouterr().err
    assert main(["rollout", cfg, str(tmp_path / "missing"), "--out", str(tmp_path / "x")]) == 3


def test_rollout_command(tmp_path, capsys):
    cfg = write(tmp_path, "policy.hidden=4\n")
    ckpt = tmp_path / "p"
    save_checkpoint(init_params((3, 4, 1), np.random.default_rng(0), action_scale=5.0), ckpt)
    assert main(["rollout", cfg, str(ckpt), "--out", str(tmp_path / "r")]) == 0
    assert len(read_csv(tmp_path / "r" / "trajectory.csv")) == 201
    assert "payoff_disc=" in capsys.readouterr().out


def test_check_grad_report(tmp_path, capsys):
    cfg = write(tmp_path, "env.name=linear\nenv.horizon=5\npolicy.hidden=\npolicy.bias=false\npolicy.action_scale=1\n")
    assert main(["check-grad", cfg]) == 0
    out = capsys.readouterr().out
    assert "max abs error" in out and "worst offender: index 0" in out
    cos = float(out.split("cosine similarity:")[1].split()[0])
    assert cos >= 1 - 1e-4


def test_console_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "tdpo", "train", str(tmp_path / "missing.cfg")], capture_output=True, text=True)
    assert res.returncode == 2 and "error: config" in res.stderr
