"""Command-line front end.

    tdpo train <config>
    tdpo rollout <config> <ckpt>
    tdpo spectrum <config> <ckpt>
    tdpo check-grad <config> [--ckpt PATH]

Exit codes: 0 ok, 2 configuration error, 3 runtime error.
"""

from __future__ import annotations

import argparse
import csv
import os
import shutil
import sys
import tempfile
from dataclasses import replace
from pathlib import Path

import numpy as np

from tdpo.config import (
    ConfigError,
    RunConfig,
    build_env,
    build_policy,
    build_train_config,
    layer_sizes,
    parse_config,
    pendulum_config,
    serialize_config,
    with_seed,
)
from tdpo.devine import ExplorationSpec, advantage_gradient, collect_vine_samples, write_samples_csv
from tdpo.envs import PendulumEnv, band_bins, dominant_bin, pendulum_angles, spectrum_summary, write_spectrum_csv
from tdpo.mdp import DiscountSpec, discounted_return, rollout, write_trajectory_csv
from tdpo.oracles import FDSpec, fd_payoff_gradient, gradient_report
from tdpo.policy import PolicyError, PolicyParams, load_checkpoint, save_checkpoint
from tdpo.trainer import train, write_curve_csv

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3


class CLIError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


def load_config(path, workers: int | None = None) -> RunConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        raise CLIError(f"config: cannot read {path}: {exc}", EXIT_CONFIG) from exc
    try:
        cfg = parse_config(text)
        seed = os.environ.get("TDPO_SEED")
        if seed is not None:
            try:
                cfg = with_seed(cfg, int(seed))
            except ValueError:
                raise ConfigError(f"TDPO_SEED must be an integer, got {seed!r}") from None
        if workers is not None:
            if workers < 1:
                raise ConfigError("--workers must be >= 1")
            cfg = replace(cfg, train=replace(cfg.train, workers=workers))
    except ConfigError as exc:
        raise CLIError(f"config: {path}: {exc}", EXIT_CONFIG) from exc
    return cfg


def _out_dir(cfg: RunConfig, override) -> Path:
    return Path(override) if override else Path(cfg.output.dir)


def _load_policy(cfg: RunConfig, env, ckpt) -> PolicyParams:
    try:
        policy = load_checkpoint(ckpt)
    except (OSError, PolicyError) as exc:
        raise CLIError(f"checkpoint: {exc}", EXIT_RUNTIME) from exc
    expected = layer_sizes(cfg, env)
    if policy.sizes != expected or policy.bias != cfg.policy.bias:
        raise CLIError(
            f"checkpoint: architecture {policy.sizes} (bias={policy.bias}) does not match "
            f"config {expected} (bias={cfg.policy.bias})",
            EXIT_RUNTIME,
        )
    return policy


def cmd_train(args) -> int:
    cfg = load_config(args.config, args.workers)
    out = _out_dir(cfg, args.out)
    env = build_env(cfg)
    policy = build_policy(cfg, env)
    tcfg = build_train_config(cfg)

    # write into a scratch directory and move results in only on success
    out.parent.mkdir(parents=True, exist_ok=True)
    scratch = Path(tempfile.mkdtemp(prefix=".tdpo-", dir=out.parent))
    try:
        (scratch / "config.txt").write_text(serialize_config(cfg))
        if not args.quiet:
            print(f"training {cfg.env.name} for {tcfg.iterations} iterations -> {out}")

        def report(record, _policy):
            if not args.quiet:
                print(
                    f"iter {record.iter:4d}  steps {record.env_steps:9d}  "
                    f"payoff {record.payoff_discounted: .6g}  alpha {record.alpha:.4g}"
                )

        try:
            final, records = train(env, policy, tcfg, checkpoint_dir=scratch, callback=report)
        except Exception as exc:
            raise CLIError(f"train: {exc}", EXIT_RUNTIME) from exc
        write_curve_csv(records, scratch / "curve.csv")
        save_checkpoint(final, scratch / "ckpt_final")
        if cfg.output.dump_trajectory or cfg.output.dump_samples:
            env.reset()
            if cfg.output.dump_samples:
                _, samples = collect_vine_samples(
                    env, final, tcfg.exploration, tcfg.discount, tcfg.horizon,
                    np.random.default_rng((cfg.train.seed, 3)),
                )
                write_samples_csv(samples, scratch / "samples.csv")
            if cfg.output.dump_trajectory:
                env.reset()
                write_trajectory_csv(rollout(env, final, tcfg.horizon), scratch / "trajectory.csv")
        out.mkdir(parents=True, exist_ok=True)
        for item in scratch.iterdir():
            os.replace(item, out / item.name)
    finally:
        shutil.rmtree(scratch, ignore_errors=True)
    if not args.quiet:
        print(f"wrote {out / 'curve.csv'}")
    return EXIT_OK


def cmd_rollout(args) -> int:
    cfg = load_config(args.config)
    env = build_env(cfg)
    policy = _load_policy(cfg, env, args.ckpt)
    out = _out_dir(cfg, args.out)
    env.reset()
    try:
        traj = rollout(env, policy, cfg.env.horizon)
    except Exception as exc:
        raise CLIError(f"rollout: {exc}", EXIT_RUNTIME) from exc
    out.mkdir(parents=True, exist_ok=True)
    write_trajectory_csv(traj, out / "trajectory.csv")
    spec = DiscountSpec(cfg.train.gamma)
    print(f"payoff_disc={discounted_return(traj.rewards, 0, spec):.17g}")
    print(f"payoff_undisc={float(np.sum(traj.rewards)):.17g}")
    return EXIT_OK


def cmd_spectrum(args) -> int:
    cfg = load_config(args.config)
    env = build_env(cfg)
    if not isinstance(env, PendulumEnv):
        raise CLIError("spectrum: only the pendulum environment has an angle spectrum", EXIT_CONFIG)
    policy = _load_policy(cfg, env, args.ckpt)
    out = _out_dir(cfg, args.out)
    pcfg = pendulum_config(cfg)
    env.reset()
    try:
        traj = rollout(env, policy, pcfg.horizon)
    except Exception as exc:
        raise CLIError(f"spectrum: {exc}", EXIT_RUNTIME) from exc
    theta = pendulum_angles(traj)
    summary = spectrum_summary(theta, pcfg)
    out.mkdir(parents=True, exist_ok=True)
    write_trajectory_csv(traj, out / "trajectory.csv")
    write_spectrum_csv(theta, pcfg.dt, out / "spectrum.csv")
    bins = band_bins(pcfg)
    rows = [
        ("dc_mean", summary.dc_mean),
        ("band_power_fraction", summary.band_power_fraction),
        ("ac_amplitude", summary.ac_amplitude),
        ("dominant_bin", dominant_bin(theta)),
        ("target_f_min_hz", pcfg.f_min),
        ("target_f_max_hz", pcfg.f_max),
        ("target_bin_min", int(bins[0]) if bins.size else -1),
        ("target_bin_max", int(bins[-1]) if bins.size else -1),
        ("target_offset_rad", pcfg.target_offset),
        ("target_amplitude_rad", pcfg.target_amplitude),
    ]
    with open(out / "spectrum_summary.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["key", "value"])
        for key, value in rows:
            writer.writerow([key, value if isinstance(value, int) else f"{value:.17g}"])
    for key, value in rows:
        print(f"{key}={value}")
    return EXIT_OK


def cmd_check_grad(args) -> int:
    cfg = load_config(args.config)
    env = build_env(cfg)
    policy = _load_policy(cfg, env, args.ckpt) if args.ckpt else build_policy(cfg, env)
    horizon = cfg.env.horizon
    spec = DiscountSpec(cfg.train.gamma)
    try:
        env.reset()
        explore = ExplorationSpec.full_coverage(args.sigma, horizon, env.act_dim)
        _, samples = collect_vine_samples(env, policy, explore, spec, horizon, workers=cfg.train.workers)
        estimate = advantage_gradient(samples, policy)
        env.reset()
        reference = fd_payoff_gradient(env, policy, horizon, spec.gamma, FDSpec(h=args.fd_h))
    except Exception as exc:
        raise CLIError(f"check-grad: {exc}", EXIT_RUNTIME) from exc
    report = gradient_report(estimate, reference)
    print(f"parameters: {policy.size}")
    print(f"max abs error: {report['max_abs_error']:.6e}")
    print(f"cosine similarity: {report['cosine_similarity']:.12f}")
    print(
        f"worst offender: index {report['worst_index']} "
        f"(devine {report['estimate_at_worst']:.6e}, finite difference {report['reference_at_worst']:.6e})"
    )
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tdpo", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="run the policy optimizer")
    p.add_argument("config")
    p.add_argument("--out", help="output directory (overrides output.dir)")
    p.add_argument("--workers", type=int, help="cap on parallel branch rollouts")
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("rollout", help="roll out a checkpoint and dump the trajectory")
    p.add_argument("config")
    p.add_argument("ckpt")
    p.add_argument("--out")
    p.set_defaults(func=cmd_rollout)

    p = sub.add_parser("spectrum", help="trajectory and angle spectrum of a checkpoint")
    p.add_argument("config")
    p.add_argument("ckpt")
    p.add_argument("--out")
    p.set_defaults(func=cmd_spectrum)

    p = sub.add_parser("check-grad", help="compare the vine gradient with finite differences")
    p.add_argument("config")
    p.add_argument("--ckpt")
    p.add_argument("--sigma", type=float, default=1e-6, help="branch perturbation size")
    p.add_argument("--fd-h", type=float, default=1e-4, help="finite-difference step")
    p.set_defaults(func=cmd_check_grad)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CLIError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
