"""Command-line entry point: ``dkrc <subcommand> [options]``.

Exit codes: 0 success, 2 usage or I/O error, 3 inadmissible identification,
4 numeric divergence.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import io
from .config import OUT_ENV, PipelineConfig, load_config, validate
from .dkrc import MODES, supervised_dkrc
from .dynamics import build_snapshots, generate_trajectories, simulate
from .errors import ConfigError, DivergenceError, DKRCError, NumericError
from .evaluation import compare, mae, rollout
from .spectrogram import mel_spectrogram, to_image

EXIT_OK, EXIT_USAGE, EXIT_INADMISSIBLE, EXIT_DIVERGED = 0, 2, 3, 4

log = logging.getLogger("dkrc")


class UsageError(Exception):
    pass


def _config(args) -> PipelineConfig:
    cfg = load_config(getattr(args, "config", None))
    if getattr(args, "seed", None) is not None:
        cfg.run.seed = args.seed
    if getattr(args, "out", None):
        cfg.run.out = args.out
    return cfg


def _outdir(cfg) -> Path:
    out = Path(cfg.out_dir())
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise UsageError(f"cannot create output directory {out}: {exc}") from exc
    return out


def cmd_gen_data(args):
    cfg = _config(args)
    if args.n_trajectories is not None:
        cfg.dynamics.n_trajectories = args.n_trajectories
    if cfg.dynamics.n_trajectories < 1:
        raise UsageError("at least one trajectory must be requested")
    validate(cfg)
    out = _outdir(cfg)
    d = cfg.dynamics
    params = cfg.pendulum()
    trajs = generate_trajectories(params, d.n_trajectories, d.steps, cfg.run.seed, d.policy,
                                  (d.theta_min, d.theta_max), (d.theta_dot_min, d.theta_dot_max))
    files = []
    for k, traj in enumerate(trajs):
        name = f"traj_{k:03d}.csv"
        io.write_trajectory_csv(out / name, traj)
        files.append(name)
    io.write_manifest(out / "manifest.json", files, params, cfg.run.seed, cfg.digest(),
                      {"steps": d.steps, "policy": d.policy, "config": cfg.to_dict()})
    print(f"wrote {len(files)} trajectories and manifest.json to {out}")
    return EXIT_OK


def cmd_spectrogram(args):
    cfg = _config(args)
    out = _outdir(cfg)
    manifest, trajs = io.read_manifest(args.data)
    spec_cfg = cfg.spectrogram_config()
    channel = {"theta": 0, "theta_dot": 1}.get(cfg.spectrogram.channel, 0)
    for name, traj in zip(manifest["files"], trajs):
        spec = mel_spectrogram(traj.states[:, channel], spec_cfg)
        stem = out / (Path(name).stem + "_mel")
        io.write_spectrogram(stem, spec, cfg.digest(), {"source": name, "channel": cfg.spectrogram.channel})
        io.write_pgm(f"{stem}.pgm", to_image(spec), comment=f"config_hash {cfg.digest()}")
    print(f"wrote {len(trajs)} spectrograms to {out}")
    return EXIT_OK


def cmd_identify(args):
    cfg = _config(args)
    out = _outdir(cfg)
    manifest, trajs = io.read_manifest(args.data)
    data = build_snapshots(trajs)
    scfg = cfg.supervised(args.mode)
    opts = cfg.latent_options()
    opts["params"] = io.PendulumParams(**manifest["params"])
    ident = supervised_dkrc(data, scfg, trajs, latent_options=opts)
    ident.report.metadata["data_manifest"] = str(Path(args.data).name)
    ident.report.metadata["allow_inadmissible"] = args.allow_inadmissible
    io.save_identification(out, ident, opts["params"], cfg.digest(), args.allow_inadmissible)
    r = ident.report
    print(f"N={r.lift_dim} h1_max_abs={r.h1_max_abs:.4g} h1_frobenius={r.h1_frobenius:.4g} "
          f"rank={r.ctrb_rank} h2={r.h2} admissible={r.admissible}")
    if not r.admissible and not args.allow_inadmissible:
        print("identification is inadmissible (best-effort artifacts written)", file=sys.stderr)
        return EXIT_INADMISSIBLE
    return EXIT_OK


def _parse_state(text):
    try:
        values = [float(v) for v in text.split(",")]
    except ValueError as exc:
        raise UsageError(f"cannot parse state {text!r}") from exc
    if len(values) != 2:
        raise UsageError("state must be 'theta,theta_dot'")
    return np.array(values)


def cmd_rollout(args):
    art, system, dictionary = io.load_system(args.system)
    params = io.PendulumParams(**art.dynamics)
    x0 = _parse_state(args.x0)
    if args.horizon < 0:
        raise UsageError("horizon must be >= 0")
    if args.controls:
        try:
            controls = np.loadtxt(args.controls, delimiter=",", ndmin=1).reshape(-1)
        except ValueError as exc:
            raise UsageError(f"cannot parse controls file {args.controls}: {exc}") from exc
        if len(controls) < args.horizon:
            raise UsageError(f"{args.controls} holds {len(controls)} controls, need {args.horizon}")
        controls = controls[:args.horizon]
    else:
        controls = np.zeros(args.horizon)
    truth = (simulate(params, x0, controls, args.horizon) if args.horizon > 0
             else io.Trajectory(x0[None, :], [], dt=params.dt))
    result = rollout(system, dictionary, x0, truth.controls[None, :], truth)
    out = Path(args.out) if args.out else Path(PipelineConfig().out_dir()) / "rollout.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    io.write_rollout_csv(out, result)
    err = mae(result)
    io.write_json(out.with_suffix(".json"), {
        "rollout_csv": out.name, "system": str(Path(args.system).name), "config_hash": art.config_hash,
        "x0": x0, "horizon": args.horizon, "controls": args.controls and Path(args.controls).name,
        "mae_theta": err[0], "mae_theta_dot": err[1]})
    print(f"wrote {out}; MAE theta={err[0]:.4g} theta_dot={err[1]:.4g}")
    return EXIT_OK


def cmd_compare(args):
    cfg = _config(args)
    if args.dims is not None:
        cfg.eval.dims = tuple(int(v) for v in args.dims.split(",") if v.strip())
    if args.modes is not None:
        cfg.eval.modes = tuple(v.strip() for v in args.modes.split(",") if v.strip())
    if not cfg.eval.dims:
        raise UsageError("dims must be nonempty")
    if not cfg.eval.modes or any(m not in MODES for m in cfg.eval.modes):
        raise UsageError(f"modes must be a nonempty subset of {MODES}")
    out = _outdir(cfg)
    table = compare(cfg.compare_config(), progress=lambda d, m, s, r: log.info("N=%d %s seed=%d: %s", d, m, s, r))
    io.write_error_table(out / "error_table", table, cfg.digest())
    for r in table.rows:
        print(f"N={r['lift_dim']:>3} {r['mode']:<11} MAE(theta)={r['mae_theta']:.4f} "
              f"MAE(theta_dot)={r['mae_theta_dot']:.4f} admissible={r['admissible']}")
    if all(r["n_failed"] == len(r["seeds"]) for r in table.rows):
        print("every cell failed", file=sys.stderr)
        return EXIT_DIVERGED
    return EXIT_OK


def _summarize(obj):
    if isinstance(obj, dict):
        return {k: (f"<{len(v)} base64 chars>" if k == "parameters" and isinstance(v, str) else _summarize(v))
                for k, v in obj.items()}
    if isinstance(obj, list):
        return [_summarize(v) for v in obj]
    return obj


def cmd_inspect(args):
    try:
        data = io.read_json(args.path)
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read {args.path}: {exc}") from exc
    print(json.dumps(_summarize(data), indent=2, sort_keys=True))
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(
        prog="dkrc", description="Identify lifted linear (Koopman) models of a forced pendulum.",
        epilog=f"Default output root is taken from ${OUT_ENV} (fallback ./dkrc_out).")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, data=False):
        p.add_argument("--config", help="INI config file (unknown keys are rejected)")
        p.add_argument("--seed", type=int, help="override [run] seed")
        p.add_argument("--out", help=f"output directory (default: ${OUT_ENV} or ./dkrc_out)")
        if data:
            p.add_argument("--data", required=True, help="manifest.json written by gen-data")

    p = sub.add_parser("gen-data", help="simulate training trajectories")
    common(p)
    p.add_argument("--n-trajectories", type=int, help="override [dynamics] n_trajectories")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("spectrogram", help="export mel spectrograms (CSV + JSON + PGM) of a dataset")
    common(p, data=True)
    p.set_defaults(func=cmd_spectrogram)

    p = sub.add_parser("identify", help="supervised dimension search for an admissible lifted model")
    common(p, data=True)
    p.add_argument("--mode", choices=MODES, default="raw-only", help="lifting input features")
    p.add_argument("--allow-inadmissible", action="store_true",
                   help="exit 0 even when no admissible dimension was found")
    p.set_defaults(func=cmd_identify)

    p = sub.add_parser("rollout", help="open-loop prediction vs. the true pendulum")
    p.add_argument("--system", required=True, help="system JSON written by identify")
    p.add_argument("--x0", required=True, help="initial state 'theta,theta_dot'")
    p.add_argument("--horizon", type=int, default=5000, help="prediction steps (default 5000)")
    p.add_argument("--controls", help="file with one torque per line (default: zero torque)")
    p.add_argument("--out", help=f"output CSV path (default: ${OUT_ENV}/rollout.csv or ./dkrc_out/rollout.csv)")
    p.set_defaults(func=cmd_rollout)

    p = sub.add_parser("compare", help="MAE table over lift dimensions and feature modes")
    common(p)
    p.add_argument("--dims", help="comma-separated lift dimensions (overrides [eval] dims)")
    p.add_argument("--modes", help="comma-separated modes (overrides [eval] modes)")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("inspect", help="pretty-print an artifact JSON")
    p.add_argument("path")
    p.set_defaults(func=cmd_inspect)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except DivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except NumericError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (UsageError, ConfigError, DKRCError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
