"""``usd`` command-line entry point.

    usd synth          --config run.json [--out DIR]
    usd color-transfer --config run.json [--source a.png --target b.png --output out.png]
    usd interpolate    --config run.json [--replay DIR]
    usd check          [--config run.json]

Every command accepts ``--set key=value`` (dotted keys reach nested
sections, e.g. ``--set kernel.lambda=0.01``). ``USD_THREADS`` caps the
number of BLAS threads.
"""

from __future__ import annotations

import argparse
import glob
import json
import os
import re
import sys
import time
import warnings

import numpy as np
from threadpoolctl import threadpool_limits

from . import report
from .config import RunConfig, load_config, sub_seed
from .data import load_image, load_point_cloud, particles_to_array, particles_to_image, sample_shape, save_point_cloud
from .descent import DescentTrace, Snapshot, find_midpoint, midpoint_gaps, run_kernel_usd
from .embeddings import WeightedParticles
from .errors import ConfigError, USDError
from .features import build_rff
from .mmd import mmd2
from .neural_critic import run_neural_usd
from .selfcheck import run_checks

SNAPSHOT_DIR = "snapshots"


# ---- shared pieces ------------------------------------------------------

def descent_map(cfg: RunConfig, d: int):
    return build_rff(d, cfg.kernel.n_features, cfg.kernel.bandwidth, seed=sub_seed(cfg.seeds.descent, 1))


def eval_map(cfg: RunConfig, d: int):
    # depends on the data seed only, so runs with different descent seeds share a metric
    return build_rff(d, cfg.eval.n_features, cfg.eval.bandwidth, seed=sub_seed(cfg.seeds.data, 2))


def synthetic_data(cfg: RunConfig):
    source = sample_shape(cfg.source_spec(), np.random.default_rng(sub_seed(cfg.seeds.data, 0)))
    target = sample_shape(cfg.target_spec(), np.random.default_rng(sub_seed(cfg.seeds.data, 1)))
    return source, target


def run_descent(cfg: RunConfig, target: WeightedParticles, source: WeightedParticles):
    """Run the configured engine; returns (trace, final particles)."""
    dcfg = cfg.descent_config()
    fe = eval_map(cfg, source.dim)
    final = {}

    def keep_last(ell, state, critic):
        if ell == dcfg.n_steps:
            final["P"] = state.particles()

    if cfg.engine == "kernel":
        trace = run_kernel_usd(target, source, descent_map(cfg, source.dim), fe, dcfg, callback=keep_last)
    else:
        if cfg.normalization:
            warnings.warn(f"normalization {cfg.normalization!r} is not supported and is ignored", UserWarning)
        trace = run_neural_usd(target, source, dcfg, fe, callback=keep_last)
    return trace, final["P"]


def _out_dir(args, cfg) -> str:
    out = args.out or cfg.output_dir
    os.makedirs(out, exist_ok=True)
    return out


def write_run(out: str, cfg: RunConfig, trace: DescentTrace, wall: float, extra=None) -> dict:
    trace.to_csv(os.path.join(out, "trace.csv"))
    if trace.snapshots:
        snap_dir = os.path.join(out, SNAPSHOT_DIR)
        os.makedirs(snap_dir, exist_ok=True)
        for s in trace.snapshots:
            save_point_cloud(s.particles(), os.path.join(snap_dir, f"step_{s.step:05d}.csv"))
    with open(os.path.join(out, "config.json"), "w") as fh:
        fh.write(cfg.to_json() + "\n")
    mmd = trace.mmd2
    summary = {
        "engine": cfg.engine,
        "mode": cfg.mode,
        "steps": len(trace) - 1,
        "initial_mmd2": float(mmd[0]),
        "final_mmd2": float(mmd[-1]),
        "final_total_mass": trace.records[-1].total_mass,
        "final_n_particles": trace.records[-1].n_particles,
        "clamped_steps": len(trace.clamped_steps),
        "wall_time_s": round(wall, 3),
    }
    summary.update(extra or {})
    with open(os.path.join(out, "summary.json"), "w") as fh:
        json.dump(summary, fh, indent=2)
    return summary


def _save_partial(out, exc):
    trace = getattr(exc, "trace", None)
    if trace is not None and len(trace):
        trace.to_csv(os.path.join(out, "trace.csv"))


# ---- commands -----------------------------------------------------------

def cmd_synth(args, cfg: RunConfig) -> int:
    out = _out_dir(args, cfg)
    source, target = synthetic_data(cfg)
    t0 = time.perf_counter()
    try:
        trace, final = run_descent(cfg, target, source)
    except USDError as exc:
        _save_partial(out, exc)
        raise
    summary = write_run(out, cfg, trace, time.perf_counter() - t0)
    if not args.no_figures:
        report.plot_trace(trace, os.path.join(out, "mmd.png"))
        report.plot_particles(source, target, final, os.path.join(out, "particles.png"))
    print(f"steps={summary['steps']} initial_mmd2={summary['initial_mmd2']:.6e} "
          f"final_mmd2={summary['final_mmd2']:.6e} wall={summary['wall_time_s']}s out={out}")
    return 0


def cmd_color_transfer(args, cfg: RunConfig) -> int:
    src_path = args.source or cfg.images.source
    tgt_path = args.target or cfg.images.target
    if not src_path or not tgt_path:
        raise ConfigError("color transfer needs source and target images (images.source/images.target or flags)")
    if cfg.mode == "birth_death":
        raise ConfigError("color transfer needs mode weighted or none; birth-death breaks the pixel order")
    out = _out_dir(args, cfg)
    out_png = args.output or cfg.images.output
    if not os.path.isabs(out_png) and os.path.dirname(out_png) == "":
        out_png = os.path.join(out, out_png)

    source, (w, h) = load_image(src_path)
    target, _ = load_image(tgt_path)
    if cfg.n_points_target < target.n:
        rng = np.random.default_rng(sub_seed(cfg.seeds.data, 1))
        target = WeightedParticles.uniform(target.points[np.sort(rng.choice(target.n, cfg.n_points_target, replace=False))])
    t0 = time.perf_counter()
    try:
        trace, final = run_descent(cfg, target, source)
    except USDError as exc:
        _save_partial(out, exc)
        raise
    particles_to_image(final, w, h, out_png)
    summary = write_run(out, cfg, trace, time.perf_counter() - t0, {"output_image": out_png})
    if not args.no_figures:
        report.plot_trace(trace, os.path.join(out, "mmd.png"))
        tgt_img = load_image(tgt_path)
        report.plot_images(
            particles_to_array(source, w, h),
            particles_to_array(tgt_img[0], *tgt_img[1]),
            particles_to_array(final, w, h),
            os.path.join(out, "images.png"),
        )
    print(f"steps={summary['steps']} initial_mmd2={summary['initial_mmd2']:.6e} "
          f"final_mmd2={summary['final_mmd2']:.6e} image={out_png}")
    return 0


def _load_snapshots(run_dir: str) -> DescentTrace:
    files = sorted(glob.glob(os.path.join(run_dir, SNAPSHOT_DIR, "step_*.csv")))
    snaps = []
    for f in files:
        step = int(re.search(r"step_(\d+)\.csv$", f).group(1))
        P = load_point_cloud(f)
        snaps.append(Snapshot(step, P.points, P.weights))
    snaps.sort(key=lambda s: s.step)
    return DescentTrace(snapshots=snaps)


def cmd_interpolate(args, cfg: RunConfig) -> int:
    source, target = synthetic_data(cfg)
    fe = eval_map(cfg, source.dim)
    if args.replay:
        out = args.out or args.replay
        os.makedirs(out, exist_ok=True)
        trace = _load_snapshots(args.replay)
    else:
        if cfg.snapshot_every <= 0:
            raise ConfigError("interpolation needs snapshots: set snapshot_every > 0")
        out = _out_dir(args, cfg)
        t0 = time.perf_counter()
        try:
            trace, _ = run_descent(cfg, target, source)
        except USDError as exc:
            _save_partial(out, exc)
            raise
        wall = time.perf_counter() - t0
    best = find_midpoint(trace, source, target, fe)
    to_src, to_tgt = midpoint_gaps(trace, source, target, fe)
    k = [s.step for s in trace.snapshots].index(best)
    snap = trace.snapshots[k]
    save_point_cloud(snap.particles(), os.path.join(out, "midpoint.csv"))
    with open(os.path.join(out, "midpoint_gaps.csv"), "w") as fh:
        fh.write("step,mmd_to_source,mmd_to_target\n")
        for s, a, b in zip(trace.snapshots, to_src, to_tgt):
            fh.write(f"{s.step},{a!r},{b!r}\n")
    info = {
        "midpoint_step": best,
        "mmd_to_source": float(to_src[k]),
        "mmd_to_target": float(to_tgt[k]),
        "mmd_source_target": float(np.sqrt(mmd2(source, target, fe))),
    }
    if args.replay:
        with open(os.path.join(out, "midpoint.json"), "w") as fh:
            json.dump(info, fh, indent=2)
    else:
        write_run(out, cfg, trace, wall, info)
        if not args.no_figures:
            report.plot_trace(trace, os.path.join(out, "mmd.png"))
    if not args.no_figures:
        report.plot_midpoint([s.step for s in trace.snapshots], to_src, to_tgt, best,
                             os.path.join(out, "midpoint.png"))
    print(f"midpoint_step={best} mmd_to_source={info['mmd_to_source']:.6e} "
          f"mmd_to_target={info['mmd_to_target']:.6e} mmd_source_target={info['mmd_source_target']:.6e}")
    return 0


def cmd_check(args, cfg: RunConfig | None) -> int:
    seed = args.seed if args.seed is not None else (cfg.seeds.descent if cfg else 0)
    results = run_checks(seed)
    for r in results:
        print(r.line())
    ok = all(r.passed for r in results)
    print("all checks passed" if ok else "some checks FAILED")
    return 0 if ok else 1


# ---- argument parsing ---------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="usd", description="Unbalanced Sobolev descent runs.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config_required=True):
        p.add_argument("--config", required=config_required, help="JSON run configuration")
        p.add_argument("--out", help="output directory (default: output_dir from the config)")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override a configuration entry; repeatable")
        p.add_argument("--no-figures", action="store_true", help="skip the PNG figures")
        return p

    common(sub.add_parser("synth", help="descend between two synthetic shapes"))
    ct = common(sub.add_parser("color-transfer", help="recolor an image toward another image's palette"))
    ct.add_argument("--source", help="source PNG (overrides images.source)")
    ct.add_argument("--target", help="target PNG (overrides images.target)")
    ct.add_argument("--output", help="output PNG (overrides images.output)")
    ip = common(sub.add_parser("interpolate", help="find the MMD midpoint of a descent"))
    ip.add_argument("--replay", metavar="DIR", help="reuse snapshots from an earlier run instead of descending")
    ck = common(sub.add_parser("check", help="run numerical self-tests"), config_required=False)
    ck.add_argument("--seed", type=int, help="seed for the random test instances")
    return parser


COMMANDS = {
    "synth": cmd_synth,
    "color-transfer": cmd_color_transfer,
    "interpolate": cmd_interpolate,
    "check": cmd_check,
}


def _thread_limit():
    raw = os.environ.get("USD_THREADS")
    if not raw:
        return None
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"USD_THREADS must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise ConfigError(f"USD_THREADS must be a positive integer, got {raw!r}")
    return n


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        limit = _thread_limit()
        if args.config:
            cfg = load_config(args.config, args.set)
        elif args.set:
            raise ConfigError("--set needs --config")
        else:
            cfg = None
        with threadpool_limits(limits=limit):
            return COMMANDS[args.command](args, cfg)
    except ConfigError as exc:
        print(f"usd: configuration error: {exc}", file=sys.stderr)
        return 2
    except (USDError, ValueError, ArithmeticError, OSError) as exc:
        print(f"usd: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
