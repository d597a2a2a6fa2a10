"""Command line entry point: simulate, analyze and the free-streaming oracle."""

import argparse
import dataclasses
import logging
import math
import os
import sys

import numpy as np

from . import artifacts
from .analysis import analyze, load_analysis_spec
from .config import ConfigError, emit_config, load_config
from .diagnostics import measure
from .dynamics import StepError, free_stream_exact, run
from .initial import build_ensemble, lattice_particles
from .phase import ModelTag, RadialPoint
from .summary import summarize

log = logging.getLogger("radialvp")


def simulate(cfg, out_dir, threads=None, progress_every=0):
    """Run ``cfg`` and write every artifact into ``out_dir``. Returns an exit status."""
    if threads is not None:
        cfg = dataclasses.replace(cfg, step=dataclasses.replace(cfg.step, threads=int(threads)))
    os.makedirs(out_dir, exist_ok=True)
    e0 = build_ensemble(cfg.profile, cfg.quadrature, cfg.model)
    tracked = cfg.tracking.indices
    if not tracked and cfg.tracking.per_axis > 0:
        tracked = lattice_particles(e0, cfg.tracking.per_axis)
    tracked = np.asarray(tracked, dtype=int)
    if tracked.size and (tracked.min() < 0 or tracked.max() >= len(e0)):
        raise ConfigError(f"tracking.indices must lie in [0, {len(e0)})")
    log.info("simulating %s model, N=%d, dt=%g, t_end=%g", cfg.model.value, len(e0), cfg.step.dt, cfg.step.t_end)

    progress = None
    if progress_every:
        def progress(k, n):
            if k % progress_every == 0:
                log.info("step %d / %d", k, n)

    dcfg = cfg.diagnostics
    with open(os.path.join(out_dir, artifacts.CONFIG), "w") as fh:
        fh.write(emit_config(cfg))
    try:
        result = run(
            e0, cfg.step,
            measure=lambda e, table, clamps: measure(e, table, clamps, dcfg),
            tracked=tracked,
            snapshot_times=cfg.resolved_snapshot_times(),
            history_quantiles=cfg.history_quantiles,
            progress=progress,
        )
    except StepError as exc:
        log.error("run aborted: %s", exc)
        return 2

    columns = dcfg.columns()
    artifacts.write_csv(os.path.join(out_dir, artifacts.DIAGNOSTICS), columns, (r.row() for r in result.records))
    for t, snap in sorted(result.snapshots.items()):
        artifacts.write_snapshot(out_dir, t, snap)
    artifacts.write_trajectories(os.path.join(out_dir, artifacts.TRAJECTORIES), result.trajectories)
    result.history.save(os.path.join(out_dir, artifacts.HISTORY))
    table = {name: np.array([row[j] for row in (r.row() for r in result.records)], dtype=float)
             for j, name in enumerate(columns)}
    summary = summarize(cfg, e0, result, table)
    artifacts.write_json(os.path.join(out_dir, artifacts.SUMMARY), summary)
    failed = [k for k, v in summary["suites"].items() if v == "fail"]
    if failed:
        log.warning("failed suites: %s", ", ".join(failed))
    return 0


def _cmd_simulate(args):
    cfg = load_config(args.config)
    out = args.out or cfg.output
    return simulate(cfg, out, args.threads, progress_every=args.progress)


def _cmd_analyze(args):
    spec = load_analysis_spec(args.spec)
    report, code = analyze(args.run, spec)
    artifacts.write_json(os.path.join(args.run, artifacts.ASYMPTOTICS), report)
    if code:
        log.error("limiting-momentum estimators disagree beyond tolerance")
    return code


def _parse_state(text):
    try:
        r, w, ell = (float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"state must be r,w,ell (got {text!r})") from None
    return r, w, ell


def _num(x):
    x = float(x)
    return f"{0.0 if x == 0 else x:.15f}"


def oracle_free_stream(state, t, model):
    """Lines printed by ``oracle free-stream``."""
    r, w, ell = state
    if not r > 0:
        raise ValueError("state must have r > 0")
    if ell < 0:
        raise ValueError("state must have ell >= 0")
    if t < 0:
        raise ValueError("t must be nonnegative")
    model = ModelTag.coerce(model)
    p = RadialPoint(r, w, ell)
    if ell == 0 and w < 0:
        scale = 1.0 if model is ModelTag.CLASSICAL else 1.0 / math.sqrt(1.0 + w * w)
        if t * scale >= r / -w:
            raise ValueError(f"radial inbound state reaches r = 0 at t = {r / (-w * scale)!r}")
    q = free_stream_exact(p, t, model)
    w_inf = math.sqrt(w * w + ell / (r * r)) if (ell > 0 or w >= 0) else math.nan
    return [f"R={_num(q.r)}", f"W={_num(q.w)}", f"W_inf={_num(w_inf)}"]


def _cmd_oracle(args):
    try:
        lines = oracle_free_stream(args.state, args.t, args.model)
    except ValueError as exc:
        log.error("%s", exc)
        return 2
    print("\n".join(lines))
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="radialvp", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run a configured simulation and write its artifacts")
    p.add_argument("--config", required=True)
    p.add_argument("--out", default=None)
    p.add_argument("--threads", type=int, default=None)
    p.add_argument("--progress", type=int, default=0, help="log every N steps")
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("analyze", help="run the asymptotics suite on a run directory")
    p.add_argument("--run", required=True)
    p.add_argument("--spec", default=None)
    p.set_defaults(func=_cmd_analyze)

    p = sub.add_parser("oracle", help="closed-form reference values")
    osub = p.add_subparsers(dest="oracle", required=True)
    fs = osub.add_parser("free-stream", help="field-free characteristic")
    fs.add_argument("--model", choices=[m.value for m in ModelTag], default="classical")
    fs.add_argument("--state", type=_parse_state, required=True)
    fs.add_argument("--t", type=float, required=True)
    fs.set_defaults(func=_cmd_oracle)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except (ConfigError, artifacts.ArtifactError) as exc:
        log.error("%s", exc)
        return 2


if __name__ == "__main__":
    sys.exit(main())
