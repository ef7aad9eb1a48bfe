"""Command-line entry point: `coopforecast <command> ...`.

Exit codes: 0 success, 2 input error, 3 invariant or acceptance failure,
4 numeric failure. Every run writes a JSON manifest (also on failure) that
records the full argument vector; `coopforecast replay MANIFEST` re-runs it.
The COOPFORECAST_THREADS environment variable caps BLAS threads.
"""
import argparse
import hashlib
import io
import json
import logging
import os
import sys
import time

import numpy as np

from coopforecast import __version__
from coopforecast.data import atomic_write_text, concat, load_cache, load_raw, save_cache, window
from coopforecast.errors import CoopForecastError, InputError, InvariantError, ParseError, StageError
from coopforecast.forecaster import checkpoint
from coopforecast.forecaster.inference import DEFAULT_PASSES, mc_dropout_infer
from coopforecast.forecaster.synthetic import synthetic_dataset
from coopforecast.forecaster.train import TrainConfig, train
from coopforecast.scenarios import (
    CONTAINMENT_POLICY,
    DEFAULT_SIGMAS,
    PoseSettings,
    SensitivityConfig,
    calibrated_walk,
    estimate_pose,
    pose_error,
    run_cooperative,
    run_occlusion_suite,
    run_sensitivity,
    default_walks,
)
from coopforecast.scene import (
    CameraRig,
    reference_estimated_pose,
    reference_rig,
    read_walk_csv,
    synth_walk,
)

log = logging.getLogger("coopforecast")
THREADS_ENV = "COOPFORECAST_THREADS"


def sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            h.update(block)
    return h.hexdigest()


class Run:
    """Collects what the manifest needs while a command executes."""

    def __init__(self, argv, args):
        self.argv = list(argv)
        self.args = args
        self.inputs = {}
        self.outputs = []
        self.seeds = {}
        self.result = {}

    def read(self, path):
        if not os.path.isfile(path):
            raise ParseError("file does not exist", path=path)
        self.inputs[path] = sha256_file(path)
        return path

    def wrote(self, paths):
        self.outputs.extend(paths if isinstance(paths, list) else [paths])

    def check_not_input(self, path):
        if os.path.abspath(path) in {os.path.abspath(p) for p in self.inputs}:
            raise InputError(f"refusing to overwrite input {path}")


def manifest_path(args):
    out = args.out
    if args.command in ("prepare", "synth-data", "train", "forecast"):
        return out + ".manifest.json"
    return os.path.join(out, "manifest.json")


def write_manifest(run, status, code, message, elapsed_ms):
    config = {k: v for k, v in vars(run.args).items() if k != "func"}
    doc = {
        "command": run.args.command,
        "argv": run.argv,
        "config": config,
        "seeds": run.seeds,
        "version": __version__,
        "inputs": run.inputs,
        "outputs": {p: sha256_file(p) for p in run.outputs if os.path.isfile(p)},
        "status": status,
        "exit_code": code,
        "message": message,
        "result": run.result,
        "wall_clock_ms": elapsed_ms,
    }
    path = manifest_path(run.args)
    atomic_write_text(path, json.dumps(doc, indent=2, sort_keys=True, default=str) + "\n")
    return path


# commands ----------------------------------------------------------------------


def cmd_prepare(run, a):
    parts = [window(load_raw(run.read(p), tuple(a.columns)), a.dt, a.past, a.future, a.stride, a.fps,
                    source=os.path.basename(p)) for p in a.input]
    ds = concat(parts, source="+".join(os.path.basename(p) for p in a.input))
    if len(ds) == 0:
        raise InputError("no track is long enough for one window")
    run.check_not_input(a.out)
    save_cache(ds, a.out)
    run.wrote(a.out)
    run.result = {"windows": len(ds), "skipped_tracks": ds.skipped}


def cmd_synth_data(run, a):
    run.seeds["data"] = a.seed
    ds = synthetic_dataset(a.walks, seed=a.seed)
    save_cache(ds, a.out)
    run.wrote(a.out)
    run.result = {"windows": len(ds)}


def cmd_train(run, a):
    ds = load_cache(run.read(a.cache))
    run.check_not_input(a.out)
    run.seeds["train"] = a.seed
    cfg = TrainConfig(a.epochs, a.batch, a.lr, a.hidden, a.dropout, a.features, a.seed,
                      teacher_forcing=a.teacher_forcing)
    res = train(ds, cfg)
    checkpoint.save(res.params, a.out)
    run.wrote(a.out)
    trace = a.out + ".loss.csv"
    lines = ["epoch,loss", f"0,{float(res.initial_loss)!r}"]
    lines += [f"{i + 1},{float(v)!r}" for i, v in enumerate(res.loss_trace)]
    atomic_write_text(trace, "\n".join(lines) + "\n")
    run.wrote(trace)
    run.result = {"initial_loss": res.initial_loss,
                  "final_loss": float(res.loss_trace[-1]) if len(res.loss_trace) else res.initial_loss}


def _rig(run, a):
    if a.rig is None:
        return reference_rig()
    with open(run.read(a.rig), encoding="utf-8") as fh:
        try:
            return CameraRig.from_dict(json.load(fh))
        except json.JSONDecodeError as exc:
            raise InputError(f"{a.rig}: invalid JSON: {exc}") from exc


def _settings(a):
    return PoseSettings(a.pixel_noise, a.outliers, a.points, a.threshold, a.iterations)


def cmd_pose(run, a):
    rig = _rig(run, a)
    run.seeds["master"] = a.seed
    pose, ms, mask = estimate_pose(rig, a.seed, _settings(a))
    err = pose_error(pose, rig.pose)
    tp = int((mask & ms.inlier).sum())
    report = {
        "ground_truth": {"euler_deg": err["euler_true_deg"], "t": rig.pose.t.tolist()},
        "estimate": {"euler_deg": err["euler_est_deg"], "t": pose.t.tolist(), "R": pose.R.tolist()},
        "error": err,
        "matches": {"total": len(ms.matches), "true_inliers": int(ms.inlier.sum()),
                    "ransac_inliers": int(mask.sum()), "true_positive": tp,
                    "skipped_points": ms.skipped},
    }
    os.makedirs(a.out, exist_ok=True)
    paths = [os.path.join(a.out, "pose.json"), os.path.join(a.out, "report.json"),
             os.path.join(a.out, "orientation.csv")]
    atomic_write_text(paths[0], pose.to_json() + "\n")
    atomic_write_text(paths[1], json.dumps(report, indent=2, sort_keys=True) + "\n")
    rows = ["quantity,roll_deg,pitch_deg,yaw_deg"]
    for name, e in (("ground_truth", err["euler_true_deg"]), ("estimate", err["euler_est_deg"]),
                    ("abs_error", err["euler_error_deg"])):
        rows.append(name + "," + ",".join(format(v, ".12g") for v in e))
    atomic_write_text(paths[2], "\n".join(rows) + "\n")
    run.wrote(paths)
    run.result = {"rotation_error_deg": err["rotation_error_deg"], "ransac_inliers": int(mask.sum())}


def cmd_sweep(run, a):
    rig = _rig(run, a)
    if a.nominal == "published":
        nominal = reference_estimated_pose()
    elif a.nominal == "truth":
        nominal = rig.pose
    else:
        nominal, _, _ = estimate_pose(rig, a.seed, _settings(a))
    if a.nominal == "truth" or a.target_ade <= 0:
        walk = synth_walk("straight", rng_seed=a.seed)
    else:
        walk = calibrated_walk(rig, nominal, a.target_ade)
    cfg = SensitivityConfig(tuple(s / 100.0 for s in a.sigmas), a.samples, a.seed,
                            perturb_translation=not a.no_translation)
    run.seeds["noise"] = a.seed
    res = run_sensitivity(cfg, rig, walk, nominal)
    os.makedirs(a.out, exist_ok=True)
    p1, p2 = os.path.join(a.out, "sensitivity.csv"), os.path.join(a.out, "sensitivity_samples.csv")
    atomic_write_text(p1, res.table().to_csv())
    atomic_write_text(p2, res.samples_table().to_csv())
    run.wrote([p1, p2])
    monotone = res.monotone_within_pooled_std()
    run.result = {"baseline_ade": res.baseline_ade, "means": res.means.tolist(),
                  "stds": res.stds.tolist(), "monotone": monotone, "walk_depth_m": float(walk.start[2])}
    if not monotone:
        raise StageError("sensitivity", InvariantError("mean ADE is not monotone within pooled std"))


def _model(run, a):
    return checkpoint.load(run.read(a.model))


def cmd_occlusion(run, a):
    params = _model(run, a)
    rig = _rig(run, a)
    run.seeds["master"] = a.seed
    walks = default_walks(tuple(range(a.walk_seed, a.walk_seed + a.walks)))
    agg, reports = run_occlusion_suite(a.kind, rig, params, walks, a.passes, a.seed,
                                       settings=_settings(a), use_ego_track=a.ego_track)
    os.makedirs(a.out, exist_ok=True)
    run.wrote(agg.write(a.out, prefix=f"{a.kind}_"))
    for i, r in enumerate(reports):
        run.wrote(r.write(a.out, prefix=f"{a.kind}_walk{i}_"))
    run.result = {k: agg.summary[k] for k in ("containment", "contained", "evaluated", "passed")}
    if not agg.summary["passed"]:
        raise StageError("containment", InvariantError(
            f"{agg.summary['containment']:.3f} of forecast steps inside the bound "
            f"(policy {CONTAINMENT_POLICY})"))


def cmd_cooperative(run, a):
    params = _model(run, a)
    rig = _rig(run, a)
    run.seeds["master"] = a.seed
    walk = synth_walk(a.walk_kind, rng_seed=a.walk_seed)
    rep = run_cooperative(rig, walk, params, a.passes, a.seed, settings=_settings(a))
    os.makedirs(a.out, exist_ok=True)
    run.wrote(rep.write(a.out))
    run.result = {"transfer_ade": rep.ade["transfer"]["mean"],
                  "kl_nats": rep.divergence.kl.tolist()}


def cmd_forecast(run, a):
    params = _model(run, a)
    _, xyz, vel, _ = read_walk_csv(run.read(a.input))
    past = np.column_stack([xyz[:, 0], xyz[:, 2], vel])[: params.past]
    if len(past) < params.past:
        raise InputError(f"{a.input}: need {params.past} samples, got {len(past)}")
    run.seeds["dropout"] = a.seed
    f = mc_dropout_infer(params, past, a.passes, a.seed)
    run.check_not_input(a.out)
    buf = io.StringIO()
    f.write_csv(buf)
    atomic_write_text(a.out, buf.getvalue())
    run.wrote(a.out)


def cmd_replay(run, a):
    with open(run.read(a.manifest), encoding="utf-8") as fh:
        doc = json.load(fh)
    argv = doc.get("argv")
    if not argv or argv[0] == "replay":
        raise InputError("manifest has no replayable command")
    return main(argv)


# parser --------------------------------------------------------------------------


def _pose_flags(p):
    p.add_argument("--rig", help="rig JSON (default: the reference camera pair)")
    p.add_argument("--pixel-noise", type=float, default=0.5)
    p.add_argument("--outliers", type=float, default=0.2)
    p.add_argument("--points", type=int, default=200)
    p.add_argument("--threshold", type=float, default=1.0, help="Sampson inlier threshold (px)")
    p.add_argument("--iterations", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)


def build_parser():
    ap = argparse.ArgumentParser(prog="coopforecast", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", help="window ETH/UCY files into a cache")
    p.add_argument("--input", nargs="+", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--dt", type=float, default=0.4)
    p.add_argument("--past", type=int, default=8)
    p.add_argument("--future", type=int, default=12)
    p.add_argument("--stride", type=int, default=1)
    p.add_argument("--fps", type=float, default=25.0)
    p.add_argument("--columns", type=int, nargs=4, default=[0, 1, 2, 3],
                   metavar=("FRAME", "ID", "X", "Y"))
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("synth-data", help="synthetic training windows")
    p.add_argument("--out", required=True)
    p.add_argument("--walks", type=int, default=600)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth_data)

    p = sub.add_parser("train", help="train the forecaster")
    p.add_argument("--cache", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int, default=150)
    p.add_argument("--batch", type=int, default=32)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--hidden", type=int, default=32)
    p.add_argument("--dropout", type=float, default=0.1)
    p.add_argument("--features", type=int, choices=(2, 4), default=4)
    p.add_argument("--teacher-forcing", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("pose", help="recover the relative pose on synthetic matches")
    _pose_flags(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_pose)

    p = sub.add_parser("sweep", help="pose-noise sensitivity sweep")
    _pose_flags(p)
    p.add_argument("--nominal", choices=("published", "truth", "estimated"), default="published")
    p.add_argument("--sigmas", type=float, nargs="+", default=[100 * s for s in DEFAULT_SIGMAS],
                   help="noise levels in percent of the nominal values")
    p.add_argument("--samples", type=int, default=20)
    p.add_argument("--no-translation", action="store_true")
    p.add_argument("--target-ade", type=float, default=0.2)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sweep)

    for name, func, helptext in (("occlusion", cmd_occlusion, "occlusion containment study"),
                                 ("cooperative", cmd_cooperative, "pose + transfer + forecast")):
        p = sub.add_parser(name, help=helptext)
        _pose_flags(p)
        p.add_argument("--model", required=True)
        p.add_argument("--passes", type=int, default=DEFAULT_PASSES)
        p.add_argument("--walk-seed", type=int, default=0)
        p.add_argument("--out", required=True)
        if name == "occlusion":
            p.add_argument("--kind", choices=("intermittent", "partial", "none"), required=True)
            p.add_argument("--walks", type=int, default=5)
            p.add_argument("--ego-track", action="store_true")
        else:
            p.add_argument("--walk-kind", choices=("straight", "turn", "s-curve"), default="straight")
        p.set_defaults(func=func)

    p = sub.add_parser("forecast", help="MC-dropout forecast from a walk CSV")
    p.add_argument("--model", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--passes", type=int, default=DEFAULT_PASSES)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_forecast)

    p = sub.add_parser("replay", help="re-run a command from its manifest")
    p.add_argument("manifest")
    p.set_defaults(func=cmd_replay)
    return ap


def _limit_threads():
    n = os.environ.get(THREADS_ENV)
    if not n:
        return None
    from threadpoolctl import threadpool_limits

    return threadpool_limits(int(n))


def main(argv=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    limiter = _limit_threads()
    run = Run(argv, args)
    t0 = time.perf_counter()
    code, status, message = 0, "ok", ""
    try:
        ret = args.func(run, args)
        if args.command == "replay":
            return ret
    except CoopForecastError as exc:
        code, status, message = exc.exit_code, "error", str(exc)
        if isinstance(exc, StageError):
            message = f"stage {exc.stage}: {exc.cause}"
        print(f"coopforecast {args.command}: {type(exc).__name__}: {message}", file=sys.stderr)
    except Exception as exc:  # a bug, not a user error: still leave a manifest behind
        code, status, message = 1, "crash", f"{type(exc).__name__}: {exc}"
        log.exception("unexpected failure")
    finally:
        if limiter is not None:
            limiter.restore_original_limits()
    if args.command != "replay":
        try:
            write_manifest(run, status, code, message, 1e3 * (time.perf_counter() - t0))
        except OSError as exc:
            print(f"coopforecast: could not write manifest: {exc}", file=sys.stderr)
            code = code or 2
    return code


if __name__ == "__main__":
    sys.exit(main())
