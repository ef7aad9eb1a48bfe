"""End-to-end experiments: cooperative transfer, reliability, pose-noise
sensitivity and occlusion forecasting.

Every run is a pure function of its inputs and integer seed. Sub-streams for
the point cloud, pixel noise, RANSAC and dropout masks are spawned from that
seed, so changing one stage's consumption never shifts another's draws.

Frames: camera 1 ("other") sees the pedestrian, camera 2 is the ego. The
forecaster works on planar states (x, z, vx, vz) of a camera frame.
"""
import contextlib
import csv
import io
import json
import math
import os
import time
from dataclasses import dataclass, field

import numpy as np

from coopforecast.data import atomic_write_text
from coopforecast.errors import CoopForecastError, InputError, StageError
from coopforecast.forecaster.inference import mc_dropout_infer
from coopforecast.geometry import recover_pose
from coopforecast.geometry.pose import EGO, OTHER, PointSet, RelativePose, transform_to_ego, transform_velocity
from coopforecast.geometry.rotation import euler_error_deg, euler_to_rotation, rotation_angle_deg, rotation_to_euler
from coopforecast.metrics import CHI2_1SIGMA, CHI2_2SIGMA, ade, divergence_trace
from coopforecast.scene import (
    FUTURE,
    PAST,
    Observation,
    make_cloud,
    observe,
    project_points,
    synth_walk,
    with_occlusion,
)

DEFAULT_SIGMAS = (0.01, 0.02, 0.05, 0.10, 0.20, 0.30, 0.40, 0.50)
DEFAULT_WALK_SEEDS = (0, 1, 2, 3, 4)
CONTAINMENT_CUTOFF = {"intermittent": CHI2_2SIGMA, "partial": CHI2_1SIGMA, "none": CHI2_2SIGMA}
CONTAINMENT_POLICY = 0.75


# reports ---------------------------------------------------------------------


def stats(values):
    v = np.asarray(values, dtype=float).ravel()
    return {"mean": float(v.mean()), "std": float(v.std()), "n": int(v.size)}


def _fmt(v):
    if isinstance(v, str):
        return v
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return format(float(v), ".12g")


@dataclass
class Table:
    header: list
    rows: list

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.header)
        for r in self.rows:
            w.writerow([_fmt(v) for v in r])
        return buf.getvalue()


@dataclass
class ScenarioReport:
    name: str
    ade: dict = field(default_factory=dict)
    pose_error: dict = field(default_factory=dict)
    divergence: object = None
    summary: dict = field(default_factory=dict)
    tables: dict = field(default_factory=dict)
    runtime_ms: float = 0.0

    def to_dict(self, include_runtime=True):
        d = {"name": self.name, "ade": self.ade, "pose_error": self.pose_error, "summary": self.summary}
        if self.divergence is not None:
            d["divergence"] = {
                "kl_nats": self.divergence.kl.tolist(),
                "entropy_nats": self.divergence.entropy.tolist(),
                "regularized": [bool(f) for f in self.divergence.regularized],
            }
        if include_runtime:
            d["runtime_ms"] = self.runtime_ms
        return d

    def to_json(self, include_runtime=True):
        return json.dumps(_jsonable(self.to_dict(include_runtime)), indent=2, sort_keys=True)

    def write(self, outdir, prefix=""):
        """Write report.json plus one CSV per table; returns the paths written.

        CSVs carry no timing, so identical seeds give byte-identical files.
        """
        paths = []
        for name, table in sorted(self.tables.items()):
            p = os.path.join(outdir, f"{prefix}{name}.csv")
            atomic_write_text(p, table.to_csv())
            paths.append(p)
        p = os.path.join(outdir, f"{prefix}report.json")
        atomic_write_text(p, self.to_json() + "\n")
        paths.append(p)
        return paths


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (np.bool_, bool)):
        return bool(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        return float(x) if math.isfinite(x) else None
    return x


@contextlib.contextmanager
def stage(name):
    """Tag any library or linear-algebra failure with the pipeline stage."""
    try:
        yield
    except StageError:
        raise
    except (CoopForecastError, np.linalg.LinAlgError) as exc:
        raise StageError(name, exc) from exc


def substreams(seed):
    """Named integer seeds derived from one master seed."""
    names = ("cloud", "pixels", "ransac", "dropout", "noise")
    states = np.random.SeedSequence(seed).generate_state(len(names))
    return dict(zip(names, (int(s) for s in states)))


# stages ----------------------------------------------------------------------


@dataclass(frozen=True)
class PoseSettings:
    sigma_px: float = 0.5
    outlier_fraction: float = 0.2
    n_points: int = 200
    threshold: float = 1.0
    iterations: int = 1000
    confidence: float = 0.99


def estimate_pose(rig, seed=0, settings=PoseSettings()):
    """Synthesize matches on `rig` and recover the metric relative pose.

    Returns (pose, match set, inlier mask).
    """
    s = substreams(seed)
    with stage("matching"):
        cloud = make_cloud(rig, settings.n_points, s["cloud"])
        ms = project_points(rig, cloud, settings.sigma_px, settings.outlier_fraction, s["pixels"])
    with stage("pose"):
        pose, mask = recover_pose(ms.matches, rig.K1, rig.K2, rig.baseline,
                                  iterations=settings.iterations, confidence=settings.confidence,
                                  threshold=settings.threshold, rng_seed=s["ransac"])
    return pose, ms, mask


def pose_error(estimate, truth):
    e_est = rotation_to_euler(estimate.R).as_array()
    e_true = rotation_to_euler(truth.R).as_array()
    return {
        "euler_true_deg": e_true.tolist(),
        "euler_est_deg": e_est.tolist(),
        "euler_error_deg": np.abs((e_est - e_true + 180.0) % 360.0 - 180.0).tolist(),
        "max_euler_error_deg": euler_error_deg(e_est, e_true),
        "rotation_error_deg": rotation_angle_deg(estimate.R, truth.R),
        "t_hat_error": float(np.linalg.norm(estimate.t_hat - truth.t_hat)),
        "translation_error_m": float(np.linalg.norm(estimate.t - truth.t)),
    }


def transfer(obs1, pose):
    """Camera-1 observation expressed in camera 2 through `pose`."""
    xyz = transform_to_ego(PointSet(obs1.xyz, OTHER), pose).xyz
    return Observation(obs1.times, xyz, transform_velocity(obs1.velocity, pose), obs1.missing, EGO)


def _check_walk(walk):
    if len(walk.times) < PAST + FUTURE:
        raise InputError(f"walk has {len(walk.times)} samples; {PAST + FUTURE} needed")


def _forecast_rows(times, truth, f):
    rows = []
    for k in range(len(f.means)):
        m, c = f.means[k], f.covs[k]
        rows.append([k + 1, times[k], truth[k, 0], truth[k, 1], m[0], m[1], c[0, 0], c[0, 1], c[1, 1]])
    return rows


FORECAST_HEADER = ["step", "t", "truth_x", "truth_y", "mu_x", "mu_y", "s_xx", "s_xy", "s_yy"]


def _trajectory_table(times, truth2, obs1, moved, occluded):
    rows = [
        [t, g[0], g[2], a[0], a[2], m[0], m[2], int(o)]
        for t, g, a, m, o in zip(times, truth2, obs1, moved, occluded)
    ]
    return Table(["t", "cam2_x", "cam2_z", "cam1_x", "cam1_z", "transferred_x", "transferred_z",
                  "occluded_cam2"], rows)


# scenarios -------------------------------------------------------------------


def run_cooperative(rig, walk, params, n_passes=50, seed=0, *, settings=PoseSettings(),
                    pose=None, _name="cooperative"):
    """POSE then PREDICTION for one walk.

    q is forecast from the transferred camera-1 past, p from camera 2's own
    (unoccluded) past; both use the same dropout masks so their difference
    reflects the inputs only. Passing `pose` skips estimation.
    """
    t0 = time.perf_counter()
    _check_walk(walk)
    s = substreams(seed)
    summary = {}
    if pose is None:
        pose, ms, mask = estimate_pose(rig, seed, settings)
        summary.update(matches=len(ms.matches), true_inliers=int(ms.inlier.sum()),
                       ransac_inliers=int(mask.sum()),
                       inlier_recall=float((mask & ms.inlier).sum() / max(ms.inlier.sum(), 1)),
                       skipped_points=ms.skipped)
    else:
        summary["pose_source"] = "given"
    with stage("transfer"):
        obs1 = observe(walk, rig, 1)
        obs2 = observe(walk, rig, 2)
        moved = transfer(obs1, pose)
        transfer_ade = ade(moved.xyz, obs2.xyz)
    with stage("prediction"):
        native = obs2.planar()
        coop = moved.planar()
        truth = native[PAST : PAST + FUTURE, :2]
        p = mc_dropout_infer(params, native[:PAST], n_passes, s["dropout"])
        q = mc_dropout_infer(params, coop[:PAST], n_passes, s["dropout"])
    with stage("metrics"):
        trace = divergence_trace(p, q)
        fut_t = walk.times[PAST : PAST + FUTURE]
        report = ScenarioReport(
            _name,
            ade={
                "transfer": stats([transfer_ade]),
                "forecast_transferred": stats([ade(q.means, truth)]),
                "forecast_native": stats([ade(p.means, truth)]),
            },
            pose_error=pose_error(pose, rig.pose),
            divergence=trace,
            summary={**summary, "n_passes": n_passes, "seed": seed, "walk": walk.kind,
                     "pose_estimate": pose.to_dict()},
            tables={
                "trajectory": _trajectory_table(walk.times, obs2.xyz, obs1.xyz, moved.xyz,
                                                walk.occluded[:, 1]),
                "forecast_native": Table(FORECAST_HEADER, _forecast_rows(fut_t, truth, p)),
                "forecast_transferred": Table(FORECAST_HEADER, _forecast_rows(fut_t, truth, q)),
                "divergence": Table(["step", "kl_nats", "entropy_nats", "ratio"], list(trace.rows())),
            },
        )
    report.runtime_ms = 1e3 * (time.perf_counter() - t0)
    report._forecasts = (p, q)
    report._pose = pose
    return report


def run_occlusion(kind, rig, walk, params, n_passes=50, seed=0, *, settings=PoseSettings(),
                  pose=None, use_ego_track=False):
    """Forecast an occluded pedestrian and test ground-truth containment.

    Camera 2 loses the pedestrian where the `kind` mask is set; those samples
    of its track are filled with transferred camera-1 samples. By default the
    forecast input is the transferred camera-1 past (camera 1 sees the whole
    walk), which makes an empty mask reproduce `run_cooperative` exactly;
    `use_ego_track` feeds the gap-filled camera-2 track instead.

    Containment: every forecast step is one the ego cannot observe, and the
    camera-2 ground truth there must satisfy d^2 <= 6.18 (2 sigma,
    intermittent) or 2.30 (1 sigma, partial) under the forecast Gaussian.
    """
    walk = with_occlusion(walk, kind)
    t0 = time.perf_counter()
    base = run_cooperative(rig, walk, params, n_passes, seed, settings=settings, pose=pose,
                           _name=f"occlusion:{kind}")
    with stage("transfer"):
        obs2 = observe(walk, rig, 2)
        moved = transfer(observe(walk, rig, 1), base._pose)
        masked = obs2.missing
        ego_xyz = np.where(masked[:, None], moved.xyz, obs2.xyz)
        ego_vel = np.where(masked[:, None], moved.velocity, obs2.velocity)
        ego = Observation(walk.times, ego_xyz, ego_vel, np.zeros_like(masked), EGO)
    p, q = base._forecasts
    with stage("prediction"):
        if use_ego_track:
            q = mc_dropout_infer(params, ego.planar()[:PAST], n_passes, substreams(seed)["dropout"])
        truth = obs2.planar()[PAST : PAST + FUTURE, :2]
        d2 = np.array([
            float((truth[k] - q.means[k]) @ np.linalg.solve(q.covs[k], truth[k] - q.means[k]))
            for k in range(len(truth))
        ])
    cutoff = CONTAINMENT_CUTOFF[kind]
    inside = d2 <= cutoff
    visible = ~masked
    fill_ade = ade(moved.xyz[masked], obs2.xyz[masked]) if masked.any() else 0.0
    suffix_ade = ade(moved.xyz[visible], obs2.xyz[visible]) if visible.any() else 0.0
    base.ade["fill"] = stats([fill_ade])
    base.ade["visible_suffix"] = stats([suffix_ade])
    if use_ego_track:
        base.ade["forecast_ego_track"] = stats([ade(q.means, truth)])
        base.divergence = divergence_trace(p, q)
        base.tables["divergence"] = Table(["step", "kl_nats", "entropy_nats", "ratio"],
                                          list(base.divergence.rows()))
    base.summary.update(
        occlusion=kind,
        masked_samples=int(masked.sum()),
        chi2_cutoff=cutoff,
        contained=int(inside.sum()),
        evaluated=int(len(inside)),
        containment=float(inside.mean()),
        input="ego_track" if use_ego_track else "transferred",
    )
    fut_t = walk.times[PAST : PAST + FUTURE]
    base.tables["containment"] = Table(
        FORECAST_HEADER + ["mahalanobis_sq", "inside"],
        [r + [d, bool(i)] for r, d, i in zip(_forecast_rows(fut_t, truth, q), d2, inside)],
    )
    base.tables["ego_track"] = Table(
        ["t", "x", "z", "u", "v", "filled", "truth_x", "truth_z"],
        [[t, e[0], e[1], e[2], e[3], bool(m), g[0], g[2]]
         for t, e, m, g in zip(walk.times, ego.planar(), masked, obs2.xyz)],
    )
    base.runtime_ms += 1e3 * (time.perf_counter() - t0)
    base._forecasts = (p, q)
    return base


def default_walks(seeds=DEFAULT_WALK_SEEDS, kinds=("straight", "turn", "s-curve")):
    """The default evaluation walks: seed i uses kind i mod 3."""
    return [synth_walk(kinds[i % len(kinds)], rng_seed=s) for i, s in enumerate(seeds)]


def run_occlusion_suite(kind, rig, params, walks=None, n_passes=50, seed=0, **kw):
    """run_occlusion over several walks; pooled containment over all steps."""
    walks = default_walks() if walks is None else walks
    reports = [run_occlusion(kind, rig, w, params, n_passes, seed + i, **kw) for i, w in enumerate(walks)]
    contained = sum(r.summary["contained"] for r in reports)
    evaluated = sum(r.summary["evaluated"] for r in reports)
    agg = ScenarioReport(
        f"occlusion-suite:{kind}",
        ade={k: stats([r.ade[k]["mean"] for r in reports]) for k in reports[0].ade},
        summary={
            "walks": len(reports),
            "contained": contained,
            "evaluated": evaluated,
            "containment": contained / evaluated,
            "policy": CONTAINMENT_POLICY,
            "passed": contained / evaluated >= CONTAINMENT_POLICY,
            "per_walk": [r.summary["containment"] for r in reports],
        },
        tables={
            "suite": Table(["walk", "kind", "contained", "evaluated", "fill_ade", "forecast_ade"],
                           [[i, w.kind, r.summary["contained"], r.summary["evaluated"],
                             r.ade["fill"]["mean"], r.ade["forecast_transferred"]["mean"]]
                            for i, (w, r) in enumerate(zip(walks, reports))]),
        },
        runtime_ms=sum(r.runtime_ms for r in reports),
    )
    return agg, reports


def run_reliability(rig, walks=None, seed=0, settings=PoseSettings()):
    """Transfer accuracy over several walks with one estimated pose."""
    t0 = time.perf_counter()
    walks = default_walks() if walks is None else walks
    pose, ms, mask = estimate_pose(rig, seed, settings)
    rows, ades, worst = [], [], []
    with stage("transfer"):
        for i, w in enumerate(walks):
            obs1, obs2 = observe(w, rig, 1), observe(w, rig, 2)
            moved = transfer(obs1, pose)
            err = np.linalg.norm(moved.xyz - obs2.xyz, axis=1)
            ades.append(float(err.mean()))
            worst.append(float(err.max()))
            rows.extend([i, t, g[0], g[2], m[0], m[2], e] for t, g, m, e in zip(w.times, obs2.xyz, moved.xyz, err))
    return ScenarioReport(
        "reliability",
        ade={"transfer": stats(ades)},
        pose_error=pose_error(pose, rig.pose),
        summary={"max_error_m": max(worst), "per_walk_ade": ades, "within_1m": max(worst) <= 1.0,
                 "ransac_inliers": int(mask.sum()), "matches": len(ms.matches)},
        tables={"reliability": Table(["walk", "t", "cam2_x", "cam2_z", "transferred_x", "transferred_z",
                                      "error_m"], rows)},
        runtime_ms=1e3 * (time.perf_counter() - t0),
    )


# sensitivity -----------------------------------------------------------------


@dataclass(frozen=True)
class SensitivityConfig:
    """Noise levels are fractions of each nominal Euler angle (and translation
    component): angle' = angle + N(0, (sigma |angle|)^2)."""

    sigmas: tuple = DEFAULT_SIGMAS
    samples: int = 20
    seed: int = 0
    perturb_rotation: bool = True
    perturb_translation: bool = True

    def __post_init__(self):
        s = np.asarray(self.sigmas, dtype=float)
        if s.size == 0 or np.any(s < 0) or np.any(np.diff(s) <= 0):
            raise InputError("sigmas must be non-negative and strictly ascending")
        if self.samples < 2:
            raise InputError("need at least 2 samples per sigma")


@dataclass
class SensitivityResult:
    sigmas: np.ndarray
    ade: np.ndarray  # (n_sigma, samples)
    baseline_ade: float

    @property
    def means(self):
        return self.ade.mean(axis=1)

    @property
    def stds(self):
        # shift by the first sample so identical rows give exactly zero
        return (self.ade - self.ade[:, :1]).std(axis=1, ddof=1)

    def monotone_within_pooled_std(self):
        m, s = self.means, self.stds
        for i in range(len(m)):
            for j in range(i + 1, len(m)):
                if m[i] > m[j] + math.sqrt(0.5 * (s[i] ** 2 + s[j] ** 2)):
                    return False
        return True

    def table(self):
        return Table(["sigma_pct", "ade_mean", "ade_std", "samples"],
                     [[100 * s, m, d, self.ade.shape[1]] for s, m, d in zip(self.sigmas, self.means, self.stds)])

    def samples_table(self):
        rows = [[100 * s, k, v] for s, row in zip(self.sigmas, self.ade) for k, v in enumerate(row)]
        return Table(["sigma_pct", "sample", "ade"], rows)


def perturbed_pose(nominal, sigma, rng, rotation=True, translation=True):
    if sigma == 0:
        return nominal  # skip the Euler round trip so the baseline is reproduced bit for bit
    e = rotation_to_euler(nominal.R).as_array()
    t = nominal.t
    if rotation:
        e = e + rng.normal(0.0, 1.0, 3) * sigma * np.abs(e)
    if translation:
        t = t + rng.normal(0.0, 1.0, 3) * sigma * np.abs(t)
    return RelativePose.from_translation(euler_to_rotation(e), t)


def run_sensitivity(cfg, rig, walk, nominal=None):
    """ADE of the transferred walk under Euler/translation noise per sigma.

    `nominal` is the pose being perturbed (default: the rig's true pose).
    Each sigma has its own stream, seeded by (cfg.seed, index), so adding
    a grid point does not change the others.
    """
    nominal = rig.pose if nominal is None else nominal
    obs1, obs2 = observe(walk, rig, 1), observe(walk, rig, 2)
    baseline = ade(transfer(obs1, nominal).xyz, obs2.xyz)
    out = np.empty((len(cfg.sigmas), cfg.samples))
    for i, sigma in enumerate(cfg.sigmas):
        rng = np.random.default_rng([cfg.seed, i])
        for k in range(cfg.samples):
            pose = perturbed_pose(nominal, sigma, rng, cfg.perturb_rotation, cfg.perturb_translation)
            out[i, k] = ade(transfer(obs1, pose).xyz, obs2.xyz)
    return SensitivityResult(np.asarray(cfg.sigmas, dtype=float), out, baseline)


def calibrated_walk(rig, nominal, target_ade=0.2, kind="straight", rng_seed=0, lo=0.5, hi=40.0):
    """Straight walk across camera 1's view whose depth is tuned by bisection
    so that transferring it with `nominal` costs `target_ade` meters."""

    def make(depth):
        return synth_walk(kind, rng_seed=rng_seed, start=(-4.8, 0.0, depth), heading_deg=0.0)

    def err(depth):
        w = make(depth)
        return ade(transfer(observe(w, rig, 1), nominal).xyz, observe(w, rig, 2).xyz) - target_ade

    if err(lo) > 0 or err(hi) < 0:
        raise InputError("target ADE not reachable within the depth bracket")
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        lo, hi = (mid, hi) if err(mid) < 0 else (lo, mid)
    return make(0.5 * (lo + hi))
