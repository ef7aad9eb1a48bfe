"""Synthetic two-camera world: rigs, labeled matches and pedestrian walks.

The world frame follows the optical convention of a level camera (x right,
y down, z forward). Pedestrians walk on a horizontal plane y = const, so the
planar state of a trajectory in any frame is (x, z) for position and the
matching velocity components.
"""
import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np

from coopforecast.errors import EmptyScene, InputError
from coopforecast.geometry.epipolar import CameraIntrinsics, Correspondences
from coopforecast.geometry.pose import EGO, OTHER, RelativePose
from coopforecast.geometry.rotation import euler_to_rotation, nearest_rotation

DEFAULT_K = CameraIntrinsics(600.0, 600.0, 320.0, 240.0)
DEFAULT_IMAGE_SIZE = (640, 480)

# published relative orientation and translation of the reference camera pair
REFERENCE_TRUTH_EULER = (1.31, -1.767, 19.12)
REFERENCE_ESTIMATE_EULER = (1.44, -3.018, 21.878)
REFERENCE_R = np.array(
    [[0.927, -0.0447, 0.370], [0.0233, 0.997, 0.062], [-0.372, -0.048, 0.926]]
)
REFERENCE_T = np.array([1.163, 0.066, 0.040])

DT = 0.4
PAST, FUTURE = 8, 12
WALK_KINDS = ("straight", "turn", "s-curve")
OCCLUSION_KINDS = ("none", "intermittent", "partial")


@dataclass(frozen=True)
class CameraRig:
    K1: CameraIntrinsics
    K2: CameraIntrinsics
    pose: RelativePose
    image_size: tuple = DEFAULT_IMAGE_SIZE
    cam1_R: np.ndarray = field(default_factory=lambda: np.eye(3))
    cam1_position: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        w, h = self.image_size
        if not (w > 0 and h > 0):
            raise InputError("image size must be positive")
        if self.pose.scale is None:
            raise InputError("rig pose needs a metric scale")

    def camera(self, which):
        """World rotation and center of camera 1 or 2."""
        R1 = np.asarray(self.cam1_R, dtype=float)
        c1 = np.asarray(self.cam1_position, dtype=float)
        if which == 1:
            return R1, c1
        if which == 2:
            return R1 @ self.pose.R, c1 + R1 @ self.pose.t
        raise InputError("camera must be 1 or 2")

    def world_to_camera(self, xyz, which):
        R, c = self.camera(which)
        return (np.asarray(xyz, dtype=float) - c) @ R

    @property
    def baseline(self):
        return self.pose.scale

    def to_dict(self):
        return {
            "pose": self.pose.to_dict(),
            "K1": self.K1.to_dict(),
            "K2": self.K2.to_dict(),
            "image_size": list(self.image_size),
            "cam1_R": [float(v) for v in np.ravel(self.cam1_R)],
            "cam1_position": [float(v) for v in np.ravel(self.cam1_position)],
        }

    @classmethod
    def from_dict(cls, d):
        try:
            return cls(
                CameraIntrinsics(**d["K1"]),
                CameraIntrinsics(**d["K2"]),
                RelativePose.from_dict(d["pose"]),
                tuple(d.get("image_size", DEFAULT_IMAGE_SIZE)),
                np.asarray(d.get("cam1_R", np.eye(3).ravel()), dtype=float).reshape(3, 3),
                np.asarray(d.get("cam1_position", [0, 0, 0]), dtype=float).reshape(3),
            )
        except (KeyError, TypeError) as exc:
            raise InputError(f"malformed rig description: {exc}") from exc


def make_rig(euler_deg, baseline_m, K=DEFAULT_K, *, direction=(1.0, 0.0, 0.0), K2=None,
             image_size=DEFAULT_IMAGE_SIZE):
    """Rig whose camera 2 sits `baseline_m` from camera 1 along `direction`."""
    if not baseline_m > 0:
        raise InputError("baseline must be positive")
    d = np.asarray(direction, dtype=float)
    t = baseline_m * d / np.linalg.norm(d)
    pose = RelativePose.from_euler(euler_deg, t)
    return CameraRig(K, K if K2 is None else K2, pose, tuple(image_size))


def reference_rig(K=DEFAULT_K):
    """Ground-truth geometry of the reference camera pair."""
    return make_rig(REFERENCE_TRUTH_EULER, float(np.linalg.norm(REFERENCE_T)), K, direction=REFERENCE_T)


def reference_estimated_pose():
    """The published estimate, re-orthonormalized (entries are rounded to 3 digits)."""
    return RelativePose.from_translation(nearest_rotation(REFERENCE_R), REFERENCE_T)


def random_rig(rng, K=DEFAULT_K, max_pitch=60.0, max_yaw=60.0, max_roll=90.0,
               baseline=(0.5, 2.0)):
    euler = (
        rng.uniform(-max_roll, max_roll),
        rng.uniform(-max_pitch, max_pitch),
        rng.uniform(-max_yaw, max_yaw),
    )
    direction = rng.normal(size=3)
    return make_rig(euler, rng.uniform(*baseline), K, direction=direction)


def make_cloud(rig, n=200, rng_seed=0, depth=(2.0, 8.0), width=6.0, height=4.0):
    """Uniform points in a box ahead of both cameras (world frame).

    The box spans `depth` along the bisector of the two optical axes,
    measured from the midpoint of the camera centers.
    """
    rng = np.random.default_rng(rng_seed)
    (R1, c1), (R2, c2) = rig.camera(1), rig.camera(2)
    fwd = R1[:, 2] + R2[:, 2]
    fwd /= np.linalg.norm(fwd)
    right = R1[:, 0] - fwd * (R1[:, 0] @ fwd)
    right /= np.linalg.norm(right)
    down = np.cross(fwd, right)
    local = np.column_stack(
        [
            rng.uniform(-width / 2, width / 2, n),
            rng.uniform(-height / 2, height / 2, n),
            rng.uniform(depth[0], depth[1], n),
        ]
    )
    return 0.5 * (c1 + c2) + local @ np.vstack([right, down, fwd])


def project(K, xyz_cam):
    """Pinhole projection x = K X / Z, returns (n, 2) pixels."""
    uvw = np.asarray(xyz_cam, dtype=float) @ _K(K).T
    return uvw[:, :2] / uvw[:, 2:3]


def unproject(K, pixels, depth):
    """Back-project pixels at known depth Z into camera coordinates."""
    pix = np.asarray(pixels, dtype=float).reshape(-1, 2)
    rays = np.hstack([pix, np.ones((len(pix), 1))]) @ np.linalg.inv(_K(K)).T
    return rays * np.asarray(depth, dtype=float).reshape(-1, 1)


def _K(K):
    return K.K if isinstance(K, CameraIntrinsics) else np.asarray(K, dtype=float)


@dataclass(frozen=True)
class SyntheticMatchSet:
    matches: Correspondences
    inlier: np.ndarray
    sigma_px: float
    outlier_fraction: float
    skipped: int
    points: np.ndarray

    def __post_init__(self):
        if len(self.inlier) != len(self.matches):
            raise InputError("labels must align with correspondences")
        if not 0.0 <= self.outlier_fraction < 1.0:
            raise InputError("outlier fraction must lie in [0, 1)")


def project_points(rig, points3d, sigma_px=0.0, outlier_fraction=0.0, rng_seed=0,
                   min_depth=1e-6):
    """Project world points into both cameras as labeled correspondences.

    Points not in front of both cameras are dropped and counted in
    `skipped`. Inliers get N(0, sigma_px^2) pixel noise; each match is an
    outlier with probability `outlier_fraction`, in which case both pixels
    are redrawn uniformly over the image rectangle.
    """
    if not 0.0 <= outlier_fraction < 1.0:
        raise InputError("outlier fraction must lie in [0, 1)")
    pts = np.asarray(points3d, dtype=float).reshape(-1, 3)
    X1 = rig.world_to_camera(pts, 1)
    X2 = rig.world_to_camera(pts, 2)
    valid = (X1[:, 2] > min_depth) & (X2[:, 2] > min_depth)
    n = int(valid.sum())
    if n < 8:
        raise EmptyScene(f"only {n} points project in front of both cameras")
    pa = project(rig.K1, X1[valid])
    pb = project(rig.K2, X2[valid])

    rng = np.random.default_rng(rng_seed)
    if sigma_px > 0:
        pa = pa + rng.normal(0.0, sigma_px, pa.shape)
        pb = pb + rng.normal(0.0, sigma_px, pb.shape)
    outlier = rng.random(n) < outlier_fraction
    k = int(outlier.sum())
    if k:
        w, h = rig.image_size
        pa[outlier] = rng.uniform([0.0, 0.0], [w, h], (k, 2))
        pb[outlier] = rng.uniform([0.0, 0.0], [w, h], (k, 2))
    return SyntheticMatchSet(
        Correspondences.from_pixels(pa, pb),
        ~outlier,
        float(sigma_px),
        float(outlier_fraction),
        int(len(pts) - n),
        pts[valid],
    )


# pedestrian walks ---------------------------------------------------------


@dataclass(frozen=True)
class GroundTruthWalk:
    """Constant-speed planar walk with piecewise-constant turn rate.

    `segments` is a tuple of (start time s, turn rate deg/s). Positions and
    velocities are evaluated in closed form, so velocities are exact
    derivatives of positions. `occluded` has shape (n, 2): columns are
    cameras 1 and 2.
    """

    kind: str
    times: np.ndarray
    xyz: np.ndarray
    velocity: np.ndarray
    occluded: np.ndarray
    speed: float
    start: np.ndarray
    heading_deg: float
    segments: tuple

    @property
    def dt(self):
        return float(self.times[1] - self.times[0])

    def state(self, t):
        return _walk_state(self.start, self.heading_deg, self.speed, self.segments, t)

    def position(self, t):
        return self.state(t)[0]

    def planar(self):
        return np.column_stack(
            [self.xyz[:, 0], self.xyz[:, 2], self.velocity[:, 0], self.velocity[:, 2]]
        )


def _walk_state(start, heading_deg, speed, segments, t):
    """Position (3,) and velocity (3,) at time t."""
    x, y, z = (float(v) for v in start)
    h = math.radians(heading_deg)
    bounds = [s for s, _ in segments[1:]] + [math.inf]
    for (t0, rate), t1 in zip(segments, bounds):
        if t <= t0:
            break
        span = min(t, t1) - t0
        w = math.radians(rate)
        if w == 0.0:
            x += speed * span * math.cos(h)
            z += speed * span * math.sin(h)
        else:
            x += speed / w * (math.sin(h + w * span) - math.sin(h))
            z -= speed / w * (math.cos(h + w * span) - math.cos(h))
        h += w * span
    pos = np.array([x, y, z])
    vel = np.array([speed * math.cos(h), 0.0, speed * math.sin(h)])
    return pos, vel


def occlusion_mask(times, kind):
    """Camera-2 occlusion pattern: hidden during [1, 3] s, or before 1 s."""
    t = np.asarray(times, dtype=float)
    if kind == "none":
        return np.zeros(len(t), dtype=bool)
    if kind == "intermittent":
        return (t >= 1.0) & (t <= 3.0)
    if kind == "partial":
        return t < 1.0
    raise InputError(f"unknown occlusion kind {kind!r}; expected one of {OCCLUSION_KINDS}")


def _segments(kind, duration, rng, turn_rate):
    if kind == "straight":
        return ((0.0, 0.0),)
    sign = rng.choice([-1.0, 1.0])
    if kind == "turn":
        rate = sign * (turn_rate if turn_rate is not None else rng.uniform(15.0, 40.0))
        onset = rng.uniform(0.2, 0.7) * duration
        sweep = rng.uniform(45.0, 90.0)
        return ((0.0, 0.0), (onset, rate), (onset + sweep / abs(rate), 0.0))
    if kind == "s-curve":
        rate = sign * (turn_rate if turn_rate is not None else rng.uniform(10.0, 25.0))
        return ((0.0, rate), (0.5 * duration, -rate))
    raise InputError(f"unknown walk kind {kind!r}; expected one of {WALK_KINDS}")


def synth_walk(kind="straight", duration_s=8.0, dt=DT, speed=1.2, rng_seed=0, *,
               start=None, heading_deg=None, turn_rate=None, occlusion="none"):
    """Sample a walk at t = 0, dt, ..., duration - dt.

    Without an explicit start/heading the pedestrian crosses in front of a
    camera at the world origin, roughly 5 m away, walking toward +x.
    """
    n = int(round(duration_s / dt))
    if n < 2:
        raise InputError("walk needs at least two samples")
    rng = np.random.default_rng(rng_seed)
    if start is None:
        start = (-0.5 * speed * duration_s + rng.uniform(-0.5, 0.5), 0.0, rng.uniform(4.0, 6.0))
    if heading_deg is None:
        heading_deg = rng.uniform(-20.0, 20.0)
    segments = _segments(kind, duration_s, rng, turn_rate)
    times = np.arange(n) * dt
    states = [_walk_state(start, heading_deg, speed, segments, t) for t in times]
    xyz = np.array([s[0] for s in states])
    vel = np.array([s[1] for s in states])
    occluded = np.column_stack([np.zeros(n, dtype=bool), occlusion_mask(times, occlusion)])
    return GroundTruthWalk(kind, times, xyz, vel, occluded, float(speed),
                           np.asarray(start, dtype=float), float(heading_deg), segments)


def with_occlusion(walk, kind, camera=2):
    occ = walk.occluded.copy()
    occ[:, camera - 1] = occlusion_mask(walk.times, kind)
    return GroundTruthWalk(walk.kind, walk.times, walk.xyz, walk.velocity, occ, walk.speed,
                           walk.start, walk.heading_deg, walk.segments)


@dataclass(frozen=True)
class Observation:
    """A walk seen from one camera: 3D positions/velocities plus a missing flag."""

    times: np.ndarray
    xyz: np.ndarray
    velocity: np.ndarray
    missing: np.ndarray
    frame: str

    def planar(self):
        """(n, 4) planar states [x, z, vx, vz] used by the forecaster."""
        return np.column_stack(
            [self.xyz[:, 0], self.xyz[:, 2], self.velocity[:, 0], self.velocity[:, 2]]
        )


def observe(walk, rig, camera):
    """Rigidly transform a walk into camera 1 or 2 and apply its occlusion."""
    R, _ = rig.camera(camera)
    xyz = rig.world_to_camera(walk.xyz, camera)
    vel = walk.velocity @ R
    frame = OTHER if camera == 1 else EGO
    return Observation(walk.times.copy(), xyz, vel, walk.occluded[:, camera - 1].copy(), frame)


# serialization ------------------------------------------------------------

WALK_CSV_HEADER = ["t", "x", "y", "z", "u", "v", "occluded_cam1", "occluded_cam2"]


def walk_rows(times, xyz, velocity, occluded):
    for t, p, v, o in zip(times, xyz, velocity, occluded):
        yield [t, p[0], p[1], p[2], v[0], v[2], int(o[0]), int(o[1])]


def write_walk_csv(fh, walk_or_obs, occluded=None):
    """Write a walk (or an observation of one) in the shared CSV layout."""
    if occluded is None:
        occluded = getattr(walk_or_obs, "occluded", None)
        if occluded is None:
            m = walk_or_obs.missing
            occluded = np.column_stack([m if walk_or_obs.frame == OTHER else 0 * m,
                                        m if walk_or_obs.frame == EGO else 0 * m])
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(WALK_CSV_HEADER)
    for row in walk_rows(walk_or_obs.times, walk_or_obs.xyz, walk_or_obs.velocity, occluded):
        w.writerow([_fmt(v) for v in row[:6]] + row[6:])


def read_walk_csv(path):
    """Return (times, xyz, planar velocity (n, 2), occluded (n, 2))."""
    from coopforecast.errors import ParseError

    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header[:6]] != WALK_CSV_HEADER[:6]:
            raise ParseError("expected header " + ",".join(WALK_CSV_HEADER), line=1, path=path)
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                rows.append([float(v) for v in row])
            except ValueError:
                raise ParseError(f"non-numeric value in {row!r}", line=lineno, path=path) from None
    if not rows:
        raise ParseError("no samples", path=path)
    arr = np.asarray(rows, dtype=float)
    occ = arr[:, 6:8].astype(bool) if arr.shape[1] >= 8 else np.zeros((len(arr), 2), bool)
    return arr[:, 0], arr[:, 1:4], arr[:, 4:6], occ


def rig_to_json(rig):
    return json.dumps(rig.to_dict(), indent=2, sort_keys=True)


def _fmt(v):
    return format(float(v), ".12g")
