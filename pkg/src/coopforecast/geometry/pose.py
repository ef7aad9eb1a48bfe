"""Relative pose between the two cameras and frame transfers.

Camera 1 ("other") sees the pedestrian, camera 2 is the ego agent. A
RelativePose (R, t) places camera 2 in camera 1's frame: its columns of R
are camera 2's axes and t is camera 2's origin, both in camera-1
coordinates. Coordinates therefore move into the ego frame as

    X_ego = R^T (X_other - t)
"""
import json
from dataclasses import dataclass

import numpy as np

from coopforecast.errors import FrameMismatch, InputError, NonPositiveDistance
from coopforecast.geometry.rotation import (
    EulerAngles,
    euler_to_rotation,
    is_rotation,
    rotation_to_euler,
)

WORLD, OTHER, EGO = "world", "cam1", "cam2"
FRAMES = (WORLD, OTHER, EGO)


@dataclass(frozen=True)
class RelativePose:
    R: np.ndarray
    t_hat: np.ndarray
    scale: float | None = None

    def __post_init__(self):
        R = np.array(self.R, dtype=float).reshape(3, 3)
        t_hat = np.array(self.t_hat, dtype=float).reshape(3)
        if not is_rotation(R, 1e-9):
            raise InputError("R must be a rotation (R^T R = I, det R = 1) within 1e-9")
        if abs(np.linalg.norm(t_hat) - 1.0) > 1e-12:
            raise InputError("t_hat must be a unit vector")
        if self.scale is not None and not self.scale > 0:
            raise NonPositiveDistance("scale must be positive")
        R.setflags(write=False)
        t_hat.setflags(write=False)
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "t_hat", t_hat)
        if self.scale is not None:
            object.__setattr__(self, "scale", float(self.scale))

    @classmethod
    def from_translation(cls, R, t):
        t = np.asarray(t, dtype=float).reshape(3)
        norm = np.linalg.norm(t)
        if not norm > 0:
            raise NonPositiveDistance("translation must be nonzero")
        return cls(R, t / norm, norm)

    @classmethod
    def from_euler(cls, euler_deg, t):
        return cls.from_translation(euler_to_rotation(euler_deg), t)

    @property
    def t(self):
        if self.scale is None:
            raise InputError("pose scale is unset; call set_scale first")
        return self.scale * self.t_hat

    @property
    def euler(self) -> EulerAngles:
        return rotation_to_euler(self.R)

    def to_dict(self):
        return {
            "R": [float(v) for v in self.R.ravel()],
            "t_hat": [float(v) for v in self.t_hat],
            "scale": self.scale,
            "euler_deg": [float(v) for v in self.euler.as_array()],
        }

    @classmethod
    def from_dict(cls, d):
        try:
            R = np.asarray(d["R"], dtype=float).reshape(3, 3)
            t_hat = np.asarray(d["t_hat"], dtype=float).reshape(3)
        except (KeyError, ValueError) as exc:
            raise InputError(f"malformed pose: {exc}") from exc
        return cls(R, t_hat / np.linalg.norm(t_hat), d.get("scale"))

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2)


def set_scale(pose, d_true):
    """Fix the metric scale from the known camera separation d_true (meters)."""
    if not d_true > 0:
        raise NonPositiveDistance(f"d_true must be positive, got {d_true}")
    s = d_true / np.linalg.norm(pose.t_hat)
    return RelativePose(pose.R, pose.t_hat, s)


@dataclass(frozen=True)
class PointSet:
    """3D points (n, 3) in meters, tagged with the frame they live in."""

    xyz: np.ndarray
    frame: str

    def __post_init__(self):
        if self.frame not in FRAMES:
            raise FrameMismatch(f"unknown frame {self.frame!r}; registered: {FRAMES}")
        xyz = np.array(self.xyz, dtype=float)
        if xyz.shape[-1] != 3:
            raise InputError("points must have 3 coordinates")
        xyz.setflags(write=False)
        object.__setattr__(self, "xyz", xyz)


def transform_to_ego(p, pose):
    """Map camera-1 points into camera 2: X' = R^T (X - t)."""
    if p.frame != OTHER:
        raise FrameMismatch(f"expected points in {OTHER!r}, got {p.frame!r}")
    return PointSet((p.xyz - pose.t) @ pose.R, EGO)


def transform_to_other(p, pose):
    """Inverse of `transform_to_ego`: X = R X' + t."""
    if p.frame != EGO:
        raise FrameMismatch(f"expected points in {EGO!r}, got {p.frame!r}")
    return PointSet(p.xyz @ pose.R.T + pose.t, OTHER)


def transform_velocity(v, pose):
    """Direction vectors only rotate: v' = R^T v. Accepts (3,) or (n, 3)."""
    return np.asarray(v, dtype=float) @ pose.R
