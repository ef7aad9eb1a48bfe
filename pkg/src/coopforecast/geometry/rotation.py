"""Rotation helpers and the Euler-angle convention used throughout.

Angles are Tait-Bryan, degrees, expressed in the camera optical frame
(x right, y down, z forward):

    R = Rz(roll) @ Ry(yaw) @ Rx(pitch)

so roll turns about the optical axis, yaw about the vertical image axis and
pitch about the horizontal image axis. The axis order is Z-Y-X; the
singular configuration is |yaw| = 90 deg.
"""
from dataclasses import dataclass

import numpy as np

from coopforecast.errors import GimbalLock

GIMBAL_TOL_DEG = 1e-6


@dataclass(frozen=True)
class EulerAngles:
    roll: float
    pitch: float
    yaw: float

    def as_array(self):
        return np.array([self.roll, self.pitch, self.yaw], dtype=float)

    @classmethod
    def from_array(cls, values):
        r, p, y = (float(v) for v in np.asarray(values, dtype=float).reshape(3))
        return cls(r, p, y)


def _as_rpy(e):
    if isinstance(e, EulerAngles):
        return e.as_array()
    return np.asarray(e, dtype=float).reshape(3)


def rot_x(deg):
    a = np.deg2rad(deg)
    c, s = np.cos(a), np.sin(a)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rot_y(deg):
    a = np.deg2rad(deg)
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rot_z(deg):
    a = np.deg2rad(deg)
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def euler_to_rotation(e):
    """Rotation matrix for (roll, pitch, yaw) in degrees."""
    roll, pitch, yaw = _as_rpy(e)
    return rot_z(roll) @ rot_y(yaw) @ rot_x(pitch)


def rotation_to_euler(R):
    """Inverse of `euler_to_rotation`; raises GimbalLock at |yaw| = 90 deg."""
    R = np.asarray(R, dtype=float)
    check_rotation(R, tol=1e-6)
    yaw = np.degrees(np.arctan2(-R[2, 0], np.hypot(R[0, 0], R[1, 0])))
    if abs(abs(yaw) - 90.0) < GIMBAL_TOL_DEG:
        raise GimbalLock(f"yaw = {yaw:.9f} deg is at the singular configuration")
    roll = np.degrees(np.arctan2(R[1, 0], R[0, 0]))
    pitch = np.degrees(np.arctan2(R[2, 1], R[2, 2]))
    return EulerAngles(float(roll), float(pitch), float(yaw))


def skew(v):
    x, y, z = np.asarray(v, dtype=float).reshape(3)
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def is_rotation(R, tol=1e-9):
    R = np.asarray(R, dtype=float)
    if R.shape != (3, 3) or not np.all(np.isfinite(R)):
        return False
    ortho = np.abs(R.T @ R - np.eye(3)).max()
    return ortho <= tol and abs(np.linalg.det(R) - 1.0) <= tol


def check_rotation(R, tol=1e-9):
    if not is_rotation(R, tol):
        raise ValueError("matrix is not a rotation within tolerance %g" % tol)


def nearest_rotation(M):
    """Project a 3x3 matrix onto SO(3) in the Frobenius sense."""
    U, _, Vt = np.linalg.svd(np.asarray(M, dtype=float))
    D = np.diag([1.0, 1.0, np.sign(np.linalg.det(U @ Vt))])
    return U @ D @ Vt


def rotation_angle_deg(Ra, Rb):
    """Geodesic angle between two rotations, accurate for tiny angles."""
    D = np.asarray(Ra, dtype=float).T @ np.asarray(Rb, dtype=float)
    s = 0.5 * np.linalg.norm([D[2, 1] - D[1, 2], D[0, 2] - D[2, 0], D[1, 0] - D[0, 1]])
    c = 0.5 * (np.trace(D) - 1.0)
    return float(np.degrees(np.arctan2(s, c)))


def euler_error_deg(ea, eb):
    """Largest per-angle difference, wrapped to [-180, 180)."""
    d = _as_rpy(ea) - _as_rpy(eb)
    d = (d + 180.0) % 360.0 - 180.0
    return float(np.abs(d).max())
