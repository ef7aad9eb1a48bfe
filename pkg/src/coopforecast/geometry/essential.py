"""Essential matrix from F and its decomposition into a relative pose."""
import numpy as np

from coopforecast.errors import CheiralityAmbiguous, InputError, InvariantError
from coopforecast.geometry.epipolar import _as_K, fix_sign
from coopforecast.geometry.pose import RelativePose
from coopforecast.geometry.rotation import is_rotation, skew

_W = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])


def project_to_essential(M):
    """Closest matrix with singular values (s, s, 0), s the mean of the top two."""
    U, S, Vt = np.linalg.svd(M)
    s = 0.5 * (S[0] + S[1])
    return U @ np.diag([s, s, 0.0]) @ Vt


def essential_from_fundamental(F, K1, K2):
    """E = K2^T F K1 projected onto the essential manifold.

    With F mapping camera-1 pixels to camera-2 lines, E satisfies
    y2^T E y1 = 0 for normalized rays y = K^-1 x, and for a RelativePose
    (R, t) it equals ([t]x R)^T up to scale and sign.
    """
    K1, K2 = _as_K(K1), _as_K(K2)
    for K in (K1, K2):
        if abs(np.linalg.det(K)) < 1e-12:
            raise InputError("intrinsics must be invertible")
    E = project_to_essential(K2.T @ np.asarray(F, dtype=float) @ K1)
    return fix_sign(E)


def essential_from_pose(pose):
    """Unit-norm E consistent with `essential_from_fundamental` for a known pose."""
    E = (skew(pose.t_hat) @ pose.R).T
    return fix_sign(E / np.linalg.norm(E))


def fundamental_from_pose(pose, K1, K2):
    K1, K2 = _as_K(K1), _as_K(K2)
    F = np.linalg.inv(K2).T @ essential_from_pose(pose) @ np.linalg.inv(K1)
    return fix_sign(F / np.linalg.norm(F))


def pose_candidates(E):
    """The four (R', t') with E ~ [t']x R', mapping camera-1 to camera-2 coordinates."""
    U, _, Vt = np.linalg.svd(E)
    if np.linalg.det(U) < 0:
        U = -U
    if np.linalg.det(Vt) < 0:
        Vt = -Vt
    R1 = U @ _W @ Vt
    R2 = U @ _W.T @ Vt
    t = U[:, 2]
    return [(R1, t), (R1, -t), (R2, t), (R2, -t)]


def triangulate_midpoint(y1, y2, R21, t21):
    """Midpoint of the closest approach of the two viewing rays.

    y1, y2 are normalized rays (n, 3) in cameras 1 and 2; (R21, t21) maps
    camera-1 coordinates to camera-2. Returns points in camera 1 and the
    depths of those points in both cameras.
    """
    c2 = -R21.T @ t21
    d1 = y1
    d2 = y2 @ R21  # rows of R21^T y2
    a11 = np.sum(d1 * d1, axis=1)
    a12 = np.sum(d1 * d2, axis=1)
    a22 = np.sum(d2 * d2, axis=1)
    r1 = d1 @ c2
    r2 = d2 @ c2
    det = a12 * a12 - a11 * a22
    ok = np.abs(det) > 1e-14 * a11 * a22
    safe = np.where(ok, det, 1.0)
    lam1 = np.where(ok, (a12 * r2 - a22 * r1) / safe, np.nan)
    lam2 = np.where(ok, (a11 * r2 - a12 * r1) / safe, np.nan)
    X = 0.5 * (lam1[:, None] * d1 + c2 + lam2[:, None] * d2)
    depth1 = X[:, 2]
    depth2 = (X @ R21.T + t21)[:, 2]
    return X, depth1, depth2


def decompose_essential(E, matches, K1, K2, mask=None):
    """Relative pose (scale unset) from E by the cheirality vote.

    Each of the four candidates triangulates the (inlier) matches; the one
    that puts the majority of points in front of both cameras wins.
    """
    K1, K2 = _as_K(K1), _as_K(K2)
    idx = slice(None) if mask is None else np.asarray(mask, dtype=bool)
    y1 = matches.a[idx] @ np.linalg.inv(K1).T
    y2 = matches.b[idx] @ np.linalg.inv(K2).T
    n = len(y1)
    if n < 1:
        raise InputError("need at least one correspondence for the cheirality test")

    best = None
    for R21, t21 in pose_candidates(np.asarray(E, dtype=float)):
        _, z1, z2 = triangulate_midpoint(y1, y2, R21, t21)
        votes = int(np.sum((z1 > 0) & (z2 > 0)))
        if best is None or votes > best[0]:
            best = (votes, R21, t21)
    votes, R21, t21 = best
    if not votes > 0.5 * n:
        raise CheiralityAmbiguous(f"best candidate has only {votes}/{n} points in front")

    R = R21.T
    t_hat = -R21.T @ t21
    t_hat = t_hat / np.linalg.norm(t_hat)
    if not is_rotation(R, 1e-9):
        raise InvariantError("decomposition produced an invalid rotation")
    return RelativePose(R, t_hat)
