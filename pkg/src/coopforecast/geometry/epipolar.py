"""Fundamental-matrix estimation: normalized 8-point DLT and RANSAC.

Convention: a match is (a, b) with `a` a pixel in camera 1 and `b` the same
scene point in camera 2, so an exact F satisfies b^T F a = 0 and `F @ a` is
the epipolar line of `a` in image 2.
"""
import csv
import logging
import math
from dataclasses import dataclass

import numpy as np

from coopforecast.errors import (
    DegenerateConfiguration,
    InputError,
    InsufficientMatches,
    NoConsensus,
    ParseError,
)

logger = logging.getLogger(__name__)

MIN_MATCHES = 8
RANK_TOL = 1e-10
MAX_REFITS = 10


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise InputError("focal lengths must be positive")
        if not all(math.isfinite(v) for v in (self.fx, self.fy, self.cx, self.cy)):
            raise InputError("intrinsics must be finite")

    @property
    def K(self):
        return np.array(
            [[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]]
        )

    @property
    def K_inv(self):
        return np.array(
            [
                [1.0 / self.fx, 0.0, -self.cx / self.fx],
                [0.0, 1.0 / self.fy, -self.cy / self.fy],
                [0.0, 0.0, 1.0],
            ]
        )

    @classmethod
    def from_matrix(cls, K):
        K = np.asarray(K, dtype=float)
        if K.shape != (3, 3) or not np.allclose(K[2], [0, 0, 1]) or K[1, 0] or K[0, 1]:
            raise InputError("K must be upper triangular with zero skew and bottom row [0, 0, 1]")
        return cls(float(K[0, 0]), float(K[1, 1]), float(K[0, 2]), float(K[1, 2]))

    def to_dict(self):
        return {"fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy}


def _as_K(K):
    if isinstance(K, CameraIntrinsics):
        return K.K
    return np.asarray(K, dtype=float)


@dataclass(frozen=True)
class Correspondences:
    """Matched homogeneous pixels, one row per match (last column is 1)."""

    a: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        a = np.array(self.a, dtype=float)
        b = np.array(self.b, dtype=float)
        if a.ndim != 2 or a.shape[1] != 3 or a.shape != b.shape:
            raise InputError("correspondences must be two (n, 3) arrays of equal shape")
        if np.any(a[:, 2] != 1.0) or np.any(b[:, 2] != 1.0):
            raise InputError("homogeneous coordinates must have third component 1")
        a.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)

    @classmethod
    def from_pixels(cls, pa, pb):
        pa = np.asarray(pa, dtype=float).reshape(-1, 2)
        pb = np.asarray(pb, dtype=float).reshape(-1, 2)
        return cls(
            np.hstack([pa, np.ones((len(pa), 1))]), np.hstack([pb, np.ones((len(pb), 1))])
        )

    def __len__(self):
        return len(self.a)

    def subset(self, index):
        return Correspondences(self.a[index], self.b[index])


def hartley_normalization(points):
    """Similarity T moving the centroid to 0 and the RMS radius to sqrt(2)."""
    xy = np.asarray(points, dtype=float)[:, :2]
    centroid = xy.mean(axis=0)
    rms = np.sqrt(np.mean(np.sum((xy - centroid) ** 2, axis=1)))
    if not rms > 0:
        raise DegenerateConfiguration("all points coincide")
    s = np.sqrt(2.0) / rms
    return np.array(
        [[s, 0.0, -s * centroid[0]], [0.0, s, -s * centroid[1]], [0.0, 0.0, 1.0]]
    )


def fix_sign(M):
    """Scale-free matrices are returned with their largest-magnitude entry positive."""
    flat = M.ravel()
    return M if flat[np.argmax(np.abs(flat))] >= 0 else -M


def estimate_fundamental_dlt(matches):
    """Normalized 8-point estimate of F from n >= 8 matches."""
    n = len(matches)
    if n < MIN_MATCHES:
        raise InsufficientMatches(f"need at least {MIN_MATCHES} matches, got {n}")
    T1 = hartley_normalization(matches.a)
    T2 = hartley_normalization(matches.b)
    a = matches.a @ T1.T
    b = matches.b @ T2.T
    # row i holds kron(b_i, a_i) so that A @ F.ravel() = b_i^T F a_i
    A = (b[:, :, None] * a[:, None, :]).reshape(n, 9)
    if n < 9:
        A = np.vstack([A, np.zeros((9 - n, 9))])
    _, s, Vt = np.linalg.svd(A, full_matrices=False)
    if s[7] <= RANK_TOL * s[0]:
        raise DegenerateConfiguration(
            "design matrix has rank < 8 (zero baseline, pure rotation or collinear points)"
        )
    F = Vt[-1].reshape(3, 3)
    U, S, Vt = np.linalg.svd(F)
    F = U @ np.diag([S[0], S[1], 0.0]) @ Vt
    F = T2.T @ F @ T1
    return fix_sign(F / np.linalg.norm(F))


def algebraic_residuals(F, matches):
    """b_i^T F a_i for every match."""
    return np.einsum("ij,jk,ik->i", matches.b, F, matches.a)


def sampson_distance(F, matches):
    """First-order geometric error in pixels (square root of the Sampson error)."""
    Fa = matches.a @ F.T
    Ftb = matches.b @ F
    r = np.sum(matches.b * Fa, axis=1)
    denom = Fa[:, 0] ** 2 + Fa[:, 1] ** 2 + Ftb[:, 0] ** 2 + Ftb[:, 1] ** 2
    with np.errstate(divide="ignore", invalid="ignore"):
        d = np.abs(r) / np.sqrt(denom)
    return np.where(denom > 0, d, np.inf)


def adaptive_iterations(inlier_fraction, confidence, sample_size=MIN_MATCHES):
    """Trials needed to draw one all-inlier sample with the given confidence."""
    w_s = inlier_fraction**sample_size
    if w_s >= 1.0:
        return 0
    if w_s <= 0.0:
        return math.inf
    return math.log(1.0 - confidence) / math.log1p(-w_s)


def ransac_fundamental(matches, iterations=1000, confidence=0.99, threshold=1.0, rng_seed=0):
    """Robust F with an inlier mask.

    Hypotheses come from random 8-point samples and are scored by the
    number of matches with Sampson distance below `threshold` pixels; the
    earliest hypothesis wins ties. The loop stops at the adaptive bound for
    the best inlier fraction seen so far. The winner's inliers are refit by
    DLT, re-scored and refit again until the inlier set settles (at most
    MAX_REFITS rounds); the returned mask belongs to the final F.
    """
    n = len(matches)
    if n < MIN_MATCHES:
        raise InsufficientMatches(f"need at least {MIN_MATCHES} matches, got {n}")
    if not 0.0 < confidence < 1.0:
        raise InputError("confidence must lie in (0, 1)")
    if not threshold > 0:
        raise InputError("threshold must be positive")

    rng = np.random.default_rng(rng_seed)
    best_count, best_mask = -1, None
    bound = math.inf
    trials = 0
    while trials < iterations and trials < bound:
        sample = rng.choice(n, MIN_MATCHES, replace=False)
        trials += 1
        try:
            F = estimate_fundamental_dlt(matches.subset(sample))
        except DegenerateConfiguration:
            continue
        mask = sampson_distance(F, matches) < threshold
        count = int(mask.sum())
        if count > best_count:
            best_count, best_mask = count, mask
            bound = adaptive_iterations(count / n, confidence)
    logger.debug("ransac: %d trials, best support %d/%d", trials, best_count, n)

    if best_count < MIN_MATCHES:
        raise NoConsensus(f"best hypothesis has only {max(best_count, 0)} inliers")
    # refit on the inliers until the inlier set stops changing; a hypothesis
    # from 8 noisy points can sit far enough off to clip genuine inliers
    F = estimate_fundamental_dlt(matches.subset(best_mask))
    mask = sampson_distance(F, matches) < threshold
    for _ in range(MAX_REFITS):
        if mask.sum() < MIN_MATCHES:
            break
        F_next = estimate_fundamental_dlt(matches.subset(mask))
        mask_next = sampson_distance(F_next, matches) < threshold
        if mask_next.sum() < mask.sum():
            break
        stable = np.array_equal(mask_next, mask)
        F, mask = F_next, mask_next
        if stable:
            break
    if mask.sum() < MIN_MATCHES:
        raise NoConsensus("refit model lost its support")
    return F, mask


def load_correspondences_csv(path):
    """Read `ax, ay, bx, by` rows (pixels, header required)."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ParseError("empty correspondence file", path=path) from None
        cols = ["ax", "ay", "bx", "by"]
        if header[:4] != cols:
            raise ParseError(f"header must start with {','.join(cols)}", line=1, path=path)
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                rows.append([float(v) for v in row[:4]])
            except ValueError:
                raise ParseError(f"non-numeric value in {row!r}", line=lineno, path=path) from None
    arr = np.asarray(rows, dtype=float).reshape(-1, 4)
    return Correspondences.from_pixels(arr[:, :2], arr[:, 2:])


def correspondences_to_rows(matches):
    return np.hstack([matches.a[:, :2], matches.b[:, :2]])
