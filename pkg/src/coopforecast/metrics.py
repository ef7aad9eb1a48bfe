"""ADE, Gaussian KL divergence and entropy (all information in nats).

Divide by log(2) (multiply by log2(e)) to express KL or entropy in bits.
"""
import csv
import math
import warnings
from dataclasses import dataclass

import numpy as np

from coopforecast.errors import LengthMismatch, SingularCovariance

REG_EPS = 1e-9
MIN_EIG = 1e-12
NATS_TO_BITS = 1.0 / math.log(2.0)

# bivariate Mahalanobis cutoffs for the 1-sigma and 2-sigma ellipses
CHI2_1SIGMA = 2.30
CHI2_2SIGMA = 6.18


class RegularizationWarning(UserWarning):
    pass


@dataclass(frozen=True)
class Gaussian2:
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float).reshape(2)
        cov = np.asarray(self.cov, dtype=float).reshape(2, 2)
        if np.abs(cov - cov.T).max() > 1e-12:
            raise ValueError("covariance must be symmetric")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)


def ade(pred, truth):
    """Mean Euclidean distance between two position sequences."""
    pred = np.asarray(pred, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if pred.shape != truth.shape:
        raise LengthMismatch(f"shapes differ: {pred.shape} vs {truth.shape}")
    if pred.shape[0] < 1:
        raise LengthMismatch("sequences must be non-empty")
    return float(np.mean(np.linalg.norm(pred - truth, axis=-1)))


def _regularized(cov):
    """Return (cov, flag): adds REG_EPS * I when cov is numerically singular."""
    eig = np.linalg.eigvalsh(cov)
    if eig.min() > MIN_EIG:
        return cov, False
    reg = cov + REG_EPS * np.eye(len(cov))
    if not np.all(np.isfinite(reg)) or np.linalg.eigvalsh(reg).min() <= MIN_EIG:
        raise SingularCovariance("covariance is singular even after regularization")
    return reg, True


def kl_divergence(p, q, return_flag=False):
    """KL(p || q) for two bivariate Gaussians.

    Computed through the eigenvalues of Sq^-1/2 Sp Sq^-1/2, so each trace/log
    term is individually non-negative. A near-singular Sq is regularized by
    1e-9 I and reported with a RegularizationWarning (and the returned flag
    when `return_flag` is set).
    """
    if np.array_equal(p.mean, q.mean) and np.array_equal(p.cov, q.cov):
        return (0.0, False) if return_flag else 0.0
    cov_q, flagged = _regularized(q.cov)
    if flagged:
        warnings.warn("q covariance regularized by 1e-9 I", RegularizationWarning, stacklevel=2)
    L = np.linalg.cholesky(cov_q)
    Linv = np.linalg.inv(L)
    M = Linv @ p.cov @ Linv.T
    lam = np.linalg.eigvalsh(0.5 * (M + M.T))
    if lam.min() <= 0:
        raise SingularCovariance("p covariance must be positive definite")
    dz = Linv @ (q.mean - p.mean)
    kl = 0.5 * (float(np.sum(lam - 1.0 - np.log(lam))) + float(dz @ dz))
    return (kl, flagged) if return_flag else kl


def entropy(p):
    """Differential entropy 0.5 * log((2 pi e)^d det S) with d = 2."""
    cov = p.cov if isinstance(p, Gaussian2) else np.asarray(p, dtype=float)
    sign, logdet = np.linalg.slogdet(cov)
    if sign <= 0:
        raise SingularCovariance("entropy needs a positive-definite covariance")
    d = cov.shape[0]
    return 0.5 * (d * math.log(2.0 * math.pi * math.e) + logdet)


def mahalanobis_sq(x, g):
    d = np.asarray(x, dtype=float) - g.mean
    return float(d @ np.linalg.solve(g.cov, d))


@dataclass(frozen=True)
class DivergenceTrace:
    kl: np.ndarray
    entropy: np.ndarray
    ratio: np.ndarray
    regularized: np.ndarray

    def rows(self):
        for k in range(len(self.kl)):
            yield k + 1, self.kl[k], self.entropy[k], self.ratio[k]

    def write_csv(self, fh):
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "kl_nats", "entropy_nats", "ratio"])
        for step, kl, h, r in self.rows():
            w.writerow([step, format(kl, ".12g"), format(h, ".12g"), format(r, ".12g")])


def divergence_trace(fp, fq):
    """Per-step KL(p || q), H(p) and their ratio.

    `fp` plays the reference role: the forecast made from the ego camera's
    own (unoccluded) observations. `fq` is the cooperative forecast.
    """
    if len(fp.means) != len(fq.means):
        raise LengthMismatch(f"horizons differ: {len(fp.means)} vs {len(fq.means)}")
    kls, hs, flags = [], [], []
    for k in range(len(fp.means)):
        p = Gaussian2(fp.means[k], fp.covs[k])
        q = Gaussian2(fq.means[k], fq.covs[k])
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RegularizationWarning)
            kl, flag = kl_divergence(p, q, return_flag=True)
        kls.append(kl)
        hs.append(entropy(p))
        flags.append(flag)
    kls, hs = np.array(kls), np.array(hs)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = kls / hs
    return DivergenceTrace(kls, hs, ratio, np.array(flags))
