"""Monte-Carlo dropout inference."""
import csv
from dataclasses import dataclass

import numpy as np

from coopforecast.errors import DegenerateN
from coopforecast.forecaster.model import _check_past, decode_outputs, encode_inputs, pass_masks, run

DEFAULT_PASSES = 50


@dataclass(frozen=True)
class ForecastDistribution:
    """Per-step bivariate Gaussians over future positions.

    covs = epistemic (population covariance of the pass means) + diag(mean
    predicted aleatoric variance).
    """

    means: np.ndarray  # (F, 2)
    covs: np.ndarray  # (F, 2, 2)
    n_passes: int
    epistemic: np.ndarray
    aleatoric: np.ndarray  # (F, 2)

    def __len__(self):
        return len(self.means)

    def rows(self):
        for k, (m, c) in enumerate(zip(self.means, self.covs), start=1):
            yield k, m[0], m[1], c[0, 0], c[0, 1], c[1, 1]

    def write_csv(self, fh):
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "mu_x", "mu_y", "s_xx", "s_xy", "s_yy"])
        for step, *vals in self.rows():
            w.writerow([step] + [format(float(v), ".12g") for v in vals])


def mc_samples(params, past, n_passes, seed=0, chunk=2048):
    """Raw pass outputs: means (N, F, 2) and log-variances (N, F, 2).

    Pass i uses masks drawn from default_rng([seed, i]) only, so results do not
    depend on the chunk size or evaluation order.
    """
    past, single = _check_past(params, past)
    if not single:
        past = past[:1]
    z, anchor = encode_inputs(params, past)
    means = np.empty((n_passes, params.future, 2))
    logvars = np.empty_like(means)
    for s in range(0, n_passes, chunk):
        b = min(chunk, n_passes - s)
        masks = None
        if params.dropout > 0:
            m = np.stack([pass_masks(params, seed, i) for i in range(s, s + b)])
            masks = [m[:, layer] for layer in range(4)]
        outs, _ = run(params, np.repeat(z, b, axis=0), masks)
        mu, lv = decode_outputs(params, outs, np.repeat(anchor, b, axis=0))
        means[s : s + b] = mu
        logvars[s : s + b] = lv
    return means, logvars


def summarize(means, logvars):
    n = len(means)
    ref = means[0]
    mean = ref + (means - ref).mean(axis=0)
    dev = means - mean
    epi = np.einsum("nfi,nfj->fij", dev, dev) / n
    epi = 0.5 * (epi + np.swapaxes(epi, 1, 2))
    alea = np.exp(logvars).mean(axis=0)
    covs = epi + alea[:, :, None] * np.eye(2)
    return ForecastDistribution(mean, covs, n, epi, alea)


def mc_dropout_infer(params, past, n_passes=DEFAULT_PASSES, seed=0, chunk=2048):
    """Forecast distribution of one (T, 4) past trajectory from `n_passes` passes."""
    if n_passes < 2:
        raise DegenerateN(f"need at least 2 passes, got {n_passes}")
    return summarize(*mc_samples(params, past, n_passes, seed, chunk))
