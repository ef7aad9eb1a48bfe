"""Adam training of the encoder-decoder on windowed trajectories."""
import logging
from dataclasses import dataclass

import numpy as np

from coopforecast.errors import InputError, NonFiniteLoss
from coopforecast.forecaster.model import (
    init_params,
    loss_and_grads,
    nll_loss,
    forward,
    standardization_stats,
)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 150
    batch: int = 32
    lr: float = 1e-3
    hidden: int = 32
    dropout: float = 0.1
    features: int = 4
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    teacher_forcing: bool = False


@dataclass(frozen=True)
class TrainResult:
    params: object
    initial_loss: float
    loss_trace: np.ndarray  # deterministic full-set loss after each epoch
    batch_losses: np.ndarray


class Adam:
    def __init__(self, weights, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in weights.items()}
        self.v = {k: np.zeros_like(v) for k, v in weights.items()}
        self.t = 0

    def step(self, weights, grads):
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        out = {}
        for k, w in weights.items():
            g = grads[k]
            self.m[k] = self.b1 * self.m[k] + (1.0 - self.b1) * g
            self.v[k] = self.b2 * self.v[k] + (1.0 - self.b2) * g * g
            out[k] = w - self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)
        return out


def dataset_loss(params, dataset, teacher_forcing=False, batch=4096):
    """NLL over every window with dropout off, decoding as in training."""
    total, n = 0.0, 0
    for s in range(0, len(dataset), batch):
        past = dataset.past_states[s : s + batch]
        fut = dataset.future_positions[s : s + batch]
        mu, lv = forward(params, past, targets=fut if teacher_forcing else None)
        total += nll_loss(mu, lv, fut) * len(past)
        n += len(past)
    return total / n


def train(dataset, config=None, params=None, **overrides):
    """Fit a model; returns a TrainResult. Same config and data -> same bits.

    By default the decoder is free-running during training, exactly as at
    inference; `teacher_forcing=True` feeds it the true previous offsets.

    Randomness comes from three independent streams spawned from the seed:
    weight init, minibatch shuffling and dropout masks.
    """
    cfg = config or TrainConfig()
    if overrides:
        cfg = TrainConfig(**{**cfg.__dict__, **overrides})
    if len(dataset) == 0:
        raise InputError("training set is empty")
    if cfg.batch < 1 or cfg.epochs < 0 or cfg.lr < 0:
        raise InputError("batch must be >= 1, epochs and lr non-negative")
    ss = np.random.SeedSequence(cfg.seed)
    init_seed, shuffle_ss, dropout_ss = ss.spawn(3)
    if params is None:
        stats = standardization_stats(dataset.windows, dataset.past, cfg.features)
        params = init_params(cfg.hidden, cfg.dropout, cfg.features, dataset.past, dataset.future,
                             seed=init_seed, stats=stats)
    shuffle_rng = np.random.default_rng(shuffle_ss)
    dropout_rng = np.random.default_rng(dropout_ss)
    opt = Adam(params.weights, cfg.lr, cfg.beta1, cfg.beta2, cfg.eps)
    weights = params.weights
    keep = 1.0 - params.dropout
    initial = dataset_loss(params, dataset, cfg.teacher_forcing)
    trace, batch_losses = [], []
    batch_index = 0
    for epoch in range(cfg.epochs):
        order = shuffle_rng.permutation(len(dataset))
        for s in range(0, len(order), cfg.batch):
            idx = order[s : s + cfg.batch]
            past = dataset.past_states[idx]
            fut = dataset.future_positions[idx]
            masks = None
            if params.dropout > 0:
                masks = [(dropout_rng.random((len(idx), params.hidden)) < keep) / keep
                         for _ in range(4)]
            loss, grads = loss_and_grads(params, past, fut, masks, cfg.teacher_forcing)
            if not np.isfinite(loss) or not all(np.all(np.isfinite(g)) for g in grads.values()):
                raise NonFiniteLoss(batch_index, epoch, loss)
            weights = opt.step(weights, grads)
            params = params.with_weights(weights)
            batch_losses.append(loss)
            batch_index += 1
        trace.append(dataset_loss(params, dataset, cfg.teacher_forcing))
        log.debug("epoch %d loss %.5f", epoch + 1, trace[-1])
    return TrainResult(params, initial, np.array(trace), np.array(batch_losses))
