"""Two-layer LSTM encoder, two-layer LSTM decoder, linear Gaussian head.

Everything is plain numpy with a hand-written backward pass. Arrays are
batched: past trajectories have shape (B, T, 4) holding [x, y, u, v].

The network works in a translation-free, standardized space: positions are
taken relative to the last observed position (the anchor) and the decoder
predicts offsets from that anchor. Each decoder step is fed the previous
offset: the ground truth under teacher forcing, otherwise its own previous
mean. The head emits (mean x, mean y, log var x, log var y) per step.

Dropout is variational: one Bernoulli mask per LSTM layer, applied to the
recurrent hidden state and held fixed across time steps.
"""
from dataclasses import dataclass, field, replace

import numpy as np

from coopforecast.errors import InputError, ShapeMismatch

LAYERS = ("enc0", "enc1", "dec0", "dec1")
FEED_DIM = 2
HEAD_DIM = 4


@dataclass(frozen=True)
class ModelParams:
    weights: dict
    hidden: int
    dropout: float = 0.1
    features: int = 4
    past: int = 8
    future: int = 12
    in_mean: np.ndarray = None
    in_std: np.ndarray = None
    out_mean: np.ndarray = None
    out_std: np.ndarray = None

    def __post_init__(self):
        if not 0.0 <= self.dropout < 1.0:
            raise InputError("dropout probability must lie in [0, 1)")
        if self.features not in (2, 4):
            raise InputError("features must be 2 (positions) or 4 (positions + velocities)")
        defaults = {
            "in_mean": np.zeros(self.features),
            "in_std": np.ones(self.features),
            "out_mean": np.zeros(2),
            "out_std": np.ones(2),
        }
        for k, v in defaults.items():
            arr = v if getattr(self, k) is None else np.asarray(getattr(self, k), dtype=float)
            object.__setattr__(self, k, arr)
        for name, shape in param_shapes(self.hidden, self.features).items():
            w = self.weights.get(name)
            if w is None or w.shape != shape:
                raise ShapeMismatch(f"{name}: expected {shape}, got {None if w is None else w.shape}")
            if not np.all(np.isfinite(w)):
                raise InputError(f"{name} has non-finite entries")

    def with_weights(self, weights):
        return replace(self, weights=weights)

    @property
    def n_parameters(self):
        return sum(w.size for w in self.weights.values())


def param_shapes(hidden, features):
    H = hidden
    ins = {"enc0": features, "enc1": H, "dec0": FEED_DIM, "dec1": H}
    shapes = {}
    for layer in LAYERS:
        shapes[f"{layer}.Wx"] = (ins[layer], 4 * H)
        shapes[f"{layer}.Wh"] = (H, 4 * H)
        shapes[f"{layer}.b"] = (4 * H,)
    shapes["head.W"] = (H, HEAD_DIM)
    shapes["head.b"] = (HEAD_DIM,)
    return shapes


def init_params(hidden=32, dropout=0.1, features=4, past=8, future=12, seed=0, stats=None):
    """Uniform(+-1/sqrt(H)) weights, forget-gate bias 1, zero head bias."""
    rng = np.random.default_rng(seed)
    bound = 1.0 / np.sqrt(hidden)
    weights = {}
    for name, shape in param_shapes(hidden, features).items():
        if name.endswith(".b"):
            w = np.zeros(shape)
            if not name.startswith("head"):
                w[hidden : 2 * hidden] = 1.0
        else:
            w = rng.uniform(-bound, bound, shape)
        weights[name] = w
    stats = stats or {}
    return ModelParams(weights, hidden, dropout, features, past, future, **stats)


def standardization_stats(windows, past, features=4):
    """Model-space mean/std of inputs and target offsets for (M, T+F, 4) windows."""
    windows = np.asarray(windows, dtype=float)
    z, anchor = _relative_inputs(windows[:, :past], features)
    offsets = windows[:, past:, :2] - anchor[:, None, :]
    in_mean = z.reshape(-1, features).mean(axis=0)
    in_std = z.reshape(-1, features).std(axis=0)
    out_mean = offsets.reshape(-1, 2).mean(axis=0)
    out_std = offsets.reshape(-1, 2).std(axis=0)
    in_std = np.where(in_std > 1e-8, in_std, 1.0)
    out_std = np.where(out_std > 1e-8, out_std, 1.0)
    return {"in_mean": in_mean, "in_std": in_std, "out_mean": out_mean, "out_std": out_std}


def _relative_inputs(past, features):
    anchor = past[:, -1, :2]
    rel = past[:, :, :2] - anchor[:, None, :]
    feats = rel if features == 2 else np.concatenate([rel, past[:, :, 2:4]], axis=2)
    return feats, anchor


def encode_inputs(params, past):
    feats, anchor = _relative_inputs(past, params.features)
    return (feats - params.in_mean) / params.in_std, anchor


def teacher_feeds(params, future_xy, anchor):
    """Standardized previous offsets fed to each decoder step (B, F, 2)."""
    B = len(anchor)
    prev = np.concatenate([np.zeros((B, 1, 2)), future_xy[:, :-1] - anchor[:, None, :]], axis=1)
    return (prev - params.out_mean) / params.out_std


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _cell(x, h, c, Wx, Wh, b, mask):
    H = h.shape[1]
    hm = h if mask is None else h * mask
    z = x @ Wx + hm @ Wh + b
    i = _sigmoid(z[:, :H])
    f = _sigmoid(z[:, H : 2 * H])
    g = np.tanh(z[:, 2 * H : 3 * H])
    o = _sigmoid(z[:, 3 * H :])
    c_new = f * c + i * g
    tc = np.tanh(c_new)
    return o * tc, c_new, (x, hm, c, i, f, g, o, tc)


def _cell_backward(dh, dc, cache, Wx, Wh, mask, gWx, gWh, gb):
    x, hm, c, i, f, g, o, tc = cache
    do = dh * tc
    dc = dc + dh * o * (1.0 - tc * tc)
    dz = np.concatenate(
        [dc * g * i * (1.0 - i), dc * c * f * (1.0 - f), dc * i * (1.0 - g * g), do * o * (1.0 - o)],
        axis=1,
    )
    gWx += x.T @ dz
    gWh += hm.T @ dz
    gb += dz.sum(axis=0)
    dx = dz @ Wx.T
    dh_prev = dz @ Wh.T
    if mask is not None:
        dh_prev *= mask
    return dx, dh_prev, dc * f


@dataclass
class _Tape:
    enc: list = field(default_factory=list)
    dec: list = field(default_factory=list)
    head_in: list = field(default_factory=list)
    closed_loop: bool = True


def run(params, z, masks=None, feeds=None, record=False):
    """Core recurrence in model space.

    z: (B, T, D) standardized inputs; masks: None or 4 arrays (B, H) of
    scaled keep-masks for enc0, enc1, dec0, dec1; feeds: (B, F, 2) teacher
    inputs or None for closed-loop decoding. Returns head outputs (B, F, 4)
    and, if `record`, a tape for `backprop`.
    """
    W = params.weights
    B, T, _ = z.shape
    H = params.hidden
    masks = masks if masks is not None else (None,) * 4
    tape = _Tape(closed_loop=feeds is None) if record else None
    h = [np.zeros((B, H)), np.zeros((B, H))]
    c = [np.zeros((B, H)), np.zeros((B, H))]
    for t in range(T):
        x = z[:, t]
        step = []
        for layer in (0, 1):
            name = LAYERS[layer]
            x, c[layer], cache = _cell(x, h[layer], c[layer], W[name + ".Wx"], W[name + ".Wh"],
                                       W[name + ".b"], masks[layer])
            h[layer] = x
            step.append(cache)
        if record:
            tape.enc.append(step)

    feed = np.broadcast_to(-params.out_mean / params.out_std, (B, 2))
    outs = np.empty((B, params.future, HEAD_DIM))
    for k in range(params.future):
        x = feeds[:, k] if feeds is not None else feed
        step = []
        for layer in (0, 1):
            name = LAYERS[2 + layer]
            x, c[layer], cache = _cell(x, h[layer], c[layer], W[name + ".Wx"], W[name + ".Wh"],
                                       W[name + ".b"], masks[2 + layer])
            h[layer] = x
            step.append(cache)
        out = x @ W["head.W"] + W["head.b"]
        outs[:, k] = out
        feed = out[:, :2]
        if record:
            tape.dec.append(step)
            tape.head_in.append(x)
    return outs, tape


def backprop(params, tape, dout, masks=None):
    """Gradients of a scalar loss given dL/d(head outputs) of shape (B, F, 4)."""
    W = params.weights
    masks = masks if masks is not None else (None,) * 4
    grads = {k: np.zeros_like(v) for k, v in W.items()}
    B, F, _ = dout.shape
    H = params.hidden
    dh = [np.zeros((B, H)), np.zeros((B, H))]
    dc = [np.zeros((B, H)), np.zeros((B, H))]
    dfeed = np.zeros((B, 2))
    for k in reversed(range(F)):
        do = dout[:, k].copy()
        if tape.closed_loop:
            do[:, :2] += dfeed
        grads["head.W"] += tape.head_in[k].T @ do
        grads["head.b"] += do.sum(axis=0)
        dx = do @ W["head.W"].T
        for layer in (1, 0):
            name = LAYERS[2 + layer]
            dx, dh[layer], dc[layer] = _cell_backward(
                dx + dh[layer], dc[layer], tape.dec[k][layer], W[name + ".Wx"], W[name + ".Wh"],
                masks[2 + layer], grads[name + ".Wx"], grads[name + ".Wh"], grads[name + ".b"],
            )
        dfeed = dx
    for t in reversed(range(len(tape.enc))):
        dx = np.zeros((B, H))
        for layer in (1, 0):
            name = LAYERS[layer]
            dx, dh[layer], dc[layer] = _cell_backward(
                dx + dh[layer], dc[layer], tape.enc[t][layer], W[name + ".Wx"], W[name + ".Wh"],
                masks[layer], grads[name + ".Wx"], grads[name + ".Wh"], grads[name + ".b"],
            )
    return grads


def decode_outputs(params, outs, anchor):
    """Head outputs -> physical means (B, F, 2) and log-variances (B, F, 2)."""
    means = anchor[:, None, :] + params.out_mean + params.out_std * outs[..., :2]
    logvars = outs[..., 2:] + 2.0 * np.log(params.out_std)
    return means, logvars


def output_grad(params, dmeans, dlogvars):
    return np.concatenate([dmeans * params.out_std, dlogvars], axis=-1)


def pass_masks(params, seed, index):
    """Keep-masks (4, H) for one stochastic pass, derived from (seed, index) only."""
    if params.dropout == 0.0:
        return None
    rng = np.random.default_rng([seed, index])
    keep = 1.0 - params.dropout
    return (rng.random((4, params.hidden)) < keep) / keep


def _check_past(params, past):
    past = np.asarray(past, dtype=float)
    single = past.ndim == 2
    if single:
        past = past[None]
    if past.ndim != 3 or past.shape[1] != params.past or past.shape[2] != 4:
        raise ShapeMismatch(f"past must have shape (B, {params.past}, 4), got {past.shape}")
    return past, single


def forward(params, past, seed=None, targets=None):
    """Predicted means and log-variances for the next `future` positions.

    `past` is (T, 4) or (B, T, 4). Without a seed the pass is deterministic;
    with one, each layer gets the dropout mask of stochastic pass 0 for that
    seed (the same mask `mc_dropout_infer` uses for its first pass).
    `targets` (B, F, 2) switches the decoder to teacher forcing.
    """
    past, single = _check_past(params, past)
    z, anchor = encode_inputs(params, past)
    masks = None
    m = None if seed is None else pass_masks(params, seed, 0)
    if m is not None:
        masks = [np.broadcast_to(m[l], (len(z), params.hidden)) for l in range(4)]
    feeds = None
    if targets is not None:
        targets = np.asarray(targets, dtype=float).reshape(len(z), params.future, 2)
        feeds = teacher_feeds(params, targets, anchor)
    outs, _ = run(params, z, masks, feeds)
    means, logvars = decode_outputs(params, outs, anchor)
    if single:
        return means[0], logvars[0]
    return means, logvars


VAR_FLOOR = 1e-6


def nll_loss(pred_means, pred_log_vars, targets, with_grad=False):
    """Mean over steps and coordinates of e^2 / S + log(S) / 2, S = max(exp(lv), 1e-6).

    With `with_grad`, also returns dL/dmeans and dL/dlog_vars. The floor is a
    hard clamp, so the log-variance gradient is zero where it is active.
    """
    mu = np.asarray(pred_means, dtype=float)
    lv = np.asarray(pred_log_vars, dtype=float)
    y = np.asarray(targets, dtype=float)
    if mu.shape != y.shape or lv.shape != y.shape:
        raise ShapeMismatch(f"means {mu.shape}, log-vars {lv.shape}, targets {y.shape} must agree")
    with np.errstate(over="ignore"):
        S_raw = np.exp(lv)
    S = np.maximum(S_raw, VAR_FLOOR)
    e = mu - y
    n = e.size
    loss = float(np.sum(e * e / S + 0.5 * np.log(S)) / n)
    if not with_grad:
        return loss
    dmu = 2.0 * e / S / n
    dlv = np.where(S_raw >= VAR_FLOOR, 0.5 - e * e / S, 0.0) / n
    return loss, dmu, dlv


def loss_and_grads(params, past, future_xy, masks=None, teacher=True):
    """NLL of a batch and its gradient with respect to every weight."""
    z, anchor = encode_inputs(params, past)
    feeds = teacher_feeds(params, future_xy, anchor) if teacher else None
    outs, tape = run(params, z, masks, feeds, record=True)
    means, logvars = decode_outputs(params, outs, anchor)
    loss, dmu, dlv = nll_loss(means, logvars, future_xy, with_grad=True)
    return loss, backprop(params, tape, output_grad(params, dmu, dlv), masks)
