"""Versioned JSON checkpoints. Floats are written with repr precision, so a
save/load round trip is bit-exact."""
import json

import numpy as np

from coopforecast.data import atomic_write_text
from coopforecast.errors import ParseError
from coopforecast.forecaster.model import ModelParams

FORMAT = "coopforecast-checkpoint"
VERSION = 1


def params_to_dict(params):
    return {
        "format": FORMAT,
        "version": VERSION,
        "hidden": params.hidden,
        "dropout": params.dropout,
        "features": params.features,
        "past": params.past,
        "future": params.future,
        "stats": {k: getattr(params, k).tolist() for k in ("in_mean", "in_std", "out_mean", "out_std")},
        "weights": {
            k: {"shape": list(w.shape), "data": w.ravel().tolist()}
            for k, w in sorted(params.weights.items())
        },
    }


def params_from_dict(d, path=None):
    if d.get("format") != FORMAT:
        raise ParseError("not a model checkpoint", path=path)
    if d.get("version") != VERSION:
        raise ParseError(f"unsupported checkpoint version {d.get('version')}", path=path)
    try:
        weights = {k: np.array(v["data"], dtype=float).reshape(v["shape"]) for k, v in d["weights"].items()}
        stats = {k: np.array(v, dtype=float) for k, v in d["stats"].items()}
        return ModelParams(weights, int(d["hidden"]), float(d["dropout"]), int(d["features"]),
                           int(d["past"]), int(d["future"]), **stats)
    except (KeyError, ValueError, TypeError) as exc:
        raise ParseError(f"malformed checkpoint: {exc}", path=path) from exc


def dumps(params):
    return json.dumps(params_to_dict(params), sort_keys=True)


def save(params, path):
    atomic_write_text(path, dumps(params) + "\n")


def load(path):
    try:
        with open(path, encoding="utf-8") as fh:
            d = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ParseError(f"cannot read checkpoint: {exc}", path=path) from exc
    return params_from_dict(d, path)
