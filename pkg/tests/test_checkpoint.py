import json

import numpy as np
import pytest

from coopforecast.errors import ParseError
from coopforecast.forecaster import forward, init_params, load_checkpoint, save_checkpoint, synthetic_dataset
from coopforecast.forecaster.model import standardization_stats


def test_round_trip_is_bit_exact(tmp_path):
    ds = synthetic_dataset(n_walks=5, seed=1)
    p = init_params(6, 0.15, seed=3, stats=standardization_stats(ds.windows, ds.past))
    path = tmp_path / "m.json"
    save_checkpoint(p, path)
    q = load_checkpoint(path)
    assert (q.hidden, q.dropout, q.features) == (6, 0.15, 4)
    for k in p.weights:
        assert p.weights[k].tobytes() == q.weights[k].tobytes()
    assert p.out_std.tobytes() == q.out_std.tobytes()
    a, b = forward(p, ds.past_states, seed=2), forward(q, ds.past_states, seed=2)
    assert a[0].tobytes() == b[0].tobytes()


def test_rejects_foreign_files(tmp_path):
    path = tmp_path / "x.json"
    path.write_text("{not json")
    with pytest.raises(ParseError):
        load_checkpoint(path)
    path.write_text(json.dumps({"format": "other"}))
    with pytest.raises(ParseError):
        load_checkpoint(path)
    save_checkpoint(init_params(4), path)
    d = json.loads(path.read_text())
    d["version"] = 99
    path.write_text(json.dumps(d))
    with pytest.raises(ParseError, match="version"):
        load_checkpoint(path)
    d["version"] = 1
    d["weights"]["head.W"]["shape"] = [3, 3]
    path.write_text(json.dumps(d))
    with pytest.raises(ParseError):
        load_checkpoint(path)
    with pytest.raises(ParseError):
        load_checkpoint(tmp_path / "missing.json")
