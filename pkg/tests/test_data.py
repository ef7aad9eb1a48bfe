import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from coopforecast.data import (
    DuplicateRecordWarning,
    RawRecord,
    cache_bytes,
    load_cache,
    load_raw,
    records_to_text,
    save_cache,
    split,
    window,
)
from coopforecast.errors import EmptyFile, InputError, ParseError

STEP = 10  # frames per 0.4 s at 25 fps


def track(ped, n, x0=0.0, vx=1.0, vy=0.5, start=0):
    return [RawRecord(start + STEP * k, ped, x0 + vx * 0.4 * k, vy * 0.4 * k) for k in range(n)]


def write(tmp_path, text, name="eth.txt"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def test_load_well_formed(tmp_path):
    p = write(tmp_path, "0 1 0.0 0.0\n10 1 0.4 0.1\n0 2 5.0 5.0\n10 2 5.4 5.0\n")
    recs = load_raw(p)
    assert len(recs) == 4
    assert [(r.ped, r.frame) for r in recs] == [(1, 0), (1, 10), (2, 0), (2, 10)]


def test_load_errors(tmp_path):
    with pytest.raises(ParseError) as exc:
        load_raw(write(tmp_path, "0 1 0.0 0.0\n10 1 abc 0.1\n"))
    assert exc.value.line == 2
    with pytest.raises(ParseError):
        load_raw(write(tmp_path, "0 1 0.0\n"))
    with pytest.raises(EmptyFile):
        load_raw(write(tmp_path, "\n# nothing\n"))
    with pytest.raises(ParseError):
        load_raw(str(tmp_path / "missing.txt"))


def test_duplicate_last_wins(tmp_path):
    p = write(tmp_path, "0 1 0.0 0.0\n0 1 9.0 9.0\n")
    with pytest.warns(DuplicateRecordWarning):
        recs = load_raw(p)
    assert recs == [RawRecord(0, 1, 9.0, 9.0)]


def test_column_map(tmp_path):
    p = write(tmp_path, "0.0 0.0 1 0\n0.4 0.1 1 10\n")
    recs = load_raw(p, columns=(3, 2, 0, 1))
    assert recs[1] == RawRecord(10, 1, 0.4, 0.1)


def test_window_counts():
    assert len(window(track(1, 20))) == 1
    assert len(window(track(1, 21))) == 2
    ds = window(track(1, 19) + track(2, 25))
    assert len(ds) == 6 and ds.skipped == 1


@settings(max_examples=40, deadline=None)
@given(st.lists(st.integers(1, 40), min_size=1, max_size=6))
def test_window_count_formula(lengths):
    recs = [r for i, n in enumerate(lengths) for r in track(i, n)]
    assert len(window(recs)) == sum(max(0, n - 19) for n in lengths)


def test_constant_velocity_is_exact():
    ds = window(track(1, 30, vx=1.3, vy=-0.7))
    assert np.abs(ds.windows[..., 2] - 1.3).max() < 1e-9
    assert np.abs(ds.windows[..., 3] + 0.7).max() < 1e-9


def test_resampling_uniform_track_is_idempotent():
    rng = np.random.default_rng(0)
    xy = np.cumsum(rng.normal(size=(25, 2)), axis=0)
    recs = [RawRecord(STEP * k, 3, *xy[k]) for k in range(25)]
    ds = window(recs)
    np.testing.assert_allclose(ds.windows[0, :, :2], xy[:20], atol=1e-9)
    np.testing.assert_allclose(ds.windows[5, :, :2], xy[5:25], atol=1e-9)


def test_resampling_interpolates_irregular_frames():
    # positions sampled every 4 frames on a straight line resample exactly
    recs = [RawRecord(4 * k, 1, 0.16 * k, 0.0) for k in range(60)]
    ds = window(recs)
    np.testing.assert_allclose(ds.windows[0, :, 0], 0.4 * np.arange(20), atol=1e-9)


def _peds(n, length=22):
    return [r for i in range(n) for r in track(i, length, x0=i)]


def test_split_by_pedestrian():
    ds = window(_peds(10))
    train, test = split(ds, 0.2, seed=1)
    assert len(np.unique(test.ped_ids)) == 2
    assert not set(train.ped_ids) & set(test.ped_ids)
    a, b = split(ds, 0.2, seed=1)
    assert np.array_equal(a.ped_ids, train.ped_ids) and np.array_equal(b.windows, test.windows)
    with pytest.raises(InputError):
        split(ds, 1.0)


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 15), st.floats(0.05, 0.95), st.integers(0, 100))
def test_split_never_leaks(n, frac, seed):
    ds = window(_peds(n, 20))
    train, test = split(ds, frac, seed)
    assert not set(train.ped_ids) & set(test.ped_ids)
    assert len(train) + len(test) == len(ds)


def test_cache_round_trip_and_checksum(tmp_path):
    ds = window(_peds(4, 23), source="unit")
    p = tmp_path / "c.bin"
    save_cache(ds, p)
    back = load_cache(p)
    assert back.windows.tobytes() == ds.windows.tobytes()
    assert np.array_equal(back.ped_ids, ds.ped_ids) and back.source == "unit"
    assert cache_bytes(ds) == cache_bytes(window(_peds(4, 23), source="unit"))
    blob = bytearray(p.read_bytes())
    blob[-1] ^= 0xFF
    p.write_bytes(bytes(blob))
    with pytest.raises(ParseError, match="checksum"):
        load_cache(p)
    p.write_bytes(b"garbage!" + bytes(20))
    with pytest.raises(ParseError):
        load_cache(p)


def test_records_text_round_trip(tmp_path):
    recs = track(1, 5) + track(2, 3)
    p = write(tmp_path, records_to_text(recs))
    assert [(r.frame, r.ped) for r in load_raw(p)] == [(r.frame, r.ped) for r in recs]
