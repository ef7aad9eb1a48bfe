import json

import numpy as np
import pytest

from coopforecast.errors import InputError, StageError
from coopforecast.forecaster import init_params, synthetic_dataset
from coopforecast.forecaster.model import standardization_stats
from coopforecast.scenarios import (
    CONTAINMENT_CUTOFF,
    PoseSettings,
    SensitivityConfig,
    calibrated_walk,
    default_walks,
    estimate_pose,
    run_cooperative,
    run_occlusion,
    run_occlusion_suite,
    run_reliability,
    run_sensitivity,
    substreams,
)
from coopforecast.scene import reference_estimated_pose, reference_rig, synth_walk

EXACT = PoseSettings(sigma_px=0.0, outlier_fraction=0.0)


@pytest.fixture(scope="module")
def model():
    ds = synthetic_dataset(n_walks=20, seed=0)
    return init_params(8, 0.1, seed=0, stats=standardization_stats(ds.windows, ds.past))


def test_substreams_are_named_and_distinct():
    s = substreams(0)
    assert set(s) == {"cloud", "pixels", "ransac", "dropout", "noise"}
    assert len(set(s.values())) == 5 and s == substreams(0) and s != substreams(1)


def test_exact_matches_transfer_exactly(model):
    rep = run_cooperative(reference_rig(), synth_walk(rng_seed=0), model, 4, settings=EXACT)
    assert rep.ade["transfer"]["mean"] < 1e-6
    assert rep.pose_error["max_euler_error_deg"] < 1e-6


def test_reference_rig_noise_stays_within_a_meter():
    rep = run_reliability(reference_rig())
    assert rep.summary["within_1m"] and rep.summary["max_error_m"] < 1.0


def test_cooperative_is_deterministic(model, tmp_path):
    a = run_cooperative(reference_rig(), synth_walk("turn", rng_seed=1), model, 6, seed=3)
    b = run_cooperative(reference_rig(), synth_walk("turn", rng_seed=1), model, 6, seed=3)
    for name in a.tables:
        assert a.tables[name].to_csv() == b.tables[name].to_csv()
    paths = a.write(str(tmp_path))
    doc = json.loads((tmp_path / "report.json").read_text())
    assert doc["name"] == "cooperative" and len(doc["divergence"]["kl_nats"]) == 12
    assert {p.rsplit("/", 1)[-1] for p in paths} >= {"trajectory.csv", "divergence.csv", "report.json"}


@pytest.mark.parametrize("seed", range(5))
def test_true_pose_lower_bounds_estimate(model, seed):
    rig, walk = reference_rig(), default_walks()[seed]
    est = run_cooperative(rig, walk, model, 2, seed)
    truth = run_cooperative(rig, walk, model, 2, seed, pose=rig.pose)
    assert truth.ade["transfer"]["mean"] < est.ade["transfer"]["mean"]


def test_stage_errors_are_tagged(model):
    with pytest.raises(StageError) as exc:
        estimate_pose(reference_rig(), 0, PoseSettings(n_points=5))
    assert exc.value.stage == "matching" and exc.value.exit_code == 2
    with pytest.raises(StageError) as exc:
        estimate_pose(reference_rig(), 0, PoseSettings(threshold=-1.0))
    assert exc.value.stage == "pose"


def test_empty_mask_equals_cooperative(model):
    rig, walk = reference_rig(), synth_walk("s-curve", rng_seed=2)
    coop = run_cooperative(rig, walk, model, 8, seed=1)
    occ = run_occlusion("none", rig, walk, model, 8, seed=1)
    for a, b in zip(coop._forecasts, occ._forecasts):
        assert a.means.tobytes() == b.means.tobytes() and a.covs.tobytes() == b.covs.tobytes()
    assert occ.summary["masked_samples"] == 0


@pytest.mark.parametrize("kind", ["intermittent", "partial"])
def test_occlusion_report(model, kind):
    rig = reference_rig()
    rep = run_occlusion(kind, rig, synth_walk(rng_seed=0), model, 8, seed=0)
    s = rep.summary
    assert s["chi2_cutoff"] == CONTAINMENT_CUTOFF[kind]
    assert s["masked_samples"] == {"intermittent": 5, "partial": 3}[kind]
    assert s["evaluated"] == 12 and 0 <= s["contained"] <= 12
    # the transferred track lines up with what camera 2 sees once it is visible
    assert rep.ade["visible_suffix"]["mean"] < 0.2
    rows = rep.tables["containment"].to_csv().splitlines()
    assert rows[0].endswith("mahalanobis_sq,inside") and len(rows) == 13
    ego = run_occlusion(kind, rig, synth_walk(rng_seed=0), model, 8, seed=0, use_ego_track=True)
    assert ego.summary["input"] == "ego_track"


def test_suite_aggregates(model):
    agg, reps = run_occlusion_suite("intermittent", reference_rig(), model, default_walks((0, 1)), 4)
    assert agg.summary["evaluated"] == 24 and len(reps) == 2
    assert agg.summary["passed"] == (agg.summary["containment"] >= 0.75)


def test_sensitivity_config_validation():
    with pytest.raises(InputError):
        SensitivityConfig(sigmas=(0.1, 0.05))
    with pytest.raises(InputError):
        SensitivityConfig(samples=1)


def test_zero_noise_reproduces_baseline():
    rig = reference_rig()
    walk = synth_walk(rng_seed=0)
    res = run_sensitivity(SensitivityConfig(sigmas=(0.0, 0.1), samples=5), rig, walk, reference_estimated_pose())
    assert np.all(res.ade[0] == res.baseline_ade) and res.stds[0] == 0.0
    assert res.table().to_csv().splitlines()[0] == "sigma_pct,ade_mean,ade_std,samples"


def test_sensitivity_grid_points_independent():
    rig, walk = reference_rig(), synth_walk(rng_seed=0)
    a = run_sensitivity(SensitivityConfig(sigmas=(0.05, 0.1), samples=4, seed=2), rig, walk)
    b = run_sensitivity(SensitivityConfig(sigmas=(0.05, 0.1, 0.2), samples=4, seed=2), rig, walk)
    assert np.array_equal(a.ade, b.ade[:2])


def test_calibrated_walk_hits_target():
    rig, nominal = reference_rig(), reference_estimated_pose()
    walk = calibrated_walk(rig, nominal, 0.2)
    res = run_sensitivity(SensitivityConfig(sigmas=(0.0, 0.01), samples=2), rig, walk, nominal)
    assert res.baseline_ade == pytest.approx(0.2, abs=1e-9)
    with pytest.raises(InputError):
        calibrated_walk(rig, rig.pose, 0.2)
