import dataclasses
import io

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from coopforecast.errors import EmptyScene, InputError
from coopforecast.geometry import OTHER, PointSet, algebraic_residuals, transform_to_ego
from coopforecast.scene import (
    REFERENCE_T,
    CameraRig,
    make_cloud,
    make_rig,
    observe,
    occlusion_mask,
    reference_rig,
    project,
    project_points,
    random_rig,
    read_walk_csv,
    synth_walk,
    unproject,
    with_occlusion,
    write_walk_csv,
)
from coopforecast.geometry import fundamental_from_pose


def test_reference_rig_geometry():
    rig = reference_rig()
    assert rig.baseline == pytest.approx(1.165, abs=1e-3)
    assert rig.pose.euler.yaw == pytest.approx(19.12, abs=1e-9)
    np.testing.assert_allclose(rig.pose.t, REFERENCE_T, atol=1e-12)


def test_zero_rotation_rig():
    rig = make_rig((0, 0, 0), 1.0)
    assert np.array_equal(rig.pose.R, np.eye(3))
    np.testing.assert_array_equal(rig.pose.t, [1, 0, 0])
    with pytest.raises(InputError):
        make_rig((0, 0, 0), 0.0)


def test_rig_dict_round_trip():
    rig = random_rig(np.random.default_rng(2))
    back = CameraRig.from_dict(rig.to_dict())
    assert np.array_equal(back.pose.R, rig.pose.R) and back.K1 == rig.K1


def test_exact_projection_satisfies_epipolar_constraint():
    rig = random_rig(np.random.default_rng(8))
    ms = project_points(rig, make_cloud(rig, 100))
    F = fundamental_from_pose(rig.pose, rig.K1, rig.K2)
    assert np.abs(algebraic_residuals(F, ms.matches)).max() < 1e-10
    assert ms.inlier.all() and ms.skipped == 0


def test_outlier_count_is_binomial():
    rig = reference_rig()
    cloud = make_cloud(rig, 130)
    counts = [int((~project_points(rig, cloud, 0.0, 0.23, s).inlier).sum()) for s in range(200)]
    # about 30 outliers; the draw count follows Binomial(130, 0.23)
    assert np.mean(counts) == pytest.approx(130 * 0.23, abs=1.0)
    assert stats.chisquare(np.bincount(counts, minlength=60)[15:46] + 0.0,
                           200 * stats.binom.pmf(np.arange(15, 46), 130, 0.23)
                           / stats.binom.pmf(np.arange(15, 46), 130, 0.23).sum()).pvalue > 1e-3


def test_points_behind_camera_skipped():
    rig = reference_rig()
    cloud = make_cloud(rig, 30)
    behind = np.array([[0.0, 0.0, -3.0], [0.5, 0.2, -1.0]])
    ms = project_points(rig, np.vstack([cloud, behind]))
    assert ms.skipped == 2 and len(ms.matches) == 30
    with pytest.raises(EmptyScene):
        project_points(rig, behind)


@settings(max_examples=50)
@given(st.integers(0, 10_000))
def test_unproject_inverts_projection(seed):
    rig = random_rig(np.random.default_rng(seed))
    X = rig.world_to_camera(make_cloud(rig, 20, seed), 1)
    back = unproject(rig.K1, project(rig.K1, X), X[:, 2])
    assert np.abs(back - X).max() < 1e-9


def test_straight_walk_kinematics():
    w = synth_walk("straight", 8.0, 0.4, 1.2, rng_seed=3)
    assert len(w.times) == 20 and np.allclose(np.diff(w.times), 0.4)
    assert np.linalg.norm(w.position(8.0) - w.position(0.0)) == pytest.approx(9.6, abs=1e-12)
    assert w.times[:8].size == 8 and w.times[8:].size == 12


@pytest.mark.parametrize("kind", ["straight", "turn", "s-curve"])
def test_velocity_is_derivative_of_position(kind):
    w = synth_walk(kind, rng_seed=5)
    h = 1e-3
    kinks = [t0 for t0, _ in w.segments[1:]]
    for t in w.times[1:-1]:
        if any(abs(t - k) < 3 * h for k in kinks):
            continue  # heading rate jumps here; probe just beside it instead
        # Richardson-extrapolated central difference, error O(h^4)
        d1 = (w.position(t + h) - w.position(t - h)) / (2 * h)
        d2 = (w.position(t + 2 * h) - w.position(t - 2 * h)) / (4 * h)
        fd = (4 * d1 - d2) / 3
        assert np.abs(fd - w.state(t)[1]).max() < 1e-9
    for k in kinks:
        t = k + 3 * h
        d1 = (w.position(t + h) - w.position(t - h)) / (2 * h)
        d2 = (w.position(t + 2 * h) - w.position(t - 2 * h)) / (4 * h)
        assert np.abs((4 * d1 - d2) / 3 - w.state(t)[1]).max() < 1e-9


def test_turn_heading_monotone_speed_constant():
    w = synth_walk("turn", rng_seed=4)
    t = np.linspace(0, 8, 400)
    v = np.array([w.state(x)[1] for x in t])
    heading = np.unwrap(np.arctan2(v[:, 2], v[:, 0]))
    dh = np.diff(heading)
    assert (dh >= -1e-12).all() or (dh <= 1e-12).all()
    assert np.abs(np.linalg.norm(v, axis=1) - w.speed).max() < 1e-9


def test_walks_are_seed_deterministic():
    a, b = synth_walk("s-curve", rng_seed=9), synth_walk("s-curve", rng_seed=9)
    assert a.xyz.tobytes() == b.xyz.tobytes()


def test_observe_from_world_origin():
    w = synth_walk("turn", rng_seed=1)
    obs = observe(w, reference_rig(), 1)
    assert np.array_equal(obs.xyz, w.xyz) and np.array_equal(obs.velocity, w.velocity)


def test_full_occlusion_marks_everything_missing():
    w = synth_walk(rng_seed=1)
    w = dataclasses.replace(w, occluded=np.ones_like(w.occluded))
    assert observe(w, reference_rig(), 2).missing.all()


def test_occlusion_masks():
    t = np.arange(20) * 0.4
    np.testing.assert_array_equal(np.flatnonzero(occlusion_mask(t, "intermittent")), [3, 4, 5, 6, 7])
    np.testing.assert_array_equal(np.flatnonzero(occlusion_mask(t, "partial")), [0, 1, 2])
    w = with_occlusion(synth_walk(), "partial")
    assert w.occluded[:, 1].sum() == 3 and not w.occluded[:, 0].any()


@settings(max_examples=60)
@given(st.integers(0, 10_000), st.sampled_from(["straight", "turn", "s-curve"]))
def test_frame_consistency(seed, kind):
    rig = random_rig(np.random.default_rng(seed))
    w = synth_walk(kind, rng_seed=seed)
    o1, o2 = observe(w, rig, 1), observe(w, rig, 2)
    moved = transform_to_ego(PointSet(o1.xyz, OTHER), rig.pose).xyz
    assert np.abs(moved - o2.xyz).max() < 1e-9


def test_walk_csv_round_trip(tmp_path):
    w = with_occlusion(synth_walk("turn", rng_seed=2), "intermittent")
    buf = io.StringIO()
    write_walk_csv(buf, w)
    p = tmp_path / "w.csv"
    p.write_text(buf.getvalue())
    t, xyz, vel, occ = read_walk_csv(p)
    assert buf.getvalue().splitlines()[0] == "t,x,y,z,u,v,occluded_cam1,occluded_cam2"
    np.testing.assert_allclose(xyz, w.xyz, atol=1e-10)
    np.testing.assert_allclose(vel, w.velocity[:, [0, 2]], atol=1e-10)
    assert np.array_equal(occ, w.occluded)
