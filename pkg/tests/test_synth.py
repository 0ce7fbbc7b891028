import numpy as np
import pytest

from oracles import diameter_oracle
from dgecn.errors import InvalidRadius, InvalidRate, InvalidSigma, SphereBehindCamera, TooFewVertices, ValidationError
from dgecn.geometry import Pose, project
from dgecn.keypoints import fps_select
from dgecn.metrics import model_diameter
from dgecn.synth import (
    SynthConfig,
    default_camera,
    generate_correspondences,
    generate_dataset,
    gradient_background_rgb,
    make_sphere_model,
    render_depth,
    sample_pose,
    sphere_depth,
)


def test_default_camera():
    cam = default_camera()
    assert (cam.width, cam.height) == (640, 480)
    assert cam.focal_x == cam.focal_y == 800
    assert (cam.principal_x, cam.principal_y) == (320, 240)


def test_sphere_model():
    mesh = make_sphere_model(0.1, 777, rng_seed=3)
    np.testing.assert_allclose(np.linalg.norm(mesh.vertices, axis=1), 0.1, atol=1e-12)
    np.testing.assert_array_equal(mesh.vertices, make_sphere_model(0.1, 777, rng_seed=3).vertices)


def test_sphere_diameter_close_to_two_radii():
    mesh = make_sphere_model(0.1, 500)
    d = model_diameter(mesh)
    assert abs(d - 0.2) / 0.2 < 0.02
    small = make_sphere_model(0.1, 60)
    assert model_diameter(small) == pytest.approx(diameter_oracle(small.vertices.tolist()), abs=1e-12)


def test_sphere_errors():
    with pytest.raises(InvalidRadius):
        make_sphere_model(0.0, 100)
    with pytest.raises(TooFewVertices):
        make_sphere_model(0.1, 3)


def test_sample_pose_statistics():
    rng = np.random.default_rng(0)
    cam = default_camera()
    Rs, zs, px = [], [], []
    for _ in range(10000):
        p = sample_pose(rng, (1.0, 2.0), cam)
        Rs.append(p.rotation)
        zs.append(p.translation[2])
        px.append(project(cam, p.translation))
    assert np.max(np.abs(np.mean(Rs, axis=0))) < 0.05
    zs, px = np.array(zs), np.array(px)
    assert zs.min() >= 1.0 and zs.max() <= 2.0
    assert np.all((px[:, 0] >= 0.1 * 640) & (px[:, 0] <= 0.9 * 640))
    assert np.all((px[:, 1] >= 0.1 * 480) & (px[:, 1] <= 0.9 * 480))


def test_sample_pose_keeps_object_in_frame():
    rng = np.random.default_rng(1)
    cam = default_camera()
    mesh = make_sphere_model(0.1, 200)
    for _ in range(300):
        p = sample_pose(rng, (1.0, 2.0), cam, object_radius=0.1)
        uv = project(cam, p.apply(mesh.vertices))
        assert np.all((uv >= 0) & (uv < [640, 480]))


def test_sample_pose_bad_range():
    with pytest.raises(ValidationError):
        sample_pose(np.random.default_rng(0), (2.0, 1.0))


def test_gradient_background():
    cam = default_camera()
    np.testing.assert_array_equal(gradient_background_rgb([0, 0], cam), [0, 0, 0.5])
    np.testing.assert_array_equal(gradient_background_rgb([639, 479], cam), [639 / 640, 479 / 480, 0.5])
    np.testing.assert_array_equal(gradient_background_rgb([10, 20], cam), gradient_background_rgb([10, 20], cam))


def test_render_depth_examples():
    cam = default_camera()
    dm = render_depth(None, Pose(np.eye(3), [0, 0, 2]), cam, 0.5)
    assert dm.values[240, 320] == pytest.approx(1.5, abs=1e-12)
    assert not dm.valid[0, 0]
    with pytest.raises(SphereBehindCamera):
        render_depth(None, Pose(np.eye(3), [0, 0, 0.4]), cam, 0.5)


def _ray_march(dx, dy, center, radius, steps=10000, far=4.0):
    s = np.linspace(0, far, steps)
    pts = np.stack([s * dx, s * dy, s], axis=1)
    inside = np.linalg.norm(pts - center, axis=1) <= radius
    if not inside.any():
        return np.nan
    return s[np.argmax(inside)]


def test_render_depth_ray_march_oracle():
    from dgecn.geometry import CameraIntrinsics

    cam = CameraIntrinsics(80.0, 80.0, 32.0, 24.0, 64, 48)
    center = np.array([0.05, -0.03, 1.5])
    dm = render_depth(None, Pose(np.eye(3), center), cam, 0.3)
    checked = 0
    for v in range(0, 48, 3):
        for u in range(0, 64, 3):
            if not dm.valid[v, u]:
                continue
            dx, dy = (u - 32.0) / 80.0, (v - 24.0) / 80.0
            ref = _ray_march(dx, dy, center, 0.3)
            if np.isnan(ref):
                continue
            assert abs(dm.values[v, u] - ref) < 1e-3
            checked += 1
    assert checked > 20


def _kps(n=8):
    return fps_select(make_sphere_model(0.1, 300), n)


def test_noiseless_correspondences_exact():
    cam = default_camera()
    kps = _kps()
    pose = Pose(np.eye(3), [0.02, -0.01, 1.5])
    cs = generate_correspondences(kps, pose, cam, 10, 0.0, 0.0, np.random.default_rng(0), sphere_radius=0.1)
    exact = project(cam, pose.apply(kps.points))
    assert np.max(np.abs(cs.pixels - exact[:, None, :])) < 1e-9
    assert not cs.is_outlier.any()
    assert np.all(np.isfinite(cs.depth))


def test_outlier_count_exact():
    cam = default_camera()
    pose = Pose(np.eye(3), [0, 0, 1.5])
    cs = generate_correspondences(_kps(), pose, cam, 10, 1.0, 0.30, np.random.default_rng(0))
    assert cs.is_outlier.sum() == 24
    cs = generate_correspondences(_kps(), pose, cam, 10, 1.0, 0.10, np.random.default_rng(0))
    assert cs.is_outlier.sum() == 8


def test_noise_variance_is_sigma():
    cam = default_camera()
    kps = _kps()
    pose = Pose(np.eye(3), [0, 0, 1.5])
    exact = project(cam, pose.apply(kps.points))
    rng = np.random.default_rng(7)
    diffs = []
    while sum(len(d) for d in diffs) < 50000:
        cs = generate_correspondences(kps, pose, cam, 100, 4.0, 0.0, rng, sphere_radius=0.1)
        diffs.append((cs.pixels - exact[:, None, :]).reshape(-1, 2))
    d = np.concatenate(diffs)
    var = d.var(axis=0)
    assert np.all(np.abs(var - 4.0) < 0.2)


def test_pixels_in_bounds_and_rgb_range():
    cam = default_camera()
    rng = np.random.default_rng(3)
    for _ in range(50):
        pose = sample_pose(rng, (1.0, 2.0), cam, object_radius=0.1)
        cs = generate_correspondences(_kps(), pose, cam, 10, 15.0, 0.3, rng, sphere_radius=0.1)
        assert np.all((cs.pixels >= 0) & (cs.pixels < [640, 480]))
        assert np.all((cs.rgb >= 0) & (cs.rgb <= 1))


def test_correspondence_errors():
    cam = default_camera()
    pose = Pose(np.eye(3), [0, 0, 1.5])
    with pytest.raises(InvalidSigma):
        generate_correspondences(_kps(), pose, cam, 10, -1.0, 0.1, np.random.default_rng(0))
    with pytest.raises(InvalidRate):
        generate_correspondences(_kps(), pose, cam, 10, 1.0, 1.0, np.random.default_rng(0))


def test_dataset_determinism_and_split_disjoint():
    cfg = SynthConfig(n_train=40, n_test=20)
    tr1, te1 = generate_dataset(cfg, 5)
    tr2, te2 = generate_dataset(cfg, 5)
    assert len(tr1) == 40 and len(te1) == 20
    for a, b in zip(tr1 + te1, tr2 + te2):
        np.testing.assert_array_equal(a.correspondences.pixels, b.correspondences.pixels)
        np.testing.assert_array_equal(a.gt_pose.rotation, b.gt_pose.rotation)
    train_t = {tuple(s.gt_pose.translation) for s in tr1}
    assert not train_t & {tuple(s.gt_pose.translation) for s in te1}


def test_dataset_split_selection_matches_both():
    cfg = SynthConfig(n_train=5, n_test=3)
    tr, te = generate_dataset(cfg, 1)
    te_only = generate_dataset(cfg, 1, split="test")
    for a, b in zip(te, te_only):
        np.testing.assert_array_equal(a.correspondences.pixels, b.correspondences.pixels)


def test_default_config_sizes():
    cfg = SynthConfig()
    assert (cfg.n_train, cfg.n_test) == (20000, 2000)
    with pytest.raises(InvalidSigma, match=r"\[0, 15\]"):
        SynthConfig(sigma_range=(0, 16))


def test_depth_noise_path_uses_refined_map():
    cfg = SynthConfig(n_train=3, n_test=1, depth_noise_std=0.02, drn_tau=0.05, kfa_k=4)
    tr, _ = generate_dataset(cfg, 0)
    for s in tr:
        assert s.correspondences.kfa.shape == (8, 10, 4)
        assert np.all(np.isfinite(s.correspondences.kfa))


def test_sphere_depth_matches_render(rng):
    cam = default_camera()
    pose = Pose(np.eye(3), [0.1, 0.05, 1.2])
    dm = render_depth(None, pose, cam, 0.1)
    px = np.stack([rng.integers(0, 640, 200), rng.integers(0, 480, 200)], axis=1).astype(float)
    np.testing.assert_array_equal(sphere_depth(px, pose.translation, 0.1, cam), dm.lookup(px))


def test_sphere_image_extent_matches_dense_projection():
    from dgecn.synth import sphere_image_extent

    cam = default_camera()
    mesh = make_sphere_model(0.1, 20000)
    for center in ([0.3, -0.2, 1.0], [0.0, 0.0, 1.5], [-0.4, 0.25, 1.2]):
        uv = project(cam, mesh.vertices + center)
        u0, u1, v0, v1 = sphere_image_extent(center, 0.1, cam)
        assert u0 <= uv[:, 0].min() + 1e-9 and uv[:, 0].max() <= u1 + 1e-9
        assert v0 <= uv[:, 1].min() + 1e-9 and uv[:, 1].max() <= v1 + 1e-9
        # dense lattice gets within a fraction of a pixel of the exact bound
        assert uv[:, 0].min() - u0 < 0.5 and u1 - uv[:, 0].max() < 0.5
