import numpy as np
import pytest

from splatwear.core import (
    CameraModel,
    GaussianLayer,
    LayerId,
    LossWeights,
    covariance_from_rotation_scale,
    quat_to_matrix,
    validate_layer,
)

IDENTITY_Q = np.array([1.0, 0.0, 0.0, 0.0])


def random_unit_quats(rng, n):
    q = rng.normal(size=(n, 4))
    return q / np.linalg.norm(q, axis=1, keepdims=True)


class TestCovariance:
    def test_identity(self):
        sigma = covariance_from_rotation_scale(IDENTITY_Q, np.ones(3))
        np.testing.assert_allclose(sigma, np.eye(3), atol=1e-12)

    def test_axis_aligned_scaling(self):
        sigma = covariance_from_rotation_scale(IDENTITY_Q, np.array([2.0, 1.0, 1.0]))
        np.testing.assert_allclose(sigma, np.diag([4.0, 1.0, 1.0]), atol=1e-12)

    def test_rotated_matches_direct_product(self):
        # 90 degrees about z; oracle is the explicit R diag(s^2) R^T product.
        half = np.pi / 4.0
        q = np.array([np.cos(half), 0.0, 0.0, np.sin(half)])
        sigma = covariance_from_rotation_scale(q, np.array([2.0, 1.0, 1.0]))
        r = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
        expected = r @ np.diag([4.0, 1.0, 1.0]) @ r.T
        np.testing.assert_allclose(sigma, expected, atol=1e-12)
        np.testing.assert_allclose(sigma, np.diag([1.0, 4.0, 1.0]), atol=1e-12)

    def test_symmetry_and_eigenvalues_random(self):
        rng = np.random.default_rng(3)
        quats = random_unit_quats(rng, 200)
        scales = rng.uniform(0.1, 3.0, (200, 3))
        sigma = covariance_from_rotation_scale(quats, scales)
        assert np.max(np.abs(sigma - np.swapaxes(sigma, 1, 2))) < 1e-9
        eig = np.sort(np.linalg.eigvalsh(sigma), axis=1)
        np.testing.assert_allclose(eig, np.sort(scales**2, axis=1), atol=1e-6)

    def test_rotate_then_unrotate_roundtrip(self):
        rng = np.random.default_rng(4)
        for q in random_unit_quats(rng, 50):
            q_inv = q * np.array([1.0, -1.0, -1.0, -1.0])
            scale = rng.uniform(0.2, 2.0, 3)
            sigma = covariance_from_rotation_scale(q, scale)
            r_inv = quat_to_matrix(q_inv)
            back = r_inv @ sigma @ r_inv.T
            np.testing.assert_allclose(
                back, np.diag(scale**2), atol=1e-9
            )

    def test_rejects_nonfinite(self):
        with pytest.raises(ValueError):
            covariance_from_rotation_scale(np.array([np.nan, 0, 0, 0]), np.ones(3))
        with pytest.raises(ValueError):
            covariance_from_rotation_scale(IDENTITY_Q, np.array([1.0, np.inf, 1.0]))

    def test_rejects_nonpositive_scale(self):
        with pytest.raises(ValueError):
            covariance_from_rotation_scale(IDENTITY_Q, np.array([1.0, 0.0, 1.0]))


def make_layer(n=4, joints=2, blends=1):
    rng = np.random.default_rng(11)
    w = rng.uniform(0.1, 1.0, (n, joints))
    w /= w.sum(axis=1, keepdims=True)
    return GaussianLayer(
        layer_id=LayerId.BODY,
        positions=rng.normal(size=(n, 3)),
        offsets=np.zeros((n, 3)),
        rotations=np.tile(IDENTITY_Q, (n, 1)),
        opacities=np.full(n, 0.8),
        scales=np.full((n, 3), 0.05),
        colors=rng.uniform(0, 1, (n, 3)),
        skinning_weights=w,
        blendshape_offsets=np.zeros((n, blends, 3)),
        neighbors=np.full((n, 4), -1, dtype=np.int32),
        source_side=np.zeros(n, dtype=np.uint8),
    )


class TestValidateLayer:
    def test_well_formed(self):
        assert validate_layer(make_layer()) == []

    def test_opacity_out_of_range(self):
        layer = make_layer()
        layer.opacities[2] = 1.3
        reports = validate_layer(layer)
        assert len(reports) == 1
        assert "primitive 2" in reports[0] and "opacity" in reports[0]

    def test_weight_sum_violation(self):
        layer = make_layer()
        layer.skinning_weights[1] *= 0.8
        reports = validate_layer(layer)
        assert len(reports) == 1
        assert "primitive 1" in reports[0] and "sum" in reports[0]

    def test_bad_quaternion_and_neighbor(self):
        layer = make_layer()
        layer.rotations[0] = [0.5, 0.0, 0.0, 0.0]
        layer.neighbors[3, 0] = 99
        reports = validate_layer(layer)
        assert any("quaternion" in r for r in reports)
        assert any("neighbor" in r for r in reports)


class TestLossWeights:
    def test_defaults_match_published_values(self):
        w = LossWeights()
        assert (w.lam_ssim, w.lam_seg, w.lam_body_seg) == (0.05, 0.5, 0.05)
        assert (w.lam_pen, w.lam_offset, w.lam_smooth) == (0.5, 0.005, 0.005)
        assert w.lam_body_opacity == 0.01

    def test_rejects_negative(self):
        with pytest.raises(ValueError):
            LossWeights(lam_pen=-0.1)
        with pytest.raises(ValueError):
            LossWeights(eps_pen=0.0)


class TestCameraModel:
    def test_rejects_bad_sizes(self):
        with pytest.raises(ValueError):
            CameraModel(kind="perspective", rotation=np.eye(3),
                        translation=np.zeros(3), intrinsics=(1, 1, 0, 0),
                        image_size=(0, 4))
        with pytest.raises(ValueError):
            CameraModel(kind="orthographic", rotation=np.eye(3),
                        translation=np.zeros(3), intrinsics=(0.0, 1, 0, 0),
                        image_size=(4, 4))

    def test_orbit_looks_at_target(self):
        target = np.array([0.1, 0.5, -0.2])
        cam = CameraModel.orbit(target, 35.0, 12.0, 2.0, (64, 64))
        in_cam = cam.world_to_camera(target)
        np.testing.assert_allclose(in_cam[:2], 0.0, atol=1e-9)
        np.testing.assert_allclose(in_cam[2], 2.0, atol=1e-9)
