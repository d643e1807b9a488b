import numpy as np
import pytest

from splatwear import formats
from splatwear.core import CameraKind, CameraModel, LayerId, PoseParams


class TestPng:
    def test_roundtrip_quantized(self, tmp_path):
        rng = np.random.default_rng(0)
        img = rng.uniform(0, 1, (20, 24, 3))
        formats.write_png(tmp_path / "x.png", img)
        back = formats.read_png(tmp_path / "x.png")
        # 8-bit quantization: exact at the half-level grid.
        assert np.max(np.abs(back - np.round(img * 255) / 255)) < 1e-12

    def test_bytes_deterministic(self):
        img = np.random.default_rng(1).uniform(0, 1, (16, 16, 3))
        assert formats.png_bytes(img) == formats.png_bytes(img)

    def test_clips_out_of_range(self, tmp_path):
        img = np.array([[[2.0, -1.0, 0.5]]])
        formats.write_png(tmp_path / "c.png", img)
        back = formats.read_png(tmp_path / "c.png")
        np.testing.assert_allclose(back[0, 0], [1.0, 0.0, 128 / 255], atol=1e-12)


class TestLabelPng:
    def test_roundtrip_indices_and_palette(self, tmp_path):
        labels = np.zeros((12, 12), dtype=np.uint8)
        labels[2:5, 3:7] = int(LayerId.UPPER)
        labels[8, 8] = int(LayerId.OUTER)
        formats.write_label_png(tmp_path / "l.png", labels)
        back = formats.read_label_png(tmp_path / "l.png")
        np.testing.assert_array_equal(back, labels)

    def test_rejects_non_indexed(self, tmp_path):
        formats.write_png(tmp_path / "rgb.png", np.zeros((8, 8, 3)))
        with pytest.raises(ValueError):
            formats.read_label_png(tmp_path / "rgb.png")


class TestPfm:
    def test_roundtrip_including_infinity(self, tmp_path):
        depth = np.random.default_rng(2).uniform(0.5, 4.0, (10, 14))
        depth[0, 0] = np.inf
        depth[5, 7] = np.inf
        formats.write_pfm(tmp_path / "d.pfm", depth)
        back = formats.read_pfm(tmp_path / "d.pfm")
        assert back.shape == depth.shape
        # float32 storage; finite values round-trip at float32 precision
        finite = np.isfinite(depth)
        np.testing.assert_allclose(
            back[finite], depth.astype(np.float32)[finite].astype(np.float64),
            rtol=0, atol=0,
        )
        assert np.isinf(back[0, 0]) and np.isinf(back[5, 7])

    def test_header_is_little_endian_single_channel(self, tmp_path):
        formats.write_pfm(tmp_path / "h.pfm", np.ones((4, 6)))
        head = (tmp_path / "h.pfm").read_bytes()[:20]
        assert head.startswith(b"Pf\n6 4\n-1.0\n")

    def test_rejects_3d(self):
        with pytest.raises(ValueError):
            formats.pfm_bytes(np.zeros((4, 4, 3)))


class TestPoseText:
    def test_roundtrip_exact(self):
        rng = np.random.default_rng(3)
        pose = PoseParams(
            joint_rotations=rng.normal(size=(5, 3)),
            global_orientation=rng.normal(size=3),
            global_translation=rng.normal(size=3),
        )
        back = formats.pose_from_text(formats.pose_to_text(pose))
        # repr-based serialization round-trips float64 exactly
        assert back.joint_rotations.tobytes() == pose.joint_rotations.tobytes()
        assert back.global_orientation.tobytes() == pose.global_orientation.tobytes()
        assert back.global_translation.tobytes() == pose.global_translation.tobytes()

    def test_sequence_roundtrip(self, tmp_path):
        rng = np.random.default_rng(4)
        poses = [PoseParams(joint_rotations=rng.normal(size=(3, 3)))
                 for _ in range(4)]
        formats.write_pose_sequence(tmp_path / "seq.txt", poses)
        back = formats.read_pose_sequence(tmp_path / "seq.txt")
        assert len(back) == 4
        for a, b in zip(poses, back):
            assert a.joint_rotations.tobytes() == b.joint_rotations.tobytes()

    def test_rejects_malformed(self):
        with pytest.raises(ValueError):
            formats.pose_from_text("not a pose file")
        with pytest.raises(ValueError):
            formats.pose_from_text("joints 2\n0 0 0\n")  # missing rows


class TestCameraText:
    def test_explicit_roundtrip_exact(self):
        cam = CameraModel.orbit(
            np.array([0.1, 0.6, -0.2]), 33.0, 12.0, 2.5, (96, 64),
        )
        back = formats.camera_from_text(formats.camera_to_text(cam))
        assert back.kind is CameraKind.PERSPECTIVE
        assert back.image_size == cam.image_size
        assert back.rotation.tobytes() == cam.rotation.tobytes()
        assert back.translation.tobytes() == cam.translation.tobytes()
        assert back.intrinsics.tobytes() == cam.intrinsics.tobytes()

    def test_orbit_form_parses(self):
        text = (
            "kind orthographic\n"
            "image_size 80 60\n"
            "orbit 45 10 2.0\n"
            "target 0 0.6 0\n"
        )
        cam = formats.camera_from_text(text)
        assert cam.kind is CameraKind.ORTHOGRAPHIC
        assert cam.image_size == (80, 60)
        in_cam = cam.world_to_camera(np.array([0.0, 0.6, 0.0]))
        np.testing.assert_allclose(in_cam[:2], 0.0, atol=1e-9)
        np.testing.assert_allclose(in_cam[2], 2.0, atol=1e-9)

    def test_comments_and_blank_lines_ignored(self):
        text = (
            "# fixture camera\n"
            "kind perspective\n\n"
            "image_size 32 32\n"
            "orbit 0 0 3.0 50\n"
        )
        cam = formats.camera_from_text(text)
        assert cam.width == 32
