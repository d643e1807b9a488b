import os

import numpy as np
import pytest
from click.testing import CliRunner

from splatwear import formats
from splatwear.cli import main
from splatwear.core import LayerId


@pytest.fixture(scope="module")
def wardrobe_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli") / "wardrobe"
    runner = CliRunner()
    result = runner.invoke(
        main,
        ["synth", "--out", str(root), "--garments", "skirt,shirt",
         "--frames", "3"],
    )
    assert result.exit_code == 0, result.output
    return str(root)


@pytest.fixture()
def runner():
    return CliRunner()


def read_all_bytes(directory):
    out = {}
    for name in sorted(os.listdir(directory)):
        path = os.path.join(directory, name)
        if os.path.isfile(path):
            with open(path, "rb") as fh:
                out[name] = fh.read()
    return out


class TestWardrobeCommands:
    def test_ls_lists_assets(self, runner, wardrobe_dir):
        result = runner.invoke(main, ["wardrobe", "ls", "--wardrobe", wardrobe_dir])
        assert result.exit_code == 0
        assert "body-7" in result.output
        assert "tube-skirt-7" in result.output

    def test_ls_empty_catalog(self, runner, tmp_path):
        result = runner.invoke(
            main, ["wardrobe", "ls", "--wardrobe", str(tmp_path)]
        )
        assert result.exit_code == 0
        assert result.output.strip() == ""

    def test_inspect_dumps_manifest(self, runner, wardrobe_dir):
        result = runner.invoke(
            main, ["wardrobe", "inspect", "body-7", "--wardrobe", wardrobe_dir]
        )
        assert result.exit_code == 0
        assert '"format_version": 1' in result.output
        assert '"sections"' in result.output

    def test_unknown_id_exit_2(self, runner, wardrobe_dir):
        result = runner.invoke(
            main, ["wardrobe", "inspect", "nope", "--wardrobe", wardrobe_dir]
        )
        assert result.exit_code == 2

    def test_validate_ok(self, runner, wardrobe_dir):
        result = runner.invoke(
            main, ["wardrobe", "validate", "body-7", "--wardrobe", wardrobe_dir]
        )
        assert result.exit_code == 0
        assert "OK" in result.output


class TestRenderCommand:
    def compose_file(self, tmp_path):
        path = tmp_path / "outfit.txt"
        path.write_text("body body-7\nlower tube-skirt-7\nupper shirt-shell-7\n")
        return str(path)

    def test_render_writes_outputs(self, runner, wardrobe_dir, tmp_path):
        out = tmp_path / "out"
        result = runner.invoke(
            main,
            ["render", "--compose-file", self.compose_file(tmp_path),
             "--out", str(out), "--wardrobe", wardrobe_dir,
             "--image-size", "64x64"],
        )
        assert result.exit_code == 0, result.output
        names = set(os.listdir(out))
        assert {"render.png", "render_labels.png",
                "render_diagnostics.txt"} <= names
        assert any(n.startswith("render_depth_") for n in names)
        labels = formats.read_label_png(out / "render_labels.png")
        assert (labels != 0).any()

    def test_repeated_renders_byte_identical(self, runner, wardrobe_dir, tmp_path):
        args = lambda out: [
            "render", "--compose-file", self.compose_file(tmp_path),
            "--out", str(out), "--wardrobe", wardrobe_dir,
            "--image-size", "48x48",
        ]
        assert runner.invoke(main, args(tmp_path / "r1")).exit_code == 0
        assert runner.invoke(main, args(tmp_path / "r2")).exit_code == 0
        assert read_all_bytes(tmp_path / "r1") == read_all_bytes(tmp_path / "r2")

    def test_unknown_asset_exit_2(self, runner, wardrobe_dir, tmp_path):
        path = tmp_path / "bad.txt"
        path.write_text("body ghost\n")
        result = runner.invoke(
            main,
            ["render", "--compose-file", str(path), "--out",
             str(tmp_path / "x"), "--wardrobe", wardrobe_dir],
        )
        assert result.exit_code == 2

    def test_single_asset_must_be_body(self, runner, wardrobe_dir, tmp_path):
        result = runner.invoke(
            main,
            ["render", "--asset", "tube-skirt-7", "--out", str(tmp_path / "x"),
             "--wardrobe", wardrobe_dir],
        )
        assert result.exit_code == 3

    def test_correction_toggle_differs_only_on_confirmed(self, runner, tmp_path):
        # Build a poked wardrobe whose canonical render has penetrations.
        from splatwear.synthgen import (GarmentSpec, SynthSpec, generate_scene,
                                        inject_penetration, scene_to_catalog)

        spec = SynthSpec(
            seed=3,
            garments=(GarmentSpec("tube-skirt", radius=0.22, y_min=0.05,
                                  y_max=0.55),),
        )
        scene = generate_scene(spec, ground_truth=False)
        inj = inject_penetration(scene, fraction=0.08, magnitude=0.073, seed=1)
        poked_dir = tmp_path / "poked"
        scene_to_catalog(inj.scene, poked_dir, thumbnails=False)
        compose = tmp_path / "poked.txt"
        compose.write_text("body body-3\nlower tube-skirt-3\n")

        base = ["render", "--compose-file", str(compose), "--wardrobe",
                str(poked_dir), "--image-size", "96x96"]
        assert runner.invoke(
            main, base + ["--out", str(tmp_path / "corr")]
        ).exit_code == 0
        assert runner.invoke(
            main, base + ["--out", str(tmp_path / "raw"), "--no-correction"]
        ).exit_code == 0

        diag = (tmp_path / "corr" / "render_diagnostics.txt").read_text()
        confirmed = sum(
            int(part.split("=")[1])
            for line in diag.splitlines()
            for part in line.split()
            if part.startswith("confirmed=")
        )
        assert confirmed > 0
        img_corr = formats.read_png(tmp_path / "corr" / "render.png")
        img_raw = formats.read_png(tmp_path / "raw" / "render.png")
        differing = int(np.any(img_corr != img_raw, axis=2).sum())
        assert 0 < differing <= confirmed


class TestTryonCommand:
    def test_one_frame_sequence(self, runner, wardrobe_dir, tmp_path):
        pose_file = tmp_path / "canon.txt"
        from splatwear.core import PoseParams

        formats.write_pose_sequence(pose_file, [PoseParams.canonical(4)])
        out = tmp_path / "frames"
        result = runner.invoke(
            main,
            ["tryon", "--body", "body-7", "--lower", "tube-skirt-7",
             "--upper", "shirt-shell-7", "--pose-seq", str(pose_file),
             "--out-dir", str(out), "--wardrobe", wardrobe_dir,
             "--image-size", "48x48"],
        )
        assert result.exit_code == 0, result.output
        assert (out / "frame_000.png").exists()
        assert (out / "summary.txt").read_text().startswith("frame=000")

    def test_missing_body_exit_3(self, runner, wardrobe_dir, tmp_path):
        pose_file = tmp_path / "canon2.txt"
        from splatwear.core import PoseParams

        formats.write_pose_sequence(pose_file, [PoseParams.canonical(4)])
        result = runner.invoke(
            main,
            ["tryon", "--lower", "tube-skirt-7", "--pose-seq", str(pose_file),
             "--out-dir", str(tmp_path / "x"), "--wardrobe", wardrobe_dir],
        )
        assert result.exit_code == 3

    def test_swapping_lower_only_changes_garment_pixels(self, runner, tmp_path):
        # Two skirts of different radii on one body: canonical-pose renders
        # must agree wherever neither skirt's pixels land.
        from splatwear.core import PoseParams
        from splatwear.synthgen import GarmentSpec, SynthSpec, generate_scene, \
            scene_to_catalog

        spec_a = SynthSpec(
            seed=11,
            garments=(GarmentSpec("tube-skirt", radius=0.22, y_min=0.05,
                                  y_max=0.55),),
        )
        spec_b = SynthSpec(
            seed=11,
            garments=(GarmentSpec("tube-skirt", radius=0.26, y_min=0.02,
                                  y_max=0.50),),
        )
        scene_a = generate_scene(spec_a, ground_truth=False)
        scene_b = generate_scene(spec_b, ground_truth=False)
        wdir = tmp_path / "two-skirts"
        scene_to_catalog(scene_a, wdir, thumbnails=False)
        # Rename the second skirt to live alongside the first.
        skirt_b = scene_b.assets[LayerId.LOWER]
        skirt_b.asset_id = "tube-skirt-alt"
        from splatwear.wardrobe import Catalog

        Catalog.open(wdir).add(skirt_b)

        pose_file = tmp_path / "c.txt"
        formats.write_pose_sequence(pose_file, [PoseParams.canonical(4)])
        base = ["tryon", "--body", "body-11", "--pose-seq", str(pose_file),
                "--wardrobe", str(wdir), "--image-size", "96x96"]
        assert runner.invoke(
            main, base + ["--lower", "tube-skirt-11",
                          "--out-dir", str(tmp_path / "fa")]
        ).exit_code == 0
        assert runner.invoke(
            main, base + ["--lower", "tube-skirt-alt",
                          "--out-dir", str(tmp_path / "fb")]
        ).exit_code == 0
        img_a = formats.read_png(tmp_path / "fa" / "frame_000.png")
        img_b = formats.read_png(tmp_path / "fb" / "frame_000.png")
        lab_a = formats.read_label_png(tmp_path / "fa" / "frame_000_labels.png")
        lab_b = formats.read_label_png(tmp_path / "fb" / "frame_000_labels.png")
        garment = (lab_a == int(LayerId.LOWER)) | (lab_b == int(LayerId.LOWER))
        diff = np.any(img_a != img_b, axis=2)
        # Allow a 1px halo around garment-labeled pixels: splat tails bleed
        # color slightly past the argmax boundary.
        from scipy.ndimage import binary_dilation

        halo = binary_dilation(garment, iterations=2)
        assert diff.any()
        assert not np.any(diff & ~halo)


class TestMetricsCommand:
    def test_identical_images(self, runner, tmp_path):
        rng = np.random.default_rng(1)
        img = rng.uniform(0, 1, (24, 24, 3))
        formats.write_png(tmp_path / "a.png", img)
        result = runner.invoke(
            main, ["metrics", "--pred", str(tmp_path / "a.png"),
                   "--gt", str(tmp_path / "a.png")],
        )
        assert result.exit_code == 0
        assert "psnr=inf" in result.output
        assert "ssim=1" in result.output
        assert "l1=0" in result.output

    def test_constant_gap_psnr(self, runner, tmp_path):
        formats.write_png(tmp_path / "z.png", np.zeros((16, 16, 3)))
        formats.write_png(tmp_path / "h.png", np.full((16, 16, 3), 0.5))
        result = runner.invoke(
            main, ["metrics", "--pred", str(tmp_path / "z.png"),
                   "--gt", str(tmp_path / "h.png")],
        )
        assert result.exit_code == 0
        psnr_line = [l for l in result.output.splitlines()
                     if l.startswith("psnr=")][0]
        # 128/255 is the nearest 8-bit level to 0.5.
        expected = 10 * np.log10(1.0 / (128 / 255) ** 2)
        assert abs(float(psnr_line.split("=")[1]) - expected) < 1e-6

    def test_label_metrics(self, runner, tmp_path):
        rng = np.random.default_rng(3)
        img = rng.uniform(0, 1, (16, 16, 3))
        formats.write_png(tmp_path / "img.png", img)
        labels = np.zeros((16, 16), dtype=np.uint8)
        labels[2:6, 2:6] = int(LayerId.BODY)
        formats.write_label_png(tmp_path / "l.png", labels)
        result = runner.invoke(
            main, ["metrics", "--pred", str(tmp_path / "img.png"),
                   "--gt", str(tmp_path / "img.png"),
                   "--labels-pred", str(tmp_path / "l.png"),
                   "--labels-gt", str(tmp_path / "l.png")],
        )
        assert result.exit_code == 0, result.output
        assert "miou=1" in result.output

    def test_shape_mismatch_exit_4(self, runner, tmp_path):
        formats.write_png(tmp_path / "a.png", np.zeros((16, 16, 3)))
        formats.write_png(tmp_path / "b.png", np.zeros((20, 20, 3)))
        result = runner.invoke(
            main, ["metrics", "--pred", str(tmp_path / "a.png"),
                   "--gt", str(tmp_path / "b.png")],
        )
        assert result.exit_code == 4


class TestCliConfig:
    def test_config_file_supplies_defaults(self, runner, wardrobe_dir, tmp_path):
        import json

        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({
            "wardrobe": wardrobe_dir,
            "image_size": [40, 40],
            "workers": 2,
            "weights": {"eps_pen": 0.01},
        }))
        compose = tmp_path / "fit.txt"
        compose.write_text("body body-7\nlower tube-skirt-7\n")
        out = tmp_path / "cfg-out"
        result = runner.invoke(
            main,
            ["render", "--compose-file", str(compose), "--out", str(out),
             "--config", str(cfg)],
        )
        assert result.exit_code == 0, result.output
        img = formats.read_png(out / "render.png")
        assert img.shape == (40, 40, 3)

    def test_env_overrides_config(self, runner, wardrobe_dir, tmp_path, monkeypatch):
        monkeypatch.setenv("SPLATWEAR_WARDROBE", wardrobe_dir)
        result = runner.invoke(main, ["wardrobe", "ls"])
        assert result.exit_code == 0
        assert "body-7" in result.output

    def test_invalid_worker_count_rejected(self, tmp_path):
        import json

        from splatwear.cli import CliConfig

        cfg = tmp_path / "bad.json"
        cfg.write_text(json.dumps({"workers": 0}))
        with pytest.raises(Exception):
            CliConfig.load(str(cfg))


class TestSynthCommand:
    def test_unknown_garment_rejected(self, runner, tmp_path):
        result = runner.invoke(
            main, ["synth", "--out", str(tmp_path / "w"),
                   "--garments", "cape"],
        )
        assert result.exit_code != 0

    def test_writes_poses_and_camera(self, runner, wardrobe_dir):
        assert os.path.exists(os.path.join(wardrobe_dir, "poses", "sway.txt"))
        assert os.path.exists(os.path.join(wardrobe_dir, "cameras", "orbit.txt"))
        poses = formats.read_pose_sequence(
            os.path.join(wardrobe_dir, "poses", "sway.txt")
        )
        assert len(poses) == 3
        assert np.all(poses[0].joint_rotations == 0.0)
        cam = formats.read_camera(os.path.join(wardrobe_dir, "cameras", "orbit.txt"))
        assert cam.image_size == (64, 64)
