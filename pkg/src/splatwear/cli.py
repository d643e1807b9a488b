"""Command-line surface: wardrobe management, rendering, try-on, metrics,
synthetic scene generation, and the HTTP service launcher.

Exit codes are a stable contract: 0 success, 2 asset not found,
3 incompatible composition, 4 input shape error, 1 internal failure.
Environment overrides: SPLATWEAR_WARDROBE (wardrobe directory) and
SPLATWEAR_WORKERS (render worker count).
"""

from __future__ import annotations

import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import click
import numpy as np

from . import formats
from .core import CameraModel, LayerId, LossWeights, PoseParams, ShapeParams
from .losses import l1_loss, psnr, segmentation_metrics, ssim
from .synthgen import (
    GarmentSpec,
    SynthSpec,
    generate_pose_sequence,
    generate_scene,
    scene_to_catalog,
)
from .tryon import CompositionError, penetration_aware_render
from .wardrobe import (
    AssetFormatError,
    AvatarIdentity,
    Catalog,
    ComposedAvatar,
    load_manifest,
    validate_asset,
)

EXIT_OK = 0
EXIT_NOT_FOUND = 2
EXIT_INCOMPATIBLE = 3
EXIT_SHAPE = 4

_GARMENT_PRESETS = {
    "skirt": GarmentSpec("tube-skirt", radius=0.22, y_min=0.05, y_max=0.55),
    "shirt": GarmentSpec("shirt-shell", radius=0.21, y_min=0.60, y_max=1.10),
    "jacket": GarmentSpec("open-jacket-shell", radius=0.27, y_min=0.55,
                          y_max=1.12, arc_deg=300.0),
}


@dataclass
class CliConfig:
    """Resolved tool configuration: --config file keys, then environment
    overrides, then built-in defaults."""

    wardrobe: str = "wardrobe"
    image_size: tuple = (256, 256)
    workers: int = 1
    out_dir: str = "out"
    weights: LossWeights = field(default_factory=LossWeights)

    def __post_init__(self):
        if self.workers < 1:
            raise click.ClickException("worker count must be at least 1")

    @classmethod
    def load(cls, path):
        data = {}
        if path:
            with open(path, "r", encoding="utf-8") as fh:
                data = json.load(fh)
        weights = LossWeights(**data.get("weights", {}))
        size = data.get("image_size", [256, 256])
        return cls(
            wardrobe=(
                os.environ.get("SPLATWEAR_WARDROBE")
                or data.get("wardrobe", "wardrobe")
            ),
            image_size=(int(size[0]), int(size[1])),
            workers=int(
                os.environ.get("SPLATWEAR_WORKERS") or data.get("workers", 1)
            ),
            out_dir=data.get("out_dir", "out"),
            weights=weights,
        )


def _wardrobe_dir(option_value, config: CliConfig):
    return option_value or config.wardrobe


def _workers(option_value, config: CliConfig):
    return int(option_value) if option_value else config.workers


def _parse_image_size(option_value, config: CliConfig):
    if not option_value:
        return config.image_size
    w, h = (int(v) for v in option_value.lower().split("x"))
    return w, h


def _fail(code, message):
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


@click.group()
def main():
    """Layered Gaussian avatar wardrobe, renderer, and try-on tools.

    Environment overrides: SPLATWEAR_WARDROBE sets the wardrobe
    directory, SPLATWEAR_WORKERS the render worker count. A --config
    JSON file may supply wardrobe, image_size, workers, out_dir, and
    weights; command-line flags win over both.
    """


@main.group()
def wardrobe():
    """Catalog management: ls, inspect, validate."""


@wardrobe.command("ls")
@click.option("--wardrobe", "wardrobe_dir", default=None,
              help="Wardrobe directory (or SPLATWEAR_WARDROBE).")
@click.option("--config", default=None, type=click.Path(exists=True))
def wardrobe_ls(wardrobe_dir, config):
    cfg = CliConfig.load(config)
    catalog = Catalog.open(_wardrobe_dir(wardrobe_dir, cfg))
    for asset_id in catalog.ids():
        e = catalog.get(asset_id)
        click.echo(f"{asset_id}\t{e.layer_id.name.lower()}\t{e.category}")


@wardrobe.command("inspect")
@click.argument("asset_id")
@click.option("--wardrobe", "wardrobe_dir", default=None)
@click.option("--config", default=None, type=click.Path(exists=True))
def wardrobe_inspect(asset_id, wardrobe_dir, config):
    cfg = CliConfig.load(config)
    catalog = Catalog.open(_wardrobe_dir(wardrobe_dir, cfg))
    try:
        entry = catalog.get(asset_id)
    except KeyError:
        _fail(EXIT_NOT_FOUND, f"unknown asset id {asset_id!r}")
    manifest = load_manifest(os.path.join(catalog.root, entry.file))
    click.echo(json.dumps(manifest, indent=2, sort_keys=True))


@wardrobe.command("validate")
@click.argument("asset_id")
@click.option("--wardrobe", "wardrobe_dir", default=None)
@click.option("--config", default=None, type=click.Path(exists=True))
def wardrobe_validate(asset_id, wardrobe_dir, config):
    cfg = CliConfig.load(config)
    catalog = Catalog.open(_wardrobe_dir(wardrobe_dir, cfg))
    try:
        asset = catalog.load(asset_id)
    except KeyError:
        _fail(EXIT_NOT_FOUND, f"unknown asset id {asset_id!r}")
    except AssetFormatError as exc:
        _fail(1, f"corrupt asset: {exc}")
    problems = validate_asset(asset)
    if problems:
        for p in problems:
            click.echo(p)
        sys.exit(1)
    click.echo("OK")


def _default_camera(avatar, image_size):
    verts = avatar.identity.body_asset.template.vertices.astype(np.float64)
    center = (verts.min(axis=0) + verts.max(axis=0)) / 2.0
    extent = float(np.linalg.norm(verts.max(axis=0) - verts.min(axis=0)))
    return CameraModel.orbit(center, azimuth_deg=20.0, elevation_deg=5.0,
                             distance=2.0 * extent, image_size=image_size)


def _avatar_from_compose_file(path, catalog):
    slots = {}
    body_id = None
    shape = None
    with open(path, "r", encoding="utf-8") as fh:
        for ln in fh:
            ln = ln.strip()
            if not ln or ln.startswith("#"):
                continue
            key, *vals = ln.split()
            if key == "body":
                body_id = vals[0]
            elif key == "shape":
                shape = np.array([float(v) for v in vals])
            elif key in ("upper", "lower", "outer"):
                slots[LayerId[key.upper()]] = vals[0]
            else:
                raise click.ClickException(f"unknown compose-file field {key!r}")
    if body_id is None:
        raise CompositionError("compose file names no body asset")
    body = catalog.load(body_id)
    if shape is None:
        shape = np.zeros(body.blendshape_count)
    identity = AvatarIdentity(shape=ShapeParams(shape), body_asset=body)
    loaded_slots = {lid: catalog.load(aid) for lid, aid in slots.items()}
    return ComposedAvatar(identity=identity, slots=loaded_slots)


def _avatar_from_single_asset(asset_id, catalog):
    asset = catalog.load(asset_id)
    if asset.layer_id != LayerId.BODY:
        raise CompositionError(
            f"asset {asset_id} is a {asset.layer_id.name.lower()} layer; "
            "single-asset rendering needs a body (use --compose-file for outfits)"
        )
    identity = AvatarIdentity(
        shape=ShapeParams(np.zeros(asset.blendshape_count)), body_asset=asset
    )
    return ComposedAvatar(identity=identity, slots={})


def _write_render_outputs(frame, out_dir, prefix="render"):
    os.makedirs(out_dir, exist_ok=True)
    formats.write_png(os.path.join(out_dir, f"{prefix}.png"), frame.rgb)
    formats.write_label_png(os.path.join(out_dir, f"{prefix}_labels.png"), frame.labels)
    present = sorted(set(int(v) for v in np.unique(frame.labels)) - {0})
    for lid in present:
        name = formats.depth_layer_name(lid)
        formats.write_pfm(
            os.path.join(out_dir, f"{prefix}_depth_{name}.pfm"),
            frame.render.depth_for(LayerId(lid)),
        )
    text = frame.diagnostics_text() or "no adjacency pairs\n"
    formats._atomic_write(
        os.path.join(out_dir, f"{prefix}_diagnostics.txt"), text.encode("utf-8")
    )


@main.command("render")
@click.option("--asset", "asset_id", default=None, help="Render one body asset.")
@click.option("--compose-file", default=None, type=click.Path(exists=True),
              help="Outfit description (body/upper/lower/outer/shape lines).")
@click.option("--pose", "pose_file", default=None, type=click.Path(exists=True))
@click.option("--camera", "camera_file", default=None, type=click.Path(exists=True))
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--no-correction", is_flag=True, default=False)
@click.option("--wardrobe", "wardrobe_dir", default=None)
@click.option("--workers", default=None, type=int)
@click.option("--image-size", default=None,
              help="WxH pixels; defaults to the config image_size.")
@click.option("--epsilon", default=None, type=float,
              help="Depth tolerance (m) for penetration confirmation.")
@click.option("--config", default=None, type=click.Path(exists=True))
def cmd_render(asset_id, compose_file, pose_file, camera_file, out_dir,
               no_correction, wardrobe_dir, workers, image_size, epsilon,
               config):
    """Render an asset or a composed outfit to PNG/PFM files."""
    cfg = CliConfig.load(config)
    catalog = Catalog.open(_wardrobe_dir(wardrobe_dir, cfg))
    if (asset_id is None) == (compose_file is None):
        raise click.ClickException("pass exactly one of --asset / --compose-file")
    try:
        if compose_file:
            avatar = _avatar_from_compose_file(compose_file, catalog)
        else:
            avatar = _avatar_from_single_asset(asset_id, catalog)
    except KeyError as exc:
        _fail(EXIT_NOT_FOUND, f"unknown asset id {exc.args[0]!r}")
    except CompositionError as exc:
        _fail(EXIT_INCOMPATIBLE, str(exc))

    j = avatar.identity.body_asset.joint_count
    pose = formats.read_pose(pose_file) if pose_file else PoseParams.canonical(j)
    w, h = _parse_image_size(image_size, cfg)
    camera = formats.read_camera(camera_file) if camera_file else \
        _default_camera(avatar, (w, h))
    try:
        frame = penetration_aware_render(
            avatar, pose, camera,
            eps=epsilon if epsilon is not None else cfg.weights.eps_pen,
            workers=_workers(workers, cfg),
            correction=not no_correction,
        )
    except CompositionError as exc:
        _fail(EXIT_INCOMPATIBLE, str(exc))
    except ValueError as exc:
        _fail(EXIT_SHAPE, str(exc))
    _write_render_outputs(frame, out_dir)
    click.echo(f"wrote render outputs to {out_dir}")


@main.command("tryon")
@click.option("--body", "body_id", default=None)
@click.option("--upper", "upper_id", default=None)
@click.option("--lower", "lower_id", default=None)
@click.option("--outer", "outer_id", default=None)
@click.option("--pose-seq", "pose_seq_file", required=True,
              type=click.Path(exists=True))
@click.option("--out-dir", required=True, type=click.Path())
@click.option("--camera", "camera_file", default=None, type=click.Path(exists=True))
@click.option("--wardrobe", "wardrobe_dir", default=None)
@click.option("--workers", default=None, type=int)
@click.option("--image-size", default=None,
              help="WxH pixels; defaults to the config image_size.")
@click.option("--no-correction", is_flag=True, default=False)
@click.option("--config", default=None, type=click.Path(exists=True))
def cmd_tryon(body_id, upper_id, lower_id, outer_id, pose_seq_file, out_dir,
              camera_file, wardrobe_dir, workers, image_size, no_correction,
              config):
    """Render a corrected frame per pose in the sequence, plus a summary."""
    cfg = CliConfig.load(config)
    catalog = Catalog.open(_wardrobe_dir(wardrobe_dir, cfg))
    if body_id is None:
        _fail(EXIT_INCOMPATIBLE, "a try-on composition needs --body")
    ids = {LayerId.UPPER: upper_id, LayerId.LOWER: lower_id, LayerId.OUTER: outer_id}
    try:
        body = catalog.load(body_id)
        slots = {lid: catalog.load(aid) for lid, aid in ids.items() if aid}
    except KeyError as exc:
        _fail(EXIT_NOT_FOUND, f"unknown asset id {exc.args[0]!r}")
    try:
        identity = AvatarIdentity(
            shape=ShapeParams(np.zeros(body.blendshape_count)), body_asset=body
        )
        avatar = ComposedAvatar(identity=identity, slots=slots)
    except ValueError as exc:
        _fail(EXIT_INCOMPATIBLE, str(exc))

    poses = formats.read_pose_sequence(pose_seq_file)
    w, h = _parse_image_size(image_size, cfg)
    camera = formats.read_camera(camera_file) if camera_file else \
        _default_camera(avatar, (w, h))
    n_workers = _workers(workers, cfg)

    def render_frame(item):
        i, pose = item
        try:
            frame = penetration_aware_render(
                avatar, pose, camera, eps=cfg.weights.eps_pen, workers=1,
                correction=not no_correction,
            )
        except CompositionError as exc:
            return i, None, str(exc)
        return i, frame, None

    os.makedirs(out_dir, exist_ok=True)
    results = []
    with ThreadPoolExecutor(max_workers=max(1, n_workers)) as pool:
        for i, frame, err in pool.map(render_frame, enumerate(poses)):
            if err is not None:
                _fail(EXIT_INCOMPATIBLE, err)
            results.append((i, frame))
    summary = []
    for i, frame in sorted(results):
        _write_render_outputs(frame, out_dir, prefix=f"frame_{i:03d}")
        totals = {}
        for d in frame.diagnostics:
            totals["regions"] = totals.get("regions", 0) + d.regions_found
            totals["confirmed"] = totals.get("confirmed", 0) + d.confirmed_pixels
            totals["corrected"] = totals.get("corrected", 0) + d.corrected_pixels
        summary.append(
            f"frame={i:03d} regions={totals.get('regions', 0)} "
            f"confirmed={totals.get('confirmed', 0)} "
            f"corrected={totals.get('corrected', 0)}"
        )
    formats._atomic_write(
        os.path.join(out_dir, "summary.txt"), ("\n".join(summary) + "\n").encode()
    )
    click.echo(f"wrote {len(results)} frames to {out_dir}")


@main.command("metrics")
@click.option("--pred", required=True, type=click.Path(exists=True))
@click.option("--gt", required=True, type=click.Path(exists=True))
@click.option("--labels-pred", default=None, type=click.Path(exists=True))
@click.option("--labels-gt", default=None, type=click.Path(exists=True))
def cmd_metrics(pred, gt, labels_pred, labels_gt):
    """Image quality metrics (l1, psnr, ssim) and, with label maps,
    segmentation quality (miou, recall, f1)."""
    a = formats.read_png(pred)
    b = formats.read_png(gt)
    try:
        click.echo(f"l1={l1_loss(a, b):.10g}")
        click.echo(f"psnr={psnr(a, b):.10g}")
        click.echo(f"ssim={ssim(a, b):.10g}")
        if labels_pred and labels_gt:
            lp = formats.read_label_png(labels_pred)
            lg = formats.read_label_png(labels_gt)
            miou, recall, f1 = segmentation_metrics(lp, lg)
            click.echo(f"miou={miou:.10g}")
            click.echo(f"recall={recall:.10g}")
            click.echo(f"f1={f1:.10g}")
    except ValueError as exc:
        _fail(EXIT_SHAPE, str(exc))


@main.command("synth")
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--seed", default=7, show_default=True)
@click.option("--garments", default="skirt,shirt", show_default=True,
              help="Comma list from: skirt, shirt, jacket.")
@click.option("--frames", default=8, show_default=True)
@click.option("--map-resolution", default=32, show_default=True)
@click.option("--field-resolution", default=16, show_default=True)
def cmd_synth(out_dir, seed, garments, frames, map_resolution, field_resolution):
    """Generate a deterministic demo wardrobe with poses and a camera."""
    picks = []
    for name in [g for g in garments.split(",") if g]:
        if name not in _GARMENT_PRESETS:
            raise click.ClickException(
                f"unknown garment {name!r} (choose from {sorted(_GARMENT_PRESETS)})"
            )
        picks.append(_GARMENT_PRESETS[name])
    spec = SynthSpec(
        seed=seed,
        garments=tuple(picks),
        pose_frames=frames,
        map_resolution=(map_resolution, map_resolution),
        field_resolution=(field_resolution,) * 3,
    )
    try:
        scene = generate_scene(spec, ground_truth=False)
    except ValueError as exc:
        _fail(EXIT_SHAPE, str(exc))
    scene_to_catalog(scene, out_dir)
    poses = generate_pose_sequence(spec)
    os.makedirs(os.path.join(out_dir, "poses"), exist_ok=True)
    formats.write_pose_sequence(os.path.join(out_dir, "poses", "sway.txt"), poses)
    os.makedirs(os.path.join(out_dir, "cameras"), exist_ok=True)
    formats.write_camera(
        os.path.join(out_dir, "cameras", "orbit.txt"), scene.cameras[0]
    )
    click.echo(f"wrote demo wardrobe ({len(scene.assets)} assets) to {out_dir}")


@main.command("serve")
@click.option("--wardrobe", "wardrobe_dir", default=None)
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8021, show_default=True)
@click.option("--workers", default=None, type=int,
              help="Render worker budget shared across requests.")
@click.option("--max-image-size", default=1024, show_default=True)
@click.option("--config", default=None, type=click.Path(exists=True))
def cmd_serve(wardrobe_dir, host, port, workers, max_image_size, config):
    """Start the interactive try-on HTTP service."""
    import uvicorn

    from .service import create_app

    cfg = CliConfig.load(config)
    app = create_app(
        wardrobe_dir=_wardrobe_dir(wardrobe_dir, cfg),
        max_image_size=max_image_size,
        workers=_workers(workers, cfg),
    )
    uvicorn.run(app, host=host, port=port)


if __name__ == "__main__":
    main()
