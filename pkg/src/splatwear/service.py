"""HTTP try-on service: a read-only wardrobe catalog plus a stateless
render endpoint.

Every render request carries the full composition (body, slots, shape,
pose, camera), so identical requests produce byte-identical PNGs and
nothing is cached server-side. Assets load once at startup into an
immutable in-memory catalog.
"""

from __future__ import annotations

import base64
import os

import numpy as np
from fastapi import FastAPI, HTTPException, Query, Response
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import FileResponse, JSONResponse
from pydantic import BaseModel, Field

from .core import CameraModel, LayerId, PoseParams, ShapeParams
from .formats import png_bytes
from .synthgen import pose_sequence
from .tryon import CompositionError, penetration_aware_render
from .wardrobe import AvatarIdentity, Catalog, ComposedAvatar

DIAGNOSTICS_HEADER = "X-Penetration-Diagnostics"

# Named pose sequences addressable as (preset, frame). Frame 0 of every
# generated preset is the canonical pose.
PRESETS = {
    "canonical": {"frames": 1, "amplitude": 0.0, "seed": 0},
    "sway": {"frames": 12, "amplitude": 0.35, "seed": 7},
    "twist": {"frames": 8, "amplitude": 0.55, "seed": 11},
}


class CameraSpec(BaseModel):
    """Orbit camera around the body center."""

    azimuth: float = 20.0
    elevation: float = 5.0
    distance: float = 2.4
    kind: str = Field(default="perspective", pattern="^(perspective|orthographic)$")


class PoseSpec(BaseModel):
    """Either a named preset frame or explicit axis-angle joints."""

    preset: str | None = "canonical"
    frame: int = 0
    joints: list[list[float]] | None = None
    global_orientation: list[float] | None = None
    global_translation: list[float] | None = None


class RenderRequest(BaseModel):
    body_asset_id: str
    upper_asset_id: str | None = None
    lower_asset_id: str | None = None
    outer_asset_id: str | None = None
    shape: list[float] | None = None
    pose: PoseSpec = Field(default_factory=PoseSpec)
    camera: CameraSpec = Field(default_factory=CameraSpec)
    image_width: int = 256
    image_height: int = 256
    correction: bool = True
    epsilon: float | None = None


class CatalogEntryOut(BaseModel):
    id: str
    layer: str
    category: str
    thumbnail_url: str | None = None


class PresetOut(BaseModel):
    name: str
    frames: int


class PairDiagnosticsOut(BaseModel):
    pair: str
    regions: int
    confirmed: int
    corrected: int


class RenderDetailOut(BaseModel):
    image_base64: str
    pairs: int
    confirmed: int
    corrected: int
    diagnostics: list[PairDiagnosticsOut]


def _resolve_pose(spec: PoseSpec, joint_count):
    if spec.joints is not None:
        joints = np.asarray(spec.joints, dtype=np.float64)
        if joints.shape != (joint_count, 3):
            raise HTTPException(
                422,
                f"pose joints must have shape ({joint_count}, 3), got {joints.shape}",
            )
        return PoseParams(
            joint_rotations=joints,
            global_orientation=np.asarray(spec.global_orientation or [0, 0, 0]),
            global_translation=np.asarray(spec.global_translation or [0, 0, 0]),
        )
    name = spec.preset or "canonical"
    if name not in PRESETS:
        raise HTTPException(422, f"unknown pose preset {name!r}")
    cfg = PRESETS[name]
    if not 0 <= spec.frame < cfg["frames"]:
        raise HTTPException(
            422,
            f"frame {spec.frame} out of range for preset {name!r} "
            f"({cfg['frames']} frames)",
        )
    seq = pose_sequence(joint_count, cfg["frames"], cfg["amplitude"], cfg["seed"])
    return seq[spec.frame]


def create_app(wardrobe_dir, max_image_size=1024, workers=1) -> FastAPI:
    app = FastAPI(title="splatwear try-on service")
    app.add_middleware(
        CORSMiddleware, allow_origins=["*"], allow_methods=["*"],
        allow_headers=["*"], expose_headers=[DIAGNOSTICS_HEADER],
    )
    catalog = Catalog.open(wardrobe_dir)
    assets = {asset_id: catalog.load(asset_id) for asset_id in catalog.ids()}
    app.state.catalog = catalog
    app.state.assets = assets
    app.state.workers = max(1, int(workers))
    app.state.max_image_size = int(max_image_size)

    def get_asset(asset_id):
        if asset_id not in assets:
            raise HTTPException(404, f"unknown asset id {asset_id!r}")
        return assets[asset_id]

    @app.get("/")
    def root():
        return {"service": "splatwear", "assets": len(assets)}

    @app.get("/catalog", response_model=list[CatalogEntryOut])
    def get_catalog():
        out = []
        for asset_id in catalog.ids():
            entry = catalog.get(asset_id)
            out.append(
                CatalogEntryOut(
                    id=asset_id,
                    layer=entry.layer_id.name.lower(),
                    category=entry.category,
                    thumbnail_url=(
                        f"/thumbnails/{asset_id}.png" if entry.thumbnail else None
                    ),
                )
            )
        return out

    @app.get("/thumbnails/{asset_id}.png")
    def get_thumbnail(asset_id: str):
        try:
            entry = catalog.get(asset_id)
        except KeyError:
            raise HTTPException(404, f"unknown asset id {asset_id!r}")
        if not entry.thumbnail:
            raise HTTPException(404, f"asset {asset_id!r} has no thumbnail")
        return FileResponse(os.path.join(catalog.root, entry.thumbnail),
                            media_type="image/png")

    @app.get("/presets", response_model=list[PresetOut])
    def get_presets():
        return [
            PresetOut(name=name, frames=cfg["frames"])
            for name, cfg in PRESETS.items()
        ]

    @app.post("/render")
    def post_render(req: RenderRequest, detail: str | None = Query(default=None)):
        limit = app.state.max_image_size
        if req.image_width > limit or req.image_height > limit:
            raise HTTPException(
                413, f"image size {req.image_width}x{req.image_height} exceeds "
                     f"the {limit}px limit"
            )
        if req.image_width < 1 or req.image_height < 1:
            raise HTTPException(422, "image size must be at least 1x1")

        body = get_asset(req.body_asset_id)
        slots = {}
        for lid, aid in (
            (LayerId.UPPER, req.upper_asset_id),
            (LayerId.LOWER, req.lower_asset_id),
            (LayerId.OUTER, req.outer_asset_id),
        ):
            if aid:
                slots[lid] = get_asset(aid)
        shape = np.asarray(
            req.shape if req.shape is not None else np.zeros(body.blendshape_count),
            dtype=np.float64,
        )
        try:
            identity = AvatarIdentity(shape=ShapeParams(shape), body_asset=body)
            avatar = ComposedAvatar(identity=identity, slots=slots)
        except ValueError as exc:
            raise HTTPException(422, str(exc))

        pose = _resolve_pose(req.pose, body.joint_count)
        verts = body.template.vertices.astype(np.float64)
        center = (verts.min(axis=0) + verts.max(axis=0)) / 2.0
        camera = CameraModel.orbit(
            center,
            azimuth_deg=req.camera.azimuth,
            elevation_deg=req.camera.elevation,
            distance=req.camera.distance,
            image_size=(req.image_width, req.image_height),
            kind=req.camera.kind,
        )
        try:
            frame = penetration_aware_render(
                avatar, pose, camera,
                eps=req.epsilon,
                workers=app.state.workers,
                correction=req.correction,
            )
        except CompositionError as exc:
            raise HTTPException(422, str(exc))

        pairs = len(frame.diagnostics)
        confirmed = sum(d.confirmed_pixels for d in frame.diagnostics)
        corrected = sum(d.corrected_pixels for d in frame.diagnostics)
        header = f"pairs={pairs};confirmed={confirmed};corrected={corrected}"
        png = png_bytes(frame.rgb)
        if detail == "json":
            payload = RenderDetailOut(
                image_base64=base64.b64encode(png).decode("ascii"),
                pairs=pairs,
                confirmed=confirmed,
                corrected=corrected,
                diagnostics=[
                    PairDiagnosticsOut(
                        pair=f"{d.inner_layer.name.lower()}->"
                             f"{d.outer_layer.name.lower()}",
                        regions=d.regions_found,
                        confirmed=d.confirmed_pixels,
                        corrected=d.corrected_pixels,
                    )
                    for d in frame.diagnostics
                ],
            )
            return JSONResponse(
                payload.model_dump(), headers={DIAGNOSTICS_HEADER: header}
            )
        return Response(
            content=png, media_type="image/png",
            headers={DIAGNOSTICS_HEADER: header},
        )

    return app
