"""Procedural layered test avatars: capsule-torso bodies, tube garments,
pose sequences, and camera rigs, all bit-reproducible from a seed.

These scenes stand in for real captures: every asset passes validation,
garments keep strictly positive clearance from the body in canonical
pose, and inject_penetration manufactures ground-truth poke artifacts
for the correction pipeline.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dataclass_field, replace

import numpy as np

from .core import CameraModel, LayerId, PoseParams, ShapeParams
from .losses import layer_normals
from .posemap import (
    CoordinateMaps,
    ExemplarDeformationModel,
    TemplateMesh,
    rasterize_coordinate_maps,
)
from .render import PosedGaussianSet, rasterize, reference_composite
from .skinning import BodyDefinition, build_skinning_field
from .wardrobe import (
    AvatarIdentity,
    Catalog,
    ComposedAvatar,
    WardrobeAsset,
    classify_inside_garment,
)

GARMENT_KINDS = ("tube-skirt", "shirt-shell", "open-jacket-shell")
_KIND_LAYER = {
    "tube-skirt": LayerId.LOWER,
    "shirt-shell": LayerId.UPPER,
    "open-jacket-shell": LayerId.OUTER,
}
_LAYER_COLOR = {
    LayerId.BODY: (0.85, 0.64, 0.52),
    LayerId.LOWER: (0.20, 0.30, 0.80),
    LayerId.UPPER: (0.15, 0.65, 0.30),
    LayerId.OUTER: (0.75, 0.65, 0.15),
}


@dataclass(frozen=True)
class GarmentSpec:
    kind: str
    radius: float
    y_min: float
    y_max: float
    arc_deg: float = 360.0

    def __post_init__(self):
        if self.kind not in GARMENT_KINDS:
            raise ValueError(f"unknown garment kind {self.kind!r}")

    @property
    def layer_id(self):
        return _KIND_LAYER[self.kind]


@dataclass(frozen=True)
class SynthSpec:
    """Everything needed to expand one deterministic test scene."""

    seed: int = 7
    joint_count: int = 4
    blendshape_count: int = 2
    torso_radius: float = 0.15
    torso_height: float = 1.2
    limb_count: int = 0
    garments: tuple = (
        GarmentSpec("tube-skirt", radius=0.22, y_min=0.05, y_max=0.55),
        GarmentSpec("shirt-shell", radius=0.21, y_min=0.60, y_max=1.10),
    )
    map_resolution: tuple = (32, 32)
    field_resolution: tuple = (16, 16, 16)
    noise_level: float = 0.0
    exemplar_count: int = 1
    pose_frames: int = 8
    pose_amplitude: float = 0.35
    camera_count: int = 1
    camera_distance: float = 2.4
    camera_elevation_deg: float = 5.0
    image_size: tuple = (64, 64)
    shape_coefficients: tuple = (0.0, 0.0)

    def validate(self):
        problems = []
        if self.joint_count < 2:
            problems.append("joint_count must be at least 2")
        if self.blendshape_count < 1:
            problems.append("blendshape_count must be at least 1")
        if len(self.shape_coefficients) != self.blendshape_count:
            problems.append("shape_coefficients length must equal blendshape_count")
        if self.exemplar_count < 1:
            problems.append("exemplar_count must be at least 1")
        if self.pose_frames < 1:
            problems.append("pose_frames must be at least 1")
        if not (0 <= self.limb_count <= 2):
            problems.append("limb_count must be 0, 1, or 2")
        for g in self.garments:
            if g.radius <= self.torso_radius:
                problems.append(
                    f"{g.kind}: radius {g.radius} must exceed torso radius "
                    f"{self.torso_radius} (guaranteed interpenetration)"
                )
            if self.limb_count and g.y_max > 0.72 * self.torso_height \
                    and g.radius < self.limb_reach:
                problems.append(
                    f"{g.kind}: radius {g.radius} sits inside the limb span "
                    f"{self.limb_reach}"
                )
            if g.y_max <= g.y_min:
                problems.append(f"{g.kind}: empty y range")
        return problems

    @property
    def limb_reach(self):
        return self.torso_radius + 0.35


def _tube_mesh(radius, y_min, y_max, arc_deg, layer_id, n_seg=32, n_rings=10,
               caps=False, center_offset=(0.0, 0.0)):
    """Open or capped tube around the y axis; cross-section in the xz plane."""
    full = arc_deg >= 360.0 - 1e-9
    n_ang = n_seg if full else n_seg + 1
    start = math.radians(90.0 + (360.0 - arc_deg) / 2.0)  # gap faces +z
    angles = start + np.arange(n_ang) * math.radians(arc_deg) / n_seg
    ys = np.linspace(y_min, y_max, n_rings)
    cx, cz = center_offset
    verts = []
    for y in ys:
        for a in angles:
            verts.append((cx + radius * math.sin(a), y, cz + radius * math.cos(a)))
    faces = []
    for r in range(n_rings - 1):
        for s in range(n_seg):
            s2 = (s + 1) % n_ang if full else s + 1
            a = r * n_ang + s
            b = r * n_ang + s2
            c = (r + 1) * n_ang + s
            d = (r + 1) * n_ang + s2
            faces.append((a, b, c))
            faces.append((b, d, c))
    if caps:
        for y, ring in ((y_min, 0), (y_max, n_rings - 1)):
            center = len(verts)
            verts.append((cx, y, cz))
            for s in range(n_seg):
                s2 = (s + 1) % n_ang if full else s + 1
                faces.append((ring * n_ang + s, ring * n_ang + s2, center))
    verts = np.asarray(verts, dtype=np.float32)
    faces = np.asarray(faces, dtype=np.int32)
    labels = np.full(len(verts), int(layer_id), dtype=np.uint8)
    return TemplateMesh(vertices=verts, faces=faces, layer_label=labels)


def _limb_mesh(spec: SynthSpec, side, layer_id):
    """Short horizontal arm cylinder at shoulder height."""
    y = 0.8 * spec.torso_height
    length = 0.35
    mesh = _tube_mesh(0.05, 0.0, length, 360.0, layer_id, n_seg=12, n_rings=4,
                      caps=True)
    v = mesh.vertices.astype(np.float64)
    # Rotate the tube axis from y onto +/-x and attach at the shoulder.
    rotated = np.stack([side * v[:, 1] + side * spec.torso_radius,
                        np.full(len(v), y) + v[:, 0], v[:, 2]], axis=1)
    return TemplateMesh(vertices=rotated.astype(np.float32), faces=mesh.faces,
                        layer_label=mesh.layer_label)


def _merge_meshes(meshes):
    verts, faces, labels = [], [], []
    base = 0
    for m in meshes:
        verts.append(m.vertices)
        faces.append(m.faces + base)
        labels.append(m.layer_label)
        base += len(m.vertices)
    return TemplateMesh(
        vertices=np.concatenate(verts),
        faces=np.concatenate(faces),
        layer_label=np.concatenate(labels),
    )


def _body_definition(spec: SynthSpec, mesh: TemplateMesh) -> BodyDefinition:
    j = spec.joint_count
    joint_y = np.linspace(0.0, spec.torso_height, j)
    rest_joints = np.stack(
        [np.zeros(j), joint_y, np.zeros(j)], axis=1
    )
    parents = np.arange(j) - 1
    verts = mesh.vertices.astype(np.float64)
    # Smooth per-joint weights: a triangular bump around each joint height.
    gap = spec.torso_height / max(j - 1, 1)
    w = np.maximum(0.0, 1.0 - np.abs(verts[:, 1:2] - joint_y[None, :]) / gap)
    w = np.where(w.sum(axis=1, keepdims=True) > 0, w, 0.0)
    none = w.sum(axis=1) == 0
    if none.any():  # limbs can poke outside the joint ladder's reach
        nearest = np.argmin(np.abs(verts[none, 1:2] - joint_y[None, :]), axis=1)
        w[none, :] = 0.0
        w[np.nonzero(none)[0], nearest] = 1.0
    w = w / w.sum(axis=1, keepdims=True)

    b = spec.blendshape_count
    radial = verts.copy()
    radial[:, 1] = 0.0
    norms = np.linalg.norm(radial, axis=1, keepdims=True)
    radial = np.where(norms > 1e-9, radial / np.maximum(norms, 1e-9), 0.0)
    offsets = np.zeros((len(verts), b, 3))
    offsets[:, 0, :] = 0.03 * radial  # girth blendshape
    if b > 1:
        offsets[:, 1, 1] = 0.05 * verts[:, 1] / spec.torso_height  # stature
    return BodyDefinition(
        rest_joints=rest_joints,
        parent_indices=parents,
        rest_vertices=verts,
        vertex_weights=w,
        vertex_blendshape_offsets=offsets,
    )


def _exemplar_model(spec: SynthSpec, maps: CoordinateMaps, layer_id,
                    rng) -> ExemplarDeformationModel:
    n = maps.valid_count
    positions = maps.valid_positions()
    h, w = maps.map_size
    xy_extent = positions[:, :2].max(axis=0) - positions[:, :2].min(axis=0)
    cell_world = max(xy_extent.max() / max(h, w), 1e-4)
    sigma = 0.65 * cell_world

    base_color = np.asarray(_LAYER_COLOR[layer_id])
    shade = 0.9 + 0.1 * np.sin(37.0 * positions[:, 0] + 53.0 * positions[:, 1])
    colors = np.clip(base_color[None, :] * shade[:, None], 0.0, 1.0)
    opacity = 1.0 if layer_id == LayerId.BODY else 0.95

    k = spec.exemplar_count
    poses, offsets = [], []
    for e in range(k):
        if e == 0:
            poses.append(PoseParams.canonical(spec.joint_count))
            offs = np.zeros((n, 3))
        else:
            bend = np.zeros((spec.joint_count, 3))
            bend[:, 2] = spec.pose_amplitude * rng.uniform(-1.0, 1.0, spec.joint_count)
            poses.append(PoseParams(joint_rotations=bend))
            phase = rng.uniform(0.0, 2.0 * np.pi)
            offs = spec.noise_level * np.stack(
                [
                    np.sin(6.0 * positions[:, 1] + phase),
                    np.zeros(n),
                    np.cos(6.0 * positions[:, 1] + phase),
                ],
                axis=1,
            )
        offsets.append(offs)
    quat = np.zeros((k, n, 4))
    quat[:, :, 0] = 1.0
    return ExemplarDeformationModel(
        poses=poses,
        offsets=np.asarray(offsets, dtype=np.float32),
        rotations=quat.astype(np.float32),
        opacities=np.full((k, n), opacity, dtype=np.float32),
        scales=np.full((k, n, 3), sigma, dtype=np.float32),
        colors=np.broadcast_to(colors[None], (k, n, 3)).astype(np.float32),
    )


@dataclass
class SynthScene:
    spec: SynthSpec
    body_definition: BodyDefinition
    assets: dict  # LayerId -> WardrobeAsset
    identity: AvatarIdentity
    avatar: ComposedAvatar
    cameras: list
    ground_truth: list  # per camera RenderOutput from reference_composite

    def garment_layers(self):
        return [lid for lid in self.assets if lid != LayerId.BODY]


def generate_scene(spec: SynthSpec, ground_truth=True) -> SynthScene:
    """Expand a spec into wardrobe assets, an avatar, cameras, and
    (optionally) reference-composited ground-truth renders."""
    problems = spec.validate()
    if problems:
        raise ValueError("; ".join(problems))
    rng = np.random.default_rng(spec.seed)

    body_parts = [
        _tube_mesh(spec.torso_radius, 0.0, spec.torso_height, 360.0,
                   LayerId.BODY, caps=True)
    ]
    for i in range(spec.limb_count):
        body_parts.append(_limb_mesh(spec, 1.0 if i == 0 else -1.0, LayerId.BODY))
    body_mesh = _merge_meshes(body_parts)
    body_def = _body_definition(spec, body_mesh)
    field = build_skinning_field(body_def, resolution=spec.field_resolution)

    assets = {}
    body_maps = rasterize_coordinate_maps(body_mesh, spec.map_resolution)
    assets[LayerId.BODY] = WardrobeAsset(
        asset_id=f"body-{spec.seed}",
        layer_id=LayerId.BODY,
        category="capsule body",
        template=body_mesh,
        coordinate_maps=body_maps,
        deformation_model=_exemplar_model(spec, body_maps, LayerId.BODY, rng),
        skinning_field=field,
        skeleton=body_def.skeleton(),
        joint_count=spec.joint_count,
        blendshape_count=spec.blendshape_count,
    )
    for g in spec.garments:
        mesh = _tube_mesh(g.radius, g.y_min, g.y_max, g.arc_deg, g.layer_id)
        maps = rasterize_coordinate_maps(mesh, spec.map_resolution)
        assets[g.layer_id] = WardrobeAsset(
            asset_id=f"{g.kind}-{spec.seed}",
            layer_id=g.layer_id,
            category=g.kind,
            template=mesh,
            coordinate_maps=maps,
            deformation_model=_exemplar_model(spec, maps, g.layer_id, rng),
            skinning_field_ref=f"body-{spec.seed}",
            joint_count=spec.joint_count,
            blendshape_count=spec.blendshape_count,
        )

    identity = AvatarIdentity(
        shape=ShapeParams(np.asarray(spec.shape_coefficients)),
        body_asset=assets[LayerId.BODY],
    )
    avatar = ComposedAvatar(
        identity=identity,
        slots={lid: a for lid, a in assets.items() if lid != LayerId.BODY},
    )
    target = np.array([0.0, spec.torso_height / 2.0, 0.0])
    cameras = [
        CameraModel.orbit(
            target,
            azimuth_deg=i * 360.0 / spec.camera_count,
            elevation_deg=spec.camera_elevation_deg,
            distance=spec.camera_distance,
            image_size=spec.image_size,
        )
        for i in range(spec.camera_count)
    ]
    gt = []
    if ground_truth:
        from .tryon import compose_gaussians

        gset = compose_gaussians(avatar, PoseParams.canonical(spec.joint_count))
        gt = [reference_composite(gset, cam) for cam in cameras]
    return SynthScene(
        spec=spec,
        body_definition=body_def,
        assets=assets,
        identity=identity,
        avatar=avatar,
        cameras=cameras,
        ground_truth=gt,
    )


@dataclass
class PenetrationInjection:
    scene: SynthScene  # perturbed copy
    displaced_cells: np.ndarray  # body primitive indices pushed outward
    poke_pixels: list  # per camera: (rows, cols) of label changes


def inject_penetration(scene: SynthScene, fraction, magnitude, seed=0,
                       inner_layer=LayerId.BODY) -> PenetrationInjection:
    """Push a fraction of the inner layer's covered splats outward along
    their normals, hard enough to poke through the layers above; records,
    per camera, exactly which reference-render pixels change label."""
    if not 0.0 <= fraction <= 1.0:
        raise ValueError("fraction must be in [0, 1]")
    from .tryon import compose_gaussians

    spec = scene.spec
    inner_layer = LayerId(inner_layer)
    inner_asset = scene.assets[inner_layer]
    maps = inner_asset.coordinate_maps
    inner_pts = maps.valid_positions()
    normals, normal_ok = layer_normals(inner_pts, maps.neighbor_table())

    order = list(scene.avatar.occupied_layers())
    covering = [lid for lid in order if order.index(lid) > order.index(inner_layer)]
    covered = np.zeros(len(inner_pts), dtype=bool)
    for lid in covering:
        g_asset = scene.assets[lid]
        covered |= classify_inside_garment(
            inner_pts,
            g_asset.coordinate_maps.valid_positions(),
            g_asset.coordinate_maps.neighbor_table(),
            eps=0.0,
        )
    candidates = np.nonzero(covered & normal_ok)[0]
    rng = np.random.default_rng(seed)
    n_pick = int(round(fraction * candidates.size))
    picked = rng.choice(candidates, size=n_pick, replace=False) if n_pick else \
        np.zeros(0, dtype=np.int64)

    model = inner_asset.deformation_model
    offsets = model.offsets.astype(np.float64).copy()
    offsets[:, picked, :] += magnitude * normals[picked]
    perturbed_model = ExemplarDeformationModel(
        poses=model.poses,
        offsets=offsets.astype(np.float32),
        rotations=model.rotations,
        opacities=model.opacities,
        scales=model.scales,
        colors=model.colors,
        kernel_bandwidth=model.kernel_bandwidth,
    )
    new_assets = dict(scene.assets)
    new_assets[inner_layer] = WardrobeAsset(
        asset_id=inner_asset.asset_id,
        layer_id=inner_layer,
        category=inner_asset.category,
        template=inner_asset.template,
        coordinate_maps=inner_asset.coordinate_maps,
        deformation_model=perturbed_model,
        skinning_field=inner_asset.skinning_field,
        skinning_field_ref=inner_asset.skinning_field_ref,
        skeleton=inner_asset.skeleton,
        joint_count=inner_asset.joint_count,
        blendshape_count=inner_asset.blendshape_count,
    )
    identity = AvatarIdentity(shape=scene.identity.shape,
                              body_asset=new_assets[LayerId.BODY])
    avatar = ComposedAvatar(
        identity=identity,
        slots={lid: a for lid, a in new_assets.items() if lid != LayerId.BODY},
    )

    pose = PoseParams.canonical(spec.joint_count)
    poke_pixels = []
    gt = []
    if scene.ground_truth:
        gset = compose_gaussians(avatar, pose)
        for cam, clean in zip(scene.cameras, scene.ground_truth):
            dirty = reference_composite(gset, cam)
            gt.append(dirty)
            rows, cols = np.nonzero(dirty.layer_labels != clean.layer_labels)
            poke_pixels.append((rows, cols))

    perturbed = SynthScene(
        spec=spec,
        body_definition=scene.body_definition,
        assets=new_assets,
        identity=identity,
        avatar=avatar,
        cameras=scene.cameras,
        ground_truth=gt,
    )
    return PenetrationInjection(
        scene=perturbed, displaced_cells=picked, poke_pixels=poke_pixels
    )


def pose_sequence(joint_count, frames, amplitude, seed):
    """Smooth per-joint sinusoids with seeded phases; frame 0 is canonical
    (a sine envelope zeroes every curve there)."""
    rng = np.random.default_rng(seed ^ 0x5EED)
    j = joint_count
    phases = rng.uniform(0.0, 2.0 * np.pi, j)
    rates = rng.uniform(0.5, 1.5, j)
    axes = np.zeros((j, 3))
    axes[:, 2] = 1.0
    axes[:, 0] = 0.3 * rng.uniform(-1.0, 1.0, j)
    axes /= np.linalg.norm(axes, axis=1, keepdims=True)
    poses = []
    for t in range(frames):
        u = t / max(frames - 1, 1)
        envelope = math.sin(math.pi * min(u, 0.9999))
        angles = amplitude * envelope * np.sin(2.0 * np.pi * rates * u + phases)
        if t == 0:
            angles = np.zeros(j)
        poses.append(PoseParams(joint_rotations=axes * angles[:, None]))
    return poses


def generate_pose_sequence(spec: SynthSpec):
    return pose_sequence(spec.joint_count, spec.pose_frames,
                         spec.pose_amplitude, spec.seed)


def scene_to_catalog(scene: SynthScene, directory, thumbnails=True) -> Catalog:
    """Write every scene asset into a wardrobe directory with thumbnails."""
    catalog = Catalog.open(directory)
    for lid in sorted(scene.assets):
        asset = scene.assets[lid]
        png = render_thumbnail(asset, scene) if thumbnails else None
        catalog.add(asset, thumbnail_png=png)
    return catalog


def render_thumbnail(asset: WardrobeAsset, scene: SynthScene, size=96):
    """Small orbit render of a single asset in canonical pose."""
    from io import BytesIO

    from PIL import Image

    from .tryon import build_canonical_layer, pose_layer
    from .skinning import forward_kinematics

    spec = scene.spec
    body = scene.assets[LayerId.BODY]
    field = asset.skinning_field or body.skinning_field
    pose = PoseParams.canonical(spec.joint_count)
    layer = build_canonical_layer(asset, pose, field)
    transforms = forward_kinematics(pose, body.skeleton)
    gset = pose_layer(layer, ShapeParams.zero(spec.blendshape_count), transforms)
    cam = CameraModel.orbit(
        np.array([0.0, spec.torso_height / 2.0, 0.0]),
        azimuth_deg=20.0, elevation_deg=5.0, distance=spec.camera_distance,
        image_size=(size, size),
    )
    out = rasterize(gset, cam)
    img = Image.fromarray((np.clip(out.rgb, 0, 1) * 255).astype(np.uint8))
    buf = BytesIO()
    img.save(buf, format="PNG")
    return buf.getvalue()
