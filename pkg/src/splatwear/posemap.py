"""Template-to-map rasterization and the pose-conditioned deformation model.

A layer's template mesh is rasterized from orthographic front and back
views into coordinate maps; each valid map cell becomes one Gaussian
primitive. The deformation model blends stored exemplars with a Gaussian
kernel over a rotation-geodesic pose distance, preserving the
pose-in / 14-channel-attributes-out contract so a learned predictor can
replace it without touching the rest of the pipeline.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import (
    LayerId,
    NO_NEIGHBOR,
    PoseParams,
    axis_angle_to_matrix,
    quat_normalize,
    rotation_geodesic_angle,
)
from .skinning import BodyDefinition, SkinningField, forward_kinematics, \
    lbs_points, query_skinning_batch

FRONT, BACK = 0, 1
DEFAULT_KERNEL_BANDWIDTH = 0.3  # radians
MIN_TRIANGLE_AREA = 1e-12  # m^2


@dataclass
class TemplateMesh:
    """Triangle mesh in canonical zero-shape space."""

    vertices: np.ndarray  # (V, 3) float32
    faces: np.ndarray  # (F, 3) int32
    layer_label: np.ndarray  # (V,) uint8 LayerId values

    def __post_init__(self):
        self.vertices = np.ascontiguousarray(self.vertices, dtype=np.float32)
        self.faces = np.ascontiguousarray(self.faces, dtype=np.int32)
        self.layer_label = np.ascontiguousarray(self.layer_label, dtype=np.uint8)

    def validate(self):
        reports = []
        v = self.vertices.shape[0]
        if self.faces.size and (self.faces.min() < 0 or self.faces.max() >= v):
            reports.append("face index out of range")
        tri = self.vertices.astype(np.float64)[self.faces]
        area2 = np.linalg.norm(
            np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0]), axis=1
        )
        for f in np.nonzero(area2 * 0.5 <= MIN_TRIANGLE_AREA)[0]:
            reports.append(f"face {f}: degenerate triangle")
        return reports


@dataclass
class CoordinateMaps:
    """Front/back orthographic maps of canonical surface positions.

    positions[side, row, col] is the 3D point hit by that pixel's ray
    (front rays travel along -z and keep the largest z; back rays the
    smallest). Rows run top-down in world y, columns left-right in x.
    """

    positions: np.ndarray  # (2, H, W, 3) float32
    validity: np.ndarray  # (2, H, W) bool

    def __post_init__(self):
        self.positions = np.ascontiguousarray(self.positions, dtype=np.float32)
        self.validity = np.asarray(self.validity, dtype=bool)

    @property
    def map_size(self):
        return self.positions.shape[1], self.positions.shape[2]

    @property
    def valid_count(self):
        return int(self.validity.sum())

    def primitive_index_grid(self):
        """Row-major enumeration of valid cells, front side first; -1 elsewhere."""
        grid = np.full(self.validity.shape, -1, dtype=np.int64)
        grid[self.validity] = np.arange(self.valid_count)
        return grid

    def valid_positions(self):
        return self.positions[self.validity].astype(np.float64)

    def valid_sides(self):
        side = np.broadcast_to(
            np.arange(2, dtype=np.uint8)[:, None, None], self.validity.shape
        )
        return side[self.validity]

    def neighbor_table(self):
        """(N, 4) neighbor indices per valid cell, counter-clockwise as seen
        from outside the surface; NO_NEIGHBOR pads missing entries."""
        grid = self.primitive_index_grid()
        h, w = self.map_size
        n = self.valid_count
        table = np.full((n, 4), NO_NEIGHBOR, dtype=np.int32)
        # Grid steps (drow, dcol). Rows grow downward (-y), so "up" is row-1.
        front_ring = ((0, 1), (-1, 0), (0, -1), (1, 0))   # +x, +y, -x, -y
        back_ring = ((0, 1), (1, 0), (0, -1), (-1, 0))    # mirrored for -z outward
        for side, ring in ((FRONT, front_ring), (BACK, back_ring)):
            rows, cols = np.nonzero(self.validity[side])
            own = grid[side, rows, cols]
            for slot, (dr, dc) in enumerate(ring):
                rr, cc = rows + dr, cols + dc
                ok = (rr >= 0) & (rr < h) & (cc >= 0) & (cc < w)
                nb = np.full(rows.shape, NO_NEIGHBOR, dtype=np.int64)
                nb[ok] = grid[side, rr[ok], cc[ok]]
                table[own, slot] = np.where(nb >= 0, nb, NO_NEIGHBOR)
        return table


def _rasterize_side(vertices, faces, centers_x, centers_y, keep_max_z):
    """Z-buffer one orthographic view; returns (H, W) z and validity."""
    h, w = centers_y.shape[0], centers_x.shape[0]
    zbuf = np.full((h, w), -np.inf if keep_max_z else np.inf)
    valid = np.zeros((h, w), dtype=bool)
    px = centers_x[1] - centers_x[0] if w > 1 else 1.0
    py = centers_y[0] - centers_y[1] if h > 1 else 1.0
    x0, ytop = centers_x[0], centers_y[0]

    for face in faces:
        tri = vertices[face]
        ax, ay = tri[:, 0], tri[:, 1]
        # Orient CCW in (x, y-up) so the edge functions share one sign.
        area = (ax[1] - ax[0]) * (ay[2] - ay[0]) - (ay[1] - ay[0]) * (ax[2] - ax[0])
        if area == 0.0:
            continue  # edge-on in this view
        order = (0, 1, 2) if area > 0 else (0, 2, 1)
        vx, vy, vz = ax[list(order)], ay[list(order)], tri[list(order), 2]

        c_lo = max(0, int(np.floor((vx.min() - x0) / px)))
        c_hi = min(w - 1, int(np.ceil((vx.max() - x0) / px)))
        r_lo = max(0, int(np.floor((ytop - vy.max()) / py)))
        r_hi = min(h - 1, int(np.ceil((ytop - vy.min()) / py)))
        if c_lo > c_hi or r_lo > r_hi:
            continue
        pxs = centers_x[c_lo:c_hi + 1][None, :]
        pys = centers_y[r_lo:r_hi + 1][:, None]

        inside = np.ones((r_hi - r_lo + 1, c_hi - c_lo + 1), dtype=bool)
        bary = []
        for k in range(3):
            a, b = k, (k + 1) % 3
            dx_e, dy_e = vx[b] - vx[a], vy[b] - vy[a]
            e = (pxs - vx[a]) * dy_e - (pys - vy[a]) * dx_e
            # Top-left fill rule: boundary pixels belong to top/left edges only.
            top_left = (dy_e < 0) or (dy_e == 0 and dx_e < 0)
            inside &= (e < 0) | ((e == 0) & top_left)
            bary.append(-e)  # proportional to the opposite-vertex weight
        if not inside.any():
            continue
        wsum = bary[0] + bary[1] + bary[2]
        z = (bary[0] * vz[2] + bary[1] * vz[0] + bary[2] * vz[1]) / wsum

        sub_z = zbuf[r_lo:r_hi + 1, c_lo:c_hi + 1]
        sub_v = valid[r_lo:r_hi + 1, c_lo:c_hi + 1]
        better = inside & (z > sub_z if keep_max_z else z < sub_z)
        sub_z[better] = z[better]
        sub_v |= inside
    return zbuf, valid


def rasterize_coordinate_maps(mesh: TemplateMesh, resolution) -> CoordinateMaps:
    """Orthographic front/back rasterization of a template over its xy bbox.

    Each valid pixel stores (cx, cy, z) where (cx, cy) is the pixel-center
    ray and z the nearest surface hit along the ray (front rays run -z,
    back rays +z). The resulting pixel grid is the Gaussian grid.
    """
    h, w = int(resolution[0]), int(resolution[1])
    if mesh.vertices.shape[0] == 0 or mesh.faces.shape[0] == 0:
        raise ValueError("empty template mesh")
    verts = mesh.vertices.astype(np.float64)
    xmin, ymin = verts[:, 0].min(), verts[:, 1].min()
    xmax, ymax = verts[:, 0].max(), verts[:, 1].max()
    ex = xmax - xmin if xmax > xmin else 1.0
    ey = ymax - ymin if ymax > ymin else 1.0
    centers_x = xmin + (np.arange(w) + 0.5) * ex / w
    centers_y = ymax - (np.arange(h) + 0.5) * ey / h  # row 0 at the top

    positions = np.zeros((2, h, w, 3), dtype=np.float32)
    validity = np.zeros((2, h, w), dtype=bool)
    for side, keep_max in ((FRONT, True), (BACK, False)):
        z, valid = _rasterize_side(verts, mesh.faces, centers_x, centers_y, keep_max)
        gx, gy = np.meshgrid(centers_x, centers_y)
        pos = np.stack([gx, gy, np.where(valid, z, 0.0)], axis=-1)
        positions[side] = pos.astype(np.float32)
        positions[side][~valid] = 0.0
        validity[side] = valid
    return CoordinateMaps(positions=positions, validity=validity)


@dataclass
class GaussianMapAttributes:
    """Per-valid-cell splat attributes (the 14-channel payload)."""

    offsets: np.ndarray  # (N, 3)
    rotations: np.ndarray  # (N, 4) (w, x, y, z)
    opacities: np.ndarray  # (N,)
    scales: np.ndarray  # (N, 3)
    colors: np.ndarray  # (N, 3)

    def __len__(self):
        return self.offsets.shape[0]


@dataclass
class ExemplarDeformationModel:
    """Pose-indexed exemplar attributes blended by a Gaussian kernel.

    All exemplars share the owning CoordinateMaps' valid-cell set, so the
    per-exemplar arrays are (K, N, ...) stacks over the same N cells.
    """

    poses: list  # K PoseParams
    offsets: np.ndarray  # (K, N, 3) float32
    rotations: np.ndarray  # (K, N, 4) float32
    opacities: np.ndarray  # (K, N) float32
    scales: np.ndarray  # (K, N, 3) float32
    colors: np.ndarray  # (K, N, 3) float32
    kernel_bandwidth: float = DEFAULT_KERNEL_BANDWIDTH

    def __post_init__(self):
        if len(self.poses) < 1:
            raise ValueError("deformation model needs at least one exemplar")
        self.offsets = np.ascontiguousarray(self.offsets, dtype=np.float32)
        self.rotations = np.ascontiguousarray(self.rotations, dtype=np.float32)
        self.opacities = np.ascontiguousarray(self.opacities, dtype=np.float32)
        self.scales = np.ascontiguousarray(self.scales, dtype=np.float32)
        self.colors = np.ascontiguousarray(self.colors, dtype=np.float32)

    @property
    def exemplar_count(self):
        return len(self.poses)

    @property
    def cell_count(self):
        return self.offsets.shape[1]


def pose_distance(a: PoseParams, b: PoseParams):
    """Mean per-joint geodesic rotation angle plus the global-orientation
    angle; translation-free by construction."""
    if a.joint_count != b.joint_count:
        raise ValueError("joint counts differ")
    ra = axis_angle_to_matrix(a.joint_rotations)
    rb = axis_angle_to_matrix(b.joint_rotations)
    per_joint = rotation_geodesic_angle(ra, rb)
    g = rotation_geodesic_angle(
        axis_angle_to_matrix(a.global_orientation),
        axis_angle_to_matrix(b.global_orientation),
    )
    return float(per_joint.mean() + g)


def exemplar_blend_weights(model: ExemplarDeformationModel, pose: PoseParams):
    """Normalized kernel weights over the exemplars for a query pose."""
    d = np.array([pose_distance(pose, p) for p in model.poses])
    exact = d < 1e-12
    if exact.any():
        w = np.zeros(len(d))
        w[int(np.argmax(exact))] = 1.0
        return w
    logits = -0.5 * (d / model.kernel_bandwidth) ** 2
    logits -= logits.max()
    w = np.exp(logits)
    return w / w.sum()


def predict_gaussian_maps(model: ExemplarDeformationModel,
                          pose: PoseParams) -> GaussianMapAttributes:
    """Kernel-blend the exemplar attribute maps at a query pose.

    Quaternions are blended by weighted sum and renormalized; all other
    channels blend linearly. An exact pose match returns that exemplar's
    maps unchanged.
    """
    w = exemplar_blend_weights(model, pose)
    if np.max(w) == 1.0:
        k = int(np.argmax(w))
        return GaussianMapAttributes(
            offsets=model.offsets[k].astype(np.float64),
            rotations=model.rotations[k].astype(np.float64),
            opacities=model.opacities[k].astype(np.float64),
            scales=model.scales[k].astype(np.float64),
            colors=model.colors[k].astype(np.float64),
        )
    rot = np.einsum("k,knc->nc", w, model.rotations.astype(np.float64))
    return GaussianMapAttributes(
        offsets=np.einsum("k,knc->nc", w, model.offsets.astype(np.float64)),
        rotations=quat_normalize(rot),
        opacities=w @ model.opacities.astype(np.float64),
        scales=np.einsum("k,knc->nc", w, model.scales.astype(np.float64)),
        colors=np.einsum("k,knc->nc", w, model.colors.astype(np.float64)),
    )


def posed_positional_maps(maps: CoordinateMaps, field: SkinningField,
                          pose: PoseParams, body: BodyDefinition):
    """LBS-deform the coordinate maps into pose space (zero shape, zero
    offsets). Returns (2, H, W, 3) positions; invalid cells stay zero."""
    transforms = forward_kinematics(pose, body)
    pts = maps.valid_positions()
    weights, _ = query_skinning_batch(field, pts)
    posed = lbs_points(
        pts, np.zeros_like(pts), np.zeros(0),
        np.zeros((pts.shape[0], 0, 3)), weights, transforms,
    )
    out = np.zeros(maps.positions.shape, dtype=np.float64)
    out[maps.validity] = posed
    return out
