"""Diffused voxel skinning fields, zero-shape canonicalization, and LBS.

The voxel field carries per-voxel joint weights and blendshape offsets,
seeded from body vertices and diffused outward so any canonical-space
point (including garment splats floating off the body) can be queried.
"""

from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np
from scipy.spatial import cKDTree

from .core import BoneTransformSet, PoseParams, axis_angle_to_matrix

DIFFUSION_TOL = 1e-6
DEFAULT_RESOLUTION = (64, 64, 64)
DEFAULT_PADDING_FRACTION = 0.1


@dataclass(frozen=True)
class Skeleton:
    """Kinematic tree alone: rest joint positions and parent indices."""

    rest_joints: np.ndarray  # (J, 3)
    parent_indices: np.ndarray  # (J,), -1 for the root

    def __post_init__(self):
        object.__setattr__(self, "rest_joints", np.asarray(self.rest_joints, dtype=np.float64))
        object.__setattr__(self, "parent_indices", np.asarray(self.parent_indices, dtype=np.int64))
        if np.sum(self.parent_indices < 0) != 1:
            raise ValueError("kinematic tree needs exactly one root")
        self.topological_order()  # raises on cycles

    @property
    def joint_count(self):
        return self.rest_joints.shape[0]

    def topological_order(self):
        j = self.joint_count
        order, seen = [], np.zeros(j, dtype=bool)
        remaining = list(range(j))
        while remaining:
            progressed = False
            still = []
            for i in remaining:
                p = self.parent_indices[i]
                if p < 0 or seen[p]:
                    order.append(i)
                    seen[i] = True
                    progressed = True
                else:
                    still.append(i)
            if not progressed:
                raise ValueError("kinematic tree contains a cycle")
            remaining = still
        return order


@dataclass(frozen=True)
class BodyDefinition:
    """Kinematic tree plus the seed surface for field construction."""

    rest_joints: np.ndarray  # (J, 3)
    parent_indices: np.ndarray  # (J,), -1 for the root
    rest_vertices: np.ndarray  # (V, 3)
    vertex_weights: np.ndarray  # (V, J)
    vertex_blendshape_offsets: np.ndarray  # (V, B, 3)

    def __post_init__(self):
        object.__setattr__(self, "rest_joints", np.asarray(self.rest_joints, dtype=np.float64))
        object.__setattr__(self, "parent_indices", np.asarray(self.parent_indices, dtype=np.int64))
        object.__setattr__(self, "rest_vertices", np.asarray(self.rest_vertices, dtype=np.float64))
        object.__setattr__(self, "vertex_weights", np.asarray(self.vertex_weights, dtype=np.float64))
        object.__setattr__(
            self, "vertex_blendshape_offsets",
            np.asarray(self.vertex_blendshape_offsets, dtype=np.float64),
        )
        self.skeleton()  # validates the tree

    @property
    def joint_count(self):
        return self.rest_joints.shape[0]

    @property
    def blendshape_count(self):
        return self.vertex_blendshape_offsets.shape[1]

    def skeleton(self):
        return Skeleton(rest_joints=self.rest_joints,
                        parent_indices=self.parent_indices)

    def topological_order(self):
        return self.skeleton().topological_order()


@dataclass
class SkinningField:
    """Node grid over `bbox`; values live at node positions and are
    trilinearly interpolated between them."""

    resolution: tuple  # (nx, ny, nz)
    bbox_min: np.ndarray  # (3,)
    bbox_max: np.ndarray  # (3,)
    weights: np.ndarray  # (nx, ny, nz, J) float32
    offsets: np.ndarray  # (nx, ny, nz, B, 3) float32
    validity: np.ndarray  # (nx, ny, nz) bool

    def __post_init__(self):
        self.resolution = tuple(int(r) for r in self.resolution)
        self.bbox_min = np.asarray(self.bbox_min, dtype=np.float64).reshape(3)
        self.bbox_max = np.asarray(self.bbox_max, dtype=np.float64).reshape(3)
        self.weights = np.ascontiguousarray(self.weights, dtype=np.float32)
        self.offsets = np.ascontiguousarray(self.offsets, dtype=np.float32)
        self.validity = np.asarray(self.validity, dtype=bool)

    @property
    def joint_count(self):
        return self.weights.shape[3]

    @property
    def blendshape_count(self):
        return self.offsets.shape[3]

    @property
    def node_spacing(self):
        res = np.asarray(self.resolution, dtype=np.float64)
        return (self.bbox_max - self.bbox_min) / np.maximum(res - 1.0, 1.0)

    def node_positions(self):
        axes = [
            np.linspace(self.bbox_min[d], self.bbox_max[d], self.resolution[d])
            for d in range(3)
        ]
        gx, gy, gz = np.meshgrid(*axes, indexing="ij")
        return np.stack([gx, gy, gz], axis=-1)


@numba.njit(cache=True)
def _jacobi_diffuse(values, free_idx, nbr_idx, max_iters, tol):
    """Jacobi relaxation of the 6-neighbor Laplacian on the free nodes.

    values: (N, C) flat node values (seeded entries held fixed);
    nbr_idx: (F, 6) flat neighbor indices, -1 where off-grid. Runs until
    the max per-iteration change drops below tol or max_iters sweeps.
    """
    cur = values
    nxt = values.copy()
    n_free = free_idx.shape[0]
    channels = values.shape[1]
    for _ in range(max_iters):
        max_change = 0.0
        for k in range(n_free):
            i = free_idx[k]
            cnt = 0.0
            for c in range(channels):
                nxt[i, c] = 0.0
            for m in range(6):
                j = nbr_idx[k, m]
                if j >= 0:
                    cnt += 1.0
                    for c in range(channels):
                        nxt[i, c] += cur[j, c]
            for c in range(channels):
                v = nxt[i, c] / cnt
                nxt[i, c] = v
                d = abs(v - cur[i, c])
                if d > max_change:
                    max_change = d
        cur, nxt = nxt, cur
        if max_change < tol:
            break
    return cur


def _free_neighbor_indices(free, resolution):
    """(F, 6) flat indices of each free node's grid neighbors, -1 padded."""
    nx, ny, nz = resolution
    idx3 = np.argwhere(free)
    flat = np.ravel_multi_index((idx3[:, 0], idx3[:, 1], idx3[:, 2]), (nx, ny, nz))
    nbrs = np.full((idx3.shape[0], 6), -1, dtype=np.int64)
    offsets = [(-1, 0, 0), (1, 0, 0), (0, -1, 0), (0, 1, 0), (0, 0, -1), (0, 0, 1)]
    for m, (dx, dy, dz) in enumerate(offsets):
        q = idx3 + np.array([dx, dy, dz])
        ok = (
            (q[:, 0] >= 0) & (q[:, 0] < nx)
            & (q[:, 1] >= 0) & (q[:, 1] < ny)
            & (q[:, 2] >= 0) & (q[:, 2] < nz)
        )
        nbrs[ok, m] = np.ravel_multi_index(
            (q[ok, 0], q[ok, 1], q[ok, 2]), (nx, ny, nz)
        )
    return flat, nbrs


def build_skinning_field(body: BodyDefinition, resolution=DEFAULT_RESOLUTION,
                         padding=None):
    """Voxelize the body's weights/offsets and diffuse them over the grid.

    Nodes within one node-diagonal of a body vertex are seeded with that
    (nearest) vertex's values and held fixed; the rest relax under Jacobi
    iteration of the 6-neighbor Laplacian until the max per-iteration
    change drops below 1e-6 or 10 * max(resolution) sweeps elapse. Weights
    are renormalized at the end and every voxel is marked valid.
    """
    if body.rest_vertices.shape[0] < 1:
        raise ValueError("body has no vertices")
    resolution = tuple(int(r) for r in resolution)
    if any(r < 4 for r in resolution):
        raise ValueError("resolution must be at least 4 per axis")

    lo = body.rest_vertices.min(axis=0)
    hi = body.rest_vertices.max(axis=0)
    extent = hi - lo
    if padding is None:
        pad = extent * DEFAULT_PADDING_FRACTION
        # Degenerate axes (flat bodies) still need breathing room.
        pad = np.where(pad > 0, pad, max(float(extent.max()), 1.0) * DEFAULT_PADDING_FRACTION)
    else:
        pad = np.full(3, float(padding))
    bbox_min = lo - pad
    bbox_max = hi + pad
    if np.any(bbox_max - bbox_min <= 0):
        raise ValueError("degenerate bounding box")

    j, b = body.joint_count, body.blendshape_count
    nx, ny, nz = resolution
    spacing = (bbox_max - bbox_min) / (np.asarray(resolution, dtype=np.float64) - 1.0)
    diag = float(np.linalg.norm(spacing))

    axes = [np.linspace(bbox_min[d], bbox_max[d], resolution[d]) for d in range(3)]
    gx, gy, gz = np.meshgrid(*axes, indexing="ij")
    nodes = np.stack([gx, gy, gz], axis=-1).reshape(-1, 3)

    tree = cKDTree(body.rest_vertices)
    dist, nearest = tree.query(nodes)
    seeded = (dist <= diag).reshape(nx, ny, nz)
    nearest = nearest.reshape(nx, ny, nz)

    # Weights and flattened offsets diffuse together as one channel stack.
    seed_vals = np.concatenate(
        [body.vertex_weights, body.vertex_blendshape_offsets.reshape(-1, b * 3)], axis=1
    )
    channels = seed_vals.shape[1]
    values = np.empty((nx, ny, nz, channels), dtype=np.float64)
    seed_mean = seed_vals[np.unique(nearest[seeded])].mean(axis=0) if seeded.any() \
        else seed_vals.mean(axis=0)
    values[:] = seed_mean
    values[seeded] = seed_vals[nearest[seeded]]

    if not bool(seeded.all()):
        free_flat, nbr_idx = _free_neighbor_indices(~seeded, resolution)
        flat_values = values.reshape(-1, channels)
        flat_values = _jacobi_diffuse(
            flat_values, free_flat, nbr_idx, 10 * max(resolution), DIFFUSION_TOL
        )
        values = flat_values.reshape(nx, ny, nz, channels)

    weights = values[..., :j]
    sums = weights.sum(axis=-1, keepdims=True)
    weights = weights / np.where(sums > 0, sums, 1.0)
    offsets = values[..., j:].reshape(nx, ny, nz, b, 3)

    return SkinningField(
        resolution=resolution,
        bbox_min=bbox_min,
        bbox_max=bbox_max,
        weights=weights.astype(np.float32),
        offsets=offsets.astype(np.float32),
        validity=np.ones((nx, ny, nz), dtype=bool),
    )


def query_skinning_batch(field: SkinningField, points):
    """Trilinear field lookup for (N, 3) points; out-of-bbox queries clamp
    to the boundary. Returns (weights (N, J), offsets (N, B, 3)) with the
    weight rows renormalized to sum to 1."""
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    res = np.asarray(field.resolution, dtype=np.float64)
    extent = field.bbox_max - field.bbox_min
    u = (points - field.bbox_min) / extent * (res - 1.0)
    u = np.clip(u, 0.0, res - 1.0)
    i0 = np.floor(u).astype(np.int64)
    i0 = np.minimum(i0, (res - 2.0).astype(np.int64))
    i0 = np.maximum(i0, 0)
    f = u - i0

    jn = field.joint_count
    bn = field.blendshape_count
    w_grid = field.weights.astype(np.float64)
    o_grid = field.offsets.reshape(*field.weights.shape[:3], bn * 3).astype(np.float64)

    w_out = np.zeros((points.shape[0], jn))
    o_out = np.zeros((points.shape[0], bn * 3))
    for dx in (0, 1):
        for dy in (0, 1):
            for dz in (0, 1):
                wt = (
                    (f[:, 0] if dx else 1.0 - f[:, 0])
                    * (f[:, 1] if dy else 1.0 - f[:, 1])
                    * (f[:, 2] if dz else 1.0 - f[:, 2])
                )
                ix, iy, iz = i0[:, 0] + dx, i0[:, 1] + dy, i0[:, 2] + dz
                w_out += wt[:, None] * w_grid[ix, iy, iz]
                o_out += wt[:, None] * o_grid[ix, iy, iz]
    sums = w_out.sum(axis=1, keepdims=True)
    w_out = w_out / np.where(sums > 0, sums, 1.0)
    return w_out, o_out.reshape(-1, bn, 3)


def query_skinning(field: SkinningField, point):
    """Single-point convenience wrapper around query_skinning_batch."""
    w, o = query_skinning_batch(field, np.asarray(point).reshape(1, 3))
    return w[0], o[0]


def canonicalize_point(point, beta, offsets):
    """Strip subject shape: v_canonical = v - sum_b beta_b * offset_b.

    Accepts a single point with (B, 3) offsets or batched (N, 3) points
    with (N, B, 3) offsets.
    """
    point = np.asarray(point, dtype=np.float64)
    beta = np.asarray(beta, dtype=np.float64).reshape(-1)
    offsets = np.asarray(offsets, dtype=np.float64)
    if offsets.shape[-2] != beta.shape[0]:
        raise ValueError("offset row count must match the shape coefficient count")
    return point - np.einsum("b,...bk->...k", beta, offsets)


def restore_point(point, beta, offsets):
    """Inverse of canonicalize_point: add the shape blendshape term back."""
    point = np.asarray(point, dtype=np.float64)
    beta = np.asarray(beta, dtype=np.float64).reshape(-1)
    offsets = np.asarray(offsets, dtype=np.float64)
    return point + np.einsum("b,...bk->...k", beta, offsets)


def _compose(r1, t1, r2, t2):
    return r1 @ r2, r1 @ t2 + t1


def forward_kinematics(pose: PoseParams, body) -> BoneTransformSet:
    """Per-joint bone transforms (canonical -> posed) for a BodyDefinition
    or bare Skeleton.

    The rest configuration has identity joint rotations, so the inverse
    bind of joint j is a pure translation by -rest_joints[j]; composing it
    with the posed chain gives the canonical pose an exact identity.
    """
    if pose.joint_count != body.joint_count:
        raise ValueError(
            f"pose has {pose.joint_count} joints, body has {body.joint_count}"
        )
    j = body.joint_count
    local_rots = axis_angle_to_matrix(pose.joint_rotations)
    global_rot = axis_angle_to_matrix(pose.global_orientation)

    rot = np.empty((j, 3, 3))
    trans = np.empty((j, 3))
    for idx in body.topological_order():
        p = body.parent_indices[idx]
        if p < 0:
            rel = body.rest_joints[idx]
            r_local = global_rot @ local_rots[idx]
            rot[idx], trans[idx] = _compose(
                np.eye(3), pose.global_translation + rel, r_local, np.zeros(3)
            )
        else:
            rel = body.rest_joints[idx] - body.rest_joints[p]
            r, t = _compose(rot[p], trans[p], np.eye(3), rel)
            rot[idx], trans[idx] = _compose(r, t, local_rots[idx], np.zeros(3))

    # Right-multiply by the inverse bind translation.
    trans = trans - np.einsum("jab,jb->ja", rot, body.rest_joints)
    return BoneTransformSet(rotations=rot, translations=trans)


def lbs_points(points, position_offsets, beta, blendshape_offsets, weights,
               transforms: BoneTransformSet):
    """Deform (N, 3) canonical points: blend the per-joint rigid transforms
    with the skinning weights and apply to p + dp + sum_b beta_b o_b."""
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    x = points + np.asarray(position_offsets, dtype=np.float64).reshape(-1, 3)
    beta = np.asarray(beta, dtype=np.float64).reshape(-1)
    if beta.size:
        x = restore_point(x, beta, blendshape_offsets)
    weights = np.asarray(weights, dtype=np.float64)
    blended_rot = np.einsum("nj,jab->nab", weights, transforms.rotations)
    blended_t = weights @ transforms.translations
    return np.einsum("nab,nb->na", blended_rot, x) + blended_t


def lbs_point(point, position_offset, beta, blendshape_offsets, weights,
              transforms: BoneTransformSet):
    """Single-point LBS; see lbs_points."""
    beta = np.asarray(beta, dtype=np.float64).reshape(-1)
    bso = np.asarray(blendshape_offsets, dtype=np.float64).reshape(1, beta.size, 3)
    out = lbs_points(
        np.asarray(point).reshape(1, 3),
        np.asarray(position_offset).reshape(1, 3),
        beta, bso,
        np.asarray(weights).reshape(1, -1),
        transforms,
    )
    return out[0]


def lbs_covariances(covariances, weights, transforms: BoneTransformSet):
    """Blend rotated covariances: sum_j w_ij R_j Sigma_i R_j^T for (N, 3, 3)."""
    cov = np.asarray(covariances, dtype=np.float64).reshape(-1, 3, 3)
    weights = np.asarray(weights, dtype=np.float64)
    rot = transforms.rotations
    per_joint = np.einsum("jab,nbc,jdc->njad", rot, cov, rot)
    return np.einsum("nj,njad->nad", weights, per_joint)


def lbs_covariance(covariance, weights, transforms: BoneTransformSet):
    """Single-covariance form of lbs_covariances."""
    return lbs_covariances(
        np.asarray(covariance).reshape(1, 3, 3),
        np.asarray(weights).reshape(1, -1),
        transforms,
    )[0]
