"""Core value types shared by every stage of the layered avatar pipeline.

Conventions fixed here and relied on everywhere else:
  * quaternions are stored (w, x, y, z)
  * poses are axis-angle per joint plus a global orientation/translation
  * asset-borne float arrays are little-endian float32 so serialization
    round-trips bit-exactly; math that needs precision upcasts locally
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

QUAT_NORM_TOL = 1e-6
WEIGHT_SUM_TOL = 1e-5


class LayerId(enum.IntEnum):
    """Avatar layers, inner to outer. BACKGROUND only appears in label maps."""

    BACKGROUND = 0
    BODY = 1
    UPPER = 2
    LOWER = 3
    OUTER = 4

    @classmethod
    def garments(cls):
        return (cls.UPPER, cls.LOWER, cls.OUTER)


# Default palette used for multi-class segmentation renders.
DEFAULT_PALETTE = {
    LayerId.BACKGROUND: np.array([0.0, 0.0, 0.0]),
    LayerId.BODY: np.array([1.0, 0.0, 0.0]),
    LayerId.UPPER: np.array([0.0, 1.0, 0.0]),
    LayerId.LOWER: np.array([0.0, 0.0, 1.0]),
    LayerId.OUTER: np.array([1.0, 1.0, 0.0]),
}


def quat_normalize(q):
    q = np.asarray(q, dtype=np.float64)
    n = np.linalg.norm(q, axis=-1, keepdims=True)
    return q / n


def quat_to_matrix(q):
    """Rotation matrix from a (w, x, y, z) quaternion. Accepts (..., 4)."""
    q = quat_normalize(q)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    m = np.empty(q.shape[:-1] + (3, 3), dtype=np.float64)
    m[..., 0, 0] = 1 - 2 * (y * y + z * z)
    m[..., 0, 1] = 2 * (x * y - w * z)
    m[..., 0, 2] = 2 * (x * z + w * y)
    m[..., 1, 0] = 2 * (x * y + w * z)
    m[..., 1, 1] = 1 - 2 * (x * x + z * z)
    m[..., 1, 2] = 2 * (y * z - w * x)
    m[..., 2, 0] = 2 * (x * z - w * y)
    m[..., 2, 1] = 2 * (y * z + w * x)
    m[..., 2, 2] = 1 - 2 * (x * x + y * y)
    return m


def axis_angle_to_matrix(v):
    """Rodrigues rotation for an axis-angle 3-vector (radians). Accepts (..., 3)."""
    v = np.asarray(v, dtype=np.float64)
    angle = np.linalg.norm(v, axis=-1)
    # Guard the zero-angle case; the limit of the formula is the identity.
    safe = np.where(angle > 1e-12, angle, 1.0)
    axis = v / safe[..., None]
    x, y, z = axis[..., 0], axis[..., 1], axis[..., 2]
    c = np.cos(angle)
    s = np.sin(angle)
    C = 1.0 - c
    m = np.empty(v.shape[:-1] + (3, 3), dtype=np.float64)
    m[..., 0, 0] = c + x * x * C
    m[..., 0, 1] = x * y * C - z * s
    m[..., 0, 2] = x * z * C + y * s
    m[..., 1, 0] = y * x * C + z * s
    m[..., 1, 1] = c + y * y * C
    m[..., 1, 2] = y * z * C - x * s
    m[..., 2, 0] = z * x * C - y * s
    m[..., 2, 1] = z * y * C + x * s
    m[..., 2, 2] = c + z * z * C
    eye = np.broadcast_to(np.eye(3), m.shape)
    return np.where((angle > 1e-12)[..., None, None], m, eye)


def rotation_geodesic_angle(r_a, r_b):
    """Geodesic angle between two rotation matrices (batched on leading axes).

    Uses ||Ra - Rb||_F = 2*sqrt(2)*sin(theta/2), which is exact at zero
    (identical matrices give exactly 0, unlike the arccos-of-trace form)
    and well conditioned for small angles.
    """
    diff = np.linalg.norm(
        np.asarray(r_a) - np.asarray(r_b), axis=(-2, -1)
    )
    return 2.0 * np.arcsin(np.clip(diff / (2.0 * np.sqrt(2.0)), -1.0, 1.0))


def covariance_from_rotation_scale(rotation, scale):
    """Anisotropic Gaussian covariance Sigma = R S S^T R^T.

    `rotation` is a unit (w, x, y, z) quaternion, `scale` the per-axis
    standard deviations in meters. The eigenvalues of the result are the
    squared scale components.
    """
    rotation = np.asarray(rotation, dtype=np.float64)
    scale = np.asarray(scale, dtype=np.float64)
    if not (np.all(np.isfinite(rotation)) and np.all(np.isfinite(scale))):
        raise ValueError("non-finite rotation or scale")
    if np.any(scale <= 0):
        raise ValueError("scale components must be positive")
    r = quat_to_matrix(rotation)
    rs = r * scale[..., None, :]
    return rs @ np.swapaxes(rs, -1, -2)


@dataclass(frozen=True)
class GaussianPrimitive:
    """One splat: canonical position plus the 14-channel payload."""

    canonical_position: np.ndarray  # (3,) canonical zero-shape space, meters
    offset: np.ndarray  # (3,) position offset in canonical space
    rotation: np.ndarray  # (4,) unit quaternion (w, x, y, z)
    opacity: float
    scale: np.ndarray  # (3,) per-axis std dev, meters
    color: np.ndarray  # (3,) RGB in [0, 1]

    def covariance(self):
        return covariance_from_rotation_scale(self.rotation, self.scale)


NO_NEIGHBOR = -1


@dataclass
class GaussianLayer:
    """A layer's splats stored as flat arrays (one row per primitive).

    `neighbors` holds up to 4 indices per primitive, counter-clockwise as
    seen from outside the surface, padded with NO_NEIGHBOR. `source_side`
    is 0 for front-map primitives, 1 for back-map ones.
    """

    layer_id: LayerId
    positions: np.ndarray  # (N, 3) float32, canonical
    offsets: np.ndarray  # (N, 3) float32
    rotations: np.ndarray  # (N, 4) float32, (w, x, y, z)
    opacities: np.ndarray  # (N,) float32
    scales: np.ndarray  # (N, 3) float32
    colors: np.ndarray  # (N, 3) float32
    skinning_weights: np.ndarray  # (N, J) float32, rows sum to 1
    blendshape_offsets: np.ndarray  # (N, B, 3) float32
    neighbors: np.ndarray  # (N, 4) int32, NO_NEIGHBOR padded
    source_side: np.ndarray  # (N,) uint8

    def __post_init__(self):
        self.positions = np.ascontiguousarray(self.positions, dtype=np.float32)
        self.offsets = np.ascontiguousarray(self.offsets, dtype=np.float32)
        self.rotations = np.ascontiguousarray(self.rotations, dtype=np.float32)
        self.opacities = np.ascontiguousarray(self.opacities, dtype=np.float32)
        self.scales = np.ascontiguousarray(self.scales, dtype=np.float32)
        self.colors = np.ascontiguousarray(self.colors, dtype=np.float32)
        self.skinning_weights = np.ascontiguousarray(self.skinning_weights, dtype=np.float32)
        self.blendshape_offsets = np.ascontiguousarray(self.blendshape_offsets, dtype=np.float32)
        self.neighbors = np.ascontiguousarray(self.neighbors, dtype=np.int32)
        self.source_side = np.ascontiguousarray(self.source_side, dtype=np.uint8)

    def __len__(self):
        return self.positions.shape[0]

    @property
    def joint_count(self):
        return self.skinning_weights.shape[1]

    @property
    def blendshape_count(self):
        return self.blendshape_offsets.shape[1]

    def primitive(self, i):
        return GaussianPrimitive(
            canonical_position=self.positions[i].astype(np.float64),
            offset=self.offsets[i].astype(np.float64),
            rotation=self.rotations[i].astype(np.float64),
            opacity=float(self.opacities[i]),
            scale=self.scales[i].astype(np.float64),
            color=self.colors[i].astype(np.float64),
        )

    def copy(self):
        return GaussianLayer(
            layer_id=self.layer_id,
            positions=self.positions.copy(),
            offsets=self.offsets.copy(),
            rotations=self.rotations.copy(),
            opacities=self.opacities.copy(),
            scales=self.scales.copy(),
            colors=self.colors.copy(),
            skinning_weights=self.skinning_weights.copy(),
            blendshape_offsets=self.blendshape_offsets.copy(),
            neighbors=self.neighbors.copy(),
            source_side=self.source_side.copy(),
        )


def validate_layer(layer: GaussianLayer):
    """Check every per-primitive invariant; returns a list of violation strings.

    Validation never raises: a malformed layer yields one report per broken
    invariant, naming the primitive index.
    """
    reports = []
    n = len(layer)
    quat_norms = np.linalg.norm(layer.rotations.astype(np.float64), axis=1)
    for i in np.nonzero(np.abs(quat_norms - 1.0) > QUAT_NORM_TOL)[0]:
        reports.append(f"primitive {i}: quaternion norm {quat_norms[i]:.6g} not unit")
    bad_alpha = (layer.opacities < 0.0) | (layer.opacities > 1.0)
    for i in np.nonzero(bad_alpha)[0]:
        reports.append(f"primitive {i}: opacity {layer.opacities[i]:.6g} outside [0, 1]")
    bad_scale = np.any(layer.scales <= 0.0, axis=1)
    for i in np.nonzero(bad_scale)[0]:
        reports.append(f"primitive {i}: non-positive scale component")
    w = layer.skinning_weights.astype(np.float64)
    neg_rows = np.any(w < 0.0, axis=1)
    for i in np.nonzero(neg_rows)[0]:
        reports.append(f"primitive {i}: negative skinning weight")
    sums = w.sum(axis=1)
    for i in np.nonzero(np.abs(sums - 1.0) > WEIGHT_SUM_TOL)[0]:
        reports.append(f"primitive {i}: skinning weights sum to {sums[i]:.6g}, not 1")
    bad_nb = (layer.neighbors != NO_NEIGHBOR) & (
        (layer.neighbors < 0) | (layer.neighbors >= n)
    )
    for i in np.nonzero(np.any(bad_nb, axis=1))[0]:
        reports.append(f"primitive {i}: neighbor index out of range")
    return reports


@dataclass(frozen=True)
class PoseParams:
    """Axis-angle pose: per-joint rotations plus a global rigid motion."""

    joint_rotations: np.ndarray  # (J, 3) radians
    global_orientation: np.ndarray = field(
        default_factory=lambda: np.zeros(3, dtype=np.float64)
    )
    global_translation: np.ndarray = field(
        default_factory=lambda: np.zeros(3, dtype=np.float64)
    )

    def __post_init__(self):
        object.__setattr__(
            self, "joint_rotations",
            np.ascontiguousarray(self.joint_rotations, dtype=np.float64).reshape(-1, 3),
        )
        object.__setattr__(
            self, "global_orientation",
            np.asarray(self.global_orientation, dtype=np.float64).reshape(3),
        )
        object.__setattr__(
            self, "global_translation",
            np.asarray(self.global_translation, dtype=np.float64).reshape(3),
        )

    @property
    def joint_count(self):
        return self.joint_rotations.shape[0]

    @classmethod
    def canonical(cls, joint_count=55):
        return cls(joint_rotations=np.zeros((joint_count, 3)))


@dataclass(frozen=True)
class ShapeParams:
    """PCA shape coefficients (beta)."""

    coefficients: np.ndarray  # (B,)

    def __post_init__(self):
        object.__setattr__(
            self, "coefficients",
            np.asarray(self.coefficients, dtype=np.float64).reshape(-1),
        )

    @property
    def count(self):
        return self.coefficients.shape[0]

    @classmethod
    def zero(cls, count=10):
        return cls(coefficients=np.zeros(count))


@dataclass(frozen=True)
class BoneTransformSet:
    """Per-joint rigid transforms mapping canonical pose to the target pose."""

    rotations: np.ndarray  # (J, 3, 3)
    translations: np.ndarray  # (J, 3)

    def __post_init__(self):
        object.__setattr__(
            self, "rotations", np.asarray(self.rotations, dtype=np.float64)
        )
        object.__setattr__(
            self, "translations", np.asarray(self.translations, dtype=np.float64)
        )

    @property
    def joint_count(self):
        return self.rotations.shape[0]

    def compose_rigid(self, rotation, translation):
        """Apply a global rigid motion (R, t) on top of every bone transform."""
        rotation = np.asarray(rotation, dtype=np.float64)
        translation = np.asarray(translation, dtype=np.float64)
        return BoneTransformSet(
            rotations=rotation[None] @ self.rotations,
            translations=self.translations @ rotation.T + translation,
        )

    @classmethod
    def identity(cls, joint_count):
        return cls(
            rotations=np.broadcast_to(np.eye(3), (joint_count, 3, 3)).copy(),
            translations=np.zeros((joint_count, 3)),
        )


class CameraKind(str, enum.Enum):
    PERSPECTIVE = "perspective"
    ORTHOGRAPHIC = "orthographic"


@dataclass(frozen=True)
class CameraModel:
    """Pinhole or orthographic camera.

    Extrinsics map world points into camera space: x_cam = R x_world + t.
    Camera space looks down +z; pixel (col, row) centers sit at
    (col + 0.5, row + 0.5). For perspective cameras the intrinsics are
    (fx, fy, cx, cy) in pixels; for orthographic they are
    (sx, sy, cx, cy) with sx, sy in pixels per meter.
    """

    kind: CameraKind
    rotation: np.ndarray  # (3, 3) world -> camera
    translation: np.ndarray  # (3,)
    intrinsics: np.ndarray  # (4,) fx fy cx cy (or sx sy cx cy)
    image_size: tuple  # (width, height)
    near: float = 0.01

    def __post_init__(self):
        object.__setattr__(self, "kind", CameraKind(self.kind))
        object.__setattr__(self, "rotation", np.asarray(self.rotation, dtype=np.float64))
        object.__setattr__(
            self, "translation", np.asarray(self.translation, dtype=np.float64).reshape(3)
        )
        object.__setattr__(
            self, "intrinsics", np.asarray(self.intrinsics, dtype=np.float64).reshape(4)
        )
        w, h = self.image_size
        if w < 1 or h < 1:
            raise ValueError("image_size must be at least 1x1")
        if np.any(self.intrinsics[:2] <= 0):
            raise ValueError("focal lengths / scales must be positive")
        object.__setattr__(self, "image_size", (int(w), int(h)))

    @property
    def width(self):
        return self.image_size[0]

    @property
    def height(self):
        return self.image_size[1]

    def world_to_camera(self, points):
        points = np.asarray(points, dtype=np.float64)
        return points @ self.rotation.T + self.translation

    @classmethod
    def orbit(cls, target, azimuth_deg, elevation_deg, distance, image_size,
              fov_deg=40.0, kind=CameraKind.PERSPECTIVE, ortho_half_extent=None):
        """Camera on an orbit around `target`, looking at it.

        Azimuth rotates around the world +y axis (0 = looking along -z from
        +z side), elevation lifts the camera off the horizontal plane.
        """
        target = np.asarray(target, dtype=np.float64)
        az = np.deg2rad(azimuth_deg)
        el = np.deg2rad(elevation_deg)
        offset = np.array(
            [np.sin(az) * np.cos(el), np.sin(el), np.cos(az) * np.cos(el)]
        ) * float(distance)
        eye = target + offset
        forward = target - eye
        forward = forward / np.linalg.norm(forward)
        up_hint = np.array([0.0, 1.0, 0.0])
        if abs(forward @ up_hint) > 0.999:
            up_hint = np.array([0.0, 0.0, 1.0])
        right = np.cross(forward, up_hint)
        right /= np.linalg.norm(right)
        down = np.cross(forward, right)
        # Rows: camera x (right), camera y (down in image), camera z (forward).
        rot = np.stack([right, down, forward])
        trans = -rot @ eye
        w, h = image_size
        cx, cy = w / 2.0, h / 2.0
        kind = CameraKind(kind)
        if kind is CameraKind.PERSPECTIVE:
            f = (h / 2.0) / np.tan(np.deg2rad(fov_deg) / 2.0)
            intr = np.array([f, f, cx, cy])
        else:
            half = ortho_half_extent if ortho_half_extent is not None else distance / 2.0
            s = (h / 2.0) / float(half)
            intr = np.array([s, s, cx, cy])
        return cls(kind=kind, rotation=rot, translation=trans,
                   intrinsics=intr, image_size=(w, h))


@dataclass(frozen=True)
class LossWeights:
    """Objective weights. lam_perceptual is a reserved slot, not applied."""

    lam_ssim: float = 0.05
    lam_perceptual: float = 0.1  # reserved for a plug-in perceptual metric
    lam_seg: float = 0.5
    lam_body_seg: float = 0.05
    lam_pen: float = 0.5
    lam_offset: float = 0.005
    lam_smooth: float = 0.005
    lam_body_opacity: float = 0.01
    eps_pen: float = 0.005  # meters

    def __post_init__(self):
        for name in ("lam_ssim", "lam_perceptual", "lam_seg", "lam_body_seg",
                     "lam_pen", "lam_offset", "lam_smooth", "lam_body_opacity"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.eps_pen <= 0:
            raise ValueError("eps_pen must be > 0")
