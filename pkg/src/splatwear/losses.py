"""Training-objective suite: photometric, segmentation, penetration, and
geometric regularizer terms, plus segmentation quality metrics.

Every term reduces by mean so the weights stay scale-stable across image
and point-set sizes. The penetration and regularizer terms ship analytic
gradients (nearest-neighbor assignments and supplied normals held fixed),
verified against central finite differences in the test suite.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import numba
import numpy as np
from scipy.ndimage import correlate1d

from .core import NO_NEIGHBOR, LossWeights
from .spatial import SpatialHashGrid

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03
DEGENERATE_NORMAL_EPS = 1e-12
OPACITY_CLAMP = 1e-6


def _check_same_shape(a, b):
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")


def l1_loss(a, b):
    """Mean absolute difference over all entries."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    _check_same_shape(a, b)
    return float(np.mean(np.abs(a - b)))


def psnr(a, b):
    """Peak signal-to-noise ratio over a [0, 1] range; inf for equal inputs."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    _check_same_shape(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return float("inf")
    return float(10.0 * np.log10(1.0 / mse))


def _gaussian_window(size, sigma):
    x = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-0.5 * (x / sigma) ** 2)
    return g / g.sum()


def _windowed_mean(img, kernel):
    # Constant-mode filtering cropped to the interior equals 'valid' mode.
    out = correlate1d(img, kernel, axis=0, mode="constant")
    out = correlate1d(out, kernel, axis=1, mode="constant")
    m = (len(kernel) - 1) // 2
    return out[m:-m, m:-m]


def ssim(a, b):
    """Single-scale SSIM with an 11x11 Gaussian window (sigma 1.5),
    K1 = 0.01, K2 = 0.03 over a dynamic range of 1."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    _check_same_shape(a, b)
    if a.ndim == 2:
        a = a[..., None]
        b = b[..., None]
    h, w = a.shape[:2]
    if h < SSIM_WINDOW or w < SSIM_WINDOW:
        raise ValueError(f"images must be at least {SSIM_WINDOW}px per side")
    kernel = _gaussian_window(SSIM_WINDOW, SSIM_SIGMA)
    c1 = SSIM_K1**2
    c2 = SSIM_K2**2
    vals = []
    for c in range(a.shape[2]):
        x, y = a[..., c], b[..., c]
        mx = _windowed_mean(x, kernel)
        my = _windowed_mean(y, kernel)
        vx = _windowed_mean(x * x, kernel) - mx * mx
        vy = _windowed_mean(y * y, kernel) - my * my
        vxy = _windowed_mean(x * y, kernel) - mx * my
        num = (2.0 * mx * my + c1) * (2.0 * vxy + c2)
        den = (mx * mx + my * my + c1) * (vx + vy + c2)
        vals.append(np.mean(num / den))
    return float(np.mean(vals))


def ssim_loss(a, b):
    return 1.0 - ssim(a, b)


def segmentation_loss(pred, gt, pred_body, gt_body, lam_seg, lam_body_seg):
    """Multi-class palette RMS term plus body-silhouette L1 term, each
    scaled by its weight."""
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    pred_body = np.asarray(pred_body, dtype=np.float64)
    gt_body = np.asarray(gt_body, dtype=np.float64)
    _check_same_shape(pred, gt)
    _check_same_shape(pred_body, gt_body)
    rms = float(np.sqrt(np.mean((pred - gt) ** 2)))
    mae = float(np.mean(np.abs(pred_body - gt_body)))
    return lam_seg * rms + lam_body_seg * mae


def estimate_normal(position, neighbor_positions):
    """Gaussian surface normal from a counter-clockwise neighbor ring.

    Sums the cross products of consecutive spokes (cyclically closed) and
    normalizes. Returns None when the summed normal is degenerate
    (norm < 1e-12); the caller decides how to treat that primitive.
    """
    p = np.asarray(position, dtype=np.float64).reshape(3)
    ring = np.asarray(neighbor_positions, dtype=np.float64).reshape(-1, 3)
    if ring.shape[0] < 3:
        raise ValueError("normal estimation needs at least 3 neighbors")
    spokes = ring - p
    total = np.cross(spokes, np.roll(spokes, -1, axis=0)).sum(axis=0)
    norm = np.linalg.norm(total)
    if norm < DEGENERATE_NORMAL_EPS:
        return None
    return total / norm


@numba.njit(cache=True)
def _ring_normals(positions, neighbors):
    n = positions.shape[0]
    normals = np.zeros((n, 3))
    valid = np.zeros(n, dtype=np.bool_)
    ring = np.empty((4, 3))
    for i in range(n):
        count = 0
        for s in range(neighbors.shape[1]):
            j = neighbors[i, s]
            if j >= 0:
                ring[count] = positions[j] - positions[i]
                count += 1
        if count < 3:
            continue
        tx = ty = tz = 0.0
        for c in range(count):
            ax, ay, az = ring[c]
            bx, by, bz = ring[(c + 1) % count]
            tx += ay * bz - az * by
            ty += az * bx - ax * bz
            tz += ax * by - ay * bx
        norm = np.sqrt(tx * tx + ty * ty + tz * tz)
        if norm < DEGENERATE_NORMAL_EPS:
            continue
        normals[i, 0] = tx / norm
        normals[i, 1] = ty / norm
        normals[i, 2] = tz / norm
        valid[i] = True
    return normals, valid


def layer_normals(positions, neighbors):
    """Per-primitive normals for a whole layer from its neighbor table.

    Missing slots (NO_NEIGHBOR) are compacted out of the ring; primitives
    with fewer than 3 present neighbors or a collapsed ring come back
    with valid=False.
    """
    positions = np.ascontiguousarray(positions, dtype=np.float64).reshape(-1, 3)
    neighbors = np.ascontiguousarray(neighbors, dtype=np.int32).reshape(-1, 4)
    return _ring_normals(positions, neighbors)


@dataclass
class PenetrationResult:
    loss: float
    grad_outer: np.ndarray  # (N_outer, 3)
    grad_inner: np.ndarray  # (N_inner, 3)
    skipped: int  # hinge terms dropped for degenerate normals


def penetration_loss(outer_positions, inner_positions, inner_normals, eps,
                     inner_normal_valid=None) -> PenetrationResult:
    """Squared-hinge penetration term between an outer and an inner layer.

    Each outer point pairs with its exact nearest inner point p_b and that
    point's normal n_b; the hinge penalizes signed distances
    (p_outer - p_b) . n_b below eps. The mean runs over the evaluated
    (non-degenerate) terms. Gradients hold the pairing and the supplied
    normals fixed.
    """
    outer = np.asarray(outer_positions, dtype=np.float64).reshape(-1, 3)
    inner = np.asarray(inner_positions, dtype=np.float64).reshape(-1, 3)
    normals = np.asarray(inner_normals, dtype=np.float64).reshape(-1, 3)
    if inner.shape[0] == 0:
        raise ValueError("inner point set is empty")
    if inner_normal_valid is None:
        inner_normal_valid = np.isfinite(normals).all(axis=1) & (
            np.linalg.norm(normals, axis=1) > 0.5
        )
    grad_outer = np.zeros_like(outer)
    grad_inner = np.zeros_like(inner)
    if outer.shape[0] == 0:
        return PenetrationResult(0.0, grad_outer, grad_inner, 0)

    grid = SpatialHashGrid(inner)
    assignment = grid.nearest_many(outer)
    valid = inner_normal_valid[assignment]
    skipped = int((~valid).sum())
    n_terms = int(valid.sum())
    if n_terms == 0:
        return PenetrationResult(0.0, grad_outer, grad_inner, skipped)

    idx = assignment[valid]
    d = outer[valid] - inner[idx]
    s = np.einsum("nk,nk->n", d, normals[idx])
    hinge = np.maximum(eps - s, 0.0)
    loss = float(np.mean(hinge**2))

    coef = (2.0 * hinge / n_terms)[:, None] * normals[idx]
    grad_outer[valid] = -coef
    np.add.at(grad_inner, idx, coef)
    return PenetrationResult(loss, grad_outer, grad_inner, skipped)


@dataclass
class RegularizerResult:
    offset_reg: float
    smooth_reg: float
    opacity_reg: float
    grad_offset: np.ndarray  # (N, 3) d offset_reg / d offsets
    grad_smooth: np.ndarray  # (N, 3) d smooth_reg / d offsets
    grad_opacity: np.ndarray  # (M,) d opacity_reg / d opacities


def geometric_regularizers(offsets, neighbors, body_opacities) -> RegularizerResult:
    """Offset magnitude, neighborhood smoothness, and body opacity terms.

    offset_reg = mean_i ||dp_i||^2
    smooth_reg = mean_i ||dp_i - mean_{j in N(i)} dp_j||^2  (0 if no neighbors)
    opacity_reg = mean_k -log(clamp(alpha_k, 1e-6, 1))
    """
    dp = np.asarray(offsets, dtype=np.float64).reshape(-1, 3)
    nb = np.asarray(neighbors, dtype=np.int64).reshape(dp.shape[0], -1)
    alpha = np.asarray(body_opacities, dtype=np.float64).reshape(-1)
    n = dp.shape[0]

    offset_reg = float(np.mean(np.einsum("nk,nk->n", dp, dp))) if n else 0.0
    grad_offset = (2.0 / max(n, 1)) * dp

    present = nb != NO_NEIGHBOR
    counts = present.sum(axis=1)
    nb_safe = np.where(present, nb, 0)
    nb_mean = np.zeros_like(dp)
    has = counts > 0
    if has.any():
        gathered = dp[nb_safe] * present[..., None]
        nb_mean[has] = gathered.sum(axis=1)[has] / counts[has, None]
    residual = np.where(has[:, None], dp - nb_mean, 0.0)
    smooth_reg = float(np.mean(np.einsum("nk,nk->n", residual, residual))) if n else 0.0
    grad_smooth = (2.0 / max(n, 1)) * residual.copy()
    # Back-propagate through the neighbor means: each residual r_i pulls on
    # every dp_k it averaged over.
    rows, slots = np.nonzero(present & has[:, None])
    if rows.size:
        np.add.at(
            grad_smooth,
            nb[rows, slots],
            -(2.0 / n) * residual[rows] / counts[rows, None],
        )

    clamped = np.clip(alpha, OPACITY_CLAMP, 1.0)
    opacity_reg = float(np.mean(-np.log(clamped))) if alpha.size else 0.0
    grad_opacity = np.zeros_like(alpha)
    interior = (alpha > OPACITY_CLAMP) & (alpha <= 1.0)
    if alpha.size:
        grad_opacity[interior] = -1.0 / (alpha[interior] * alpha.size)
    return RegularizerResult(
        offset_reg, smooth_reg, opacity_reg, grad_offset, grad_smooth, grad_opacity
    )


@dataclass
class LossReport:
    """Flat record of every objective component and the weighted total."""

    l1: float = 0.0
    ssim_loss: float = 0.0
    seg_multiclass: float = 0.0
    seg_body: float = 0.0
    pen: float = 0.0
    offset_reg: float = 0.0
    smooth_reg: float = 0.0
    opacity_reg: float = 0.0
    total: float = 0.0

    def to_text(self):
        lines = [f"{f.name}={getattr(self, f.name):.10g}" for f in fields(self)]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text):
        values = {}
        for line in text.splitlines():
            line = line.strip()
            if not line or "=" not in line:
                continue
            key, val = line.split("=", 1)
            values[key] = float(val)
        return cls(**values)


def full_objective(components, weights: LossWeights) -> LossReport:
    """Weighted aggregate of the in-scope objective terms.

    `components` maps the LossReport field names (minus total) to raw,
    unweighted values; omitted components count as 0. Perceptual terms
    have no slot here by design.
    """
    names = [f.name for f in fields(LossReport) if f.name != "total"]
    vals = {}
    for name in names:
        v = float(components.get(name, 0.0))
        if not np.isfinite(v):
            raise ValueError(f"non-finite loss component {name}={v}")
        vals[name] = v
    total = (
        vals["l1"]
        + weights.lam_ssim * vals["ssim_loss"]
        + weights.lam_seg * vals["seg_multiclass"]
        + weights.lam_body_seg * vals["seg_body"]
        + weights.lam_pen * vals["pen"]
        + weights.lam_offset * vals["offset_reg"]
        + weights.lam_smooth * vals["smooth_reg"]
        + weights.lam_body_opacity * vals["opacity_reg"]
    )
    return LossReport(total=total, **vals)


def segmentation_metrics(pred_labels, gt_labels, background=0):
    """(mIoU, recall, F1) averaged over the classes present in gt,
    background excluded."""
    pred = np.asarray(pred_labels).reshape(-1)
    gt = np.asarray(gt_labels).reshape(-1)
    if pred.shape != gt.shape:
        raise ValueError("label map shapes differ")
    classes = [c for c in np.unique(gt) if c != background]
    if not classes:
        return 0.0, 0.0, 0.0
    ious, recalls, f1s = [], [], []
    for c in classes:
        tp = int(np.sum((pred == c) & (gt == c)))
        fp = int(np.sum((pred == c) & (gt != c)))
        fn = int(np.sum((pred != c) & (gt == c)))
        ious.append(tp / (tp + fp + fn) if tp + fp + fn else 0.0)
        recalls.append(tp / (tp + fn) if tp + fn else 0.0)
        f1s.append(2 * tp / (2 * tp + fp + fn) if 2 * tp + fp + fn else 0.0)
    return float(np.mean(ious)), float(np.mean(recalls)), float(np.mean(f1s))
