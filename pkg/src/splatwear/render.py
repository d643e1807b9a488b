"""Tile-based software splatting of posed Gaussians.

Two renderers share one compositing rule:

  * rasterize()            16x16-tile kernel (numba, thread-parallel)
  * reference_composite()  plain numpy per-pixel loop, no tiling and no
                           early termination; the correctness oracle

The shared rule, applied front-to-back per pixel: a splat contributes
c * alpha * g * T with g = exp(-m^2 / 2) evaluated only inside its
3-sigma ellipse (m <= 3), contributions with alpha * g < 1/255 are
skipped entirely, and T accumulates (1 - alpha * g). The tiled path may
additionally stop once T < 1e-4, which bounds its deviation from the
reference by that transmittance.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numba
import numpy as np

from .core import CameraKind, CameraModel, LayerId

TILE = 16
MAX_MAHAL_SQ = 9.0
MIN_CONTRIBUTION = 1.0 / 255.0
TRANSMITTANCE_EPS = 1e-4
LOWPASS_PX2 = 0.3
DEPTH_ALPHA_THRESHOLD = 0.5
BACKGROUND_COLOR = np.zeros(3)

# Renderable layers in buffer order; label = buffer index + 1, 0 = background.
RENDER_LAYERS = (LayerId.BODY, LayerId.UPPER, LayerId.LOWER, LayerId.OUTER)
N_LAYERS = len(RENDER_LAYERS)


@dataclass
class PosedGaussianSet:
    """Splats ready to draw: posed means/covariances plus appearance."""

    means: np.ndarray  # (N, 3) float64, world space
    covariances: np.ndarray  # (N, 3, 3) float64
    opacities: np.ndarray  # (N,)
    colors: np.ndarray  # (N, 3)
    layer_ids: np.ndarray  # (N,) uint8 LayerId values

    def __post_init__(self):
        self.means = np.ascontiguousarray(self.means, dtype=np.float64).reshape(-1, 3)
        self.covariances = np.ascontiguousarray(
            self.covariances, dtype=np.float64
        ).reshape(-1, 3, 3)
        self.opacities = np.ascontiguousarray(self.opacities, dtype=np.float64).reshape(-1)
        self.colors = np.ascontiguousarray(self.colors, dtype=np.float64).reshape(-1, 3)
        self.layer_ids = np.ascontiguousarray(self.layer_ids, dtype=np.uint8).reshape(-1)

    def __len__(self):
        return self.means.shape[0]

    def filter_layer(self, layer_id):
        keep = self.layer_ids == int(layer_id)
        return PosedGaussianSet(
            means=self.means[keep],
            covariances=self.covariances[keep],
            opacities=self.opacities[keep],
            colors=self.colors[keep],
            layer_ids=self.layer_ids[keep],
        )

    def with_colors(self, colors):
        return PosedGaussianSet(
            means=self.means,
            covariances=self.covariances,
            opacities=self.opacities,
            colors=colors,
            layer_ids=self.layer_ids,
        )

    @classmethod
    def concatenate(cls, sets):
        sets = [s for s in sets if len(s)]
        if not sets:
            return cls.empty()
        return cls(
            means=np.concatenate([s.means for s in sets]),
            covariances=np.concatenate([s.covariances for s in sets]),
            opacities=np.concatenate([s.opacities for s in sets]),
            colors=np.concatenate([s.colors for s in sets]),
            layer_ids=np.concatenate([s.layer_ids for s in sets]),
        )

    @classmethod
    def empty(cls):
        return cls(
            means=np.zeros((0, 3)),
            covariances=np.zeros((0, 3, 3)),
            opacities=np.zeros(0),
            colors=np.zeros((0, 3)),
            layer_ids=np.zeros(0, dtype=np.uint8),
        )


class RenderOutput:
    """Composited image plus the per-layer buffers the try-on stage needs.

    layer_* arrays are indexed by RENDER_LAYERS order. layer_depth is the
    alpha-weighted expected camera depth, +inf wherever the layer's
    accumulated alpha stays below DEPTH_ALPHA_THRESHOLD. Derived buffers
    (labels, depth, unpremultiplied color) materialize on first access so
    plain RGB renders skip their cost.
    """

    def __init__(self, rgb, total_alpha, layer_alpha, layer_colorsum,
                 layer_depthsum):
        self.rgb = rgb  # (H, W, 3) in [0, 1]
        self.total_alpha = total_alpha  # (H, W)
        self.layer_alpha = layer_alpha  # (L, H, W)
        self.layer_colorsum = layer_colorsum  # (L, H, W, 3) premultiplied
        self.layer_depthsum = layer_depthsum  # (L, H, W) premultiplied
        self._labels = None
        self._depth = None
        self._color = None

    @property
    def layer_labels(self):
        """(H, W) uint8 argmax layer per pixel, 0 = background."""
        if self._labels is None:
            labels = (np.argmax(self.layer_alpha, axis=0) + 1).astype(np.uint8)
            labels[self.total_alpha < 0.5] = LayerId.BACKGROUND
            self._labels = labels
        return self._labels

    @property
    def layer_depth(self):
        """(L, H, W) expected depth, +inf where alpha is unconfident."""
        if self._depth is None:
            with np.errstate(invalid="ignore", divide="ignore"):
                self._depth = np.where(
                    self.layer_alpha >= DEPTH_ALPHA_THRESHOLD,
                    self.layer_depthsum / self.layer_alpha,
                    np.inf,
                )
        return self._depth

    @property
    def layer_color(self):
        """(L, H, W, 3) unpremultiplied per-layer mean color."""
        if self._color is None:
            denom = np.maximum(self.layer_alpha[..., None], 1e-12)
            self._color = np.where(
                self.layer_alpha[..., None] > 1e-12,
                self.layer_colorsum / denom,
                0.0,
            )
        return self._color

    @staticmethod
    def layer_index(layer_id):
        return int(layer_id) - 1

    def alpha_for(self, layer_id):
        return self.layer_alpha[self.layer_index(layer_id)]

    def depth_for(self, layer_id):
        return self.layer_depth[self.layer_index(layer_id)]

    def color_for(self, layer_id):
        return self.layer_color[self.layer_index(layer_id)]


def project_gaussians(means, covariances, camera: CameraModel):
    """EWA projection of (N,) Gaussians to image space.

    Returns (mean2d (N, 2), cov2d (N, 2, 2), depth (N,), culled (N,)).
    cov2d includes the low-pass dilation of +0.3 px^2 on the diagonal.
    Culled marks splats behind the near plane or whose 3-sigma extent
    misses the image entirely.
    """
    means = np.asarray(means, dtype=np.float64).reshape(-1, 3)
    cov = np.asarray(covariances, dtype=np.float64).reshape(-1, 3, 3)
    n = means.shape[0]
    r, tvec = camera.rotation, camera.translation
    t = means @ r.T + tvec
    tz = t[:, 2]
    fx, fy, cx, cy = camera.intrinsics
    cov_cam = r[None] @ cov @ r.T[None]
    c00, c01, c02 = cov_cam[:, 0, 0], cov_cam[:, 0, 1], cov_cam[:, 0, 2]
    c11, c12, c22 = cov_cam[:, 1, 1], cov_cam[:, 1, 2], cov_cam[:, 2, 2]

    mean2d = np.empty((n, 2))
    cov2d = np.empty((n, 2, 2))
    behind = tz <= camera.near
    if camera.kind is CameraKind.PERSPECTIVE:
        tz_safe = np.where(np.abs(tz) > 1e-12, tz, 1e-12)
        mean2d[:, 0] = fx * t[:, 0] / tz_safe + cx
        mean2d[:, 1] = fy * t[:, 1] / tz_safe + cy
        # J = [[j00, 0, j02], [0, j11, j12]]; cov2d = J C J^T expanded.
        j00 = fx / tz_safe
        j02 = -fx * t[:, 0] / tz_safe**2
        j11 = fy / tz_safe
        j12 = -fy * t[:, 1] / tz_safe**2
        cov2d[:, 0, 0] = j00 * j00 * c00 + 2.0 * j00 * j02 * c02 + j02 * j02 * c22
        cov2d[:, 1, 1] = j11 * j11 * c11 + 2.0 * j11 * j12 * c12 + j12 * j12 * c22
        off = j00 * j11 * c01 + j00 * j12 * c02 + j02 * j11 * c12 + j02 * j12 * c22
        cov2d[:, 0, 1] = off
        cov2d[:, 1, 0] = off
    else:
        mean2d[:, 0] = fx * t[:, 0] + cx
        mean2d[:, 1] = fy * t[:, 1] + cy
        cov2d[:, 0, 0] = fx * fx * c00
        cov2d[:, 0, 1] = fx * fy * c01
        cov2d[:, 1, 0] = fx * fy * c01
        cov2d[:, 1, 1] = fy * fy * c11
    cov2d[:, 0, 0] += LOWPASS_PX2
    cov2d[:, 1, 1] += LOWPASS_PX2

    ex = 3.0 * np.sqrt(np.maximum(cov2d[:, 0, 0], 0.0))
    ey = 3.0 * np.sqrt(np.maximum(cov2d[:, 1, 1], 0.0))
    w, h = camera.image_size
    off_image = (
        (mean2d[:, 0] + ex < 0.0)
        | (mean2d[:, 0] - ex > w)
        | (mean2d[:, 1] + ey < 0.0)
        | (mean2d[:, 1] - ey > h)
    )
    det = cov2d[:, 0, 0] * cov2d[:, 1, 1] - cov2d[:, 0, 1] * cov2d[:, 1, 0]
    culled = behind | off_image | (det <= 0.0)
    return mean2d, cov2d, tz.copy(), culled


def project_gaussian(mean, covariance, camera: CameraModel):
    """Single-splat convenience wrapper around project_gaussians."""
    m2d, c2d, depth, culled = project_gaussians(
        np.asarray(mean).reshape(1, 3), np.asarray(covariance).reshape(1, 3, 3), camera
    )
    return m2d[0], c2d[0], float(depth[0]), bool(culled[0])


def _prepare(gset: PosedGaussianSet, camera: CameraModel):
    """Project, cull, depth-sort (index tie-break), pack kernel inputs."""
    if len(gset) and (
        gset.layer_ids.min() < 1 or gset.layer_ids.max() > N_LAYERS
    ):
        raise ValueError(
            f"layer ids must be renderable layers 1..{N_LAYERS}"
        )
    mean2d, cov2d, depth, culled = project_gaussians(
        gset.means, gset.covariances, camera
    )
    keep = ~culled
    mean2d, cov2d, depth = mean2d[keep], cov2d[keep], depth[keep]
    colors = gset.colors[keep]
    opacities = gset.opacities[keep]
    layer_idx = gset.layer_ids[keep].astype(np.int64) - 1

    order = np.argsort(depth, kind="stable")
    mean2d, cov2d, depth = mean2d[order], cov2d[order], depth[order]
    colors, opacities, layer_idx = colors[order], opacities[order], layer_idx[order]

    det = cov2d[:, 0, 0] * cov2d[:, 1, 1] - cov2d[:, 0, 1] * cov2d[:, 1, 0]
    inv = np.empty((mean2d.shape[0], 3))
    inv[:, 0] = cov2d[:, 1, 1] / det
    inv[:, 1] = -cov2d[:, 0, 1] / det
    inv[:, 2] = cov2d[:, 0, 0] / det
    extent = np.stack(
        [3.0 * np.sqrt(cov2d[:, 0, 0]), 3.0 * np.sqrt(cov2d[:, 1, 1])], axis=1
    )
    return mean2d, inv, extent, depth, opacities, colors, layer_idx


@numba.njit(cache=True)
def _bin_tiles(mean2d, extent, n_tiles_x, n_tiles_y):
    """CSR tile lists; entries stay in the (depth-sorted) input order."""
    n = mean2d.shape[0]
    counts = np.zeros(n_tiles_x * n_tiles_y + 1, dtype=np.int64)
    rects = np.empty((n, 4), dtype=np.int64)
    for i in range(n):
        tx0 = max(0, int(math.floor((mean2d[i, 0] - extent[i, 0]) / TILE)))
        tx1 = min(n_tiles_x - 1, int(math.floor((mean2d[i, 0] + extent[i, 0]) / TILE)))
        ty0 = max(0, int(math.floor((mean2d[i, 1] - extent[i, 1]) / TILE)))
        ty1 = min(n_tiles_y - 1, int(math.floor((mean2d[i, 1] + extent[i, 1]) / TILE)))
        rects[i, 0], rects[i, 1], rects[i, 2], rects[i, 3] = tx0, tx1, ty0, ty1
        for ty in range(ty0, ty1 + 1):
            for tx in range(tx0, tx1 + 1):
                counts[ty * n_tiles_x + tx + 1] += 1
    starts = np.cumsum(counts)
    entries = np.empty(starts[-1], dtype=np.int64)
    cursor = starts[:-1].copy()
    for i in range(n):
        tx0, tx1, ty0, ty1 = rects[i, 0], rects[i, 1], rects[i, 2], rects[i, 3]
        for ty in range(ty0, ty1 + 1):
            for tx in range(tx0, tx1 + 1):
                t = ty * n_tiles_x + tx
                entries[cursor[t]] = i
                cursor[t] += 1
    return starts, entries


@numba.njit(cache=True, nogil=True)
def _composite_tiles(tile_list, tile_starts, tile_entries, n_tiles_x,
                     mean2d, inv_cov, opacities, colors, depths, layer_idx,
                     width, height,
                     rgb, total_alpha, layer_alpha, layer_colorsum,
                     layer_depthsum):
    # Splats iterate outermost (loading each one's parameters once per
    # tile); per-pixel transmittance lives in tile-local scratch, and a
    # tile stops early once every pixel is saturated. Per-pixel update
    # order still follows the global depth sort, so results match the
    # pixel-outer formulation exactly.
    n_layers = layer_alpha.shape[0]
    trans = np.empty(TILE * TILE)
    local_rgb = np.empty((TILE * TILE, 3))
    local_alpha = np.empty((n_layers, TILE * TILE))
    local_color = np.empty((n_layers, TILE * TILE, 3))
    local_depth = np.empty((n_layers, TILE * TILE))
    for k in range(tile_list.shape[0]):
        t = tile_list[k]
        lo, hi = tile_starts[t], tile_starts[t + 1]
        ty, tx = t // n_tiles_x, t % n_tiles_x
        y0, x0 = ty * TILE, tx * TILE
        th, tw = min(TILE, height - y0), min(TILE, width - x0)
        if lo == hi:  # nothing splats here; output buffers arrive unzeroed
            for py in range(y0, y0 + th):
                for px in range(x0, x0 + tw):
                    total_alpha[py, px] = 0.0
                    for c in range(3):
                        rgb[py, px, c] = 0.0
                    for li in range(n_layers):
                        layer_alpha[li, py, px] = 0.0
                        layer_depthsum[li, py, px] = 0.0
                        for c in range(3):
                            layer_colorsum[li, py, px, c] = 0.0
            continue
        npx = th * tw
        trans[:npx] = 1.0
        local_rgb[:npx] = 0.0
        local_alpha[:, :npx] = 0.0
        local_color[:, :npx] = 0.0
        local_depth[:, :npx] = 0.0
        n_active = npx
        for e in range(lo, hi):
            g = tile_entries[e]
            mx, my = mean2d[g, 0], mean2d[g, 1]
            ia, ib, ic = inv_cov[g, 0], inv_cov[g, 1], inv_cov[g, 2]
            op = opacities[g]
            cr, cg, cb = colors[g, 0], colors[g, 1], colors[g, 2]
            dep = depths[g]
            li = layer_idx[g]
            for iy in range(th):
                dy = (y0 + iy + 0.5) - my
                row = iy * tw
                for ix in range(tw):
                    idx = row + ix
                    tcur = trans[idx]
                    if tcur < TRANSMITTANCE_EPS:
                        continue
                    dx = (x0 + ix + 0.5) - mx
                    m2 = ia * dx * dx + 2.0 * ib * dx * dy + ic * dy * dy
                    if m2 > MAX_MAHAL_SQ or m2 < 0.0:
                        continue
                    w = op * math.exp(-0.5 * m2)
                    if w < MIN_CONTRIBUTION:
                        continue
                    wt = w * tcur
                    local_rgb[idx, 0] += cr * wt
                    local_rgb[idx, 1] += cg * wt
                    local_rgb[idx, 2] += cb * wt
                    local_color[li, idx, 0] += cr * wt
                    local_color[li, idx, 1] += cg * wt
                    local_color[li, idx, 2] += cb * wt
                    local_alpha[li, idx] += wt
                    local_depth[li, idx] += dep * wt
                    tnew = tcur * (1.0 - w)
                    trans[idx] = tnew
                    if tnew < TRANSMITTANCE_EPS:
                        n_active -= 1
            if n_active <= 0:
                break
        for iy in range(th):
            py = y0 + iy
            row = iy * tw
            for ix in range(tw):
                px = x0 + ix
                idx = row + ix
                total_alpha[py, px] = 1.0 - trans[idx]
                for c in range(3):
                    rgb[py, px, c] = local_rgb[idx, c]
                for li in range(n_layers):
                    layer_alpha[li, py, px] = local_alpha[li, idx]
                    layer_depthsum[li, py, px] = local_depth[li, idx]
                    for c in range(3):
                        layer_colorsum[li, py, px, c] = local_color[li, idx, c]


def _finalize(rgb, total_alpha, layer_alpha, layer_colorsum, layer_depthsum):
    np.clip(rgb, 0.0, 1.0, out=rgb)
    return RenderOutput(
        rgb=rgb,
        total_alpha=total_alpha,
        layer_alpha=layer_alpha,
        layer_colorsum=layer_colorsum,
        layer_depthsum=layer_depthsum,
    )


def rasterize(gset: PosedGaussianSet, camera: CameraModel, workers=1) -> RenderOutput:
    """Tiled front-to-back compositing; bit-identical for any worker count.

    Tiles are disjoint image regions, so each worker writes its own pixels
    and the result never depends on scheduling.
    """
    w, h = camera.image_size
    mean2d = None
    if len(gset):
        mean2d, inv, extent, depth, opac, colors, layer_idx = _prepare(gset, camera)
        if mean2d.shape[0] == 0:
            mean2d = None
    if mean2d is None:
        zero = np.zeros
        return _finalize(zero((h, w, 3)), zero((h, w)), zero((N_LAYERS, h, w)),
                         zero((N_LAYERS, h, w, 3)), zero((N_LAYERS, h, w)))

    # The kernel writes every pixel of every tile, so these start unzeroed.
    rgb = np.empty((h, w, 3))
    total_alpha = np.empty((h, w))
    layer_alpha = np.empty((N_LAYERS, h, w))
    layer_colorsum = np.empty((N_LAYERS, h, w, 3))
    layer_depthsum = np.empty((N_LAYERS, h, w))
    n_tiles_x = (w + TILE - 1) // TILE
    n_tiles_y = (h + TILE - 1) // TILE
    starts, entries = _bin_tiles(mean2d, extent, n_tiles_x, n_tiles_y)

    all_tiles = np.arange(n_tiles_x * n_tiles_y, dtype=np.int64)
    workers = max(1, int(workers))
    args = (starts, entries, n_tiles_x, mean2d, inv, opac, colors, depth,
            layer_idx, w, h, rgb, total_alpha, layer_alpha, layer_colorsum,
            layer_depthsum)
    if workers == 1:
        _composite_tiles(all_tiles, *args)
    else:
        chunks = [np.ascontiguousarray(all_tiles[i::workers]) for i in range(workers)]
        with ThreadPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(_composite_tiles, chunk, *args) for chunk in chunks]
            for f in futures:
                f.result()
    return _finalize(rgb, total_alpha, layer_alpha, layer_colorsum, layer_depthsum)


def reference_composite(gset: PosedGaussianSet, camera: CameraModel) -> RenderOutput:
    """Untiled oracle renderer: same projection and compositing rule as
    rasterize, evaluated per pixel over every splat with no early exit.
    Intended for small scenes (<= ~1000 splats, small images)."""
    w, h = camera.image_size
    rgb = np.zeros((h, w, 3))
    transmittance = np.ones((h, w))
    layer_alpha = np.zeros((N_LAYERS, h, w))
    layer_colorsum = np.zeros((N_LAYERS, h, w, 3))
    layer_depthsum = np.zeros((N_LAYERS, h, w))
    if len(gset) == 0:
        return _finalize(rgb, 1.0 - transmittance, layer_alpha, layer_colorsum,
                         layer_depthsum)

    mean2d, inv, _, depth, opac, colors, layer_idx = _prepare(gset, camera)
    xs = np.arange(w) + 0.5
    ys = np.arange(h) + 0.5
    gx, gy = np.meshgrid(xs, ys)
    for g in range(mean2d.shape[0]):
        dx = gx - mean2d[g, 0]
        dy = gy - mean2d[g, 1]
        m2 = inv[g, 0] * dx * dx + 2.0 * inv[g, 1] * dx * dy + inv[g, 2] * dy * dy
        support = (m2 <= MAX_MAHAL_SQ) & (m2 >= 0.0)
        weight = np.where(support, opac[g] * np.exp(-0.5 * np.abs(m2)), 0.0)
        weight[weight < MIN_CONTRIBUTION] = 0.0
        contrib = weight * transmittance
        rgb += contrib[..., None] * colors[g]
        li = layer_idx[g]
        layer_alpha[li] += contrib
        layer_colorsum[li] += contrib[..., None] * colors[g]
        layer_depthsum[li] += contrib * depth[g]
        transmittance *= 1.0 - weight
    return _finalize(rgb, 1.0 - transmittance, layer_alpha, layer_colorsum,
                     layer_depthsum)


def render_segmentation(gset: PosedGaussianSet, camera: CameraModel,
                        layer_palette=None, workers=1):
    """Render with each splat recolored by its layer's palette color.

    Returns the (H, W, 3) multi-class mask image.
    """
    from .core import DEFAULT_PALETTE

    palette = layer_palette if layer_palette is not None else DEFAULT_PALETTE
    present = set(int(v) for v in np.unique(gset.layer_ids))
    known = {int(k) for k in palette}
    missing = present - known
    if missing:
        raise ValueError(f"no palette color for layer ids {sorted(missing)}")
    colors = np.zeros((len(gset), 3))
    for lid in present:
        colors[gset.layer_ids == lid] = np.asarray(palette[LayerId(lid)], dtype=np.float64)
    return rasterize(gset.with_colors(colors), camera, workers=workers).rgb


def render_single_layer_mask(gset: PosedGaussianSet, camera: CameraModel,
                             layer_id, workers=1):
    """Alpha silhouette of one layer rendered in isolation."""
    return rasterize(gset.filter_layer(layer_id), camera, workers=workers).total_alpha
