"""Outfit composition and penetration-aware rendering.

The render path is: evaluate each layer's deformation model at the
driving pose, deform with the wearer's shape through the diffused
skinning field, splat everything together, then detect inner-layer pixel
regions fully enclosed by their adjacent outer layer, confirm them with
the per-layer depth rule D_out - eps < D_in, and recolor confirmed pixels
from the outer layer's buffers.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .core import GaussianLayer, LayerId, PoseParams, covariance_from_rotation_scale
from .posemap import predict_gaussian_maps
from .render import (
    DEPTH_ALPHA_THRESHOLD,
    PosedGaussianSet,
    RenderOutput,
    rasterize,
)
from .skinning import forward_kinematics, lbs_covariances, lbs_points, \
    query_skinning_batch
from .wardrobe import ComposedAvatar, WardrobeAsset, swap_body_gaussian_params

FOUR_CONNECTED = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool)
EIGHT_CONNECTED = np.ones((3, 3), dtype=bool)


class CompositionError(ValueError):
    """Raised when assets cannot be combined (joint/shape mismatch)."""


def build_canonical_layer(asset: WardrobeAsset, pose: PoseParams,
                          field) -> GaussianLayer:
    """Instantiate a layer's splats in canonical space for a driving pose.

    One primitive per valid map cell: position from the coordinate maps,
    the 14-channel payload from the deformation model, skinning weights
    and blendshape offsets queried once at the canonical position.
    """
    attrs = predict_gaussian_maps(asset.deformation_model, pose)
    positions = asset.coordinate_maps.valid_positions()
    weights, bs_offsets = query_skinning_batch(field, positions)
    return GaussianLayer(
        layer_id=asset.layer_id,
        positions=positions,
        offsets=attrs.offsets,
        rotations=attrs.rotations,
        opacities=attrs.opacities,
        scales=attrs.scales,
        colors=attrs.colors,
        skinning_weights=weights,
        blendshape_offsets=bs_offsets,
        neighbors=asset.coordinate_maps.neighbor_table(),
        source_side=asset.coordinate_maps.valid_sides(),
    )


def pose_layer(layer: GaussianLayer, shape, transforms) -> PosedGaussianSet:
    """Deform one canonical layer into the posed space (positions and
    covariances) and package it for the rasterizer."""
    cov = covariance_from_rotation_scale(
        layer.rotations.astype(np.float64), layer.scales.astype(np.float64)
    )
    means = lbs_points(
        layer.positions.astype(np.float64),
        layer.offsets.astype(np.float64),
        shape.coefficients,
        layer.blendshape_offsets.astype(np.float64),
        layer.skinning_weights.astype(np.float64),
        transforms,
    )
    covs = lbs_covariances(cov, layer.skinning_weights.astype(np.float64), transforms)
    return PosedGaussianSet(
        means=means,
        covariances=covs,
        opacities=layer.opacities.astype(np.float64),
        colors=layer.colors.astype(np.float64),
        layer_ids=np.full(len(layer), int(layer.layer_id), dtype=np.uint8),
    )


def _check_compatible(avatar: ComposedAvatar):
    body = avatar.identity.body_asset
    for lid in avatar.occupied_layers():
        asset = avatar.asset_for(lid)
        if asset.joint_count != body.joint_count:
            raise CompositionError(
                f"{asset.asset_id}: joint count {asset.joint_count} != "
                f"body {body.joint_count}"
            )
        if asset.blendshape_count != body.blendshape_count:
            raise CompositionError(
                f"{asset.asset_id}: blendshape count {asset.blendshape_count} != "
                f"body {body.blendshape_count}"
            )
    if body.skinning_field is None:
        raise CompositionError(f"{body.asset_id}: body asset has no skinning field")
    if body.skeleton is None:
        raise CompositionError(f"{body.asset_id}: body asset has no skeleton")


def compose_gaussians(avatar: ComposedAvatar, pose: PoseParams,
                      body_param_donor: GaussianLayer | None = None,
                      swap_eps=0.005) -> PosedGaussianSet:
    """Build the posed splat set for a composed outfit.

    Garment layers use the body's diffused skinning field unless they
    embed their own. When a donor body layer is supplied, its offset and
    rotation parameters replace the user's on body splats sitting inside
    each garment before deformation.
    """
    _check_compatible(avatar)
    identity = avatar.identity
    body_asset = identity.body_asset
    body_field = body_asset.skinning_field
    transforms = forward_kinematics(pose, body_asset.skeleton)

    sets = []
    canonical_layers = {}
    for lid in avatar.occupied_layers():
        asset = avatar.asset_for(lid)
        field = asset.skinning_field if asset.skinning_field is not None else body_field
        canonical_layers[lid] = build_canonical_layer(asset, pose, field)

    if body_param_donor is not None:
        body_layer = canonical_layers[LayerId.BODY]
        for lid in avatar.occupied_layers():
            if lid == LayerId.BODY:
                continue
            body_layer = swap_body_gaussian_params(
                body_layer, body_param_donor, canonical_layers[lid], swap_eps
            )
        canonical_layers[LayerId.BODY] = body_layer

    for lid in avatar.occupied_layers():
        sets.append(pose_layer(canonical_layers[lid], identity.shape, transforms))
    return PosedGaussianSet.concatenate(sets)


def compose(avatar: ComposedAvatar, pose: PoseParams, camera, workers=1,
            body_param_donor=None, swap_eps=0.005):
    """Compose and rasterize; returns (PosedGaussianSet, RenderOutput)."""
    gset = compose_gaussians(avatar, pose, body_param_donor, swap_eps)
    return gset, rasterize(gset, camera, workers=workers)


# --- penetration detection and correction ------------------------------------

@dataclass
class PenetrationRegion:
    """A connected inner-label component fully ringed by outer-label pixels."""

    inner_layer: LayerId
    outer_layer: LayerId
    rows: np.ndarray  # (K,)
    cols: np.ndarray  # (K,)
    confirmed_mask: np.ndarray | None = None  # (K,) after depth confirmation

    @property
    def pixel_count(self):
        return int(self.rows.size)

    @property
    def confirmed(self):
        return self.confirmed_mask is not None and bool(self.confirmed_mask.any())


def find_enclosed_regions(labels, adjacency):
    """Connected components (4-connectivity) of inner-labeled pixels whose
    full 8-neighborhood boundary ring is outer-labeled and which stay off
    the image border. Regions come back unconfirmed, in adjacency order
    then scan order."""
    labels = np.asarray(labels)
    h, w = labels.shape
    regions = []
    for inner, outer in adjacency:
        mask = labels == int(inner)
        if not mask.any():
            continue
        comp, n_comp = ndimage.label(mask, structure=FOUR_CONNECTED)
        if n_comp == 0:
            continue
        slices = ndimage.find_objects(comp)
        for ci, sl in enumerate(slices, start=1):
            rs, cs = sl
            if rs.start == 0 or cs.start == 0 or rs.stop == h or cs.stop == w:
                continue  # touches the border, cannot be enclosed
            # Work on a 1px-padded window so the ring fits.
            win = comp[rs.start - 1: rs.stop + 1, cs.start - 1: cs.stop + 1] == ci
            ring = ndimage.binary_dilation(win, structure=EIGHT_CONNECTED) & ~win
            ring_labels = labels[rs.start - 1: rs.stop + 1, cs.start - 1: cs.stop + 1][ring]
            if ring_labels.size and np.all(ring_labels == int(outer)):
                rows, cols = np.nonzero(win)
                regions.append(
                    PenetrationRegion(
                        inner_layer=LayerId(int(inner)),
                        outer_layer=LayerId(int(outer)),
                        rows=rows + rs.start - 1,
                        cols=cols + cs.start - 1,
                    )
                )
    return regions


def confirm_penetration(region: PenetrationRegion, depth_inner, depth_outer, eps):
    """Depth rule: a region pixel is a real artifact iff both layer depths
    are confident there and D_out - eps < D_in (the inner surface is not
    meaningfully in front of the outer one). Returns the confirmed mask
    over the region's pixels and stores it on the region."""
    d_in = np.asarray(depth_inner)[region.rows, region.cols]
    d_out = np.asarray(depth_outer)[region.rows, region.cols]
    ok = np.isfinite(d_in) & np.isfinite(d_out)
    confirmed = ok & (d_out - eps < d_in)
    region.confirmed_mask = confirmed
    return confirmed


def correct_pixels(rgb, labels, regions, outer_buffers):
    """Recolor confirmed pixels from the outer layer.

    outer_buffers maps each outer LayerId to its (color (H, W, 3),
    alpha (H, W)) buffers. Where the outer alpha is confident (>= 0.5)
    the pixel takes the outer layer's own rendered color; otherwise it
    copies the nearest outer-labeled pixel (Euclidean distance,
    scan-order tie-break). Labels follow. Unconfirmed pixels are
    untouched.
    """
    rgb = np.array(rgb, copy=True)
    labels = np.array(labels, copy=True)
    corrected_counts = []
    for region in regions:
        mask = region.confirmed_mask
        if mask is None or not mask.any():
            corrected_counts.append(0)
            continue
        outer_color, outer_alpha = outer_buffers[region.outer_layer]
        rows = region.rows[mask]
        cols = region.cols[mask]
        alpha_ok = outer_alpha[rows, cols] >= DEPTH_ALPHA_THRESHOLD
        rgb[rows[alpha_ok], cols[alpha_ok]] = \
            outer_color[rows[alpha_ok], cols[alpha_ok]]
        corrected = int(alpha_ok.sum())
        need_fallback = ~alpha_ok
        if need_fallback.any():
            out_rows, out_cols = np.nonzero(labels == int(region.outer_layer))
            if out_rows.size:
                for r, c in zip(rows[need_fallback], cols[need_fallback]):
                    d2 = (out_rows - r) ** 2 + (out_cols - c) ** 2
                    j = int(np.argmin(d2))  # first minimum = lowest scan index
                    rgb[r, c] = rgb[out_rows[j], out_cols[j]]
                    corrected += 1
        labels[rows, cols] = int(region.outer_layer)
        corrected_counts.append(corrected)
    return rgb, labels, corrected_counts


@dataclass
class PairDiagnostics:
    inner_layer: LayerId
    outer_layer: LayerId
    regions_found: int
    confirmed_pixels: int
    corrected_pixels: int

    def to_line(self):
        return (
            f"pair={self.inner_layer.name.lower()}->{self.outer_layer.name.lower()} "
            f"regions={self.regions_found} confirmed={self.confirmed_pixels} "
            f"corrected={self.corrected_pixels}"
        )


def diagnostics_text(diags):
    return "".join(d.to_line() + "\n" for d in diags)


def layer_isolation_renders(gset: PosedGaussianSet, camera, layers, workers=1):
    """Render each layer's splats alone.

    The composite pass's per-layer buffers cannot confirm penetrations:
    at an inner-labeled pixel the outer layer's accumulated alpha is
    always the argmax loser (< 0.5, since per-layer alphas partition a
    total of at most 1), so its expected depth is never confident there.
    Isolation renders give each layer a fully-saturated depth and color
    map of its own surface, which is what the depth rule and the color
    replacement actually need.
    """
    return {
        LayerId(lid): rasterize(gset.filter_layer(lid), camera, workers=workers)
        for lid in layers
    }


def correct_render(rgb, labels, isolation, adjacency, eps):
    """One correction pass; pairs run inner to outer so earlier
    corrections feed later pairs' label maps. `isolation` maps LayerId to
    that layer's isolation RenderOutput."""
    rgb = np.array(rgb, copy=True)
    labels = np.array(labels, copy=True)
    diags = []
    for pair in adjacency:
        inner, outer = LayerId(pair[0]), LayerId(pair[1])
        regions = find_enclosed_regions(labels, [(inner, outer)])
        confirmed_px = 0
        for region in regions:
            confirm_penetration(
                region,
                isolation[inner].depth_for(inner),
                isolation[outer].depth_for(outer),
                eps,
            )
            confirmed_px += int(region.confirmed_mask.sum())
        rgb, labels, counts = correct_pixels(
            rgb, labels, regions,
            {outer: (isolation[outer].color_for(outer),
                     isolation[outer].alpha_for(outer))},
        )
        diags.append(
            PairDiagnostics(
                inner_layer=inner,
                outer_layer=outer,
                regions_found=len(regions),
                confirmed_pixels=confirmed_px,
                corrected_pixels=int(sum(counts)),
            )
        )
    return rgb, labels, diags


def region_confirmed_totals(labels, adjacency, isolation, eps):
    """Re-run detection + confirmation over a label map; returns the total
    confirmed pixel count (0 means nothing left to correct)."""
    total = 0
    for inner, outer in adjacency:
        for region in find_enclosed_regions(labels, [(inner, outer)]):
            mask = confirm_penetration(
                region,
                isolation[LayerId(inner)].depth_for(inner),
                isolation[LayerId(outer)].depth_for(outer),
                eps,
            )
            total += int(mask.sum())
    return total


@dataclass
class TryOnFrame:
    """penetration_aware_render output: corrected image plus provenance."""

    rgb: np.ndarray
    labels: np.ndarray
    diagnostics: list
    render: RenderOutput
    gaussians: PosedGaussianSet

    @property
    def uncorrected_rgb(self):
        return self.render.rgb

    @property
    def uncorrected_labels(self):
        return self.render.layer_labels

    def diagnostics_text(self):
        return diagnostics_text(self.diagnostics)


def penetration_aware_render(avatar: ComposedAvatar, pose: PoseParams, camera,
                             eps=None, workers=1, correction=True,
                             body_param_donor=None) -> TryOnFrame:
    """Full try-on pipeline: compose, rasterize, detect, confirm, correct."""
    if eps is None:
        eps = 0.005
    gset, render = compose(
        avatar, pose, camera, workers=workers, body_param_donor=body_param_donor
    )
    rgb = render.rgb
    labels = render.layer_labels
    if correction and avatar.adjacency:
        layers = sorted({lid for pair in avatar.adjacency for lid in pair})
        isolation = layer_isolation_renders(gset, camera, layers, workers=workers)
        rgb, labels, diags = correct_render(
            rgb, labels, isolation, avatar.adjacency, eps
        )
    else:
        diags = []
    return TryOnFrame(
        rgb=rgb, labels=labels, diagnostics=diags, render=render, gaussians=gset
    )
