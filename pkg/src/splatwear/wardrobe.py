"""Subject-agnostic asset container (.gwa), catalog directory, and the
swapping operations that make garment layers reusable across subjects.

Container layout: an 8-byte magic, a uint64 manifest length, a JSON
manifest (field names, shapes, section offsets, crc32 checksums), then
raw little-endian tensor sections, each 64-byte aligned. Tensors are
float32/float64/int32/uint8 exactly as held in memory, so a save/load
round trip is byte-identical.
"""

from __future__ import annotations

import json
import os
import struct
import zlib
from dataclasses import dataclass, field as dataclass_field

import numpy as np

from .core import GaussianLayer, LayerId, ShapeParams, PoseParams
from .losses import layer_normals
from .posemap import CoordinateMaps, ExemplarDeformationModel, TemplateMesh
from .skinning import Skeleton, SkinningField
from .spatial import SpatialHashGrid

MAGIC = b"GWASSET\x00"
FORMAT_VERSION = 1
ALIGNMENT = 64
CATALOG_INDEX = "catalog.json"

_DTYPES = {"f4": "<f4", "f8": "<f8", "i4": "<i4", "u1": "|u1"}


class AssetFormatError(Exception):
    """Base class for container format failures."""


class AssetVersionError(AssetFormatError):
    pass


class AssetTruncatedError(AssetFormatError):
    pass


class AssetChecksumError(AssetFormatError):
    pass


@dataclass
class WardrobeAsset:
    """One stored layer: template, coordinate maps, deformation model, and
    (for bodies) the embedded skinning field."""

    asset_id: str
    layer_id: LayerId
    category: str
    template: TemplateMesh
    coordinate_maps: CoordinateMaps
    deformation_model: ExemplarDeformationModel
    skinning_field: SkinningField | None = None
    skinning_field_ref: str = ""  # asset id supplying the field when not embedded
    skeleton: Skeleton | None = None  # body assets carry the kinematic tree
    joint_count: int = 0
    blendshape_count: int = 0
    format_version: int = FORMAT_VERSION

    def __post_init__(self):
        self.layer_id = LayerId(self.layer_id)


@dataclass(frozen=True)
class AvatarIdentity:
    """A subject: their shape coefficients plus their body asset."""

    shape: ShapeParams
    body_asset: WardrobeAsset

    def __post_init__(self):
        if self.body_asset.layer_id != LayerId.BODY:
            raise ValueError("identity body asset must be a body layer")
        if self.body_asset.blendshape_count != self.shape.count:
            raise ValueError(
                "shape coefficient count does not match the body asset"
            )


@dataclass
class ComposedAvatar:
    """An identity plus its selected garments, ordered inner to outer."""

    identity: AvatarIdentity
    slots: dict  # LayerId -> WardrobeAsset (garments only)
    adjacency: tuple = ()  # ((inner LayerId, outer LayerId), ...)

    def __post_init__(self):
        self.slots = {LayerId(k): v for k, v in self.slots.items()}
        if LayerId.BODY in self.slots:
            raise ValueError("the body belongs to the identity, not a slot")
        for lid, asset in self.slots.items():
            if asset.layer_id != lid:
                raise ValueError(
                    f"slot {lid.name} holds a {asset.layer_id.name} asset"
                )
        if not self.adjacency:
            self.adjacency = default_adjacency(self.occupied_layers())

    def occupied_layers(self):
        """Inner-to-outer ordering: body first, then lower/upper/outer."""
        order = [LayerId.BODY]
        for lid in (LayerId.LOWER, LayerId.UPPER, LayerId.OUTER):
            if lid in self.slots:
                order.append(lid)
        return tuple(order)

    def asset_for(self, layer_id):
        if layer_id == LayerId.BODY:
            return self.identity.body_asset
        return self.slots[layer_id]


def default_adjacency(occupied):
    """(inner, outer) pairs to police, emitted inner-to-outer: the body
    against each garment it wears, then upper/lower against an outer
    shell when one is present."""
    occupied = set(occupied)
    pairs = []
    for lid in (LayerId.LOWER, LayerId.UPPER):
        if lid in occupied:
            pairs.append((LayerId.BODY, lid))
    if LayerId.OUTER in occupied:
        if not (LayerId.UPPER in occupied or LayerId.LOWER in occupied):
            pairs.append((LayerId.BODY, LayerId.OUTER))
        for lid in (LayerId.UPPER, LayerId.LOWER):
            if lid in occupied:
                pairs.append((lid, LayerId.OUTER))
    return tuple(pairs)


# --- container serialization -------------------------------------------------

def _sections_for(asset: WardrobeAsset):
    model = asset.deformation_model
    poses = np.stack(
        [
            np.concatenate(
                [p.joint_rotations.reshape(-1), p.global_orientation,
                 p.global_translation]
            )
            for p in model.poses
        ]
    ).astype(np.float64)
    sections = [
        ("template_vertices", asset.template.vertices),
        ("template_faces", asset.template.faces),
        ("template_labels", asset.template.layer_label),
        ("maps_positions", asset.coordinate_maps.positions),
        ("maps_validity", asset.coordinate_maps.validity.astype(np.uint8)),
        ("model_offsets", model.offsets),
        ("model_rotations", model.rotations),
        ("model_opacities", model.opacities),
        ("model_scales", model.scales),
        ("model_colors", model.colors),
        ("exemplar_poses", poses),
    ]
    if asset.skinning_field is not None:
        f = asset.skinning_field
        sections += [
            ("field_weights", f.weights),
            ("field_offsets", f.offsets),
            ("field_validity", f.validity.astype(np.uint8)),
            ("field_bbox", np.stack([f.bbox_min, f.bbox_max]).astype(np.float64)),
        ]
    if asset.skeleton is not None:
        sections += [
            ("skeleton_joints", asset.skeleton.rest_joints.astype(np.float64)),
            ("skeleton_parents", asset.skeleton.parent_indices.astype(np.int32)),
        ]
    return sections


def _dtype_code(arr):
    for code, np_dtype in _DTYPES.items():
        if arr.dtype == np.dtype(np_dtype):
            return code
    raise ValueError(f"unsupported section dtype {arr.dtype}")


@dataclass
class StorageReceipt:
    path: str
    byte_size: int
    section_count: int


def save_asset(asset: WardrobeAsset, destination) -> StorageReceipt:
    """Serialize to a .gwa container; writes are atomic (temp + rename)."""
    destination = os.fspath(destination)
    sections = _sections_for(asset)
    payload_entries = []
    blobs = []
    for name, arr in sections:
        arr = np.ascontiguousarray(arr)
        if arr.dtype.byteorder == ">":  # containers are little-endian
            arr = arr.astype(arr.dtype.newbyteorder("<"))
        blob = arr.tobytes()
        payload_entries.append(
            {
                "name": name,
                "dtype": _dtype_code(arr),
                "shape": list(arr.shape),
                "nbytes": len(blob),
                "crc32": zlib.crc32(blob) & 0xFFFFFFFF,
            }
        )
        blobs.append(blob)

    manifest = {
        "format_version": asset.format_version,
        "asset_id": asset.asset_id,
        "layer_id": int(asset.layer_id),
        "category": asset.category,
        "joint_count": int(asset.joint_count),
        "blendshape_count": int(asset.blendshape_count),
        "kernel_bandwidth": float(asset.deformation_model.kernel_bandwidth),
        "skinning_field_ref": asset.skinning_field_ref,
        "has_field": asset.skinning_field is not None,
        "has_skeleton": asset.skeleton is not None,
        "field_resolution": list(asset.skinning_field.resolution)
        if asset.skinning_field is not None
        else None,
        "sections": payload_entries,
    }
    # Two passes: offsets depend on the manifest length, which includes them.
    for entry in payload_entries:
        entry["offset"] = 0
    for _ in range(8):
        manifest_bytes = json.dumps(manifest, sort_keys=True).encode("utf-8")
        cursor = len(MAGIC) + 8 + len(manifest_bytes)
        changed = False
        for entry, blob in zip(payload_entries, blobs):
            cursor = (cursor + ALIGNMENT - 1) // ALIGNMENT * ALIGNMENT
            if entry["offset"] != cursor:
                entry["offset"] = cursor
                changed = True
            cursor += len(blob)
        if not changed:
            break

    tmp = destination + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(manifest_bytes)))
        fh.write(manifest_bytes)
        pos = len(MAGIC) + 8 + len(manifest_bytes)
        for entry, blob in zip(payload_entries, blobs):
            fh.write(b"\x00" * (entry["offset"] - pos))
            fh.write(blob)
            pos = entry["offset"] + len(blob)
        size = fh.tell()
    os.replace(tmp, destination)
    return StorageReceipt(path=destination, byte_size=size,
                          section_count=len(sections))


def load_manifest(source):
    source = os.fspath(source)
    with open(source, "rb") as fh:
        head = fh.read(len(MAGIC))
        if head != MAGIC:
            raise AssetFormatError("not a wardrobe asset container")
        (mlen,) = struct.unpack("<Q", fh.read(8))
        manifest_bytes = fh.read(mlen)
        if len(manifest_bytes) != mlen:
            raise AssetTruncatedError("manifest truncated")
    return json.loads(manifest_bytes.decode("utf-8"))


def load_asset(source) -> WardrobeAsset:
    """Load and verify a .gwa container.

    Raises AssetVersionError for unknown format versions (before touching
    any payload), AssetTruncatedError naming the first missing section,
    and AssetChecksumError naming the first corrupt one.
    """
    source = os.fspath(source)
    manifest = load_manifest(source)
    version = manifest.get("format_version")
    if version != FORMAT_VERSION:
        raise AssetVersionError(
            f"unsupported format_version {version} (supported: {FORMAT_VERSION})"
        )
    file_size = os.path.getsize(source)
    arrays = {}
    with open(source, "rb") as fh:
        for entry in manifest["sections"]:
            name = entry["name"]
            end = entry["offset"] + entry["nbytes"]
            if end > file_size:
                raise AssetTruncatedError(
                    f"section {name} extends past end of file"
                )
            fh.seek(entry["offset"])
            blob = fh.read(entry["nbytes"])
            if len(blob) != entry["nbytes"]:
                raise AssetTruncatedError(f"section {name} truncated")
            if (zlib.crc32(blob) & 0xFFFFFFFF) != entry["crc32"]:
                raise AssetChecksumError(f"section {name} checksum mismatch")
            arr = np.frombuffer(blob, dtype=np.dtype(_DTYPES[entry["dtype"]]))
            arrays[name] = arr.reshape(entry["shape"]).copy()

    template = TemplateMesh(
        vertices=arrays["template_vertices"],
        faces=arrays["template_faces"],
        layer_label=arrays["template_labels"],
    )
    maps = CoordinateMaps(
        positions=arrays["maps_positions"],
        validity=arrays["maps_validity"].astype(bool),
    )
    j = int(manifest["joint_count"])
    pose_rows = arrays["exemplar_poses"]
    poses = [
        PoseParams(
            joint_rotations=row[: 3 * j].reshape(j, 3),
            global_orientation=row[3 * j: 3 * j + 3],
            global_translation=row[3 * j + 3: 3 * j + 6],
        )
        for row in pose_rows
    ]
    model = ExemplarDeformationModel(
        poses=poses,
        offsets=arrays["model_offsets"],
        rotations=arrays["model_rotations"],
        opacities=arrays["model_opacities"],
        scales=arrays["model_scales"],
        colors=arrays["model_colors"],
        kernel_bandwidth=float(manifest["kernel_bandwidth"]),
    )
    field = None
    if manifest.get("has_field"):
        bbox = arrays["field_bbox"]
        field = SkinningField(
            resolution=tuple(manifest["field_resolution"]),
            bbox_min=bbox[0],
            bbox_max=bbox[1],
            weights=arrays["field_weights"],
            offsets=arrays["field_offsets"],
            validity=arrays["field_validity"].astype(bool),
        )
    skeleton = None
    if manifest.get("has_skeleton"):
        skeleton = Skeleton(
            rest_joints=arrays["skeleton_joints"],
            parent_indices=arrays["skeleton_parents"].astype(np.int64),
        )
    return WardrobeAsset(
        asset_id=manifest["asset_id"],
        layer_id=LayerId(manifest["layer_id"]),
        category=manifest["category"],
        template=template,
        coordinate_maps=maps,
        deformation_model=model,
        skinning_field=field,
        skinning_field_ref=manifest.get("skinning_field_ref", ""),
        skeleton=skeleton,
        joint_count=j,
        blendshape_count=int(manifest["blendshape_count"]),
        format_version=version,
    )


def validate_asset(asset: WardrobeAsset):
    """Cross-component shape and invariant checks; returns violations."""
    reports = [f"template: {r}" for r in asset.template.validate()]
    model = asset.deformation_model
    n_cells = asset.coordinate_maps.valid_count
    if model.cell_count != n_cells:
        reports.append(
            f"deformation model covers {model.cell_count} cells, "
            f"coordinate maps define {n_cells}"
        )
    for k, pose in enumerate(model.poses):
        if pose.joint_count != asset.joint_count:
            reports.append(
                f"exemplar {k}: pose has {pose.joint_count} joints, "
                f"asset declares {asset.joint_count}"
            )
    if np.any(model.scales <= 0):
        reports.append("deformation model contains non-positive scales")
    if np.any((model.opacities < 0) | (model.opacities > 1)):
        reports.append("deformation model contains out-of-range opacities")
    norms = np.linalg.norm(model.rotations.astype(np.float64), axis=2)
    if np.any(np.abs(norms - 1.0) > 1e-4):
        reports.append("deformation model contains non-unit quaternions")
    f = asset.skinning_field
    if f is not None:
        if f.joint_count != asset.joint_count:
            reports.append(
                f"skinning field has {f.joint_count} joints, "
                f"asset declares {asset.joint_count}"
            )
        if f.blendshape_count != asset.blendshape_count:
            reports.append(
                f"skinning field has {f.blendshape_count} blendshapes, "
                f"asset declares {asset.blendshape_count}"
            )
        if not f.validity.all():
            reports.append("skinning field has undiffused voxels")
    elif asset.layer_id == LayerId.BODY:
        reports.append("body asset must embed a skinning field")
    if asset.layer_id == LayerId.BODY:
        if asset.skeleton is None:
            reports.append("body asset must embed a skeleton")
        elif asset.skeleton.joint_count != asset.joint_count:
            reports.append(
                f"skeleton has {asset.skeleton.joint_count} joints, "
                f"asset declares {asset.joint_count}"
            )
    return reports


# --- swapping ----------------------------------------------------------------

def swap_garment(avatar: ComposedAvatar, slot, new_asset: WardrobeAsset) -> ComposedAvatar:
    """Replace one garment slot; the identity and other slots are shared,
    never mutated."""
    slot = LayerId(slot)
    if new_asset.layer_id != slot:
        raise ValueError(
            f"asset {new_asset.asset_id} is a {new_asset.layer_id.name} layer, "
            f"cannot occupy the {slot.name} slot"
        )
    body = avatar.identity.body_asset
    if new_asset.joint_count != body.joint_count:
        raise ValueError("joint count incompatible with the avatar identity")
    if new_asset.blendshape_count != body.blendshape_count:
        raise ValueError("blendshape count incompatible with the avatar identity")
    slots = dict(avatar.slots)
    slots[slot] = new_asset
    # Occupancy is unchanged by a swap, so the adjacency pairs carry over.
    return ComposedAvatar(
        identity=avatar.identity, slots=slots, adjacency=avatar.adjacency
    )


def swap_body_gaussian_params(user_body: GaussianLayer, donor_body: GaussianLayer,
                              garment: GaussianLayer, eps) -> GaussianLayer:
    """Graft the donor's offset/rotation onto the user's body splats that
    sit inside the garment; color, opacity, and scale stay the user's.

    A body splat counts as inside when its signed distance along the
    nearest garment splat's estimated normal is below eps. Both bodies
    must share the same grid topology so indices correspond.
    """
    if len(user_body) != len(donor_body):
        raise ValueError("body layers have different primitive counts")
    if not np.array_equal(user_body.neighbors, donor_body.neighbors) or \
            not np.array_equal(user_body.source_side, donor_body.source_side):
        raise ValueError("body layers were built from different grids")

    out = user_body.copy()
    if len(garment) == 0:
        return out

    garment_pts = garment.positions.astype(np.float64) + garment.offsets.astype(np.float64)
    normals, normal_valid = layer_normals(garment_pts, garment.neighbors)
    body_pts = user_body.positions.astype(np.float64) + user_body.offsets.astype(np.float64)
    grid = SpatialHashGrid(garment_pts)
    nearest = grid.nearest_many(body_pts)
    ok = normal_valid[nearest]
    signed = np.einsum(
        "nk,nk->n", body_pts - garment_pts[nearest], normals[nearest]
    )
    inside = ok & (signed < eps)
    out.offsets[inside] = donor_body.offsets[inside]
    out.rotations[inside] = donor_body.rotations[inside]
    return out


def classify_inside_garment(body_points, garment_points, garment_neighbors, eps):
    """Containment mask used by the swap: signed distance along the nearest
    garment normal below eps. Exposed for oracle comparison in tests."""
    body_points = np.asarray(body_points, dtype=np.float64).reshape(-1, 3)
    garment_points = np.asarray(garment_points, dtype=np.float64).reshape(-1, 3)
    normals, valid = layer_normals(garment_points, garment_neighbors)
    grid = SpatialHashGrid(garment_points)
    nearest = grid.nearest_many(body_points)
    signed = np.einsum(
        "nk,nk->n", body_points - garment_points[nearest], normals[nearest]
    )
    return valid[nearest] & (signed < eps)


# --- catalog -----------------------------------------------------------------

@dataclass
class CatalogEntry:
    asset_id: str
    layer_id: LayerId
    category: str
    file: str
    thumbnail: str | None = None


@dataclass
class Catalog:
    """Directory of .gwa files plus a JSON index and PNG thumbnails.

    Reads are safe from any number of threads once loaded; mutations are
    single-writer by contract.
    """

    root: str
    entries: dict = dataclass_field(default_factory=dict)

    @classmethod
    def open(cls, root):
        root = os.fspath(root)
        cat = cls(root=root)
        index = os.path.join(root, CATALOG_INDEX)
        if os.path.exists(index):
            with open(index, "r", encoding="utf-8") as fh:
                data = json.load(fh)
            for row in data.get("assets", []):
                entry = CatalogEntry(
                    asset_id=row["id"],
                    layer_id=LayerId(row["layer"]),
                    category=row["category"],
                    file=row["file"],
                    thumbnail=row.get("thumbnail"),
                )
                cat.entries[entry.asset_id] = entry
        return cat

    def ids(self):
        return sorted(self.entries)

    def get(self, asset_id) -> CatalogEntry:
        if asset_id not in self.entries:
            raise KeyError(asset_id)
        return self.entries[asset_id]

    def load(self, asset_id) -> WardrobeAsset:
        entry = self.get(asset_id)
        return load_asset(os.path.join(self.root, entry.file))

    def add(self, asset: WardrobeAsset, thumbnail_png=None):
        if asset.asset_id in self.entries:
            raise ValueError(f"duplicate asset id {asset.asset_id}")
        os.makedirs(self.root, exist_ok=True)
        filename = f"{asset.asset_id}.gwa"
        save_asset(asset, os.path.join(self.root, filename))
        thumb_rel = None
        if thumbnail_png is not None:
            os.makedirs(os.path.join(self.root, "thumbnails"), exist_ok=True)
            thumb_rel = os.path.join("thumbnails", f"{asset.asset_id}.png")
            with open(os.path.join(self.root, thumb_rel), "wb") as fh:
                fh.write(thumbnail_png)
        self.entries[asset.asset_id] = CatalogEntry(
            asset_id=asset.asset_id,
            layer_id=asset.layer_id,
            category=asset.category,
            file=filename,
            thumbnail=thumb_rel,
        )
        self._write_index()

    def _write_index(self):
        data = {
            "format_version": FORMAT_VERSION,
            "assets": [
                {
                    "id": e.asset_id,
                    "layer": int(e.layer_id),
                    "category": e.category,
                    "file": e.file,
                    "thumbnail": e.thumbnail,
                }
                for _, e in sorted(self.entries.items())
            ],
        }
        tmp = os.path.join(self.root, CATALOG_INDEX + ".tmp")
        with open(tmp, "w", encoding="utf-8") as fh:
            json.dump(data, fh, indent=2, sort_keys=True)
            fh.write("\n")
        os.replace(tmp, os.path.join(self.root, CATALOG_INDEX))
