"""File formats for rendered output and hand-editable fixtures.

Images go out as 8-bit PNG (RGB), label maps as indexed PNG carrying the
palette, depth maps as little-endian float32 PFM. Poses and cameras are
plain text so test fixtures stay hand-editable. All writes are atomic
(temp file + rename).
"""

from __future__ import annotations

import io
import os

import numpy as np
from PIL import Image

from .core import CameraKind, CameraModel, DEFAULT_PALETTE, LayerId, PoseParams


def _atomic_write(path, data: bytes):
    path = os.fspath(path)
    tmp = path + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


def png_bytes(rgb) -> bytes:
    """Encode an (H, W, 3) float image in [0, 1] as PNG bytes."""
    arr = (np.clip(np.asarray(rgb, dtype=np.float64), 0.0, 1.0) * 255.0).round()
    img = Image.fromarray(arr.astype(np.uint8))
    buf = io.BytesIO()
    img.save(buf, format="PNG")
    return buf.getvalue()


def write_png(path, rgb):
    _atomic_write(path, png_bytes(rgb))


def read_png(path):
    with Image.open(path) as img:
        return np.asarray(img.convert("RGB"), dtype=np.float64) / 255.0


def label_png_bytes(labels, palette=None) -> bytes:
    """Indexed PNG with the layer palette embedded."""
    palette = palette if palette is not None else DEFAULT_PALETTE
    table = np.zeros((256, 3), dtype=np.uint8)
    for lid, color in palette.items():
        table[int(lid)] = (np.asarray(color) * 255.0).round().astype(np.uint8)
    img = Image.fromarray(np.asarray(labels, dtype=np.uint8), mode="P")
    img.putpalette(table.reshape(-1).tolist())
    buf = io.BytesIO()
    img.save(buf, format="PNG")
    return buf.getvalue()


def write_label_png(path, labels, palette=None):
    _atomic_write(path, label_png_bytes(labels, palette))


def read_label_png(path):
    with Image.open(path) as img:
        if img.mode != "P":
            raise ValueError("label maps must be indexed PNGs")
        return np.asarray(img, dtype=np.uint8)


def pfm_bytes(values) -> bytes:
    """Single-channel PFM, little-endian, rows bottom-to-top."""
    arr = np.asarray(values, dtype=np.float32)
    if arr.ndim != 2:
        raise ValueError("PFM export expects a 2D array")
    h, w = arr.shape
    header = f"Pf\n{w} {h}\n-1.0\n".encode("ascii")
    return header + arr[::-1].astype("<f4").tobytes()


def write_pfm(path, values):
    _atomic_write(path, pfm_bytes(values))


def read_pfm(path):
    with open(path, "rb") as fh:
        if fh.readline().strip() != b"Pf":
            raise ValueError("only single-channel PFM is supported")
        w, h = (int(v) for v in fh.readline().split())
        scale = float(fh.readline())
        dtype = "<f4" if scale < 0 else ">f4"
        data = np.frombuffer(fh.read(w * h * 4), dtype=dtype)
    return data.reshape(h, w)[::-1].astype(np.float64)


# --- pose text format ---------------------------------------------------------

def pose_to_text(pose: PoseParams) -> str:
    lines = [f"joints {pose.joint_count}"]
    for row in pose.joint_rotations:
        lines.append(" ".join(repr(float(v)) for v in row))
    lines.append(
        "global_orientation " + " ".join(repr(float(v)) for v in pose.global_orientation)
    )
    lines.append(
        "global_translation " + " ".join(repr(float(v)) for v in pose.global_translation)
    )
    return "\n".join(lines) + "\n"


def pose_from_text(text: str) -> PoseParams:
    lines = [ln.strip() for ln in text.splitlines() if ln.strip() and
             not ln.strip().startswith("#")]
    if not lines or not lines[0].startswith("joints"):
        raise ValueError("pose file must start with 'joints <count>'")
    j = int(lines[0].split()[1])
    if len(lines) < j + 3:
        raise ValueError("pose file is missing rows")
    rot = np.array([[float(v) for v in lines[1 + i].split()] for i in range(j)])
    go = gt = np.zeros(3)
    for ln in lines[1 + j:]:
        key, *vals = ln.split()
        if key == "global_orientation":
            go = np.array([float(v) for v in vals])
        elif key == "global_translation":
            gt = np.array([float(v) for v in vals])
        else:
            raise ValueError(f"unknown pose field {key!r}")
    return PoseParams(joint_rotations=rot, global_orientation=go,
                      global_translation=gt)


def write_pose(path, pose: PoseParams):
    _atomic_write(path, pose_to_text(pose).encode("utf-8"))


def read_pose(path) -> PoseParams:
    with open(path, "r", encoding="utf-8") as fh:
        return pose_from_text(fh.read())


def pose_sequence_to_text(poses) -> str:
    return "\n".join(pose_to_text(p) for p in poses)


def pose_sequence_from_text(text: str):
    blocks, current = [], []
    for ln in text.splitlines():
        if ln.strip().startswith("joints") and current:
            blocks.append("\n".join(current))
            current = []
        if ln.strip():
            current.append(ln)
    if current:
        blocks.append("\n".join(current))
    return [pose_from_text(b) for b in blocks]


def write_pose_sequence(path, poses):
    _atomic_write(path, pose_sequence_to_text(poses).encode("utf-8"))


def read_pose_sequence(path):
    with open(path, "r", encoding="utf-8") as fh:
        return pose_sequence_from_text(fh.read())


# --- camera text format -------------------------------------------------------

def camera_to_text(camera: CameraModel) -> str:
    lines = [
        f"kind {camera.kind.value}",
        f"image_size {camera.width} {camera.height}",
        "intrinsics " + " ".join(repr(float(v)) for v in camera.intrinsics),
        f"near {camera.near!r}",
    ]
    for row in camera.rotation:
        lines.append("rotation " + " ".join(repr(float(v)) for v in row))
    lines.append(
        "translation " + " ".join(repr(float(v)) for v in camera.translation)
    )
    return "\n".join(lines) + "\n"


def camera_from_text(text: str) -> CameraModel:
    """Parse a camera file; either an explicit extrinsics form or the
    compact orbit form (kind/image_size plus orbit+target lines)."""
    fields = {}
    rot_rows = []
    for ln in text.splitlines():
        ln = ln.strip()
        if not ln or ln.startswith("#"):
            continue
        key, *vals = ln.split()
        if key == "rotation":
            rot_rows.append([float(v) for v in vals])
        else:
            fields[key] = vals
    kind = CameraKind(fields.get("kind", ["perspective"])[0])
    w, h = (int(v) for v in fields["image_size"])
    if "orbit" in fields:
        az, el, dist = (float(v) for v in fields["orbit"][:3])
        fov = float(fields["orbit"][3]) if len(fields["orbit"]) > 3 else 40.0
        target = np.array([float(v) for v in fields.get("target", ["0", "0", "0"])])
        return CameraModel.orbit(target, az, el, dist, (w, h), fov_deg=fov, kind=kind)
    intr = np.array([float(v) for v in fields["intrinsics"]])
    trans = np.array([float(v) for v in fields["translation"]])
    near = float(fields.get("near", ["0.01"])[0])
    return CameraModel(kind=kind, rotation=np.array(rot_rows), translation=trans,
                       intrinsics=intr, image_size=(w, h), near=near)


def write_camera(path, camera: CameraModel):
    _atomic_write(path, camera_to_text(camera).encode("utf-8"))


def read_camera(path) -> CameraModel:
    with open(path, "r", encoding="utf-8") as fh:
        return camera_from_text(fh.read())


def depth_layer_name(layer_id):
    return LayerId(layer_id).name.lower()
