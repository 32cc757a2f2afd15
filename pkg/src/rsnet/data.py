"""Pose samples, JSONL datasets, normalization, flipping, and a synthetic benchmark.

The synthetic benchmark articulates a fixed-bone-length kinematic tree with
random joint angles and projects it through pinhole cameras. Camera space is
x right, y down, z forward (away from the camera); millimetres throughout.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .graph import SkeletonTopology

DEFAULT_IMAGE_SIZE = (1000, 1000)


@dataclass
class PoseSample:
    id: str
    pose2d: np.ndarray
    pose3d: np.ndarray
    root_offset: np.ndarray | None = None  # camera-space root position, mm
    camera: int | None = None

    def __post_init__(self):
        self.pose2d = np.asarray(self.pose2d, dtype=np.float64)
        self.pose3d = np.asarray(self.pose3d, dtype=np.float64)
        if self.root_offset is not None:
            self.root_offset = np.asarray(self.root_offset, dtype=np.float64)
        n = len(self.pose2d)
        if self.pose2d.shape != (n, 2) or self.pose3d.shape != (n, 3):
            raise ValueError(f"sample {self.id}: bad shapes {self.pose2d.shape}, {self.pose3d.shape}")
        if not (np.all(np.isfinite(self.pose2d)) and np.all(np.isfinite(self.pose3d))):
            raise ValueError(f"sample {self.id}: non-finite coordinates")

    @property
    def num_joints(self) -> int:
        return len(self.pose2d)

    def to_dict(self) -> dict:
        d = {"id": self.id, "pose2d": self.pose2d.tolist(), "pose3d": self.pose3d.tolist()}
        if self.root_offset is not None:
            d["root_offset"] = self.root_offset.tolist()
        if self.camera is not None:
            d["camera"] = self.camera
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "PoseSample":
        return cls(d["id"], d["pose2d"], d["pose3d"], d.get("root_offset"), d.get("camera"))


def write_jsonl(samples: Iterable[PoseSample], path: str | Path) -> None:
    with open(path, "w") as f:
        for s in samples:
            f.write(json.dumps(s.to_dict()) + "\n")


def read_jsonl(path: str | Path) -> list[PoseSample]:
    out = []
    with open(path) as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                out.append(PoseSample.from_dict(json.loads(line)))
            except (KeyError, ValueError) as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from None
    return out


def stack(samples: Sequence[PoseSample]) -> tuple[np.ndarray, np.ndarray]:
    """``(X, Y)`` arrays shaped ``(S, N, 2)`` and ``(S, N, 3)``."""
    if not samples:
        raise ValueError("empty dataset")
    return (np.stack([s.pose2d for s in samples]), np.stack([s.pose3d for s in samples]))


# ---------------------------------------------------------------- normalization

def normalize_2d(px: np.ndarray, image_size: tuple[int, int]) -> np.ndarray:
    """Centre on the image and divide by half the larger side, so the long
    image axis maps to [-1, 1]."""
    w, h = image_size
    if w <= 0 or h <= 0:
        raise ValueError(f"image size must be positive, got {image_size}")
    half = max(w, h) / 2.0
    return (np.asarray(px, dtype=np.float64) - np.array([w / 2.0, h / 2.0])) / half


def denormalize_2d(uv: np.ndarray, image_size: tuple[int, int]) -> np.ndarray:
    w, h = image_size
    return np.asarray(uv) * (max(w, h) / 2.0) + np.array([w / 2.0, h / 2.0])


def normalize(sample: PoseSample, image_size: tuple[int, int], root: int = 0) -> PoseSample:
    """Map a raw sample (pixel 2-D, camera-space 3-D) to model inputs/targets."""
    offset = sample.pose3d[root].copy()
    return PoseSample(sample.id, normalize_2d(sample.pose2d, image_size),
                      sample.pose3d - offset, offset, sample.camera)


def flip_pose(sample: PoseSample, flip_pairs: Sequence[tuple[int, int]]) -> PoseSample:
    perm = np.arange(sample.num_joints)
    for l, r in flip_pairs:
        perm[l], perm[r] = r, l
    sign2, sign3 = np.array([-1.0, 1.0]), np.array([-1.0, 1.0, 1.0])
    offset = None if sample.root_offset is None else sample.root_offset * sign3
    return PoseSample(sample.id, sample.pose2d[perm] * sign2, sample.pose3d[perm] * sign3,
                      offset, sample.camera)


def flip_arrays(X: np.ndarray, Y: np.ndarray, perm: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Batched flip of ``(B, N, 2)`` / ``(B, N, 3)`` arrays."""
    return X[:, perm] * np.array([-1.0, 1.0]), Y[:, perm] * np.array([-1.0, 1.0, 1.0])


# ----------------------------------------------------------------------- camera

def rot_x(deg: float) -> np.ndarray:
    a = math.radians(deg)
    c, s = math.cos(a), math.sin(a)
    return np.array([[1.0, 0, 0], [0, c, -s], [0, s, c]])


def rot_y(deg: float) -> np.ndarray:
    a = math.radians(deg)
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, 0, s], [0, 1.0, 0], [-s, 0, c]])


def rot_z(deg: float) -> np.ndarray:
    a = math.radians(deg)
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, -s, 0], [s, c, 0], [0, 0, 1.0]])


@dataclass(frozen=True)
class CameraModel:
    focal: float
    principal: tuple[float, float]
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        R = np.asarray(self.rotation, dtype=np.float64)
        if R.shape != (3, 3) or not np.allclose(R @ R.T, np.eye(3), atol=1e-9) \
                or abs(np.linalg.det(R) - 1.0) > 1e-9:
            raise ValueError("camera rotation must be orthonormal with determinant +1")

    def to_camera(self, world: np.ndarray) -> np.ndarray:
        return world @ np.asarray(self.rotation).T + np.asarray(self.translation)

    def project(self, cam: np.ndarray) -> np.ndarray:
        """Pinhole projection of camera-space points to pixels."""
        cam = np.asarray(cam, dtype=np.float64)
        if np.any(cam[..., 2] <= 0):
            raise ValueError("point behind the camera")
        return self.focal * cam[..., :2] / cam[..., 2:3] + np.asarray(self.principal)


def default_cameras(image_size=DEFAULT_IMAGE_SIZE, distance_mm: float = 4500.0,
                    focal: float = 1150.0) -> list[CameraModel]:
    """Four cameras circling the subject at the same height, slightly tilted down."""
    c = (image_size[0] / 2.0, image_size[1] / 2.0)
    cams = []
    for yaw in (-45.0, 45.0, 135.0, -135.0):
        R = rot_x(-8.0) @ rot_y(yaw)
        cams.append(CameraModel(focal, c, R, np.array([0.0, 0.0, distance_mm])))
    return cams


# ------------------------------------------------------------------ bone table

@dataclass(frozen=True)
class BoneTable:
    parents: dict            # child -> parent
    lengths: dict            # child -> length_mm
    directions: dict         # child -> unit rest direction (body frame)
    angle_ranges: dict       # "root" / child -> {"x": [lo, hi], "y": ..., "z": ...} degrees

    @classmethod
    def from_dict(cls, d: dict) -> "BoneTable":
        parents, lengths, dirs = {}, {}, {}
        for b in d["bones"]:
            c = int(b["child"])
            parents[c] = int(b["parent"])
            lengths[c] = float(b["length_mm"])
            v = np.asarray(b.get("direction", [0.0, 1.0, 0.0]), dtype=np.float64)
            dirs[c] = v / np.linalg.norm(v)
        ranges = {k: {ax: tuple(r) for ax, r in v.items()} for k, v in d.get("angle_ranges", {}).items()}
        return cls(parents, lengths, dirs, ranges)

    def order(self, root: int) -> list[int]:
        """Children in an order where every parent precedes its child."""
        done, out = {root}, []
        pending = list(self.parents)
        while pending:
            progressed = False
            for c in list(pending):
                if self.parents[c] in done:
                    out.append(c)
                    done.add(c)
                    pending.remove(c)
                    progressed = True
            if not progressed:
                raise ValueError(f"bone table is not a tree rooted at {root}: {pending}")
        return out


def load_bone_table(path_or_name: str | Path) -> BoneTable:
    name = str(path_or_name)
    if name in ("h36m17", "h36m16"):
        text = resources.files("rsnet.assets").joinpath(f"{name}_bones.json").read_text()
    else:
        text = Path(path_or_name).read_text()
    return BoneTable.from_dict(json.loads(text))


def _uniform(rng, rng_range) -> float:
    lo, hi = rng_range
    return float(rng.uniform(lo, hi)) if hi > lo else float(lo)


def articulate(table: BoneTable, root: int, num_joints: int, rng: np.random.Generator) -> np.ndarray:
    """One random pose in the body frame with the root at the origin."""
    rot = {root: np.eye(3)}
    rr = table.angle_ranges.get("root", {})
    rot[root] = rot_y(_uniform(rng, rr.get("y", (0, 0)))) @ rot_x(_uniform(rng, rr.get("x", (0, 0))))
    pos = np.zeros((num_joints, 3))
    for c in table.order(root):
        p = table.parents[c]
        ar = table.angle_ranges.get(str(c), {})
        local = rot_x(_uniform(rng, ar.get("x", (0, 0)))) @ rot_z(_uniform(rng, ar.get("z", (0, 0))))
        rot[c] = rot[p] @ local
        pos[c] = pos[p] + table.lengths[c] * (rot[c] @ table.directions[c])
    return pos


def synth_generate(skeleton: SkeletonTopology, count: int, seed: int,
                   cameras: Sequence[CameraModel] | None = None,
                   bones: BoneTable | None = None, image_size=DEFAULT_IMAGE_SIZE,
                   root_jitter_mm: float = 300.0, max_retries: int = 20) -> list[PoseSample]:
    """Generate ``count`` normalized 2-D/3-D pairs; deterministic in ``seed``."""
    if bones is None:
        name = {17: "h36m17", 16: "h36m16"}.get(skeleton.num_joints)
        if name is None:
            raise ValueError("no bundled bone table for this skeleton; pass bones=")
        bones = load_bone_table(name)
    cameras = list(cameras) if cameras is not None else default_cameras(image_size)
    rng = np.random.default_rng(seed)
    n, root = skeleton.num_joints, skeleton.root
    samples = []
    for idx in range(count):
        for _ in range(max_retries):
            body = articulate(bones, root, n, rng)
            shift = rng.uniform(-root_jitter_mm, root_jitter_mm, size=3) * np.array([1.0, 0.0, 1.0])
            cam_id = int(rng.integers(len(cameras)))
            cam = cameras[cam_id]
            pts = cam.to_camera(body + shift)
            if np.all(pts[:, 2] > 1.0):
                break
        else:
            raise RuntimeError(f"sample {idx}: joints behind the camera after {max_retries} tries")
        raw = PoseSample(f"synth-{seed}-{idx:06d}", cam.project(pts), pts, camera=cam_id)
        samples.append(normalize(raw, image_size, root))
    return samples


def bone_lengths(pose3d: np.ndarray, table: BoneTable) -> dict:
    return {c: float(np.linalg.norm(pose3d[c] - pose3d[p])) for c, p in table.parents.items()}
