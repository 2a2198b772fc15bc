"""Canonical anchor-point extraction: isosurface sampling, per-part farthest
point sampling, skinning-weight initialization and forward posing."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kinematics as kin
from .errors import ArgumentError, ContractError, DimensionError, EmptySurfaceError

DISTANCE_CLAMP = 1e-4  # avoids the 1/sqrt(d) singularity on the bone axis


@dataclass
class CanonicalPointCloud:
    """Learnable anchor points: positions, weight logits, features, RBF scales.

    Points are stored part-contiguous: part j owns rows
    [j*points_per_part, (j+1)*points_per_part).  `rbf_log_scales` stores
    log(beta), keeping beta positive under gradient updates."""

    positions: np.ndarray  # (P, 3)
    part_ids: np.ndarray  # (P,) int
    weight_logits: np.ndarray  # (P, J)
    features: np.ndarray  # (P, F_p)
    rbf_log_scales: np.ndarray  # (P,)
    points_per_part: int

    def __post_init__(self):
        p = self.positions.shape[0]
        if self.part_ids.shape != (p,):
            raise DimensionError("part_ids length mismatch")
        if self.weight_logits.shape[0] != p or self.features.shape[0] != p:
            raise DimensionError("per-point field length mismatch")
        if self.rbf_log_scales.shape != (p,):
            raise DimensionError("rbf_log_scales length mismatch")
        n_parts = self.weight_logits.shape[1]
        if self.part_ids.min() < 0 or self.part_ids.max() >= n_parts:
            raise ContractError("part ids out of range")
        counts = np.bincount(self.part_ids, minlength=n_parts)
        if not np.all(counts == self.points_per_part):
            raise ContractError(
                f"every part must own exactly {self.points_per_part} points"
            )

    @property
    def n_points(self) -> int:
        return self.positions.shape[0]

    @property
    def n_parts(self) -> int:
        return self.weight_logits.shape[1]

    @property
    def rbf_scales(self) -> np.ndarray:
        return np.exp(self.rbf_log_scales)

    def weights(self) -> np.ndarray:
        """Softmax-normalized skinning weights, (P, J) rows on the simplex."""
        z = self.weight_logits - self.weight_logits.max(axis=1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=1, keepdims=True)


@dataclass
class PosedPointCloud:
    """Anchor points pushed through Eq.-style forward deformation for one pose."""

    positions: np.ndarray  # (P, 3)
    part_ids: np.ndarray  # (P,)
    pose: kin.Pose
    part_rotations: np.ndarray  # (J, 3, 3), rotations used for delta offsets

    @property
    def n_points(self) -> int:
        return self.positions.shape[0]


def farthest_point_sample(
    candidates: np.ndarray, count: int, start: int = 0
) -> np.ndarray:
    """Greedy max-min selection of `count` indices; first pick is `start`."""
    pts = np.asarray(candidates, dtype=np.float64).reshape(-1, 3)
    n = pts.shape[0]
    if n == 0:
        raise ArgumentError("no candidates to sample from")
    if count > n:
        raise ArgumentError(f"cannot sample {count} of {n} candidates")
    if not 0 <= start < n:
        raise ArgumentError("start index out of range")
    chosen = np.empty(count, dtype=np.int64)
    chosen[0] = start
    dist = np.linalg.norm(pts - pts[start], axis=1)
    for i in range(1, count):
        nxt = int(np.argmax(dist))
        chosen[i] = nxt
        dist = np.minimum(dist, np.linalg.norm(pts - pts[nxt], axis=1))
    return chosen


def extract_isosurface_points(
    sdf,
    resolution: int,
    bounds: tuple[np.ndarray, np.ndarray],
    level: float = 0.0,
) -> np.ndarray:
    """Vertices of the level set of `sdf` via marching cubes on a regular grid.

    `sdf` is a callable mapping (N, 3) -> (N,); bounds are (lo, hi) corners.
    Raises EmptySurfaceError when the grid never crosses the level."""
    from skimage.measure import marching_cubes

    lo = np.asarray(bounds[0], dtype=np.float64)
    hi = np.asarray(bounds[1], dtype=np.float64)
    axes = [np.linspace(lo[d], hi[d], resolution) for d in range(3)]
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)
    values = np.asarray(sdf(grid), dtype=np.float64)
    if not np.all(np.isfinite(values)):
        raise ContractError("SDF not finite on the sampling grid")
    if values.min() > level or values.max() < level:
        raise EmptySurfaceError("no sign change on the grid")
    volume = values.reshape(resolution, resolution, resolution)
    spacing = (hi - lo) / (resolution - 1)
    verts, _, _, _ = marching_cubes(volume, level=level, spacing=tuple(spacing))
    return verts + lo


def init_lbs_logits(p: np.ndarray, skeleton: kin.Skeleton) -> np.ndarray:
    """Pre-normalization skinning weights w0_j = 1/sqrt(max(d_j, eps)),
    returned as logits log(w0) for later softmax normalization."""
    d = np.array(
        [kin.joint_distance(p, j, skeleton) for j in range(skeleton.n_joints)]
    )
    w0 = 1.0 / np.sqrt(np.maximum(d, DISTANCE_CLAMP))
    return np.log(w0)


def init_lbs_logits_batch(points: np.ndarray, skeleton: kin.Skeleton) -> np.ndarray:
    d = kin.joint_distances(points, skeleton)
    return np.log(1.0 / np.sqrt(np.maximum(d, DISTANCE_CLAMP)))


def mean_nn_spacing(positions: np.ndarray) -> float:
    """Mean nearest-neighbor distance over the cloud (RBF scale init)."""
    pts = np.asarray(positions)
    d2 = ((pts[:, None, :] - pts[None, :, :]) ** 2).sum(-1)
    np.fill_diagonal(d2, np.inf)
    return float(np.sqrt(d2.min(axis=1)).mean())


def build_cloud(
    surface_points: np.ndarray,
    skeleton: kin.Skeleton,
    points_per_part: int,
    feature_dim: int,
    rng: np.random.Generator,
    feature_std: float = 0.1,
) -> CanonicalPointCloud:
    """Part assignment by nearest bone, FPS per part, weight/feature/scale init."""
    pts = np.asarray(surface_points, dtype=np.float64).reshape(-1, 3)
    dists = kin.joint_distances(pts, skeleton)
    assignment = dists.argmin(axis=1)
    j = skeleton.n_joints
    positions = []
    part_ids = []
    for part in range(j):
        cand = pts[assignment == part]
        if cand.shape[0] < points_per_part:
            raise ArgumentError(
                f"part {part} has {cand.shape[0]} surface candidates, "
                f"needs {points_per_part}; raise the grid resolution"
            )
        picks = farthest_point_sample(cand, points_per_part, start=0)
        positions.append(cand[picks])
        part_ids.append(np.full(points_per_part, part, dtype=np.int64))
    positions = np.concatenate(positions, axis=0)
    part_ids = np.concatenate(part_ids)
    logits = init_lbs_logits_batch(positions, skeleton)
    features = rng.normal(0.0, feature_std, size=(positions.shape[0], feature_dim))
    beta0 = mean_nn_spacing(positions) ** 2
    log_scales = np.full(positions.shape[0], np.log(beta0))
    return CanonicalPointCloud(
        positions=positions,
        part_ids=part_ids,
        weight_logits=logits,
        features=features,
        rbf_log_scales=log_scales,
        points_per_part=points_per_part,
    )


def pose_points(
    cloud: CanonicalPointCloud,
    pose: kin.Pose,
    transforms: kin.RigidTransformSet,
    deltas: np.ndarray,
) -> PosedPointCloud:
    """Forward deformation: LBS blend of canonical points plus the rotated
    non-linear offsets, p_o = sum_j w_j S_j(p) + R_part(delta).

    `transforms` must be the rest-relative skinning set so the rest pose with
    zero deltas is the identity."""
    deltas = np.asarray(deltas, dtype=np.float64)
    if deltas.shape != (cloud.n_points, 3):
        raise DimensionError("deltas must be (P, 3)")
    w = cloud.weights()
    posed = kin.blend_points(cloud.positions, w, transforms)
    rot = transforms.rotations[cloud.part_ids]
    posed = posed + np.einsum("nab,nb->na", rot, deltas)
    return PosedPointCloud(
        positions=posed,
        part_ids=cloud.part_ids,
        pose=pose,
        part_rotations=transforms.rotations,
    )
