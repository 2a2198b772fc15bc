"""Skeleton representation, forward kinematics, rigid transforms and bone
geometry queries.

Two flavours of per-joint rigid transform show up:

  * the kinematic chain ``M_j`` (joint frame -> world), produced by
    :func:`forward_kinematics`; at rest it is a pure translation to the
    joint's rest position;
  * the rest-relative skinning set ``S_j = M_j . translate(-rest_j)``,
    produced by :func:`skinning_transforms`; at rest it is the identity, so
    blending with it leaves canonical points fixed.

Both are plain :class:`RigidTransformSet` values; the blending and
joint-space operations are generic over whichever set is passed in.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ArgumentError, ContractError, DimensionError

_ORTHO_TOL = 1e-6
_LEAF_STUB_FRACTION = 0.35  # virtual bone for leaf joints, see joint_segments


def rodrigues(axis_angle: np.ndarray) -> np.ndarray:
    """Axis-angle 3-vectors -> rotation matrices; the zero vector maps to I.

    Accepts (3,) or (J, 3); returns (3, 3) or (J, 3, 3)."""
    aa = np.asarray(axis_angle, dtype=np.float64)
    single = aa.ndim == 1
    aa = np.atleast_2d(aa)
    theta = np.linalg.norm(aa, axis=-1, keepdims=True)
    small = theta[..., 0] < 1e-12
    axis = np.where(theta > 1e-12, aa / np.maximum(theta, 1e-12), 0.0)
    x, y, z = axis[:, 0], axis[:, 1], axis[:, 2]
    zeros = np.zeros_like(x)
    k = np.stack(
        [zeros, -z, y, z, zeros, -x, -y, x, zeros], axis=-1
    ).reshape(-1, 3, 3)
    t = theta[..., None]
    eye = np.eye(3)[None]
    r = eye + np.sin(t) * k + (1.0 - np.cos(t)) * (k @ k)
    r[small] = np.eye(3)
    return r[0] if single else r


@dataclass(frozen=True)
class Skeleton:
    """Joint hierarchy with rest offsets; bones are derived joint->child segments."""

    parents: tuple[int, ...]
    offsets: np.ndarray  # (J, 3) rest offset from parent (root: world position)

    rest_positions: np.ndarray = field(init=False, repr=False)
    bones: tuple[tuple[int, int], ...] = field(init=False, repr=False)

    def __post_init__(self):
        offsets = np.asarray(self.offsets, dtype=np.float64).reshape(-1, 3)
        object.__setattr__(self, "offsets", offsets)
        j = len(self.parents)
        if offsets.shape[0] != j:
            raise DimensionError("parents and offsets length mismatch")
        if not np.all(np.isfinite(offsets)):
            raise ContractError("rest offsets must be finite")
        roots = [i for i, p in enumerate(self.parents) if p < 0]
        if roots != [0]:
            raise ContractError("exactly one root required, at index 0")
        for i, p in enumerate(self.parents):
            if i > 0 and not (0 <= p < i):
                raise ContractError(
                    f"parent index {p} of joint {i} violates topological order"
                )
        rest = np.zeros((j, 3))
        for i, p in enumerate(self.parents):
            rest[i] = offsets[i] if p < 0 else rest[p] + offsets[i]
        object.__setattr__(self, "rest_positions", rest)
        bones = tuple(
            (p, c) for c, p in enumerate(self.parents) if p >= 0
        )
        object.__setattr__(self, "bones", bones)

    @property
    def n_joints(self) -> int:
        return len(self.parents)

    @property
    def n_bones(self) -> int:
        return len(self.bones)

    def children(self, j: int) -> list[int]:
        return [c for c, p in enumerate(self.parents) if p == j]

    def joint_segments(self, j: int) -> list[tuple[np.ndarray, np.ndarray]]:
        """Rest-space segments owned by joint j (used for part assignment and
        skinning-weight init).

        Non-leaf joints own the segments to each child.  A leaf joint owns a
        short virtual stub continuing past itself in its parent-bone
        direction, so surface points on end caps get assigned to the leaf."""
        kids = self.children(j)
        rj = self.rest_positions[j]
        if kids:
            return [(rj, self.rest_positions[c]) for c in kids]
        p = self.parents[j]
        d = rj - self.rest_positions[p]
        n = np.linalg.norm(d)
        stub = d / n * (_LEAF_STUB_FRACTION * n) if n > 0 else np.zeros(3)
        return [(rj, rj + stub)]


def _segment_distance(p: np.ndarray, a: np.ndarray, b: np.ndarray) -> float:
    ab = b - a
    denom = float(ab @ ab)
    if denom < 1e-18:
        return float(np.linalg.norm(p - a))
    t = np.clip(float((p - a) @ ab) / denom, 0.0, 1.0)
    return float(np.linalg.norm(p - (a + t * ab)))


def bone_distance(p: np.ndarray, bone_index: int, skeleton: Skeleton) -> float:
    """Point-to-segment distance for a derived bone, in rest space."""
    if not 0 <= bone_index < skeleton.n_bones:
        raise ArgumentError(f"bone index {bone_index} out of range")
    pa, ch = skeleton.bones[bone_index]
    return _segment_distance(
        np.asarray(p, dtype=np.float64),
        skeleton.rest_positions[pa],
        skeleton.rest_positions[ch],
    )


def joint_distance(p: np.ndarray, j: int, skeleton: Skeleton) -> float:
    """Distance from p to the bone geometry owned by joint j (min over its
    segments; leaf joints use their virtual stub)."""
    if not 0 <= j < skeleton.n_joints:
        raise ArgumentError(f"joint index {j} out of range")
    p = np.asarray(p, dtype=np.float64)
    return min(_segment_distance(p, a, b) for a, b in skeleton.joint_segments(j))


def joint_distances(points: np.ndarray, skeleton: Skeleton) -> np.ndarray:
    """Vectorized joint_distance for (N, 3) points -> (N, J)."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    out = np.empty((pts.shape[0], skeleton.n_joints))
    for j in range(skeleton.n_joints):
        best = None
        for a, b in skeleton.joint_segments(j):
            ab = b - a
            denom = float(ab @ ab)
            if denom < 1e-18:
                d = np.linalg.norm(pts - a, axis=-1)
            else:
                t = np.clip((pts - a) @ ab / denom, 0.0, 1.0)
                d = np.linalg.norm(pts - (a + t[:, None] * ab), axis=-1)
            best = d if best is None else np.minimum(best, d)
        out[:, j] = best
    return out


@dataclass(frozen=True)
class Pose:
    """Per-joint axis-angle rotations plus a frame index."""

    rotations: np.ndarray  # (J, 3) radians
    frame: int = 0

    def __post_init__(self):
        rot = np.asarray(self.rotations, dtype=np.float64).reshape(-1, 3)
        object.__setattr__(self, "rotations", rot)
        if not np.all(np.isfinite(rot)):
            raise ContractError("pose rotations must be finite")
        if self.frame < 0:
            raise ContractError("frame index must be non-negative")

    @property
    def n_joints(self) -> int:
        return self.rotations.shape[0]


class RigidTransformSet:
    """Per-joint rotation matrices and translations; validated orthonormal."""

    def __init__(self, rotations: np.ndarray, translations: np.ndarray):
        r = np.asarray(rotations, dtype=np.float64)
        t = np.asarray(translations, dtype=np.float64)
        if r.ndim != 3 or r.shape[1:] != (3, 3) or t.shape != (r.shape[0], 3):
            raise DimensionError("expected rotations (J,3,3), translations (J,3)")
        err = np.abs(np.einsum("jab,jac->jbc", r, r) - np.eye(3)).max()
        if err > _ORTHO_TOL:
            raise ContractError(f"rotation not orthonormal (err={err:.2e})")
        if np.abs(np.linalg.det(r) - 1.0).max() > _ORTHO_TOL:
            raise ContractError("rotation determinant != +1")
        self.rotations = r
        self.translations = t

    def __len__(self) -> int:
        return self.rotations.shape[0]

    def apply(self, j: int, points: np.ndarray) -> np.ndarray:
        """T_j applied to one point (3,) or many (N, 3)."""
        pts = np.asarray(points, dtype=np.float64)
        return pts @ self.rotations[j].T + self.translations[j]

    def inverse_apply(self, j: int, points: np.ndarray) -> np.ndarray:
        pts = np.asarray(points, dtype=np.float64)
        return (pts - self.translations[j]) @ self.rotations[j]


def forward_kinematics(skeleton: Skeleton, pose: Pose) -> RigidTransformSet:
    """Accumulate the joint-frame chain: T_child = T_parent . local(child).

    With all-zero rotations each T_j is the pure translation to the joint's
    rest position."""
    if pose.n_joints != skeleton.n_joints:
        raise DimensionError(
            f"pose has {pose.n_joints} joints, skeleton has {skeleton.n_joints}"
        )
    local = rodrigues(pose.rotations)
    j = skeleton.n_joints
    rot = np.empty((j, 3, 3))
    trans = np.empty((j, 3))
    for i in range(j):
        p = skeleton.parents[i]
        if p < 0:
            rot[i] = local[i]
            trans[i] = skeleton.offsets[i]
        else:
            rot[i] = rot[p] @ local[i]
            trans[i] = rot[p] @ skeleton.offsets[i] + trans[p]
    return RigidTransformSet(rot, trans)


def skinning_transforms(skeleton: Skeleton, chain: RigidTransformSet) -> RigidTransformSet:
    """Rest-relative transforms S_j = M_j . translate(-rest_j).

    These map canonical (rest) space to the posed world; at rest pose every
    S_j is the identity, so LBS blending is exact there."""
    if len(chain) != skeleton.n_joints:
        raise DimensionError("transform count != joint count")
    rot = chain.rotations
    trans = chain.translations - np.einsum(
        "jab,jb->ja", rot, skeleton.rest_positions
    )
    return RigidTransformSet(rot, trans)


def to_joint_space(q_obs: np.ndarray, j: int, transforms: RigidTransformSet) -> np.ndarray:
    """T_j^{-1} q: map an observation-space point into joint-relative space."""
    if not 0 <= j < len(transforms):
        raise ArgumentError(f"joint index {j} out of range")
    return transforms.inverse_apply(j, q_obs)


def lbs_transform(
    p: np.ndarray, weights: np.ndarray, transforms: RigidTransformSet
) -> np.ndarray:
    """Blend transformed points: sum_j w_j (R_j p + t_j).

    Weights must be a simplex (non-negative, sum 1 within 1e-6)."""
    w = np.asarray(weights, dtype=np.float64)
    if w.shape != (len(transforms),):
        raise DimensionError("weight count != transform count")
    if np.any(w < -1e-9) or abs(w.sum() - 1.0) > 1e-6:
        raise ContractError("weights must be non-negative and sum to 1")
    p = np.asarray(p, dtype=np.float64)
    moved = np.einsum("jab,b->ja", transforms.rotations, p) + transforms.translations
    return w @ moved


def blend_points(
    points: np.ndarray, weights: np.ndarray, transforms: RigidTransformSet
) -> np.ndarray:
    """Vectorized LBS for (N, 3) points with (N, J) weight rows."""
    moved = (
        np.einsum("jab,nb->nja", transforms.rotations, points)
        + transforms.translations[None]
    )
    return np.einsum("nj,nja->na", weights, moved)


# -- plain-text serialization -------------------------------------------------

def skeleton_to_text(skeleton: Skeleton) -> str:
    """One line per joint: `id parent ox oy oz`."""
    lines = []
    for i, p in enumerate(skeleton.parents):
        o = skeleton.offsets[i]
        lines.append(f"{i} {p} {o[0]:.9g} {o[1]:.9g} {o[2]:.9g}")
    return "\n".join(lines) + "\n"


def skeleton_from_text(text: str) -> Skeleton:
    parents = []
    offsets = []
    for line in text.strip().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 5:
            raise ArgumentError(f"bad skeleton line: {line!r}")
        idx, parent = int(parts[0]), int(parts[1])
        if idx != len(parents):
            raise ArgumentError("skeleton lines must be in joint-id order")
        parents.append(parent)
        offsets.append([float(x) for x in parts[2:5]])
    return Skeleton(tuple(parents), np.array(offsets))
