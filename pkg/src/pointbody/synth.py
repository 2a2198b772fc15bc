"""Synthetic articulated capsule character: analytic SDF, sphere-traced
ground-truth rendering with a procedural striped albedo, pose sampling and
image metrics (PSNR/SSIM)."""

from __future__ import annotations

import colorsys
import math
from dataclasses import dataclass, field

import numpy as np

from . import kinematics as kin
from . import render
from .errors import ArgumentError, ContractError, DimensionError

PSNR_CAP_DB = 99.0


@dataclass(frozen=True)
class CapsuleCharacter:
    """Capsules along every skeleton bone plus a stripe/wedge albedo keyed to
    canonical bone coordinates, so texture sticks to the body across poses."""

    skeleton: kin.Skeleton
    radii: np.ndarray  # (n_bones,)
    stripe_band: float = 0.035  # meters along the bone axis
    stripe_wedges: int = 8  # angular subdivisions around the axis
    stripe_contrast: float = 0.45
    palette_seed: int = 7
    light_dir: tuple[float, float, float] = (0.4, 1.0, 0.7)
    ambient: float = 0.35

    def __post_init__(self):
        r = np.asarray(self.radii, dtype=np.float64)
        if r.shape != (self.skeleton.n_bones,):
            raise DimensionError("one radius per bone required")
        if np.any(r <= 0):
            raise ContractError("capsule radii must be positive")
        object.__setattr__(self, "radii", r)

    def base_colors(self) -> np.ndarray:
        """Distinct per-bone base albedo via golden-ratio hue stepping."""
        rng = np.random.default_rng(self.palette_seed)
        h0 = rng.random()
        cols = []
        for i in range(self.skeleton.n_bones):
            h = (h0 + i * 0.61803398875) % 1.0
            cols.append(colorsys.hsv_to_rgb(h, 0.65, 0.95))
        return np.asarray(cols)


def default_character() -> CapsuleCharacter:
    """An 11-joint biped: pelvis, spine, head, two arms, two legs."""
    parents = (-1, 0, 1, 1, 3, 1, 5, 0, 7, 0, 9)
    offsets = np.array(
        [
            [0.0, 0.95, 0.0],  # 0 pelvis (root, world position)
            [0.0, 0.22, 0.0],  # 1 spine
            [0.0, 0.24, 0.0],  # 2 head (leaf)
            [0.16, 0.18, 0.0],  # 3 l_shoulder
            [0.34, 0.0, 0.0],  # 4 l_hand (leaf)
            [-0.16, 0.18, 0.0],  # 5 r_shoulder
            [-0.34, 0.0, 0.0],  # 6 r_hand (leaf)
            [0.10, -0.06, 0.0],  # 7 l_hip
            [0.0, -0.52, 0.0],  # 8 l_foot (leaf)
            [-0.10, -0.06, 0.0],  # 9 r_hip
            [0.0, -0.52, 0.0],  # 10 r_foot (leaf)
        ]
    )
    skeleton = kin.Skeleton(parents, offsets)
    radii = []
    radius_by_child = {
        1: 0.13,  # torso
        2: 0.085,  # neck/head
        3: 0.07,  # shoulder strut
        4: 0.055,  # left arm
        5: 0.07,
        6: 0.055,
        7: 0.075,  # hip strut
        8: 0.065,  # left leg
        9: 0.075,
        10: 0.065,
    }
    for _, child in skeleton.bones:
        radii.append(radius_by_child[child])
    return CapsuleCharacter(skeleton=skeleton, radii=np.array(radii))


# --------------------------------------------------------------------------
# analytic SDF

def _posed_bone_endpoints(character: CapsuleCharacter, transforms: kin.RigidTransformSet):
    """Posed world endpoints for every bone segment: joint chain translations."""
    pos = transforms.translations  # joint-frame origins = posed joint positions
    a = np.array([pos[p] for p, _ in character.skeleton.bones])
    b = np.array([pos[c] for _, c in character.skeleton.bones])
    return a, b


def capsule_union_sdf(
    q: np.ndarray, seg_a: np.ndarray, seg_b: np.ndarray, radii: np.ndarray
):
    """Min over capsules of (distance to segment - radius); also returns the
    index of the closest capsule per query."""
    q = np.asarray(q, dtype=np.float64).reshape(-1, 3)
    best = np.full(q.shape[0], np.inf)
    best_idx = np.zeros(q.shape[0], dtype=np.int64)
    for i in range(seg_a.shape[0]):
        ab = seg_b[i] - seg_a[i]
        denom = float(ab @ ab)
        if denom < 1e-18:
            d = np.linalg.norm(q - seg_a[i], axis=-1) - radii[i]
        else:
            t = np.clip((q - seg_a[i]) @ ab / denom, 0.0, 1.0)
            d = np.linalg.norm(q - (seg_a[i] + t[:, None] * ab), axis=-1) - radii[i]
        closer = d < best
        best_idx[closer] = i
        best = np.where(closer, d, best)
    return best, best_idx


def character_sdf(
    q_obs: np.ndarray, character: CapsuleCharacter, pose: kin.Pose
) -> np.ndarray:
    """Signed distance of the posed capsule union at observation points."""
    chain = kin.forward_kinematics(character.skeleton, pose)
    a, b = _posed_bone_endpoints(character, chain)
    d, _ = capsule_union_sdf(q_obs, a, b, character.radii)
    return d


# --------------------------------------------------------------------------
# ground-truth appearance

def _bone_frames(skeleton: kin.Skeleton):
    """Per-bone rest axis plus two fixed perpendicular directions."""
    axes = []
    for p, c in skeleton.bones:
        d = skeleton.rest_positions[c] - skeleton.rest_positions[p]
        axis = d / max(np.linalg.norm(d), 1e-12)
        helper = np.array([0.0, 0.0, 1.0])
        if abs(axis @ helper) > 0.9:
            helper = np.array([1.0, 0.0, 0.0])
        n1 = np.cross(axis, helper)
        n1 /= np.linalg.norm(n1)
        n2 = np.cross(axis, n1)
        axes.append((axis, n1, n2))
    return axes


def surface_albedo(
    points: np.ndarray,
    bone_idx: np.ndarray,
    character: CapsuleCharacter,
    skin: kin.RigidTransformSet,
) -> np.ndarray:
    """Albedo at posed surface points, evaluated in canonical bone coordinates.

    Points are pulled back rigidly through the owner bone's skinning
    transform, then striped in (axial, angular) coordinates."""
    skel = character.skeleton
    frames = _bone_frames(skel)
    base = character.base_colors()
    out = np.empty((points.shape[0], 3))
    for i, (p, c) in enumerate(skel.bones):
        sel = bone_idx == i
        if not np.any(sel):
            continue
        canon = skin.inverse_apply(p, points[sel])
        axis, n1, n2 = frames[i]
        rel = canon - skel.rest_positions[p]
        u = rel @ axis
        radial = rel - u[:, None] * axis
        phi = np.arctan2(radial @ n2, radial @ n1)
        band = np.floor(u / character.stripe_band)
        wedge = np.floor((phi + math.pi) / (2 * math.pi / character.stripe_wedges))
        dark = ((band + wedge) % 2) == 0
        factor = np.where(dark, character.stripe_contrast, 1.0)
        out[sel] = base[i] * factor[:, None]
    return out


def sphere_trace(
    origins: np.ndarray,
    dirs: np.ndarray,
    sdf_fn,
    t_near: np.ndarray,
    t_far: np.ndarray,
    tol: float = 3e-4,
    max_steps: int = 192,
):
    """March rays until |sdf| < tol or the far bound; returns (t, hit)."""
    t = np.asarray(t_near, dtype=np.float64).copy()
    hit = np.zeros(t.shape, dtype=bool)
    active = t < t_far
    for _ in range(max_steps):
        if not np.any(active):
            break
        ids = np.nonzero(active)[0]
        q = origins[ids] + t[ids, None] * dirs[ids]
        d = sdf_fn(q)
        newly_hit = d < tol
        hit_ids = ids[newly_hit]
        hit[hit_ids] = True
        active[hit_ids] = False
        move_ids = ids[~newly_hit]
        t[move_ids] += np.maximum(d[~newly_hit], tol)
        active[move_ids] &= t[move_ids] < t_far[move_ids]
    return t, hit


def render_ground_truth(
    character: CapsuleCharacter,
    pose: kin.Pose,
    camera: render.Camera,
    background=(1.0, 1.0, 1.0),
):
    """Sphere-traced diffuse render plus the exact hit mask."""
    chain = kin.forward_kinematics(character.skeleton, pose)
    skin = kin.skinning_transforms(character.skeleton, chain)
    seg_a, seg_b = _posed_bone_endpoints(character, chain)
    radii = character.radii

    def sdf(q):
        d, _ = capsule_union_sdf(q, seg_a, seg_b, radii)
        return d

    origins, dirs = camera.all_pixel_rays()
    pts = np.concatenate([seg_a, seg_b], axis=0)
    lo = pts.min(0) - radii.max() * 1.5
    hi = pts.max(0) + radii.max() * 1.5
    near, far, box_hit = render.ray_aabb(origins, dirs, lo, hi)
    img = np.ones((origins.shape[0], 3)) * np.asarray(background)
    mask = np.zeros(origins.shape[0], dtype=bool)
    ids = np.nonzero(box_hit)[0]
    if ids.size:
        t, hit = sphere_trace(origins[ids], dirs[ids], sdf, near[ids], far[ids])
        hit_rows = ids[hit]
        if hit_rows.size:
            q = origins[hit_rows] + t[hit][:, None] * dirs[hit_rows]
            _, bone_idx = capsule_union_sdf(q, seg_a, seg_b, radii)
            albedo = surface_albedo(q, bone_idx, character, skin)
            h = 1e-4
            grad = np.stack(
                [
                    sdf(q + np.array([h, 0, 0])) - sdf(q - np.array([h, 0, 0])),
                    sdf(q + np.array([0, h, 0])) - sdf(q - np.array([0, h, 0])),
                    sdf(q + np.array([0, 0, h])) - sdf(q - np.array([0, 0, h])),
                ],
                axis=-1,
            )
            n = grad / np.maximum(np.linalg.norm(grad, axis=-1, keepdims=True), 1e-12)
            light = np.asarray(character.light_dir, dtype=np.float64)
            light = light / np.linalg.norm(light)
            lambert = np.maximum(n @ light, 0.0)
            shade = character.ambient + (1.0 - character.ambient) * lambert
            img[hit_rows] = np.clip(albedo * shade[:, None], 0.0, 1.0)
            mask[hit_rows] = True
    h_px, w_px = camera.height, camera.width
    return img.reshape(h_px, w_px, 3), mask.reshape(h_px, w_px)


# --------------------------------------------------------------------------
# pose and camera sampling

_JOINT_ANGLE_STD = {
    0: 0.25,  # pelvis yaw/tilt
    1: 0.15,  # spine
    2: 0.20,  # head
    3: 0.35,  # shoulders
    5: 0.35,
    4: 0.20,  # hands
    6: 0.20,
    7: 0.30,  # hips
    9: 0.30,
    8: 0.20,  # feet
    10: 0.20,
}


def sample_pose(skeleton: kin.Skeleton, rng: np.random.Generator, frame: int) -> kin.Pose:
    """Random plausible pose: per-joint random axis, clamped gaussian angle."""
    rot = np.zeros((skeleton.n_joints, 3))
    for j in range(skeleton.n_joints):
        std = _JOINT_ANGLE_STD.get(j, 0.25)
        axis = rng.normal(size=3)
        axis /= np.linalg.norm(axis)
        angle = float(np.clip(rng.normal(0.0, std), -2 * std, 2 * std))
        rot[j] = axis * angle
    return kin.Pose(rotations=rot, frame=frame)


def ring_cameras(
    count: int,
    width: int,
    height: int,
    target=(0.0, 0.9, 0.0),
    radius: float = 2.3,
    azimuth_offset: float = 0.0,
    elevations=(0.12, -0.05),
) -> list[render.Camera]:
    """Cameras on a ring around the character, alternating elevations."""
    cams = []
    focal = 1.1 * max(width, height)
    target = np.asarray(target, dtype=np.float64)
    for i in range(count):
        az = azimuth_offset + 2 * math.pi * i / count
        el = elevations[i % len(elevations)]
        eye = target + radius * np.array(
            [math.sin(az) * math.cos(el), math.sin(el), math.cos(az) * math.cos(el)]
        )
        cams.append(render.look_at_camera(eye, target, width, height, focal))
    return cams


# --------------------------------------------------------------------------
# image metrics

def psnr(image_a: np.ndarray, image_b: np.ndarray) -> float:
    """10 log10(1 / MSE) for [0,1] images; identical images report the 99 dB cap."""
    a = np.asarray(image_a, dtype=np.float64)
    b = np.asarray(image_b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionError("image shapes differ")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_CAP_DB
    return min(10.0 * math.log10(1.0 / mse), PSNR_CAP_DB)


def _luma(img: np.ndarray) -> np.ndarray:
    if img.ndim == 2:
        return img
    return 0.299 * img[..., 0] + 0.587 * img[..., 1] + 0.114 * img[..., 2]


def _gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    ax = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(ax**2) / (2 * sigma**2))
    w = np.outer(g, g)
    return w / w.sum()


def ssim(image_a: np.ndarray, image_b: np.ndarray, window: int = 11) -> float:
    """Mean local SSIM over luma, 11x11 gaussian window, standard constants."""
    a = _luma(np.asarray(image_a, dtype=np.float64))
    b = _luma(np.asarray(image_b, dtype=np.float64))
    if a.shape != b.shape:
        raise DimensionError("image shapes differ")
    if min(a.shape) < window:
        raise ArgumentError("image smaller than the SSIM window")
    w = _gaussian_window(window)
    from numpy.lib.stride_tricks import sliding_window_view

    def filt(x):
        v = sliding_window_view(x, (window, window))
        return np.einsum("ijkl,kl->ij", v, w)

    c1 = 0.01**2
    c2 = 0.03**2
    mu_a = filt(a)
    mu_b = filt(b)
    var_a = filt(a * a) - mu_a**2
    var_b = filt(b * b) - mu_b**2
    cov = filt(a * b) - mu_a * mu_b
    s = ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) / (
        (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2)
    )
    return float(s.mean())
