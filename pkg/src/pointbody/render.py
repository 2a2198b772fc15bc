"""SDF volume rendering: cameras, density conversion, stratified sampling and
emission-absorption quadrature.

The quadrature works on either plain numpy arrays (inference) or nncore
Tensors (training); `sdf_to_density` and `composite` dispatch on input type."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nncore as nc
from .errors import ArgumentError, ContractError, DimensionError


@dataclass(frozen=True)
class Camera:
    fx: float
    fy: float
    cx: float
    cy: float
    rotation: np.ndarray  # (3, 3) camera axes as world columns [x y z_forward]
    center: np.ndarray  # (3,) position in world
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ContractError("focal lengths must be positive")
        r = np.asarray(self.rotation, dtype=np.float64)
        if np.abs(r.T @ r - np.eye(3)).max() > 1e-6:
            raise ContractError("camera rotation not orthonormal")
        object.__setattr__(self, "rotation", r)
        object.__setattr__(
            self, "center", np.asarray(self.center, dtype=np.float64)
        )

    def rays_for_pixels(self, px: np.ndarray, py: np.ndarray):
        """Ray origins/unit directions through pixel centers (px, py)."""
        x = (np.asarray(px, dtype=np.float64) + 0.5 - self.cx) / self.fx
        y = (np.asarray(py, dtype=np.float64) + 0.5 - self.cy) / self.fy
        d_cam = np.stack([x, y, np.ones_like(x)], axis=-1)
        d_world = d_cam @ self.rotation.T
        d_world /= np.linalg.norm(d_world, axis=-1, keepdims=True)
        origins = np.broadcast_to(self.center, d_world.shape).copy()
        return origins, d_world

    def all_pixel_rays(self):
        py, px = np.mgrid[0 : self.height, 0 : self.width]
        return self.rays_for_pixels(px.ravel(), py.ravel())

    def project(self, points: np.ndarray):
        """World points -> pixel coordinates (x, y) and depth."""
        rel = (np.asarray(points) - self.center) @ self.rotation
        z = rel[..., 2]
        x = rel[..., 0] / z * self.fx + self.cx
        y = rel[..., 1] / z * self.fy + self.cy
        return np.stack([x, y], axis=-1), z


def look_at_camera(
    eye, target, width: int, height: int, focal: float, up=(0.0, 1.0, 0.0)
) -> Camera:
    eye = np.asarray(eye, dtype=np.float64)
    z = np.asarray(target, dtype=np.float64) - eye
    z = z / np.linalg.norm(z)
    up = np.asarray(up, dtype=np.float64)
    x = np.cross(z, up)
    x = x / np.linalg.norm(x)
    y = np.cross(z, x)
    rot = np.stack([x, y, z], axis=1)
    return Camera(
        fx=focal,
        fy=focal,
        cx=width / 2.0,
        cy=height / 2.0,
        rotation=rot,
        center=eye,
        width=width,
        height=height,
    )


# --------------------------------------------------------------------------
# density and quadrature

def sdf_to_density(s, alpha, b):
    """Laplace-CDF density: sigma = alpha * Psi_b(-s), with scale b.

    Monotone decreasing in s: alpha at -inf, alpha/2 at 0, 0 at +inf.
    Accepts numpy arrays or Tensors (alpha/b may be Tensors when learnable)."""
    if isinstance(s, nc.Tensor) or isinstance(alpha, nc.Tensor) or isinstance(b, nc.Tensor):
        s_t = nc.as_tensor(s)
        sign_pos = (s_t.data >= 0).astype(s_t.data.dtype)
        e = nc.mul(nc.exp(nc.div(nc.neg(nc.absolute(s_t)), b)), 0.5)
        psi = nc.add(
            nc.mul(nc.Tensor(sign_pos), e),
            nc.mul(nc.Tensor(1.0 - sign_pos), nc.sub(1.0, e)),
        )
        return nc.mul(psi, alpha)
    s = np.asarray(s, dtype=np.float64)
    a = float(alpha)
    bb = float(b)
    if a <= 0 or bb <= 0:
        raise ArgumentError("alpha and b must be positive")
    e = 0.5 * np.exp(-np.abs(s) / bb)
    return a * np.where(s >= 0, e, 1.0 - e)


def stratified_depths(
    n_rays: int, n_samples: int, near: np.ndarray, far: np.ndarray, rng
) -> np.ndarray:
    """(R, S) strictly increasing jittered depths within per-ray [near, far]."""
    if n_samples < 2:
        raise ArgumentError("need at least 2 samples per ray")
    u = rng.random((n_rays, n_samples))
    frac = (np.arange(n_samples) + u) / n_samples
    near = np.asarray(near, dtype=np.float64).reshape(-1, 1)
    far = np.asarray(far, dtype=np.float64).reshape(-1, 1)
    if np.any(far <= near):
        raise ArgumentError("near must be strictly below far")
    return near + frac * (far - near)


def composite(colors, sigmas, depths: np.ndarray, far: np.ndarray, background):
    """Emission-absorption quadrature along rays.

    w_k = T_k (1 - exp(-sigma_k d_k)), T_k = exp(-sum_{l<k} sigma_l d_l);
    pixel = sum w_k c_k + (1 - sum w) * background.  Returns a dict with
    color (R,3), opacity (R,), depth (R,), weights (R,S)."""
    deltas = np.diff(depths, axis=-1)
    last = np.maximum(far.reshape(-1, 1) - depths[:, -1:], 1e-9)
    deltas = np.concatenate([deltas, last], axis=-1)
    if isinstance(sigmas, nc.Tensor) or isinstance(colors, nc.Tensor):
        tau = nc.mul(sigmas, nc.Tensor(deltas))
        cum = nc.cumsum_last(tau)
        shifted = nc.concat(
            [nc.Tensor(np.zeros_like(deltas[:, :1])), nc.slice_axis(cum, 1, 0, deltas.shape[1] - 1)],
            axis=1,
        )
        trans = nc.exp(nc.neg(shifted))
        weights = nc.mul(trans, nc.sub(1.0, nc.exp(nc.neg(tau))))
        opacity = nc.sum_axis(weights, axis=-1)
        wexp = nc.reshape(weights, weights.shape + (1,))
        color = nc.sum_axis(nc.mul(wexp, colors), axis=1)
        bg = nc.as_tensor(background)
        color = nc.add(
            color,
            nc.mul(nc.reshape(nc.sub(1.0, opacity), (-1, 1)), bg),
        )
        depth = nc.sum_axis(nc.mul(weights, nc.Tensor(depths)), axis=-1)
        return {
            "color": color,
            "opacity": opacity,
            "depth": depth,
            "weights": weights,
        }
    sigmas = np.asarray(sigmas, dtype=np.float64)
    colors = np.asarray(colors, dtype=np.float64)
    tau = sigmas * deltas
    cum = np.cumsum(tau, axis=-1)
    shifted = np.concatenate([np.zeros_like(tau[:, :1]), cum[:, :-1]], axis=-1)
    trans = np.exp(-shifted)
    weights = trans * (1.0 - np.exp(-tau))
    opacity = weights.sum(-1)
    color = (weights[..., None] * colors).sum(1) + (1.0 - opacity)[:, None] * np.asarray(
        background
    )
    with np.errstate(invalid="ignore"):
        depth_mean = (weights * depths).sum(-1) / np.maximum(opacity, 1e-12)
    depth = np.where(opacity > 1e-6, depth_mean, far)
    return {
        "color": color,
        "opacity": opacity,
        "depth": depth,
        "weights": weights,
        "transmittance_residual": 1.0 - opacity,
    }


def ray_aabb(origins: np.ndarray, dirs: np.ndarray, lo: np.ndarray, hi: np.ndarray):
    """Slab intersection; returns (near, far, hit_mask) with near clamped >= 0."""
    inv = 1.0 / np.where(np.abs(dirs) > 1e-12, dirs, 1e-12)
    t0 = (lo - origins) * inv
    t1 = (hi - origins) * inv
    tmin = np.minimum(t0, t1).max(-1)
    tmax = np.maximum(t0, t1).min(-1)
    near = np.maximum(tmin, 1e-4)
    hit = (tmax > near) & (tmax > 0)
    return near, tmax, hit


def dilated_aabb(points: np.ndarray, factor: float = 1.2):
    """AABB of the points, dilated about its center by `factor`."""
    lo = points.min(0)
    hi = points.max(0)
    c = 0.5 * (lo + hi)
    half = 0.5 * (hi - lo) * factor
    return c - half, c + half


def render_ray(
    origin: np.ndarray,
    direction: np.ndarray,
    field_fn,
    n_samples: int,
    near: float,
    far: float,
    rng,
    background=(1.0, 1.0, 1.0),
):
    """Render a single ray against `field_fn(points, dirs) -> (colors, sigmas)`.

    Returns (color, opacity, depth)."""
    if far <= near:
        raise ArgumentError("degenerate [near, far] interval")
    direction = np.asarray(direction, dtype=np.float64)
    n = np.linalg.norm(direction)
    if abs(n - 1.0) > 1e-6:
        raise ContractError("ray direction must be unit length")
    depths = stratified_depths(1, n_samples, np.array([near]), np.array([far]), rng)
    pts = origin + depths[0][:, None] * direction
    dirs = np.broadcast_to(direction, pts.shape)
    colors, sigmas = field_fn(pts, dirs)
    out = composite(
        colors[None], np.asarray(sigmas)[None], depths, np.array([far]), background
    )
    return out["color"][0], out["opacity"][0], out["depth"][0]


def render_image(
    camera: Camera,
    field_fn,
    aabb: tuple[np.ndarray, np.ndarray],
    n_samples: int,
    seed: int,
    background=(1.0, 1.0, 1.0),
    ray_batch: int = 4096,
):
    """Full-frame render; rays missing the dilated AABB become background.

    Deterministic for a given seed.  Returns (image (H,W,3), opacity (H,W))."""
    rng = np.random.default_rng(seed)
    origins, dirs = camera.all_pixel_rays()
    lo, hi = aabb
    near, far, hit = ray_aabb(origins, dirs, lo, hi)
    n_px = origins.shape[0]
    img = np.ones((n_px, 3)) * np.asarray(background)
    opa = np.zeros(n_px)
    idx = np.nonzero(hit)[0]
    for s in range(0, idx.size, ray_batch):
        rows = idx[s : s + ray_batch]
        depths = stratified_depths(
            rows.size, n_samples, near[rows], far[rows], rng
        )
        pts = origins[rows, None, :] + depths[..., None] * dirs[rows, None, :]
        flat = pts.reshape(-1, 3)
        fdirs = np.repeat(dirs[rows], n_samples, axis=0)
        colors, sigmas = field_fn(flat, fdirs)
        out = composite(
            np.asarray(colors).reshape(rows.size, n_samples, 3),
            np.asarray(sigmas).reshape(rows.size, n_samples),
            depths,
            far[rows],
            background,
        )
        img[rows] = out["color"]
        opa[rows] = out["opacity"]
    return img.reshape(camera.height, camera.width, 3), opa.reshape(
        camera.height, camera.width
    )
