"""Amortized canonical<->observation correspondence.

Canonical nearest neighbors are tabulated once (rows may cross part
boundaries to avoid seams); at query time only the single nearest posed
point is searched, restricted to the points of the three closest joints,
and the remaining K-1 anchors come from the table row."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ArgumentError, CandidateLookupError, DimensionError
from .pointcloud import CanonicalPointCloud, PosedPointCloud


@dataclass(frozen=True)
class NeighborTable:
    """Per canonical point: K-1 tabulated neighbor indices (global)."""

    rows: np.ndarray  # (P, K-1) int
    k: int

    def __post_init__(self):
        if self.rows.shape[1] != self.k - 1:
            raise DimensionError("rows must have K-1 columns")
        p = self.rows.shape[0]
        if np.any(self.rows == np.arange(p)[:, None]):
            raise ArgumentError("a table row contains its own index")


@dataclass
class PartIndex:
    """Per-part point index lists plus per-pose joint positions."""

    part_slices: list[np.ndarray]  # index arrays, one per part
    joint_positions: np.ndarray  # (J, 3) posed joint origins

    @classmethod
    def build(
        cls, part_ids: np.ndarray, n_parts: int, joint_positions: np.ndarray
    ) -> "PartIndex":
        slices = [np.where(part_ids == j)[0] for j in range(n_parts)]
        return cls(part_slices=slices, joint_positions=np.asarray(joint_positions))

    @property
    def n_parts(self) -> int:
        return len(self.part_slices)


def build_neighbor_table(cloud: CanonicalPointCloud, k: int) -> NeighborTable:
    """Rows are the K-1 nearest canonical points (global search, Euclidean)."""
    if k < 2:
        raise ArgumentError("K must be at least 2")
    if cloud.n_points < k:
        raise ArgumentError("cloud smaller than K")
    pts = cloud.positions
    rows = np.empty((cloud.n_points, k - 1), dtype=np.int64)
    # block the O(N^2) distance matrix to stay cache/memory friendly
    block = 512
    for s in range(0, cloud.n_points, block):
        e = min(s + block, cloud.n_points)
        d2 = ((pts[s:e, None, :] - pts[None, :, :]) ** 2).sum(-1)
        d2[np.arange(e - s), np.arange(s, e)] = np.inf
        part = np.argpartition(d2, k - 1, axis=1)[:, : k - 1]
        order = np.take_along_axis(d2, part, axis=1).argsort(axis=1)
        rows[s:e] = np.take_along_axis(part, order, axis=1)
    return NeighborTable(rows=rows, k=k)


def closest_joints(q: np.ndarray, joint_positions: np.ndarray, n: int = 3) -> np.ndarray:
    """Indices of the n joints whose posed origins are closest to q."""
    d2 = ((joint_positions - q) ** 2).sum(-1)
    n = min(n, d2.shape[0])
    return np.argpartition(d2, n - 1)[:n]


def nearest_posed_point(
    q_obs: np.ndarray,
    posed: PosedPointCloud,
    index: PartIndex,
) -> int:
    """Nearest point among the union of the parts of the 3 closest joints."""
    q = np.asarray(q_obs, dtype=np.float64)
    joints = closest_joints(q, index.joint_positions)
    cand = np.concatenate([index.part_slices[j] for j in joints])
    if cand.size == 0:
        raise CandidateLookupError("no candidate points near query")
    d2 = ((posed.positions[cand] - q) ** 2).sum(-1)
    return int(cand[np.argmin(d2)])


def lookup_anchors(
    q_obs: np.ndarray,
    posed: PosedPointCloud,
    table: NeighborTable,
    index: PartIndex,
) -> np.ndarray:
    """K anchor indices: the nearest posed point plus its tabulated row."""
    nearest = nearest_posed_point(q_obs, posed, index)
    return np.concatenate(([nearest], table.rows[nearest]))


def nearest_posed_points_batch(
    queries: np.ndarray,
    posed_positions: np.ndarray,
    index: PartIndex,
    count_candidates: bool = False,
):
    """Vectorized nearest_posed_point.

    Queries are grouped by their (sorted) closest-joint triple so each group
    scans one shared candidate array.  Returns (indices, mean_candidates)."""
    q = np.asarray(queries, dtype=np.float64).reshape(-1, 3)
    jp = index.joint_positions
    n = min(3, jp.shape[0])
    d2j = ((q[:, None, :] - jp[None, :, :]) ** 2).sum(-1)
    triples = np.argpartition(d2j, n - 1, axis=1)[:, :n]
    triples = np.sort(triples, axis=1)
    out = np.empty(q.shape[0], dtype=np.int64)
    keys = np.ascontiguousarray(triples).view(
        np.dtype((np.void, triples.dtype.itemsize * n))
    ).ravel()
    order = np.argsort(keys)
    sorted_keys = keys[order]
    boundaries = np.nonzero(sorted_keys[1:] != sorted_keys[:-1])[0] + 1
    starts = np.concatenate(([0], boundaries, [q.shape[0]]))
    total_cand = 0
    for s, e in zip(starts[:-1], starts[1:]):
        rows = order[s:e]
        joints = triples[rows[0]]
        cand = np.concatenate([index.part_slices[j] for j in joints])
        if cand.size == 0:
            raise CandidateLookupError("no candidate points near query group")
        d2 = (
            (q[rows][:, None, :] - posed_positions[cand][None, :, :]) ** 2
        ).sum(-1)
        out[rows] = cand[np.argmin(d2, axis=1)]
        total_cand += cand.size * rows.size
    mean_cand = total_cand / max(q.shape[0], 1)
    if count_candidates:
        return out, mean_cand
    return out, None


def lookup_anchors_batch(
    queries: np.ndarray,
    posed_positions: np.ndarray,
    table: NeighborTable,
    index: PartIndex,
) -> np.ndarray:
    """(N, K) anchor index rows for a query batch."""
    nearest, _ = nearest_posed_points_batch(queries, posed_positions, index)
    return np.concatenate([nearest[:, None], table.rows[nearest]], axis=1)


def aggregate(
    q_obs: np.ndarray,
    anchors: np.ndarray,
    features: np.ndarray,
    posed_positions: np.ndarray,
    betas: np.ndarray,
) -> tuple[np.ndarray, np.ndarray]:
    """Gaussian-RBF blend of anchor features.

    a_i = exp(-|q - p_o_i|^2 / beta_i); returns (sum_i a_i f_i, a)."""
    betas = np.asarray(betas, dtype=np.float64)
    if np.any(betas <= 0):
        raise ArgumentError("RBF scales must be positive")
    q = np.asarray(q_obs, dtype=np.float64)
    d2 = ((posed_positions[anchors] - q) ** 2).sum(-1)
    a = np.exp(-d2 / betas)
    return a @ np.asarray(features)[anchors], a


def canonical_anchor_positions(
    anchors: np.ndarray, cloud: CanonicalPointCloud
) -> np.ndarray:
    """Canonical positions paired with the anchors (the non-rigid backward map)."""
    return cloud.positions[np.asarray(anchors)]
