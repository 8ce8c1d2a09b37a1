"""Silhouette-coverage initialization.

Pipeline: carve a visual hull on a voxel grid from multi-view masks, fill
an exact Euclidean distance transform (distance to the nearest unoccupied
voxel, grid boundary counts as unoccupied), turn occupied voxels into
sphere candidates with radius alpha * r + beta, build the boolean coverage
matrix D[j, i] = (candidate i's sphere reaches candidate j), and pick
centers by greedy set cover. An exact branch-and-bound solver doubles as a
quality oracle for small instances.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, replace

import numpy as np
from scipy import ndimage

__all__ = [
    "VoxelGrid",
    "CoverageProblem",
    "DEFAULT_ALPHA",
    "DEFAULT_BETA",
    "DEFAULT_GRID_RESOLUTION",
    "carve_visual_hull",
    "distance_transform",
    "build_coverage_problem",
    "solve_set_cover_greedy",
    "solve_set_cover_exact",
    "initialize_spheres",
    "write_init_json",
    "load_init_json",
]

log = logging.getLogger(__name__)

DEFAULT_ALPHA = 1.2
DEFAULT_BETA = 0.07
# quadratic coverage-matrix cost keeps the usable grid well below the
# carving grid a GPU pipeline could afford
DEFAULT_GRID_RESOLUTION = 48


@dataclass
class VoxelGrid:
    """Regular cubic lattice; voxel (i, j, k) has center origin + spacing * (i, j, k)."""

    origin: np.ndarray
    spacing: float
    dims: tuple
    occupancy: np.ndarray
    distance: np.ndarray | None = None

    def __post_init__(self):
        self.origin = np.asarray(self.origin, dtype=np.float64).reshape(3)
        self.dims = tuple(int(d) for d in self.dims)
        if any(d < 1 for d in self.dims):
            raise ValueError(f"dims must be positive, got {self.dims}")
        self.occupancy = np.asarray(self.occupancy, dtype=bool)
        if self.occupancy.shape != self.dims:
            raise ValueError("occupancy shape does not match dims")

    def centers(self) -> np.ndarray:
        """All voxel centers, shape (prod(dims), 3), index order C-contiguous."""
        ii, jj, kk = np.meshgrid(
            np.arange(self.dims[0]),
            np.arange(self.dims[1]),
            np.arange(self.dims[2]),
            indexing="ij",
        )
        idx = np.stack([ii, jj, kk], axis=-1).reshape(-1, 3)
        return self.origin[None, :] + self.spacing * idx


@dataclass
class CoverageProblem:
    """Candidate centers, their radii, and the boolean coverage matrix."""

    candidates: np.ndarray
    radii: np.ndarray
    coverage: np.ndarray

    def __post_init__(self):
        self.candidates = np.asarray(self.candidates, dtype=np.float64).reshape(-1, 3)
        self.radii = np.asarray(self.radii, dtype=np.float64).reshape(-1)
        self.coverage = np.asarray(self.coverage, dtype=bool)
        m = len(self.candidates)
        if self.coverage.shape != (m, m):
            raise ValueError("coverage matrix must be m x m")
        if len(self.radii) != m:
            raise ValueError("radii length must match candidates")


def _cube_bounds(bounds) -> tuple[np.ndarray, float]:
    """Normalize bounds to a cube (equal extent on each axis)."""
    if bounds is None:
        lo = np.array([-1.0, -1.0, -1.0])
        hi = np.array([1.0, 1.0, 1.0])
    else:
        lo = np.asarray(bounds[0], dtype=np.float64).reshape(3)
        hi = np.asarray(bounds[1], dtype=np.float64).reshape(3)
        if np.any(hi <= lo):
            raise ValueError("bounds max must exceed min on every axis")
    extent = float((hi - lo).max())
    center = (lo + hi) / 2.0
    return center - extent / 2.0, extent


def carve_visual_hull(views, grid_resolution: int, bounds=None) -> VoxelGrid:
    """Intersection of back-projected silhouettes on a voxel grid.

    A voxel is occupied iff its center projects inside the image onto a
    foreground pixel (mask > 0.5) in every view. bounds is an optional
    (min_corner, max_corner) pair, expanded to a cube; default [-1, 1]^3.
    """
    views = list(views)
    if not views:
        raise ValueError("carve_visual_hull needs at least one view")
    if grid_resolution < 1:
        raise ValueError("grid_resolution must be positive")
    lo, extent = _cube_bounds(bounds)
    res = int(grid_resolution)
    spacing = extent / res
    origin = lo + spacing / 2.0
    grid = VoxelGrid(
        origin=origin,
        spacing=spacing,
        dims=(res, res, res),
        occupancy=np.ones((res, res, res), dtype=bool),
    )
    centers = grid.centers()
    occ = np.ones(len(centers), dtype=bool)
    from .renderer import project  # local import to avoid a cycle at import time

    for view in views:
        cam = view.camera
        uv, depth = project(cam, centers)
        col = np.floor(uv[:, 0]).astype(np.int64, copy=False)
        row = np.floor(uv[:, 1]).astype(np.int64, copy=False)
        with np.errstate(invalid="ignore"):
            infront = depth > 0
        col = np.where(infront, col, 0)
        row = np.where(infront, row, 0)
        inimg = infront & (col >= 0) & (col < cam.width) & (row >= 0) & (row < cam.height)
        fg = np.zeros(len(centers), dtype=bool)
        fg[inimg] = view.mask[row[inimg], col[inimg]] > 0.5
        occ &= fg
    grid.occupancy = occ.reshape(grid.dims)
    if not grid.occupancy.any():
        log.warning("visual hull is empty: no voxel survives every mask")
    return grid


def distance_transform(grid: VoxelGrid) -> VoxelGrid:
    """Exact Euclidean distance to the nearest unoccupied voxel center.

    The grid boundary counts as unoccupied, so a lone occupied voxel gets
    one spacing. Unoccupied voxels get 0. Returns a new grid.
    """
    padded = np.zeros(tuple(d + 2 for d in grid.dims), dtype=bool)
    padded[1:-1, 1:-1, 1:-1] = grid.occupancy
    edt = ndimage.distance_transform_edt(padded)[1:-1, 1:-1, 1:-1]
    return replace(grid, distance=edt * grid.spacing)


def build_coverage_problem(
    grid: VoxelGrid, alpha: float = DEFAULT_ALPHA, beta: float = DEFAULT_BETA
) -> CoverageProblem:
    """Sphere candidates from occupied voxels; radius_i = alpha * r_i + beta.

    The coverage matrix D has D[j, i] = 1 iff ||p_j - p_i|| <= radius_i.
    With positive beta every candidate covers itself, so the diagonal is
    all ones and greedy set cover is always feasible.
    """
    if grid.distance is None:
        grid = distance_transform(grid)
    occ = grid.occupancy.ravel()
    if not occ.any():
        raise ValueError("cannot build a coverage problem from an empty hull")
    centers = grid.centers()[occ]
    r = grid.distance.ravel()[occ]
    radii = alpha * r + beta
    m = len(centers)
    coverage = np.empty((m, m), dtype=bool)
    block = max(1, int(2**22 // max(m, 1)))
    r2 = radii**2
    for start in range(0, m, block):
        stop = min(start + block, m)
        diff = centers[:, None, :] - centers[None, start:stop, :]
        d2 = np.einsum("jik,jik->ji", diff, diff)
        coverage[:, start:stop] = d2 <= r2[None, start:stop]
    return CoverageProblem(candidates=centers, radii=radii, coverage=coverage)


def solve_set_cover_greedy(problem: CoverageProblem) -> list:
    """Greedy set cover: repeatedly pick the candidate covering the most
    uncovered candidates, ties broken by lowest index. Returns sorted
    indices of a feasible cover (D @ v >= 1)."""
    cov = problem.coverage
    m = len(cov)
    uncovered = np.ones(m, dtype=bool)
    picked = []
    while uncovered.any():
        counts = cov[uncovered].sum(axis=0)
        best = int(np.argmax(counts))
        if counts[best] == 0:
            bad = int(np.nonzero(uncovered)[0][0])
            raise ValueError(f"infeasible coverage: candidate {bad} is covered by no one")
        picked.append(best)
        uncovered &= ~cov[:, best]
    return sorted(picked)


def solve_set_cover_exact(problem: CoverageProblem, max_m: int = 20) -> list:
    """Minimum-cardinality cover by iterative-deepening branch and bound.

    Exhaustive within each size bound, so the result is a true optimum;
    refuses instances with more than max_m candidates.
    """
    m = len(problem.coverage)
    if m > max_m:
        raise ValueError(f"exact solver refuses m={m} > max_m={max_m}")
    if m == 0:
        return []
    # bitmask per column: bit j set iff candidate i covers candidate j
    cols = []
    for i in range(m):
        mask = 0
        for j in np.nonzero(problem.coverage[:, i])[0]:
            mask |= 1 << int(j)
        cols.append(mask)
    full = (1 << m) - 1
    covering = [[] for _ in range(m)]
    for i, mask in enumerate(cols):
        for j in range(m):
            if mask >> j & 1:
                covering[j].append(i)
    order = sorted(range(m), key=lambda i: -bin(cols[i]).count("1"))
    rank = {i: pos for pos, i in enumerate(order)}
    for j in range(m):
        if not covering[j]:
            raise ValueError(f"infeasible coverage: candidate {j} is covered by no one")
        covering[j].sort(key=lambda i: rank[i])

    upper = len(solve_set_cover_greedy(problem))

    def search(uncov: int, budget: int):
        if uncov == 0:
            return []
        if budget == 0:
            return None
        j = (uncov & -uncov).bit_length() - 1
        for i in covering[j]:
            rest = search(uncov & ~cols[i], budget - 1)
            if rest is not None:
                return [i] + rest
        return None

    for budget in range(1, upper + 1):
        found = search(full, budget)
        if found is not None:
            return sorted(found)
    return sorted(range(m))  # unreachable: greedy bound guarantees a solution


def initialize_spheres(
    views,
    grid_resolution: int = DEFAULT_GRID_RESOLUTION,
    alpha: float = DEFAULT_ALPHA,
    beta: float = DEFAULT_BETA,
    bounds=None,
) -> tuple[np.ndarray, np.ndarray]:
    """Full pipeline: carve -> distance -> coverage -> greedy selection.

    Returns (centers, radii) of the selected spheres, ready for
    instantiate_spheres.
    """
    grid = carve_visual_hull(views, grid_resolution, bounds)
    grid = distance_transform(grid)
    problem = build_coverage_problem(grid, alpha, beta)
    picked = solve_set_cover_greedy(problem)
    return problem.candidates[picked], problem.radii[picked]


def write_init_json(path, centers, radii, alpha, beta, grid_resolution) -> None:
    centers = np.asarray(centers, dtype=np.float64).reshape(-1, 3)
    radii = np.asarray(radii, dtype=np.float64).reshape(-1)
    payload = {
        "alpha": float(alpha),
        "beta": float(beta),
        "grid_resolution": int(grid_resolution),
        "spheres": [
            {"center": [float(x) for x in c], "radius": float(r)}
            for c, r in zip(centers, radii)
        ],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=1)


def load_init_json(path) -> tuple[np.ndarray, np.ndarray, dict]:
    with open(path, "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    spheres = payload.get("spheres", [])
    if not spheres:
        raise ValueError(f"{path}: no spheres in initialization file")
    centers = np.array([s["center"] for s in spheres], dtype=np.float64)
    radii = np.array([s["radius"] for s in spheres], dtype=np.float64)
    meta = {k: payload.get(k) for k in ("alpha", "beta", "grid_resolution")}
    return centers, radii, meta
