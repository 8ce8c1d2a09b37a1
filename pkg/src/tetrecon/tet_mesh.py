"""Tetrahedral mesh core.

Data types for tetrahedral volumes and triangle surfaces, deterministic
generation of ball-shaped tet meshes ("tet spheres"), boundary-surface
extraction, instancing of sphere collections, surface union, and file IO
(OBJ for surfaces, a small sidecar text format for tet meshes).
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "MeshError",
    "TetMesh",
    "SurfaceMesh",
    "TetSphereSet",
    "generate_unit_tetsphere",
    "boundary_faces",
    "boundary_vertex_indices",
    "signed_volumes",
    "instantiate_spheres",
    "union_surfaces",
    "union_vertex_owners",
    "topology_fingerprint",
    "save_obj",
    "load_obj",
    "save_tetmesh",
    "load_tetmesh",
]


class MeshError(Exception):
    """Invalid mesh data or an unreadable/malformed mesh file."""


@dataclass
class TetMesh:
    """A tetrahedral volume mesh.

    vertices are the current (deformable) positions, rest_vertices the
    configuration against which deformation is measured. Connectivity is
    fixed after construction; only vertex positions may change.
    """

    vertices: np.ndarray
    tets: np.ndarray
    rest_vertices: np.ndarray | None = None
    rest_inverse: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        self.vertices = np.ascontiguousarray(self.vertices, dtype=np.float64)
        self.tets = np.ascontiguousarray(self.tets, dtype=np.int64)
        if self.vertices.ndim != 2 or self.vertices.shape[1] != 3:
            raise MeshError(f"vertices must be (N, 3), got {self.vertices.shape}")
        if self.tets.ndim != 2 or self.tets.shape[1] != 4:
            raise MeshError(f"tets must be (T, 4), got {self.tets.shape}")
        n = len(self.vertices)
        if self.tets.size and (self.tets.min() < 0 or self.tets.max() >= n):
            raise MeshError("tetrahedron vertex index out of range")
        # 4 distinct indices per tet
        s = np.sort(self.tets, axis=1)
        if self.tets.size and np.any(s[:, :-1] == s[:, 1:]):
            bad = int(np.nonzero(np.any(s[:, :-1] == s[:, 1:], axis=1))[0][0])
            raise MeshError(f"tetrahedron {bad} has repeated vertex indices")
        if self.rest_vertices is None:
            self.rest_vertices = self.vertices.copy()
        else:
            self.rest_vertices = np.ascontiguousarray(self.rest_vertices, dtype=np.float64)
            if self.rest_vertices.shape != self.vertices.shape:
                raise MeshError("rest_vertices shape must match vertices")

    @property
    def num_vertices(self) -> int:
        return len(self.vertices)

    @property
    def num_tets(self) -> int:
        return len(self.tets)


@dataclass
class SurfaceMesh:
    """A triangle surface mesh with optional per-face unit normals."""

    vertices: np.ndarray
    faces: np.ndarray
    face_normals: np.ndarray | None = None

    def __post_init__(self):
        self.vertices = np.ascontiguousarray(self.vertices, dtype=np.float64)
        self.faces = np.ascontiguousarray(self.faces, dtype=np.int64)
        if self.vertices.ndim != 2 or self.vertices.shape[1] != 3:
            raise MeshError(f"vertices must be (V, 3), got {self.vertices.shape}")
        if self.faces.ndim != 2 or self.faces.shape[1] != 3:
            raise MeshError(f"faces must be (F, 3), got {self.faces.shape}")
        n = len(self.vertices)
        if self.faces.size and (self.faces.min() < 0 or self.faces.max() >= n):
            raise MeshError("face vertex index out of range")
        f = self.faces
        if f.size and np.any((f[:, 0] == f[:, 1]) | (f[:, 1] == f[:, 2]) | (f[:, 0] == f[:, 2])):
            raise MeshError("face with repeated vertices")

    @property
    def num_vertices(self) -> int:
        return len(self.vertices)

    @property
    def num_faces(self) -> int:
        return len(self.faces)


@dataclass
class TetSphereSet:
    """M deformable tet spheres sharing one template connectivity."""

    spheres: list
    centers: np.ndarray
    radii: np.ndarray

    def __post_init__(self):
        self.centers = np.ascontiguousarray(self.centers, dtype=np.float64).reshape(-1, 3)
        self.radii = np.ascontiguousarray(self.radii, dtype=np.float64).reshape(-1)
        if len(self.spheres) < 1:
            raise MeshError("TetSphereSet needs at least one sphere")
        if not (len(self.spheres) == len(self.centers) == len(self.radii)):
            raise MeshError("spheres/centers/radii lengths disagree")
        t0 = self.spheres[0].tets
        for s in self.spheres[1:]:
            if s.tets is not t0 and not np.array_equal(s.tets, t0):
                raise MeshError("all spheres must share one template connectivity")

    @property
    def num_spheres(self) -> int:
        return len(self.spheres)

    @property
    def template_tets(self) -> np.ndarray:
        return self.spheres[0].tets


def _cube_to_ball(points: np.ndarray) -> np.ndarray:
    """Radial map from the cube [-1,1]^3 onto the unit ball."""
    x, y, z = points[:, 0], points[:, 1], points[:, 2]
    x2, y2, z2 = x * x, y * y, z * z
    out = np.empty_like(points)
    out[:, 0] = x * np.sqrt(np.maximum(0.0, 1 - y2 / 2 - z2 / 2 + y2 * z2 / 3))
    out[:, 1] = y * np.sqrt(np.maximum(0.0, 1 - z2 / 2 - x2 / 2 + z2 * x2 / 3))
    out[:, 2] = z * np.sqrt(np.maximum(0.0, 1 - x2 / 2 - y2 / 2 + x2 * y2 / 3))
    return out


def _kuhn_corner_steps():
    """The 6 tetrahedra of the Kuhn split of a unit cell.

    Each tet visits cell corners along one axis permutation. Odd permutations
    produce negative orientation, so two corners are swapped there to keep
    every tet positively oriented.
    """
    steps = []
    for perm in itertools.permutations(range(3)):
        corners = [np.zeros(3, dtype=np.int64)]
        p = np.zeros(3, dtype=np.int64)
        for axis in perm:
            p = p.copy()
            p[axis] = 1
            corners.append(p)
        inversions = sum(
            1 for i in range(3) for j in range(i + 1, 3) if perm[i] > perm[j]
        )
        if inversions % 2 == 1:
            corners[1], corners[2] = corners[2], corners[1]
        steps.append(np.stack(corners))
    return steps


def generate_unit_tetsphere(resolution: int) -> TetMesh:
    """Deterministic tet mesh of the unit ball.

    A (2*resolution)^3-cell grid on [-1,1]^3 is split into 6 tets per cell
    (consistent diagonals, so neighboring cells share faces exactly), then
    vertices are mapped radially onto the ball. All tets keep positive
    volume under the map; the boundary is a closed genus-0 surface.
    """
    if not isinstance(resolution, (int, np.integer)) or resolution < 1:
        raise ValueError(f"resolution must be a positive integer, got {resolution!r}")
    n = 2 * int(resolution)
    coords = np.linspace(-1.0, 1.0, n + 1)
    ii, jj, kk = np.meshgrid(np.arange(n + 1), np.arange(n + 1), np.arange(n + 1), indexing="ij")
    verts = np.stack([coords[ii], coords[jj], coords[kk]], axis=-1).reshape(-1, 3)

    def lattice_index(c):
        return (c[..., 0] * (n + 1) + c[..., 1]) * (n + 1) + c[..., 2]

    base_i, base_j, base_k = np.meshgrid(np.arange(n), np.arange(n), np.arange(n), indexing="ij")
    bases = np.stack([base_i, base_j, base_k], axis=-1).reshape(-1, 3)
    tet_blocks = []
    for corner_steps in _kuhn_corner_steps():
        corners = bases[:, None, :] + corner_steps[None, :, :]
        tet_blocks.append(lattice_index(corners))
    # interleave the 6 tets per cell so tets of one cell stay adjacent
    tets = np.stack(tet_blocks, axis=1).reshape(-1, 4)

    mesh = TetMesh(vertices=_cube_to_ball(verts), tets=tets)
    vols = signed_volumes(mesh)
    if vols.min() <= 0:
        raise MeshError("ball template produced a non-positive tet volume")
    return mesh


def signed_volumes(mesh: TetMesh) -> np.ndarray:
    """Per-tet signed volume of the current vertex positions."""
    return _signed_volumes_of(mesh.vertices, mesh.tets)


def _signed_volumes_of(positions: np.ndarray, tets: np.ndarray) -> np.ndarray:
    v = positions[tets]
    edges = np.stack([v[:, 1] - v[:, 0], v[:, 2] - v[:, 0], v[:, 3] - v[:, 0]], axis=2)
    return np.linalg.det(edges) / 6.0


# Outward-wound faces of a positively oriented tet (a, b, c, d): the face
# opposite each vertex, wound so its normal points away from that vertex.
_TET_FACES = np.array([[1, 2, 3], [0, 3, 2], [0, 1, 3], [0, 2, 1]], dtype=np.int64)


def _boundary_face_corners(tets: np.ndarray) -> np.ndarray:
    """Faces (original vertex ids, outward winding) used by exactly one tet."""
    faces = tets[:, _TET_FACES].reshape(-1, 3)
    key = np.sort(faces, axis=1)
    order = np.lexsort((key[:, 2], key[:, 1], key[:, 0]))
    key_sorted = key[order]
    same_as_prev = np.zeros(len(key_sorted), dtype=bool)
    if len(key_sorted) > 1:
        same_as_prev[1:] = np.all(key_sorted[1:] == key_sorted[:-1], axis=1)
    same_as_next = np.zeros_like(same_as_prev)
    same_as_next[:-1] = same_as_prev[1:]
    unique_mask = ~(same_as_prev | same_as_next)
    boundary = faces[order[unique_mask]]
    # deterministic face order, independent of vertex positions
    reorder = np.lexsort((boundary[:, 2], boundary[:, 1], boundary[:, 0]))
    return boundary[reorder]


def boundary_vertex_indices(mesh: TetMesh) -> np.ndarray:
    """Sorted original vertex ids that appear on the boundary surface."""
    return np.unique(_boundary_face_corners(mesh.tets))


def boundary_faces(mesh: TetMesh) -> SurfaceMesh:
    """Extract the boundary surface of a tet mesh.

    Returns the triangles that belong to exactly one tet, wound outward
    (consistent with positive tet orientation), with vertices compacted to
    the ones actually used. Connectivity depends only on the tets, never on
    vertex positions.
    """
    corners = _boundary_face_corners(mesh.tets)
    used = np.unique(corners)
    remap = np.full(mesh.num_vertices, -1, dtype=np.int64)
    remap[used] = np.arange(len(used))
    return SurfaceMesh(vertices=mesh.vertices[used], faces=remap[corners])


def instantiate_spheres(template: TetMesh, centers, radii) -> TetSphereSet:
    """Place scaled copies of a template ball at the given centers.

    Sphere k has vertices center_k + radius_k * template.vertices; that
    instantiated configuration is also its rest state.
    """
    centers = np.asarray(centers, dtype=np.float64).reshape(-1, 3)
    radii = np.asarray(radii, dtype=np.float64).reshape(-1)
    if len(centers) != len(radii):
        raise ValueError(f"got {len(centers)} centers but {len(radii)} radii")
    if len(centers) < 1:
        raise ValueError("need at least one sphere")
    if np.any(radii <= 0):
        bad = int(np.nonzero(radii <= 0)[0][0])
        raise ValueError(f"radius {bad} is not positive: {radii[bad]}")
    spheres = []
    for c, r in zip(centers, radii):
        verts = c[None, :] + r * template.vertices
        spheres.append(TetMesh(vertices=verts, tets=template.tets))
    return TetSphereSet(spheres=spheres, centers=centers, radii=radii)


def union_surfaces(sphere_set: TetSphereSet) -> SurfaceMesh:
    """Concatenated boundary surfaces of all spheres, vertices reindexed.

    Plain concatenation, no boolean CSG: overlapping spheres may yield a
    self-intersecting (non-manifold as a whole) surface, but every
    per-sphere component stays closed.
    """
    corners = _boundary_face_corners(sphere_set.template_tets)
    used = np.unique(corners)
    remap = np.full(sphere_set.spheres[0].num_vertices, -1, dtype=np.int64)
    remap[used] = np.arange(len(used))
    local_faces = remap[corners]
    b = len(used)
    verts = np.concatenate([s.vertices[used] for s in sphere_set.spheres], axis=0)
    faces = np.concatenate(
        [local_faces + k * b for k in range(sphere_set.num_spheres)], axis=0
    )
    return SurfaceMesh(vertices=verts, faces=faces)


def union_vertex_owners(sphere_set: TetSphereSet) -> tuple[np.ndarray, np.ndarray]:
    """Map union-surface vertex row -> (sphere index, vertex index in sphere)."""
    corners = _boundary_face_corners(sphere_set.template_tets)
    used = np.unique(corners)
    m = sphere_set.num_spheres
    sphere_idx = np.repeat(np.arange(m, dtype=np.int64), len(used))
    vertex_idx = np.tile(used, m)
    return sphere_idx, vertex_idx


def topology_fingerprint(sphere_set: TetSphereSet) -> bytes:
    """Bytes identifying sphere count, tet connectivity and boundary topology."""
    corners = _boundary_face_corners(sphere_set.template_tets)
    m = np.int64(sphere_set.num_spheres).tobytes()
    return m + sphere_set.template_tets.tobytes() + corners.tobytes()


def save_obj(mesh: SurfaceMesh, path) -> None:
    """Write a triangle surface as ASCII OBJ (1-based indices)."""
    with open(path, "w", encoding="ascii") as fh:
        for v in mesh.vertices:
            fh.write(f"v {v[0]:.9g} {v[1]:.9g} {v[2]:.9g}\n")
        for f in mesh.faces:
            fh.write(f"f {f[0] + 1} {f[1] + 1} {f[2] + 1}\n")


def _parse_obj_face_token(token: str, num_vertices: int, path, lineno: int) -> int:
    head = token.split("/", 1)[0]
    try:
        idx = int(head)
    except ValueError:
        raise MeshError(f"{path}:{lineno}: bad face index {token!r}") from None
    if idx <= 0:
        raise MeshError(f"{path}:{lineno}: face index {idx} (OBJ indices are 1-based)")
    if idx > num_vertices:
        raise MeshError(f"{path}:{lineno}: face index {idx} exceeds vertex count {num_vertices}")
    return idx - 1


def load_obj(path) -> SurfaceMesh:
    """Read an ASCII OBJ surface.

    Only v/f records are used. Faces with more than 3 vertices are fan
    triangulated around their first vertex. Malformed records raise
    MeshError naming the offending line.
    """
    verts: list = []
    faces: list = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            tag = parts[0]
            if tag == "v":
                if len(parts) < 4:
                    raise MeshError(f"{path}:{lineno}: vertex needs 3 coordinates")
                try:
                    verts.append([float(parts[1]), float(parts[2]), float(parts[3])])
                except ValueError:
                    raise MeshError(f"{path}:{lineno}: bad vertex coordinate") from None
            elif tag == "f":
                if len(parts) < 4:
                    raise MeshError(f"{path}:{lineno}: face needs at least 3 indices")
                idx = [
                    _parse_obj_face_token(tok, len(verts), path, lineno)
                    for tok in parts[1:]
                ]
                for a, b in zip(idx[1:-1], idx[2:]):
                    faces.append([idx[0], a, b])
            # vn/vt/usemtl/etc are ignored
    if not verts:
        raise MeshError(f"{path}: no vertices found")
    return SurfaceMesh(
        vertices=np.asarray(verts, dtype=np.float64),
        faces=np.asarray(faces, dtype=np.int64).reshape(-1, 3),
    )


def save_tetmesh(mesh: TetMesh, path) -> None:
    """Write a tet mesh in the sidecar text format.

    Header "tetmesh N T", then N lines "v x y z", then T lines
    "t a b c d" with 0-based vertex indices.
    """
    with open(path, "w", encoding="ascii") as fh:
        fh.write(f"tetmesh {mesh.num_vertices} {mesh.num_tets}\n")
        for v in mesh.vertices:
            fh.write(f"v {v[0]:.17g} {v[1]:.17g} {v[2]:.17g}\n")
        for t in mesh.tets:
            fh.write(f"t {t[0]} {t[1]} {t[2]} {t[3]}\n")


def load_tetmesh(path) -> TetMesh:
    """Read a tet mesh from the sidecar text format (see save_tetmesh)."""
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.readlines()
    if not lines:
        raise MeshError(f"{path}:1: empty file")
    head = lines[0].split()
    if len(head) != 3 or head[0] != "tetmesh":
        raise MeshError(f"{path}:1: expected header 'tetmesh N T'")
    try:
        n, t = int(head[1]), int(head[2])
    except ValueError:
        raise MeshError(f"{path}:1: bad counts in header") from None
    if len(lines) < 1 + n + t:
        raise MeshError(f"{path}: expected {1 + n + t} lines, file has {len(lines)}")
    verts = np.empty((n, 3), dtype=np.float64)
    for i in range(n):
        lineno = 2 + i
        parts = lines[1 + i].split()
        if len(parts) != 4 or parts[0] != "v":
            raise MeshError(f"{path}:{lineno}: expected 'v x y z'")
        try:
            verts[i] = [float(parts[1]), float(parts[2]), float(parts[3])]
        except ValueError:
            raise MeshError(f"{path}:{lineno}: bad vertex coordinate") from None
    tets = np.empty((t, 4), dtype=np.int64)
    for i in range(t):
        lineno = 2 + n + i
        parts = lines[1 + n + i].split()
        if len(parts) != 5 or parts[0] != "t":
            raise MeshError(f"{path}:{lineno}: expected 't a b c d'")
        try:
            tets[i] = [int(parts[1]), int(parts[2]), int(parts[3]), int(parts[4])]
        except ValueError:
            raise MeshError(f"{path}:{lineno}: bad tet index") from None
    return TetMesh(vertices=verts, tets=tets)
