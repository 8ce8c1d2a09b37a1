"""Deformation gradients, face-adjacency Laplacian, and geometry energies.

The deformation gradient of a tet is F = Ds * Dm^-1, where Ds holds the
deformed edge vectors as columns and Dm the rest edge vectors. F is linear
in the vertex positions, equals the identity at rest, and equals A exactly
under any global affine map x = A*X + b.

Two energies regularize the per-tet field F:
  * biharmonic: ||L F||^2 with L the face-adjacency tet Laplacian, zero for
    any field constant on each connected tet component,
  * non-inversion: sum over tets of min(0, det F)^2, zero iff no tet has a
    negative determinant.
Both gradients with respect to vertex positions are analytic.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from .tet_mesh import MeshError, TetMesh, TetSphereSet

__all__ = [
    "rest_inverses",
    "deformation_gradients",
    "build_laplacian",
    "biharmonic_energy",
    "inversion_penalty",
    "count_inverted",
    "geometric_energy_gradient",
]

_DEGENERACY_RTOL = 1e-12


def _edge_matrices(positions: np.ndarray, tets: np.ndarray) -> np.ndarray:
    """Per-tet 3x3 matrices whose columns are the edges to the first vertex."""
    v = positions[tets]
    return np.stack([v[:, 1] - v[:, 0], v[:, 2] - v[:, 0], v[:, 3] - v[:, 0]], axis=2)


def rest_inverses(mesh: TetMesh) -> np.ndarray:
    """Per-tet Dm^-1 such that F = Ds * Dm^-1. Cached on the mesh.

    Degeneracy is judged against the rest bounding-box diagonal: a tet with
    |det Dm| <= 1e-12 * diag^3 is reported by index as degenerate.
    """
    if mesh.rest_inverse is not None:
        return mesh.rest_inverse
    dm = _edge_matrices(mesh.rest_vertices, mesh.tets)
    dets = np.linalg.det(dm)
    diag = float(np.linalg.norm(mesh.rest_vertices.max(0) - mesh.rest_vertices.min(0)))
    scale = max(diag, 1e-30)
    bad = np.abs(dets) <= _DEGENERACY_RTOL * scale**3
    if np.any(bad):
        idx = int(np.nonzero(bad)[0][0])
        raise MeshError(
            f"degenerate rest tetrahedron {idx}: |det Dm| = {abs(dets[idx]):.3e}"
        )
    mesh.rest_inverse = np.linalg.inv(dm)
    return mesh.rest_inverse


def deformation_gradients(x: np.ndarray, mesh: TetMesh) -> np.ndarray:
    """Per-tet F = Ds(x) * Dm^-1 as a (T, 3, 3) array.

    Evaluated as I + (Ds - Dm) Dm^-1, which is the same matrix but exact at
    the rest state: an undeformed mesh yields F = I bitwise, so downstream
    energies and gradients vanish identically instead of leaving rounding
    dust for the optimizer to chase.
    """
    x = np.asarray(x, dtype=np.float64).reshape(-1, 3)
    ds = _edge_matrices(x, mesh.tets)
    dm = _edge_matrices(mesh.rest_vertices, mesh.tets)
    return np.eye(3) + (ds - dm) @ rest_inverses(mesh)


def _tet_lists(topology) -> list:
    if isinstance(topology, TetSphereSet):
        return [s.tets for s in topology.spheres]
    if isinstance(topology, TetMesh):
        return [topology.tets]
    return [np.ascontiguousarray(t, dtype=np.int64) for t in topology]


def _face_adjacent_pairs(tets: np.ndarray) -> np.ndarray:
    """Pairs (p, q), p < q, of tets sharing a triangular face."""
    t = len(tets)
    faces = np.sort(tets[:, [[1, 2, 3], [0, 2, 3], [0, 1, 3], [0, 1, 2]]].reshape(-1, 3), axis=1)
    owner = np.repeat(np.arange(t, dtype=np.int64), 4)
    order = np.lexsort((faces[:, 2], faces[:, 1], faces[:, 0]))
    faces, owner = faces[order], owner[order]
    same = np.all(faces[1:] == faces[:-1], axis=1)
    p = owner[:-1][same]
    q = owner[1:][same]
    lo, hi = np.minimum(p, q), np.maximum(p, q)
    return np.stack([lo, hi], axis=1)


def build_laplacian(topology) -> sp.csr_matrix:
    """Face-adjacency tet Laplacian over one mesh or a sphere collection.

    Returns the scalar MT x MT matrix: -1 between face-adjacent tets,
    neighbor count on the diagonal, applied identically to each of the 9
    components of the flattened gradient field. Adjacency never crosses
    sphere boundaries. Symmetric, positive semidefinite, zero row sums.
    """
    tet_lists = _tet_lists(topology)
    shared_template = (
        isinstance(topology, TetSphereSet)
        and all(s.tets is topology.template_tets for s in topology.spheres)
    )
    rows, cols = [], []
    offset = 0
    template_pairs = None
    for tets in tet_lists:
        if shared_template and template_pairs is not None:
            pairs = template_pairs
        else:
            pairs = _face_adjacent_pairs(tets)
            if shared_template:
                template_pairs = pairs
        if len(pairs):
            rows.append(pairs[:, 0] + offset)
            cols.append(pairs[:, 1] + offset)
        offset += len(tets)
    total = offset
    if rows:
        p = np.concatenate(rows)
        q = np.concatenate(cols)
    else:
        p = q = np.empty(0, dtype=np.int64)
    data = np.concatenate([-np.ones(2 * len(p)), np.ones(2 * len(p))])
    r = np.concatenate([p, q, p, q])
    c = np.concatenate([q, p, p, q])
    lap = sp.coo_matrix((data, (r, c)), shape=(total, total)).tocsr()
    lap.sum_duplicates()
    return lap


def _as_flat_field(field: np.ndarray) -> np.ndarray:
    field = np.asarray(field, dtype=np.float64)
    if field.ndim == 3:
        return field.reshape(len(field), 9)
    if field.ndim == 2 and field.shape[1] == 9:
        return field
    raise ValueError(f"expected a (T, 3, 3) or (T, 9) field, got {field.shape}")


def biharmonic_energy(field: np.ndarray, laplacian: sp.csr_matrix) -> float:
    """||L F||^2, the squared Frobenius norm of the Laplacian-filtered field."""
    flat = _as_flat_field(field)
    if laplacian.shape[0] != len(flat):
        raise ValueError(
            f"field has {len(flat)} tets but Laplacian is {laplacian.shape[0]}"
        )
    y = laplacian @ flat
    return float(np.sum(y * y))


def inversion_penalty(field: np.ndarray) -> float:
    """Sum over tets of min(0, det F)^2; zero iff all determinants >= 0."""
    flat = _as_flat_field(field)
    dets = np.linalg.det(flat.reshape(-1, 3, 3))
    neg = np.minimum(dets, 0.0)
    return float(np.dot(neg, neg))


def count_inverted(field: np.ndarray) -> int:
    """Number of tets with det F <= 0."""
    flat = _as_flat_field(field)
    dets = np.linalg.det(flat.reshape(-1, 3, 3))
    return int(np.count_nonzero(dets <= 0.0))


def _cofactor_matrices(f: np.ndarray) -> np.ndarray:
    """d det(F) / dF per tet; columns are cross products of F's columns."""
    c1, c2, c3 = f[:, :, 0], f[:, :, 1], f[:, :, 2]
    return np.stack(
        [np.cross(c2, c3), np.cross(c3, c1), np.cross(c1, c2)], axis=2
    )


def _meshes_of(topology) -> list:
    if isinstance(topology, TetSphereSet):
        return topology.spheres
    if isinstance(topology, TetMesh):
        return [topology]
    raise TypeError("expected a TetMesh or TetSphereSet")


def geometric_energy_gradient(x, topology, laplacian, w1: float, w2: float) -> np.ndarray:
    """Analytic gradient of w1*||L F||^2 + w2*sum(min(0, det F)^2).

    x holds all vertex positions (any shape reshapable to (sum N, 3), sphere
    blocks stacked in order). Returns the flattened gradient, one entry per
    coordinate. The biharmonic part applies L twice and pulls the result
    back through each tet's Dm^-1; the determinant part uses cofactor
    matrices, which stay well defined for singular F.
    """
    meshes = _meshes_of(topology)
    x = np.asarray(x, dtype=np.float64).reshape(-1, 3)
    counts = [m.num_vertices for m in meshes]
    if len(x) != sum(counts):
        raise ValueError(f"x has {len(x)} vertices, topology has {sum(counts)}")

    fields = []
    offsets = np.cumsum([0] + counts)
    for mesh, off in zip(meshes, offsets[:-1]):
        fields.append(deformation_gradients(x[off : off + mesh.num_vertices], mesh))
    f_all = np.concatenate(fields, axis=0)
    total_tets = len(f_all)
    if laplacian.shape[0] != total_tets:
        raise ValueError(
            f"Laplacian is {laplacian.shape[0]} but topology has {total_tets} tets"
        )

    g_field = np.zeros((total_tets, 3, 3))
    if w1 != 0.0:
        flat = f_all.reshape(total_tets, 9)
        g_field += (2.0 * w1) * (laplacian @ (laplacian @ flat)).reshape(total_tets, 3, 3)
    if w2 != 0.0:
        dets = np.linalg.det(f_all)
        active = np.minimum(dets, 0.0)
        if np.any(active < 0.0):
            g_field += (2.0 * w2 * active)[:, None, None] * _cofactor_matrices(f_all)

    grad = np.zeros_like(x)
    tet_off = 0
    for mesh, off in zip(meshes, offsets[:-1]):
        t = mesh.num_tets
        g = g_field[tet_off : tet_off + t]
        tet_off += t
        if t == 0:
            continue
        dminv = rest_inverses(mesh)
        # dE/dDs = dE/dF * Dm^-T; column k lands on vertex k+1, the first
        # vertex collects minus the column sum
        h = g @ np.transpose(dminv, (0, 2, 1))
        tets = mesh.tets
        np.add.at(grad, off + tets[:, 1], h[:, :, 0])
        np.add.at(grad, off + tets[:, 2], h[:, :, 1])
        np.add.at(grad, off + tets[:, 3], h[:, :, 2])
        np.add.at(grad, off + tets[:, 0], -h.sum(axis=2))
    return grad.ravel()
