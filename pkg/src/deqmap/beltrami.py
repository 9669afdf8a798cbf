"""Beltrami coefficients, the linear Beltrami solver and related operators."""

from __future__ import annotations

import logging

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .density import FEOperators
from .mesh import LandmarkSet, TriangleMesh, as_complex

log = logging.getLogger(__name__)

NEAR_ONE = 1.0 - 1e-9


def source_triangles(source, faces, intrinsic=False) -> np.ndarray:
    """Per-face corner coordinates in the face's own plane, as (m, 3) complex.

    A planar source (complex positions or a flat mesh) is used as is; a 3D
    mesh, or any mesh when ``intrinsic`` is set, is flattened face by face
    with edge lengths preserved.  A (m, 3) complex array is taken to be the
    per-face triangles already.
    """
    if _per_face(source):
        return np.asarray(source, dtype=complex)
    if isinstance(source, TriangleMesh):
        if intrinsic or not source.is_planar():
            return isometric_triangles(source.vertices, faces)
        source = source.vertices
    return as_complex(source)[faces]


def _per_face(source):
    return isinstance(source, np.ndarray) and source.ndim == 2 and np.iscomplexobj(source)


def isometric_triangles(vertices, faces) -> np.ndarray:
    p = vertices[faces]
    e1 = p[:, 1] - p[:, 0]
    e2 = p[:, 2] - p[:, 0]
    l1 = np.linalg.norm(e1, axis=1)
    l2 = np.linalg.norm(e2, axis=1)
    cos = np.einsum("ij,ij->i", e1, e2)
    sin = np.linalg.norm(np.cross(e1, e2), axis=1)
    ang = np.arctan2(sin, cos)
    return np.column_stack([np.zeros(len(faces)), l1, l2 * np.exp(1j * ang)]).astype(complex)


def _hat_gradients(tri):
    e = np.stack([tri[:, 2] - tri[:, 1], tri[:, 0] - tri[:, 2], tri[:, 1] - tri[:, 0]], axis=1)
    twice_area = (np.conj(e[:, 2]) * -e[:, 1]).imag
    if np.any(twice_area <= 0):
        bad = int(np.argmin(twice_area))
        raise FloatingPointError(f"degenerate or inverted source face {bad}")
    return 1j * e / twice_area[:, None], twice_area / 2


def wirtinger_weights(tri):
    """Coefficients so that f_z = sum(dz * f_k) and f_zbar = sum(dzbar * f_k)."""
    g, _ = _hat_gradients(tri)
    return np.conj(g) / 2, g / 2


def affine_coefficients(tri, target_tri):
    """(a, b, c, d) = (u_x, u_y, v_x, v_y) of the affine map on each face."""
    g, _ = _hat_gradients(tri)
    u, v = target_tri.real, target_tri.imag
    a = np.einsum("ij,ij->i", g.real, u)
    b = np.einsum("ij,ij->i", g.imag, u)
    c = np.einsum("ij,ij->i", g.real, v)
    d = np.einsum("ij,ij->i", g.imag, v)
    return a, b, c, d


def wirtinger(tri, target_tri):
    a, b, c, d = affine_coefficients(tri, target_tri)
    fz = ((a + d) + 1j * (c - b)) / 2
    fzbar = ((a - d) + 1j * (c + b)) / 2
    return fz, fzbar


def beltrami_from_planar_map(source, target, faces) -> np.ndarray:
    fz, fzbar = wirtinger(as_complex(source)[faces], as_complex(target)[faces])
    return fzbar / fz


def beltrami_from_surface_map(mesh: TriangleMesh, target) -> np.ndarray:
    """Coefficient of a map from the surface; curved faces are measured in their own isometric frames."""
    fz, fzbar = wirtinger(source_triangles(mesh, mesh.faces), as_complex(target)[mesh.faces])
    return fzbar / fz


def lbs_coefficients(nu):
    rho, tau = np.real(nu), np.imag(nu)
    den = 1.0 - rho**2 - tau**2
    a1 = ((rho - 1) ** 2 + tau**2) / den
    a2 = -2 * tau / den
    a3 = ((1 + rho) ** 2 + tau**2) / den
    return a1, a2, a3


def lbs_matrix(nu, tri, faces, n) -> sp.csr_matrix:
    """Stiffness matrix of div(A(nu) grad .) assembled face by face."""
    g, area = _hat_gradients(tri)
    a1, a2, a3 = lbs_coefficients(nu)
    gx, gy = g.real, g.imag
    rows, cols, vals = [], [], []
    for i in range(3):
        for j in range(3):
            k = area * (a1 * gx[:, i] * gx[:, j] + a2 * (gx[:, i] * gy[:, j] + gy[:, i] * gx[:, j]) + a3 * gy[:, i] * gy[:, j])
            rows.append(faces[:, i])
            cols.append(faces[:, j])
            vals.append(k)
    return sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n))


def lbs_reconstruct(nu, source, faces, boundary, boundary_targets, landmarks: LandmarkSet | None = None, intrinsic=False) -> np.ndarray:
    """Planar map with Beltrami coefficient ~ nu and prescribed Dirichlet data.

    Parameters
    ----------
    nu : (m,) complex, sup|nu| < 1, expressed in the source frame
    source : planar positions (complex), a TriangleMesh, or (m, 3) per-face triangles
    boundary : indices of constrained boundary vertices
    boundary_targets : complex targets for ``boundary``
    landmarks : optional extra hard constraints
    intrinsic : use per-face edge-length geometry of a mesh source

    Returns
    -------
    (n,) complex vertex positions
    """
    nu = np.asarray(nu, dtype=complex)
    mag = np.abs(nu)
    if np.any(mag >= 1):
        raise ValueError(f"|nu| >= 1 on face {int(np.argmax(mag))}; apply chop first")
    if np.any(mag > NEAR_ONE):
        log.warning("LBS received %d faces with |nu| within 1e-9 of 1", int(np.sum(mag > NEAR_ONE)))
    tri = source_triangles(source, faces, intrinsic)
    if isinstance(source, TriangleMesh):
        n = source.n_vertices
    elif _per_face(source):
        n = int(faces.max()) + 1
    else:
        n = len(as_complex(source))
    fixed = np.asarray(boundary, dtype=np.int64)
    values = np.asarray(boundary_targets, dtype=complex)
    if landmarks is not None and len(landmarks):
        fixed = np.concatenate([fixed, landmarks.vertices])
        values = np.concatenate([values, landmarks.targets])
    out = np.zeros(n, complex)
    out[fixed] = values
    free = np.ones(n, bool)
    free[fixed] = False
    free_idx = np.nonzero(free)[0]
    if len(free_idx) == 0:
        return out
    K = lbs_matrix(nu, tri, faces, n)
    K_ff = K[free_idx][:, free_idx].tocsc()
    rhs = -(K[free_idx][:, fixed] @ values)
    lu = spla.splu(K_ff, permc_spec="MMD_AT_PLUS_A")
    sol = lu.solve(np.column_stack([rhs.real, rhs.imag]))
    out[free_idx] = sol[:, 0] + 1j * sol[:, 1]
    return out


def chop(nu, delta=0.1) -> np.ndarray:
    """Shrink every |nu| >= 1 by factors (1 - delta) until it drops below 1."""
    if not 0 < delta < 1:
        raise ValueError("delta must lie in (0, 1)")
    nu = np.array(nu, dtype=complex)
    mask = np.abs(nu) >= 1
    while mask.any():
        nu[mask] *= 1 - delta
        mask = np.abs(nu) >= 1
    return nu


def to_vertices(nu, ops: FEOperators) -> np.ndarray:
    return ops.W @ nu


def to_faces(nu_v, faces) -> np.ndarray:
    return nu_v[faces].mean(axis=1)


def beltrami_laplacian(nu, ops: FEOperators, faces) -> np.ndarray:
    nu_v = to_vertices(nu, ops)
    return to_faces((ops.L @ nu_v) / ops.vertex_area, faces)


def smoothing_increment(nu, ops: FEOperators, faces, tau) -> np.ndarray:
    """Implicit counterpart of ``tau * laplacian(nu)`` on faces.

    Solves (A - tau L) x = A nu_v for the vertex field and returns the face
    transfer of x - nu_v.  First-order equal to the explicit increment but
    stable for any tau.
    """
    nu_v = to_vertices(nu, ops)
    if tau == 0:
        return np.zeros(len(faces), complex)
    M = (sp.diags(ops.vertex_area) - tau * ops.L).tocsc()
    lu = spla.splu(M)
    b = ops.vertex_area * nu_v
    x = lu.solve(np.column_stack([b.real, b.imag]))
    return to_faces(x[:, 0] + 1j * x[:, 1] - nu_v, faces)


def qc_energies(nu, ops: FEOperators, faces):
    """Area-weighted |nu|^2 and the cotangent Dirichlet energy of vertex-averaged nu."""
    e2 = float(np.sum(ops.face_area * np.abs(nu) ** 2))
    nu_v = to_vertices(nu, ops)
    e3 = float(-np.real(np.vdot(nu_v, ops.L @ nu_v)))
    return e2, e3


def dilation(nu) -> float:
    s = float(np.max(np.abs(nu))) if len(nu) else 0.0
    if s >= 1:
        raise ValueError("sup|nu| >= 1: map is not quasiconformal")
    return (1 + s) / (1 - s)
