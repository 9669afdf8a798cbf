"""Density fields, P1 finite-element operators and the diffusion velocity.

Planar 2-vectors (gradients, velocities) are stored as complex numbers
``x + 1j*y`` throughout, matching the complex vertex positions.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .mesh import CircularDomainSpec, TriangleMesh, as_complex, face_areas


@dataclass
class FEOperators:
    L: sp.csr_matrix  # cotangent matrix, off-diagonal (cot a + cot b)/2
    vertex_area: np.ndarray  # diagonal of A
    W: sp.csr_matrix  # |V| x |F| face-to-vertex averaging
    face_area: np.ndarray

    @property
    def A(self):
        return sp.diags(self.vertex_area)

    @property
    def n_vertices(self):
        return self.L.shape[0]


def _corner_cotangents(points, faces):
    p = np.asarray(points)
    if np.iscomplexobj(p):
        p = np.column_stack([p.real, p.imag, np.zeros(len(p))])
    elif p.shape[1] == 2:
        p = np.column_stack([p, np.zeros(len(p))])
    cot = np.empty(faces.shape)
    for k in range(3):
        o = p[faces[:, k]]
        u = p[faces[:, (k + 1) % 3]] - o
        w = p[faces[:, (k + 2) % 3]] - o
        cot[:, k] = np.einsum("ij,ij->i", u, w) / np.linalg.norm(np.cross(u, w), axis=1)
    return cot


def cotangent_matrix(points, faces) -> sp.csr_matrix:
    n = len(points)
    cot = _corner_cotangents(points, faces)
    rows, cols, vals = [], [], []
    for k in range(3):
        i, j = faces[:, (k + 1) % 3], faces[:, (k + 2) % 3]
        rows += [i, j]
        cols += [j, i]
        vals += [cot[:, k] / 2, cot[:, k] / 2]
    rows, cols, vals = np.concatenate(rows), np.concatenate(cols), np.concatenate(vals)
    off = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
    return (off - sp.diags(np.asarray(off.sum(axis=1)).ravel())).tocsr()


def averaging_matrix(faces, areas, n) -> sp.csr_matrix:
    rows = faces.reshape(-1)
    cols = np.repeat(np.arange(len(faces)), 3)
    M = sp.csr_matrix((np.repeat(areas, 3), (rows, cols)), shape=(n, len(faces)))
    total = np.asarray(M.sum(axis=1)).ravel()
    return (sp.diags(1.0 / total) @ M).tocsr()


def assemble_operators(points, faces) -> FEOperators:
    """Cotangent matrix L, lumped vertex areas A and averaging matrix W."""
    n = len(points)
    areas = face_areas(points, faces)
    va = np.bincount(faces.reshape(-1), weights=np.repeat(areas / 3, 3), minlength=n)
    return FEOperators(cotangent_matrix(points, faces), va, averaging_matrix(faces, areas, n), areas)


def face_density(pop, z, faces) -> np.ndarray:
    area = face_areas(as_complex(z), faces)
    if np.any(area <= 0):
        raise FloatingPointError(f"zero planar area on face {int(np.argmin(area))}")
    return np.asarray(pop, dtype=float) / area


def vertex_density(rho_f, ops: FEOperators) -> np.ndarray:
    return ops.W @ np.asarray(rho_f)


def diffusion_step(rho_v, ops: FEOperators, dt) -> np.ndarray:
    """One backward-Euler step (A - dt L) rho_new = A rho."""
    M = (sp.diags(ops.vertex_area) - dt * ops.L).tocsc()
    return spla.spsolve(M, ops.vertex_area * rho_v)


def hat_gradients(z, faces) -> np.ndarray:
    """(m, 3) complex gradients of the three hat functions on each planar face."""
    z = as_complex(z)
    tri = z[faces]
    e = np.stack([tri[:, 2] - tri[:, 1], tri[:, 0] - tri[:, 2], tri[:, 1] - tri[:, 0]], axis=1)
    twice_area = (np.conj(e[:, 2]) * -e[:, 1]).imag
    return 1j * e / twice_area[:, None]


def face_gradient(values, z, faces) -> np.ndarray:
    """Per-face gradient of the piecewise-linear interpolant, as x + iy."""
    g = hat_gradients(z, faces)
    return np.einsum("ij,ij->i", g, np.asarray(values)[faces])


def vertex_gradient(grad_f, ops: FEOperators) -> np.ndarray:
    return ops.W @ grad_f


def boundary_normals(z, loops, domain: CircularDomainSpec):
    """Outward-from-centre unit vectors at boundary vertices, loop by loop."""
    z = as_complex(z)
    out = []
    centers = np.concatenate([[0j], domain.centers])
    for lp, c in zip(loops, centers):
        d = z[lp.vertices] - c
        if np.any(d == 0):
            raise ValueError("boundary vertex coincides with its circle centre")
        out.append(d / np.abs(d))
    return out


def velocity(rho_v, z, faces, ops: FEOperators, loops=(), domain=None, neumann=False) -> np.ndarray:
    """Diffusion velocity -grad(rho)/rho at the vertices.

    In Neumann mode the component normal to each boundary circle is removed.
    """
    grad = vertex_gradient(face_gradient(rho_v, z, faces), ops)
    v = -grad / rho_v
    if neumann and loops:
        domain = domain if domain is not None else CircularDomainSpec.disk()
        for lp, nrm in zip(loops, boundary_normals(z, loops, domain)):
            vb = v[lp.vertices]
            v[lp.vertices] = vb - (vb * np.conj(nrm)).real * nrm
    return v


def project_boundary(z, domain: CircularDomainSpec, loops) -> np.ndarray:
    """Radially project each boundary loop onto its circle (outer loop first)."""
    z = as_complex(z).copy()
    centers = np.concatenate([[0j], domain.centers])
    radii = np.concatenate([[1.0], domain.radii])
    for lp, c, r in zip(loops, centers, radii):
        d = z[lp.vertices] - c
        if np.any(d == 0):
            raise ValueError("boundary vertex coincides with its circle centre")
        z[lp.vertices] = c + r * d / np.abs(d)
    return z


def density_velocity(pop, z, faces, loops, domain, diffusion_dt=0.0, neumann=True):
    """Face density -> vertex density -> optional diffusion -> velocity.

    Returns ``(velocity, vertex_density, operators)`` on the embedding ``z``.
    """
    ops = assemble_operators(z, faces)
    rho_f = face_density(pop, z, faces)
    rho_f = rho_f / rho_f.mean()
    rho_v = vertex_density(rho_f, ops)
    if diffusion_dt > 0:
        rho_v = diffusion_step(rho_v, ops, diffusion_dt)
    return velocity(rho_v, z, faces, ops, loops, domain, neumann), rho_v, ops


# ---------------------------------------------------------------- populations

def population_from_spec(spec, mesh: TriangleMesh) -> np.ndarray:
    """Resolve a population description to per-face values.

    ``spec`` is a list of |F| numbers, a dict directive (``area3d``,
    ``uniform`` or ``scaled`` with regions), a JSON string, or a path to a
    JSON file holding either.
    """
    if isinstance(spec, (str, Path)):
        text = str(spec)
        p = Path(text)
        spec = json.loads(p.read_text() if p.exists() else text)
    if isinstance(spec, dict):
        mode = spec.get("mode")
        area = mesh.face_areas()
        if mode == "area3d":
            pop = area
        elif mode == "uniform":
            pop = np.ones(mesh.n_faces)
        elif mode == "scaled":
            pop = area.copy()
            for region in spec.get("regions", []):
                pop[np.asarray(region["faces"], dtype=np.int64)] *= float(region["factor"])
        else:
            raise ValueError(f"unknown population mode {mode!r}")
    else:
        pop = np.asarray(spec, dtype=float)
    pop = np.asarray(pop, dtype=float)
    if pop.shape != (mesh.n_faces,):
        raise ValueError(f"population has {pop.size} entries, mesh has {mesh.n_faces} faces")
    if not np.all(np.isfinite(pop)) or np.any(pop <= 0):
        raise ValueError("population values must be positive and finite")
    return pop
