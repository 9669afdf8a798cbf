"""Uses of a finished flattening: texture coordinates and remeshing through the inverse map."""

from __future__ import annotations

import numpy as np

from .flatten import fit_circle
from .mesh import CircularDomainSpec, PointLocator, TriangleMesh, as_complex, count_flips, extract_boundaries, face_areas
from .meshgen import _triangulate


def domain_of(mesh: TriangleMesh, z) -> CircularDomainSpec:
    """Circles fitted to the inner boundary loops of a flattened mesh."""
    loops = extract_boundaries(mesh, z)
    fits = [fit_circle(as_complex(z)[lp.vertices]) for lp in loops[1:]]
    return CircularDomainSpec([c for c, _ in fits], [r for _, r in fits])


def require_flip_free(z, faces):
    flips = count_flips(z, faces)
    if flips:
        raise ValueError(f"flattened result has {flips} flipped faces")


# ---------------------------------------------------------------- texture

def texture_coordinates(z) -> np.ndarray:
    """Map the unit disk onto the unit square [0, 1]^2, as an (n, 2) array."""
    uv = (as_complex(z) + (1 + 1j)) / 2
    return np.column_stack([uv.real, uv.imag])


def texture_statistics(mesh: TriangleMesh, uv, grid=8) -> dict:
    """Per-face texture distortion data.

    ``texture_density`` is surface area per unit texture area, normalised to
    mean one; for an area-proportional population it coincides with the
    normalised density of the flattening.  ``checker`` is the index of the
    ``grid`` x ``grid`` checkerboard cell holding the face centroid.
    """
    uv = np.asarray(uv, dtype=float)
    uv_area = face_areas(uv, mesh.faces)
    surf_area = mesh.face_areas()
    density = surf_area / uv_area
    centroid = uv[mesh.faces].mean(axis=1)
    cell = np.clip(np.floor(centroid * grid).astype(int), 0, grid - 1)
    return {
        "face": np.arange(mesh.n_faces),
        "checker": cell[:, 0] * grid + cell[:, 1],
        "checker_colour": (cell[:, 0] + cell[:, 1]) % 2,
        "uv_area": uv_area,
        "surface_area": surf_area,
        "uv_over_surface": uv_area / surf_area,
        "texture_density": density / density.mean(),
    }


# ---------------------------------------------------------------- remeshing

def ring_mesh(domain: CircularDomainSpec, rings=20) -> TriangleMesh:
    """Structured concentric-ring triangulation of a circular domain.

    Ring k has radius k/rings and about 6k equally spaced samples; samples
    inside or too close to a hole are dropped and each hole circle is
    sampled at the ring spacing instead.
    """
    if rings < 2:
        raise ValueError("need at least two rings")
    h = 1.0 / rings
    pts = [np.zeros(1, complex)]
    for k in range(1, rings + 1):
        n = 6 * k
        pts.append(k * h * np.exp(2j * np.pi * (np.arange(n) + 0.5 * (k % 2)) / n))
    points = np.concatenate(pts)
    keep = np.ones(len(points), bool)
    for c, r in zip(domain.centers, domain.radii):
        keep &= np.abs(points - c) > r + 0.5 * h
    points = [points[keep]]
    for c, r in zip(domain.centers, domain.radii):
        n = max(8, int(np.ceil(2 * np.pi * r / h)))
        points.append(c + r * np.exp(2j * np.pi * np.arange(n) / n))
    points = np.concatenate(points)

    def outside_holes(p):
        ok = np.ones(len(p), bool)
        for c, r in zip(domain.centers, domain.radii):
            ok &= np.abs(p - c) > r
        return ok

    return _triangulate(points, outside_holes, 1 + domain.n_holes)


def map_to_surface(mesh: TriangleMesh, z, points):
    """3D images of planar ``points`` under the inverse of the flattening ``z``.

    Returns ``(positions, found)``; points that cannot be located (outside
    the flattened mesh even after snapping to its boundary) get NaN.
    """
    locator = PointLocator(as_complex(z), mesh.faces)
    out = np.full((len(points), 3), np.nan)
    found = np.zeros(len(points), bool)
    for i, p in enumerate(as_complex(points)):
        hit = locator.locate(p, snap=True)
        if hit is not None:
            face, w = hit
            out[i] = w @ mesh.vertices[mesh.faces[face]]
            found[i] = True
    return out, found


def remesh(mesh: TriangleMesh, z, rings=20, domain: CircularDomainSpec | None = None) -> TriangleMesh:
    """Regular planar mesh of the flattened domain carried back onto the surface."""
    require_flip_free(z, mesh.faces)
    domain = domain if domain is not None else domain_of(mesh, z)
    planar = ring_mesh(domain, rings)
    pos, found = map_to_surface(mesh, z, planar.vertices[:, :2])
    if not found.all():
        raise ValueError(f"{int((~found).sum())} remesh samples fell outside the flattened mesh")
    return TriangleMesh(pos, planar.faces.copy())


def area_variation(mesh: TriangleMesh) -> float:
    """Coefficient of variation of the face areas."""
    a = mesh.face_areas()
    return float(a.std() / a.mean())
