"""Synthetic test meshes: circular domains, rectangles with holes and lifted surfaces."""

from __future__ import annotations

import numpy as np
from scipy.spatial import Delaunay

from .mesh import MeshError, TriangleMesh, extract_boundaries, signed_areas


def _circle_points(center, radius, h, phase=0.0):
    n = max(8, int(np.ceil(2 * np.pi * radius / h)))
    t = phase + 2 * np.pi * np.arange(n) / n
    return center + radius * np.exp(1j * t)


def _hex_lattice(lo, hi, h):
    dy = h * np.sqrt(3) / 2
    ys = np.arange(lo.imag, hi.imag + dy, dy)
    pts = []
    for j, y in enumerate(ys):
        xs = np.arange(lo.real + (j % 2) * h / 2, hi.real + h, h)
        pts.append(xs + 1j * y)
    return np.concatenate(pts)


def _triangulate(points, inside, n_loops):
    tri = Delaunay(np.column_stack([points.real, points.imag]))
    faces = tri.simplices.astype(np.int64)
    cen = points[faces].mean(axis=1)
    faces = faces[inside(cen)]
    flip = signed_areas(points, faces) < 0
    faces[flip] = faces[flip][:, [0, 2, 1]]
    used = np.unique(faces)
    remap = -np.ones(len(points), np.int64)
    remap[used] = np.arange(len(used))
    mesh = TriangleMesh(np.column_stack([points[used].real, points[used].imag, np.zeros(len(used))]), remap[faces])
    mesh.validate()
    if len(extract_boundaries(mesh)) != n_loops:
        raise MeshError("generated mesh has unexpected boundary topology; try a smaller spacing")
    return mesh


def circular_domain_mesh(centers=(), radii=(), h=0.05, outer_radius=1.0, margin=0.7):
    """Flat mesh of a disk of radius ``outer_radius`` minus circular holes."""
    centers = np.asarray(centers, dtype=complex).reshape(-1)
    radii = np.asarray(radii, dtype=float).reshape(-1)
    R = outer_radius
    pts = [_circle_points(0.0, R, h)]
    for c, r in zip(centers, radii):
        pts.append(_circle_points(c, r, h))
    lat = _hex_lattice(complex(-R, -R), complex(R, R), h)
    keep = np.abs(lat) < R - margin * h
    for c, r in zip(centers, radii):
        keep &= np.abs(lat - c) > r + margin * h
    pts.append(lat[keep])
    points = np.concatenate(pts)

    def inside(p):
        ok = np.abs(p) < R
        for c, r in zip(centers, radii):
            ok &= np.abs(p - c) > r
        return ok

    return _triangulate(points, inside, 1 + len(radii))


def disk_mesh(h=0.05, radius=1.0):
    return circular_domain_mesh(h=h, outer_radius=radius)


def annulus_mesh(inner_radius=0.5, h=0.05):
    return circular_domain_mesh([0.0], [inner_radius], h=h)


def _rounded_box_distance(p, a, b, rc):
    """Signed distance to a centred a-by-b half-size box with corner radius rc."""
    qx = np.abs(p.real) - (a - rc)
    qy = np.abs(p.imag) - (b - rc)
    outside = np.hypot(np.maximum(qx, 0), np.maximum(qy, 0))
    return outside + np.minimum(np.maximum(qx, qy), 0) - rc


def _rounded_box_rim(a, b, rc, h):
    """Counter-clockwise boundary samples of a rounded box, spacing about h."""
    sx, sy = a - rc, b - rc
    pieces = []  # (start, end) segments or (centre, start angle) arcs, in order
    corners = [complex(sx, -sy), complex(sx, sy), complex(-sx, sy), complex(-sx, -sy)]
    sides = [(complex(-sx, -b), complex(sx, -b)), (complex(a, -sy), complex(a, sy)),
             (complex(sx, b), complex(-sx, b)), (complex(-a, sy), complex(-a, -sy))]
    for k in range(4):
        pieces.append(("seg", *sides[k]))
        pieces.append(("arc", corners[k], -np.pi / 2 + k * np.pi / 2))
    pts = []
    for kind, p, q in pieces:
        if kind == "seg":
            n = max(1, int(np.ceil(abs(q - p) / h)))
            pts.append(p + (q - p) * np.arange(n) / n)
        elif rc > 0:
            n = max(1, int(np.ceil(rc * np.pi / 2 / h)))
            pts.append(p + rc * np.exp(1j * (q + np.pi / 2 * np.arange(n) / n)))
    rim = np.concatenate(pts)
    keep = np.abs(rim - np.roll(rim, 1)) > 1e-12
    return rim[keep]


def rectangle_mesh(width=2.0, height=2.0, centers=(), radii=(), h=0.05, margin=0.7, corner_radius=0.0):
    """Axis-aligned rectangle centred at the origin, optionally with circular holes.

    A positive ``corner_radius`` rounds the four corners.
    """
    centers = np.asarray(centers, dtype=complex).reshape(-1)
    radii = np.asarray(radii, dtype=float).reshape(-1)
    a, b = width / 2, height / 2
    if not 0 <= corner_radius <= min(a, b):
        raise ValueError("corner_radius must lie between 0 and half the shorter side")
    pts = [_rounded_box_rim(a, b, corner_radius, h)]
    for c, r in zip(centers, radii):
        pts.append(_circle_points(c, r, h))
    lat = _hex_lattice(complex(-a, -b), complex(a, b), h)
    keep = _rounded_box_distance(lat, a, b, corner_radius) < -margin * h
    for c, r in zip(centers, radii):
        keep &= np.abs(lat - c) > r + margin * h
    pts.append(lat[keep])
    points = np.concatenate(pts)

    def inside(p):
        ok = np.ones(len(p), bool)
        for c, r in zip(centers, radii):
            ok &= np.abs(p - c) > r
        return ok

    return _triangulate(points, inside, 1 + len(radii))


def grid_mesh(n=20, size=1.0):
    """Regular right-triangle grid on [0, size]^2 with alternating diagonals."""
    t = np.linspace(0.0, size, n + 1)
    x, y = np.meshgrid(t, t, indexing="ij")
    v = np.column_stack([x.ravel(), y.ravel(), np.zeros(x.size)])
    idx = np.arange((n + 1) ** 2).reshape(n + 1, n + 1)
    faces = []
    for i in range(n):
        for j in range(n):
            a, b, c, d = idx[i, j], idx[i + 1, j], idx[i + 1, j + 1], idx[i, j + 1]
            if (i + j) % 2:
                faces += [[a, b, c], [a, c, d]]
            else:
                faces += [[a, b, d], [b, c, d]]
    return TriangleMesh(v, np.array(faces))


def lift(mesh: TriangleMesh, height) -> TriangleMesh:
    """Graph surface z = height(x, y) over a flat mesh."""
    x, y = mesh.vertices[:, 0], mesh.vertices[:, 1]
    return TriangleMesh(np.column_stack([x, y, height(x, y)]), mesh.faces.copy())


def bump_surface(h=0.05, amplitude=0.6, width=0.4, centers=(), radii=()):
    """Gaussian bump over the unit disk (optionally with holes)."""
    base = circular_domain_mesh(centers, radii, h=h)
    return lift(base, lambda x, y: amplitude * np.exp(-(x**2 + y**2) / width**2))


def hemisphere(h=0.05):
    """Unit hemisphere; the disk radius is mapped linearly to the polar angle."""
    base = disk_mesh(h)
    x, y = base.vertices[:, 0], base.vertices[:, 1]
    rho = np.hypot(x, y)
    theta = rho * np.pi / 2
    phi = np.arctan2(y, x)
    v = np.column_stack([np.sin(theta) * np.cos(phi), np.sin(theta) * np.sin(phi), np.cos(theta)])
    return TriangleMesh(v, base.faces.copy())


def cylinder_patch(n_around=12, n_up=8, radius=1.0, angle=np.pi, height=1.0):
    """Polyhedral cylinder strip and its exact isometric unrolling.

    Vertices sit on rulings, so each quad strip is planar and the unrolling
    lays strips side by side using chord widths.
    """
    phi = np.linspace(0.0, angle, n_around + 1)
    ys = np.linspace(0.0, height, n_up + 1)
    chord = 2 * radius * np.sin((phi[1] - phi[0]) / 2)
    P, Y = np.meshgrid(phi, ys, indexing="ij")
    v = np.column_stack([radius * np.sin(P.ravel()), Y.ravel(), radius * np.cos(P.ravel())])
    X = np.arange(n_around + 1)[:, None] * chord * np.ones_like(Y)
    flat = (X + 1j * Y).ravel()
    idx = np.arange(v.shape[0]).reshape(n_around + 1, n_up + 1)
    faces = []
    for i in range(n_around):
        for j in range(n_up):
            a, b, c, d = idx[i, j], idx[i + 1, j], idx[i + 1, j + 1], idx[i, j + 1]
            faces += [[a, b, c], [a, c, d]]
    faces = np.array(faces)
    if np.any(signed_areas(flat, faces) < 0):
        faces = faces[:, [0, 2, 1]]
    return TriangleMesh(v, faces), flat
