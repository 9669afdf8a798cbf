"""Initial conformal flattening onto the unit disk or a circular domain."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.sparse.linalg as spla
from scipy.spatial import Delaunay

from .beltrami import beltrami_from_surface_map, isometric_triangles, lbs_matrix, lbs_reconstruct
from .density import project_boundary
from .mesh import CircularDomainSpec, TriangleMesh, as_complex, count_flips, extract_boundaries, signed_areas

log = logging.getLogger(__name__)


def fit_circle(z):
    """Algebraic (Kasa) least-squares circle through complex points -> (centre, radius)."""
    z = as_complex(z)
    x, y = z.real, z.imag
    M = np.column_stack([x, y, np.ones_like(x)])
    sol, *_ = np.linalg.lstsq(M, x**2 + y**2, rcond=None)
    c = complex(sol[0] / 2, sol[1] / 2)
    r = float(np.sqrt(sol[2] + abs(c) ** 2))
    return c, r


def circularity(z, loop) -> float:
    pts = as_complex(z)[loop]
    c, r = fit_circle(pts)
    return float(np.max(np.abs(np.abs(pts - c) - r)) / r)


def fill_loops(points, faces, loops):
    """Close each loop with a fan around its vertex centroid.

    Returns the extended point array, extended faces and the index of every
    added centre vertex (one per loop, in order).
    """
    pts = np.asarray(points)
    extra, new_faces, centres = [], [], []
    n = len(pts)
    for lp in loops:
        lp = np.asarray(lp)
        c = n + len(extra)
        extra.append(pts[lp].mean(axis=0))
        centres.append(c)
        new_faces.append(np.column_stack([np.roll(lp, -1), lp, np.full(len(lp), c)]))
    if not extra:
        return pts, faces, []
    return np.concatenate([pts, np.array(extra)]), np.vstack([faces, *new_faces]), centres


def _arclength_targets(points, loop):
    p = np.asarray(points)
    if np.iscomplexobj(p):
        seg = np.abs(p[np.roll(loop, -1)] - p[loop])
    else:
        seg = np.linalg.norm(p[np.roll(loop, -1)] - p[loop], axis=1)
    s = np.concatenate([[0.0], np.cumsum(seg)[:-1]]) / seg.sum()
    return np.exp(2j * np.pi * s)


def disk_conformal(mesh: TriangleMesh, rounds=5, tol=1e-3) -> np.ndarray:
    """Flatten a simply-connected mesh onto the unit disk.

    Starts from an arc-length boundary parametrisation with harmonic
    extension.  Each correction round re-distributes the boundary by the
    discrete harmonic measure seen from the vertex currently nearest the
    origin and re-solves; this removes the angle distortion that a fixed
    boundary cannot.  A round is kept only if it lowers mean |mu| without
    flipping faces, and rounds stop once the gain falls below ``tol``.
    """
    loops = extract_boundaries(mesh)
    if len(loops) != 1:
        raise ValueError(f"disk_conformal needs exactly one boundary loop, got {len(loops)}")
    lp = loops[0].vertices
    faces = mesh.faces
    nu0 = np.zeros(len(faces))
    z = lbs_reconstruct(nu0, mesh, faces, lp, _arclength_targets(mesh.vertices, lp))
    if count_flips(z, faces):
        raise FloatingPointError("harmonic disk map has flipped faces")
    tri = isometric_triangles(mesh.vertices, faces)
    interior = np.ones(mesh.n_vertices, bool)
    interior[lp] = False
    inner = np.flatnonzero(interior)
    if len(inner) == 0:
        return z
    best = float(np.mean(np.abs(beltrami_from_surface_map(mesh, z))))
    for _ in range(rounds):
        base = int(inner[np.argmin(np.abs(z[inner]))])
        g = lbs_reconstruct(nu0, tri, faces, lp, harmonic_measure_targets(tri, faces, lp, base))
        if count_flips(g, faces):
            log.warning("boundary correction produced flips; keeping the previous map")
            break
        score = float(np.mean(np.abs(beltrami_from_surface_map(mesh, g))))
        if score >= best:
            break
        z, gain, best = g, best - score, score
        if gain < tol:
            break
    return z


def harmonic_measure_targets(tri, faces, loop, base):
    """Unit-circle positions for ``loop`` from the discrete harmonic measure seen from ``base``.

    Solves the cotangent Green's problem with a unit source at ``base`` and
    zero Dirichlet data on the loop; the boundary fluxes (summing to one)
    are the angular widths of each vertex's dual arc.
    """
    n = int(faces.max()) + 1
    K = lbs_matrix(np.zeros(len(faces)), tri, faces, n).tocsr()
    free = np.ones(n, bool)
    free[loop] = False
    idx = np.nonzero(free)[0]
    rhs = (idx == base).astype(float)
    G = np.zeros(n)
    G[idx] = spla.spsolve(K[idx][:, idx].tocsc(), rhs)
    flux = -(K[loop] @ G)
    flux = np.maximum(flux, 1e-3 * flux.mean())
    flux /= flux.sum()
    theta = 2 * np.pi * (np.cumsum(flux) - flux / 2)
    return np.exp(1j * theta)


def _inside_polygon(points, poly):
    x, y = points.real[:, None], points.imag[:, None]
    a, b = poly[None, :], np.roll(poly, -1)[None, :]
    cross = (a.imag > y) != (b.imag > y)
    with np.errstate(divide="ignore", invalid="ignore"):
        xint = a.real + (y - a.imag) * (b.real - a.real) / (b.imag - a.imag)
    return np.count_nonzero(cross & (x < xint), axis=1) % 2 == 1


def cap_triangulation(poly, apex=None, density=1.0):
    """Triangulate the inside of a simple polygon, keeping its edges.

    Interior points come from a hexagonal lattice at the mean edge length;
    ``apex`` (if given) is inserted as an extra interior point.  Returns the
    interior points and faces indexing ``[polygon vertices, interior points]``
    with counterclockwise orientation, or ``None`` when the polygon edges
    are not all reproduced (caller falls back to a fan).
    """
    m = len(poly)
    h = float(np.mean(np.abs(np.roll(poly, -1) - poly))) / density
    lo = complex(poly.real.min(), poly.imag.min())
    hi = complex(poly.real.max(), poly.imag.max())
    dy = h * np.sqrt(3) / 2
    rows = []
    for j, y in enumerate(np.arange(lo.imag, hi.imag + dy, dy)):
        rows.append(np.arange(lo.real + (j % 2) * h / 2, hi.real + h, h) + 1j * y)
    lat = np.concatenate(rows)
    lat = lat[_inside_polygon(lat, poly)]
    seg_a, seg_b = poly, np.roll(poly, -1)
    d = seg_b - seg_a
    t = np.clip(((lat[:, None] - seg_a) * np.conj(d)).real / np.abs(d) ** 2, 0, 1)
    dist = np.abs(lat[:, None] - (seg_a + t * d)).min(axis=1)
    lat = lat[dist > 0.7 * h]
    if apex is not None:
        lat = np.concatenate([[apex], lat[np.abs(lat - apex) > 0.7 * h]])
    pts = np.concatenate([poly, lat])
    tri = Delaunay(np.column_stack([pts.real, pts.imag])).simplices
    tri = tri[_inside_polygon(pts[tri].mean(axis=1), poly)]
    area = signed_areas(pts, tri)
    tri[area < 0] = tri[area < 0][:, [0, 2, 1]]
    e = np.sort(np.concatenate([tri[:, [0, 1]], tri[:, [1, 2]], tri[:, [2, 0]]]), axis=1)
    rim = np.sort(np.column_stack([np.arange(m), np.roll(np.arange(m), -1)]), axis=1)
    have = set(map(tuple, e.tolist()))
    if not all(tuple(r) in have for r in rim.tolist()) or np.any(np.abs(area) < 1e-14 * h * h):
        return None
    return lat, tri


def _cap(chart_loop, apex_point):
    """Per-face triangles and local connectivity for one cap, in its chart."""
    m = len(chart_loop)
    capped = cap_triangulation(chart_loop, apex_point)
    if capped is None:
        centre = chart_loop.mean() if apex_point is None else apex_point
        lat = np.array([centre])
        tri = np.column_stack([np.arange(m), np.roll(np.arange(m), -1), np.full(m, m)])
        if np.any(signed_areas(np.concatenate([chart_loop, lat]), tri) < 0):
            tri = tri[:, [1, 0, 2]]
    else:
        lat, tri = capped
    pts = np.concatenate([chart_loop, lat])
    return pts[tri], tri, len(lat)


def _capped_disk_map(z, faces, loops, keep, base=None, real_tri=None):
    """Conformal disk map of the plane region bounded by ``loops[keep]``.

    Every other loop is capped by a small triangulation of its inside.  When
    ``keep`` is an inner loop, the outer loop is capped by the exterior
    region laid out in the inverted chart 1/(z - c), with a vertex at 0
    standing for the point at infinity.  Only face shapes enter the harmonic
    map, so each cap may live in its own chart.  The boundary
    correspondence is the harmonic measure from ``base`` (default: the
    point at infinity), and the result is normalised so ``base`` maps to 0.
    Returns positions for all vertices (original first) and the index of
    the point at infinity (or None).
    """
    n = len(z)
    tris = [z[faces] if real_tri is None else real_tri]
    fans = [faces]
    count = n
    infinity = None
    for j, lp in enumerate(loops):
        if j == keep:
            continue
        v = lp.vertices
        if j == 0:
            c, _ = fit_circle(z[v])
            chart_tri, local, extra = _cap(1.0 / (z[v] - c), 0j)
            infinity = count
        else:
            chart_tri, local, extra = _cap(z[v], None)
        glob = np.concatenate([v, count + np.arange(extra)])
        tris.append(chart_tri)
        fans.append(glob[local])
        count += extra
    tri = np.vstack(tris)
    fcs = np.vstack(fans)
    lp = loops[keep].vertices
    if base is None:
        base = infinity
    targets = harmonic_measure_targets(tri, fcs, lp, base)
    w = lbs_reconstruct(np.zeros(len(fcs)), tri, fcs, lp, targets)
    a = w[base]
    return (w - a) / (1 - np.conj(a) * w), infinity


@dataclass
class KoebeResult:
    embedding: np.ndarray
    domain: CircularDomainSpec
    loops: list
    converged: bool
    rounds: int
    residual: float


def koebe_circular_domain(mesh: TriangleMesh, tol=1e-3, max_rounds=20) -> KoebeResult:
    """Conformal map of a multiply-connected mesh onto a circular domain.

    The surface is first disk-mapped with its inner holes capped.  Each round
    then circularises the inner boundaries one at a time (cap everything
    else, including the exterior, map the bounded side of that boundary to a
    disk, send the exterior to infinity by an inversion) and re-circularises
    the outer boundary after each of them.  Rounds stop at ``tol``, after
    ``max_rounds``, when the residual stagnates at the mesh's discretisation
    floor, or when a step would flip a face (the best iterate is kept).

    The result is polished: every loop is projected onto its fitted circle
    and the interior is re-solved harmonically with all loops held fixed.
    ``residual`` reports the circularity before that projection.
    """
    loops = extract_boundaries(mesh)
    k = len(loops) - 1
    if k < 1:
        raise ValueError("mesh is simply connected; use disk_conformal")
    n = mesh.n_vertices
    faces = mesh.faces

    def worst(z):
        return max(circularity(z, lp.vertices) for lp in loops[1:])

    pts, fcs, _ = fill_loops(mesh.vertices, faces, [lp.vertices for lp in loops[1:]])
    z = disk_conformal(TriangleMesh(pts, fcs))[:n]
    interior = np.ones(n, bool)
    for lp in loops:
        interior[lp.vertices] = False
    base = int(np.flatnonzero(interior)[np.argmin(np.abs(z[interior]))])
    real = isometric_triangles(mesh.vertices, faces)
    best, residual = z, worst(z)
    rounds = 0
    while residual > tol and rounds < max_rounds:
        rounds += 1
        try:
            for i in range(1, k + 1):
                w, _ = _capped_disk_map(z, faces, loops, i, real_tri=real)
                z = 1.0 / w[:n]
                if count_flips(z, faces):
                    raise FloatingPointError("inversion flipped faces")
                z = _capped_disk_map(z, faces, loops, 0, base, real)[0][:n]
        except FloatingPointError as exc:
            log.warning("Koebe round %d aborted (%s); keeping best iterate", rounds, exc)
            break
        if count_flips(z, faces):
            log.warning("Koebe round %d flipped faces; keeping best iterate", rounds)
            break
        r = worst(z)
        stalled = r > 0.95 * residual
        if r < residual:
            best, residual = z, r
        if stalled:
            break
    z = best
    if residual > tol:
        log.warning("Koebe iteration stopped at circularity %.2e (tol %.1e)", residual, tol)
    fits = [fit_circle(z[lp.vertices]) for lp in loops[1:]]
    domain = CircularDomainSpec([c for c, _ in fits], [r for _, r in fits])
    loops = extract_boundaries(mesh, z)
    z, domain = normalize_domain(z, domain, loops)
    bnd = np.concatenate([lp.vertices for lp in loops])
    polished = lbs_reconstruct(np.zeros(len(faces)), mesh, faces, bnd, z[bnd])
    if count_flips(polished, faces) == 0:
        z = polished
    if count_flips(z, faces):
        raise FloatingPointError("boundary projection produced flipped faces")
    return KoebeResult(z, domain, loops, residual <= tol, rounds, residual)


def normalize_domain(z, domain: CircularDomainSpec, loops):
    """Similarity taking the fitted outer circle to the unit circle; boundaries projected."""
    z = as_complex(z)
    c0, r0 = fit_circle(z[loops[0].vertices])
    z = (z - c0) / r0
    domain = CircularDomainSpec((domain.centers - c0) / r0, domain.radii / r0)
    domain.validate()
    return project_boundary(z, domain, loops), domain
