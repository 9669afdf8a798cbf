"""Triangle meshes, boundary topology, OBJ I/O and planar point location."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components


class MeshError(ValueError):
    """Raised for meshes that violate the manifold/orientation contract."""


class ObjParseError(MeshError):
    pass


@dataclass(frozen=True)
class BoundaryLoop:
    vertices: np.ndarray
    kind: str = "inner"

    def __len__(self):
        return len(self.vertices)


@dataclass
class TriangleMesh:
    """Oriented triangle mesh with optional per-vertex UV coordinates.

    Parameters
    ----------
    vertices : (n, 3) float array
    faces : (m, 3) int array, counterclockwise w.r.t. the outward normal
    uv : (n, 2) float array or None
    """

    vertices: np.ndarray
    faces: np.ndarray
    uv: np.ndarray | None = None

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=float)
        if v.ndim == 2 and v.shape[1] == 2:
            v = np.column_stack([v, np.zeros(len(v))])
        self.vertices = v
        self.faces = np.asarray(self.faces, dtype=np.int64).reshape(-1, 3)
        if self.uv is not None:
            self.uv = np.asarray(self.uv, dtype=float).reshape(-1, 2)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    def face_areas(self) -> np.ndarray:
        return face_areas(self.vertices, self.faces)

    def is_planar(self, tol=1e-12) -> bool:
        z = self.vertices[:, 2]
        scale = max(np.ptp(self.vertices[:, :2]), 1.0)
        return bool(np.ptp(z) <= tol * scale)

    def validate(self):
        validate_mesh(self.vertices, self.faces)
        return self


@dataclass
class CircularDomainSpec:
    """Unit disk with k circular holes ``B(centers[i], radii[i])``."""

    centers: np.ndarray
    radii: np.ndarray

    def __post_init__(self):
        self.centers = np.asarray(self.centers, dtype=complex).reshape(-1)
        self.radii = np.asarray(self.radii, dtype=float).reshape(-1)
        if len(self.centers) != len(self.radii):
            raise ValueError("centers and radii differ in length")

    @classmethod
    def disk(cls):
        return cls(np.zeros(0, complex), np.zeros(0))

    @property
    def n_holes(self) -> int:
        return len(self.radii)

    def copy(self):
        return CircularDomainSpec(self.centers.copy(), self.radii.copy())

    def is_valid(self, min_gap=0.0) -> bool:
        c, r = self.centers, self.radii
        if np.any(r <= 0) or np.any(np.abs(c) + r >= 1.0 - min_gap):
            return False
        for i in range(len(r)):
            for j in range(i + 1, len(r)):
                if abs(c[i] - c[j]) <= r[i] + r[j] + min_gap:
                    return False
        return True

    def validate(self):
        if not self.is_valid():
            raise ValueError("circular domain has a hole that escapes the disk or overlaps another")
        return self


@dataclass
class LandmarkSet:
    vertices: np.ndarray
    targets: np.ndarray

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.int64).reshape(-1)
        self.targets = np.asarray(self.targets, dtype=complex).reshape(-1)
        if len(self.vertices) != len(self.targets):
            raise ValueError("landmark vertices and targets differ in length")
        if len(np.unique(self.vertices)) != len(self.vertices):
            raise ValueError("landmark vertices must be distinct")

    @classmethod
    def empty(cls):
        return cls(np.zeros(0, np.int64), np.zeros(0, complex))

    def __len__(self):
        return len(self.vertices)


# ---------------------------------------------------------------- geometry

def as_complex(points) -> np.ndarray:
    """Planar coordinates as a complex vector (accepts complex, (n,2) or (n,3))."""
    p = np.asarray(points)
    if np.iscomplexobj(p):
        return p.reshape(-1)
    return p[:, 0] + 1j * p[:, 1]


def signed_areas(z, faces) -> np.ndarray:
    z = as_complex(z)
    e1 = z[faces[:, 1]] - z[faces[:, 0]]
    e2 = z[faces[:, 2]] - z[faces[:, 0]]
    return 0.5 * (e1.real * e2.imag - e1.imag * e2.real)


def face_areas(points, faces) -> np.ndarray:
    """Unsigned face areas for planar (complex / 2-column) or 3D points."""
    p = np.asarray(points)
    if np.iscomplexobj(p) or p.shape[1] == 2:
        return np.abs(signed_areas(p, faces))
    e1 = p[faces[:, 1]] - p[faces[:, 0]]
    e2 = p[faces[:, 2]] - p[faces[:, 0]]
    return 0.5 * np.linalg.norm(np.cross(e1, e2), axis=1)


def face_area(points, faces, i: int) -> float:
    return float(face_areas(points, np.asarray(faces)[i : i + 1])[0])


def count_flips(z, faces) -> int:
    return int(np.count_nonzero(signed_areas(z, faces) <= 0))


def edge_lengths(points, faces) -> np.ndarray:
    """(m, 3) lengths of the edge opposite each corner."""
    p = np.asarray(points)
    if np.iscomplexobj(p):
        p = np.column_stack([p.real, p.imag])
    out = np.empty(faces.shape)
    for k in range(3):
        a, b = faces[:, (k + 1) % 3], faces[:, (k + 2) % 3]
        out[:, k] = np.linalg.norm(p[b] - p[a], axis=1)
    return out


def mean_edge_length(points, faces) -> float:
    return float(edge_lengths(points, faces).mean())


# ---------------------------------------------------------------- topology

def _halfedges(faces):
    src = faces.reshape(-1)
    dst = faces[:, [1, 2, 0]].reshape(-1)
    return src, dst


def validate_mesh(vertices, faces):
    n = len(vertices)
    if len(faces) == 0:
        raise MeshError("mesh has no faces")
    if faces.min() < 0 or faces.max() >= n:
        raise MeshError("face index out of range")
    if np.any((faces[:, 0] == faces[:, 1]) | (faces[:, 1] == faces[:, 2]) | (faces[:, 0] == faces[:, 2])):
        raise MeshError("face with repeated vertex")
    areas = face_areas(vertices, faces)
    if np.any(areas <= 1e-14 * max(areas.max(), 1e-300)):
        bad = int(np.argmin(areas))
        raise MeshError(f"degenerate (zero-area) face {bad}")
    src, dst = _halfedges(faces)
    keys = src * n + dst
    if len(np.unique(keys)) != len(keys):
        raise MeshError("non-manifold or inconsistently oriented edge")
    used = np.zeros(n, bool)
    used[faces.reshape(-1)] = True
    if not used.all():
        raise MeshError("mesh has unreferenced vertices")
    adj = sp.coo_matrix((np.ones(len(src)), (src, dst)), shape=(n, n))
    ncomp, _ = connected_components(adj, directed=False)
    if ncomp != 1:
        raise MeshError(f"mesh is disconnected ({ncomp} components)")
    bsrc, _ = boundary_halfedges(faces, n)
    if len(np.unique(bsrc)) != len(bsrc):
        raise MeshError("non-manifold boundary vertex")


def boundary_halfedges(faces, n=None):
    """Half-edges (i -> j) without a twin; the surface lies to their left."""
    if n is None:
        n = int(faces.max()) + 1
    src, dst = _halfedges(faces)
    keys = src * n + dst
    twins = dst * n + src
    mask = ~np.isin(twins, keys)
    return src[mask], dst[mask]


def edges(faces) -> np.ndarray:
    src, dst = _halfedges(faces)
    e = np.sort(np.column_stack([src, dst]), axis=1)
    return np.unique(e, axis=0)


def euler_characteristic(mesh: TriangleMesh) -> int:
    return mesh.n_vertices - len(edges(mesh.faces)) + mesh.n_faces


def _polygon_area(z):
    return 0.5 * float(np.sum(z.real * np.roll(z.imag, -1) - np.roll(z.real, -1) * z.imag))


def extract_boundaries(mesh: TriangleMesh, embedding=None) -> list[BoundaryLoop]:
    """All boundary loops, outer loop first.

    The outer loop is the one enclosing the largest absolute area in the
    planar embedding.  Without an embedding the planar coordinates of a flat
    mesh, then the UV channel, then the longest 3D perimeter are used.
    """
    bsrc, bdst = boundary_halfedges(mesh.faces, mesh.n_vertices)
    nxt = dict(zip(bsrc.tolist(), bdst.tolist()))
    seen = set()
    loops = []
    for start in bsrc.tolist():
        if start in seen:
            continue
        loop = [start]
        seen.add(start)
        v = nxt[start]
        while v != start:
            if v in seen:
                raise MeshError("boundary is not a union of simple loops")
            loop.append(v)
            seen.add(v)
            v = nxt[v]
        loops.append(np.array(loop, dtype=np.int64))
    if not loops:
        return []

    if embedding is not None:
        z = as_complex(embedding)
        score = [abs(_polygon_area(z[lp])) for lp in loops]
    elif mesh.is_planar():
        z = as_complex(mesh.vertices)
        score = [abs(_polygon_area(z[lp])) for lp in loops]
    elif mesh.uv is not None:
        z = as_complex(mesh.uv)
        score = [abs(_polygon_area(z[lp])) for lp in loops]
    else:
        p = mesh.vertices
        score = [float(np.linalg.norm(p[np.roll(lp, -1)] - p[lp], axis=1).sum()) for lp in loops]
    outer = int(np.argmax(score))
    ordered = [loops[outer]] + [lp for i, lp in enumerate(loops) if i != outer]
    return [BoundaryLoop(lp, "outer" if i == 0 else "inner") for i, lp in enumerate(ordered)]


def one_ring_faces(faces, vertex_set) -> np.ndarray:
    """Indices of faces touching any vertex in ``vertex_set``."""
    mask = np.isin(faces, np.asarray(vertex_set)).any(axis=1)
    return np.nonzero(mask)[0]


# ---------------------------------------------------------------- OBJ I/O

def load_obj(path) -> TriangleMesh:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such mesh file: {path}")
    verts, tex, faces, face_tex = [], [], [], []
    with path.open() as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            tok = line.split()
            try:
                if tok[0] == "v":
                    verts.append([float(t) for t in tok[1:4]])
                    if len(verts[-1]) != 3:
                        raise ValueError
                elif tok[0] == "vt":
                    tex.append([float(t) for t in tok[1:3]])
                elif tok[0] == "f":
                    refs = tok[1:]
                    if len(refs) != 3:
                        raise MeshError(f"line {lineno}: only triangular faces are supported")
                    vi, ti = [], []
                    for r in refs:
                        parts = r.split("/")
                        vi.append(_obj_index(parts[0], len(verts)))
                        if len(parts) > 1 and parts[1]:
                            ti.append(_obj_index(parts[1], len(tex)))
                    faces.append(vi)
                    if len(ti) == 3:
                        face_tex.append(ti)
            except (ValueError, IndexError) as exc:
                raise ObjParseError(f"{path}:{lineno}: malformed record {raw.strip()!r}") from exc

    v = np.array(verts, dtype=float).reshape(-1, 3)
    f = np.array(faces, dtype=np.int64).reshape(-1, 3)
    uv = None
    if tex:
        t = np.array(tex, dtype=float)
        if len(face_tex) == len(f):
            uv = np.zeros((len(v), 2))
            uv[f.reshape(-1)] = t[np.array(face_tex).reshape(-1)]
        elif len(t) == len(v):
            uv = t
    mesh = TriangleMesh(v, f, uv)
    mesh.validate()
    return mesh


def _obj_index(token, count):
    i = int(token)
    return i - 1 if i > 0 else count + i


def save_obj(mesh: TriangleMesh, path, embedding=None, vertices=None):
    """Write ``mesh`` as OBJ; ``embedding`` (complex or (n,2)) goes to vt records.

    ``vertices`` optionally overrides the v records (used to write planar results).
    """
    v = mesh.vertices if vertices is None else np.asarray(vertices, dtype=float)
    lines = [f"v {x:.17g} {y:.17g} {z:.17g}" for x, y, z in v]
    if embedding is not None:
        z = as_complex(embedding)
        if len(z) != mesh.n_vertices:
            raise ValueError("embedding does not match the mesh")
        lines += [f"vt {c.real:.17g} {c.imag:.17g}" for c in z]
        lines += [f"f {a}/{a} {b}/{b} {c}/{c}" for a, b, c in mesh.faces + 1]
    else:
        lines += [f"f {a} {b} {c}" for a, b, c in mesh.faces + 1]
    Path(path).write_text("\n".join(lines) + "\n")


# ---------------------------------------------------------------- point location

def barycentric(z, faces, face_ids, points) -> np.ndarray:
    """Barycentric weights of ``points`` in the given faces (vectorised)."""
    z = as_complex(z)
    tri = z[faces[face_ids]]
    p = np.asarray(points, dtype=complex)
    a, b, c = tri[..., 0], tri[..., 1], tri[..., 2]

    def cross(u, w):
        return u.real * w.imag - u.imag * w.real

    det = cross(b - a, c - a)
    w1 = cross(p - a, c - a) / det
    w2 = cross(b - a, p - a) / det
    return np.stack([1.0 - w1 - w2, w1, w2], axis=-1)


class PointLocator:
    """Uniform-grid bucket over the faces of a flip-free planar embedding."""

    def __init__(self, z, faces, cells=None):
        self.z = as_complex(z)
        self.faces = np.asarray(faces)
        tri = self.z[self.faces]
        lo = np.column_stack([tri.real.min(1), tri.imag.min(1)])
        hi = np.column_stack([tri.real.max(1), tri.imag.max(1)])
        self.origin = lo.min(0)
        extent = np.maximum(hi.max(0) - self.origin, 1e-12)
        n = cells or max(1, int(np.sqrt(len(self.faces))))
        self.shape = np.array([n, n])
        self.cell = extent / n * (1 + 1e-9)
        i0 = self._cell_of(lo)
        i1 = self._cell_of(hi)
        nx = i1[:, 0] - i0[:, 0] + 1
        ny = i1[:, 1] - i0[:, 1] + 1
        counts = nx * ny
        fid = np.repeat(np.arange(len(self.faces)), counts)
        local = np.arange(counts.sum()) - np.repeat(np.cumsum(counts) - counts, counts)
        cx = i0[fid, 0] + local % nx[fid]
        cy = i0[fid, 1] + local // nx[fid]
        key = cx * n + cy
        order = np.argsort(key, kind="stable")
        self._faces_sorted = fid[order]
        self._start = np.searchsorted(key[order], np.arange(n * n + 1))
        bsrc, bdst = boundary_halfedges(self.faces, len(self.z))
        self._bedges = np.column_stack([bsrc, bdst])

    def _cell_of(self, xy):
        idx = np.floor((xy - self.origin) / self.cell).astype(np.int64)
        return np.clip(idx, 0, self.shape - 1)

    def candidates(self, point):
        xy = np.array([[point.real, point.imag]])
        if np.any(xy < self.origin - self.cell) or np.any(xy > self.origin + self.cell * (self.shape + 1)):
            return np.zeros(0, np.int64)
        cx, cy = self._cell_of(xy)[0]
        k = cx * self.shape[1] + cy
        return self._faces_sorted[self._start[k] : self._start[k + 1]]

    def locate(self, point, tol=1e-12, snap=False):
        """Return ``(face, weights)`` or ``None`` when the point is outside.

        With ``snap`` an outside point is first moved to the closest point of
        the mesh boundary (useful for samples on a circle whose polygonal
        approximation is slightly inscribed).
        """
        point = complex(point)
        hit = self._search(point, tol)
        if hit is None and snap:
            hit = self._search(self._snap(point), 1e-9)
        return hit

    def _search(self, point, tol):
        cand = self.candidates(point)
        if len(cand) == 0:
            return None
        w = barycentric(self.z, self.faces, cand, np.full(len(cand), point))
        worst = w.min(axis=1)
        best = int(np.argmax(worst))
        if worst[best] < -tol:
            return None
        wb = np.clip(w[best], 0.0, None)
        return int(cand[best]), wb / wb.sum()

    def _snap(self, point):
        a = self.z[self._bedges[:, 0]]
        b = self.z[self._bedges[:, 1]]
        d = b - a
        t = np.clip(((point - a) * np.conj(d)).real / np.abs(d) ** 2, 0.0, 1.0)
        q = a + t * d
        return complex(q[np.argmin(np.abs(q - point))])


def locate_point(z, faces, point, tol=1e-12):
    """One-off point location (builds a throwaway locator)."""
    return PointLocator(z, faces).locate(point, tol)


def interpolate_3d(mesh: TriangleMesh, face: int, weights) -> np.ndarray:
    return np.asarray(weights) @ mesh.vertices[mesh.faces[face]]
