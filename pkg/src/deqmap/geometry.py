"""Geometry modification: moving, resizing and rotating the inner holes.

Each inner hole is a circle ``c + r*exp(i*theta_j)``.  Its boundary vertices
may only move as a rigid-with-scaling motion, described by a translation of
the centre, a radial rate and a tangential (rotation) rate.  Three driving
terms are combined: the diffusion velocity at the hole, and the descent
directions of two quasiconformal boundary energies built from the Beltrami
coefficients of the faces touching the hole.

Sign convention: every ``BoundaryDescent`` returned here is a descent
direction, i.e. moving along it (with a small positive step) lowers the
associated energy.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .beltrami import beltrami_from_planar_map, chop, lbs_reconstruct, smoothing_increment, wirtinger_weights
from .density import FEOperators, cotangent_matrix
from .mesh import CircularDomainSpec, LandmarkSet, as_complex, one_ring_faces


@dataclass
class HoleFrame:
    hole: int  # 1-based index into the boundary loops (0 is the outer circle)
    vertices: np.ndarray
    centre: complex
    radius: float
    theta: np.ndarray

    @property
    def radial(self) -> np.ndarray:
        return np.exp(1j * self.theta)

    @property
    def tangential(self) -> np.ndarray:
        return 1j * self.radial

    @property
    def positions(self) -> np.ndarray:
        return self.centre + self.radius * self.radial

    def __len__(self):
        return len(self.vertices)


def hole_frames(z, domain: CircularDomainSpec, loops) -> list[HoleFrame]:
    """Polar frames of the inner boundary loops about their circle centres."""
    z = as_complex(z)
    frames = []
    for i, (lp, c, r) in enumerate(zip(loops[1:], domain.centers, domain.radii), start=1):
        theta = np.angle(z[lp.vertices] - c)
        frames.append(HoleFrame(i, lp.vertices, complex(c), float(r), theta))
    return frames


@dataclass
class BoundaryDescent:
    """Per-hole translation (complex), radial rate and tangential rate."""

    translation: np.ndarray
    radial: np.ndarray
    tangential: np.ndarray

    def __post_init__(self):
        self.translation = np.asarray(self.translation, dtype=complex).reshape(-1)
        self.radial = np.asarray(self.radial, dtype=float).reshape(-1)
        self.tangential = np.asarray(self.tangential, dtype=float).reshape(-1)

    @classmethod
    def zeros(cls, k):
        return cls(np.zeros(k, complex), np.zeros(k), np.zeros(k))

    def __add__(self, other):
        return BoundaryDescent(self.translation + other.translation, self.radial + other.radial, self.tangential + other.tangential)

    def __mul__(self, s):
        return BoundaryDescent(s * self.translation, s * self.radial, s * self.tangential)

    __rmul__ = __mul__

    def displacement(self, frames, n) -> np.ndarray:
        """Per-vertex planar displacement field (zero off the inner boundaries)."""
        dw = np.zeros(n, complex)
        for i, f in enumerate(frames):
            dw[f.vertices] = self.translation[i] + self.radial[i] * f.radial + self.tangential[i] * f.tangential
        return dw


def rigid_components(velocity, frame: HoleFrame):
    """Best translation, radial and tangential rates for a velocity sampled on one hole."""
    if len(frame) < 3:
        raise ValueError("a hole needs at least three boundary vertices")
    v = as_complex(velocity)
    vb = v[frame.vertices] if len(v) != len(frame) else v
    vc = vb.mean()
    rest = vb - vc
    pr = float(np.mean((rest * np.conj(frame.radial)).real))
    pt = float(np.mean((rest * np.conj(frame.tangential)).real))
    return complex(vc), pr, pt


def velocity_descent(velocity, frames) -> BoundaryDescent:
    parts = [rigid_components(velocity, f) for f in frames]
    return BoundaryDescent([p[0] for p in parts], [p[1] for p in parts], [p[2] for p in parts])


# ------------------------------------------------- boundary Beltrami derivatives

@dataclass
class RingDerivatives:
    """Beltrami values of the faces touching one hole and their parameter derivatives."""

    faces: np.ndarray  # indices of the ring faces
    nu: np.ndarray
    d_radius: np.ndarray
    d_angle: np.ndarray  # derivative with respect to a rigid rotation angle of the hole
    d_cx: np.ndarray
    d_cy: np.ndarray
    radius: float = field(default=1.0)

    @property
    def d_tangent(self):
        """Derivative per unit arc-length displacement along the tangent."""
        return self.d_angle / self.radius


def boundary_bc_and_derivatives(source, target, faces, frame: HoleFrame) -> RingDerivatives:
    """Beltrami coefficients of the ring faces of one hole, and their derivatives.

    On each face the coefficient is a ratio of two linear forms in the target
    corner positions, nu = P/Q with P = sum(b_k w_k), Q = sum(a_k w_k), so
    dnu/dw_k = (b_k Q - P a_k) / Q**2.  Boundary corners move as
    w = c + r*exp(i*theta); the derivative along a real hole parameter is
    the sum of dnu/dw_k times dw_k/dparameter over the hole's corners.
    """
    source, target = as_complex(source), as_complex(target)
    ring = one_ring_faces(faces, frame.vertices)
    tri_src = source[faces[ring]]
    tri_dst = target[faces[ring]]
    a, b = wirtinger_weights(tri_src)
    P = np.sum(b * tri_dst, axis=1)
    Q = np.sum(a * tri_dst, axis=1)
    if np.any(Q == 0):
        raise ZeroDivisionError(f"degenerate map on face {int(ring[np.flatnonzero(Q == 0)[0]])}")
    nu = P / Q
    dnu_dw = (b * Q[:, None] - P[:, None] * a) / Q[:, None] ** 2

    on_hole = np.isin(faces[ring], frame.vertices)
    pos = np.full(int(faces.max()) + 1, -1)
    pos[frame.vertices] = np.arange(len(frame))
    corner = pos[faces[ring]]
    radial = np.where(on_hole, frame.radial[np.maximum(corner, 0)], 0)
    w = tri_dst
    d_r = np.sum(dnu_dw * radial, axis=1)
    d_theta = np.sum(dnu_dw * np.where(on_hole, 1j * (w - frame.centre), 0), axis=1)
    d_cx = np.sum(dnu_dw * on_hole, axis=1)
    d_cy = np.sum(dnu_dw * on_hole * 1j, axis=1)
    return RingDerivatives(ring, nu, d_r, d_theta, d_cx, d_cy, frame.radius)


def _rates_from_gradient(q, der: RingDerivatives, n_vertices):
    """Descent rates from dE/dp = Re(sum conj(q_l) dnu_l/dp), averaged over the hole."""
    def grad(d):
        return float(np.real(np.vdot(q, d)))

    gx, gy = grad(der.d_cx), grad(der.d_cy)
    return complex(-gx, -gy) / n_vertices, -grad(der.d_radius) / n_vertices, -grad(der.d_tangent) / n_vertices


def _ring_form(source, faces, ring):
    """Positive semidefinite cotangent form of the ring faces (full vertex size)."""
    return -cotangent_matrix(as_complex(source), faces[ring])


def boundary_energies(nu, source, faces, frames, ops0: FEOperators):
    """(E2, E3) of the boundary rings: area-weighted |nu|^2 and the ring Dirichlet energy."""
    e2 = e3 = 0.0
    nu_v = ops0.W @ nu
    for f in frames:
        ring = one_ring_faces(faces, f.vertices)
        e2 += float(np.sum(ops0.face_area[ring] * np.abs(nu[ring]) ** 2))
        K = _ring_form(source, faces, ring)
        e3 += float(np.real(np.vdot(nu_v, K @ nu_v)))
    return e2, e3


def boundary_qc_descent(nu, source, target, faces, frames, ops0: FEOperators):
    """Descent directions (dw2, dw3) of the ring energies E2 and E3 with respect to the holes.

    ``nu`` is the full per-face Beltrami field of the current map; the ring
    entries are recomputed from ``target`` so that the derivatives are
    consistent with the values.
    """
    k = len(frames)
    d2, d3 = BoundaryDescent.zeros(k), BoundaryDescent.zeros(k)
    nu = np.array(nu, dtype=complex)
    ders = [boundary_bc_and_derivatives(source, target, faces, f) for f in frames]
    for der in ders:
        nu[der.faces] = der.nu
    nu_v = ops0.W @ nu
    for i, (f, der) in enumerate(zip(frames, ders)):
        q2 = 2 * ops0.face_area[der.faces] * der.nu
        K = _ring_form(source, faces, der.faces)
        q3 = (2 * (ops0.W.T @ (K @ nu_v)))[der.faces]
        d2.translation[i], d2.radial[i], d2.tangential[i] = _rates_from_gradient(q2, der, len(f))
        d3.translation[i], d3.radial[i], d3.tangential[i] = _rates_from_gradient(q3, der, len(f))
    return d2, d3


# --------------------------------------------------------------- domain update

def update_domain(domain: CircularDomainSpec, frames, descent: BoundaryDescent, dt, min_gap=0.0, max_halvings=10):
    """Advance hole parameters along ``descent``.

    Returns ``(new_domain, new_frames, step)``; ``step`` is the time step
    actually used after halving for validity, or ``None`` (domain unchanged)
    when no valid step was found.
    """
    if not np.all(np.isfinite(descent.translation)) or not np.all(np.isfinite(descent.radial)) or not np.all(np.isfinite(descent.tangential)):
        raise ValueError("descent direction is not finite")
    if dt <= 0:
        raise ValueError("time step must be positive")
    step = float(dt)
    for _ in range(max_halvings + 1):
        centres = domain.centers + step * descent.translation
        radii = domain.radii + step * descent.radial
        trial = CircularDomainSpec(centres, radii) if np.all(radii > 0) else None
        if trial is not None and trial.is_valid(min_gap):
            new_frames = [
                HoleFrame(f.hole, f.vertices, complex(c), float(r), f.theta + step * descent.tangential[i] / f.radius)
                for i, (f, c, r) in enumerate(zip(frames, centres, radii))
            ]
            return trial, new_frames, step
        step /= 2
    return domain.copy(), list(frames), None


def place_boundary(z, frames) -> np.ndarray:
    """Copy of ``z`` with every hole vertex placed exactly on its circle."""
    z = as_complex(z).copy()
    for f in frames:
        z[f.vertices] = f.positions
    return z


def domain_reconstruct(nu, source, faces, boundary, boundary_targets, ops0: FEOperators, alpha, beta, dt, delta=0.1, landmarks: LandmarkSet | None = None):
    """Damp and smooth ``nu``, then rebuild the map onto the new boundary.

    Returns ``(embedding, beltrami)`` where the Beltrami field is recomputed
    from the reconstructed map.
    """
    nu = np.asarray(nu, dtype=complex)
    nu_t = nu * (1 - dt * alpha) + smoothing_increment(nu, ops0, faces, dt * beta)
    nu_t = chop(nu_t, delta)
    g = lbs_reconstruct(nu_t, source, faces, boundary, boundary_targets, landmarks)
    return g, beltrami_from_planar_map(source, g, faces)
