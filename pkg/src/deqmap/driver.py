"""Outer iterations for density-equalizing flattening, with and without landmarks."""

from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .bded import bded_step, limited_dnu, slide_boundary
from .beltrami import beltrami_from_planar_map, beltrami_from_surface_map, chop, lbs_reconstruct, qc_energies, to_faces
from .density import FEOperators, assemble_operators, density_velocity, diffusion_step, face_gradient, vertex_density
from .flatten import disk_conformal, koebe_circular_domain
from .geometry import boundary_qc_descent, domain_reconstruct, hole_frames, update_domain, velocity_descent
from .mesh import CircularDomainSpec, LandmarkSet, TriangleMesh, as_complex, count_flips, extract_boundaries, face_areas

log = logging.getLogger(__name__)

VELOCITY_CONVENTION = "v = -grad(rho)/rho"


@dataclass
class SolverConfig:
    alpha: float = 0.1
    beta: float = 0.05
    eta: float = 10.0
    dt: float = 0.1
    eps: float = 1e-2
    delta: float = 0.1
    max_iterations: int = 200
    shape_preserving: bool = False
    koebe_tol: float = 1e-3
    koebe_rounds: int = 20
    min_gap: float = 1e-3  # smallest allowed clearance between circles
    max_backtracks: int = 5  # time-step halvings per iteration before giving up
    max_change: float = 0.25  # largest per-face change of the Beltrami coefficient in one step
    max_variance_growth: float = 0.25  # relative growth of Var(rho) tolerated in one accepted step

    def validate(self):
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("alpha and beta must be nonnegative")
        if self.eta <= 0 or self.dt <= 0 or self.eps <= 0:
            raise ValueError("eta, dt and eps must be positive")
        if not 0 < self.delta < 1:
            raise ValueError("delta must lie in (0, 1)")
        if self.max_change <= 0 or self.max_variance_growth < 0:
            raise ValueError("max_change must be positive and max_variance_growth nonnegative")
        if self.max_iterations < 0:
            raise ValueError("max_iterations must be nonnegative")
        return self


@dataclass
class IterationRecord:
    iteration: int
    energy: float
    density_term: float
    distortion_term: float
    smoothness_term: float
    penalty: float
    variance: float
    mean_mu: float
    sup_mu: float
    flips: int
    dt: float
    domain_step: float | None
    seconds: float


@dataclass
class IterationReport:
    method: str = "DEQ"
    records: list = field(default_factory=list)
    converged: bool = False
    stalled: bool = False
    iterations: int = 0
    initial_flattening: dict = field(default_factory=dict)
    velocity_convention: str = VELOCITY_CONVENTION
    max_landmark_residual: float = 0.0
    histograms: dict = field(default_factory=dict)  # iteration -> (density, |mu|)

    @property
    def energies(self):
        return [r.energy for r in self.records]

    def to_dict(self):
        d = asdict(self)
        d.pop("histograms")
        return d


# ---------------------------------------------------------------- energies

def density_energy(rho_v, z, faces, area=None) -> float:
    grad = face_gradient(rho_v, z, faces)
    area = face_areas(as_complex(z), faces) if area is None else area
    return float(np.sum(area * np.abs(grad) ** 2))


def energy_deq(rho_v, nu, embedding, faces, ops0: FEOperators, alpha, beta):
    """Total energy and its (density, distortion, smoothness) components.

    The density term is measured on ``embedding``; the two Beltrami terms on
    the reference domain described by ``ops0``.
    """
    e1 = density_energy(rho_v, embedding, faces)
    e2, e3 = qc_energies(nu, ops0, faces)
    return e1 + alpha * e2 + beta * e3, (e1, e2, e3)


def normalized_density(pop, z, faces):
    area = face_areas(as_complex(z), faces)
    rho = np.asarray(pop, dtype=float) / area
    return rho / rho.mean()


def density_variance(pop, z, faces) -> float:
    return float(np.var(normalized_density(pop, z, faces)))


def metrics_report(mesh: TriangleMesh, embedding, pop, seconds=None) -> dict:
    """Summary row: faces, time, variance of normalised density, |mu| statistics, flips."""
    z = as_complex(embedding)
    flips = count_flips(z, mesh.faces)
    mu = np.abs(beltrami_from_surface_map(mesh, z))
    sup = float(mu.max())
    return {
        "faces": int(mesh.n_faces),
        "time": None if seconds is None else float(seconds),
        "variance": density_variance(pop, z, mesh.faces),
        "mean_mu": float(mu.mean()),
        "sup_mu": sup,
        "dilation": float((1 + sup) / (1 - sup)) if sup < 1 else float("inf"),
        "flips": int(flips),
    }


# ---------------------------------------------------------------- helpers

@dataclass
class _State:
    z: np.ndarray
    nu: np.ndarray
    domain: CircularDomainSpec
    energy: float
    parts: tuple
    mu: np.ndarray | None = None  # LDEQ only: the realised coefficient


def initial_flattening(mesh: TriangleMesh, cfg: SolverConfig):
    """Conformal map onto the unit disk or a circular domain, plus its boundary loops."""
    loops = extract_boundaries(mesh)
    if len(loops) == 1:
        z = disk_conformal(mesh)
        return z, CircularDomainSpec.disk(), extract_boundaries(mesh, z), {"method": "disk", "residual": 0.0, "converged": True}
    res = koebe_circular_domain(mesh, cfg.koebe_tol, cfg.koebe_rounds)
    info = {"method": "koebe", "residual": float(res.residual), "converged": bool(res.converged), "rounds": int(res.rounds)}
    return res.embedding, res.domain, res.loops, info


def smoothed_density(pop, z, faces, diffusion_dt):
    """Normalised vertex density after one diffusion step on the embedding ``z``."""
    ops = assemble_operators(z, faces)
    rho_v = vertex_density(normalized_density(pop, z, faces), ops)
    return diffusion_step(rho_v, ops, diffusion_dt) if diffusion_dt > 0 else rho_v


def _evaluate(pop, z, nu, faces, ops0, cfg):
    rho_v = smoothed_density(pop, z, faces, cfg.dt)
    return energy_deq(rho_v, nu, z, faces, ops0, cfg.alpha, cfg.beta)


def _record(it, state, pop, mesh, dt, domain_step, t0, penalty=0.0, mu=None):
    z = state.z
    mu_abs = np.abs(beltrami_from_surface_map(mesh, z) if mu is None else mu)
    e1, e2, e3 = state.parts
    return IterationRecord(it, float(state.energy), e1, e2, e3, float(penalty), density_variance(pop, z, mesh.faces),
                           float(mu_abs.mean()), float(mu_abs.max()), count_flips(z, mesh.faces), float(dt),
                           None if domain_step is None else float(domain_step), time.perf_counter() - t0)


def _histogram(mesh, pop, z):
    return normalized_density(pop, z, mesh.faces), np.abs(beltrami_from_surface_map(mesh, z))


def _geometry_step(state: _State, source, pop, faces, loops, ops0, cfg, dt, landmarks=None):
    """Move the holes and rebuild the map; returns (map, beltrami, domain, step used)."""
    z = state.z
    v, _, _ = density_velocity(pop, z, faces, loops, state.domain, diffusion_dt=cfg.dt, neumann=False)
    frames = hole_frames(z, state.domain, loops)
    d1 = velocity_descent(v, frames)
    d2, d3 = boundary_qc_descent(state.nu, source, z, faces, frames, ops0)
    descent = d1 + cfg.alpha * d2 + cfg.beta * d3
    step = dt
    for _ in range(cfg.max_backtracks + 1):
        domain, new_frames, used = update_domain(state.domain, frames, descent, step, cfg.min_gap)
        if used is None:
            return None
        bnd = np.concatenate([lp.vertices for lp in loops])
        target = z.copy()
        for f in new_frames:
            target[f.vertices] = f.positions
        try:
            g, nu = domain_reconstruct(state.nu, source, faces, bnd, target[bnd], ops0, cfg.alpha, cfg.beta, dt, cfg.delta, landmarks)
        except (ValueError, FloatingPointError):
            g = None
        if g is not None and count_flips(g, faces) == 0:
            return g, nu, domain, used
        step = used / 2
    return None


def _acceptable(trial: _State | None, state: _State, pop, faces, cfg: SolverConfig, tol, best_variance, guarded=True):
    """Energy must not rise (beyond ``tol``) and the density variance must stay near its best value.

    With ``guarded`` off only a failed step is rejected.
    """
    if trial is None:
        return False
    if not guarded:
        return True
    if trial.energy > state.energy + tol:
        return False
    return density_variance(pop, trial.z, faces) <= (1 + cfg.max_variance_growth) * best_variance + 1e-12


def _check_landmarks(landmarks: LandmarkSet, domain: CircularDomainSpec, n):
    if np.any(landmarks.vertices < 0) or np.any(landmarks.vertices >= n):
        raise ValueError("landmark vertex index out of range")
    q = landmarks.targets
    if np.any(np.abs(q) >= 1):
        raise ValueError("landmark target outside the unit disk")
    for c, r in zip(domain.centers, domain.radii):
        if np.any(np.abs(q - c) <= r):
            raise ValueError("landmark target lies inside a hole")


# ---------------------------------------------------------------- DEQ

def run_deq(mesh: TriangleMesh, pop, cfg: SolverConfig | None = None, callback=None, keep_histograms=False):
    """Density-equalizing quasiconformal flattening.

    Returns ``(embedding, domain, report)``.  Each iteration moves the holes
    (unless the domain is a disk or ``cfg.shape_preserving``), then takes a
    descent step on the fixed domain.  An iterate is accepted only if it has
    no flipped face and does not raise the energy (beyond 1e-8 of the
    initial energy); otherwise the time step is halved.  Iteration stops
    once the accepted energy change drops below ``cfg.eps``.
    """
    cfg = (cfg or SolverConfig()).validate()
    t0 = time.perf_counter()
    faces = mesh.faces
    pop = np.asarray(pop, dtype=float)
    source, domain0, loops, info = initial_flattening(mesh, cfg)
    ops0 = assemble_operators(source, faces)
    report = IterationReport(initial_flattening=info)
    nu0 = np.zeros(mesh.n_faces, complex)
    e, parts = _evaluate(pop, source, nu0, faces, ops0, cfg)
    state = _State(source, nu0, domain0, e, parts)
    report.records.append(_record(0, state, pop, mesh, cfg.dt, None, t0))
    if keep_histograms:
        report.histograms[0] = _histogram(mesh, pop, source)
    use_gm = domain0.n_holes > 0 and not cfg.shape_preserving
    tol = 1e-8 * max(e, 1e-300)
    dt = cfg.dt
    best_variance = report.records[0].variance
    for it in range(1, cfg.max_iterations + 1):
        trial, gm_step = None, None
        for _ in range(cfg.max_backtracks + 1):
            trial, gm_step = _deq_iterate(state, source, pop, faces, loops, ops0, cfg, dt, use_gm)
            if _acceptable(trial, state, pop, faces, cfg, tol, best_variance):
                break
            trial = None
            dt /= 2
        if trial is None:
            report.stalled = True
            log.warning("iteration %d: no acceptable step down to dt=%g", it, dt)
            break
        change = abs(state.energy - trial.energy)
        state = trial
        report.records.append(_record(it, state, pop, mesh, dt, gm_step, t0))
        best_variance = min(best_variance, report.records[-1].variance)
        report.iterations = it
        if callback is not None:
            callback(report.records[-1])
        if change < cfg.eps:
            report.converged = True
            break
        dt = min(cfg.dt, 2 * dt)
    if keep_histograms:
        report.histograms[report.iterations] = _histogram(mesh, pop, state.z)
    return state.z, state.domain, report


def _deq_iterate(state: _State, source, pop, faces, loops, ops0, cfg, dt, use_gm):
    current, nu, domain, gm_step = state.z, state.nu, state.domain, None
    try:
        if use_gm:
            moved = _geometry_step(state, source, pop, faces, loops, ops0, cfg, dt)
            if moved is not None:
                current, nu, domain, gm_step = moved
        g, mu, info = bded_step(source, current, pop, faces, loops, domain, ops0, cfg.alpha, cfg.beta, dt, cfg.delta,
                                nu0=nu, max_retries=0, diffusion_dt=cfg.dt, max_change=cfg.max_change)
    except (ValueError, FloatingPointError, ZeroDivisionError) as exc:
        log.debug("iteration failed at dt=%g: %s", dt, exc)
        return None, None
    if info.flips or np.max(np.abs(mu)) >= 1:
        return None, None
    e, parts = _evaluate(pop, g, mu, faces, ops0, cfg)
    return _State(g, mu, domain, e, parts), gm_step


# ---------------------------------------------------------------- LDEQ

def penalty_smoothing(mu, ops0: FEOperators, faces, alpha, beta, eta):
    """Minimiser nu of alpha|nu|^2 + beta|grad nu|^2 + eta|nu - mu|^2.

    Solves ((alpha + eta) A - beta L) x = eta A mu_v at the vertices; the
    face field is eta/(alpha+eta) * mu plus the face transfer of the
    smoothing correction, so that beta = 0 gives the pointwise minimiser.
    """
    scale = eta / (alpha + eta)
    mu_v = ops0.W @ mu
    if beta == 0:
        return scale * mu
    M = ((alpha + eta) * sp.diags(ops0.vertex_area) - beta * ops0.L).tocsc()
    b = eta * ops0.vertex_area * mu_v
    x = spla.splu(M).solve(np.column_stack([b.real, b.imag]))
    x = x[:, 0] + 1j * x[:, 1]
    return scale * mu + to_faces(x - scale * mu_v, faces)


def landmark_warm_start(source, faces, ops0: FEOperators, boundary, landmarks: LandmarkSet):
    """Smooth deformation of ``source`` that meets the landmarks exactly, or ``None`` if it flips.

    The displacement is biharmonic (built from the cotangent operator),
    zero on the boundary and equal to the landmark drags.  Unlike a
    harmonic displacement it has no logarithmic spike at a pinned vertex,
    so drags of a few edge lengths stay flip-free.
    """
    source = as_complex(source)
    n = len(source)
    K = (ops0.L @ sp.diags(1.0 / ops0.vertex_area) @ ops0.L).tocsr()
    fixed = np.concatenate([boundary, landmarks.vertices])
    values = np.concatenate([np.zeros(len(boundary), complex), landmarks.targets - source[landmarks.vertices]])
    free = np.setdiff1d(np.arange(n), fixed)
    d = np.zeros(n, complex)
    d[fixed] = values
    rhs = -(K[free][:, fixed] @ values)
    sol = spla.splu(K[free][:, free].tocsc()).solve(np.column_stack([rhs.real, rhs.imag]))
    d[free] = sol[:, 0] + 1j * sol[:, 1]
    z = source + d
    return z if count_flips(z, faces) == 0 else None


def run_ldeq(mesh: TriangleMesh, pop, landmarks: LandmarkSet | None, cfg: SolverConfig | None = None, callback=None, keep_histograms=False):
    """Landmark-matching variant by penalty splitting.

    Landmarks are hard constraints in every reconstruction, so they hold
    exactly at every iterate.  An empty landmark set reduces the problem to
    the plain one, and the plain solver is used.
    """
    cfg = (cfg or SolverConfig()).validate()
    if landmarks is None or len(landmarks) == 0:
        z, domain, report = run_deq(mesh, pop, cfg, callback, keep_histograms)
        report.method = "LDEQ"
        return z, domain, report
    t0 = time.perf_counter()
    faces = mesh.faces
    pop = np.asarray(pop, dtype=float)
    source, domain0, loops, info = initial_flattening(mesh, cfg)
    _check_landmarks(landmarks, domain0, mesh.n_vertices)
    bnd_set = set(np.concatenate([lp.vertices for lp in loops]).tolist())
    if any(int(v) in bnd_set for v in landmarks.vertices):
        raise ValueError("landmarks on the boundary are not supported")
    ops0 = assemble_operators(source, faces)
    report = IterationReport(method="LDEQ", initial_flattening=info)

    bnd = np.array(sorted(bnd_set), dtype=np.int64)
    start = landmark_warm_start(source, faces, ops0, bnd, landmarks)
    warm = start is not None
    if not warm:
        log.warning("smooth landmark start would flip faces; the first iterate imposes the landmarks instead")
        start = source
    nu_start = chop(beltrami_from_planar_map(source, start, faces), cfg.delta)
    e, parts = _evaluate(pop, start, nu_start, faces, ops0, cfg)
    state = _State(start, nu_start, domain0, e, parts, mu=nu_start)
    report.initial_flattening["landmark_warm_start"] = warm
    report.records.append(_record(0, state, pop, mesh, cfg.dt, None, t0))
    if warm:
        report.max_landmark_residual = float(np.max(np.abs(start[landmarks.vertices] - landmarks.targets)))
    if keep_histograms:
        report.histograms[0] = _histogram(mesh, pop, start)
    use_gm = domain0.n_holes > 0 and not cfg.shape_preserving
    dt = cfg.dt
    best_variance = report.records[0].variance
    accepted_once = warm
    for it in range(1, cfg.max_iterations + 1):
        trial = None
        for _ in range(cfg.max_backtracks + 1):
            trial, gm_step, penalty = _ldeq_iterate(state, source, pop, faces, loops, ops0, cfg, dt, use_gm, landmarks)
            # the first iterate imposes the landmarks, so it may raise both the energy and the variance
            if _acceptable(trial, state, pop, faces, cfg, 1e-8 * max(state.energy, 1e-300), best_variance, guarded=accepted_once):
                break
            trial = None
            dt /= 2
        if trial is None:
            report.stalled = True
            log.warning("iteration %d: no acceptable landmark step down to dt=%g", it, dt)
            break
        accepted_once = True
        change = abs(state.energy - trial.energy)
        state = trial
        res = float(np.max(np.abs(state.z[landmarks.vertices] - landmarks.targets)))
        report.max_landmark_residual = max(report.max_landmark_residual, res)
        report.records.append(_record(it, state, pop, mesh, dt, gm_step, t0, penalty))
        # the guard is measured from the first landmark-constrained iterate
        best_variance = report.records[-1].variance if it == 1 and not warm else min(best_variance, report.records[-1].variance)
        report.iterations = it
        if callback is not None:
            callback(report.records[-1])
        if change < cfg.eps and it > 1:
            report.converged = True
            break
        dt = min(cfg.dt, 2 * dt)
    # covers the case where no iterate was accepted and the initial map is returned
    final_res = float(np.max(np.abs(state.z[landmarks.vertices] - landmarks.targets)))
    report.max_landmark_residual = max(report.max_landmark_residual, final_res)
    if keep_histograms:
        report.histograms[report.iterations] = _histogram(mesh, pop, state.z)
    return state.z, state.domain, report


def _ldeq_iterate(state: _State, source, pop, faces, loops, ops0, cfg, dt, use_gm, landmarks):
    current, domain, gm_step = state.z, state.domain, None
    nu_prev = state.nu
    bnd = np.concatenate([lp.vertices for lp in loops])
    try:
        if use_gm:
            moved = _geometry_step(state, source, pop, faces, loops, ops0, cfg, dt, landmarks)
            if moved is not None:
                current, _, domain, gm_step = moved
        mu_cur = beltrami_from_planar_map(source, current, faces)
        v, _, _ = density_velocity(pop, current, faces, loops, domain, diffusion_dt=cfg.dt, neumann=True)
        dmu1, dt = limited_dnu(current, v, mu_cur, source, faces, dt, cfg.max_change)
        # the penalty pull towards nu is taken implicitly: explicit steps with 2*eta*dt >= 1 overshoot
        pull = 2 * cfg.eta * dt
        mu_next = chop((mu_cur + dt * dmu1 + pull * nu_prev) / (1 + pull), cfg.delta)
        targets = slide_boundary(current, v, dt, loops, domain, reference=source)[bnd]
        g_star = lbs_reconstruct(mu_next, source, faces, bnd, targets, landmarks)
        if count_flips(g_star, faces):
            return None, None, None
        mu_next = beltrami_from_planar_map(source, g_star, faces)
        nu_next = chop(penalty_smoothing(mu_next, ops0, faces, cfg.alpha, cfg.beta, cfg.eta), cfg.delta)
        g = lbs_reconstruct(nu_next, source, faces, bnd, targets, landmarks)
        if count_flips(g, faces):
            return None, None, None
        mu_g = beltrami_from_planar_map(source, g, faces)
        nu_next = chop(nu_next + dt * (mu_g - nu_next), cfg.delta)
    except (ValueError, FloatingPointError, ZeroDivisionError) as exc:
        log.debug("landmark iteration failed at dt=%g: %s", dt, exc)
        return None, None, None
    if np.max(np.abs(mu_g)) >= 1:
        return None, None, None
    e, parts = _evaluate(pop, g, nu_next, faces, ops0, cfg)
    penalty = float(cfg.eta * np.sum(ops0.face_area * np.abs(nu_next - mu_g) ** 2))
    return _State(g, nu_next, domain, e, parts, mu=mu_g), gm_step, penalty
