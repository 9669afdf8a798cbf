"""One density-equalizing descent step on a circular domain of fixed shape."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .beltrami import beltrami_from_planar_map, chop, lbs_reconstruct, smoothing_increment, wirtinger
from .density import FEOperators, density_velocity
from .mesh import CircularDomainSpec, LandmarkSet, as_complex, count_flips

log = logging.getLogger(__name__)


def dnu_from_velocity(current, velocity, nu0, source, faces, step=1.0) -> np.ndarray:
    """Change of the Beltrami coefficient per unit time when ``current`` moves with ``velocity``.

    With dg the velocity field, returns (dg_zbar - nu0 dg_z) / (current + step*dg)_z,
    derivatives taken with respect to the source.  For ``step`` equal to the
    time step this is exact: nu0 + step * result is the Beltrami coefficient
    of ``current + step * velocity``.
    """
    src = as_complex(source)[faces]
    dg = as_complex(velocity)[faces]
    g = as_complex(current)[faces]
    dg_z, dg_zbar = wirtinger(src, dg)
    den, _ = wirtinger(src, g + step * dg)
    if np.any(den == 0):
        raise ZeroDivisionError(f"perturbed map is degenerate on face {int(np.flatnonzero(den == 0)[0])}")
    return (dg_zbar - nu0 * dg_z) / den


def limited_dnu(current, velocity, nu0, source, faces, step, max_change=0.25):
    """``dnu_from_velocity`` with the step shrunk so no face changes by more than ``max_change``.

    Returns ``(dnu, step)``.
    """
    dnu = dnu_from_velocity(current, velocity, nu0, source, faces, step)
    for _ in range(30):
        peak = step * float(np.max(np.abs(dnu)))
        if peak <= max_change:
            break
        step *= 0.9 * max_change / peak
        dnu = dnu_from_velocity(current, velocity, nu0, source, faces, step)
    return dnu, step


@dataclass
class StepInfo:
    dt: float  # time step actually used
    retries: int
    flips: int
    velocity: np.ndarray
    density: np.ndarray  # vertex density on the input map


def _angular_gaps(z, centre):
    d = z - centre
    return np.angle(np.roll(d, -1) / d)


def _perimeter_shares(z):
    seg = np.abs(np.roll(z, -1) - z)
    return seg / seg.sum()


def _limit_gap_shrinkage(dphi, allowed, sweeps=200):
    """Closest angular moves (approximately) with dphi[i+1] - dphi[i] >= allowed[i] on a cycle.

    Violated pairs are pushed apart symmetrically, which keeps the mean
    move unchanged.  If the sweeps do not settle, the moves are scaled down
    uniformly until every constraint holds.
    """
    dphi = dphi.copy()
    for _ in range(sweeps):
        change = np.roll(dphi, -1) - dphi
        excess = allowed - change
        bad = excess > 1e-14
        if not bad.any():
            return dphi
        fix = np.where(bad, excess / 2, 0.0)
        dphi -= fix
        dphi += np.roll(fix, 1)
    change = np.roll(dphi, -1) - dphi
    shrink = change < 0
    with np.errstate(divide="ignore", invalid="ignore"):
        limits = np.where(shrink, np.minimum(allowed, 0.0) / change, np.inf)
    return dphi * float(np.clip(np.min(limits, initial=1.0), 0.0, 1.0))


def slide_boundary(z, velocity, dt, loops, domain: CircularDomainSpec, reference=None,
                   floor_ratio=0.25, min_gap_ratio=0.5) -> np.ndarray:
    """Boundary vertices advected by ``dt*velocity`` and pulled back onto their circles.

    Motion is measured as an angle about each circle centre.  The moves are
    adjusted so that no gap between neighbours drops below the larger of
    ``min_gap_ratio`` times its current size and ``floor_ratio`` times its
    share of the loop perimeter in ``reference`` (when given); gaps already
    under that floor may not shrink further.  Vertices therefore never
    overtake and cannot bunch up over many steps.
    """
    z = as_complex(z)
    velocity = as_complex(velocity)
    out = z.copy()
    centres = np.concatenate([[0j], domain.centers])
    radii = np.concatenate([[1.0], domain.radii])
    for lp, c, r in zip(loops, centres, radii):
        idx = lp.vertices
        d = z[idx] - c
        gaps = _angular_gaps(z[idx], c)  # gap i lies between vertex i and i+1
        orient = 1.0 if gaps.sum() > 0 else -1.0
        gaps = orient * gaps
        floor = min_gap_ratio * gaps
        if reference is not None:
            floor = np.maximum(floor, floor_ratio * 2 * np.pi * _perimeter_shares(as_complex(reference)[idx]))
        dphi = orient * np.angle((d + dt * velocity[idx]) / d)
        dphi = _limit_gap_shrinkage(dphi, np.minimum(floor - gaps, 0.0))
        out[idx] = c + r * np.exp(1j * (np.angle(d) + orient * dphi))
    return out


def bded_step(source, current, pop, faces, loops, domain: CircularDomainSpec, ops0: FEOperators,
              alpha=0.1, beta=0.05, dt=0.1, delta=0.1, nu0=None, landmarks: LandmarkSet | None = None,
              max_retries=5, diffusion_dt=None, max_change=0.25):
    """Beltrami density-equalizing descent from ``current`` (a map of ``source``).

    Returns ``(new_map, beltrami, info)``.  On a flipped result the step is
    retried with half the time step, at most ``max_retries`` times; the last
    attempt is returned with its flip count in ``info`` either way.
    ``diffusion_dt`` (default ``dt``) is the smoothing time of the density
    before its gradient is taken; it is not reduced by the retries.
    ``max_change`` caps the per-face change of the Beltrami coefficient
    in one step; the step is shrunk until the cap holds.
    """
    source, current = as_complex(source), as_complex(current)
    if nu0 is None:
        nu0 = beltrami_from_planar_map(source, current, faces)
    v, rho_v, _ = density_velocity(pop, current, faces, loops, domain, diffusion_dt=dt if diffusion_dt is None else diffusion_dt, neumann=True)
    bnd = np.concatenate([lp.vertices for lp in loops])
    step = float(dt)
    for attempt in range(max_retries + 1):
        dnu1, step = limited_dnu(current, v, nu0, source, faces, step, max_change)
        nu_t = nu0 + step * (dnu1 - alpha * nu0) + smoothing_increment(nu0, ops0, faces, step * beta)
        nu1 = chop(nu_t, delta)
        targets = slide_boundary(current, v, step, loops, domain, reference=source)[bnd]
        g = lbs_reconstruct(nu1, source, faces, bnd, targets, landmarks)
        flips = count_flips(g, faces)
        if flips == 0 or attempt == max_retries:
            break
        log.debug("descent step with dt=%g flipped %d faces; halving", step, flips)
        step /= 2
    mu = beltrami_from_planar_map(source, g, faces)
    return g, mu, StepInfo(step, attempt, flips, v, rho_v)
