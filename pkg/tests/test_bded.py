import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from deqmap import meshgen
from deqmap.bded import _limit_gap_shrinkage, bded_step, dnu_from_velocity, limited_dnu, slide_boundary
from deqmap.beltrami import beltrami_from_planar_map
from deqmap.density import assemble_operators
from deqmap.driver import density_variance
from deqmap.mesh import CircularDomainSpec, as_complex, count_flips, extract_boundaries

from conftest import quadrant_population

ANN = meshgen.annulus_mesh(0.5, h=0.08)
Z = as_complex(ANN.vertices)
LOOPS = extract_boundaries(ANN)
DOMAIN = CircularDomainSpec([0j], [0.5])
OPS = assemble_operators(Z, ANN.faces)


def boundary_residual(g):
    return max(np.max(np.abs(np.abs(g[LOOPS[0].vertices]) - 1)), np.max(np.abs(np.abs(g[LOOPS[1].vertices]) - 0.5)))


# ---------------------------------------------------------------- coefficient change

def test_zero_velocity_gives_zero_change():
    nu0 = np.full(ANN.n_faces, 0.1 + 0.2j)
    assert np.max(np.abs(dnu_from_velocity(Z, np.zeros_like(Z), nu0, Z, ANN.faces))) == 0


def test_conjugate_velocity():
    eps = 1e-3
    d = dnu_from_velocity(Z, eps * np.conj(Z), np.zeros(ANN.n_faces), Z, ANN.faces, step=0.0)
    np.testing.assert_allclose(d, eps, atol=1e-12)


def test_change_is_exact_at_the_used_step():
    rng = np.random.default_rng(3)
    v = 0.2 * (np.sin(3 * Z.real) + 1j * np.cos(2 * Z.imag)) + 0.01 * rng.normal(size=len(Z))
    g = Z + 0.1 * np.conj(Z) ** 2
    nu0 = beltrami_from_planar_map(Z, g, ANN.faces)
    step = 0.05
    d = dnu_from_velocity(g, v, nu0, Z, ANN.faces, step)
    exact = beltrami_from_planar_map(Z, g + step * v, ANN.faces)
    np.testing.assert_allclose(nu0 + step * d, exact, atol=1e-12)


def test_linearised_change_has_second_order_error():
    v = 0.2 * (np.sin(3 * Z.real) + 1j * np.cos(2 * Z.imag))
    g = Z + 0.1 * np.conj(Z) ** 2
    nu0 = beltrami_from_planar_map(Z, g, ANN.faces)
    d0 = dnu_from_velocity(g, v, nu0, Z, ANN.faces, step=0.0)
    steps = np.array([1e-2, 1e-3, 1e-4])
    errors = np.array([np.max(np.abs(beltrami_from_planar_map(Z, g + dt * v, ANN.faces) - nu0 - dt * d0)) for dt in steps])
    orders = np.log(errors[:-1] / errors[1:]) / np.log(steps[:-1] / steps[1:])
    assert np.all(orders > 1.9)


def test_limited_change_respects_cap():
    v = 5 * (np.sin(3 * Z.real) + 1j * np.cos(2 * Z.imag))
    dnu, step = limited_dnu(Z, v, np.zeros(ANN.n_faces), Z, ANN.faces, 1.0, max_change=0.1)
    assert step < 1.0
    assert step * np.max(np.abs(dnu)) <= 0.1 + 1e-12


# ---------------------------------------------------------------- boundary sliding

def test_slide_boundary_keeps_circles_and_order():
    rng = np.random.default_rng(5)
    v = rng.normal(size=len(Z)) + 1j * rng.normal(size=len(Z))
    out = slide_boundary(Z, v, 0.5, LOOPS, DOMAIN, reference=Z)
    assert boundary_residual(out) <= 1e-14
    for lp, c in zip(LOOPS, [0j, 0j]):
        before = np.angle(np.roll(Z[lp.vertices], -1) / Z[lp.vertices])
        after = np.angle(np.roll(out[lp.vertices], -1) / out[lp.vertices])
        assert np.all(np.sign(after) == np.sign(before))
        assert np.all(np.abs(after) >= 0.25 * np.abs(before) - 1e-12)


def test_slide_boundary_rigid_rotation_passes_through():
    v = 0.1j * Z  # rotation about the origin
    out = slide_boundary(Z, v, 0.1, LOOPS, DOMAIN, reference=Z)
    b = LOOPS[0].vertices
    np.testing.assert_allclose(np.angle(out[b] / Z[b]), np.angle(1 + 0.01j), atol=1e-12)


@given(st.lists(st.floats(-3, 3), min_size=5, max_size=40), st.integers(0, 10**6))
def test_gap_limiter_satisfies_constraints(moves, seed):
    rng = np.random.default_rng(seed)
    dphi = np.array(moves)
    allowed = -rng.uniform(0.0, 0.5, len(dphi))
    out = _limit_gap_shrinkage(dphi, allowed)
    assert np.all(np.roll(out, -1) - out >= allowed - 1e-9)


# ---------------------------------------------------------------- full step

def test_uniform_density_is_a_fixed_point():
    g, mu, info = bded_step(Z, Z, ANN.face_areas(), ANN.faces, LOOPS, DOMAIN, OPS)
    assert np.max(np.abs(g - Z)) <= 1e-10
    assert np.max(np.abs(info.velocity)) < 1e-10


def test_constant_coefficient_is_damped(monkeypatch):
    import deqmap.bded as bded

    seen = {}
    real_lbs = bded.lbs_reconstruct

    def spy(nu, *args, **kwargs):
        seen["nu"] = nu
        return real_lbs(nu, *args, **kwargs)

    monkeypatch.setattr(bded, "lbs_reconstruct", spy)
    c, alpha, dt = 0.2 + 0.1j, 0.1, 0.1
    g, mu, info = bded_step(Z, Z, ANN.face_areas(), ANN.faces, LOOPS, DOMAIN, OPS, alpha=alpha, beta=0.3, dt=dt,
                            nu0=np.full(ANN.n_faces, c))
    assert info.dt == dt
    np.testing.assert_allclose(seen["nu"], c * (1 - dt * alpha), atol=1e-12)
    assert np.all(np.abs(mu) < 1)


def test_one_step_lowers_variance_and_keeps_invariants():
    pop = quadrant_population(ANN)
    before = density_variance(pop, Z, ANN.faces)
    g, mu, info = bded_step(Z, Z, pop, ANN.faces, LOOPS, DOMAIN, OPS)
    assert info.flips == 0 and count_flips(g, ANN.faces) == 0
    assert np.max(np.abs(mu)) < 1
    assert boundary_residual(g) <= 1e-14
    assert density_variance(pop, g, ANN.faces) < before


@pytest.mark.parametrize("seed", range(4))
def test_step_never_raises_variance_without_regularisation(seed):
    rng = np.random.default_rng(seed)
    cen = Z[ANN.faces].mean(axis=1)
    bumps = 1 + rng.uniform(0.5, 2) * np.exp(-np.abs(cen - 0.75 * np.exp(2j * np.pi * rng.uniform())) ** 2 / 0.05)
    pop = ANN.face_areas() * bumps
    before = density_variance(pop, Z, ANN.faces)
    g, mu, info = bded_step(Z, Z, pop, ANN.faces, LOOPS, DOMAIN, OPS, alpha=0.0, beta=0.0)
    assert density_variance(pop, g, ANN.faces) <= before
    assert pop.sum() == pytest.approx((ANN.face_areas() * bumps).sum())
