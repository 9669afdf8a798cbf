import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from deqmap import meshgen
from deqmap.beltrami import beltrami_from_planar_map
from deqmap.density import assemble_operators
from deqmap.geometry import (
    BoundaryDescent, HoleFrame, boundary_bc_and_derivatives, boundary_energies, boundary_qc_descent, domain_reconstruct,
    hole_frames, place_boundary, rigid_components, update_domain,
)
from deqmap.mesh import CircularDomainSpec, as_complex, extract_boundaries


def hole_setup(centre=0.1 + 0.05j, radius=0.35, h=0.12):
    mesh = meshgen.circular_domain_mesh([centre], [radius], h=h)
    z = as_complex(mesh.vertices)
    loops = extract_boundaries(mesh)
    domain = CircularDomainSpec([centre], [radius])
    return mesh, z, loops, domain


def random_configuration(rng):
    """Flat mesh with one hole, and a perturbed target whose hole is another circle."""
    c0 = 0.3 * rng.uniform(-1, 1) + 0.3j * rng.uniform(-1, 1)
    r0 = rng.uniform(0.15, 0.3)
    mesh, z, loops, domain = hole_setup(c0, r0, h=0.15)
    frame = hole_frames(z, domain, loops)[0]
    target = z + 0.01 * (rng.normal(size=len(z)) + 1j * rng.normal(size=len(z)))
    frame = HoleFrame(1, frame.vertices, c0 + 0.02 * rng.normal() + 0.02j * rng.normal(), r0 * rng.uniform(0.95, 1.05),
                      frame.theta + 0.05 * rng.normal())
    target = place_boundary(target, [frame])
    return mesh, z, target, frame


def ring_nu(source, target, faces, frame, ring):
    return beltrami_from_planar_map(source, target, faces)[ring]


def moved(target, frame, dr=0.0, dphi=0.0, dc=0j):
    f = HoleFrame(1, frame.vertices, frame.centre + dc, frame.radius + dr, frame.theta + dphi)
    return place_boundary(target, [f])


# ---------------------------------------------------------------- rigid components

def uniform_frame(n=24, centre=0.2j, radius=0.3):
    theta = 2 * np.pi * np.arange(n) / n
    return HoleFrame(1, np.arange(n), centre, radius, theta)


def test_rigid_components_examples():
    f = uniform_frame()
    vc, pr, pt = rigid_components(np.full(len(f), 0.3 + 0j), f)
    assert vc == pytest.approx(0.3) and abs(pr) < 1e-15 and abs(pt) < 1e-15
    vc, pr, pt = rigid_components(0.1 * f.radial, f)
    assert abs(vc) < 1e-15 and pr == pytest.approx(0.1) and abs(pt) < 1e-15
    vc, pr, pt = rigid_components(0.2 * f.tangential, f)
    assert abs(vc) < 1e-15 and abs(pr) < 1e-15 and pt == pytest.approx(0.2)


@given(st.complex_numbers(max_magnitude=1), st.floats(-1, 1), st.floats(-1, 1))
def test_rigid_components_recover_combinations(t, a, b):
    f = uniform_frame()
    vc, pr, pt = rigid_components(t + a * f.radial + b * f.tangential, f)
    assert abs(vc - t) < 1e-12 and abs(pr - a) < 1e-12 and abs(pt - b) < 1e-12


def test_rigid_components_need_three_vertices():
    with pytest.raises(ValueError):
        rigid_components(np.zeros(2), HoleFrame(1, np.arange(2), 0j, 0.2, np.array([0.0, 1.0])))


# ---------------------------------------------------------------- boundary coefficients

def test_identity_gives_zero_boundary_coefficients():
    mesh, z, loops, domain = hole_setup()
    der = boundary_bc_and_derivatives(z, z, mesh.faces, hole_frames(z, domain, loops)[0])
    assert np.max(np.abs(der.nu)) < 1e-13


def test_rigid_translation_of_the_stencil_is_invisible(rng):
    mesh, z, target, frame = random_configuration(rng)
    der = boundary_bc_and_derivatives(z, target, mesh.faces, frame)
    # translating the hole and every other ring corner by the same vector leaves nu unchanged
    ring_vertices = np.unique(mesh.faces[der.faces])
    others = np.setdiff1d(ring_vertices, frame.vertices)
    shift = 1e-3 * (0.6 - 0.8j)
    t2 = moved(target, frame, dc=shift)
    t2[others] += shift
    np.testing.assert_allclose(ring_nu(z, t2, mesh.faces, frame, der.faces), der.nu, atol=1e-13)


def test_derivatives_match_finite_differences_on_random_configurations():
    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(100):
        mesh, z, target, frame = random_configuration(rng)
        der = boundary_bc_and_derivatives(z, target, mesh.faces, frame)
        np.testing.assert_allclose(der.nu, ring_nu(z, target, mesh.faces, frame, der.faces), atol=1e-14)
        h = 1e-6
        checks = [
            (der.d_radius, dict(dr=h), dict(dr=-h), h),
            (der.d_angle, dict(dphi=h), dict(dphi=-h), h),
            (der.d_cx, dict(dc=h), dict(dc=-h), h),
            (der.d_cy, dict(dc=1j * h), dict(dc=-1j * h), h),
        ]
        for analytic, plus, minus, step in checks:
            fd = (ring_nu(z, moved(target, frame, **plus), mesh.faces, frame, der.faces)
                  - ring_nu(z, moved(target, frame, **minus), mesh.faces, frame, der.faces)) / (2 * step)
            rel = np.max(np.abs(fd - analytic)) / np.max(np.abs(analytic))
            worst = max(worst, rel)
        np.testing.assert_allclose(der.d_tangent, der.d_angle / frame.radius)
    assert worst <= 1e-5


# ---------------------------------------------------------------- quasiconformal descent

def test_boundary_descent_vanishes_for_conformal_ring():
    mesh, z, loops, domain = hole_setup()
    frames = hole_frames(z, domain, loops)
    ops = assemble_operators(z, mesh.faces)
    d2, d3 = boundary_qc_descent(np.zeros(mesh.n_faces), z, z, mesh.faces, frames, ops)
    for d in (d2, d3):
        assert np.max(np.abs(d.translation)) < 1e-12 and np.max(np.abs(d.radial)) < 1e-12 and np.max(np.abs(d.tangential)) < 1e-12


def test_constant_coefficient_has_no_smoothness_descent():
    mesh, z, loops, domain = hole_setup()
    frames = hole_frames(z, domain, loops)
    ops = assemble_operators(z, mesh.faces)
    target = z + 0.2 * np.conj(z)  # constant coefficient 0.2 everywhere
    frames_t = [HoleFrame(1, f.vertices, f.centre + 0.2 * np.conj(f.centre), f.radius, f.theta) for f in frames]
    nu = beltrami_from_planar_map(z, target, mesh.faces)
    d2, d3 = boundary_qc_descent(nu, z, target, mesh.faces, frames_t, ops)
    assert np.max(np.abs(d3.translation)) < 1e-10 and abs(d3.radial[0]) < 1e-10 and abs(d3.tangential[0]) < 1e-10
    assert np.max(np.abs(d2.translation)) + abs(d2.radial[0]) + abs(d2.tangential[0]) > 1e-6


def _energies_after(step, descent, mesh, z, target, frame, ops):
    f = HoleFrame(1, frame.vertices, frame.centre + step * descent.translation[0], frame.radius + step * descent.radial[0],
                  frame.theta + step * descent.tangential[0] / frame.radius)
    t = place_boundary(target, [f])
    nu = beltrami_from_planar_map(z, t, mesh.faces)
    return boundary_energies(nu, z, mesh.faces, [f], ops)


@pytest.mark.parametrize("seed", range(10))
def test_descent_directions_lower_their_energies(seed):
    rng = np.random.default_rng(100 + seed)
    mesh, z, target, frame = random_configuration(rng)
    ops = assemble_operators(z, mesh.faces)
    nu = beltrami_from_planar_map(z, target, mesh.faces)
    d2, d3 = boundary_qc_descent(nu, z, target, mesh.faces, [frame], ops)
    e2, e3 = boundary_energies(nu, z, mesh.faces, [frame], ops)
    step = 1e-4
    assert _energies_after(step, d2, mesh, z, target, frame, ops)[0] < e2
    assert _energies_after(step, d3, mesh, z, target, frame, ops)[1] < e3


# ---------------------------------------------------------------- domain update

def test_update_domain_examples():
    domain = CircularDomainSpec([0.1j], [0.2])
    frames = [uniform_frame(12, 0.1j, 0.2)]
    same, frames2, step = update_domain(domain, frames, BoundaryDescent.zeros(1), 0.1)
    assert step == 0.1 and np.array_equal(same.centers, domain.centers) and np.array_equal(same.radii, domain.radii)
    grown, _, _ = update_domain(domain, frames, BoundaryDescent([0j], [0.1], [0.0]), 0.1)
    assert grown.radii[0] == pytest.approx(0.21)
    turned, frames3, _ = update_domain(domain, frames, BoundaryDescent([0j], [0.0], [0.2]), 0.1)
    np.testing.assert_allclose(frames3[0].theta - frames[0].theta, 0.1 * 0.2 / 0.2)


def test_update_domain_halves_to_avoid_collision():
    domain = CircularDomainSpec([-0.3, 0.3], [0.2, 0.2])
    frames = [uniform_frame(12, -0.3, 0.2), uniform_frame(12, 0.3, 0.2)]
    towards = BoundaryDescent([1.0, -1.0], [0.0, 0.0], [0.0, 0.0])
    new, _, step = update_domain(domain, frames, towards, 0.5)
    assert step is not None and step < 0.5
    assert new.is_valid()


def test_update_domain_gives_up_when_nothing_is_valid():
    domain = CircularDomainSpec([0.0], [0.5])
    new, _, step = update_domain(domain, [uniform_frame(12, 0, 0.5)], BoundaryDescent([0j], [1e6], [0.0]), 1.0, max_halvings=3)
    assert step is None and new.radii[0] == 0.5


@given(st.lists(st.complex_numbers(max_magnitude=3), min_size=2, max_size=2), st.lists(st.floats(-3, 3), min_size=2, max_size=2), st.floats(0.01, 2))
def test_update_domain_never_emits_invalid_spec(translation, radial, dt):
    domain = CircularDomainSpec([-0.4, 0.4j], [0.2, 0.25])
    frames = [uniform_frame(10, -0.4, 0.2), uniform_frame(10, 0.4j, 0.25)]
    new, _, step = update_domain(domain, frames, BoundaryDescent(translation, radial, [0.0, 0.0]), dt)
    assert new.is_valid()
    if step is None:
        np.testing.assert_array_equal(new.radii, domain.radii)


# ---------------------------------------------------------------- reconstruction

def test_domain_reconstruct_no_op():
    mesh = meshgen.circular_domain_mesh([-0.4, 0.4], [0.2, 0.2], h=0.1)
    z = as_complex(mesh.vertices)
    ops = assemble_operators(z, mesh.faces)
    bnd = np.concatenate([lp.vertices for lp in extract_boundaries(mesh)])
    g, mu = domain_reconstruct(np.zeros(mesh.n_faces), z, mesh.faces, bnd, z[bnd], ops, 0.0, 0.0, 0.1)
    assert np.max(np.abs(g - z)) <= 1e-10
    assert np.max(np.abs(mu)) <= 1e-10


def test_domain_reconstruct_damps_constant_coefficient():
    mesh, z, loops, domain = hole_setup()
    ops = assemble_operators(z, mesh.faces)
    bnd = np.concatenate([lp.vertices for lp in loops])
    c = 0.3 + 0.1j
    w = z + c * (1 - 0.1 * 0.5) * np.conj(z)
    g, mu = domain_reconstruct(np.full(mesh.n_faces, c), z, mesh.faces, bnd, w[bnd], ops, 0.5, 0.2, 0.1)
    np.testing.assert_allclose(mu, c * (1 - 0.1 * 0.5), atol=1e-10)
    assert np.max(np.abs(g - w)) <= 1e-10


def test_gm_no_op_with_uniform_density():
    from deqmap.applications import domain_of
    from deqmap.driver import SolverConfig, _geometry_step, _State

    mesh = meshgen.circular_domain_mesh([-0.4, 0.4], [0.2, 0.2], h=0.1)
    z = as_complex(mesh.vertices)
    loops = extract_boundaries(mesh, z)
    domain = domain_of(mesh, z)  # circles listed in loop order
    ops = assemble_operators(z, mesh.faces)
    cfg = SolverConfig(alpha=0.0, beta=0.0)
    state = _State(z, np.zeros(mesh.n_faces, complex), domain, 0.0, (0.0, 0.0, 0.0))
    g, nu, new_domain, step = _geometry_step(state, z, ops.face_area, mesh.faces, loops, ops, cfg, 0.1)
    np.testing.assert_allclose(new_domain.centers, domain.centers, atol=1e-12)
    np.testing.assert_allclose(new_domain.radii, domain.radii, atol=1e-12)
    assert np.max(np.abs(g - z)) <= 1e-10
