import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

from pointfield.errors import ConfigError, GridMismatchError, ResolutionError
from pointfield.phasespace import fit_exponent
from pointfield.spmodel import (MultiIndex, SPVector, build_grid, bump_constant, channels_for,
                                dual_vectors, energy_restricted_norm, expansion_items,
                                improper_vector, make_local_pair, moment_pairing, multi_indices,
                                radial_moment, radial_transform, real_sph_harm, sphere_area,
                                sphere_monomial_closed, sphere_monomial_integral, sphere_rule)


def bump(rho, s=3):
    return bump_constant(s) * (1 - rho**2) ** 4


def transform_oracle(k):
    """Radial 3d Fourier transform of the bump by adaptive quadrature."""
    f = lambda rho: rho**2 * bump(rho) * np.sinc(k * rho / np.pi)
    return math.sqrt(2 / math.pi) * integrate.quad(f, 0, 1, epsabs=1e-14, epsrel=1e-12, limit=500)[0]


def test_multi_index_basics():
    k = MultiIndex((2, 0, 1))
    assert k.order == 3 and k.factorial == 2
    assert k + MultiIndex((0, 1, 0)) == (2, 1, 1)
    assert MultiIndex.unit(3, 1) == (0, 1, 0)
    assert len(multi_indices(3, 2)) == 6
    with pytest.raises(ValueError):
        MultiIndex((-1, 0, 0))


def test_build_grid_nodes_and_errors():
    g = build_grid(3, 1.0, 8.0, 4, 1)
    assert np.allclose(g.radial_nodes, [1, 2, 4, 8])
    assert g.n_modes == 16
    assert np.allclose(g.energies, np.sqrt(g.radial_nodes**2 + 1))
    for bad in [(0, 1.0, 8.0, 4, 1), (3, 1.0, 8.0, 1, 1), (3, -1.0, 8.0, 4, 1), (2, 1.0, 8.0, 4, 1)]:
        with pytest.raises(ConfigError):
            build_grid(*bad)


def test_grid_mismatch():
    a = build_grid(3, 1.0, 8.0, 4, 1)
    b = build_grid(3, 0.5, 8.0, 4, 1)
    with pytest.raises(GridMismatchError):
        a.zero().inner(b.zero())


def test_sphere_area_and_bump_normalization():
    assert sphere_area(3) == pytest.approx(4 * math.pi)
    for s in (2, 3, 4):
        total = sphere_area(s) * integrate.quad(lambda r: r ** (s - 1) * bump(r, s), 0, 1)[0]
        assert total == pytest.approx(1.0, rel=1e-12)


@given(st.tuples(st.integers(0, 4), st.integers(0, 4), st.integers(0, 4)))
def test_sphere_monomials_match_closed_form(alpha):
    assert sphere_monomial_integral(alpha) == pytest.approx(sphere_monomial_closed(alpha), abs=1e-12)


def test_real_harmonics_orthonormal():
    T, P, W, _ = sphere_rule()
    Y = np.array([real_sph_harm(l, m, T, P) for l, m in channels_for(3, 3)])
    assert np.allclose((Y * W) @ Y.T, np.eye(len(Y)), atol=1e-12)


@pytest.mark.parametrize("j", [0, 1, 2, 3])
def test_radial_moment_oracle(j):
    ref = integrate.quad(lambda r: r ** (j + 2) * bump(r), 0, 1)[0]
    assert radial_moment(3, j) == pytest.approx(ref, rel=1e-12)


@pytest.mark.parametrize("k", [0.3, 1.0, 4.0, 11.0])
def test_radial_transform_oracle(k):
    assert radial_transform(3, 0, 0, k)[0] == pytest.approx(transform_oracle(k), rel=1e-9, abs=1e-14)


def test_localized_pair_normalization_oracle():
    g = build_grid(3, 1.0, 8.0, 4, 1)
    r = 0.5
    pair = make_local_pair(g, r, (0, 0, 0))
    # continuum norm of omega^{-1/2} G_hat_r by independent quadrature
    integrand = lambda p: 4 * math.pi * p**2 * (r**3 * transform_oracle(r * p)) ** 2 / math.sqrt(p * p + 1)
    norm2 = integrate.quad(integrand, 0, 400 / r, limit=400)[0]
    assert pair.plus_scale == pytest.approx(1 / math.sqrt(norm2), rel=1e-6)
    # zeroth moment of G_r is r^3 because the bump integrates to one
    c0 = moment_pairing(pair, (0, 0, 0), "+")
    assert c0 == pytest.approx(math.sqrt(2) * pair.plus_scale * r**3, rel=1e-12)
    assert c0 != 0


def test_moment_shrinks_with_radius():
    g = build_grid(3, 1.0, 8.0, 4, 1)
    c1 = moment_pairing(make_local_pair(g, 0.2, (0, 0, 0)), (0, 0, 0), "+")
    c2 = moment_pairing(make_local_pair(g, 0.1, (0, 0, 0)), (0, 0, 0), "+")
    assert c2 / c1 == pytest.approx(0.5, rel=0.05)


def test_minus_moment_slope():
    g = build_grid(3, 1.0, 8.0, 4, 1)
    radii = 0.5 * 0.5 ** np.arange(6)
    vals = [abs(moment_pairing(make_local_pair(g, r, (0, 0, 0)), (0, 0, 0), "-")) for r in radii]
    assert fit_exponent(radii, vals)[0] == pytest.approx(2.0, abs=0.15)


@settings(max_examples=30, deadline=None)
@given(st.tuples(st.integers(0, 1), st.integers(0, 1), st.integers(0, 1)),
       st.tuples(st.integers(0, 2), st.integers(0, 2), st.integers(0, 2)),
       st.sampled_from(["+", "-"]))
def test_moment_parity(beta, kappa, sign):
    g = build_grid(3, 1.0, 8.0, 4, 2)
    if sum(beta) > 2 or sum(kappa) > 2:
        return
    pair = make_local_pair(g, 0.3, beta)
    val = moment_pairing(pair, kappa, sign)
    if any((a + b) % 2 for a, b in zip(beta, kappa)):
        ref = abs(moment_pairing(pair, beta, sign))
        assert abs(val) <= 1e-10 * ref


def test_moment_resolution_error():
    g = build_grid(3, 1.0, 8.0, 4, 1)
    pair = make_local_pair(g, 0.3, (0, 0, 0))
    with pytest.raises(ResolutionError):
        moment_pairing(pair, (2, 0, 0), "+")
    with pytest.raises(ResolutionError):
        improper_vector(g, (0, 1, 1), "+")


def test_improper_vector_minus_ratio_massless():
    g = build_grid(3, 0.0, 8.0, 4, 0)
    v = improper_vector(g, (0, 0, 0), "-")
    a = np.abs(v.amplitudes)
    assert a[1] / a[0] == pytest.approx(math.sqrt(g.radial_nodes[1] / g.radial_nodes[0]), rel=1e-12)


def test_energy_restricted_norm_limits(grid_a):
    v = improper_vector(grid_a, (0, 0, 0), "+")
    assert energy_restricted_norm(v, 1e9) == pytest.approx(v.norm(), rel=1e-14)
    one = grid_a.zero().amplitudes.copy()
    one[grid_a.mode_index(3, 0, 0)] = 1.0
    w = grid_a.vector(one)
    assert energy_restricted_norm(w, grid_a.energies[3] * 0.99) == 0.0


def test_energy_restricted_norm_bruteforce(grid_a):
    v = improper_vector(grid_a, (0, 0, 0), "+")
    E = 0.5 * grid_a.energies.max()
    brute = 0.0
    for i in range(grid_a.n_modes):
        if grid_a.mode_energies[i] <= E:
            brute += grid_a.mode_weights[i] * abs(v.amplitudes[i]) ** 2
    assert energy_restricted_norm(v, E) == pytest.approx(math.sqrt(brute), rel=1e-14)


@settings(max_examples=25, deadline=None)
@given(st.lists(st.floats(0.5, 12.0), min_size=2, max_size=6))
def test_energy_restricted_norm_monotone(energies):
    g = build_grid(3, 1.0, 8.0, 4, 1)
    rng = np.random.default_rng(len(energies))
    v = SPVector.from_orthonormal(g, rng.standard_normal(g.n_modes) + 1j * rng.standard_normal(g.n_modes))
    vals = [energy_restricted_norm(v, E) for E in sorted(energies)]
    assert all(b >= a - 1e-15 for a, b in zip(vals, vals[1:]))


def test_dual_vectors_biorthogonal(grid_a):
    items = expansion_items(grid_a)
    duals = dual_vectors(grid_a)
    M = np.array([[duals[i].inner(improper_vector(grid_a, *j)) for j in items] for i in items])
    assert np.allclose(M, np.eye(len(items)), atol=1e-10)


def test_spvector_algebra(grid_a, rng):
    n = grid_a.n_modes
    a = SPVector.from_orthonormal(grid_a, rng.standard_normal(n) + 1j * rng.standard_normal(n))
    b = SPVector.from_orthonormal(grid_a, rng.standard_normal(n))
    assert (a + b).inner(a) == pytest.approx(a.inner(a) + b.inner(a))
    assert (2j * a).norm() == pytest.approx(2 * a.norm())
    assert a.inner(b) == pytest.approx(np.vdot(a.orthonormal(), b.orthonormal()))
