import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pointfield.errors import ConfigError, HeadroomError
from pointfield.fock import MuIndex, build_fock, enumerate_mu, weyl, wick_operator
from pointfield.functionals import (Functional, damped_norm, evaluate, local_seminorm, make_family,
                                    member_specs, sigma_commutator, sigma_mu, sigma_q,
                                    weyl_coefficients)
from pointfield.spmodel import MultiIndex, SPVector, build_grid, dual_vectors, expansion_items

K0 = MultiIndex((0, 0, 0))


def random_vector(grid, rng, scale=1.0):
    n = grid.n_modes
    z = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    return SPVector.from_orthonormal(grid, scale * z / math.sqrt(n))


def test_vacuum_on_weyl(basis_a, rng):
    f = random_vector(basis_a.grid, rng)
    vac = Functional.vacuum(basis_a)
    assert vac(weyl(f, basis_a)) == pytest.approx(math.exp(-f.norm() ** 2 / 2), rel=1e-14)


def test_rank_one_matches_dense(basis_a, rng):
    f = random_vector(basis_a.grid, rng)
    W = weyl(f, basis_a).to_dense()
    sig = Functional.rank_one(basis_a, 3, 20, ell=1.0)
    d = basis_a.damping(1.0, [3, 20])
    assert sig(weyl(f, basis_a)) == pytest.approx(d[0] * d[1] * W[3, 20], rel=1e-12)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10_000))
def test_on_weyl_agrees_with_full_evaluation(seed):
    rng = np.random.default_rng(seed)
    g = build_grid(3, 1.0, 8.0, 4, 1)
    B = build_fock(g, 2)
    x, y, z = (B.coords(random_vector(g, rng)) for _ in range(3))
    sig = Functional(B, ((0.7, (x,), (y,)), (0.3 - 0.2j, (x, z), ()), (1.1, (), ())))
    f = random_vector(g, rng, rng.uniform(0.1, 2.0))
    exact = sig(weyl(f, B))
    fast = sig.on_weyl(B.coords(f)[None], np.array([f.norm() ** 2]))[0]
    assert abs(fast - exact) <= 1e-12 * max(1.0, abs(exact))


def test_functional_linearity(basis_a, rng):
    f = random_vector(basis_a.grid, rng)
    W = weyl(f, basis_a)
    a = Functional.rank_one(basis_a, 1, 2)
    b = Functional.vacuum(basis_a)
    assert (a + 2.0 * b)(W) == pytest.approx(a(W) + 2 * b(W))
    assert (a - b)(W) == pytest.approx(a(W) - b(W))


def test_headroom(rng):
    B = build_fock(build_grid(3, 1.0, 8.0, 4, 0), 1)
    x = random_vector(B.grid, rng)
    with pytest.raises(HeadroomError):
        sigma_commutator(x, x, B)
    with pytest.raises(HeadroomError):
        Functional(B, ((1.0, (B.coords(x), B.coords(x)), ()),))


def test_damped_norm_rank_one(basis_a):
    sig = Functional.rank_one(basis_a, 3, 5)
    ref = (1 + basis_a.energy[3]) ** 2 * (1 + basis_a.energy[5]) ** 2
    assert damped_norm(sig, 2.0) == pytest.approx(ref, rel=1e-12)


def test_damped_norm_svd_oracle(basis_a):
    h = dual_vectors(basis_a.grid)[(K0, 1)]
    sq = sigma_q(basis_a, h)
    K = sq.kernel()
    d = (1 + basis_a.energy) ** 4
    ref = np.linalg.svd(d[:, None] * K * d[None], compute_uv=False).sum()
    assert damped_norm(sq, 4.0) == pytest.approx(ref, rel=1e-10)


def test_commutator_functional_closed_form(basis_a, rng):
    g = basis_a.grid
    for _ in range(10):
        b, bp, f = random_vector(g, rng), random_vector(g, rng), random_vector(g, rng, 1.5)
        sc = sigma_commutator(b, bp, basis_a)
        fi = 1j * f
        ref = math.exp(-f.norm() ** 2 / 2) * b.inner(fi) * fi.inner(bp)
        assert sc(weyl(f, basis_a)) == pytest.approx(ref, rel=1e-12)
    assert abs(evaluate(sc, wick_operator(MuIndex(), basis_a))) < 1e-14


def test_sigma_mu_duality(basis_a):
    g = basis_a.grid
    duals = dual_vectors(g)
    mus = [mu for mu in enumerate_mu(2, 3) if mu.order >= 1]
    sigmas = [sigma_mu(mu, None, basis_a, duals=duals) for mu in mus]
    ops = [wick_operator(mu, basis_a) for mu in enumerate_mu(2, 3)]
    D = np.array([[evaluate(s, op) for op in ops] for s in sigmas])
    ref = np.eye(len(ops))[1:]
    assert np.abs(D - ref).max() < 1e-10
    assert max(s.residual for s in sigmas) < 1e-10


def test_sigma_mu_weyl_closed_form(basis_a, rng):
    """sigma_mu(W(f)) = e^{-|f|^2/2} c^mu with c the expansion coefficients of f."""
    g = basis_a.grid
    duals = dual_vectors(g)
    items = expansion_items(g)
    mu = MuIndex.from_items([(K0, 1), ((1, 0, 0), -1)])
    sig = sigma_mu(mu, None, basis_a, duals=duals)
    for _ in range(5):
        f = random_vector(g, rng, 0.8)
        c = weyl_coefficients(basis_a.coords(f)[None], duals, items, basis_a)[0]
        cmap = dict(zip(items, c))
        ref = math.exp(-f.norm() ** 2 / 2) * np.prod([cmap[it] ** n for it, n in mu.items()])
        got = sig(weyl(f, basis_a))
        assert abs(got - ref) <= 1e-10 * max(1.0, abs(ref))


def test_sigma_q_against_linear_solve(basis_a, rng):
    """Explicit Wick-square dual versus the solved one (two independent routes)."""
    duals = dual_vectors(basis_a.grid)
    solved = sigma_mu(MuIndex.from_items([(K0, 1), (K0, 1)]), None, basis_a, duals=duals)
    explicit = sigma_q(basis_a, duals[(K0, 1)])
    for _ in range(4):
        f = random_vector(basis_a.grid, rng, 0.7)
        c = basis_a.coords(f)[None]
        n2 = np.array([f.norm() ** 2])
        assert solved.on_weyl(c, n2)[0] == pytest.approx(-2 * explicit.on_weyl(c, n2)[0], rel=1e-9, abs=1e-13)


def test_member_specs_closed_under_sign_flip():
    specs = set(member_specs(2))
    for spec in specs:
        for j in range(len(spec)):
            flipped = list(spec)
            (p, t) = flipped[j]
            flipped[j] = (p, -t)
            assert tuple(flipped) in specs
    assert () in specs


def test_make_family(basis_a):
    fam = make_family(basis_a, 0.25, [(0, 0, 0)])
    assert len(fam) == len(member_specs(1))
    assert np.allclose(fam.coords[0], 0)
    vac = Functional.vacuum(basis_a)
    vals = fam.values(vac)
    assert vals[0] == pytest.approx(1.0)
    assert np.allclose(vals, np.exp(-fam.norm2 / 2))
    assert local_seminorm(vac, fam).value == pytest.approx(1.0)
    with pytest.raises(ConfigError):
        make_family(basis_a, 0.25, [(0, 0, 0)], species=[0, 0])


def test_family_parts_have_unit_continuum_norm(basis_a):
    fam = make_family(basis_a, 0.25, [(0, 0, 0)])
    for b, spec in enumerate(fam.specs):
        if len(spec) == 1:
            (_, t), = spec
            assert fam.norm2[b] == pytest.approx(t * t, rel=1e-10)
