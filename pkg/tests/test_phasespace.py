import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pointfield.errors import ConfigError, FitError, GapError, MembershipError, RankDeficiencyError
from pointfield.fock import FockOperator, enumerate_mu, identity_form, wick_monomial, wick_operator
from pointfield.functionals import Functional, sigma_mu
from pointfield.models import CFG_A
from pointfield.phasespace import (FiniteRankMap, PairingTensor, RadiusSchedule, XI, asymptotic_fit,
                                   cache_path, classify, critical_exponent, delta_gamma, delta_hat,
                                   extract, fit_exponent, lemma35, match_spaces, reconstruct,
                                   scaling_analysis, stability_check, tail_window)
from pointfield.spmodel import dual_vectors
from pointfield.symmetry import point_field

RADII8 = 0.5 * 2.0 ** -np.arange(8)


def synthetic(exponents, radii=RADII8, shape=(30, 12), seed=1):
    """Tensor with orthogonal rank-one terms decaying like r^theta(r)."""
    rng = np.random.default_rng(seed)
    Q, _ = np.linalg.qr(rng.standard_normal((shape[0], shape[0])))
    P, _ = np.linalg.qr(rng.standard_normal((shape[1], shape[1])))
    vals = np.array([sum(x ** t(x) * np.outer(Q[:, j], P[:, j]) for j, t in enumerate(exponents))
                     for x in radii])
    return PairingTensor.synthetic(radii, vals), Q


def const(t):
    return lambda x: t


@settings(max_examples=30, deadline=None)
@given(st.floats(-3, 6), st.floats(0.01, 100))
def test_fit_exponent_exact_power_law(slope, scale):
    r = RADII8
    got, rms = fit_exponent(r, scale * r**slope)
    assert got == pytest.approx(slope, abs=1e-9)
    assert rms < 1e-9


def test_fit_errors():
    with pytest.raises(FitError):
        fit_exponent([1, 2], [1, 2])
    with pytest.raises(FitError):
        fit_exponent([1, 2, 3], [1, 0, 2])


def test_asymptotic_fit_uses_small_radii():
    r = RADII8
    v = r**2 + 5 * r**0.5 * (r > 0.05)
    assert tail_window(8) == 4
    assert asymptotic_fit(r, v)[0] == pytest.approx(2.0, abs=1e-9)


def test_schedule():
    assert np.allclose(RadiusSchedule(0.5, 0.5, 6).radii, CFG_A.radii)
    with pytest.raises(ConfigError):
        RadiusSchedule(0.5, 0.5, 3)
    with pytest.raises(ConfigError):
        RadiusSchedule(0.5, 1.5, 6)


def test_synthetic_extraction_counts():
    T, Q = synthetic([const(0.0), const(1.0), const(2.0), const(2.0), const(3.0)])
    assert [extract(T, g)[0] for g in (0, 1, 2, 3)] == [1, 2, 4, 5]
    rep = scaling_analysis(T)
    assert np.allclose(rep.exponents[:5], [0, 1, 2, 2, 3], atol=1e-8)
    _, space, germs, _ = extract(T, 2)
    assert space.dim == 4 and germs.dim == 4
    # field-side directions span the leading left singular vectors
    assert match_spaces(space.vectors, Q[:, :4]) < 1e-8


def test_rank_bounds():
    T, _ = synthetic([const(0.0), const(1.0), const(2.0)])
    rep = scaling_analysis(T)
    assert all(rep.count_lower(g) == rep.count(g) for g in (0, 1, 2))
    # a noisy direction just under the cut only counts towards the upper bound
    wobble = lambda x: 2.2 + 0.3 * math.cos(7 * math.log(x)) / math.log(x)
    T, _ = synthetic([const(0.0), wobble])
    rep = scaling_analysis(T)
    assert rep.count(2) == 2 and rep.count_lower(2) == 1


def test_gap_error_when_cluster_straddles_cut():
    T, _ = synthetic([const(0.0), const(2.1), const(2.4), const(2.7)])
    with pytest.raises(GapError) as info:
        extract(T, 2)
    assert info.value.clusters


@settings(max_examples=30, deadline=None)
@given(st.floats(0.0, math.pi / 2 - 1e-3))
def test_match_spaces_known_angle(angle):
    x = np.array([1.0, 0, 0])
    y = np.array([math.cos(angle), math.sin(angle), 0])
    assert match_spaces(x, y) == pytest.approx(angle, abs=1e-12)


def test_match_spaces_basis_invariant(rng):
    A = rng.standard_normal((10, 3))
    M = rng.standard_normal((3, 3))
    assert match_spaces(A, A @ M) < 1e-12
    with pytest.raises(RankDeficiencyError):
        match_spaces(np.zeros((4, 2)), A[:4])


def test_classify_rules():
    assert classify({0: 1, 1: 2, 2: 7}).verdict == "RegularPointlike"
    assert classify({0: 1, 1: 1, 2: 1}).verdict == "DegenerateBounded"
    assert classify({0: 1, 0.5: 1}).verdict == "Inconclusive"
    assert classify({0: 1}).verdict == "Inconclusive"
    assert classify({0: 1, 1: GapError("x", [])}).verdict == "NonRegular"
    assert classify({0: 1, 1: 3}, [2, 3, 4, 5]).verdict == "NonRegular"
    assert classify({0: 1, 1: 2}, [2, 2, 2]).verdict == "RegularPointlike"


def test_delta_gamma_on_curves():
    r = RADII8
    assert delta_gamma(r, r**3, 2.0) == (0, pytest.approx(3.0))
    assert delta_gamma(r, r**2, 2.0)[0] == 1
    assert critical_exponent(r, np.zeros_like(r))[0] == math.inf


def test_stability_exact_and_adversarial():
    T, _ = synthetic([const(0.0), const(1.0), const(2.0), const(3.0)])
    assert stability_check(T, 2).stable
    T, _ = synthetic([const(0.0), lambda x: 2 + math.sin(math.log(x)), const(3.0)])
    rep = stability_check(T, 2)
    assert not rep.stable and rep.reasons
    with pytest.raises(ConfigError):
        stability_check(synthetic([const(0.0)], radii=RADII8[:6])[0], 0)


def test_cache_roundtrip(tmp_path, tensor_a):
    path = tensor_a.save(cache_path(tmp_path, CFG_A))
    back = PairingTensor.load(path, CFG_A)
    assert back.digest() == tensor_a.digest()
    assert np.array_equal(back.support, tensor_a.support)
    assert back.sigma_labels == tensor_a.sigma_labels
    with pytest.raises(ConfigError):
        PairingTensor.load(path, CFG_A.__class__(**{**CFG_A.__dict__, "seed": 9}))
    bad = tmp_path / "bad.pflb"
    bad.write_bytes(b"nope" + path.read_bytes()[4:])
    with pytest.raises(ConfigError):
        PairingTensor.load(bad, CFG_A)


def test_delta_hat_identity_cases(tensor_a):
    assert delta_hat(XI, XI, tensor_a).value == 0.0
    B, S, ell = tensor_a.basis, tensor_a.support, tensor_a.ell
    one = identity_form(B, ell, S)
    psi = FiniteRankMap(((Functional.vacuum(B), one, FockOperator.identity(B)),))
    assert psi.rank() == 1
    assert 0 < delta_hat(psi, XI, tensor_a).value < 1


def test_delta_hat_after_second_order_terms(tensor_a):
    B, S, ell = tensor_a.basis, tensor_a.support, tensor_a.ell
    duals = dual_vectors(B.grid)
    terms = [(Functional.vacuum(B), identity_form(B, ell, S), FockOperator.identity(B))]
    for mu in enumerate_mu(2, 3):
        if mu.order:
            terms.append((sigma_mu(mu, None, B, duals=duals), wick_monomial(mu, B, ell, S),
                          wick_operator(mu, B)))
    # the first term left out scales like r^3
    assert delta_hat(FiniteRankMap(tuple(terms)), XI, tensor_a).value == pytest.approx(math.exp(-3), abs=0.02)


def test_reconstruct_identity_exact(tensor_a):
    res = reconstruct(identity_form(tensor_a.basis, tensor_a.ell, tensor_a.support), tensor_a, 0)
    assert res.exact
    assert np.all(res.errors < 1e-10)


def test_reconstruct_membership(tensor_a):
    phi = point_field(tensor_a.basis, tensor_a.ell, tensor_a.support)
    with pytest.raises(MembershipError):
        reconstruct(phi, tensor_a, 0)


def test_lemma35_bound(basis_a):
    for r in (0.5, 0.125):
        res = lemma35(basis_a, r, 4.0)
        assert res.err_damped <= res.bound
        assert res.err_total > 0
        assert np.allclose(res.operator, res.operator.conj().T, atol=1e-12)


def test_lemma35_eps_limit(basis_a):
    eps = np.array([1e-1, 5e-2, 2.5e-2, 1.25e-2])
    results = [lemma35(basis_a, 0.25, 1.0, eps=e) for e in eps]
    assert all(res.err_damped <= res.bound for res in results)
    # the bound is linear in eps; the defect of sin(eps x)/eps is quadratic
    slope = fit_exponent(eps, [res.err_damped for res in results])[0]
    assert slope >= 1.0 and slope == pytest.approx(2.0, abs=0.05)


def test_sine_inequality_spot_check():
    x, eps = 2.0, 0.1
    assert (x - math.sin(eps * x) / eps) ** 2 <= eps**2 * x**4
