import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pointfield.errors import ConfigError, ResolutionError
from pointfield.fock import MuIndex, build_fock, identity_form, wick_monomial
from pointfield.spmodel import MultiIndex, build_grid
from pointfield.symmetry import (DerivativeMap, bounded_derivative_subspace, check_microscopic,
                                 conjugation, cubic_rotations, derivative, dilation,
                                 field_equation_residual, identity_action, mode_shift,
                                 momentum_couplings, momentum_matrix, point_field, rotation,
                                 rotation_matrix, wigner_blocks)

K0 = MultiIndex((0, 0, 0))
ELL = 2.0


def mu_plus(k):
    return MuIndex.from_items([(MultiIndex(k), 1)])


def random_rotation(seed):
    rng = np.random.default_rng(seed)
    Q, R = np.linalg.qr(rng.standard_normal((3, 3)))
    Q = Q * np.sign(np.diag(R))
    return Q if np.linalg.det(Q) > 0 else -Q


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000), st.integers(0, 10_000))
def test_wigner_blocks_are_a_representation(s1, s2):
    R1, R2 = random_rotation(s1), random_rotation(s2)
    D1, D2, D12 = (wigner_blocks(R, 2) for R in (R1, R2, R1 @ R2))
    assert np.allclose(D1 @ D1.T, np.eye(9), atol=1e-12)
    assert np.allclose(D1 @ D2, D12, atol=1e-12)


def test_cubic_group():
    rots = cubic_rotations()
    assert len(rots) == 24
    keys = {tuple(R.ravel()) for R in rots}
    assert len(keys) == 24
    for a in rots:
        for b in rots:
            assert tuple((a @ b).ravel()) in keys


def test_momentum_couplings_oracle():
    N = momentum_couplings(1)
    # <Y_00 | n_z | Y_10> = 1/sqrt(3); channel order (0,0), (1,-1), (1,0), (1,1)
    assert N[2, 0, 2] == pytest.approx(1 / math.sqrt(3), rel=1e-12)
    assert np.allclose(N, np.transpose(N, (0, 2, 1)))
    assert abs(N[2, 0, 1]) < 1e-14


def test_rotation_specs(basis_a):
    a = rotation(basis_a, (2, -1, 3))
    assert a.isometry_defect() < 1e-12
    with pytest.raises(ConfigError):
        rotation(basis_a, (1, 2, 4))
    with pytest.raises(ConfigError):
        rotation(basis_a, np.diag([1.0, 1.0, -1.0]))


def test_rotation_maps_d1_to_d2(basis_a):
    a = rotation(basis_a, rotation_matrix(2, math.pi / 2))
    d1 = wick_monomial(mu_plus((1, 0, 0)), basis_a, ELL)
    d2 = wick_monomial(mu_plus((0, 1, 0)), basis_a, ELL)
    image = a.apply(d1)
    assert np.allclose(image.kernel, d2.kernel, atol=1e-12)


def test_rotation_fixes_scalar_field(basis_a):
    phi = point_field(basis_a, ELL)
    for R in (random_rotation(3), cubic_rotations()[7]):
        assert np.allclose(rotation(basis_a, R).apply(phi).kernel, phi.kernel, atol=1e-12)


def test_identity_and_conjugation(basis_a):
    phi = wick_monomial(mu_plus((1, 0, 0)), basis_a, ELL)
    assert np.allclose(identity_action(basis_a).apply(phi).kernel, phi.kernel)
    c = conjugation(basis_a)
    assert np.allclose(c.apply(c.apply(phi)).kernel, phi.kernel)
    rep = check_microscopic(c, [1.0])
    assert rep.passed


def test_rotation_microscopic(tensor_a):
    model = tensor_a.model
    a = rotation(model.basis, rotation_matrix(2, math.pi / 2))
    fams = [(model.family(r), model.family(r)) for r in tensor_a.radii[:2]]
    rep = check_microscopic(a, [1.0, 2.0], fams)
    assert rep.passed
    assert all(n <= 1 + 1e-10 for _, _, n in rep.damping)


def test_dilation_errors_and_identity():
    g1 = build_grid(3, 1.0, 8.0, 4, 1)
    with pytest.raises(ConfigError):
        dilation(build_fock(g1, 1), 2.0)
    B0 = build_fock(build_grid(3, 0.0, 8.0, 4, 1), 1)
    with pytest.raises(ConfigError):
        dilation(B0, 3.0)
    assert np.allclose(dilation(B0, 1.0).U, np.eye(B0.n_modes))


def test_dilation_is_partial_isometry():
    B0 = build_fock(build_grid(3, 0.0, 8.0, 4, 1), 1)
    U = dilation(B0, 2.0).U
    assert np.allclose(U @ U.conj().T @ U, U)
    # energies of kept modes are divided by lambda
    E = B0.mode_energies
    src, dst = np.nonzero(U.T)
    assert np.allclose(E[dst], E[src] / 2.0)


def test_mode_shift_fails_damping_without_extra_order():
    B0 = build_fock(build_grid(3, 0.0, 8.0, 4, 0), 1)
    rep = check_microscopic(mode_shift(B0), [1.0, 2.0])
    # the energy exponent is raised to keep the damped image bounded
    assert all(lp > l for l, lp, _ in rep.damping)


def test_derivatives_match_wick_forms(basis_a):
    phi = point_field(basis_a, ELL)
    d0 = derivative(phi, 0)
    ref0 = wick_monomial(MuIndex.from_items([(K0, -1)]), basis_a, ELL)
    assert np.allclose(d0.kernel, -1j * ref0.kernel, atol=1e-13)
    for j in (1, 2, 3):
        kappa = MultiIndex.unit(3, j - 1)
        ref = wick_monomial(MuIndex.from_items([(kappa, 1)]), basis_a, ELL)
        assert np.allclose(DerivativeMap(j)(phi).kernel, 1j * ref.kernel, atol=1e-13)


def test_derivative_of_identity_vanishes(basis_a):
    one = identity_form(basis_a, ELL)
    for mu in range(4):
        assert derivative(one, mu).norm() < 1e-13


def test_momentum_resolution(basis_a):
    with pytest.raises(ResolutionError):
        momentum_matrix(build_fock(build_grid(3, 1.0, 8.0, 4, 0), 1), 1)
    with pytest.raises(ConfigError):
        momentum_matrix(basis_a, 0)
    with pytest.raises(ResolutionError):
        field_equation_residual(basis_a, ELL)
    assert np.allclose(momentum_matrix(basis_a, 1), momentum_matrix(basis_a, 1).conj().T)


def test_bounded_derivative_subspace(basis_a):
    forms = [identity_form(basis_a, ELL), point_field(basis_a, ELL)]
    V = bounded_derivative_subspace(forms)
    assert V.shape == (2, 1)
    assert abs(abs(V[0, 0]) - 1) < 1e-12

