"""Symmetries of the truncated model and their action on field spaces.

Single-particle maps act on orthonormal mode coordinates.  Rotations mix
the harmonic channels of each radial node through real Wigner blocks,
dilations (massless grids only) shift radial nodes by whole powers of the
node ratio.  Second quantization is done on a support of Fock states that
the map leaves invariant.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from itertools import permutations, product
from typing import Sequence

import numpy as np

from .errors import ConfigError, ResolutionError
from .fock import DampedForm, FockBasis, default_support, field_form
from .spmodel import MomentumGrid, improper_vector, real_sph_harm, sphere_rule


# ---------------------------------------------------------------------------
# single-particle pieces

@lru_cache(maxsize=None)
def _harmonics_at(l_max: int, key: bytes) -> np.ndarray:
    units = np.frombuffer(key).reshape(-1, 3)
    theta = np.arccos(np.clip(units[:, 2], -1.0, 1.0))
    phi = np.arctan2(units[:, 1], units[:, 0])
    return np.array([real_sph_harm(l, m, theta, phi) for l in range(l_max + 1) for m in range(-l, l + 1)])


def wigner_blocks(R: np.ndarray, l_max: int) -> np.ndarray:
    """Real-harmonic representation of ``f(n) -> f(R^T n)`` for ``l <= l_max``.

    Entry ``[c', c]`` is ``int Y_c'(n) Y_c(R^T n) dn``, by a product rule that
    is exact for the polynomial degrees involved.
    """
    _, _, W, U = sphere_rule()
    Y = _harmonics_at(l_max, np.ascontiguousarray(U).tobytes())
    rotated = np.ascontiguousarray(U @ np.asarray(R, dtype=float))  # rows are R^T n
    Yr = _harmonics_at(l_max, rotated.tobytes())
    D = (Y * W) @ Yr.T
    ls = [l for l in range(l_max + 1) for _ in range(2 * l + 1)]
    mask = np.equal.outer(ls, ls)
    return np.where(mask, D, 0.0)


def momentum_couplings(l_max: int) -> np.ndarray:
    """``int Y_c n_j Y_c' dn`` for j = 1..3, shape (3, channels, channels)."""
    _, _, W, U = sphere_rule()
    Y = _harmonics_at(l_max, np.ascontiguousarray(U).tobytes())
    return np.array([(Y * (W * U[:, j])) @ Y.T for j in range(3)])


def _check_channels(grid) -> None:
    if not isinstance(grid, MomentumGrid) or grid.spatial_dim != 3:
        raise ConfigError("this action needs a three-dimensional harmonic grid")


def _block_diag(blocks: Sequence[np.ndarray]) -> np.ndarray:
    n = sum(b.shape[0] for b in blocks)
    out = np.zeros((n, n), dtype=complex)
    pos = 0
    for b in blocks:
        k = b.shape[0]
        out[pos:pos + k, pos:pos + k] = b
        pos += k
    return out


def rotation_matrix(axis: int, angle: float) -> np.ndarray:
    """Rotation by ``angle`` about coordinate axis 0, 1 or 2."""
    c, s = math.cos(angle), math.sin(angle)
    i, j = [(1, 2), (2, 0), (0, 1)][axis]
    R = np.eye(3)
    R[i, i] = R[j, j] = c
    R[i, j] = -s
    R[j, i] = s
    return R


def cubic_rotations() -> list[np.ndarray]:
    """The 24 proper rotations among signed axis permutations."""
    out = []
    for perm in permutations(range(3)):
        for signs in product((1.0, -1.0), repeat=3):
            R = np.zeros((3, 3))
            for i, p in enumerate(perm):
                R[i, p] = signs[i]
            if np.linalg.det(R) > 0:
                out.append(R)
    return out


def _as_rotation(spec) -> np.ndarray:
    R = np.asarray(spec, dtype=float)
    if R.shape == (3,):  # signed axis permutation, 1-based: (2, -1, 3)
        perm = np.zeros((3, 3))
        for i, v in enumerate(R.astype(int)):
            if abs(v) not in (1, 2, 3):
                raise ConfigError("signed permutations use entries +-1, +-2, +-3")
            perm[i, abs(v) - 1] = math.copysign(1.0, v)
        R = perm
    if R.shape != (3, 3) or not np.allclose(R @ R.T, np.eye(3), atol=1e-12) \
            or np.linalg.det(R) < 0:
        raise ConfigError("rotation must be a proper orthogonal 3x3 matrix")
    return R


# ---------------------------------------------------------------------------
# actions

@dataclass(frozen=True, eq=False)
class SymmetryAction:
    """A (partial) single-particle isometry ``U`` and its second quantization.

    ``antilinear`` marks Hermitean conjugation, which has no ``U``.
    ``c`` and ``R`` are the localization factor and validity radius, and
    ``justification`` says why ``c`` holds.
    """

    name: str
    basis: FockBasis
    U: np.ndarray | None
    antilinear: bool = False
    c: float = 1.0
    R: float = math.inf
    justification: str = ""
    node_shift: int = 0
    _cache: dict = field(default_factory=dict, repr=False)

    def single_particle(self, coords: np.ndarray) -> np.ndarray:
        if self.antilinear:
            raise ConfigError("conjugation has no single-particle part")
        return np.asarray(coords) @ self.U.T

    def isometry_defect(self) -> float:
        """``max | |U v|^2 - |v|^2 |`` over mode vectors kept by the map."""
        if self.U is None:
            return 0.0
        G = self.U.conj().T @ self.U
        kept = np.abs(np.diag(G)) > 0.5
        return float(np.abs(G[np.ix_(kept, kept)] - np.eye(int(kept.sum()))).max())

    def fock_matrix(self, support=None) -> np.ndarray:
        """``Gamma(U)`` between the states of ``support``.

        Columns of states whose image leaves the support raise; columns of
        states containing modes that the map drops are zero.
        """
        support = default_support(self.basis, support)
        key = support.tobytes()
        if key in self._cache:
            return self._cache[key]
        if self.U is None:
            raise ConfigError("conjugation has no second-quantized unitary")
        L = self.basis.ladder_tensor(support)
        C = np.swapaxes(L, 1, 2)  # creators
        size = len(support)
        vac = np.flatnonzero(self.basis.n_particles[support] == 0)
        if vac.size != 1:
            raise ConfigError("support must contain the vacuum")
        # creator of the image of every mode, restricted to the support
        images = np.einsum("jk,jab->kab", self.U, C)
        G = np.zeros((size, size), dtype=complex)
        for col, idx in enumerate(support):
            st = self.basis.states[idx]
            v = np.zeros(size, dtype=complex)
            v[vac[0]] = 1.0
            for k in st:
                v = images[k] @ v
            norm = math.prod(math.factorial(st.count(k)) for k in set(st))
            G[:, col] = v / math.sqrt(norm)
        kept = [all(np.linalg.norm(self.U[:, k]) > 0.5 for k in self.basis.states[i]) for i in support]
        lost = np.abs(np.linalg.norm(G, axis=0) - np.asarray(kept, dtype=float))
        if lost.max() > 1e-9:
            raise ConfigError(f"support is not invariant under {self.name}")
        self._cache[key] = G
        return G

    def apply(self, form: DampedForm) -> DampedForm:
        """``alpha(phi) = Gamma(U) phi Gamma(U)^*`` (or ``phi^*``) as a damped form.

        For energy-preserving maps the damping commutes with ``Gamma(U)``;
        otherwise the form is undamped, transformed and damped again.
        """
        self.basis.check(form.basis)
        if self.antilinear:
            return form.adjoint()
        G = self.fock_matrix(form.support)
        label = f"{self.name}({form.label})"
        if self.node_shift == 0:
            return DampedForm(form.basis, form.support, G @ form.kernel @ G.conj().T, form.ell, label)
        K = G @ form.undamped() @ G.conj().T
        return DampedForm.from_undamped(form.basis, form.support, K, form.ell, label)


def identity_action(basis: FockBasis) -> SymmetryAction:
    return SymmetryAction("identity", basis, np.eye(basis.n_modes, dtype=complex),
                          justification="trivial")


def rotation(basis: FockBasis, spec) -> SymmetryAction:
    """Spatial rotation from a 3x3 matrix or a signed axis permutation like ``(2, -1, 3)``."""
    R = _as_rotation(spec)
    blocks = []
    for grid in basis.grids:
        _check_channels(grid)
        D = wigner_blocks(R, grid.angular_order)
        blocks.extend([D] * grid.n_radial)
    return SymmetryAction("rotation", basis, _block_diag(blocks).astype(complex), c=1.0,
                          justification="rotations map balls about the origin onto themselves")


def conjugation(basis: FockBasis) -> SymmetryAction:
    return SymmetryAction("conjugation", basis, None, antilinear=True,
                          justification="adjoints of local operators are local")


def dilation(basis: FockBasis, lam: float) -> SymmetryAction:
    """``x -> lam x`` on a massless grid: radial node ``i`` moves to ``i - k``, ``lam = ratio^k``.

    Nodes pushed past either end of the grid are dropped, so the map is a
    partial isometry; ``lam = 1`` is the identity.
    """
    for grid in basis.grids:
        if not isinstance(grid, MomentumGrid):
            raise ConfigError("dilations need a radial momentum grid")
        if grid.mass != 0:
            raise ConfigError("dilations are a symmetry of the massless model only")
    ratio = basis.grids[0].ratio
    k_float = math.log(lam) / math.log(ratio)
    k = int(round(k_float))
    if abs(k - k_float) > 1e-9:
        raise ConfigError(f"lambda = {lam} is not a power of the node ratio {ratio}")
    blocks = []
    for grid in basis.grids:
        n_ch = len(grid.channels)
        P = np.zeros((grid.n_modes, grid.n_modes), dtype=complex)
        for i in range(grid.n_radial):
            j = i - k
            if 0 <= j < grid.n_radial:
                P[j * n_ch:(j + 1) * n_ch, i * n_ch:(i + 1) * n_ch] = np.eye(n_ch)
        blocks.append(P)
    return SymmetryAction(f"dilation({lam:g})", basis, _block_diag(blocks), c=float(lam),
                          justification="a ball of radius r is mapped onto one of radius lam r",
                          node_shift=k)


def mode_shift(basis: FockBasis, step: int = 1) -> SymmetryAction:
    """Cyclic shift of the radial nodes: a unitary that raises most mode energies."""
    blocks = []
    for grid in basis.grids:
        n_ch = len(grid.channels)
        P = np.zeros((grid.n_modes, grid.n_modes), dtype=complex)
        for i in range(grid.n_radial):
            j = (i + step) % grid.n_radial
            P[j * n_ch:(j + 1) * n_ch, i * n_ch:(i + 1) * n_ch] = np.eye(n_ch)
        blocks.append(P)
    return SymmetryAction(f"shift({step})", basis, _block_diag(blocks), c=math.inf,
                          justification="no locality statement", node_shift=step)


# ---------------------------------------------------------------------------
# conditions of a microscopic symmetry

@dataclass(frozen=True)
class MicroscopicReport:
    name: str
    damping: tuple      # rows (ell, ell', ||R^-ell U R^ell'||)
    locality: tuple     # rows (r, residual, edge weight)
    c: float
    R: float
    passed: bool


def _energy_exponent(action: SymmetryAction) -> float:
    """Largest ``log(1+E')/log(1+E)`` over the upper half of the mode energies."""
    E = action.basis.mode_energies
    Ep = (np.abs(action.U) ** 2).T @ E
    kept = np.linalg.norm(action.U, axis=0) > 0.5
    upper = kept & (E >= np.median(E))
    if not np.any(upper):
        return 1.0
    return float(max(1.0, np.max(np.log1p(Ep[upper]) / np.log1p(E[upper]))))


def check_microscopic(action: SymmetryAction, ells: Sequence[float], families=(), support=None,
                      tol: float = 1e-8) -> MicroscopicReport:
    """Damping compatibility and localization of a symmetry.

    Condition (1): ``ell' = a ell`` with ``a`` the growth exponent of the mode
    energies under ``U``; the norm ``||R^-ell Gamma(U) R^ell'||`` on the
    support is reported as the slack.  Condition (2): every family member
    at radius r is mapped onto a member at radius ``c r`` (rotations), or
    every localized part onto the span of the parts at ``c r`` on the nodes
    kept by the map (dilations).  ``families`` holds pairs of families at
    ``r`` and ``c r``.
    """
    damping = []
    locality = []
    if action.antilinear:
        damping = [(float(l), float(l), 1.0) for l in ells]
        return MicroscopicReport(action.name, tuple(damping), (), action.c, action.R, True)
    support = default_support(action.basis, support)
    a = _energy_exponent(action)
    G = action.fock_matrix(support)
    E = action.basis.energy[support]
    for ell in ells:
        ellp = ell * a
        M = ((1.0 + E) ** ell)[:, None] * G * ((1.0 + E) ** -ellp)[None, :]
        damping.append((float(ell), float(ellp), float(np.linalg.norm(M, 2))))
    ok = True
    for fam, fam_c in families:
        if action.node_shift == 0:
            mapped = action.single_particle(fam.coords)
            dist = np.min(np.linalg.norm(mapped[:, None, :] - fam_c.coords[None, :, :], axis=2), axis=1)
            scale = np.maximum(np.linalg.norm(fam.coords, axis=1), 1e-300)
            resid = float(np.max(dist / scale))
            edge = 0.0
        else:
            resid, edge = _dilation_locality(action, fam, fam_c)
        locality.append((float(fam.radius), resid, edge))
        ok &= resid <= tol
    passed = ok and all(np.isfinite(n) for _, _, n in damping)
    return MicroscopicReport(action.name, tuple(damping), tuple(locality), action.c, action.R, passed)


def _dilation_locality(action: SymmetryAction, fam, fam_c) -> tuple[float, float]:
    """Residual of mapped single parts against the parts at ``c r``, interior nodes only."""
    kept_out = np.linalg.norm(action.U, axis=1) > 0.5
    singles = [b for b, spec in enumerate(fam.specs) if len(spec) == 1 and spec[0][1] == 1.0]
    singles_c = [b for b, spec in enumerate(fam_c.specs) if len(spec) == 1 and spec[0][1] == 1.0]
    X = action.single_particle(fam.coords[singles])
    Y = fam_c.coords[singles_c]
    edge = float(np.max(np.linalg.norm(Y[:, ~kept_out], axis=1) / np.linalg.norm(Y, axis=1)))
    Yk = Y[:, kept_out].T
    Q, _ = np.linalg.qr(Yk)
    worst = 0.0
    for x in X[:, kept_out]:
        r = x - Q @ (Q.conj().T @ x)
        worst = max(worst, float(np.linalg.norm(r) / max(np.linalg.norm(x), 1e-300)))
    return worst, edge


def verify_invariance(action: SymmetryAction, space) -> float:
    """Largest principal angle between ``span(alpha X)`` and ``span(X)``."""
    from .phasespace import match_spaces

    if not space.forms:
        raise ConfigError("the field space carries no forms")
    mapped = [action.apply(f) for f in space.forms]
    return match_spaces(space, mapped)


# ---------------------------------------------------------------------------
# derivatives and the field equation

def momentum_matrix(basis: FockBasis, j: int) -> np.ndarray:
    """Single-particle ``p_j`` (j = 1..3) on the mode coordinates, channels ``<= l_max``."""
    if j not in (1, 2, 3):
        raise ConfigError("spatial directions are 1, 2, 3")
    blocks = []
    for grid in basis.grids:
        _check_channels(grid)
        if grid.angular_order < 1:
            raise ResolutionError("spatial derivatives need l_max >= 1")
        N = momentum_couplings(grid.angular_order)[j - 1]
        blocks.append(np.kron(np.diag(grid.radial_nodes), N))
    return _block_diag(blocks)


@dataclass(frozen=True)
class DerivativeMap:
    """``phi -> i [P_mu, phi]`` with ``P_0 = H`` and ``P_j`` second-quantized momenta."""

    direction: int

    def __call__(self, form: DampedForm) -> DampedForm:
        return derivative(form, self.direction)


def second_quantized(basis: FockBasis, h: np.ndarray, support) -> np.ndarray:
    """``sum_kl h_kl a*_k a_l`` between the states of a support closed under it."""
    L = basis.ladder_tensor(support)
    A = np.einsum("kl,lab->kab", h, L)
    return np.einsum("kba,kbc->ac", L, A)


def derivative(form: DampedForm, mu: int) -> DampedForm:
    """``d_mu phi = i [P_mu, phi]`` on the damped kernel.

    Both ``H`` and the momenta conserve energy, so they commute with the
    damping and act inside energy-complete supports.
    """
    basis = form.basis
    label = f"d{mu}({form.label})"
    if mu == 0:
        E = basis.energy[form.support]
        return DampedForm(basis, form.support, 1j * (E[:, None] - E[None, :]) * form.kernel,
                          form.ell, label)
    P = second_quantized(basis, momentum_matrix(basis, mu), form.support)
    K = 1j * (P @ form.kernel - form.kernel @ P)
    return DampedForm(basis, form.support, K, form.ell, label)


def point_field(basis: FockBasis, ell: float, support=None, species: int = 0) -> DampedForm:
    """Damped form of the field at the origin, ``a(g) + a*(g)`` with ``g`` the lowest improper vector."""
    grid = basis.grids[species]
    g = improper_vector(grid, (0,) * grid.spatial_dim, +1)
    return field_form(basis, g, ell, support, "phi", species)


def field_equation_residual(basis: FockBasis, ell: float, support=None, species: int = 0) -> float:
    """Relative damped-norm residual of ``d0^2 phi - (sum_j dj^2 phi - m^2 phi)``."""
    grid = basis.grids[species]
    if grid.angular_order < 2:
        raise ResolutionError("the field equation needs l_max >= 2")
    phi = point_field(basis, ell, support, species)
    lhs = derivative(derivative(phi, 0), 0)
    lap = None
    for j in (1, 2, 3):
        term = derivative(derivative(phi, j), j)
        lap = term if lap is None else lap + term
    rhs = lap - grid.mass**2 * phi
    return (lhs - rhs).norm() / max(lhs.norm(), 1e-300)


def bounded_derivative_subspace(forms: Sequence[DampedForm], bound: float = 1.0) -> np.ndarray:
    """Combinations of ``forms`` whose time derivatives of every order stay bounded.

    ``d0`` multiplies kernel entries by ``i (E_chi - E_xi)``, so iterates stay
    bounded exactly when no entry with ``|E_chi - E_xi| > bound`` survives.
    Returns coefficient vectors as columns.
    """
    f0 = forms[0]
    E = f0.basis.energy[f0.support]
    gap = np.abs(E[:, None] - E[None, :]) > bound
    M = np.array([f.kernel[gap] for f in forms]).T
    if M.size == 0:
        return np.eye(len(forms))
    # reduced SVD suffices for tall M: Vh is then already square
    _, s, Vh = np.linalg.svd(M, full_matrices=M.shape[0] < M.shape[1])
    rank = int(np.sum(s > 1e-10 * max(s[0], 1e-300))) if s.size else 0
    return Vh[rank:].conj().T
