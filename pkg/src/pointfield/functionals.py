"""Energy-damped functionals and the local Weyl families they are tested on.

A functional is stored as a short list of terms ``c (psi_L| . |psi_R)``
where both states are creator words ``a*(v_1) ... a*(v_n) Omega``.  This
keeps functionals built from improper vectors cheap: against Weyl
operators they are evaluated exactly inside the small Fock space spanned
by the word vectors and the Weyl vector.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from itertools import combinations_with_replacement, product
from typing import Sequence

import numpy as np

from .errors import ConfigError, HeadroomError, RankDeficiencyError
from .fock import (FockBasis, FockOperator, MuIndex, small_ladder, weyl, weyl_from_ladder)
from .spmodel import continuum_gram, dual_vectors, improper_vector, make_local_pair

AMPLITUDES = (1.0, -1.0, 0.5, -0.5)


def _word(basis: FockBasis, vectors, species: int = 0) -> tuple:
    return tuple(basis.coords(v, species) for v in vectors)


@dataclass(frozen=True, eq=False)
class Functional:
    """``sigma(A) = sum_t c_t (psi_L,t | A | psi_R,t)`` over creator words."""

    basis: FockBasis
    terms: tuple
    ell: float = 0.0
    label: str = ""
    residual: float = 0.0

    def __post_init__(self):
        for _, left, right in self.terms:
            if max(len(left), len(right)) > self.basis.n_max:
                raise HeadroomError(f"functional {self.label!r} needs more than n_max particles")

    # -- construction -------------------------------------------------------
    @classmethod
    def vacuum(cls, basis: FockBasis) -> "Functional":
        return cls(basis, ((1.0, (), ()),), label="(Omega|.|Omega)")

    @classmethod
    def rank_one(cls, basis: FockBasis, chi: int, xi: int, ell: float = 0.0) -> "Functional":
        """``R^l |xi><chi| R^l``, i.e. ``A -> d_chi d_xi <chi|A|xi>``."""
        coef = 1.0
        words = []
        for idx in (chi, xi):
            st = basis.states[idx]
            norm = math.prod(math.factorial(st.count(k)) for k in set(st))
            coef /= math.sqrt(norm)
            words.append(tuple(np.eye(basis.n_modes)[k] + 0j for k in st))
        d = basis.damping(ell, [chi, xi])
        return cls(basis, ((coef * d[0] * d[1], words[0], words[1]),), ell,
                   f"|{xi}><{chi}|")

    def __add__(self, other: "Functional") -> "Functional":
        self.basis.check(other.basis)
        return Functional(self.basis, self.terms + other.terms, max(self.ell, other.ell))

    def __mul__(self, c) -> "Functional":
        return Functional(self.basis, tuple((complex(c) * t, l, r) for t, l, r in self.terms),
                          self.ell, self.label, self.residual)

    __rmul__ = __mul__

    def __sub__(self, other: "Functional") -> "Functional":
        return self + (-1.0) * other

    # -- realization on the full basis --------------------------------------
    def _state(self, word) -> np.ndarray:
        v = np.zeros(self.basis.dim, dtype=complex)
        v[0] = 1.0
        for x in word:
            v = self.basis.annihilation_matrix(x).conj().T @ v
        return v

    def state_vectors(self):
        left = np.array([self._state(l) for _, l, _ in self.terms]).T
        right = np.array([self._state(r) for _, _, r in self.terms]).T
        coef = np.array([c for c, _, _ in self.terms], dtype=complex)
        return left, right, coef

    def kernel(self, support=None) -> np.ndarray:
        """``K[chi, xi]`` with ``sigma(A) = sum K[chi, xi] <chi|A|xi>``."""
        left, right, coef = self.state_vectors()
        if support is not None:
            support = np.asarray(support)
            left, right = left[support], right[support]
        return np.conj(left) @ (coef[:, None] * right.T)

    def __call__(self, op: FockOperator) -> complex:
        return evaluate(self, op)

    # -- exact evaluation on Weyl operators ---------------------------------
    @cached_property
    def _reduced(self):
        vecs: list[np.ndarray] = []
        keys: dict = {}

        def vid(x):
            k = x.tobytes()
            if k not in keys:
                keys[k] = len(vecs)
                vecs.append(x)
            return keys[k]

        ids = [(tuple(vid(x) for x in l), tuple(vid(x) for x in r)) for _, l, r in self.terms]
        cap = max([len(w) for pair in ids for w in pair] + [0])
        if vecs:
            V = np.array(vecs).T
            U, s, _ = np.linalg.svd(V, full_matrices=False)
            k = int(np.sum(s > 1e-12 * s[0])) if s[0] > 0 else 0
            Q = U[:, :k]
        else:
            Q = np.zeros((self.basis.n_modes, 0), dtype=complex)
            k = 0
        _, L = small_ladder(k + 1, cap)
        red = [np.concatenate([Q.conj().T @ v, [0.0]]) for v in vecs]
        creators = [np.einsum("k,kij->ji", x, L) for x in red]
        size = L.shape[1]

        def state(word):
            v = np.zeros(size, dtype=complex)
            v[0] = 1.0
            for j in word:
                v = creators[j] @ v
            return v

        left = np.array([state(l) for l, _ in ids])
        right = np.array([state(r) for _, r in ids])
        coef = np.array([c for c, _, _ in self.terms], dtype=complex)
        return Q, L, cap, left, right, coef

    def on_weyl(self, coords: np.ndarray, norm2: np.ndarray) -> np.ndarray:
        """``sigma(W(f_b))`` for a batch of mode vectors ``f_b``.

        ``norm2`` is the squared norm used in each prefactor.  Exact, since
        Weyl matrix elements between states of at most ``cap`` particles
        only involve the span of the word vectors and ``f``.
        """
        coords = np.atleast_2d(np.asarray(coords, dtype=complex))
        Q, L, cap, left, right, coef = self._reduced
        alpha = coords @ np.conj(Q)
        perp = coords - alpha @ Q.T
        beta = np.linalg.norm(perp, axis=1)
        red = np.concatenate([alpha, beta[:, None]], axis=1)
        W = weyl_from_ladder(L, red, norm2, cap)
        return np.einsum("t,ti,bij,tj->b", coef, np.conj(left), W, right)


def evaluate(sigma: Functional, op: FockOperator) -> complex:
    """``sum_t c_t <psi_L|A|psi_R>`` by applying ``A`` on the full basis."""
    sigma.basis.check(op.basis)
    left, right, coef = sigma.state_vectors()
    image = op.apply(right)
    return complex(np.sum(coef * np.einsum("it,it->t", np.conj(left), image)))


def damped_norm(sigma: Functional, ell: float) -> float:
    """Trace norm of ``R^{-l} sigma R^{-l}``."""
    left, right, coef = sigma.state_vectors()
    d = (1.0 + sigma.basis.energy) ** float(ell)
    _, r1 = np.linalg.qr(d[:, None] * np.conj(left))
    _, r2 = np.linalg.qr(d[:, None] * right)
    core = r1 @ (coef[:, None] * r2.T)
    return float(np.sum(np.linalg.svd(core, compute_uv=False)))


# ---------------------------------------------------------------------------
# local families

@dataclass(frozen=True, eq=False)
class LocalFamily:
    """Weyl operators localized in radius ``r`` (plus optional extra operators).

    Member ``b`` is ``W(f_b)`` with mode vector ``coords[b]`` and prefactor
    exponent ``norm2[b]``; ``specs[b]`` lists its ``((profile, sign), t)``
    parts.  ``norms`` are the operator-norm bounds used for the seminorm.
    """

    radius: float
    basis: FockBasis
    coords: np.ndarray
    norm2: np.ndarray
    specs: tuple
    norms: np.ndarray
    extra: tuple = ()
    species: int = 0

    def __post_init__(self):
        if len(self.specs) + len(self.extra) == 0:
            raise ConfigError("a local family needs at least one member")

    def __len__(self) -> int:
        return len(self.specs) + len(self.extra)

    @property
    def members(self) -> list[FockOperator]:
        ops = [weyl(c, self.basis, n2) for c, n2 in zip(self.coords, self.norm2)]
        return ops + list(self.extra)

    def values(self, sigma: Functional) -> np.ndarray:
        sigma.basis.check(self.basis)
        out = sigma.on_weyl(self.coords, self.norm2) if len(self.specs) else np.zeros(0)
        if self.extra:
            out = np.concatenate([out, [evaluate(sigma, op) for op in self.extra]])
        return out

    def with_extra(self, ops: Sequence[FockOperator]) -> "LocalFamily":
        norms = [op.norm_estimate() for op in ops]
        return LocalFamily(self.radius, self.basis, self.coords, self.norm2, self.specs,
                           np.concatenate([self.norms, norms]), tuple(self.extra) + tuple(ops),
                           self.species)


def member_specs(n_profiles: int, amplitudes: Sequence[float] = AMPLITUDES,
                 pairs: bool = True) -> tuple:
    """Identity, every single part at every amplitude, and sign-paired couples.

    The set is closed under flipping the sign of any part, so families built
    from axis-aligned profiles are invariant under signed axis permutations.
    """
    parts = [(i, s) for i in range(n_profiles) for s in (1, -1)]
    specs = [()]
    specs += [((p, float(t)),) for p in parts for t in amplitudes]
    if pairs:
        for a, b in combinations_with_replacement(parts, 2):
            if a == b:
                continue
            for ta, tb in product((1.0, -1.0), repeat=2):
                specs.append(((a, ta), (b, tb)))
    return tuple(specs)


def make_family(basis: FockBasis, radius: float, profiles: Sequence[tuple],
                specs: tuple | None = None, species: int | Sequence[int] = 0) -> LocalFamily:
    """Weyl family ``W(sum t+ f+ + i sum t- f-)`` from localized pairs of radius ``r``.

    ``species`` is one index for all profiles or one index per profile.
    """
    n = len(profiles)
    spc = [species] * n if isinstance(species, int) else list(species)
    if len(spc) != n:
        raise ConfigError("need one species index per profile")
    specs = member_specs(n) if specs is None else specs
    plus = np.zeros((n, basis.n_modes), dtype=complex)
    minus = np.zeros((n, basis.n_modes), dtype=complex)
    g_plus = np.zeros((n, n))
    g_minus = np.zeros((n, n))
    for k in sorted(set(spc)):
        sel = [i for i in range(n) if spc[i] == k]
        grid = basis.grids[k]
        for i in sel:
            pair = make_local_pair(grid, radius, profiles[i])
            plus[i] = basis.coords(pair.plus_part, k)
            minus[i] = basis.coords(pair.minus_part, k)
        betas = [profiles[i] for i in sel]
        g_plus[np.ix_(sel, sel)] = continuum_gram(grid, radius, betas, +1)
        g_minus[np.ix_(sel, sel)] = continuum_gram(grid, radius, betas, -1)
    return family_from_parts(basis, radius, plus, minus, g_plus, g_minus, specs,
                             spc[0] if len(set(spc)) == 1 else -1)


def family_from_parts(basis: FockBasis, radius: float, plus: np.ndarray, minus: np.ndarray,
                      g_plus: np.ndarray | None, g_minus: np.ndarray | None, specs: tuple,
                      species: int = 0) -> LocalFamily:
    """Family from mode vectors of the parts; Gram matrices give continuum norms."""
    coords = np.zeros((len(specs), basis.n_modes), dtype=complex)
    norm2 = np.zeros(len(specs))
    n = plus.shape[0]
    for b, spec in enumerate(specs):
        tp = np.zeros(n)
        tm = np.zeros(n)
        for (i, s), t in spec:
            (tp if s > 0 else tm)[i] += t
        coords[b] = tp @ plus + 1j * (tm @ minus)
        grid_n2 = float(np.vdot(coords[b], coords[b]).real)
        cont = 0.0 if g_plus is None else float(tp @ g_plus @ tp + tm @ g_minus @ tm)
        norm2[b] = max(cont, grid_n2)
    return LocalFamily(float(radius), basis, coords, norm2, tuple(specs),
                       np.ones(len(specs)), (), species)


@dataclass(frozen=True)
class SeminormEstimate:
    value: float
    witness: np.ndarray
    family_size: int


def local_seminorm(sigma: Functional, fam: LocalFamily) -> SeminormEstimate:
    """Sup of ``|sigma(A)|`` over the span of the family, bounded by member norms.

    The unit ball is ``sum |c_b| ||A_b|| <= 1``; its extreme points are the
    normalized members, so the maximum sits on one of them.
    """
    vals = np.abs(fam.values(sigma)) / np.asarray(fam.norms)
    b = int(np.argmax(vals))
    witness = np.zeros(len(fam))
    witness[b] = 1.0 / fam.norms[b]
    return SeminormEstimate(float(vals[b]), witness, len(fam))


# ---------------------------------------------------------------------------
# explicit functionals

def sigma_commutator(b, b_prime, basis: FockBasis, species: int = 0) -> Functional:
    """``A -> (Omega|[a(b), [a*(b'), A]] Omega)``.

    Expanded: ``<b|b'> (Omega|A|Omega) - (b|A|b')``.
    """
    if basis.n_max < 2:
        raise HeadroomError("the commutator functional needs n_max >= 2")
    x, y = _word(basis, [b, b_prime], species)
    overlap = complex(np.vdot(x, y))
    return Functional(basis, ((overlap, (), ()), (-1.0, (x,), (y,))), label="[a(b),[a*(b'),.]]")


def sigma_q(basis: FockBasis, h, species: int = 0) -> Functional:
    """Dual functional of the Wick square, written through ``h``.

    ``|h (x) h) = a*(h)^2 Omega / sqrt 2``.
    """
    if basis.n_max < 2:
        raise HeadroomError("sigma_Q needs n_max >= 2")
    (x,) = _word(basis, [h], species)
    n2 = float(np.vdot(x, x).real)
    c2 = 1.0 / (4.0 * math.sqrt(2.0)) / math.sqrt(2.0)
    terms = ((c2, (x, x), ()), (c2, (), (x, x)), (0.25, (x,), (x,)), (-n2 / 4.0, (), ()))
    return Functional(basis, terms, label="sigma_Q")


def weyl_coefficients(coords: np.ndarray, duals: dict, items, basis: FockBasis,
                      species: int = 0) -> np.ndarray:
    """Expansion coefficients ``Re<h+|f>`` and ``Im<h-|f>`` per item, batched over f."""
    coords = np.atleast_2d(coords)
    out = np.zeros((coords.shape[0], len(items)))
    for j, it in enumerate(items):
        z = coords @ np.conj(basis.coords(duals[it], species))
        out[:, j] = z.real if it[1] > 0 else z.imag
    return out


def sigma_mu(mu: MuIndex, families: Sequence[LocalFamily] | None, basis: FockBasis,
             species: int = 0, seed: int = 0, duals: dict | None = None,
             tol: float = 1e-8) -> Functional:
    """Functional dual to ``phi_mu`` from a linear solve on Weyl operators.

    Requires ``sigma(W(f)) = e^{-|f|^2/2} prod c_j^{mu_j}`` on a spanning
    set (family members plus seeded random probes), with the coefficients
    ``c`` of ``weyl_coefficients``.  The candidate space is spanned by
    ``(h_J| . |h_J')`` with creator words over the items of ``mu`` and
    ``|J| + |J'| <= |mu|``.  The held-out residual is stored on the result.
    """
    grid = basis.grids[species]
    if mu.order > basis.n_max:
        raise HeadroomError(f"{mu.label()} needs n_max >= {mu.order}")
    duals = dual_vectors(grid) if duals is None else duals
    entries = mu.items()
    items = [it for it, _ in entries]
    counts = [c for _, c in entries]
    hvecs = [basis.coords(duals[it], species) for it in items]
    scale = [np.linalg.norm(h) for h in hvecs]
    words = [()]
    for n in range(1, mu.order + 1):
        words += list(combinations_with_replacement(range(len(items)), n))
    cands = [(l, r) for l in words for r in words if len(l) + len(r) <= mu.order]
    terms = tuple((1.0, tuple(hvecs[j] / scale[j] for j in l), tuple(hvecs[j] / scale[j] for j in r))
                  for l, r in cands)
    probe = Functional(basis, terms)

    rng = np.random.default_rng(seed)
    n_train = 2 * len(cands) + 8
    n_test = 16
    gvecs = [basis.coords(improper_vector(grid, *it), species) for it in items]
    f = np.zeros((n_train + n_test, basis.n_modes), dtype=complex)
    for j, (it, g) in enumerate(zip(items, gvecs)):
        x = rng.uniform(-1.5, 1.5, n_train + n_test) / np.linalg.norm(g)
        f += np.outer(x if it[1] > 0 else 1j * x, g)
    noise = rng.standard_normal((n_train + n_test, basis.n_modes)) + 1j * rng.standard_normal(
        (n_train + n_test, basis.n_modes))
    f += 0.2 * noise / np.sqrt(2 * basis.n_modes)
    if families:
        f = np.concatenate([f[:n_train]] + [fam.coords for fam in families] + [f[n_train:]])
        n_train = f.shape[0] - n_test
    norm2 = np.sum(np.abs(f) ** 2, axis=1)

    # one column per candidate, evaluated exactly on each probe
    Q, L, cap, left, right, _ = probe._reduced
    alpha = f @ np.conj(Q)
    beta = np.linalg.norm(f - alpha @ Q.T, axis=1)
    W = weyl_from_ladder(L, np.concatenate([alpha, beta[:, None]], axis=1), norm2, cap)
    V = np.einsum("ti,bij,tj->bt", np.conj(left), W, right)
    c = weyl_coefficients(f, duals, items, basis, species)
    target = np.exp(-0.5 * norm2) * np.prod(c ** np.array(counts), axis=1)

    A, y = V[:n_train], target[:n_train]
    colscale = np.linalg.norm(A, axis=0)
    colscale[colscale == 0] = 1.0
    sol, _, rank, sv = np.linalg.lstsq(A / colscale, y, rcond=None)
    if rank < len(cands) or sv[-1] < 1e-12 * sv[0]:
        raise RankDeficiencyError(f"Weyl probes do not separate the candidates for {mu.label()}")
    coef = sol / colscale
    test = V[n_train:] @ coef
    resid = float(np.linalg.norm(test - target[n_train:]) / max(np.linalg.norm(target[n_train:]), 1e-300))
    out_terms = tuple((complex(cf), l, r) for cf, (_, l, r) in zip(coef, terms) if cf != 0)
    return Functional(basis, out_terms, 0.0, "sigma" + mu.label(), resid)
