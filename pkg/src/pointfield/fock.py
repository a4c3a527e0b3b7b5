"""Truncated bosonic Fock space over the grid modes.

States are multisets of mode indices with at most ``n_max`` particles,
enumerated by particle number and then lexicographically.  Operators are
applicators (matrix-free) with optional dense realizations.  Everything
that only needs matrix elements between a *down-closed* set of states
(closed under removing particles, e.g. all states below an energy) is
computed exactly on that set, because annihilators never leave it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from functools import cached_property
from itertools import combinations_with_replacement, product
from typing import Callable, Iterable, Sequence

import numpy as np
import scipy.sparse as sp

from .errors import ConfigError, GridMismatchError, ResolutionError, ResourceError
from .spmodel import MultiIndex, SPVector, improper_vector, multi_indices

DEFAULT_STATE_CAP = 200_000
DENSE_LIMIT = 3000


class FockBasis:
    """Occupation-number basis over one or several mode spaces (species)."""

    def __init__(self, grids, n_max: int, e_cut: float | None = None,
                 state_cap: int = DEFAULT_STATE_CAP):
        if n_max < 0:
            raise ConfigError("n_max must be nonnegative")
        grids = tuple(grids) if isinstance(grids, (list, tuple)) else (grids,)
        self.grids = grids
        self.n_max = int(n_max)
        self.e_cut = e_cut
        offsets = np.cumsum([0] + [g.n_modes for g in grids])
        self.offsets = offsets
        self.n_modes = int(offsets[-1])
        self.mode_energies = np.concatenate([g.mode_energies for g in grids])
        self.mode_weights = np.concatenate([g.mode_weights for g in grids])
        est = sum(math.comb(self.n_modes + n - 1, n) for n in range(n_max + 1))
        if e_cut is None and est > state_cap:
            raise ResourceError(f"basis would hold {est} states (cap {state_cap})")
        states: list[tuple[int, ...]] = []
        energies: list[float] = []
        for n in range(n_max + 1):
            for st in combinations_with_replacement(range(self.n_modes), n):
                e = float(sum(self.mode_energies[list(st)])) if n else 0.0
                if e_cut is not None and e > e_cut + 1e-12:
                    continue
                states.append(st)
                energies.append(e)
                if len(states) > state_cap:
                    raise ResourceError(f"basis exceeds the state cap {state_cap}")
        self.states = states
        self.energy = np.array(energies)
        self.n_particles = np.array([len(s) for s in states])
        self.index = {st: i for i, st in enumerate(states)}

    @property
    def grid(self):
        return self.grids[0]

    @property
    def dim(self) -> int:
        return len(self.states)

    def __len__(self) -> int:
        return self.dim

    def key(self) -> tuple:
        return (tuple(g.key for g in self.grids), self.n_max, self.e_cut)

    def same_as(self, other: "FockBasis") -> bool:
        return self is other or self.key() == other.key()

    def check(self, other: "FockBasis") -> None:
        if not self.same_as(other):
            raise GridMismatchError("objects live on different Fock bases")

    # -- single-particle embedding ------------------------------------------
    def coords(self, v: SPVector | np.ndarray, species: int = 0) -> np.ndarray:
        """Orthonormal mode coordinates of a single-particle vector."""
        if isinstance(v, np.ndarray):
            if v.shape != (self.n_modes,):
                raise GridMismatchError("coordinate vector has the wrong length")
            return v.astype(complex)
        grid = self.grids[species]
        if not grid.same_as(v.grid):
            raise GridMismatchError("vector lives on a different grid")
        out = np.zeros(self.n_modes, dtype=complex)
        out[self.offsets[species]:self.offsets[species + 1]] = v.orthonormal()
        return out

    # -- ladder structure ---------------------------------------------------
    @cached_property
    def _ladder(self):
        src, dst, mode, coef = [], [], [], []
        for j, st in enumerate(self.states):
            prev = None
            for pos, k in enumerate(st):
                if k == prev:
                    continue
                prev = k
                n_k = st.count(k)
                target = st[:pos] + st[pos + 1:]
                i = self.index.get(target)
                if i is None:
                    continue
                src.append(j)
                dst.append(i)
                mode.append(k)
                coef.append(math.sqrt(n_k))
        return (np.array(src, dtype=np.int64), np.array(dst, dtype=np.int64),
                np.array(mode, dtype=np.int64), np.array(coef))

    def annihilation_matrix(self, coords: np.ndarray) -> sp.csr_matrix:
        """Sparse matrix of ``a(f)`` on the full basis (antilinear in ``f``)."""
        src, dst, mode, coef = self._ladder
        data = coef * np.conj(coords[mode])
        return sp.csr_matrix((data, (dst, src)), shape=(self.dim, self.dim))

    def mode_annihilator(self, k: int) -> sp.csr_matrix:
        e = np.zeros(self.n_modes, dtype=complex)
        e[k] = 1.0
        return self.annihilation_matrix(e)

    def is_down_closed(self, subset: Sequence[int]) -> bool:
        sub = set(int(i) for i in subset)
        src, dst, _, _ = self._ladder
        mask = np.isin(src, list(sub))
        return bool(np.all(np.isin(dst[mask], list(sub))))

    def lowest(self, count: int) -> np.ndarray:
        """Indices of the lowest-energy states, completed to whole energy shells.

        The result is down-closed, and closed under any energy-preserving
        single-particle map.
        """
        order = np.lexsort((np.arange(self.dim), np.round(self.energy, 10)))
        if count >= self.dim:
            return np.sort(order)
        e_last = self.energy[order[count - 1]]
        keep = self.energy <= e_last + 1e-10
        return np.flatnonzero(keep)

    def ladder_tensor(self, subset: Sequence[int]) -> np.ndarray:
        """Dense ``a_k`` restricted to a down-closed subset, shape (modes, |S|, |S|)."""
        subset = np.asarray(subset)
        pos = -np.ones(self.dim, dtype=np.int64)
        pos[subset] = np.arange(len(subset))
        src, dst, mode, coef = self._ladder
        keep = pos[src] >= 0
        if np.any(pos[dst[keep]] < 0):
            raise ConfigError("subset is not closed under annihilation")
        L = np.zeros((self.n_modes, len(subset), len(subset)))
        L[mode[keep], pos[dst[keep]], pos[src[keep]]] = coef[keep]
        return L

    def damping(self, ell: float, subset: Sequence[int] | None = None) -> np.ndarray:
        e = self.energy if subset is None else self.energy[np.asarray(subset)]
        return (1.0 + e) ** (-float(ell))

    def hamiltonian(self) -> "FockOperator":
        return FockOperator.diagonal(self, self.energy)

    def resolvent_power(self, ell: float) -> "FockOperator":
        return FockOperator.diagonal(self, self.damping(ell))


def build_fock(grid, n_max: int, e_cut: float | None = None,
               state_cap: int = DEFAULT_STATE_CAP) -> FockBasis:
    return FockBasis(grid, n_max, e_cut, state_cap)


# ---------------------------------------------------------------------------
# operators

class FockOperator:
    """Linear operator on a truncated Fock space given by an applicator."""

    def __init__(self, basis: FockBasis, matvec: Callable, rmatvec: Callable | None = None,
                 hermitian: bool = False, dense: np.ndarray | None = None):
        self.basis = basis
        self._matvec = matvec
        self._rmatvec = rmatvec
        self.hermitian = hermitian
        self._dense = dense

    @classmethod
    def from_matrix(cls, basis: FockBasis, M, hermitian: bool = False) -> "FockOperator":
        if sp.issparse(M):
            M = M.tocsr()
            MH = M.conj().T.tocsr()
            return cls(basis, lambda v: M @ v, lambda v: MH @ v, hermitian)
        M = np.asarray(M)
        return cls(basis, lambda v: M @ v, lambda v: M.conj().T @ v, hermitian, dense=M)

    @classmethod
    def diagonal(cls, basis: FockBasis, d: np.ndarray) -> "FockOperator":
        d = np.asarray(d)
        return cls(basis, lambda v: (d * v.T).T, lambda v: (np.conj(d) * v.T).T,
                   hermitian=bool(np.isrealobj(d)))

    @classmethod
    def identity(cls, basis: FockBasis) -> "FockOperator":
        return cls(basis, lambda v: v.copy(), lambda v: v.copy(), hermitian=True)

    def apply(self, v: np.ndarray) -> np.ndarray:
        return self._matvec(np.asarray(v, dtype=complex))

    __call__ = apply

    def apply_adjoint(self, v: np.ndarray) -> np.ndarray:
        if self._rmatvec is None:
            return self.to_dense().conj().T @ v
        return self._rmatvec(np.asarray(v, dtype=complex))

    def adjoint(self) -> "FockOperator":
        dense = None if self._dense is None else self._dense.conj().T
        return FockOperator(self.basis, self.apply_adjoint, self.apply, self.hermitian, dense)

    def __matmul__(self, other: "FockOperator") -> "FockOperator":
        if isinstance(other, FockOperator):
            self.basis.check(other.basis)
            return FockOperator(self.basis, lambda v: self.apply(other.apply(v)),
                                lambda v: other.apply_adjoint(self.apply_adjoint(v)))
        return self.apply(other)

    def __add__(self, other: "FockOperator") -> "FockOperator":
        self.basis.check(other.basis)
        return FockOperator(self.basis, lambda v: self.apply(v) + other.apply(v),
                            lambda v: self.apply_adjoint(v) + other.apply_adjoint(v),
                            self.hermitian and other.hermitian)

    def __sub__(self, other: "FockOperator") -> "FockOperator":
        return self + (-1.0) * other

    def __mul__(self, c) -> "FockOperator":
        c = complex(c)
        return FockOperator(self.basis, lambda v: c * self.apply(v),
                            lambda v: np.conj(c) * self.apply_adjoint(v),
                            self.hermitian and c.imag == 0)

    __rmul__ = __mul__

    def to_dense(self) -> np.ndarray:
        if self._dense is None:
            if self.basis.dim > DENSE_LIMIT:
                raise ResourceError("basis too large for a dense realization")
            self._dense = self.apply(np.eye(self.basis.dim, dtype=complex))
        return self._dense

    def block(self, rows: Sequence[int], cols: Sequence[int]) -> np.ndarray:
        """Matrix elements ``<rows|A|cols>`` using only applications to ``cols``."""
        rows = np.asarray(rows)
        cols = np.asarray(cols)
        E = np.zeros((self.basis.dim, len(cols)), dtype=complex)
        E[cols, np.arange(len(cols))] = 1.0
        return self.apply(E)[rows]

    def norm_estimate(self, tol: float = 1e-6, maxiter: int = 500, seed: int = 0) -> float:
        """Largest singular value by power iteration on ``A^* A``."""
        rng = np.random.default_rng(seed)
        v = rng.standard_normal(self.basis.dim) + 0j
        v /= np.linalg.norm(v)
        sigma = 0.0
        for _ in range(maxiter):
            w = self.apply_adjoint(self.apply(v))
            nw = np.linalg.norm(w)
            if nw == 0:
                return 0.0
            new = math.sqrt(nw)
            v = w / nw
            if abs(new - sigma) <= tol * new:
                return new
            sigma = new
        return sigma


def _check_vector(f, basis: FockBasis, species: int = 0) -> np.ndarray:
    return basis.coords(f, species)


def annihilator(f, basis: FockBasis, species: int = 0) -> FockOperator:
    """``a(f)``; the adjoint is the truncated creator."""
    M = basis.annihilation_matrix(_check_vector(f, basis, species))
    return FockOperator.from_matrix(basis, M)


def creator(f, basis: FockBasis, species: int = 0) -> FockOperator:
    """``a*(f)``; states pushed above ``n_max`` are dropped."""
    M = basis.annihilation_matrix(_check_vector(f, basis, species))
    return FockOperator.from_matrix(basis, M.conj().T.tocsr())


def field_operator(f, basis: FockBasis, species: int = 0) -> FockOperator:
    """``a(f) + a*(f)``."""
    M = basis.annihilation_matrix(_check_vector(f, basis, species))
    return FockOperator.from_matrix(basis, (M + M.conj().T).tocsr(), hermitian=True)


def _nilpotent_exp(M, v: np.ndarray, c: complex, n_max: int) -> np.ndarray:
    out = v.copy()
    term = v
    for n in range(1, n_max + 1):
        term = (c / n) * (M @ term)
        out = out + term
    return out


def weyl(f, basis: FockBasis, norm2: float | None = None, species: int = 0) -> FockOperator:
    """Truncated Weyl operator ``e^{-|f|^2/2} e^{i a*(f)} e^{i a(f)}``.

    ``norm2`` overrides the squared norm in the prefactor (used when ``f``
    has weight outside the grid).  Matrix elements between kept states are
    exact because both series terminate.
    """
    x = _check_vector(f, basis, species)
    nrm2 = float(np.vdot(x, x).real) if norm2 is None else max(float(norm2), float(np.vdot(x, x).real))
    pref = math.exp(-0.5 * nrm2)
    A = basis.annihilation_matrix(x)
    AH = A.conj().T.tocsr()
    n = basis.n_max

    def mv(v):
        return pref * _nilpotent_exp(AH, _nilpotent_exp(A, v, 1j, n), 1j, n)

    def rmv(v):
        return pref * _nilpotent_exp(AH, _nilpotent_exp(A, v, -1j, n), -1j, n)

    return FockOperator(basis, mv, rmv)


def weyl_blocks(basis: FockBasis, coords: np.ndarray, norm2: np.ndarray,
                subset: Sequence[int], L: np.ndarray | None = None) -> np.ndarray:
    """Exact ``<chi|W(f_b)|xi>`` for chi, xi in a down-closed subset, batched over b.

    Returns an array of shape (B, |S|, |S|).
    """
    L = basis.ladder_tensor(subset) if L is None else L
    return weyl_from_ladder(L, coords, norm2, basis.n_max)


def weyl_from_ladder(L: np.ndarray, coords: np.ndarray, norm2, n_cap: int) -> np.ndarray:
    """Weyl matrix elements from a dense annihilator tensor ``L[k]``."""
    coords = np.atleast_2d(coords)
    A = np.einsum("bk,kij->bij", np.conj(coords), L)
    size = A.shape[1]
    # e^{iA} and e^{-iA} share the even powers; build both from one power list
    even = np.zeros_like(A) + np.eye(size)
    odd = np.zeros_like(A)
    power = A
    for n in range(1, n_cap + 1):
        if n > 1:
            power = A @ power
        c = (1j) ** n / math.factorial(n)
        if n % 2:
            odd = odd + c * power
        else:
            even = even + c * power
    plus = even + odd
    minus = even - odd
    out = np.conj(np.swapaxes(minus, 1, 2)) @ plus
    return np.exp(-0.5 * np.asarray(norm2, dtype=float))[:, None, None] * out


def small_ladder(n_modes: int, n_cap: int) -> tuple[list, np.ndarray]:
    """States and dense annihilator tensor of a small mode space."""
    states = [st for n in range(n_cap + 1)
              for st in combinations_with_replacement(range(n_modes), n)]
    index = {st: i for i, st in enumerate(states)}
    L = np.zeros((n_modes, len(states), len(states)))
    for j, st in enumerate(states):
        for k in set(st):
            pos = st.index(k)
            L[k, index[st[:pos] + st[pos + 1:]], j] = math.sqrt(st.count(k))
    return states, L


# ---------------------------------------------------------------------------
# multi-index combinatorics

def _item_weight(order: int, sign: int, s: int) -> Fraction:
    return Fraction(order) + Fraction(s - sign, 2)


@dataclass(frozen=True)
class MuIndex:
    """Pair of finitely supported occupation maps over (kappa, sign) items."""

    plus: tuple = ()
    minus: tuple = ()

    @classmethod
    def from_items(cls, items: Iterable[tuple[MultiIndex, int]]) -> "MuIndex":
        plus: dict = {}
        minus: dict = {}
        for kappa, sign in items:
            target = plus if sign > 0 else minus
            kappa = MultiIndex(kappa)
            target[kappa] = target.get(kappa, 0) + 1
        key = lambda kv: (kv[0].order, tuple(-c for c in kv[0]))
        return cls(tuple(sorted(plus.items(), key=key)), tuple(sorted(minus.items(), key=key)))

    def items(self) -> list[tuple[tuple[MultiIndex, int], int]]:
        return ([((k, +1), c) for k, c in self.plus] + [((k, -1), c) for k, c in self.minus])

    @property
    def order(self) -> int:
        return sum(c for _, c in self.plus) + sum(c for _, c in self.minus)

    def label(self) -> str:
        parts = [f"+{k!r}^{c}" if c > 1 else f"+{k!r}" for k, c in self.plus]
        parts += [f"-{k!r}^{c}" if c > 1 else f"-{k!r}" for k, c in self.minus]
        return "{" + ",".join(parts) + "}" if parts else "{}"

    def __repr__(self) -> str:
        return f"MuIndex{self.label()}"


def theta(mu: MuIndex, s: int) -> Fraction:
    """Scaling dimension ``sum mu+ (|k| + (s-1)/2) + mu- (|k| + (s+1)/2)``."""
    total = Fraction(0)
    for (kappa, sign), count in mu.items():
        total += count * _item_weight(kappa.order, sign, s)
    return total


def enumerate_mu(gamma: float, s: int) -> list[MuIndex]:
    """All multi-indices with ``theta <= gamma`` (boundary included)."""
    if s < 2:
        raise ConfigError("the set of multi-indices is infinite for s < 2")
    g = Fraction(gamma).limit_denominator(10**6)
    items = []
    order = 0
    while _item_weight(order, +1, s) <= g:
        for sign in (+1, -1):
            if _item_weight(order, sign, s) <= g:
                items.extend((k, sign) for k in multi_indices(s, order))
        order += 1
    weights = [_item_weight(k.order, sg, s) for k, sg in items]
    found: list[MuIndex] = []

    def rec(start: int, budget: Fraction, chosen: list):
        found.append(MuIndex.from_items(chosen))
        for j in range(start, len(items)):
            if weights[j] <= budget:
                rec(j, budget - weights[j], chosen + [items[j]])

    rec(0, g, [])
    ranked = {}
    for j, it in enumerate(items):
        ranked[it] = j

    def sort_key(mu: MuIndex):
        seq = sorted(ranked[it] for it, c in mu.items() for _ in range(c))
        return (theta(mu, s), mu.order, seq)

    return sorted(found, key=sort_key)


# ---------------------------------------------------------------------------
# forms

@dataclass(frozen=True, eq=False)
class DampedForm:
    """Kernel of ``R^l phi R^l`` between the states in ``support``."""

    basis: FockBasis
    support: np.ndarray
    kernel: np.ndarray
    ell: float
    label: str = ""

    def undamped(self) -> np.ndarray:
        d = self.basis.damping(self.ell, self.support)
        return self.kernel / np.outer(d, d)

    def norm(self) -> float:
        """``||phi||^(l)``: operator norm of the damped kernel."""
        if self.kernel.size == 0:
            return 0.0
        return float(np.linalg.norm(self.kernel, 2))

    def adjoint(self) -> "DampedForm":
        return DampedForm(self.basis, self.support, self.kernel.conj().T, self.ell, self.label + "*")

    def with_ell(self, ell: float) -> "DampedForm":
        d = self.basis.damping(ell - self.ell, self.support)
        return DampedForm(self.basis, self.support, self.kernel * np.outer(d, d), ell, self.label)

    def inner(self, other: "DampedForm") -> complex:
        self._compatible(other)
        return complex(np.vdot(self.kernel, other.kernel))

    def _compatible(self, other: "DampedForm") -> None:
        self.basis.check(other.basis)
        if self.ell != other.ell or not np.array_equal(self.support, other.support):
            raise GridMismatchError("forms have different supports or damping orders")

    def __add__(self, other: "DampedForm") -> "DampedForm":
        self._compatible(other)
        return DampedForm(self.basis, self.support, self.kernel + other.kernel, self.ell)

    def __sub__(self, other: "DampedForm") -> "DampedForm":
        return self + (-1.0) * other

    def __mul__(self, c) -> "DampedForm":
        return DampedForm(self.basis, self.support, complex(c) * self.kernel, self.ell, self.label)

    __rmul__ = __mul__

    @property
    def vector(self) -> np.ndarray:
        return self.kernel.ravel()

    @classmethod
    def from_undamped(cls, basis: FockBasis, support, matrix: np.ndarray, ell: float,
                      label: str = "") -> "DampedForm":
        support = np.asarray(support)
        d = basis.damping(ell, support)
        return cls(basis, support, np.outer(d, d) * matrix, float(ell), label)

    @classmethod
    def from_operator(cls, op: FockOperator, support, ell: float, label: str = "") -> "DampedForm":
        return cls.from_undamped(op.basis, support, op.block(support, support), ell, label)


def default_support(basis: FockBasis, support=None) -> np.ndarray:
    if support is None:
        return np.arange(basis.dim)
    return np.asarray(support)


def identity_form(basis: FockBasis, ell: float, support=None) -> DampedForm:
    support = default_support(basis, support)
    return DampedForm.from_undamped(basis, support, np.eye(len(support)), ell, "1")


def _restricted_annihilators(basis, vectors, support, L=None):
    L = basis.ladder_tensor(support) if L is None else L
    return [np.einsum("k,kij->ij", np.conj(v), L) for v in vectors]


def field_form(basis: FockBasis, v, ell: float, support=None, label: str = "",
               species: int = 0) -> DampedForm:
    """Damped kernel of ``a(v) + a*(v)``."""
    support = default_support(basis, support)
    (A,) = _restricted_annihilators(basis, [basis.coords(v, species)], support)
    return DampedForm.from_undamped(basis, support, A + A.conj().T, ell, label)


def _mu_vectors(mu: MuIndex, basis: FockBasis, species: int = 0) -> list[np.ndarray]:
    grid = basis.grids[species]
    vecs = []
    for (kappa, sign), _ in mu.items():
        if grid.spatial_dim == 3 and kappa.order > grid.angular_order:
            raise ResolutionError(f"l_max too small for {mu.label()}")
        vecs.append(basis.coords(improper_vector(grid, kappa, sign), species))
    return vecs


def wick_monomial(mu: MuIndex, basis: FockBasis, ell: float, support=None,
                  species: int = 0, L: np.ndarray | None = None) -> DampedForm:
    """Damped kernel of ``phi_mu``.

    ``phi_mu = sum_{nu <= mu} prod_j X_j^{nu_j}/nu_j! prod_j Y_j^{mu_j-nu_j}/(mu_j-nu_j)!``
    with ``X_j = i a*(g_j^+)``, ``Y_j = i a(g_j^+)`` for plus items and
    ``X_j = -a*(g_j^-)``, ``Y_j = a(g_j^-)`` for minus items.  The sum over
    Weyl coefficients then reads ``W(f) = e^{-|f|^2/2} sum_mu c^mu phi_mu``
    with ``c^mu = prod <f^+|h^+>^mu+ <f^-|h^->^mu-``.
    """
    support = default_support(basis, support)
    entries = mu.items()
    As = _restricted_annihilators(basis, _mu_vectors(mu, basis, species), support, L)
    size = len(support)
    ydir = [1j if sign > 0 else 1.0 for (_, sign), _ in entries]
    xadj = [-1j if sign > 0 else -1.0 for (_, sign), _ in entries]
    counts = [c for _, c in entries]
    kernel = np.zeros((size, size), dtype=complex)
    for nu in product(*(range(c + 1) for c in counts)):
        left = np.eye(size, dtype=complex)
        right = np.eye(size, dtype=complex)
        for A, c, n, xa, yd in zip(As, counts, nu, xadj, ydir):
            left = np.linalg.matrix_power(xa * A, n) @ left / math.factorial(n)
            right = np.linalg.matrix_power(yd * A, c - n) @ right / math.factorial(c - n)
        kernel += left.conj().T @ right
    return DampedForm.from_undamped(basis, support, kernel, ell, mu.label())


def wick_operator(mu: MuIndex, basis: FockBasis, species: int = 0) -> FockOperator:
    """``phi_mu`` on the full basis, same ordering conventions as ``wick_monomial``."""
    entries = mu.items()
    As = [basis.annihilation_matrix(v) for v in _mu_vectors(mu, basis, species)]
    ydir = [1j if sign > 0 else 1.0 for (_, sign), _ in entries]
    xadj = [-1j if sign > 0 else -1.0 for (_, sign), _ in entries]
    counts = [c for _, c in entries]
    eye = sp.identity(basis.dim, dtype=complex, format="csr")
    total = sp.csr_matrix((basis.dim, basis.dim), dtype=complex)
    for nu in product(*(range(c + 1) for c in counts)):
        left = eye
        right = eye
        for A, c, n, xa, yd in zip(As, counts, nu, xadj, ydir):
            for _ in range(n):
                left = (xa * A) @ left
            for _ in range(c - n):
                right = (yd * A) @ right
            left = left / math.factorial(n)
            right = right / math.factorial(c - n)
        total = total + left.conj().T @ right
    return FockOperator.from_matrix(basis, total)


# ---------------------------------------------------------------------------
# smeared fields

@dataclass(frozen=True)
class TestFunction:
    """Separable test function ``f_r(t, x) = r^{-(s+1)} tau(t/r) G(x/r)``.

    ``tau`` and ``G`` are the reference polynomial bump squeezed into
    ``|t| < 1/2`` and ``|x| < 1/2`` with unit integrals, so ``f_1`` lives in
    the unit double cone.  ``time_derivatives`` applies ``d/dt`` that many
    times.
    """

    __test__ = False  # keep pytest from collecting this class

    radius: float
    time_derivatives: int = 0

    def time_transform(self, omega: np.ndarray) -> np.ndarray:
        """``int tau_r(t) e^{i omega t} dt`` including derivative factors."""
        from scipy.special import spherical_jn

        nu = 0.5 * self.radius * np.asarray(omega, dtype=float)
        # int_{-1}^{1} (1-t^2)^4 e^{i nu t} dt / (256/315), closed form via j_4
        small = np.abs(nu) < 1e-6
        val = np.empty_like(nu)
        safe = np.where(small, 1.0, nu)
        val[~small] = (945.0 * spherical_jn(4, safe) / safe**4)[~small]
        val[small] = 1.0
        return val * (-1j * np.asarray(omega)) ** self.time_derivatives


def smeared_field(testfn: TestFunction, basis: FockBasis, species: int = 0) -> FockOperator:
    """``phi(f) = a(w_f) + a*(w_f)`` with ``w_f(p) = (2 omega)^{-1/2} tau_hat(omega) G_hat(p)``."""
    return field_operator(smeared_vector(testfn, basis.grids[species]), basis, species)


def smeared_vector(testfn: TestFunction, grid) -> SPVector:
    from .spmodel import radial_transform, sphere_area

    if not isinstance(testfn, TestFunction):
        raise ConfigError("unsupported test function profile")
    s = grid.spatial_dim
    p = grid.radial_nodes
    omega = grid.energies
    spatial = radial_transform(s, 0, 0, 0.5 * testfn.radius * p)
    w = (2 * omega) ** -0.5 * testfn.time_transform(omega) * spatial
    amps = np.zeros((grid.n_radial, len(grid.channels)), dtype=complex)
    amps[:, grid.channels.index((0, 0))] = w * np.sqrt(sphere_area(s))
    return SPVector(grid, amps.ravel())
