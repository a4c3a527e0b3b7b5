"""Single-particle kinematics on a discretized momentum space.

A momentum vector is labelled by a radial node ``p_i`` and a real
spherical-harmonic channel ``(l, m)``.  An :class:`SPVector` stores, for
every mode, the channel coefficient ``f_lm(p_i) = int f(p_i n) Y_lm(n) dn``;
the inner product is ``<f|g> = sum_k w_k conj(f_k) g_k`` with the radial
weight ``w_i = p_i**s * ln(ratio)``.

Localized wave functions come from a fixed polynomial bump
``g(x) = c (1 - |x|^2)^4`` modulated by ``x**beta``.  Their transforms are
evaluated channel by channel through Hankel-type integrals, so no
position-space grid is ever built.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from functools import lru_cache
from itertools import product
from typing import Iterable, Sequence

import numpy as np
from scipy import special

from .errors import ConfigError, GridMismatchError, ResolutionError

BUMP_POWER = 4
_RHO_NODES = 256
_K_MAX = 150.0
_K_PANELS = 40
_K_ORDER = 24


class MultiIndex(tuple):
    """Taylor multi-index ``kappa`` in ``N^s``."""

    def __new__(cls, components: Iterable[int]):
        comps = tuple(int(c) for c in components)
        if any(c < 0 for c in comps):
            raise ValueError("multi-index components must be nonnegative")
        return super().__new__(cls, comps)

    @property
    def order(self) -> int:
        return sum(self)

    @property
    def factorial(self) -> int:
        return math.prod(math.factorial(c) for c in self)

    @classmethod
    def zero(cls, s: int) -> "MultiIndex":
        return cls((0,) * s)

    @classmethod
    def unit(cls, s: int, j: int) -> "MultiIndex":
        return cls(tuple(1 if i == j else 0 for i in range(s)))

    def __add__(self, other):  # componentwise, not concatenation
        return MultiIndex(a + b for a, b in zip(self, other))

    def __repr__(self) -> str:
        return "k" + "".join(str(c) for c in self)


def multi_indices(s: int, order: int) -> list[MultiIndex]:
    """All multi-indices of the given order, in descending lexicographic order."""
    out = [MultiIndex(c) for c in product(range(order + 1), repeat=s) if sum(c) == order]
    return sorted(out, reverse=True)


# ---------------------------------------------------------------------------
# angular machinery

def sphere_area(s: int) -> float:
    return 2.0 * math.pi ** (s / 2) / math.gamma(s / 2)


def real_sph_harm(l: int, m: int, theta, phi):
    """Orthonormal real spherical harmonic, ``theta`` polar and ``phi`` azimuth."""
    if m == 0:
        return special.sph_harm_y(l, 0, theta, phi).real
    y = special.sph_harm_y(l, abs(m), theta, phi)
    sign = -1.0 if abs(m) % 2 else 1.0
    if m > 0:
        return math.sqrt(2.0) * sign * y.real
    return math.sqrt(2.0) * sign * y.imag


def channels_for(s: int, l_max: int) -> tuple[tuple[int, int], ...]:
    if s != 3:
        return ((0, 0),)
    return tuple((l, m) for l in range(l_max + 1) for m in range(-l, l + 1))


@lru_cache(maxsize=None)
def sphere_rule(n_theta: int = 24, n_phi: int = 48):
    """Product rule on S^2, exact for polynomials of degree < min(2 n_theta, n_phi)."""
    x, wx = np.polynomial.legendre.leggauss(n_theta)
    phi = 2.0 * np.pi * np.arange(n_phi) / n_phi
    theta = np.arccos(x)
    T, P = np.meshgrid(theta, phi, indexing="ij")
    W = np.outer(wx, np.full(n_phi, 2.0 * np.pi / n_phi))
    units = np.stack([np.sin(T) * np.cos(P), np.sin(T) * np.sin(P), np.cos(T)], axis=-1)
    return T.ravel(), P.ravel(), W.ravel(), units.reshape(-1, 3)


@lru_cache(maxsize=None)
def harmonic_table(l_max: int) -> np.ndarray:
    """Values of all real harmonics with l <= l_max on the sphere rule."""
    T, P, _, _ = sphere_rule()
    return np.array([real_sph_harm(l, m, T, P) for l, m in channels_for(3, l_max)])


@lru_cache(maxsize=None)
def monomial_harmonics(kappa: tuple, l_max: int) -> np.ndarray:
    """Coefficients of ``n**kappa`` (n on S^2) on the real harmonics with l <= l_max."""
    _, _, W, U = sphere_rule()
    mono = np.prod(U ** np.asarray(kappa, dtype=float), axis=1)
    return harmonic_table(l_max) @ (W * mono)


def sphere_monomial_integral(alpha: Sequence[int]) -> float:
    """``int_{S^{s-1}} n**alpha dn`` by quadrature (s = 3) or closed form (other s)."""
    s = len(alpha)
    if s == 3:
        _, _, W, U = sphere_rule()
        return float(W @ np.prod(U ** np.asarray(alpha, dtype=float), axis=1))
    return sphere_monomial_closed(alpha)


def sphere_monomial_closed(alpha: Sequence[int]) -> float:
    if any(a % 2 for a in alpha):
        return 0.0
    s = len(alpha)
    num = math.prod(math.gamma((a + 1) / 2) for a in alpha)
    return 2.0 * num / math.gamma((sum(alpha) + s) / 2)


# ---------------------------------------------------------------------------
# reference bump

def bump_constant(s: int) -> float:
    """``c`` such that ``c (1-|x|^2)^4`` integrates to one over R^s."""
    radial = 0.5 * special.beta(s / 2, BUMP_POWER + 1)
    return 1.0 / (sphere_area(s) * radial)


@lru_cache(maxsize=None)
def _rho_rule():
    x, w = np.polynomial.legendre.leggauss(_RHO_NODES)
    return 0.5 * (x + 1.0), 0.5 * w


@lru_cache(maxsize=None)
def _k_rule():
    x, w = np.polynomial.legendre.leggauss(_K_ORDER)
    edges = np.linspace(0.0, _K_MAX, _K_PANELS + 1)
    ks, ws = [], []
    for a, b in zip(edges[:-1], edges[1:]):
        ks.append(0.5 * (b - a) * x + 0.5 * (a + b))
        ws.append(0.5 * (b - a) * w)
    return np.concatenate(ks), np.concatenate(ws)


def radial_moment(s: int, j: int) -> float:
    """``c int_0^1 rho^(j+s-1) (1-rho^2)^4 drho`` by Gauss-Legendre quadrature."""
    rho, w = _rho_rule()
    return float(bump_constant(s) * (w @ (rho ** (j + s - 1) * (1 - rho**2) ** BUMP_POWER)))


def radial_transform(s: int, n: int, l: int, k) -> np.ndarray:
    """Radial factor of the transform of ``rho^n g(rho) Y_l``.

    For s = 3 this is ``sqrt(2/pi) int rho^(n+2) g j_l(k rho) drho``; for
    other dimensions only l = 0 is available and the Bessel kernel
    ``J_{s/2-1}`` is used.
    """
    k = np.atleast_1d(np.asarray(k, dtype=float))
    rho, w = _rho_rule()
    g = bump_constant(s) * (1 - rho**2) ** BUMP_POWER * rho**n
    kr = np.outer(k, rho)
    if s == 3:
        kern = special.spherical_jn(l, kr) * rho**2
        return math.sqrt(2.0 / math.pi) * (kern @ (w * g))
    if l != 0:
        raise ResolutionError("only the l = 0 channel is available for s != 3")
    nu = s / 2 - 1
    out = np.empty_like(k)
    small = k < 1e-8
    kern = special.jv(nu, kr[~small]) * rho ** (s / 2)
    out[~small] = k[~small] ** (1 - s / 2) * (kern @ (w * g))
    # k -> 0 limit: (2 pi)^{-s/2} int g rho^n d^s x / |S|^{1/2} normalization below
    out[small] = (w @ (g * rho ** (s - 1))) / (2.0 ** nu * math.gamma(nu + 1))
    return out


# ---------------------------------------------------------------------------
# grid and vectors

@dataclass(frozen=True, eq=False)
class MomentumGrid:
    spatial_dim: int
    mass: float
    radial_nodes: np.ndarray
    angular_order: int
    ratio: float
    channels: tuple = field(repr=False)
    weights: np.ndarray = field(repr=False)
    energies: np.ndarray = field(repr=False)

    @property
    def n_radial(self) -> int:
        return len(self.radial_nodes)

    @property
    def n_modes(self) -> int:
        return self.n_radial * len(self.channels)

    @property
    def p_max(self) -> float:
        return float(self.radial_nodes[-1])

    @property
    def mode_node(self) -> np.ndarray:
        return np.repeat(np.arange(self.n_radial), len(self.channels))

    @property
    def mode_l(self) -> np.ndarray:
        return np.tile([l for l, _ in self.channels], self.n_radial)

    @property
    def mode_weights(self) -> np.ndarray:
        return self.weights[self.mode_node]

    @property
    def mode_energies(self) -> np.ndarray:
        return self.energies[self.mode_node]

    @property
    def mode_momenta(self) -> np.ndarray:
        return self.radial_nodes[self.mode_node]

    @property
    def key(self) -> tuple:
        return (self.spatial_dim, float(self.mass), float(self.p_max), self.n_radial,
                self.angular_order, float(self.ratio))

    def digest(self) -> str:
        return hashlib.sha256(repr(self.key).encode()).hexdigest()[:16]

    def same_as(self, other: "MomentumGrid") -> bool:
        return self is other or self.key == other.key

    def check(self, other: "MomentumGrid") -> None:
        if not self.same_as(other):
            raise GridMismatchError("vectors live on different momentum grids")

    def mode_index(self, node: int, l: int, m: int) -> int:
        return node * len(self.channels) + self.channels.index((l, m))

    def vector(self, amplitudes) -> "SPVector":
        return SPVector(self, np.asarray(amplitudes, dtype=complex))

    def zero(self) -> "SPVector":
        return self.vector(np.zeros(self.n_modes))


def build_grid(s: int, m: float, p_max: float, n_r: int, l_max: int,
               ratio: float = 2.0) -> MomentumGrid:
    """Geometric radial nodes ``p_i = p_max ratio^(i - n_r + 1)`` times harmonic channels."""
    if s < 1:
        raise ConfigError("spatial dimension must be >= 1")
    if n_r < 2:
        raise ConfigError("need at least two radial nodes")
    if l_max < 0:
        raise ConfigError("angular order must be nonnegative")
    if s != 3 and l_max != 0:
        raise ConfigError("angular channels beyond l = 0 are only implemented for s = 3")
    if m < 0 or p_max <= 0 or ratio <= 1:
        raise ConfigError("need m >= 0, p_max > 0 and ratio > 1")
    nodes = p_max * ratio ** (np.arange(n_r) - (n_r - 1.0))
    weights = nodes**s * math.log(ratio)
    energies = np.sqrt(nodes**2 + m**2)
    return MomentumGrid(s, float(m), nodes, int(l_max), float(ratio),
                        channels_for(s, l_max), weights, energies)


@dataclass(frozen=True, eq=False)
class SPVector:
    grid: MomentumGrid
    amplitudes: np.ndarray

    def orthonormal(self) -> np.ndarray:
        """Coordinates in the orthonormal mode basis."""
        return np.sqrt(self.grid.mode_weights) * self.amplitudes

    def inner(self, other: "SPVector") -> complex:
        self.grid.check(other.grid)
        return complex(np.sum(self.grid.mode_weights * np.conj(self.amplitudes) * other.amplitudes))

    def norm(self) -> float:
        return float(np.sqrt(np.sum(self.grid.mode_weights * np.abs(self.amplitudes) ** 2)))

    def __add__(self, other: "SPVector") -> "SPVector":
        self.grid.check(other.grid)
        return SPVector(self.grid, self.amplitudes + other.amplitudes)

    def __sub__(self, other: "SPVector") -> "SPVector":
        return self + (-1.0) * other

    def __mul__(self, c) -> "SPVector":
        return SPVector(self.grid, complex(c) * self.amplitudes)

    __rmul__ = __mul__

    @classmethod
    def from_orthonormal(cls, grid: MomentumGrid, coords) -> "SPVector":
        return cls(grid, np.asarray(coords, dtype=complex) / np.sqrt(grid.mode_weights))


def energy_restricted_norm(v: SPVector, E: float, grid: MomentumGrid | None = None) -> float:
    """Norm of ``P_omega(E) v`` for the sharp cutoff ``omega <= E``."""
    grid = v.grid if grid is None else grid
    grid.check(v.grid)
    keep = grid.mode_energies <= E
    return float(np.sqrt(np.sum(grid.mode_weights[keep] * np.abs(v.amplitudes[keep]) ** 2)))


# ---------------------------------------------------------------------------
# localized pairs

def _angular_coefficients(s: int, beta: tuple, l_cap: int) -> np.ndarray:
    if s == 3:
        return monomial_harmonics(tuple(beta), l_cap)
    if any(beta):
        raise ResolutionError("only radial profiles are available for s != 3")
    return np.array([math.sqrt(sphere_area(s))])


def _channel_l(s: int, l_cap: int) -> np.ndarray:
    return np.array([l for l, _ in channels_for(s, l_cap)])


def _profile_norm_integrals(s: int, beta_a: tuple, beta_b: tuple, mr: float, sign: int) -> float:
    """``int conj(G_a) G_b omega^{-sign} d^s k`` at unit radius with ``omega = sqrt(k^2 + (m r)^2)``."""
    k, wk = _k_rule()
    L = max(sum(beta_a), sum(beta_b))
    ca = _angular_coefficients(s, beta_a, L)
    cb = _angular_coefficients(s, beta_b, L)
    ls = _channel_l(s, L)
    weight = wk * k ** (s - 1) * np.sqrt(k**2 + mr**2) ** (-sign)
    total = 0.0
    for l in sorted(set(ls.tolist())):
        sel = ls == l
        ang = float(ca[sel] @ cb[sel])
        if abs(ang) < 1e-14:
            continue
        ta = radial_transform(s, sum(beta_a), l, k)
        tb = radial_transform(s, sum(beta_b), l, k)
        total += ang * float(weight @ (ta * tb))
    return total


def continuum_norm2(grid: MomentumGrid, r: float, beta: tuple, sign: int) -> float:
    """Squared norm of the unnormalized part ``omega^{-sign/2} G_hat_r`` (sign = +1 or -1)."""
    s = grid.spatial_dim
    return r ** (s + sign) * _profile_norm_integrals(s, beta, beta, grid.mass * r, sign)


def continuum_gram(grid: MomentumGrid, r: float, betas: Sequence[tuple], sign: int) -> np.ndarray:
    """Gram matrix of the unit-normalized parts of several profiles (real)."""
    s = grid.spatial_dim
    n = len(betas)
    raw = np.empty((n, n))
    for i in range(n):
        for j in range(i, n):
            raw[i, j] = raw[j, i] = _profile_norm_integrals(
                s, tuple(betas[i]), tuple(betas[j]), grid.mass * r, sign)
    d = np.sqrt(np.diag(raw))
    return raw / np.outer(d, d)


@dataclass(frozen=True, eq=False)
class LocalizedPair:
    """Unit-norm parts ``f^+`` and ``f^-`` of a wave function localized in ``|x| < r``."""

    radius: float
    plus_part: SPVector
    minus_part: SPVector
    profile_id: MultiIndex
    plus_scale: float
    minus_scale: float

    @property
    def grid(self) -> MomentumGrid:
        return self.plus_part.grid

    def combined(self, t_plus: float = 1.0, t_minus: float = 1.0) -> SPVector:
        return t_plus * self.plus_part + (1j * t_minus) * self.minus_part


def make_local_pair(grid: MomentumGrid, r: float, profile) -> LocalizedPair:
    """Grid evaluation of ``f^{+-} = A^{+-} omega^{-+1/2} G_hat_r`` for ``G_r = (x/r)^beta g(x/r)``.

    ``A^{+-}`` normalizes each part to unit continuum norm.
    """
    if r <= 0:
        raise ConfigError("radius must be positive")
    s = grid.spatial_dim
    beta = MultiIndex(profile)
    if len(beta) != s:
        raise ConfigError("profile multi-index has wrong length")
    if beta.order > 2:
        raise ConfigError("profiles are limited to |beta| <= 2")
    coeffs = _angular_coefficients(s, tuple(beta), grid.angular_order)
    ls = _channel_l(s, grid.angular_order)
    phase = (-1j) ** ls
    p = grid.radial_nodes
    radial = np.stack([radial_transform(s, beta.order, l, r * p) for l in ls], axis=1)
    ghat = r**s * radial * (phase * coeffs)[None, :]
    omega = grid.energies[:, None]
    scales = []
    parts = []
    for sign in (+1, -1):
        a = 1.0 / math.sqrt(continuum_norm2(grid, r, tuple(beta), sign))
        scales.append(a)
        parts.append(SPVector(grid, (a * omega ** (-0.5 * sign) * ghat).ravel()))
    return LocalizedPair(float(r), parts[0], parts[1], beta, scales[0], scales[1])


def _sign_value(sign) -> int:
    if sign in ("+", +1, 1):
        return +1
    if sign in ("-", -1):
        return -1
    raise ValueError(f"sign must be '+' or '-', got {sign!r}")


def moment_pairing(pair: LocalizedPair, kappa, sign) -> float:
    """``<f^{+-}|h_kappa^{+-}> = (sqrt 2 / kappa!) A^{+-} M_kappa(G_r)``.

    The moment is the Taylor coefficient of the transform at ``p = 0``:
    a radial quadrature times a spherical monomial quadrature.
    """
    kappa = MultiIndex(kappa)
    sg = _sign_value(sign)
    grid = pair.grid
    if kappa.order > grid.angular_order and grid.spatial_dim == 3:
        raise ResolutionError(f"l_max = {grid.angular_order} cannot resolve |kappa| = {kappa.order}")
    if grid.spatial_dim != 3 and kappa.order > 0:
        raise ResolutionError("only kappa = 0 is resolvable for s != 3")
    s = grid.spatial_dim
    alpha = pair.profile_id + kappa
    ang = sphere_monomial_integral(tuple(alpha))
    if abs(ang) < 1e-13:
        return 0.0
    moment = pair.radius ** (s + kappa.order) * radial_moment(s, alpha.order) * ang
    scale = pair.plus_scale if sg > 0 else pair.minus_scale
    return math.sqrt(2.0) / kappa.factorial * scale * moment


def improper_vector(grid: MomentumGrid, kappa, sign) -> SPVector:
    """Grid realization of ``g_kappa^{+-} = i^{-|kappa|} omega^{-+1/2} p^kappa / (sqrt 2 (2 pi)^{s/2})``."""
    kappa = MultiIndex(kappa)
    sg = _sign_value(sign)
    s = grid.spatial_dim
    if (s == 3 and kappa.order > grid.angular_order) or (s != 3 and kappa.order > 0):
        raise ResolutionError(f"grid cannot resolve |kappa| = {kappa.order}")
    coeffs = _angular_coefficients(s, tuple(kappa), grid.angular_order)
    p = grid.radial_nodes[:, None]
    omega = grid.energies[:, None]
    const = (1j) ** (-kappa.order) / (math.sqrt(2.0) * (2 * math.pi) ** (s / 2))
    amps = const * omega ** (-0.5 * sg) * p**kappa.order * coeffs[None, :]
    return SPVector(grid, amps.ravel())


def expansion_items(grid: MomentumGrid, max_order: int | None = None) -> list[tuple[MultiIndex, int]]:
    """All ``(kappa, sign)`` pairs the grid resolves, ordered by weight then sign."""
    s = grid.spatial_dim
    top = grid.angular_order if s == 3 else 0
    if max_order is not None:
        top = min(top, max_order)
    items = []
    for order in range(top + 1):
        for sg in (+1, -1):
            items.extend((k, sg) for k in multi_indices(s, order))
    return items


def dual_vectors(grid: MomentumGrid, items: Sequence[tuple[MultiIndex, int]] | None = None
                 ) -> dict[tuple[MultiIndex, int], SPVector]:
    """Grid vectors ``h_j`` biorthogonal to the ``g_j``: ``<h_i|g_j> = delta_ij``.

    These realize the improper ``h_kappa`` on the grid: for a localized ``f``,
    ``<h_kappa|f>`` reproduces the moment pairing up to higher orders in r.
    """
    items = expansion_items(grid) if items is None else list(items)
    G = np.stack([improper_vector(grid, k, sg).orthonormal() for k, sg in items], axis=1)
    gram = G.conj().T @ G
    if np.linalg.cond(gram) > 1e13:
        raise ResolutionError("improper vectors are not independent on this grid; add radial nodes")
    H = G @ np.linalg.inv(gram).conj().T
    return {item: SPVector.from_orthonormal(grid, H[:, j]) for j, item in enumerate(items)}
