"""Pairing tensors over a radius schedule and the scaling analysis built on them.

The pairing tensor holds ``sigma_a(A_b(r_k))`` for a basis of damped
functionals ``sigma_a`` (rank-one functionals over low-lying states plus
the dual functionals of low Wick monomials) and the members ``A_b`` of the
local Weyl family at each radius.  Field spaces are read off from how fast
the singular directions of this tensor shrink with the radius.
"""

from __future__ import annotations

import hashlib
import logging
import math
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.linalg import polar
from scipy.optimize import linear_sum_assignment

from .errors import (ConfigError, FitError, GapError, MembershipError, PointFieldError,
                     RankDeficiencyError)
from .fock import DampedForm, FockBasis, TestFunction, smeared_field, weyl_blocks
from .functionals import evaluate, sigma_mu
from .models import Model, ModelConfig, build_model
from .spmodel import dual_vectors

log = logging.getLogger(__name__)

MAGIC = b"PFLB"
VERSION = 1
NOISE_FLOOR = 1e-11     # tracked directions must exceed this fraction of the top value
SIGMA_RESIDUAL_MAX = 1e-6


# ---------------------------------------------------------------------------
# schedule and fits

@dataclass(frozen=True)
class RadiusSchedule:
    r0: float
    q: float
    count: int

    def __post_init__(self):
        if self.count < 4:
            raise ConfigError("a radius schedule needs at least 4 points")
        if not (0 < self.q < 1) or self.r0 <= 0:
            raise ConfigError("need r0 > 0 and 0 < q < 1")

    @property
    def radii(self) -> np.ndarray:
        return self.r0 * self.q ** np.arange(self.count)

    @classmethod
    def from_config(cls, cfg: ModelConfig) -> "RadiusSchedule":
        return cls(cfg.r0, cfg.q, cfg.count)


def fit_exponent(radii, values) -> tuple[float, float]:
    """Least-squares slope of ``log value`` against ``log r`` and the RMS residual."""
    r = np.asarray(radii, dtype=float)
    v = np.asarray(values, dtype=float)
    if r.size < 3 or r.size != v.size:
        raise FitError("need at least 3 samples of matching length")
    if np.any(~np.isfinite(v)) or np.any(v <= 0) or np.any(r <= 0):
        raise FitError("power-law fit needs positive finite samples")
    x = np.log(r)
    y = np.log(v)
    X = np.column_stack([x, np.ones_like(x)])
    coef, *_ = np.linalg.lstsq(X, y, rcond=None)
    resid = y - X @ coef
    return float(coef[0]), float(np.sqrt(np.mean(resid**2)))


def tail_window(count: int) -> int:
    """Number of smallest radii used for asymptotic fits."""
    return min(count, max(3, math.ceil(count / 2)))


def asymptotic_fit(radii, values) -> tuple[float, float]:
    """``fit_exponent`` on the small-radius end of a schedule.

    The large-radius end carries subleading corrections that can bend or
    even cancel a single power law, so short-distance exponents are read
    off where the leading term dominates.
    """
    r = np.asarray(radii, dtype=float)
    v = np.asarray(values, dtype=float)
    n = tail_window(r.size)
    order = np.argsort(r)[:n]
    return fit_exponent(r[order], v[order])


# ---------------------------------------------------------------------------
# pairing tensor

@dataclass(eq=False)
class PairingTensor:
    """``values[k, a, b] = sigma_a(A_b(r_k))``.

    The first ``len(support)**2`` functionals are the rank-one functionals
    ``R^l |xi)(chi| R^l`` in row-major order over ``support``; the rest are
    the dual functionals named in ``sigma_labels``.  ``weights`` rescale
    functionals before any analysis: 1 for rank-one rows, and one over the
    largest member value at the first radius for the dual rows.
    """

    radii: np.ndarray
    values: np.ndarray
    support: np.ndarray | None = None
    sigma_labels: tuple = ()
    config: ModelConfig | None = None
    eps_gap: float = 0.25
    _model: Model | None = field(default=None, repr=False)
    _sigmas: tuple | None = field(default=None, repr=False)
    _analysis: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.radii = np.asarray(self.radii, dtype=float)
        self.values = np.asarray(self.values, dtype=complex)
        if self.values.ndim != 3 or self.values.shape[0] != len(self.radii):
            raise ConfigError("values must have shape (radius, functional, member)")
        if len(self.radii) < 4 or np.any(np.diff(self.radii) >= 0):
            raise ConfigError("radii must be strictly decreasing with at least 4 points")
        if self.support is not None:
            self.support = np.asarray(self.support, dtype=np.int64)
            if self.n_rank_one + len(self.sigma_labels) != self.values.shape[1]:
                raise ConfigError("row count does not match support and dual rows")

    @classmethod
    def synthetic(cls, radii, values, eps_gap: float = 0.25) -> "PairingTensor":
        """Tensor without a model behind it; every row counts as a plain functional."""
        return cls(np.asarray(radii), np.asarray(values), eps_gap=eps_gap)

    @property
    def n_rank_one(self) -> int:
        if self.support is None:
            return self.values.shape[1]
        return len(self.support) ** 2

    @property
    def shape(self) -> tuple:
        return self.values.shape

    @property
    def weights(self) -> np.ndarray:
        w = np.ones(self.values.shape[1])
        extra = self.values[0, self.n_rank_one:, :]
        if extra.size:
            top = np.abs(extra).max(axis=1)
            top[top == 0] = 1.0
            w[self.n_rank_one:] = 1.0 / top
        return w

    def normalized(self, k: int) -> np.ndarray:
        return self.weights[:, None] * self.values[k]

    @property
    def model(self) -> Model:
        if self._model is None:
            if self.config is None:
                raise ConfigError("synthetic tensors carry no model")
            self._model = build_model(self.config)
        return self._model

    @property
    def sigmas(self) -> tuple:
        if self._sigmas is None:
            self._sigmas = dual_functionals(self.model)
        return self._sigmas

    @property
    def basis(self) -> FockBasis | None:
        return None if self.config is None else self.model.basis

    @property
    def ell(self) -> float:
        return 0.0 if self.config is None else self.config.ell

    def subset(self, indices: Sequence[int]) -> "PairingTensor":
        idx = list(indices)
        return PairingTensor(self.radii[idx], self.values[idx], self.support, self.sigma_labels,
                             self.config, self.eps_gap, self._model, self._sigmas)

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.radii).tobytes())
        h.update(np.ascontiguousarray(self.values).tobytes())
        return h.hexdigest()

    # -- cache file -----------------------------------------------------------
    def save(self, path) -> Path:
        if self.config is None or self.support is None:
            raise ConfigError("only model tensors can be cached")
        path = Path(path)
        labels = "\n".join(self.sigma_labels).encode("utf-8")
        K, R, B = self.values.shape
        with open(path, "wb") as fh:
            fh.write(MAGIC + bytes([VERSION]))
            fh.write(self.config.digest().encode("ascii"))
            fh.write(struct.pack("<6Q", K, R, B, len(self.support), len(self.sigma_labels), len(labels)))
            fh.write(labels)
            fh.write(self.radii.astype("<f8").tobytes())
            fh.write(self.support.astype("<f8").tobytes())
            fh.write(self.values.astype("<c16").tobytes())
        return path

    @classmethod
    def load(cls, path, config: ModelConfig) -> "PairingTensor":
        data = Path(path).read_bytes()
        if data[:4] != MAGIC or data[4] != VERSION:
            raise ConfigError(f"{path} is not a pairing-tensor cache file")
        digest = data[5:69].decode("ascii")
        if digest != config.digest():
            raise ConfigError(f"cache {path} was built from a different configuration")
        K, R, B, n_s, n_sig, n_lab = struct.unpack("<6Q", data[69:117])
        pos = 117
        labels = data[pos:pos + n_lab].decode("utf-8")
        pos += n_lab
        radii = np.frombuffer(data, "<f8", K, pos)
        pos += 8 * K
        support = np.frombuffer(data, "<f8", n_s, pos).astype(np.int64)
        pos += 8 * n_s
        values = np.frombuffer(data, "<c16", K * R * B, pos).reshape(K, R, B)
        sig = tuple(labels.split("\n")) if n_sig else ()
        return cls(radii.copy(), values.copy(), support, sig, config, config.eps_gap)


def cache_path(cache_dir, config: ModelConfig) -> Path:
    return Path(cache_dir) / f"{config.digest()}.pflb"


def dual_functionals(model: Model) -> tuple:
    if not model.sigma_mus:
        return ()
    basis = model.basis
    duals = dual_vectors(model.grid)
    out = []
    for mu in model.sigma_mus:
        sig = sigma_mu(mu, None, basis, duals=duals, seed=model.config.seed)
        if sig.residual > SIGMA_RESIDUAL_MAX:
            raise RankDeficiencyError(f"dual functional {mu.label()} fits with residual {sig.residual:.2e}")
        out.append(sig)
    return tuple(out)


def _radius_rows(model: Model, sigmas: tuple, r: float, L: np.ndarray, d: np.ndarray) -> np.ndarray:
    fam = model.family(r)
    W = weyl_blocks(model.basis, fam.coords, fam.norm2, model.support, L)
    rows = (W * np.outer(d, d)[None]).reshape(len(fam.specs), -1).T
    if sigmas:
        rows = np.vstack([rows, np.array([s.on_weyl(fam.coords, fam.norm2) for s in sigmas])])
    return rows


def assemble(config: ModelConfig, cache_dir=None, threads: int = 1,
             model: Model | None = None) -> PairingTensor:
    """Build (or load from the cache) the pairing tensor of a configuration."""
    if cache_dir is not None:
        path = cache_path(cache_dir, config)
        if path.exists():
            return PairingTensor.load(path, config)
    model = build_model(config) if model is None else model
    sigmas = dual_functionals(model)
    basis = model.basis
    L = basis.ladder_tensor(model.support)
    d = basis.damping(config.ell, model.support)
    radii = config.radii
    for r in radii:  # families first, so worker threads only read
        model.family(r)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            blocks = list(pool.map(lambda r: _radius_rows(model, sigmas, r, L, d), radii))
    else:
        blocks = [_radius_rows(model, sigmas, r, L, d) for r in radii]
    tensor = PairingTensor(radii, np.array(blocks), model.support,
                           tuple(s.label for s in sigmas), config, config.eps_gap, model, sigmas)
    if cache_dir is not None:
        Path(cache_dir).mkdir(parents=True, exist_ok=True)
        tensor.save(cache_path(cache_dir, config))
    return tensor


# ---------------------------------------------------------------------------
# scaling analysis

@dataclass(frozen=True)
class ScalingReport:
    """Tracked directions sorted by fitted exponent.

    ``directions[:, j]`` is the weighted functional-space direction at the
    smallest radius, ``values[j]`` its singular values along the schedule.
    ``clusters`` rows are (low, high, size) with links closer than
    ``2 eps_gap``.
    """

    radii: np.ndarray
    exponents: np.ndarray
    residuals: np.ndarray
    values: np.ndarray
    directions: np.ndarray
    coefficients: np.ndarray
    clusters: tuple
    eps_gap: float

    def count(self, gamma: float) -> int:
        return int(np.sum(self.exponents <= gamma + self.eps_gap))

    def slope_errors(self) -> np.ndarray:
        """Standard error of each fitted exponent over the fit window."""
        n = tail_window(self.radii.size)
        x = np.log(np.sort(self.radii)[:n])
        spread = math.sqrt(np.sum((x - x.mean()) ** 2))
        return self.residuals * math.sqrt(n / max(n - 2, 1)) / spread

    def count_lower(self, gamma: float) -> int:
        """Directions that stay under the cut when moved up by their slope error."""
        return int(np.sum(self.exponents + self.slope_errors() <= gamma + self.eps_gap))

    def check_cut(self, gamma: float) -> None:
        cut = gamma + self.eps_gap
        for low, high, size in self.clusters:
            if low <= cut < high:
                raise GapError(f"exponent cluster [{low:.3f}, {high:.3f}] straddles {cut:.3f}",
                               self.clusters)


def _clusters(exponents: np.ndarray, link: float) -> tuple:
    if exponents.size == 0:
        return ()
    out = []
    start = 0
    for j in range(1, exponents.size + 1):
        if j == exponents.size or exponents[j] - exponents[j - 1] >= link:
            out.append((float(exponents[start]), float(exponents[j - 1]), j - start))
            start = j
    return tuple(out)


def _orient(u: np.ndarray) -> np.ndarray:
    """Fix the phase so the first non-negligible entry is positive real."""
    mag = np.abs(u)
    if mag.max() == 0:
        return u
    j = int(np.argmax(mag >= 1e-6 * mag.max()))
    return u * (np.conj(u[j]) / mag[j])


def scaling_analysis(tensor: PairingTensor, max_directions: int | None = None) -> ScalingReport:
    """Per-radius SVD, tracking from the smallest radius upward, log-log fits.

    Exponents come from ``asymptotic_fit``; the tracked values over the whole
    schedule stay in the report.
    """
    key = ("scaling", max_directions)
    if key in tensor._analysis:
        return tensor._analysis[key]
    K = len(tensor.radii)
    svds = []
    for k in range(K):
        A = tensor.normalized(k)
        U, s, Vh = np.linalg.svd(A, full_matrices=False)
        svds.append((U, s, Vh))
    U_last, s_last, Vh_last = svds[-1]
    top = max(sv[1][0] for sv in svds) if s_last.size else 0.0
    n_track = int(np.sum(s_last > NOISE_FLOOR * top))
    if max_directions is not None:
        n_track = min(n_track, max_directions)
    if n_track == 0:
        raise RankDeficiencyError("the pairing tensor vanishes at the smallest radius")
    track = np.zeros((n_track, K))
    track[:, -1] = s_last[:n_track]
    current = U_last[:, :n_track]
    for k in range(K - 2, -1, -1):
        U, s, _ = svds[k]
        n_cand = min(U.shape[1], 2 * n_track + 4)
        overlap = np.abs(current.conj().T @ U[:, :n_cand])
        rows, cols = linear_sum_assignment(-overlap)
        order = np.empty(n_track, dtype=int)
        order[rows] = cols
        track[:, k] = s[order]
        current = U[:, order]
    fits = [asymptotic_fit(tensor.radii, np.maximum(track[j], 1e-300)) for j in range(n_track)]
    theta = np.array([f[0] for f in fits])
    resid = np.array([f[1] for f in fits])
    order = np.lexsort((-s_last[:n_track], theta))
    dirs = np.array([_orient(U_last[:, j]) for j in order]).T
    w = tensor.weights
    report = ScalingReport(tensor.radii.copy(), theta[order], resid[order], track[order],
                           dirs, np.conj(dirs) * w[:, None],
                           _clusters(theta[order], 2 * tensor.eps_gap), tensor.eps_gap)
    tensor._analysis[key] = report
    return report


@dataclass(frozen=True, eq=False)
class FieldSpace:
    """Extracted ``Phi_gamma``: basis forms (or raw vectors for synthetic tensors)."""

    gamma: float
    vectors: np.ndarray
    forms: tuple
    exponents: np.ndarray
    provenance: str

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def gram_min_singular(self) -> float:
        if self.dim == 0:
            return 0.0
        return float(np.linalg.svd(self.vectors.conj().T @ self.vectors, compute_uv=False)[-1])


@dataclass(frozen=True, eq=False)
class GermSpace:
    """Functional-side directions: coefficient vectors over the functional basis."""

    gamma: float
    representatives: np.ndarray

    @property
    def dim(self) -> int:
        return self.representatives.shape[1]


def extract(tensor: PairingTensor, gamma: float, eps_gap: float | None = None):
    """``(N_gamma, FieldSpace, GermSpace, ScalingReport)`` for one exponent bound.

    Directions are taken in order of increasing fitted exponent, so spaces
    for increasing ``gamma`` are nested.  Raises ``GapError`` when the cut
    ``gamma + eps_gap`` falls inside an exponent cluster.
    """
    if eps_gap is not None and eps_gap != tensor.eps_gap:
        tensor = PairingTensor(tensor.radii, tensor.values, tensor.support, tensor.sigma_labels,
                               tensor.config, eps_gap, tensor._model, tensor._sigmas)
    report = scaling_analysis(tensor)
    report.check_cut(gamma)
    n = report.count(gamma)
    if n != report.count_lower(gamma):
        log.info("rank bounds at gamma=%s: %d <= N <= %d", gamma, report.count_lower(gamma), n)
    head = report.directions[:tensor.n_rank_one, :n]
    norms = np.linalg.norm(head, axis=0)
    norms[norms == 0] = 1.0
    vectors = head / norms
    forms: tuple = ()
    if tensor.config is not None and tensor.support is not None:
        size = len(tensor.support)
        forms = tuple(DampedForm(tensor.basis, tensor.support, vectors[:, j].reshape(size, size),
                                 tensor.ell, f"phi_{j}") for j in range(n))
    provenance = tensor.config.digest() if tensor.config is not None else tensor.digest()
    space = FieldSpace(float(gamma), vectors, forms, report.exponents[:n].copy(), provenance)
    germs = GermSpace(float(gamma), report.coefficients[:, :n].copy())
    return n, space, germs, report


# ---------------------------------------------------------------------------
# spaces

def _columns(X) -> np.ndarray:
    if isinstance(X, FieldSpace):
        return X.vectors
    if isinstance(X, DampedForm):
        return X.vector[:, None]
    if isinstance(X, np.ndarray):
        return X[:, None] if X.ndim == 1 else X
    items = list(X)
    if not items:
        raise RankDeficiencyError("empty set of forms")
    if isinstance(items[0], DampedForm):
        for f in items[1:]:
            items[0]._compatible(f)
        return np.array([f.vector for f in items]).T
    return np.array([np.asarray(v).ravel() for v in items]).T


def _orthonormal(M: np.ndarray) -> np.ndarray:
    U, s, _ = np.linalg.svd(M, full_matrices=False)
    if s.size == 0 or s[0] == 0 or s[-1] < 1e-10 * s[0]:
        raise RankDeficiencyError("degenerate Gram matrix")
    return U


def match_spaces(X, Y) -> float:
    """Largest principal angle (radians) between the spans of X and Y.

    For spans of different dimension this is the angle of the smaller one
    to its projection on the larger.  Computed from sines, so angles near
    zero keep full precision.
    """
    A = _columns(X)
    B = _columns(Y)
    if A.shape[0] != B.shape[0]:
        raise ConfigError("forms live on different supports")
    Qa = _orthonormal(A)
    Qb = _orthonormal(B)
    if Qa.shape[1] > Qb.shape[1]:
        Qa, Qb = Qb, Qa
    rest = Qa - Qb @ (Qb.conj().T @ Qa)
    s = np.linalg.norm(rest, 2)
    return float(math.asin(min(1.0, s)))


@dataclass(frozen=True)
class Classification:
    verdict: str
    evidence: dict


CLASSES = ("RegularPointlike", "DegenerateBounded", "NonRegular", "Inconclusive")


def classify(counts: dict, species_trend: Sequence[int] | None = None) -> Classification:
    """Verdict from ``{gamma: N_gamma or GapError}``.

    ``species_trend`` lists ``N_1`` for a growing number of species; a
    strictly increasing trend is taken as unbounded growth.
    """
    gammas = sorted(counts)
    evidence = {"counts": {str(g): (c if isinstance(c, int) else type(c).__name__)
                           for g, c in ((g, counts[g]) for g in gammas)}}
    if species_trend is not None:
        evidence["species_trend"] = list(species_trend)
        trend = list(species_trend)
        if len(trend) >= 3 and all(b > a for a, b in zip(trend, trend[1:])):
            evidence["reason"] = "N_1 grows with every added species"
            return Classification("NonRegular", evidence)
    failures = [g for g in gammas if isinstance(counts[g], Exception)]
    if failures:
        evidence["reason"] = f"no separable exponent gap at gamma = {failures}"
        return Classification("NonRegular", evidence)
    if len(gammas) < 2:
        evidence["reason"] = "need at least two gamma values"
        return Classification("Inconclusive", evidence)
    values = [counts[g] for g in gammas]
    if any(b < a for a, b in zip(values, values[1:])):
        evidence["reason"] = "N_gamma decreases, scan is inconsistent"
        return Classification("Inconclusive", evidence)
    if all(v == 1 for v in values):
        if max(gammas) < 1:
            evidence["reason"] = "gamma grid stops below 1"
            return Classification("Inconclusive", evidence)
        evidence["reason"] = "N_gamma = 1 throughout"
        return Classification("DegenerateBounded", evidence)
    evidence["reason"] = "N_gamma finite and growing"
    return Classification("RegularPointlike", evidence)


# ---------------------------------------------------------------------------
# finite-rank maps and residual curves

@dataclass(frozen=True, eq=False)
class FiniteRankMap:
    """``psi(A) = sum_j sigma_j(A) phi_j``.

    Each term is ``(sigma_j, phi_j, op_j)``; ``op_j`` is the operator
    behind ``phi_j`` and is only needed to pair ``phi_j`` with the dual
    rows of a tensor.
    """

    terms: tuple

    def rank(self) -> int:
        if not self.terms:
            return 0
        M = np.array([phi.vector for _, phi, _ in self.terms])
        s = np.linalg.svd(M, compute_uv=False)
        return int(np.sum(s > 1e-10 * s[0])) if s[0] > 0 else 0

    def pairings(self, tensor: PairingTensor) -> np.ndarray:
        """Weighted pairings of each ``phi_j`` with the tensor's functionals."""
        cols = []
        n_sig = len(tensor.sigma_labels)
        for _, phi, op in self.terms:
            part = [phi.vector]
            if n_sig:
                if op is None:
                    raise ConfigError(f"term {phi.label!r} needs its operator to meet the dual rows")
                part.append(np.array([evaluate(s, op) for s in tensor.sigmas]))
            cols.append(np.concatenate(part))
        return tensor.weights[:, None] * np.array(cols).T

    def matrix(self, tensor: PairingTensor, k: int, pairings: np.ndarray | None = None) -> np.ndarray:
        P = self.pairings(tensor) if pairings is None else pairings
        fam = tensor.model.family(tensor.radii[k])
        S = np.array([fam.values(sig) for sig, _, _ in self.terms])
        return P @ S


XI = None  # stands for the tensor itself in residual curves


def residual_curve(tensor: PairingTensor, psi: FiniteRankMap | None, psi_prime: FiniteRankMap | None = XI
                   ) -> np.ndarray:
    """Spectral norm of ``psi - psi'`` (``None`` meaning the tensor) at every radius."""
    pa = psi.pairings(tensor) if psi is not None else None
    pb = psi_prime.pairings(tensor) if psi_prime is not None else None
    out = np.zeros(len(tensor.radii))
    for k in range(len(tensor.radii)):
        a = tensor.normalized(k) if psi is None else psi.matrix(tensor, k, pa)
        b = tensor.normalized(k) if psi_prime is None else psi_prime.matrix(tensor, k, pb)
        out[k] = np.linalg.norm(a - b, 2)
    return out


@dataclass(frozen=True)
class DeltaEstimate:
    value: float
    exponent: float
    residual: float


ZERO_CURVE = 1e-13


def critical_exponent(radii, curve) -> tuple[float, float]:
    curve = np.asarray(curve, dtype=float)
    if np.all(curve <= ZERO_CURVE * max(1.0, float(np.max(np.abs(curve))))) or np.all(curve == 0):
        return math.inf, 0.0
    return asymptotic_fit(radii, np.maximum(curve, 1e-300))


def delta_gamma(radii, curve, gamma: float, eps_gap: float = 0.25) -> tuple[int, float]:
    """``(delta_gamma, gamma*)``: 0 iff the curve decays faster than ``r^(gamma+eps_gap)``."""
    exponent, _ = critical_exponent(radii, curve)
    return (0 if exponent > gamma + eps_gap else 1), exponent


def delta_hat(psi: FiniteRankMap | None, psi_prime: FiniteRankMap | None,
              tensor: PairingTensor) -> DeltaEstimate:
    """``exp(-gamma*)`` with ``gamma*`` the fitted exponent of the difference curve."""
    if psi is psi_prime:
        return DeltaEstimate(0.0, math.inf, 0.0)
    curve = residual_curve(tensor, psi, psi_prime)
    exponent, resid = critical_exponent(tensor.radii, curve)
    return DeltaEstimate(math.exp(-exponent) if math.isfinite(exponent) else 0.0, exponent, resid)


# ---------------------------------------------------------------------------
# reconstruction

@dataclass(frozen=True)
class Reconstruction:
    radii: np.ndarray
    coefficients: np.ndarray
    errors: np.ndarray
    norms: np.ndarray
    error_exponent: float
    norm_exponent: float
    exact: bool


MEMBERSHIP_ANGLE = math.radians(5.0)
EXACT_TOL = 1e-10


def reconstruct(phi: DampedForm, tensor: PairingTensor, gamma: float) -> Reconstruction:
    """Family combinations ``A_r = sum_b c_b A_b`` approaching ``phi``.

    If ``phi`` is an exact combination at every radius that combination is
    used.  Otherwise the coefficients are the minimum-norm solution of
    matching ``phi`` on the extracted field space; the error is measured in
    the damped norm and the norm bound is ``sum |c_b|``.
    """
    n, space, _, _ = extract(tensor, gamma)
    if n == 0 or np.linalg.norm(phi.vector) == 0:
        raise MembershipError("nothing to reconstruct")
    angle = match_spaces(space, [phi])
    if angle > MEMBERSHIP_ANGLE:
        raise MembershipError(f"form is {math.degrees(angle):.1f} degrees away from the field space")
    m = tensor.n_rank_one
    target = phi.vector
    Q = _orthonormal(space.vectors)
    size = len(tensor.support)
    K = len(tensor.radii)
    direct = [np.linalg.lstsq(tensor.values[k, :m], target, rcond=None)[0] for k in range(K)]
    exact = all(np.linalg.norm(tensor.values[k, :m] @ c - target) <= EXACT_TOL * np.linalg.norm(target)
                for k, c in enumerate(direct))
    coefs = []
    for k in range(K):
        M = tensor.values[k, :m]
        if exact:
            c = direct[k]
        else:
            c = np.linalg.lstsq(Q.conj().T @ M, Q.conj().T @ target, rcond=1e-13)[0]
        coefs.append(c)
    coefs = np.array(coefs)
    errors = np.array([np.linalg.norm((target - tensor.values[k, :m] @ coefs[k]).reshape(size, size), 2)
                       for k in range(K)])
    norms = np.sum(np.abs(coefs), axis=1)
    if exact:
        err_exp = math.inf
    else:
        err_exp = asymptotic_fit(tensor.radii, np.maximum(errors, 1e-300))[0]
    norm_exp = -asymptotic_fit(tensor.radii, norms)[0]
    return Reconstruction(tensor.radii.copy(), coefs, errors, norms, err_exp, norm_exp, exact)


# ---------------------------------------------------------------------------
# polar-decomposition approximants

@dataclass(frozen=True)
class Lemma35Result:
    radius: float
    eps: float
    ell: float
    err_damped: float
    bound: float
    err_total: float
    operator: np.ndarray = field(repr=False)


def _sin_defect(x: np.ndarray) -> np.ndarray:
    """``sin x - x`` without cancellation for small ``x``."""
    x = np.asarray(x, dtype=float)
    out = np.sin(x) - x
    small = np.abs(x) < 0.1
    xs = x[small]
    x2 = xs * xs
    out[small] = -xs * x2 / 6.0 * (1.0 - x2 / 20.0 * (1.0 - x2 / 42.0 * (1.0 - x2 / 72.0)))
    return out


def lemma35(basis: FockBasis, radius: float, ell: float, eps: float | None = None,
            target: np.ndarray | None = None, species: int = 0) -> Lemma35Result:
    """``A = eps^-1 V sin(eps D)`` from the polar decomposition ``phi(f_r) = V D``.

    ``err_damped`` is ``||A - phi(f_r)||`` damped with ``R^(4l)``, checked
    against ``eps ||phi* phi R^(4l)||``; ``err_total`` compares ``A`` with
    the point field ``target`` (default ``phi(f_0)``) damped with
    ``R^(4l+1)``.
    """
    eps = radius ** (4 * ell + 1) if eps is None else eps
    X = smeared_field(TestFunction(radius), basis, species).to_dense()
    if not np.any(X):
        raise PointFieldError("polar decomposition of the zero operator")
    V, D = polar(X, side="right")
    w, P = np.linalg.eigh(D)
    w = np.maximum(w, 0.0)
    A = V @ (P * (np.sin(eps * w) / eps)) @ P.conj().T
    d4 = basis.damping(4 * ell)
    # A - V D from the spectral defect, free of cancellation when eps is tiny
    diff = V @ (P * (_sin_defect(eps * w) / eps)) @ P.conj().T
    err_damped = float(np.linalg.norm(d4[:, None] * diff * d4[None, :], 2))
    bound = eps * float(np.linalg.norm((X.conj().T @ X) * d4[None, :], 2))
    if target is None:
        target = smeared_field(TestFunction(0.0), basis, species).to_dense()
    d5 = basis.damping(4 * ell + 1)
    err_total = float(np.linalg.norm(d5[:, None] * (target - A) * d5[None, :], 2))
    return Lemma35Result(float(radius), float(eps), float(ell), err_damped, bound, err_total, A)


def lemma35_curve(basis: FockBasis, radii, ell: float, species: int = 0):
    """Results along a schedule and the fitted order of ``err_total``."""
    results = [lemma35(basis, r, ell, species=species) for r in radii]
    order, _ = fit_exponent(radii, [res.err_total for res in results])
    return results, order


# ---------------------------------------------------------------------------
# stability across subsequences

@dataclass(frozen=True)
class StabilityReport:
    stable: bool
    max_angle: float
    counts: tuple
    exponent_spread: float
    reasons: tuple


def stability_check(tensor: PairingTensor, gamma: float, stride: int = 2) -> StabilityReport:
    """Re-extract on every stride subsequence and compare with the full schedule.

    Unstable when a subsequence changes ``N``, hits a gap failure, moves the
    space by more than 5 degrees, or moves an exponent (up to the end of the
    first cluster above the cut) by more than ``eps_gap``.
    """
    if len(tensor.radii) < 4 * stride:
        raise ConfigError(f"stability check needs at least {4 * stride} radii")
    reasons = []
    try:
        n_full, full, _, rep_full = extract(tensor, gamma)
    except GapError as exc:
        return StabilityReport(False, math.pi / 2, (), math.inf, (f"full schedule: {exc}",))
    counts = [n_full]
    above = [size for low, _, size in rep_full.clusters if low > gamma + tensor.eps_gap]
    next_size = above[0] if above else 0
    angle = 0.0
    spread = 0.0
    for offset in range(stride):
        idx = list(range(offset, len(tensor.radii), stride))
        sub = tensor.subset(idx)
        try:
            n, space, _, rep = extract(sub, gamma)
        except GapError as exc:
            reasons.append(f"offset {offset}: {exc}")
            counts.append(-1)
            angle = math.pi / 2
            continue
        counts.append(n)
        if n != n_full:
            reasons.append(f"offset {offset}: N = {n} against {n_full}")
            angle = math.pi / 2
            continue
        if n:
            angle = max(angle, match_spaces(full, space))
        # the extracted directions plus the next cluster, which sets the gap
        m = min(n_full + next_size, rep.exponents.size, rep_full.exponents.size)
        spread = max(spread, float(np.max(np.abs(rep.exponents[:m] - rep_full.exponents[:m]))))
    if angle > MEMBERSHIP_ANGLE and not reasons:
        reasons.append(f"spaces differ by {math.degrees(angle):.2f} degrees")
    if spread > tensor.eps_gap:
        reasons.append(f"exponents move by {spread:.3f}")
    return StabilityReport(not reasons, angle, tuple(counts), spread, tuple(reasons))
