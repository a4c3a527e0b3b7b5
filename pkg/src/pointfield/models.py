"""Model configurations and builders: free scalar, Lutz model, several species.

A :class:`Model` bundles the grids, the Fock basis, the state support of
the rank-one functionals and a recipe for the local Weyl family at each
radius.  Config files are flat ``key = value`` text.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .errors import ConfigError, GridMismatchError
from .fock import FockBasis, enumerate_mu
from .functionals import LocalFamily, family_from_parts, make_family, member_specs
from .spmodel import (MomentumGrid, SPVector, build_grid, expansion_items, multi_indices,
                      radial_transform, sphere_area)

KINDS = ("free_scalar", "lutz", "multi_species")

# config-file key -> ModelConfig field
KEYS = {
    "model.kind": "kind",
    "model.masses": "masses",
    "grid.s": "s",
    "grid.mass": "mass",
    "grid.p_max": "p_max",
    "grid.n_r": "n_r",
    "grid.l_max": "l_max",
    "grid.ratio": "ratio",
    "fock.n_max": "n_max",
    "fock.e_cut": "e_cut",
    "fock.states": "states",
    "schedule.r0": "r0",
    "schedule.q": "q",
    "schedule.count": "count",
    "family.profile_order": "profile_order",
    "extract.ell": "ell",
    "extract.eps_gap": "eps_gap",
    "extract.gamma_max": "gamma_max",
    "extract.sigma_theta": "sigma_theta",
    "lutz.n_schedule": "n_schedule",
    "lutz.extra_nodes": "extra_nodes",
    "run.seed": "seed",
}


@dataclass(frozen=True)
class ModelConfig:
    kind: str = "free_scalar"
    s: int = 3
    mass: float = 1.0
    masses: tuple = ()
    p_max: float = 8.0
    n_r: int = 4
    l_max: int = 1
    ratio: float = 2.0
    n_max: int = 2
    e_cut: float | None = None
    states: int = 40
    r0: float = 0.5
    q: float = 0.5
    count: int = 6
    profile_order: int = 1
    ell: float = 4.0
    eps_gap: float = 0.25
    gamma_max: float = 2.0
    sigma_theta: float | None = None
    n_schedule: str = "ceil_inv"
    extra_nodes: int = 3
    seed: int = 0

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.kind not in KINDS:
            raise ConfigError(f"unknown model kind {self.kind!r}")
        if self.count < 4:
            raise ConfigError("the radius schedule needs at least 4 points")
        if not (0 < self.q < 1) or self.r0 <= 0:
            raise ConfigError("schedule needs r0 > 0 and 0 < q < 1")
        if self.n_max < 1 or self.states < 1:
            raise ConfigError("need n_max >= 1 and states >= 1")
        if self.ell < 0 or self.eps_gap <= 0:
            raise ConfigError("need ell >= 0 and eps_gap > 0")
        if self.kind == "multi_species" and not self.masses:
            raise ConfigError("multi_species needs model.masses")
        if self.kind == "multi_species" and any(m <= 0 for m in self.masses):
            raise ConfigError("species masses must be positive")
        if self.kind == "lutz":
            if self.mass != 0:
                raise ConfigError("the Lutz model is built on the massless field")
            if self.n_schedule not in ("ceil_inv", "zero") and not self.n_schedule.startswith("const:"):
                raise ConfigError(f"unknown Lutz schedule {self.n_schedule!r}")
            if self.extra_nodes < 1:
                raise ConfigError("need at least one extra-dimension node")
        if self.profile_order not in (0, 1, 2):
            raise ConfigError("profile order must be 0, 1 or 2")

    # -- text form ----------------------------------------------------------
    def to_text(self) -> str:
        inverse = {v: k for k, v in KEYS.items()}
        lines = []
        for f in fields(self):
            value = getattr(self, f.name)
            if isinstance(value, tuple):
                text = ", ".join(repr(float(x)) for x in value)
            elif value is None:
                text = "none"
            elif isinstance(value, float):
                text = repr(value)
            else:
                text = str(value)
            lines.append(f"{inverse[f.name]} = {text}")
        return "\n".join(lines) + "\n"

    def digest(self) -> str:
        return hashlib.sha256(self.to_text().encode()).hexdigest()

    @classmethod
    def from_text(cls, text: str) -> "ModelConfig":
        kwargs = {}
        types = {f.name: f.type for f in fields(cls)}
        for n, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"line {n}: expected 'key = value'")
            key, value = (x.strip() for x in line.split("=", 1))
            if key not in KEYS:
                raise ConfigError(f"line {n}: unknown key {key!r}")
            name = KEYS[key]
            kwargs[name] = _parse_value(name, types[name], value, n)
        return cls(**kwargs)

    @classmethod
    def load(cls, path) -> "ModelConfig":
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        return cls.from_text(text)

    @property
    def radii(self) -> np.ndarray:
        return self.r0 * self.q ** np.arange(self.count)


def _parse_value(name: str, typ: str, value: str, line: int):
    try:
        if name == "masses":
            return tuple(float(x) for x in value.split(",") if x.strip())
        if value.lower() == "none":
            if "None" in typ:
                return None
            raise ValueError("none not allowed")
        if typ.startswith("int"):
            return int(value)
        if typ.startswith("float"):
            return float(value)
        return value
    except ValueError:
        raise ConfigError(f"line {line}: bad value {value!r} for {name}") from None


CFG_A = ModelConfig(kind="free_scalar", mass=1.0, p_max=8.0, n_r=4, l_max=1, n_max=2, ell=4.0,
                    states=10_000, gamma_max=2.0, profile_order=1)
CFG_B = ModelConfig(kind="free_scalar", mass=1.0, p_max=8.0, n_r=6, l_max=2, n_max=3, ell=6.0,
                    states=40, gamma_max=3.0, profile_order=2)


# ---------------------------------------------------------------------------
# extended grid for the Lutz model

@dataclass(frozen=True, eq=False)
class ExtendedGrid:
    """Radial grid (l = 0) times an extra momentum direction, even in ``p_e``.

    Extra nodes are midpoints of ``[0, 1]``; the weight ``2/n`` counts both
    signs of ``p_e``.
    """

    base: MomentumGrid
    extra_nodes: np.ndarray
    extra_weights: np.ndarray

    @property
    def spatial_dim(self) -> int:
        return self.base.spatial_dim + 1

    @property
    def mass(self) -> float:
        return self.base.mass

    @property
    def n_modes(self) -> int:
        return self.base.n_modes * len(self.extra_nodes)

    @property
    def mode_weights(self) -> np.ndarray:
        return np.outer(self.base.mode_weights, self.extra_weights).ravel()

    @property
    def mode_energies(self) -> np.ndarray:
        p = self.base.mode_momenta[:, None]
        return np.sqrt(p**2 + self.extra_nodes[None, :] ** 2 + self.base.mass**2).ravel()

    @property
    def mode_extra(self) -> np.ndarray:
        return np.tile(self.extra_nodes, self.base.n_modes)

    @property
    def key(self) -> tuple:
        return (self.base.key, len(self.extra_nodes))

    def digest(self) -> str:
        return hashlib.sha256(repr(self.key).encode()).hexdigest()[:16]

    def same_as(self, other) -> bool:
        return self is other or getattr(other, "key", None) == self.key

    def check(self, other) -> None:
        if not self.same_as(other):
            raise GridMismatchError("vectors live on different grids")

    def vector(self, amplitudes) -> SPVector:
        return SPVector(self, np.asarray(amplitudes, dtype=complex))

    def zero(self) -> SPVector:
        return self.vector(np.zeros(self.n_modes))


def build_extended_grid(p_max: float, n_r: int, n_extra: int, ratio: float = 2.0) -> ExtendedGrid:
    base = build_grid(3, 0.0, p_max, n_r, 0, ratio)
    nodes = (np.arange(n_extra) + 0.5) / n_extra
    return ExtendedGrid(base, nodes, np.full(n_extra, 2.0 / n_extra))


def lutz_exponent(schedule: str, r: float) -> int:
    if schedule == "ceil_inv":
        return int(math.ceil(1.0 / r - 1e-12))
    if schedule == "zero":
        return 0
    return int(schedule.split(":", 1)[1])


# ---------------------------------------------------------------------------
# models

@dataclass(eq=False)
class Model:
    """Everything needed to assemble a pairing tensor for one configuration."""

    config: ModelConfig
    grids: tuple
    basis: FockBasis
    support: np.ndarray
    profiles: tuple
    profile_species: tuple
    specs: tuple
    sigma_mus: tuple = ()
    _families: dict = field(default_factory=dict, repr=False)

    @property
    def grid(self):
        return self.grids[0]

    @property
    def radii(self) -> np.ndarray:
        return self.config.radii

    def family(self, r: float) -> LocalFamily:
        key = float(r)
        if key not in self._families:
            if self.config.kind == "lutz":
                self._families[key] = _lutz_family(self, key)
            else:
                self._families[key] = make_family(self.basis, key, list(self.profiles), self.specs,
                                                  list(self.profile_species))
        return self._families[key]

    def families(self) -> list[LocalFamily]:
        return [self.family(r) for r in self.radii]


def _profiles(s: int, order: int) -> list[tuple]:
    return [tuple(k) for n in range(order + 1) for k in multi_indices(s, n)]


def _sigma_mus(cfg: ModelConfig, grid: MomentumGrid) -> tuple:
    top = cfg.gamma_max + 1 if cfg.sigma_theta is None else cfg.sigma_theta
    items = set(expansion_items(grid))
    out = []
    for mu in enumerate_mu(top, cfg.s):
        if mu.order == 0 or mu.order > cfg.n_max:
            continue
        if all(it in items for it, _ in mu.items()):
            out.append(mu)
    return tuple(out)


def free_scalar(cfg: ModelConfig) -> Model:
    if cfg.kind != "free_scalar":
        cfg = replace(cfg, kind="free_scalar")
    grid = build_grid(cfg.s, cfg.mass, cfg.p_max, cfg.n_r, cfg.l_max, cfg.ratio)
    basis = FockBasis(grid, cfg.n_max, cfg.e_cut)
    order = min(cfg.profile_order, cfg.l_max) if cfg.s == 3 else 0
    profiles = tuple(_profiles(cfg.s, order))
    return Model(cfg, (grid,), basis, basis.lowest(cfg.states), profiles,
                 tuple([0] * len(profiles)), member_specs(len(profiles)),
                 _sigma_mus(cfg, grid) if cfg.s == 3 else ())


def multi_species(cfg: ModelConfig) -> Model:
    if cfg.kind != "multi_species":
        raise ConfigError("multi_species needs kind = multi_species")
    grids = tuple(build_grid(cfg.s, m, cfg.p_max, cfg.n_r, cfg.l_max, cfg.ratio) for m in cfg.masses)
    basis = FockBasis(grids, cfg.n_max, cfg.e_cut)
    order = min(cfg.profile_order, cfg.l_max) if cfg.s == 3 else 0
    base = _profiles(cfg.s, order)
    profiles = tuple(b for _ in grids for b in base)
    species = tuple(k for k in range(len(grids)) for _ in base)
    return Model(cfg, grids, basis, basis.lowest(cfg.states), profiles, species,
                 member_specs(len(profiles)))


def lutz(cfg: ModelConfig) -> Model:
    if cfg.kind != "lutz":
        raise ConfigError("lutz needs kind = lutz")
    grid = build_extended_grid(cfg.p_max, cfg.n_r, cfg.extra_nodes, cfg.ratio)
    basis = FockBasis(grid, cfg.n_max, cfg.e_cut)
    profiles = (tuple([0] * 4),)
    return Model(cfg, (grid,), basis, basis.lowest(cfg.states), profiles, (0,), member_specs(1))


def _lutz_family(model: Model, r: float) -> LocalFamily:
    """Radial bump in the extended space, multiplied by ``p_e^(2 n(r))``.

    Parts are normalized before the factor is applied; the Weyl norm is then
    the grid norm of the modified vector.
    """
    grid = model.grid
    n = lutz_exponent(model.config.n_schedule, r)
    k = np.sqrt(grid.base.mode_momenta[:, None] ** 2 + grid.extra_nodes[None, :] ** 2).ravel()
    ghat = r**4 * radial_transform(4, 0, 0, r * k) * math.sqrt(sphere_area(3))
    omega = grid.mode_energies
    factor = grid.mode_extra ** (2 * n)
    parts = []
    for sign in (+1, -1):
        v = SPVector(grid, omega ** (-0.5 * sign) * ghat)
        v = v * (1.0 / v.norm())
        parts.append(model.basis.coords(SPVector(grid, factor * v.amplitudes)))
    return family_from_parts(model.basis, r, parts[0][None], parts[1][None], None, None,
                             model.specs)


def build_model(cfg: ModelConfig) -> Model:
    if cfg.kind == "free_scalar":
        return free_scalar(cfg)
    if cfg.kind == "lutz":
        return lutz(cfg)
    return multi_species(cfg)
