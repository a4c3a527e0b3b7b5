from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pointfield.errors import ConfigError
from pointfield.models import (CFG_A, CFG_B, KEYS, ModelConfig, build_extended_grid, build_model,
                               lutz_exponent)


def test_reference_configs():
    assert (CFG_A.n_r, CFG_A.l_max, CFG_A.n_max, CFG_A.ell) == (4, 1, 2, 4.0)
    assert (CFG_B.n_r, CFG_B.l_max, CFG_B.n_max, CFG_B.ell) == (6, 2, 3, 6.0)
    assert np.allclose(CFG_A.radii, 0.5 * 2.0 ** -np.arange(6))


def test_text_roundtrip_and_digest():
    text = CFG_B.to_text()
    again = ModelConfig.from_text(text)
    assert again == CFG_B
    assert again.digest() == CFG_B.digest()
    assert replace(CFG_B, seed=1).digest() != CFG_B.digest()
    assert len(text.splitlines()) == len(KEYS)


@settings(max_examples=40, deadline=None)
@given(st.integers(4, 10), st.floats(0.05, 2.0), st.integers(0, 2**63 - 1),
       st.lists(st.floats(0.1, 10.0), min_size=1, max_size=4))
def test_roundtrip_property(count, r0, seed, masses):
    cfg = ModelConfig(kind="multi_species", masses=tuple(masses), count=count, r0=r0, seed=seed,
                      l_max=0, profile_order=0)
    assert ModelConfig.from_text(cfg.to_text()) == cfg


def test_comments_and_partial_files():
    cfg = ModelConfig.from_text("# header\nschedule.count = 8  # longer\n\nrun.seed = 3\n")
    assert cfg.count == 8 and cfg.seed == 3 and cfg.kind == "free_scalar"


@pytest.mark.parametrize("text", [
    "bogus.key = 1",
    "grid.n_r 4",
    "grid.n_r = four",
    "schedule.count = 3",
    "schedule.q = 1.5",
    "model.kind = ising",
    "model.kind = multi_species",
    "model.kind = multi_species\nmodel.masses = 1.0, -2.0",
    "model.kind = lutz",
    "family.profile_order = 3",
    "grid.n_r = none",
])
def test_config_errors(text):
    with pytest.raises(ConfigError):
        ModelConfig.from_text(text)


def test_load_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        ModelConfig.load(tmp_path / "absent.cfg")


def test_lutz_exponent():
    assert lutz_exponent("ceil_inv", 0.5) == 2
    assert lutz_exponent("ceil_inv", 0.3) == 4
    assert lutz_exponent("ceil_inv", 1.0) == 1
    assert lutz_exponent("zero", 0.1) == 0
    assert lutz_exponent("const:3", 0.1) == 3


def test_extended_grid():
    g = build_extended_grid(8.0, 4, 3)
    assert g.n_modes == 12
    assert g.spatial_dim == 4 and g.mass == 0.0
    assert np.all(np.diff(g.mode_energies.reshape(4, 3)[:, 0]) > 0)


def test_free_scalar_model():
    m = build_model(CFG_A)
    assert m.basis.dim == 153 and len(m.support) == 153
    assert len(m.profiles) == 4
    fam = m.family(0.25)
    assert fam is m.family(0.25)
    assert len(m.families()) == CFG_A.count
    assert len(m.sigma_mus) > 0 and all(mu.order >= 1 for mu in m.sigma_mus)


def test_multi_species_model():
    cfg = ModelConfig(kind="multi_species", masses=(1.0, 2.0), l_max=0, profile_order=0, states=40)
    m = build_model(cfg)
    assert len(m.grids) == 2
    assert m.profile_species == (0, 1)
    fam = m.family(0.25)
    # parts of different species live in disjoint mode blocks
    n = m.grids[0].n_modes
    single = [b for b, spec in enumerate(fam.specs) if len(spec) == 1 and spec[0][0][0] == 0]
    assert np.allclose(fam.coords[single][:, n:], 0)


def test_lutz_family_suppressed_with_radius():
    m = build_model(ModelConfig(kind="lutz", mass=0.0, l_max=0))
    n2 = [m.family(r).norm2.max() for r in m.radii]
    assert n2[-1] < n2[0]
