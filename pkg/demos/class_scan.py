"""Classify the free scalar, the Lutz-type model and the multi-species family.

The species scan shows N_1 growing with the number of species K, which is what
rules out a uniform bound on the field spaces for that family.
"""

from pointfield.cli import classify_config
from pointfield.models import CFG_A, ModelConfig
from pointfield.phasespace import assemble, extract

GAMMAS = [0.0, 1.0, 2.0]
MASSES = (1.0, 2.0, 3.0, 4.0)


def species(k):
    return ModelConfig(kind="multi_species", masses=MASSES[:k], l_max=0, profile_order=0, states=40)


def main():
    lutz = ModelConfig(kind="lutz", mass=0.0, l_max=0)
    for name, cfg in (("free scalar", CFG_A), ("lutz", lutz)):
        c = classify_config(cfg, GAMMAS)
        print(f"{name:<14}{c.verdict:<20}{c.evidence['counts']}")

    for k in range(1, len(MASSES) + 1):
        print(f"K={k}  N_1={extract(assemble(species(k)), 1.0)[0]}")
    c = classify_config(species(len(MASSES)), [0.0, 1.0])
    print(f"{'multi species':<14}{c.verdict:<20}trend={c.evidence['species_trend']}")


if __name__ == "__main__":
    main()
