"""kcmlab: kinetically constrained lattice models in quenched random
environments — bootstrap percolation, exact continuous-time simulation, and
finite-state spectral/hitting-time analysis."""

from .environment import (
    DIFFICULT,
    EASY,
    P_ORIENTED,
    P_SITE,
    EnvParams,
    Environment,
    ModelKind,
    estimate_good_probability,
    is_excellent_square,
    is_good_square,
    load_environment,
    min_good_L,
    regeneration_matches,
    sample_environment,
    save_environment,
)

__version__ = "0.1.0"

__all__ = [
    "DIFFICULT",
    "EASY",
    "P_ORIENTED",
    "P_SITE",
    "EnvParams",
    "Environment",
    "ModelKind",
    "estimate_good_probability",
    "is_excellent_square",
    "is_good_square",
    "load_environment",
    "min_good_L",
    "regeneration_matches",
    "sample_environment",
    "save_environment",
]
