"""Numerical weak KAM theory for the Newtonian N-body problem."""

from .action_path import (
    MinimizerResult,
    PhiOptions,
    PhiSolverError,
    Trajectory,
    action,
    phi,
)
from .cache import PhiCache
from .central_config import (
    CentralConfigError,
    MinimalConfiguration,
    centrality_residual,
    minimize_on_sphere,
)
from .homothetic import HomotheticOrbit, orbit_action, orbit_at, two_body_orbit
from .mass_geometry import (
    CollisionError,
    Configuration,
    GroupGenerators,
    Masses,
    angular_momentum,
    momentum_map,
    potential,
    saari_decompose,
)
from .weak_kam import (
    WeakKamSpec,
    busemann,
    busemann_rotated,
    calibrating_curve,
    domination_check,
    eikonal_residual,
    gradient_u,
    invariant_busemann,
)

__version__ = "0.1.0"

__all__ = [
    "CentralConfigError",
    "CollisionError",
    "Configuration",
    "GroupGenerators",
    "HomotheticOrbit",
    "Masses",
    "MinimalConfiguration",
    "MinimizerResult",
    "PhiCache",
    "PhiOptions",
    "PhiSolverError",
    "Trajectory",
    "WeakKamSpec",
    "action",
    "angular_momentum",
    "busemann",
    "busemann_rotated",
    "calibrating_curve",
    "centrality_residual",
    "domination_check",
    "eikonal_residual",
    "gradient_u",
    "invariant_busemann",
    "minimize_on_sphere",
    "momentum_map",
    "orbit_action",
    "orbit_at",
    "phi",
    "potential",
    "saari_decompose",
    "two_body_orbit",
]
