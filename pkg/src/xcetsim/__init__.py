"""Hierarchical equations of motion for exciton/electron transfer networks."""

__version__ = "0.1.0"

from .bath import (
    BathError,
    BathSpec,
    ExponentialSeries,
    ExponentialTerm,
    correlation_reference,
    expand,
    expand_brownian,
    expand_drude,
    pade_poles,
    spectral_density,
)
from .hierarchy import HierarchyIndexSet, TruncationPolicy, enumerate_indices
from .model import (
    CouplingOperator,
    DiagonalCoupling,
    OffDiagonalCoupling,
    SystemHamiltonian,
    SystemSpec,
    build_coupling_operators,
    build_hamiltonian,
)
from .propagator import (
    ADOState,
    HeomOperator,
    PropagationError,
    Trajectory,
    equilibration_time,
    heom_rhs,
    propagate,
    steady_diagnostics,
    write_trajectory_csv,
)
from .scenarios import (
    ConfigError,
    ScenarioConfig,
    assemble_operator,
    builtin_scenario,
    initial_state,
    load_config,
    site_labels,
)
