"""Hybrid atom + cavity + moving-mirror simulator.

Dense truncated-Fock-space models of a two-level emitter coupled to a
single cavity mode whose end mirror is a quantum harmonic oscillator:
Hamiltonian builders, unitary and Lindblad propagation, mechanical
Wigner functions, and the analysis/CLI layer that turns runs into CSV
tables.
"""

from .fock import (
    ATOM,
    CAV,
    MEC,
    DensityOperator,
    Ket,
    OperatorMatrix,
    Space,
    TruncationError,
    TruncationScheme,
    TruncationWarning,
    basis_ket,
    coherent_state,
    displaced_thermal,
    displacement_operator,
    embed,
    expectation,
    make_fock,
    partial_trace,
)
from .model import (
    SystemParams,
    build_h_beta,
    build_h_om,
    build_h_rwa,
    build_h_total,
    f_factor,
    optomech_trajectory,
    polaron_state,
)
from .dynamics import (
    EvolutionRecord,
    PropagationError,
    TimeGrid,
    evolve_lindblad,
    evolve_unitary,
    observables,
    reduced_mechanics,
)
from .wigner import (
    PhaseSpaceGrid,
    WignerField,
    negativity_volume,
    snapshot_series,
    wigner,
)
from .analysis import (
    RevivalReport,
    SweepSpec,
    measure_f,
    perturbative_pe,
    perturbative_state,
    revival_report,
    run_sweep,
    rwa_reduced_states,
)

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"
