"""Coupled-dipole design and simulation of stacked sub-wavelength emitter
arrays and lattice-built lenses.

All lengths are in units of the resonant wavelength and all rates in units
of the single-emitter radiative linewidth.
"""
from __future__ import annotations

__version__ = "0.1.0"

from .errors import ConfigError, MemoryBudgetError, NumericalError
from .greens import K0, EmitterRates, bare_polarizability, coupling_xx
from .collective2d import (
    CollectiveResponse,
    LatticeConstants,
    collective_response,
    cooperative_decay,
    cooperative_shift,
    in_plane_sum,
    single_layer_tr,
)
from .multilayer import (
    DEFAULT_D_MIN,
    EMPTY_RING,
    DesignTriple,
    PhaseTable,
    StackResponse,
    StackSpec,
    build_phase_table,
    closed_form_t,
    dispersion_k,
    evanescent_coupling,
    is_empty_triple,
    lattice_for_phase,
    nearest_row,
    phase_in_gap,
    stack_response,
    table_to_csv,
    table_transmission,
    transparency_dz,
)
from .metalens import (
    EmitterEnsemble,
    MetalensParams,
    RingSpec,
    assemble_metalens,
    build_rings,
    ideal_phase,
    load_design,
    ring_layout,
    save_design,
    wrap_phase,
)
from .solver import (
    DipoleSolution,
    DriveField,
    FieldMap,
    field_map,
    memory_estimate,
    plane_wave,
    save_field_map,
    scattered_field,
    solve_dipoles,
)
from .beams_metrics import (
    BeamSpec,
    TargetMode,
    beam_drive,
    collect_metrics,
    efficiency_eta,
    gaussian_field,
    overlap_epsilon,
    projected_r,
    projected_t,
    signal_to_background,
    t0,
    target_field,
    target_mode,
)
from .disorder import (
    METALENS_DISORDER_PREFACTOR,
    BroadeningSpec,
    DisorderScanResult,
    DisorderSpec,
    averaged_polarizability,
    config_rng,
    disorder_law_scan,
    displace,
    effective_gamma_dis,
    predicted_gamma_dis,
    sample_shifts,
)
from .optimize import (
    OptimizationResult,
    PsoConfig,
    full_solve_eta,
    optimize_lens,
    ring_transmissions,
    save_optimization_log,
    save_optimum,
    table_model_eta,
)

__all__ = [
    "__version__",
    "ConfigError",
    "MemoryBudgetError",
    "NumericalError",
    "K0",
    "EmitterRates",
    "bare_polarizability",
    "coupling_xx",
    "CollectiveResponse",
    "LatticeConstants",
    "collective_response",
    "cooperative_decay",
    "cooperative_shift",
    "in_plane_sum",
    "single_layer_tr",
    "DEFAULT_D_MIN",
    "EMPTY_RING",
    "DesignTriple",
    "PhaseTable",
    "StackResponse",
    "StackSpec",
    "build_phase_table",
    "closed_form_t",
    "dispersion_k",
    "evanescent_coupling",
    "is_empty_triple",
    "lattice_for_phase",
    "nearest_row",
    "phase_in_gap",
    "stack_response",
    "table_to_csv",
    "table_transmission",
    "transparency_dz",
    "EmitterEnsemble",
    "MetalensParams",
    "RingSpec",
    "assemble_metalens",
    "build_rings",
    "ideal_phase",
    "load_design",
    "ring_layout",
    "save_design",
    "wrap_phase",
    "DipoleSolution",
    "DriveField",
    "FieldMap",
    "field_map",
    "memory_estimate",
    "plane_wave",
    "save_field_map",
    "scattered_field",
    "solve_dipoles",
    "BeamSpec",
    "TargetMode",
    "beam_drive",
    "collect_metrics",
    "efficiency_eta",
    "gaussian_field",
    "overlap_epsilon",
    "projected_r",
    "projected_t",
    "signal_to_background",
    "t0",
    "target_field",
    "target_mode",
    "METALENS_DISORDER_PREFACTOR",
    "BroadeningSpec",
    "DisorderScanResult",
    "DisorderSpec",
    "averaged_polarizability",
    "config_rng",
    "disorder_law_scan",
    "displace",
    "effective_gamma_dis",
    "predicted_gamma_dis",
    "sample_shifts",
    "OptimizationResult",
    "PsoConfig",
    "full_solve_eta",
    "optimize_lens",
    "ring_transmissions",
    "save_optimization_log",
    "save_optimum",
    "table_model_eta",
]
