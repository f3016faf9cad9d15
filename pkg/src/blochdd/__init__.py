"""Bloch-equation toolkit for dynamically decoupled spin ensembles.

Subpackage map:

* :mod:`blochdd.bloch` -- single-spin rotations, free evolution, noisy
  evolution (closed form, no integrators).
* :mod:`blochdd.sequences` -- pulse-program objects, text language,
  canonical sequence builders, decoupling-regime validator.
* :mod:`blochdd.ensemble` -- inhomogeneous ensembles, stochastic baths,
  deterministic seeded program runs, analytic dephasing expressions.
* :mod:`blochdd.tomography` -- Pauli-transfer-matrix process tomography
  of simulated channels.
* :mod:`blochdd.hamiltonian` -- I=5/2 quadrupole+Zeeman level structure,
  field gradients, critical-point (zero-gradient) search.
* :mod:`blochdd.analysis` -- decay fitting, local rate profiles, T2
  versus pulse-spacing sweeps.
* :mod:`blochdd.cli` -- the ``blochdd`` command.
"""

from .bloch import (
    NO_RELAXATION,
    PulseEvent,
    RelaxationParams,
    apply_finite_pulse,
    apply_hard_pulse,
    evolve_free,
    evolve_noisy,
)
from .sequences import (
    Acquire,
    BangBangParams,
    BathCutoff,
    Pulse,
    PulseProgram,
    PulseSpec,
    Repeat,
    Wait,
    build_bangbang,
    build_hahn_echo,
    build_inversion_recovery,
    parse,
    serialize,
    validate_bangbang,
)
from .ensemble import (
    EnsembleSpec,
    NoiseModel,
    SimulationResult,
    calibrate_ou_sigma,
    echo_amplitude,
    generate_ou_trajectory,
    ou_fid_coherence,
    ou_hahn_coherence,
    run_program,
    sample_detunings,
)
from .tomography import (
    ProcessResult,
    process_fidelity,
    run_process_tomography,
    tomography_series,
)
from .hamiltonian import (
    CriticalPointResult,
    SpinSystem,
    eigensystem,
    field_gradient,
    find_critical_point,
    transition_frequency,
)
from .analysis import (
    DecayCurve,
    DecayFit,
    RateProfile,
    fit_decay,
    fit_inversion_recovery,
    rate_profile,
    sweep_t2_vs_tauc,
)

__version__ = "0.1.0"
