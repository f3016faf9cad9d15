"""Single-spin Bloch-vector evolution in the rotating frame.

States are plain numpy arrays of shape ``(3,)`` (or ``(..., 3)`` for
batches; every operation broadcasts over leading axes).  All evolutions
are closed-form rotations and exponential relaxation factors -- there is
no ODE stepping and therefore no integrator tolerance to tune.

Conventions (fixed once, used everywhere in this package):

* Rotations are right-handed.  A pulse of phase ``phi`` rotates the
  Bloch vector about the equatorial axis ``(cos phi, sin phi, 0)``.
* Free precession at detuning ``delta`` (Hz) rotates about ``+z`` by
  ``+2*pi*delta*t``.
* A "-pi" pulse is a pi pulse with its phase advanced by pi (same axis,
  opposite rotation sense).
* Relaxation during pulses is neglected: pulse durations are
  microseconds while T1, T2 are seconds in the regime this package
  targets.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "RelaxationParams",
    "NO_RELAXATION",
    "PulseEvent",
    "apply_hard_pulse",
    "apply_finite_pulse",
    "apply_pulse",
    "evolve_free",
    "evolve_noisy",
    "rotate",
]


@dataclass(frozen=True)
class RelaxationParams:
    """Longitudinal/transverse relaxation times in seconds.

    ``math.inf`` disables the corresponding channel.  ``z_equilibrium``
    is the value the z component relaxes toward; the default 0 reflects
    negligible thermal polarization at kelvin temperatures and MHz
    transition frequencies (an optically prepared pure state is modeled
    by the initial condition instead).
    """

    t1: float = math.inf
    t2: float = math.inf
    z_equilibrium: float = 0.0

    def __post_init__(self) -> None:
        if not self.t1 > 0:
            raise ValueError(f"t1 must be positive, got {self.t1}")
        if not self.t2 > 0:
            raise ValueError(f"t2 must be positive, got {self.t2}")
        if math.isfinite(self.t1) and math.isfinite(self.t2):
            if self.t2 > 2.0 * self.t1 + 1e-12:
                raise ValueError(
                    f"t2 ({self.t2}) must not exceed 2*t1 ({2 * self.t1})"
                )
        if not -1.0 <= self.z_equilibrium <= 1.0:
            raise ValueError(
                f"z_equilibrium must lie in [-1, 1], got {self.z_equilibrium}"
            )


NO_RELAXATION = RelaxationParams()


@dataclass(frozen=True)
class PulseEvent:
    """One control pulse: ideal ("hard", zero duration) or finite.

    Hard mode sets ``area`` (radians); finite mode sets ``rabi`` (Hz)
    and ``duration`` (s).  ``phase`` (radians) selects the equatorial
    rotation axis in both modes.
    """

    phase: float = 0.0
    area: float | None = None
    rabi: float | None = None
    duration: float | None = None

    def __post_init__(self) -> None:
        hard = self.area is not None
        finite = self.rabi is not None or self.duration is not None
        if hard and finite:
            raise ValueError("give either area (hard) or rabi+duration (finite), not both")
        if hard:
            if not self.area > 0:
                raise ValueError(f"pulse area must be positive, got {self.area}")
        else:
            if self.rabi is None or self.duration is None:
                raise ValueError("finite pulse needs both rabi and duration")
            if not self.rabi > 0:
                raise ValueError(f"rabi must be positive, got {self.rabi}")
            if not self.duration > 0:
                raise ValueError(f"pulse duration must be positive, got {self.duration}")

    @property
    def mode(self) -> str:
        return "hard" if self.area is not None else "finite"

    @property
    def elapsed(self) -> float:
        """Wall-clock length of the pulse in seconds (0 for hard)."""
        return 0.0 if self.area is not None else float(self.duration)

    def nominal_area(self) -> float:
        """Rotation angle on resonance, radians."""
        if self.area is not None:
            return float(self.area)
        return 2.0 * math.pi * self.rabi * self.duration


def rotate(state: np.ndarray, axis: np.ndarray, angle) -> np.ndarray:
    """Rotate Bloch vector(s) about unit axis/axes by angle(s), right-handed.

    Rodrigues form: ``v' = v cosA + (k x v) sinA + k (k.v)(1 - cosA)``.
    ``state`` and ``axis`` broadcast as ``(..., 3)``; ``angle`` as ``(...)``.
    """
    state = np.asarray(state, dtype=float)
    axis = np.asarray(axis, dtype=float)
    angle = np.asarray(angle, dtype=float)
    c = np.cos(angle)[..., None]
    s = np.sin(angle)[..., None]
    kxv = np.cross(axis, state)
    kdv = np.sum(axis * state, axis=-1, keepdims=True)
    return state * c + kxv * s + axis * kdv * (1.0 - c)


def apply_hard_pulse(state: np.ndarray, area: float, phase: float = 0.0) -> np.ndarray:
    """Instantaneous rotation by ``area`` about ``(cos phase, sin phase, 0)``.

    Norm-preserving; detuning plays no role because the pulse takes zero
    time.  ``area=pi, phase=0`` maps (0,0,1) to (0,0,-1); following it
    with ``area=pi, phase=pi`` undoes it exactly (the pi,-pi pair is the
    identity on the whole sphere).
    """
    axis = np.array([math.cos(phase), math.sin(phase), 0.0])
    return rotate(state, axis, area)


def apply_finite_pulse(
    state: np.ndarray,
    rabi: float,
    duration: float,
    phase: float = 0.0,
    detuning=0.0,
) -> np.ndarray:
    """Square pulse of given Rabi frequency (Hz) and duration (s).

    Off resonance the rotation axis tilts out of the equator: the exact
    rotation is by ``2*pi*sqrt(rabi^2 + detuning^2)*duration`` about the
    unit axis proportional to ``(rabi cos phase, rabi sin phase,
    detuning)``.  Relaxation during the pulse is neglected.  ``detuning``
    may be a scalar or an array broadcasting against the batch shape of
    ``state``.

    Parameters
    ----------
    state : ndarray, shape (..., 3)
    rabi : float
        Rabi frequency in Hz, > 0.
    duration : float
        Pulse length in seconds, >= 0.
    phase : float
        Drive phase in radians.
    detuning : float or ndarray
        Rotating-frame detuning in Hz.

    Returns
    -------
    ndarray, shape (..., 3)
    """
    if not rabi > 0:
        raise ValueError(f"rabi must be positive, got {rabi}")
    if duration < 0:
        raise ValueError(f"duration must be non-negative, got {duration}")
    detuning = np.asarray(detuning, dtype=float)
    omega_eff = np.hypot(rabi, detuning)  # generalized Rabi frequency, Hz
    angle = 2.0 * math.pi * omega_eff * duration
    ax = np.broadcast_to(detuning, detuning.shape).astype(float)
    axis = np.stack(
        [
            np.broadcast_to(rabi * math.cos(phase), ax.shape),
            np.broadcast_to(rabi * math.sin(phase), ax.shape),
            ax,
        ],
        axis=-1,
    ) / omega_eff[..., None]
    return rotate(state, axis, angle)


def apply_pulse(state: np.ndarray, pulse: PulseEvent, detuning=0.0) -> np.ndarray:
    """Apply a :class:`PulseEvent`, dispatching on its mode."""
    if pulse.mode == "hard":
        return apply_hard_pulse(state, pulse.area, pulse.phase)
    return apply_finite_pulse(state, pulse.rabi, pulse.duration, pulse.phase, detuning)


def evolve_free(
    state: np.ndarray,
    duration: float,
    detuning=0.0,
    relax: RelaxationParams = NO_RELAXATION,
    t2_override=None,
) -> np.ndarray:
    """Free precession with relaxation, in closed form.

    Transverse components precess about +z by ``2*pi*detuning*duration``
    and shrink by ``exp(-duration/t2)``; z relaxes toward
    ``z_equilibrium`` with time constant t1.

    ``detuning`` may be per-member (array); ``t2_override`` optionally
    replaces ``relax.t2`` with a per-member array to model a coherence
    time that varies across an ensemble.
    """
    if duration < 0:
        raise ValueError(f"duration must be non-negative, got {duration}")
    state = np.asarray(state, dtype=float)
    detuning = np.asarray(detuning, dtype=float)
    theta = 2.0 * math.pi * detuning * duration
    c = np.cos(theta)
    s = np.sin(theta)
    t2 = relax.t2 if t2_override is None else np.asarray(t2_override, dtype=float)
    e2 = np.exp(-duration / t2)
    e1 = math.exp(-duration / relax.t1)
    out = np.empty(np.broadcast_shapes(state.shape, detuning.shape + (1,)), dtype=float)
    x, y, z = state[..., 0], state[..., 1], state[..., 2]
    out[..., 0] = (x * c - y * s) * e2
    out[..., 1] = (x * s + y * c) * e2
    out[..., 2] = relax.z_equilibrium + (z - relax.z_equilibrium) * e1
    return out


def evolve_noisy(
    state: np.ndarray,
    samples,
    dt: float,
    relax: RelaxationParams = NO_RELAXATION,
) -> np.ndarray:
    """Piecewise-constant noisy free evolution.

    ``samples`` is a detuning trajectory in Hz, shape ``(n_steps,)`` or
    ``(..., n_steps)`` with one row per batched state; each value is held
    for ``dt`` seconds.  Equivalent to chaining :func:`evolve_free` over
    the steps, so subdividing a constant trajectory changes nothing.
    """
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    samples = np.asarray(samples, dtype=float)
    if samples.size == 0:
        raise ValueError("trajectory must be non-empty")
    if not np.all(np.isfinite(samples)):
        raise ValueError("trajectory contains non-finite samples")
    out = np.asarray(state, dtype=float)
    for k in range(samples.shape[-1]):
        out = evolve_free(out, dt, samples[..., k], relax)
    return out
