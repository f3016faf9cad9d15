"""Ensemble simulation: inhomogeneous lines, stochastic baths, program runs.

An ensemble member is a Bloch vector with a static detuning drawn from
the inhomogeneous line, optionally riding on its own stochastic
detuning trajectory (Ornstein-Uhlenbeck or random telegraph).  Members
evolve independently; observables are weighted means.

Determinism contract: a run is a pure function of (program, ensemble
spec, noise model, relaxation, master seed).  Member ``i`` draws its
randomness from a stream derived only from ``(master_seed, i)``, chunk
partial sums combine in fixed chunk order, and chunk size never depends
on the worker count -- so results are bit-identical for any number of
threads.
"""

from __future__ import annotations

import json
import math
import os
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import roots_hermite

from .bloch import NO_RELAXATION, RelaxationParams, rotate
from .sequences import Acquire, Pulse, PulseProgram, Wait

__all__ = [
    "EnsembleSpec",
    "NoiseModel",
    "NO_NOISE",
    "AcquireSample",
    "SimulationResult",
    "SimulationBudgetError",
    "sample_detunings",
    "generate_ou_trajectory",
    "run_program",
    "echo_amplitude",
    "acquire_series",
    "in_phase_amplitude",
    "ou_fid_coherence",
    "ou_hahn_coherence",
    "calibrate_ou_sigma",
    "result_to_csv",
    "result_to_json",
    "write_text_atomic",
]

GAUSS_FWHM_TO_SIGMA = 1.0 / (2.0 * math.sqrt(2.0 * math.log(2.0)))  # 1/2.3548


@dataclass(frozen=True)
class EnsembleSpec:
    """Static detuning distribution of the ensemble.

    ``distribution``: ``gaussian`` or ``lorentzian`` (both parameterized
    by FWHM in Hz) or ``explicit`` (detunings given directly).
    ``sampling``: ``monte_carlo`` (seeded draws, uniform weights) or
    ``gauss_quadrature`` (Gauss-Hermite nodes and weights; gaussian
    only -- exact ensemble means at polynomial cost).
    """

    size: int
    distribution: str = "gaussian"
    fwhm: float | None = None
    detunings: tuple | None = None
    sampling: str = "monte_carlo"
    seed: int = 0

    def __post_init__(self) -> None:
        if self.distribution not in ("gaussian", "lorentzian", "explicit"):
            raise ValueError(f"unknown distribution {self.distribution!r}")
        if self.sampling not in ("monte_carlo", "gauss_quadrature"):
            raise ValueError(f"unknown sampling mode {self.sampling!r}")
        if self.distribution == "explicit":
            if self.detunings is None:
                raise ValueError("explicit distribution needs detunings")
            object.__setattr__(self, "detunings", tuple(float(d) for d in self.detunings))
            if self.size != len(self.detunings):
                raise ValueError("size must equal len(detunings) for explicit distribution")
        else:
            if self.fwhm is None or not self.fwhm > 0:
                raise ValueError(f"fwhm must be positive, got {self.fwhm}")
        if self.size < 1:
            raise ValueError(f"size must be >= 1, got {self.size}")
        if self.sampling == "gauss_quadrature" and self.distribution != "gaussian":
            raise ValueError("gauss_quadrature sampling requires a gaussian distribution")


def sample_detunings(spec: EnsembleSpec) -> tuple[np.ndarray, np.ndarray]:
    """Return (detunings_hz, weights), each of shape ``(size,)``.

    Weights are uniform ``1/size`` for monte_carlo/explicit; for
    gauss_quadrature they are the Gauss-Hermite weights (summing to 1)
    and the detunings are the scaled nodes.  Deterministic for a given
    spec (the Monte-Carlo seed lives in the spec).
    """
    n = spec.size
    if spec.distribution == "explicit":
        return np.asarray(spec.detunings, dtype=float), np.full(n, 1.0 / n)
    if spec.sampling == "gauss_quadrature":
        # numpy's hermgauss overflows above ~400 nodes; scipy is stable.
        nodes, weights = roots_hermite(n)
        sigma = spec.fwhm * GAUSS_FWHM_TO_SIGMA
        return math.sqrt(2.0) * sigma * nodes, weights / math.sqrt(math.pi)
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(spec.seed)))
    if spec.distribution == "gaussian":
        sigma = spec.fwhm * GAUSS_FWHM_TO_SIGMA
        det = rng.normal(0.0, sigma, n)
    else:  # lorentzian: FWHM = 2 * scale
        det = rng.standard_cauchy(n) * (spec.fwhm / 2.0)
    return det, np.full(n, 1.0 / n)


@dataclass(frozen=True)
class NoiseModel:
    """Stochastic detuning (z-axis) fluctuations seen by each member.

    ``ornstein_uhlenbeck``: stationary Gaussian noise with rms ``sigma``
    (Hz) and correlation time ``tau_b`` (s); the effective bath cutoff
    is ``omega_c ~ 1/tau_b``.  ``telegraph``: jumps between
    ``+-amplitude`` (Hz) at Poisson rate ``flip_rate`` (Hz).  ``dt`` is
    the trajectory resolution; it defaults to a hundredth of the
    correlation time and must resolve it (``dt <= tau_b/10``).
    """

    kind: str = "none"
    sigma: float = 0.0
    tau_b: float | None = None
    amplitude: float = 0.0
    flip_rate: float | None = None
    dt: float | None = None

    def __post_init__(self) -> None:
        if self.kind not in ("none", "ornstein_uhlenbeck", "telegraph"):
            raise ValueError(f"unknown noise kind {self.kind!r}")
        if self.kind == "none":
            return
        if self.kind == "ornstein_uhlenbeck":
            if self.sigma < 0:
                raise ValueError(f"sigma must be >= 0, got {self.sigma}")
            if self.tau_b is None or not self.tau_b > 0:
                raise ValueError(f"tau_b must be positive, got {self.tau_b}")
            corr = self.tau_b
        else:
            if self.amplitude < 0:
                raise ValueError(f"amplitude must be >= 0, got {self.amplitude}")
            if self.flip_rate is None or not self.flip_rate > 0:
                raise ValueError(f"flip_rate must be positive, got {self.flip_rate}")
            corr = 1.0 / (2.0 * self.flip_rate)
        if self.dt is None:
            object.__setattr__(self, "dt", corr / 100.0)
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if self.dt > corr / 10.0 + 1e-15:
            raise ValueError(
                f"dt ({self.dt}) must resolve the bath: require dt <= {corr / 10.0}"
            )


NO_NOISE = NoiseModel()


def generate_ou_trajectory(noise: NoiseModel, duration: float, member_seed) -> np.ndarray:
    """One stationary Ornstein-Uhlenbeck detuning trajectory.

    Returns samples at the start of each ``dt`` step covering
    ``duration`` (``ceil(duration/dt)`` values).  Uses the exact
    discrete update ``x' = x e^(-dt/tau_b) + sigma sqrt(1-e^(-2dt/tau_b)) xi``
    with ``x_0 ~ N(0, sigma^2)``, so the statistics are independent of dt.
    """
    if noise.kind != "ornstein_uhlenbeck":
        raise ValueError("generate_ou_trajectory requires an ornstein_uhlenbeck model")
    rng = np.random.Generator(np.random.PCG64(member_seed))
    n = max(1, int(math.ceil(duration / noise.dt - 1e-9)))
    a = math.exp(-noise.dt / noise.tau_b)
    b = noise.sigma * math.sqrt(1.0 - a * a)
    xi = rng.standard_normal(n)
    out = np.empty(n)
    x = noise.sigma * rng.standard_normal()
    for k in range(n):
        out[k] = x
        x = a * x + b * xi[k]
    return out


# ---------------------------------------------------------------------------
# program execution
# ---------------------------------------------------------------------------

class SimulationBudgetError(RuntimeError):
    """size x noise-steps exceeds the configured memory/work budget."""


@dataclass(frozen=True, eq=False)
class AcquireSample:
    label: str
    time: float
    mean: np.ndarray  # (3,) weighted-mean Bloch vector


@dataclass(frozen=True, eq=False)
class SimulationResult:
    """Weighted-mean trajectory and acquire table of one program run."""

    sample_times: np.ndarray
    mean_bloch: np.ndarray  # (len(sample_times), 3)
    acquires: tuple  # tuple[AcquireSample, ...]
    n_members: int
    duration: float
    master_seed: int

    def labels(self) -> tuple:
        seen = []
        for a in self.acquires:
            if a.label not in seen:
                seen.append(a.label)
        return tuple(seen)


def echo_amplitude(result: SimulationResult, label: str) -> tuple[float, float]:
    """(magnitude, phase) of the mean transverse vector at an acquire.

    Magnitude is ``sqrt(mx^2 + my^2)`` of the weighted-mean Bloch
    vector, phase is ``atan2(my, mx)``.  If the label was acquired
    repeatedly (decay readout), the last occurrence is reported.
    """
    hits = [a for a in result.acquires if a.label == label]
    if not hits:
        raise KeyError(f"no acquire labeled {label!r}")
    m = hits[-1].mean
    return float(np.hypot(m[0], m[1])), float(math.atan2(m[1], m[0]))


def acquire_series(result: SimulationResult, label: str) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(times, magnitudes, phases) over every occurrence of a label."""
    hits = [a for a in result.acquires if a.label == label]
    if not hits:
        raise KeyError(f"no acquire labeled {label!r}")
    t = np.array([a.time for a in hits])
    mag = np.array([np.hypot(a.mean[0], a.mean[1]) for a in hits])
    ph = np.array([math.atan2(a.mean[1], a.mean[0]) for a in hits])
    return t, mag, ph


def in_phase_amplitude(result: SimulationResult, label: str, reference_phase: float) -> float:
    """Signed projection of the mean transverse vector on a reference axis.

    Phase-sensitive detection: ``mx cos(ref) + my sin(ref)``.  For the
    inversion-recovery readout built here (phase-0 pulses) the signal
    appears along -y, i.e. ``reference_phase = -pi/2`` returns the
    pre-readout z with its sign.
    """
    hits = [a for a in result.acquires if a.label == label]
    if not hits:
        raise KeyError(f"no acquire labeled {label!r}")
    m = hits[-1].mean
    return float(m[0] * math.cos(reference_phase) + m[1] * math.sin(reference_phase))


def _noise_list(noise) -> list[NoiseModel]:
    if noise is None:
        return []
    if isinstance(noise, NoiseModel):
        return [] if noise.kind == "none" else [noise]
    models = [m for m in noise if m.kind != "none"]
    return list(models)


def _wait_steps(duration: float, dt: float) -> list[float]:
    """Split a wait into full dt steps plus a remainder (sum == duration)."""
    if duration <= 0:
        return []
    k = int(math.floor(duration / dt + 1e-9))
    rem = duration - k * dt
    steps = [dt] * k
    if rem > 1e-15:
        steps.append(rem)
    return steps


_MEMBER_CHUNK = 512  # fixed: never derived from thread count


def run_program(
    program: PulseProgram,
    ensemble: EnsembleSpec,
    noise=None,
    relax: RelaxationParams = NO_RELAXATION,
    master_seed: int = 0,
    initial_state: Sequence[float] = (0.0, 0.0, 1.0),
    record: str = "acquires",
    n_threads: int = 1,
    t2_per_member: np.ndarray | None = None,
    max_member_steps: float = 2e9,
) -> SimulationResult:
    """Run a pulse program over the ensemble and average.

    Each member carries its static detuning plus (optionally) its own
    noise trajectory; hard pulses are instantaneous rotations, finite
    pulses rotate about the member's tilted axis with the noise value
    frozen at the pulse start.  ``record="events"`` samples the mean
    Bloch vector at every expanded event boundary instead of only at
    t=0, acquires and the end.

    ``noise`` may be a single :class:`NoiseModel` or a sequence of them
    (independent processes, detunings summed) -- e.g. two
    Ornstein-Uhlenbeck components standing in for a structured bath.
    ``t2_per_member`` (length ``size``) models a coherence-time spread
    across the ensemble.

    Raises :class:`SimulationBudgetError` when ``size`` times the number
    of noise steps exceeds ``max_member_steps``.
    """
    if record not in ("acquires", "events"):
        raise ValueError(f"unknown record mode {record!r}")
    initial = np.asarray(initial_state, dtype=float)
    if initial.shape != (3,):
        raise ValueError("initial_state must be a 3-vector")

    events = list(program.expand())
    models = _noise_list(noise)

    # Pre-split every wait and lay out the timeline once; identical for
    # all chunks, so sample times are exact and shared.
    wait_steps: list[list[float]] = []
    n_draw_steps = 0
    for ev in events:
        if isinstance(ev, Wait):
            steps = _wait_steps(ev.duration, models[0].dt) if models else [ev.duration]
            wait_steps.append(steps)
            n_draw_steps += len(steps)
    if models and ensemble.size * n_draw_steps > max_member_steps:
        raise SimulationBudgetError(
            f"{ensemble.size} members x {n_draw_steps} noise steps exceeds the "
            f"budget of {max_member_steps:.0f}; raise max_member_steps or coarsen dt"
        )

    detunings, weights = sample_detunings(ensemble)
    seeds = np.random.SeedSequence(master_seed).spawn(ensemble.size) if models else None

    # timeline bookkeeping (config-determined, thread-independent)
    sample_times: list[float] = [0.0]
    acquire_meta: list[tuple[str, float]] = []
    t = 0.0
    wi = 0
    for ev in events:
        if isinstance(ev, Wait):
            t += ev.duration
            wi += 1
        elif isinstance(ev, Pulse):
            t += ev.event.elapsed
        else:
            acquire_meta.append((ev.label, t))
        if record == "events":
            sample_times.append(t)
    if record != "events":
        sample_times.extend(tm for _, tm in acquire_meta)
        sample_times.append(t)
    total_duration = t

    n_samples = len(sample_times)
    n_acquires = len(acquire_meta)

    def run_chunk(lo: int, hi: int) -> tuple[np.ndarray, np.ndarray]:
        m = hi - lo
        det = detunings[lo:hi]
        w = weights[lo:hi]
        t2o = None if t2_per_member is None else np.asarray(t2_per_member, float)[lo:hi]
        v = np.tile(initial, (m, 1))

        # pre-draw every random number this chunk will consume; member i's
        # stream depends only on (master_seed, i), never on chunking
        draws = None
        x = np.zeros(m)
        if models:
            draws = np.empty((len(models), m, n_draw_steps))
            values = np.empty((len(models), m))
            for i in range(m):
                rng = np.random.Generator(np.random.PCG64(seeds[lo + i]))
                for j, mod in enumerate(models):
                    if mod.kind == "ornstein_uhlenbeck":
                        draws[j, i] = rng.standard_normal(n_draw_steps)
                        values[j, i] = mod.sigma * rng.standard_normal()
                    else:
                        draws[j, i] = rng.random(n_draw_steps)
                        values[j, i] = mod.amplitude * (1.0 if rng.random() < 0.5 else -1.0)
            x = values.sum(axis=0)

        sums = np.zeros((n_samples, 3))
        acq_sums = np.zeros((n_acquires, 3))
        si = 0
        ai = 0
        wi = 0
        col = 0

        def record_sample():
            nonlocal si
            sums[si] = w @ v
            si += 1

        record_sample()  # t = 0

        z_eq = relax.z_equilibrium
        t1 = relax.t1
        # per-(h) relaxation factor cache; waits reuse a handful of values
        fac_cache: dict[float, tuple] = {}

        def factors(h: float):
            hit = fac_cache.get(h)
            if hit is None:
                e1 = math.exp(-h / t1)
                if t2o is None:
                    e2 = math.exp(-h / relax.t2)
                else:
                    e2 = np.exp(-h / t2o)
                hit = (e1, e2)
                fac_cache[h] = hit
            return hit

        def advance_noise(h: float, step_col: int):
            nonlocal x
            for j, mod in enumerate(models):
                u = draws[j, :, step_col]
                if mod.kind == "ornstein_uhlenbeck":
                    a = math.exp(-h / mod.tau_b)
                    b = mod.sigma * math.sqrt(1.0 - a * a)
                    values[j] = values[j] * a + b * u
                else:
                    # u uniform; parity of a Poisson flip count over h
                    p_odd = 0.5 * (1.0 - math.exp(-2.0 * mod.flip_rate * h))
                    values[j] = np.where(u < p_odd, -values[j], values[j])
            x = values.sum(axis=0)

        for ev in events:
            if isinstance(ev, Pulse):
                p = ev.event
                if p.mode == "hard":
                    axis = np.array([math.cos(p.phase), math.sin(p.phase), 0.0])
                    v = rotate(v, axis, p.area)
                else:
                    eff = det + x if models else det
                    omega = np.hypot(p.rabi, eff)
                    angle = 2.0 * math.pi * omega * p.duration
                    axis = np.stack(
                        [
                            np.full(m, p.rabi * math.cos(p.phase)),
                            np.full(m, p.rabi * math.sin(p.phase)),
                            eff if np.ndim(eff) else np.full(m, eff),
                        ],
                        axis=-1,
                    ) / omega[:, None]
                    v = rotate(v, axis, angle)
            elif isinstance(ev, Wait):
                for h in wait_steps[wi]:
                    eff = det + x if models else det
                    theta = 2.0 * math.pi * eff * h
                    c = np.cos(theta)
                    s = np.sin(theta)
                    e1, e2 = factors(h)
                    vx = (v[:, 0] * c - v[:, 1] * s) * e2
                    vy = (v[:, 0] * s + v[:, 1] * c) * e2
                    vz = z_eq + (v[:, 2] - z_eq) * e1
                    v = np.stack([vx, vy, vz], axis=-1)
                    if models:
                        advance_noise(h, col)
                        col += 1
                wi += 1
            else:  # Acquire
                acq_sums[ai] = w @ v
                ai += 1
            if record == "events":
                record_sample()
        if record != "events":
            for k in range(n_acquires):
                sums[1 + k] = acq_sums[k]
            sums[-1] = w @ v
        return sums, acq_sums

    # Chunk size depends on the configuration only (memory bound on the
    # pre-drawn noise), never on the thread count.
    chunk = _MEMBER_CHUNK
    if models:
        budget_elems = 2.0e7
        chunk = max(16, min(_MEMBER_CHUNK, int(budget_elems // max(1, n_draw_steps * len(models)))))
    starts = list(range(0, ensemble.size, chunk))
    bounds = [(lo, min(lo + chunk, ensemble.size)) for lo in starts]
    if n_threads > 1 and len(bounds) > 1:
        with ThreadPoolExecutor(max_workers=n_threads) as pool:
            parts = list(pool.map(lambda b: run_chunk(*b), bounds))
    else:
        parts = [run_chunk(*b) for b in bounds]

    total_w = float(weights.sum())
    mean = sum(p[0] for p in parts) / total_w
    acq_mean = sum(p[1] for p in parts) / total_w

    acquires = tuple(
        AcquireSample(label=lbl, time=tm, mean=acq_mean[k])
        for k, (lbl, tm) in enumerate(acquire_meta)
    )
    return SimulationResult(
        sample_times=np.asarray(sample_times),
        mean_bloch=mean,
        acquires=acquires,
        n_members=ensemble.size,
        duration=total_duration,
        master_seed=master_seed,
    )


# ---------------------------------------------------------------------------
# analytic Ornstein-Uhlenbeck dephasing (calibration and oracles)
# ---------------------------------------------------------------------------

def ou_fid_coherence(t, sigma: float, tau_b: float):
    """Free-induction coherence under OU noise (Gaussian-phase result).

    ``exp(-sigma_w^2 tau_b^2 [t/tau_b - 1 + e^(-t/tau_b)])`` with
    ``sigma_w = 2*pi*sigma``; ``sigma`` in Hz, times in s.
    """
    t = np.asarray(t, dtype=float)
    w2 = (2.0 * math.pi * sigma) ** 2
    return np.exp(-w2 * tau_b**2 * (t / tau_b - 1.0 + np.exp(-t / tau_b)))


def ou_hahn_coherence(total_time, sigma: float, tau_b: float):
    """Two-pulse-echo coherence at total evolution time ``2*tau``.

    ``exp(-sigma_w^2 tau_b^2 [2 tau/tau_b - 3 + 4 e^(-tau/tau_b) -
    e^(-2 tau/tau_b)])``; reduces to the cubic law
    ``exp(-(2/3) sigma_w^2 tau^3 / tau_b)`` for ``tau << tau_b``.
    """
    tau = np.asarray(total_time, dtype=float) / 2.0
    x = np.exp(-tau / tau_b)
    w2 = (2.0 * math.pi * sigma) ** 2
    return np.exp(-w2 * tau_b**2 * (2.0 * tau / tau_b - 3.0 + 4.0 * x - x * x))


def calibrate_ou_sigma(tau_b: float, echo_1e_time: float = 0.86) -> float:
    """Noise strength (Hz rms) giving a target two-pulse-echo 1/e time.

    The echo exponent scales as sigma^2, so the analytic expression
    inverts in closed form.  The default target is the 0.86 s asymptotic
    decay time of the material this package models.
    """
    if not echo_1e_time > 0:
        raise ValueError(f"echo_1e_time must be positive, got {echo_1e_time}")
    tau = echo_1e_time / 2.0
    x = math.exp(-tau / tau_b)
    bracket = 2.0 * tau / tau_b - 3.0 + 4.0 * x - x * x
    return 1.0 / (2.0 * math.pi * tau_b * math.sqrt(bracket))


# ---------------------------------------------------------------------------
# exports
# ---------------------------------------------------------------------------

def write_text_atomic(path: str, text: str) -> None:
    """Write via a temp file + rename so readers never see partial files."""
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def result_to_csv(result: SimulationResult) -> str:
    """Trajectory table, fixed header ``time_s,mx,my,mz``."""
    lines = ["time_s,mx,my,mz"]
    for t, v in zip(result.sample_times, result.mean_bloch):
        lines.append(f"{t:.17g},{v[0]:.17g},{v[1]:.17g},{v[2]:.17g}")
    return "\n".join(lines) + "\n"


def result_to_json(result: SimulationResult, config: dict | None = None) -> str:
    """Result document: config echo plus the acquire table."""
    doc = {
        "config": config if config is not None else {},
        "n_members": result.n_members,
        "duration_s": result.duration,
        "master_seed": result.master_seed,
        "acquires": [
            {
                "label": a.label,
                "time_s": a.time,
                "magnitude": float(np.hypot(a.mean[0], a.mean[1])),
                "phase_rad": float(math.atan2(a.mean[1], a.mean[0])),
                "mx": float(a.mean[0]),
                "my": float(a.mean[1]),
                "mz": float(a.mean[2]),
            }
            for a in result.acquires
        ],
    }
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"
