"""Process tomography of simulated pulse programs.

A program body (state preparation stripped) is treated as a channel on
the qubit and characterized by its Pauli transfer matrix: the real 4x4
matrix R with rows/columns ordered (I, X, Y, Z) acting on Pauli
expectation values.  A perfect memory has R = identity.

The matrix is assembled directly from mean Bloch vectors for the four
preparations {+z, -z, +x, +y} (a minimal informationally complete set
for trace-preserving maps): with E(p) the channel output for input p,

    c      = (E(+z) + E(-z)) / 2          (affine shift, first column)
    T . z  = (E(+z) - E(-z)) / 2
    T . x  = E(+x) - c
    T . y  = E(+y) - c

and R has first row (1, 0, 0, 0) by construction (trace preservation).
Bloch-vector measurements are real, so R is real; there is no imaginary
part in this representation.

Fidelity here is the entanglement (process) fidelity
``trace(R_ideal^T R) / 4``; the average gate fidelity follows as
``(2 F + 1) / 3``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .bloch import NO_RELAXATION, RelaxationParams
from .ensemble import EnsembleSpec, run_program
from .sequences import BangBangParams, PulseProgram, PulseSpec, HARD_PULSES, build_bangbang_body

__all__ = [
    "PREPARATIONS",
    "ProcessResult",
    "assemble_ptm",
    "process_fidelity",
    "average_gate_fidelity",
    "run_process_tomography",
    "tomography_series",
    "ptm_to_csv",
    "process_result_to_json",
]

PREPARATIONS = {
    "+z": np.array([0.0, 0.0, 1.0]),
    "-z": np.array([0.0, 0.0, -1.0]),
    "+x": np.array([1.0, 0.0, 0.0]),
    "+y": np.array([0.0, 1.0, 0.0]),
}


@dataclass(frozen=True, eq=False)
class ProcessResult:
    """Pauli transfer matrix, fidelity vs identity, and the raw vectors."""

    ptm: np.ndarray  # (4, 4), rows/cols (I, X, Y, Z)
    fidelity: float
    inputs: dict  # label -> (3,) prepared Bloch vector
    outputs: dict  # label -> (3,) mean output Bloch vector
    n_cycles: int | None = None


def assemble_ptm(outputs: dict) -> np.ndarray:
    """Pauli transfer matrix from the four preparation outputs."""
    c = (outputs["+z"] + outputs["-z"]) / 2.0
    t_z = (outputs["+z"] - outputs["-z"]) / 2.0
    t_x = outputs["+x"] - c
    t_y = outputs["+y"] - c
    r = np.zeros((4, 4))
    r[0, 0] = 1.0
    r[1:, 0] = c
    r[1:, 1] = t_x
    r[1:, 2] = t_y
    r[1:, 3] = t_z
    return r


def process_fidelity(ptm: np.ndarray, ideal: np.ndarray | None = None) -> float:
    """Entanglement fidelity ``trace(ideal^T ptm) / 4`` (ideal: identity)."""
    ptm = np.asarray(ptm, dtype=float)
    if ptm.shape != (4, 4):
        raise ValueError(f"ptm must be 4x4, got {ptm.shape}")
    if ideal is None:
        return float(np.trace(ptm)) / 4.0
    ideal = np.asarray(ideal, dtype=float)
    if ideal.shape != (4, 4):
        raise ValueError(f"ideal must be 4x4, got {ideal.shape}")
    return float(np.trace(ideal.T @ ptm)) / 4.0


def average_gate_fidelity(entanglement_fidelity: float) -> float:
    """Convert entanglement fidelity to average gate fidelity (2F+1)/3."""
    return (2.0 * entanglement_fidelity + 1.0) / 3.0


def run_process_tomography(
    body: PulseProgram,
    ensemble: EnsembleSpec,
    noise=None,
    relax: RelaxationParams = NO_RELAXATION,
    master_seed: int = 0,
    n_threads: int = 1,
) -> ProcessResult:
    """Characterize a program body as a channel.

    The body must not contain its own preparation pulse; each of the
    four standard preparations is injected as the initial Bloch vector
    (the -z preparation is an assumed-perfect inversion).  All four runs
    share the ensemble and the master seed, so member noise realizations
    are common mode across preparations.
    """
    outputs = {}
    for label, vec in PREPARATIONS.items():
        res = run_program(
            body,
            ensemble,
            noise=noise,
            relax=relax,
            master_seed=master_seed,
            initial_state=vec,
            record="acquires",
            n_threads=n_threads,
        )
        outputs[label] = res.mean_bloch[-1]
    ptm = assemble_ptm(outputs)
    return ProcessResult(
        ptm=ptm,
        fidelity=process_fidelity(ptm),
        inputs={k: v.copy() for k, v in PREPARATIONS.items()},
        outputs=outputs,
    )


def tomography_series(
    params: BangBangParams,
    n_list,
    ensemble: EnsembleSpec,
    pulse_spec: PulseSpec = HARD_PULSES,
    noise=None,
    relax: RelaxationParams = NO_RELAXATION,
    master_seed: int = 0,
    n_threads: int = 1,
) -> list[ProcessResult]:
    """Tomography of the decoupling train at each cycle count in ``n_list``.

    ``n_list`` must be sorted ascending.  Every point reuses the same
    ensemble spec and master seed so the results differ only in the
    number of cycles.
    """
    n_list = list(n_list)
    if n_list != sorted(n_list):
        raise ValueError("n_list must be sorted ascending")
    results = []
    for n in n_list:
        body = build_bangbang_body(
            BangBangParams(
                tau1=params.tau1,
                tau_c=params.tau_c,
                n_cycles=int(n),
                initial_area=None,
            ),
            pulse_spec,
        )
        res = run_process_tomography(
            body, ensemble, noise=noise, relax=relax,
            master_seed=master_seed, n_threads=n_threads,
        )
        results.append(
            ProcessResult(
                ptm=res.ptm,
                fidelity=res.fidelity,
                inputs=res.inputs,
                outputs=res.outputs,
                n_cycles=int(n),
            )
        )
    return results


_PAULI_LABELS = ("I", "X", "Y", "Z")


def ptm_to_csv(ptm: np.ndarray) -> str:
    """PTM as CSV (row label + four columns), for bar-plot style exports."""
    lines = ["row," + ",".join(_PAULI_LABELS)]
    for i, lbl in enumerate(_PAULI_LABELS):
        lines.append(lbl + "," + ",".join(f"{ptm[i, j]:.17g}" for j in range(4)))
    return "\n".join(lines) + "\n"


def process_result_to_json(result: ProcessResult, config: dict | None = None) -> str:
    doc = {
        "config": config if config is not None else {},
        "n_cycles": result.n_cycles,
        "ptm_row_major": [float(x) for x in result.ptm.reshape(-1)],
        "fidelity": result.fidelity,
        "average_gate_fidelity": average_gate_fidelity(result.fidelity),
        "preparations": {
            label: {
                "input": [float(x) for x in result.inputs[label]],
                "output": [float(x) for x in result.outputs[label]],
            }
            for label in sorted(result.inputs)
        },
    }
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"
