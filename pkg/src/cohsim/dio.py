"""Simulation under dephasing-covariant incoherent operations: the
resource-nonactivating no-go test, the DIO success-probability SDP, and
the closed-form step behavior for replacement targets.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .core import QuantumChannel, kron, maximally_coherent_state
from .mio import SimulationQuery, SimulationResult, _run_simulation
from .sdp import SolverConfig

DEFAULT_NONACTIVATING_TOL = 1e-9


@dataclass(frozen=True)
class NonactivatingReport:
    """Outcome of the dephasing-commutation test Delta∘N = Delta∘N∘Delta."""

    is_nonactivating: bool
    deviation: float
    tol: float = DEFAULT_NONACTIVATING_TOL


def is_resource_nonactivating(
    n: QuantumChannel, tol: float = DEFAULT_NONACTIVATING_TOL
) -> NonactivatingReport:
    """Decide whether dephasing the input commutes with the dephased channel.

    Works at the Choi level, which covers all inputs at once: dephasing the
    output block keeps entries J[(a,b),(a',b)] with equal output indices;
    additionally dephasing the input block keeps only a = a'. The deviation
    is the largest surviving magnitude with a != a'.
    """
    if not n.cptp_flag:
        raise ValueError("nonactivating test needs a CPTP channel")
    da, db = n.dim_in, n.dim_out
    j = n.choi.reshape(da, db, da, db)
    # entries of Delta_out(J) with distinct input indices
    dev = 0.0
    for b in range(db):
        block = j[:, b, :, b]
        off = block - np.diag(np.diagonal(block))
        dev = max(dev, float(np.max(np.abs(off), initial=0.0)))
    return NonactivatingReport(dev <= tol, dev, tol)


def max_success_dio(query: SimulationQuery, config: SolverConfig | None = None) -> SimulationResult:
    """Maximal success probability of simulating the target with DIO.

    Identical to the MIO program plus, for every pair of distinct basis
    indices of the composite input, a vanishing dephased conditional
    output. Non-simulable targets yield probability 0, not an error.
    """
    if query.op_class != "DIO":
        raise ValueError("query op_class must be DIO")
    return _run_simulation(query, dio=True, config=config)


def replacement_step_probability(n: int, m: int, eps: float) -> float:
    """The 0/1 success probability for replacing into a rank-n maximally
    coherent state using a rank-m one under DIO: 1 iff eps >= 1 - m/n.
    """
    if m < 2:
        raise ValueError("resource rank must be m >= 2")
    if m > n:
        raise ValueError("the step law is stated for m <= n")
    threshold = 1.0 - m / n
    return 1.0 if eps >= threshold - 1e-12 else 0.0


class AppendixSolution(NamedTuple):
    """An explicit feasible point for the DIO program at the threshold error.

    j_e is the Choi matrix of the free operation on R (x) A -> B with
    R = m, A = B = n; z is the diamond-norm slack on A (x) B. j_m is the
    induced simulated-channel Choi tr_R[j_e (Psi_m^T (x) I)], included so
    the triple plugs directly into the simulation constraint set at p = 1.
    """

    j_e: np.ndarray
    z: np.ndarray
    j_m: np.ndarray


def appendix_feasible_solution(n: int, m: int) -> AppendixSolution:
    """The rank-one-corrected explicit solution at eps = 1 - m/n.

    j_e = (1/n) I_R (x) I_A (x) I_B
          + (1/(n(n-1))) (m Psi_m - I)_R (x) I_A (x) (n Psi_n - I)_B.

    The slack is z = (1 - m/n) I_A (x) (I - Psi_n)/(n - 1). The projector
    form (1 - m/n) I_A (x) Psi_n fails the dominance constraint
    z >= J_L - J_N with eigenvalue -(n-m)/(n(n-1)); see the tests, which
    verify both statements numerically.
    """
    if m < 2:
        raise ValueError("resource rank must be m >= 2")
    if m > n:
        raise ValueError("construction needs m <= n")
    psi_m = maximally_coherent_state(m).matrix
    psi_n = maximally_coherent_state(n).matrix
    i_r, i_a, i_b = np.eye(m), np.eye(n), np.eye(n)
    j_e = kron(i_r, kron(i_a, i_b)) / n
    j_e = j_e + kron(m * psi_m - i_r, kron(i_a, n * psi_n - i_b)) / (n * (n - 1))
    if n > m:
        z = (1.0 - m / n) * kron(i_a, (i_b - psi_n) / (n - 1))
    else:
        z = np.zeros((n * n, n * n), dtype=complex)
    # tr_R[j_e (Psi_m^T (x) I_AB)]; tr[(m Psi_m - I) Psi_m] = m - 1.
    j_m = kron(i_a, i_b) / n + (m - 1) / (n * (n - 1)) * kron(i_a, n * psi_n - i_b)
    return AppendixSolution(j_e, z, j_m)


def literal_projector_slack(n: int, m: int) -> np.ndarray:
    """The uncorrected slack (1 - m/n) I_A (x) Psi_n, kept for the
    negative check that it violates the dominance constraint."""
    psi_n = maximally_coherent_state(n).matrix
    return (1.0 - m / n) * kron(np.eye(n), psi_n)
