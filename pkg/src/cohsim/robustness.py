"""Coherence measures of states and channels: robustness, its smoothed
variant, and cohering power, each as a semidefinite program.

The value reported is always C_R, i.e. lambda* - 1 for programs that
minimize the trace-scaling factor lambda.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import DensityMatrix, QuantumChannel, apply_channel, basis_state
from .sdp import (
    AffineExpr,
    SdpProblem,
    SdpSolution,
    SolverConfig,
    SolverFailure,
    const_expr,
    offdiag_expr,
    ptrace_expr,
    scalar_times_matrix,
    solve,
    trace_expr,
)


@dataclass(frozen=True)
class RobustnessResult:
    """A robustness value with the optimizing SDP variables."""

    value: float
    optimizer: dict[str, np.ndarray]
    method: str  # "sdp" | "closed_form"
    solution: SdpSolution | None = None

    def __post_init__(self):
        if self.value < -1e-6:
            raise ValueError(f"robustness value {self.value} is significantly negative")


def _solved(problem: SdpProblem, cfg: SolverConfig | None, what: str) -> SdpSolution:
    sol = solve(problem, cfg)
    if sol.status != "optimal":
        raise SolverFailure(f"{what}: solver returned status {sol.status}", sol)
    return sol


def _mio_conditions(problem: SdpProblem, j_expr: AffineExpr, d_in: int, d_out: int, tag: str):
    """Every incoherent basis input must produce a diagonal output.

    The conditional output for basis index i is the (i, i) block of the
    Choi matrix; its off-diagonal part is constrained to vanish.
    """
    from .sdp import block_expr

    for i in range(d_in):
        cond = block_expr(j_expr, d_in, d_out, i, i)
        problem.add_equality(offdiag_expr(cond), 0.0, label=f"{tag} diagonal output {i}")


def robustness_state(rho: DensityMatrix, config: SolverConfig | None = None) -> RobustnessResult:
    """Robustness of coherence of a state.

    Solves min tr X with X diagonal and X >= rho; the value is tr X - 1.
    The optimizer entry "X" is lambda times the dominating incoherent state.
    """
    d = rho.dim
    p = SdpProblem()
    x = p.add_variable("X", d)
    p.add_equality(offdiag_expr(x), 0.0, label="X diagonal")
    p.add_psd(x - const_expr(rho.matrix), label="X >= rho")
    p.set_objective("min", trace_expr(x))
    sol = _solved(p, config, "robustness_state")
    return RobustnessResult(sol.primal_value - 1.0, dict(sol.assignments), "sdp", sol)


def robustness_channel(n: QuantumChannel, config: SolverConfig | None = None) -> RobustnessResult:
    """Robustness of coherence of a channel.

    min lambda s.t. J_M >= J_N, tr_B J_M = lambda I_A, and J_M has diagonal
    conditional outputs on every basis input.
    """
    if not n.cptp_flag:
        raise ValueError("robustness_channel needs a CPTP channel")
    da, db = n.dim_in, n.dim_out
    p = SdpProblem()
    jm = p.add_variable("J_M", da * db)
    lam = p.add_variable("lam", 1)
    p.add_psd(jm - const_expr(n.choi), label="J_M >= J_N")
    p.add_equality(
        ptrace_expr(jm, (da, db), (1,)) - scalar_times_matrix(lam, np.eye(da)),
        0.0,
        label="trace scaling",
    )
    _mio_conditions(p, jm, da, db, "MIO")
    p.set_objective("min", lam)
    sol = _solved(p, config, "robustness_channel")
    return RobustnessResult(sol.primal_value - 1.0, dict(sol.assignments), "sdp", sol)


def epsilon_robustness_channel(
    n: QuantumChannel, eps: float, config: SolverConfig | None = None
) -> RobustnessResult:
    """Smoothed robustness: minimum channel robustness over the half
    diamond-norm ball of radius eps around the target.

    eps is clamped to [0, 1]; at eps = 0 the ball degenerates to the target
    itself (the slack block is forced to zero), so the unsmoothed program is
    solved directly.
    """
    if not n.cptp_flag:
        raise ValueError("epsilon_robustness_channel needs a CPTP channel")
    eps = min(max(float(eps), 0.0), 1.0)
    if eps < 1e-14:
        return robustness_channel(n, config)
    da, db = n.dim_in, n.dim_out
    d = da * db
    p = SdpProblem()
    jm = p.add_variable("J_M", d)
    jl = p.add_variable("J_L", d)
    v = p.add_variable("V", d)
    lam = p.add_variable("lam", 1)
    p.add_psd(jm - jl, label="J_M >= J_L")
    p.add_psd(jl, label="J_L >= 0")
    p.add_psd(v, label="V >= 0")
    p.add_psd(v - jl + const_expr(n.choi), label="V >= J_L - J_N")
    p.add_psd(
        const_expr(eps * np.eye(da)) - ptrace_expr(v, (da, db), (1,)),
        label="tr_B V <= eps I",
    )
    p.add_equality(
        ptrace_expr(jm, (da, db), (1,)) - scalar_times_matrix(lam, np.eye(da)),
        0.0,
        label="trace scaling",
    )
    p.add_equality(ptrace_expr(jl, (da, db), (1,)), np.eye(da), label="L trace preserving")
    _mio_conditions(p, jm, da, db, "MIO")
    p.set_objective("min", lam)
    sol = _solved(p, config, "epsilon_robustness_channel")
    return RobustnessResult(sol.primal_value - 1.0, dict(sol.assignments), "sdp", sol)


def cohering_power(n: QuantumChannel, config: SolverConfig | None = None) -> float:
    """Base-2 log of 1 + the largest output robustness over basis inputs."""
    if not n.cptp_flag:
        raise ValueError("cohering_power needs a CPTP channel")
    best = 0.0
    for i in range(n.dim_in):
        out = apply_channel(n, basis_state(n.dim_in, i))
        value = robustness_state(out, config).value
        best = max(best, value)
    return math.log2(1.0 + max(best, 0.0))


def diamond_half_distance(
    a: QuantumChannel, b: QuantumChannel, config: SolverConfig | None = None
) -> tuple[float, SdpSolution]:
    """Half the diamond-norm distance between two channels.

    For the difference of trace-preserving maps this equals
    min mu s.t. Z >= 0, Z >= J_a - J_b, tr_B Z <= mu I_A.
    """
    if (a.dim_in, a.dim_out) != (b.dim_in, b.dim_out):
        raise ValueError("channels must share dimensions")
    da, db = a.dim_in, a.dim_out
    p = SdpProblem()
    z = p.add_variable("Z", da * db)
    mu = p.add_variable("mu", 1)
    p.add_psd(z, label="Z >= 0")
    p.add_psd(z - const_expr(a.choi - b.choi), label="Z >= J_a - J_b")
    p.add_psd(
        scalar_times_matrix(mu, np.eye(da)) - ptrace_expr(z, (da, db), (1,)),
        label="tr_B Z <= mu I",
    )
    p.set_objective("min", mu)
    sol = _solved(p, config, "diamond_half_distance")
    return max(sol.primal_value, 0.0), sol
