"""Maximal success probability of probabilistic channel simulation under
maximally incoherent operations, with closed forms and explicit protocols.

The optimization is solved in a homogenized form: instead of minimizing
t = 1/p over (t, J_E, J_L, Z) it maximizes p over the rescaled variables
(p, J_E' = p t J_E, J_M = p J_L, Z' = p Z), in which every constraint is
linear and the all-zero point is feasible, so p = 0 comes out of the solver
gracefully instead of as an infeasibility. At eps = 0 the error block is
forced to zero, which pins J_M = p J_N; the solved program uses that
equality directly and drops the slack variables.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .core import (
    DensityMatrix,
    PureState,
    QuantumChannel,
    apply_choi,
    half_trace_norm,
    kron,
    maximally_coherent_state,
)
from .robustness import epsilon_robustness_channel, robustness_channel
from .sdp import (
    SdpProblem,
    SdpSolution,
    SolverConfig,
    SolverFailure,
    block_expr,
    const_expr,
    dephase_expr,
    offdiag_expr,
    ptrace_expr,
    resource_contraction,
    scalar_times_matrix,
    solve,
    trace_expr,
)

PROBABILITY_FLOOR = 1e-9  # below this the optimizer channel is meaningless


class ProtocolInfeasibleError(RuntimeError):
    """Requested success probability exceeds what the resource supports."""


class MalformedProtocolError(RuntimeError):
    """The flag weight of a protocol varies with the input state."""


@dataclass(frozen=True)
class SimulationQuery:
    """The triplet (target N, resource omega, error eps) plus operation class."""

    target: QuantumChannel
    resource: DensityMatrix
    epsilon: float
    op_class: str = "MIO"

    def __post_init__(self):
        if not self.target.cptp_flag:
            raise ValueError("simulation target must be CPTP")
        if not 0.0 <= self.epsilon <= 1.0:
            raise ValueError("epsilon must lie in [0, 1]")
        cls = self.op_class.upper()
        if cls not in ("MIO", "DIO"):
            raise ValueError("op_class must be 'MIO' or 'DIO'")
        object.__setattr__(self, "op_class", cls)


@dataclass
class SimulationResult:
    """Optimal probability with the realized channel and protocol Choi."""

    probability: float
    realized_channel: QuantumChannel | None
    protocol_choi: np.ndarray | None
    solver_diagnostics: SdpSolution

    def __post_init__(self):
        if not 0.0 <= self.probability <= 1.0:
            raise ValueError("probability must lie in [0, 1]")


def build_simulation_problem(query: SimulationQuery, dio: bool) -> SdpProblem:
    """The homogenized success-probability SDP for one query.

    Variables: p (scalar), J_E (subnormalized free operation on R(x)A -> B,
    scaled by p t = 1), and for eps > 0 also J_M = p J_L and the diamond
    slack Z' = p Z. DIO adds vanishing dephased conditionals for every
    off-diagonal basis pair of the composite input.
    """
    n, omega, eps = query.target, query.resource, query.epsilon
    dr, da, db = omega.dim, n.dim_in, n.dim_out
    dra = dr * da
    d_ab = da * db

    p = SdpProblem()
    prob = p.add_variable("p", 1)
    je = p.add_variable("J_E", dra * db)

    contracted = resource_contraction(je, omega.matrix, dr, d_ab)
    if eps < 1e-14:
        # Exact simulation: the error block is forced to zero, so the
        # realized channel equals the target and J_M = p J_N.
        p.add_equality(
            contracted - scalar_times_matrix(prob, n.choi),
            0.0,
            label="resource contraction = p J_N",
        )
    else:
        jm = p.add_variable("J_M", d_ab)
        z = p.add_variable("Z", d_ab)
        p.add_equality(contracted - jm, 0.0, label="resource contraction = J_M")
        p.add_equality(
            ptrace_expr(jm, (da, db), (1,)) - scalar_times_matrix(prob, np.eye(da)),
            0.0,
            label="tr_B J_M = p I_A",
        )
        p.add_psd(z, label="Z >= 0")
        p.add_psd(z - jm + scalar_times_matrix(prob, n.choi), label="Z >= J_M - p J_N")
        p.add_psd(
            scalar_times_matrix(prob, eps * np.eye(da)) - ptrace_expr(z, (da, db), (1,)),
            label="tr_B Z <= p eps I_A",
        )

    p.add_psd(je, label="J_E >= 0")
    p.add_psd(
        const_expr(np.eye(dra)) - ptrace_expr(je, (dra, db), (1,)),
        label="tr_B J_E <= I_RA",
    )
    p.add_psd(prob, label="p >= 0")
    # Implied by the other constraints, but stating it keeps the optimal
    # face clean for the interior-point method when the optimum is p = 1.
    p.add_psd(const_expr(np.eye(1)) - prob, label="p <= 1")

    for i in range(dra):
        cond = block_expr(je, dra, db, i, i)
        p.add_equality(offdiag_expr(cond), 0.0, label=f"diagonal output {i}")
    if dio:
        for i in range(dra):
            for j in range(i + 1, dra):
                cond = block_expr(je, dra, db, i, j)
                p.add_equality(
                    dephase_expr(cond), 0.0, hermitian=False, label=f"dephased conditional ({i},{j}) = 0"
                )

    p.set_objective("max", prob)
    return p


def _run_simulation(query: SimulationQuery, dio: bool, config: SolverConfig | None) -> SimulationResult:
    problem = build_simulation_problem(query, dio)
    sol = solve(problem, config)
    if sol.status != "optimal":
        raise SolverFailure(f"simulation SDP returned status {sol.status}", sol)
    p_star = float(sol.primal_value)
    probability = min(max(p_star, 0.0), 1.0)
    realized = None
    if p_star > PROBABILITY_FLOOR:
        if query.epsilon < 1e-14:
            realized = query.target
        else:
            j_l = sol.assignments["J_M"] / p_star
            realized = QuantumChannel(
                query.target.dim_in, query.target.dim_out, j_l, cptp_flag=True, atol=1e-6
            )
    return SimulationResult(
        probability=probability,
        realized_channel=realized,
        protocol_choi=sol.assignments["J_E"].copy(),
        solver_diagnostics=sol,
    )


def max_success_mio(query: SimulationQuery, config: SolverConfig | None = None) -> SimulationResult:
    """Maximal success probability of simulating the target with MIO."""
    if query.op_class != "MIO":
        raise ValueError("query op_class must be MIO")
    return _run_simulation(query, dio=False, config=config)


def success_via_t_minimization(
    query: SimulationQuery, config: SolverConfig | None = None
) -> float:
    """The non-homogenized formulation: minimize t = 1/p directly.

    Used as a cross-check on instances with strictly positive optimum;
    for p* = 0 this program has no feasible point.
    """
    n, omega, eps = query.target, query.resource, query.epsilon
    dr, da, db = omega.dim, n.dim_in, n.dim_out
    dra = dr * da
    d_ab = da * db

    p = SdpProblem()
    t = p.add_variable("t", 1)
    je = p.add_variable("J_E", dra * db)
    contracted = resource_contraction(je, omega.matrix, dr, d_ab)
    if eps < 1e-14:
        p.add_equality(contracted - const_expr(n.choi), 0.0, label="L = N")
    else:
        jl = p.add_variable("J_L", d_ab)
        z = p.add_variable("Z", d_ab)
        p.add_equality(contracted - jl, 0.0)
        p.add_equality(ptrace_expr(jl, (da, db), (1,)), np.eye(da))
        p.add_psd(z)
        p.add_psd(z - jl + const_expr(n.choi))
        p.add_psd(const_expr(eps * np.eye(da)) - ptrace_expr(z, (da, db), (1,)))
    p.add_psd(je)
    p.add_psd(
        scalar_times_matrix(t, np.eye(dra)) - ptrace_expr(je, (dra, db), (1,)),
        label="tr_B J_E <= t I_RA",
    )
    for i in range(dra):
        p.add_equality(offdiag_expr(block_expr(je, dra, db, i, i)), 0.0)
    if query.op_class == "DIO":
        for i in range(dra):
            for j in range(i + 1, dra):
                p.add_equality(dephase_expr(block_expr(je, dra, db, i, j)), 0.0, hermitian=False)
    p.set_objective("min", t)
    sol = solve(p, config)
    if sol.status != "optimal":
        raise SolverFailure(f"t-form SDP returned status {sol.status}", sol)
    return 1.0 / sol.primal_value


def analytic_success_maxcoherent(
    target: QuantumChannel, m: int, eps: float, config: SolverConfig | None = None
) -> float:
    """min{1, (m-1)/C_R^eps(target)} for a rank-m maximally coherent resource."""
    if m < 2:
        raise ValueError("maximally coherent resources need rank m >= 2")
    result = (
        robustness_channel(target, config)
        if eps < 1e-14
        else epsilon_robustness_channel(target, eps, config)
    )
    c = result.value
    if c <= 1e-9:
        return 1.0
    return min(1.0, (m - 1) / c)


def unitary_success(theta: float, l: int, m: int) -> float:
    """Closed-form success probability for the rotation channel family.

    min{1, (m-1) / ((1 + sin 2 theta)^l - 1)}; an angle with vanishing
    coherence returns 1.
    """
    if m < 2:
        raise ValueError("maximally coherent resources need rank m >= 2")
    if l < 1:
        raise ValueError("tensor power must be at least 1")
    s = abs(math.sin(2.0 * theta))
    denom = (1.0 + s) ** l - 1.0
    if denom <= 1e-15:
        return 1.0
    return min(1.0, (m - 1) / denom)


class PureStateBound(NamedTuple):
    """Lower bound on MIO simulation success from a pure resource.

    ``value`` multiplies the distillation probability bound by the
    maximally-coherent simulation probability. ``incoherent_resource`` is
    set (with value 0) when the state has support on fewer than two basis
    states and therefore carries no coherence.
    """

    value: float
    distillation_bound: float
    simulation_probability: float
    incoherent_resource: bool


def pure_state_lower_bound(
    psi: PureState,
    m: int,
    target: QuantumChannel,
    eps: float,
    config: SolverConfig | None = None,
) -> PureStateBound:
    """Distill-then-simulate lower bound for a general pure resource."""
    if m < 2:
        raise ValueError("distillation target rank must be m >= 2")
    weights = np.abs(psi.amplitudes) ** 2
    support = weights > 1e-12
    n_supp = int(np.count_nonzero(support))
    if n_supp < 2:
        return PureStateBound(0.0, 0.0, 0.0, True)
    inv_sum = float(np.sum(1.0 / weights[support]))
    distill = n_supp**2 / (m * inv_sum)
    sim = analytic_success_maxcoherent(target, m, eps, config)
    return PureStateBound(distill * sim, distill, sim, False)


# ---------------------------------------------------------------------------
# Explicit protocol construction
# ---------------------------------------------------------------------------


def _success_branch_choi(target: QuantumChannel, p: float) -> np.ndarray:
    """Choi of L_p: A -> F(x)B with L_p = p |0><0| (x) N + (1-p) |1><1| (x) I/d."""
    da, db = target.dim_in, target.dim_out
    jn = target.choi.reshape(da, db, da, db)
    jlp = np.zeros((da, 2, db, da, 2, db), dtype=complex)
    jlp[:, 0, :, :, 0, :] = p * jn
    for a in range(da):
        for b in range(db):
            jlp[a, 1, b, a, 1, b] += (1.0 - p) / db
    d = da * 2 * db
    return jlp.reshape(d, d)


def construct_mio_protocol(
    target: QuantumChannel, m: int, p: float, config: SolverConfig | None = None
) -> QuantumChannel:
    """Build an explicit MIO protocol achieving success probability p with
    a rank-m maximally coherent resource.

    Searches for a CPTP complement L' such that the mixture
    (L_p + (m-1) L') / m has diagonal outputs on all basis inputs, then
    assembles M(X) = L_p(tr_R[(Psi_m (x) I) X]) + L'(tr_R[((I - Psi_m) (x) I) X])
    as a Choi matrix on (R (x) A) -> (F (x) B).

    Raises ProtocolInfeasibleError when p exceeds the achievable optimum.
    """
    if m < 2:
        raise ValueError("resource rank must be m >= 2")
    if not 0.0 < p <= 1.0:
        raise ValueError("success probability must lie in (0, 1]")
    da, db = target.dim_in, target.dim_out
    d_out = 2 * db
    d_lp = da * d_out
    j_lp = _success_branch_choi(target, p)

    prob = SdpProblem()
    jl2 = prob.add_variable("J_Lprime", d_lp)
    t = prob.add_variable("t", 1)
    prob.add_psd(jl2 - scalar_times_matrix(t, np.eye(d_lp)), label="J_L' >= t I")
    prob.add_equality(ptrace_expr(jl2, (da, d_out), (1,)), np.eye(da), label="L' trace preserving")
    mixture = const_expr(j_lp / m) + jl2 * ((m - 1) / m)
    for i in range(da):
        cond = block_expr(mixture, da, d_out, i, i)
        prob.add_equality(offdiag_expr(cond), 0.0, label=f"mixture diagonal output {i}")
    prob.set_objective("max", t)

    sol = solve(prob, config)
    if sol.status == "infeasible":
        raise ProtocolInfeasibleError(
            f"no CPTP complement exists at p={p}; the probability exceeds the feasible bound"
        )
    if sol.status != "optimal":
        raise SolverFailure(f"protocol search returned status {sol.status}", sol)
    if sol.assignments["t"][0, 0].real < -10 * (config or SolverConfig()).tol_feas:
        raise ProtocolInfeasibleError(
            f"requested p={p} is beyond the achievable success probability "
            f"(best complement leaves minimum eigenvalue {sol.assignments['t'][0, 0].real:.3e})"
        )
    j_l2 = sol.assignments["J_Lprime"]

    psi_m = maximally_coherent_state(m).matrix
    j_m = kron(psi_m, j_lp) + kron(np.eye(m) - psi_m, j_l2)
    return QuantumChannel(m * da, d_out, j_m, cptp_flag=True, atol=1e-6)


def _state_spanning_set(d: int) -> list[np.ndarray]:
    """d^2 pure-state projectors spanning the Hermitian matrices on C^d."""
    states = []
    for i in range(d):
        e = np.zeros(d, dtype=complex)
        e[i] = 1.0
        states.append(np.outer(e, e.conj()))
    for i in range(d):
        for j in range(i + 1, d):
            for phase in (1.0, 1.0j):
                v = np.zeros(d, dtype=complex)
                v[i] = 1.0 / math.sqrt(2.0)
                v[j] = phase / math.sqrt(2.0)
                states.append(np.outer(v, v.conj()))
    return states


def verify_protocol(
    m_choi: QuantumChannel, resource: DensityMatrix, target: QuantumChannel
) -> tuple[float, float]:
    """Run a protocol on a spanning set of inputs and read off its behavior.

    Returns (p_observed, max_conditional_error): the weight on flag |0> and
    the largest trace distance between the flag-0 conditional output and the
    target output. The flag weight must be input independent within 1e-8,
    otherwise MalformedProtocolError is raised. A protocol that never
    succeeds reports (0.0, 0.0) by convention.
    """
    dr, da, db = resource.dim, target.dim_in, target.dim_out
    if m_choi.dim_in != dr * da or m_choi.dim_out % db != 0:
        raise ValueError("protocol dimensions do not match resource/target")
    d_flag = m_choi.dim_out // db
    if d_flag != 2:
        raise ValueError("flag register must be a qubit")

    weights = []
    errors = []
    for rho in _state_spanning_set(da):
        joint = kron(resource.matrix, rho)
        out = apply_choi(m_choi.choi, m_choi.dim_in, m_choi.dim_out, joint)
        out4 = out.reshape(2, db, 2, db)
        flag0 = out4[0, :, 0, :]
        w = float(np.real(np.trace(flag0)))
        weights.append(w)
        target_out = apply_choi(target.choi, da, db, rho)
        if w > 1e-10:
            errors.append(half_trace_norm(flag0 / w - target_out))
        else:
            errors.append(0.0)
    p_obs = weights[0]
    if max(abs(w - p_obs) for w in weights) > 1e-8:
        raise MalformedProtocolError("flag weight varies with the input state")
    if p_obs <= 1e-10:
        return 0.0, 0.0
    return p_obs, max(errors)


def mio_membership_deviation(channel: QuantumChannel) -> float:
    """Largest off-diagonal magnitude among the basis conditional outputs.

    Zero (within solver accuracy) exactly when the channel maps every
    incoherent state to an incoherent state.
    """
    d_in, d_out = channel.dim_in, channel.dim_out
    j = channel.choi.reshape(d_in, d_out, d_in, d_out)
    dev = 0.0
    mask = 1.0 - np.eye(d_out)
    for i in range(d_in):
        block = j[i, :, i, :]
        dev = max(dev, float(np.max(np.abs(block * mask), initial=0.0)))
    return dev
