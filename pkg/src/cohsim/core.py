"""Dense complex linear algebra for states and channels in the Choi picture.

Conventions used throughout the package:

* A channel N with input dimension d_A and output dimension d_B is stored
  by its unnormalized Choi matrix J = sum_ij |i><j| (x) N(|i><j|), so that
  tr J = d_A for trace-preserving maps and N(rho) = tr_A[J (rho^T (x) I_B)].
* Composite systems are ordered R (x) A (x) B with row-major indexing,
  i.e. the joint basis index of (r, a) is r * d_A + a.
* All objects are immutable after construction; operations are pure
  functions and never mutate their inputs.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence, Union

import numpy as np

# Construction-time tolerances: one order above accumulated rounding for
# the dimensions this package targets (composite systems up to ~64).
HERMITIAN_ATOL = 1e-10
TRACE_ATOL = 1e-10
PSD_ATOL = 1e-9
CPTP_ATOL = 1e-9
UNITARY_ATOL = 1e-10
NORM_ATOL = 1e-12


def as_complex_matrix(m: np.ndarray) -> np.ndarray:
    """Validate and return a dense complex matrix (finite entries, 2-D)."""
    a = np.asarray(m, dtype=complex)
    if a.ndim != 2:
        raise ValueError(f"expected a 2-D array, got shape {a.shape}")
    if not np.all(np.isfinite(a.real)) or not np.all(np.isfinite(a.imag)):
        raise ValueError("matrix entries must be finite")
    return a


def hermiticity_deviation(m: np.ndarray) -> float:
    """Max-entry deviation of ``m`` from its own conjugate transpose."""
    return float(np.max(np.abs(m - m.conj().T), initial=0.0))


def min_eigenvalue(m: np.ndarray) -> float:
    """Smallest eigenvalue of a Hermitian matrix (symmetrized eigh)."""
    h = (m + m.conj().T) / 2.0
    return float(np.linalg.eigvalsh(h)[0])


@dataclass(frozen=True)
class PureState:
    """A normalized pure state |psi> = sum_i psi_i |i>."""

    amplitudes: np.ndarray

    def __post_init__(self):
        amps = np.asarray(self.amplitudes, dtype=complex).reshape(-1)
        if amps.size < 1:
            raise ValueError("pure state needs at least one amplitude")
        if not np.all(np.isfinite(amps.real)) or not np.all(np.isfinite(amps.imag)):
            raise ValueError("amplitudes must be finite")
        norm_sq = float(np.sum(np.abs(amps) ** 2))
        if abs(norm_sq - 1.0) > NORM_ATOL:
            raise ValueError(f"squared norm {norm_sq} differs from 1 beyond {NORM_ATOL}")
        object.__setattr__(self, "amplitudes", amps)

    @property
    def dim(self) -> int:
        return self.amplitudes.size

    def projector(self) -> np.ndarray:
        """Rank-1 projector |psi><psi| as a plain matrix."""
        return np.outer(self.amplitudes, self.amplitudes.conj())

    def to_density_matrix(self) -> "DensityMatrix":
        return DensityMatrix(self.projector())


@dataclass(frozen=True)
class DensityMatrix:
    """A d x d density matrix: Hermitian, unit trace, positive semidefinite."""

    matrix: np.ndarray
    atol: float = field(default=PSD_ATOL, compare=False)

    def __post_init__(self):
        m = as_complex_matrix(self.matrix)
        if m.shape[0] != m.shape[1]:
            raise ValueError(f"density matrix must be square, got {m.shape}")
        if hermiticity_deviation(m) > HERMITIAN_ATOL:
            raise ValueError("density matrix is not Hermitian within tolerance")
        tr = complex(np.trace(m))
        if abs(tr - 1.0) > TRACE_ATOL:
            raise ValueError(f"trace {tr} differs from 1 beyond {TRACE_ATOL}")
        if min_eigenvalue(m) < -self.atol:
            raise ValueError("density matrix has a negative eigenvalue beyond tolerance")
        object.__setattr__(self, "matrix", m)

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]


@dataclass(frozen=True)
class QuantumChannel:
    """A linear map A -> B stored by its unnormalized Choi matrix.

    With ``cptp_flag`` set the constructor enforces the CPTP invariants:
    the Choi matrix is Hermitian PSD and its partial trace over the output
    equals the identity on the input, both within ``atol``.
    """

    dim_in: int
    dim_out: int
    choi: np.ndarray
    cptp_flag: bool = True
    atol: float = field(default=CPTP_ATOL, compare=False)

    def __post_init__(self):
        if self.dim_in < 1 or self.dim_out < 1:
            raise ValueError("channel dimensions must be positive")
        j = as_complex_matrix(self.choi)
        d = self.dim_in * self.dim_out
        if j.shape != (d, d):
            raise ValueError(f"Choi matrix has shape {j.shape}, expected {(d, d)}")
        if self.cptp_flag:
            if hermiticity_deviation(j) > self.atol:
                raise ValueError("Choi matrix is not Hermitian within tolerance")
            if min_eigenvalue(j) < -self.atol:
                raise ValueError("Choi matrix is not PSD within tolerance")
            marginal = partial_trace(j, (self.dim_in, self.dim_out), (1,))
            if np.max(np.abs(marginal - np.eye(self.dim_in))) > self.atol:
                raise ValueError("channel is not trace preserving within tolerance")
        object.__setattr__(self, "choi", j)


def kron(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Kronecker product with the row-major composite indexing convention."""
    return np.kron(np.asarray(a, dtype=complex), np.asarray(b, dtype=complex))


def partial_trace(m: np.ndarray, dims: Sequence[int], traced: Iterable[int]) -> np.ndarray:
    """Trace out the subsystems listed in ``traced``.

    ``dims`` gives the dimension of every tensor factor of the square matrix
    ``m`` in order; kept subsystems retain their original ordering.
    """
    m = as_complex_matrix(m)
    dims = tuple(int(d) for d in dims)
    total = int(np.prod(dims))
    if m.shape != (total, total):
        raise ValueError(f"matrix shape {m.shape} does not match dims {dims}")
    traced = sorted(set(int(i) for i in traced))
    if traced and (traced[0] < 0 or traced[-1] >= len(dims)):
        raise ValueError(f"traced indices {traced} out of range for {len(dims)} subsystems")
    t = m.reshape(dims + dims)
    k = len(dims)
    for idx in reversed(traced):
        t = np.trace(t, axis1=idx, axis2=idx + k)
        k -= 1
    kept = [d for i, d in enumerate(dims) if i not in traced]
    dk = int(np.prod(kept)) if kept else 1
    return t.reshape(dk, dk)


def dephase(m: np.ndarray) -> np.ndarray:
    """Zero all off-diagonal entries in the reference basis."""
    m = as_complex_matrix(m)
    if m.shape[0] != m.shape[1]:
        raise ValueError("dephasing needs a square matrix")
    return np.diag(np.diagonal(m)).astype(complex)


def maximally_coherent_pure(m: int) -> PureState:
    """The uniform superposition over the first m basis states."""
    if m < 1:
        raise ValueError("rank must be at least 1")
    return PureState(np.full(m, 1.0 / np.sqrt(m)))


def maximally_coherent_state(m: int) -> DensityMatrix:
    """Rank-1 projector onto the uniform superposition; every entry is 1/m."""
    if m < 1:
        raise ValueError("rank must be at least 1")
    return DensityMatrix(np.full((m, m), 1.0 / m, dtype=complex))


def plus_state() -> PureState:
    """|+> = (|0> + |1>)/sqrt(2)."""
    return maximally_coherent_pure(2)


def rotation_unitary(theta: float) -> np.ndarray:
    """The 2x2 rotation [[cos, -sin], [sin, cos]] at angle ``theta``."""
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s], [s, c]], dtype=complex)


def choi_of_unitary(u: np.ndarray) -> QuantumChannel:
    """Choi matrix of the conjugation channel rho -> U rho U^dagger."""
    u = as_complex_matrix(u)
    d = u.shape[0]
    if u.shape != (d, d) or np.max(np.abs(u.conj().T @ u - np.eye(d))) > UNITARY_ATOL:
        raise ValueError("input is not unitary within tolerance")
    # J = |w><w| with w = sum_i |i> (x) U|i>, i.e. w[(i, b)] = U[b, i].
    w = u.T.reshape(-1)
    return QuantumChannel(d, d, np.outer(w, w.conj()))


def identity_channel(d: int) -> QuantumChannel:
    """The identity channel on a d-dimensional system."""
    return choi_of_unitary(np.eye(d))


def dephasing_channel(d: int) -> QuantumChannel:
    """The completely dephasing channel on a d-dimensional system."""
    if d < 1:
        raise ValueError("dimension must be positive")
    j = np.zeros((d * d, d * d), dtype=complex)
    for i in range(d):
        k = i * d + i
        j[k, k] = 1.0
    return QuantumChannel(d, d, j)


def channel_tensor_power(n: QuantumChannel, l: int) -> QuantumChannel:
    """Choi matrix of N^(x l), reordered to (all inputs)(all outputs)."""
    if l < 1:
        raise ValueError("tensor power must be at least 1")
    if l == 1:
        return n
    da, db = n.dim_in, n.dim_out
    big = n.choi
    for _ in range(l - 1):
        big = np.kron(big, n.choi)
    # big lives on (A1 B1)(A2 B2)...; permute to (A1..Al)(B1..Bl).
    dims = [da, db] * l
    t = big.reshape(dims + dims)
    perm_half = [2 * i for i in range(l)] + [2 * i + 1 for i in range(l)]
    perm = perm_half + [2 * l + p for p in perm_half]
    t = t.transpose(perm)
    dd = (da**l) * (db**l)
    return QuantumChannel(da**l, db**l, t.reshape(dd, dd), cptp_flag=n.cptp_flag)


def replacement_channel(sigma: DensityMatrix, dim_in: int | None = None) -> QuantumChannel:
    """The channel rho -> tr[rho] sigma; Choi matrix I_{dim_in} (x) sigma."""
    d_in = sigma.dim if dim_in is None else int(dim_in)
    if d_in < 1:
        raise ValueError("input dimension must be positive")
    return QuantumChannel(d_in, sigma.dim, kron(np.eye(d_in), sigma.matrix))


def apply_channel(n: QuantumChannel, rho: DensityMatrix) -> Union[DensityMatrix, np.ndarray]:
    """Apply a channel to a state: N(rho) = tr_A[J (rho^T (x) I_B)].

    Returns a DensityMatrix when the channel carries the CPTP flag and a
    plain Hermitian matrix otherwise.
    """
    if rho.dim != n.dim_in:
        raise ValueError(f"state dimension {rho.dim} does not match channel input {n.dim_in}")
    out = apply_choi(n.choi, n.dim_in, n.dim_out, rho.matrix)
    if n.cptp_flag:
        return DensityMatrix(out, atol=max(PSD_ATOL, n.atol))
    return out


def apply_choi(choi: np.ndarray, dim_in: int, dim_out: int, rho: np.ndarray) -> np.ndarray:
    """Raw Choi action tr_A[J (rho^T (x) I_B)] on a plain matrix."""
    j = choi.reshape(dim_in, dim_out, dim_in, dim_out)
    return np.einsum("abcd,ac->bd", j, np.asarray(rho, dtype=complex))


def trace_distance(a: DensityMatrix, b: DensityMatrix) -> float:
    """Half the trace norm of a - b."""
    if a.dim != b.dim:
        raise ValueError("trace distance needs equal dimensions")
    return half_trace_norm(a.matrix - b.matrix)


def half_trace_norm(delta: np.ndarray) -> float:
    """Half the sum of absolute eigenvalues of a Hermitian matrix."""
    h = (delta + delta.conj().T) / 2.0
    return float(0.5 * np.sum(np.abs(np.linalg.eigvalsh(h))))


def fidelity_with_pure(rho: DensityMatrix, psi: PureState) -> float:
    """<psi| rho |psi>."""
    if rho.dim != psi.dim:
        raise ValueError("fidelity needs equal dimensions")
    v = psi.amplitudes
    return float(np.real(v.conj() @ rho.matrix @ v))


def l1_coherence(rho: DensityMatrix) -> float:
    """Sum of the absolute values of all off-diagonal entries."""
    m = np.abs(rho.matrix)
    return float(np.sum(m) - np.sum(np.diagonal(m)))


def basis_state(d: int, i: int) -> DensityMatrix:
    """The incoherent basis projector |i><i| in dimension d."""
    if not 0 <= i < d:
        raise ValueError(f"basis index {i} out of range for dimension {d}")
    m = np.zeros((d, d), dtype=complex)
    m[i, i] = 1.0
    return DensityMatrix(m)
