"""Hermitian-block semidefinite programs over an interior-point conic backend.

A problem is a set of named Hermitian matrix variables (dimension 1 means
a real scalar), a real linear objective, linear matrix equalities, and
affine expressions required to be positive semidefinite. Complex Hermitian
blocks are embedded into real symmetric blocks of doubled dimension
[[Re, -Im], [Im, Re]] before being handed to the solver, so the conic core
works purely over the reals.

The backend is Clarabel, a primal-dual interior-point solver with a
homogeneous-embedding formulation that produces clean infeasibility
certificates. Solutions are re-certified here: equality residuals and
minimum PSD eigenvalues are recomputed from the returned assignments with
plain numpy, independent of the solver's own bookkeeping.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp
import clarabel

from .core import as_complex_matrix, hermiticity_deviation, partial_trace

Status = str  # "optimal" | "infeasible" | "unbounded" | "numerical_failure"

FARKAS_KEY = "farkas_certificate"


@dataclass(frozen=True)
class SolverConfig:
    """Certified tolerances and iteration budget for a solve."""

    tol_gap: float = 1e-8
    tol_feas: float = 1e-8
    max_iterations: int = 200

    def __post_init__(self):
        if self.tol_gap <= 0 or self.tol_feas <= 0:
            raise ValueError("tolerances must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be positive")


@dataclass
class SdpSolution:
    """Outcome of a solve with independently recomputed residuals."""

    status: Status
    primal_value: float
    dual_value: float
    assignments: dict[str, np.ndarray]
    max_equality_residual: float
    min_psd_eigenvalue: float
    iterations: int = 0

    @property
    def gap(self) -> float:
        return abs(self.primal_value - self.dual_value)

    def certifies(self, cfg: SolverConfig) -> bool:
        """True when the optimality contract holds at the config tolerances."""
        return (
            self.status == "optimal"
            and self.gap <= cfg.tol_gap * (1.0 + abs(self.primal_value))
            and self.max_equality_residual <= cfg.tol_feas
            and self.min_psd_eigenvalue >= -cfg.tol_feas
        )


class SolverFailure(RuntimeError):
    """Raised when a solve does not produce a certified optimal solution."""

    def __init__(self, message: str, solution: SdpSolution | None = None):
        super().__init__(message)
        self.solution = solution


# ---------------------------------------------------------------------------
# Affine expressions
# ---------------------------------------------------------------------------

# A term is a linear map applied to one variable; `apply` must accept both a
# single (d, d) matrix and a batched (..., d, d) stack.
@dataclass(frozen=True)
class LinearTerm:
    var: str
    apply: Callable[[np.ndarray], np.ndarray]
    is_identity: bool = False


@dataclass(frozen=True)
class AffineExpr:
    """const + sum of linear maps of variables, valued in dim x dim matrices."""

    dim: int
    terms: tuple[LinearTerm, ...]
    const: np.ndarray

    def __add__(self, other: "AffineExpr") -> "AffineExpr":
        if self.dim != other.dim:
            raise ValueError("dimension mismatch in expression sum")
        return AffineExpr(self.dim, self.terms + other.terms, self.const + other.const)

    def __sub__(self, other: "AffineExpr") -> "AffineExpr":
        return self + (-other)

    def __neg__(self) -> "AffineExpr":
        return self * (-1.0)

    def __mul__(self, c: float) -> "AffineExpr":
        c = float(c)
        terms = tuple(
            LinearTerm(t.var, _compose_scale(t.apply, c), t.is_identity and c == 1.0)
            for t in self.terms
        )
        return AffineExpr(self.dim, terms, c * self.const)

    __rmul__ = __mul__


def _compose_scale(f, c):
    return lambda m: c * f(m)


def const_expr(matrix: np.ndarray) -> AffineExpr:
    m = as_complex_matrix(matrix)
    return AffineExpr(m.shape[0], (), m)


def zero_expr(dim: int) -> AffineExpr:
    return AffineExpr(dim, (), np.zeros((dim, dim), dtype=complex))


def ptrace_expr(e: AffineExpr, dims: Sequence[int], traced: Sequence[int]) -> AffineExpr:
    """Partial trace of an expression over the listed subsystems."""
    dims = tuple(int(d) for d in dims)
    traced = tuple(sorted(set(traced)))
    kept = [d for i, d in enumerate(dims) if i not in traced]
    out = int(np.prod(kept)) if kept else 1

    def f(m):
        return _batched_ptrace(m, dims, traced)

    terms = tuple(LinearTerm(t.var, _compose(f, t.apply)) for t in e.terms)
    return AffineExpr(out, terms, partial_trace(e.const, dims, traced))


def _compose(f, g):
    return lambda m: f(g(m))


def _batched_ptrace(m, dims, traced):
    total = int(np.prod(dims))
    lead = m.shape[:-2]
    t = m.reshape(lead + dims + dims)
    k = len(dims)
    off = len(lead)
    for idx in reversed(traced):
        t = np.trace(t, axis1=off + idx, axis2=off + idx + k)
        k -= 1
    kept = [d for i, d in enumerate(dims) if i not in traced]
    dk = int(np.prod(kept)) if kept else 1
    return t.reshape(lead + (dk, dk))


def dephase_expr(e: AffineExpr) -> AffineExpr:
    """Zero the off-diagonal entries of an expression."""
    mask = np.eye(e.dim)

    def f(m):
        return m * mask

    terms = tuple(LinearTerm(t.var, _compose(f, t.apply)) for t in e.terms)
    return AffineExpr(e.dim, terms, e.const * mask)


def offdiag_expr(e: AffineExpr) -> AffineExpr:
    """The expression minus its diagonal part."""
    mask = 1.0 - np.eye(e.dim)

    def f(m):
        return m * mask

    terms = tuple(LinearTerm(t.var, _compose(f, t.apply)) for t in e.terms)
    return AffineExpr(e.dim, terms, e.const * mask)


def trace_expr(e: AffineExpr) -> AffineExpr:
    """Trace of the expression as a 1x1 expression."""

    def f(m):
        return np.trace(m, axis1=-2, axis2=-1)[..., None, None]

    terms = tuple(LinearTerm(t.var, _compose(f, t.apply)) for t in e.terms)
    return AffineExpr(1, terms, np.trace(e.const)[None, None].astype(complex))


def block_expr(e: AffineExpr, d_row: int, d_col: int, i: int, j: int) -> AffineExpr:
    """Extract the (i, j) block of size d_col from an expression on a
    (d_row * d_col)-dimensional composite system.

    Equals tr_first[ expr ( |i><j|^T (x) I ) ], i.e. the conditional output
    block of a Choi-like matrix.
    """
    r0, r1 = i * d_col, (i + 1) * d_col
    c0, c1 = j * d_col, (j + 1) * d_col

    def f(m):
        return m[..., r0:r1, c0:c1]

    terms = tuple(LinearTerm(t.var, _compose(f, t.apply)) for t in e.terms)
    return AffineExpr(d_col, terms, e.const[r0:r1, c0:c1])


def resource_contraction(e: AffineExpr, omega: np.ndarray, d_r: int, d_rest: int) -> AffineExpr:
    """tr_R[ expr (omega^T (x) I_rest) ] for a leading subsystem of dim d_r."""
    omega = as_complex_matrix(omega)

    def f(m):
        lead = m.shape[:-2]
        t = m.reshape(lead + (d_r, d_rest, d_r, d_rest))
        return np.einsum("...rmsn,rs->...mn", t, omega)

    terms = tuple(LinearTerm(t.var, _compose(f, t.apply)) for t in e.terms)
    const = f(e.const)
    return AffineExpr(d_rest, terms, const)


def scalar_times_matrix(scalar_expr: AffineExpr, matrix: np.ndarray) -> AffineExpr:
    """Multiply a 1x1 expression by a constant matrix."""
    if scalar_expr.dim != 1:
        raise ValueError("scalar_times_matrix needs a 1x1 expression")
    m = as_complex_matrix(matrix)

    def f(x):
        return x[..., 0, 0][..., None, None] * m

    terms = tuple(LinearTerm(t.var, _compose(f, t.apply)) for t in scalar_expr.terms)
    return AffineExpr(m.shape[0], terms, complex(scalar_expr.const[0, 0]) * m)


# ---------------------------------------------------------------------------
# Problem container
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class _Equality:
    expr: AffineExpr
    rhs: np.ndarray
    hermitian: bool
    label: str


class SdpProblem:
    """A Hermitian-block SDP: variables, objective, equalities, PSD cones."""

    def __init__(self):
        self.variables: dict[str, int] = {}
        self.equalities: list[_Equality] = []
        self.psd_constraints: list[tuple[AffineExpr, str]] = []
        self.objective: tuple[str, AffineExpr] | None = None

    def add_variable(self, name: str, dim: int) -> AffineExpr:
        """Declare a Hermitian variable block and return it as an expression."""
        if name in self.variables:
            raise ValueError(f"variable {name!r} declared twice")
        if dim < 1:
            raise ValueError("variable dimension must be positive")
        self.variables[name] = int(dim)
        return AffineExpr(dim, (LinearTerm(name, lambda m: m, is_identity=True),), np.zeros((dim, dim), dtype=complex))

    def add_equality(self, expr: AffineExpr, rhs: np.ndarray | float = 0.0, hermitian: bool = True, label: str = ""):
        if np.isscalar(rhs):
            rhs = complex(rhs) * np.eye(expr.dim)
        rhs = as_complex_matrix(rhs)
        if rhs.shape != (expr.dim, expr.dim):
            raise ValueError("equality right-hand side has wrong shape")
        if hermitian and hermiticity_deviation(rhs) > 1e-12:
            raise ValueError("equality constant must be Hermitian within 1e-12")
        self.equalities.append(_Equality(expr, rhs, hermitian, label))

    def add_psd(self, expr: AffineExpr, label: str = ""):
        self.psd_constraints.append((expr, label))

    def set_objective(self, sense: str, expr: AffineExpr):
        if sense not in ("min", "max"):
            raise ValueError("sense must be 'min' or 'max'")
        if expr.dim != 1:
            raise ValueError("objective must be a 1x1 expression")
        self.objective = (sense, expr)

    # -- validation ---------------------------------------------------------

    def validate(self):
        names = set(self.variables)
        for eq in self.equalities:
            for t in eq.expr.terms:
                if t.var not in names:
                    raise ValueError(f"equality references undeclared variable {t.var!r}")
        for expr, _ in self.psd_constraints:
            for t in expr.terms:
                if t.var not in names:
                    raise ValueError(f"PSD constraint references undeclared variable {t.var!r}")
        if self.objective is not None:
            for t in self.objective[1].terms:
                if t.var not in names:
                    raise ValueError(f"objective references undeclared variable {t.var!r}")

    def dump(self) -> str:
        """Debug serialization: variables and constraint shapes (no stability guarantee)."""
        lines = [f"variables: {self.variables}"]
        for k, eq in enumerate(self.equalities):
            lines.append(f"eq[{k}] {eq.label or '?'}: dim {eq.expr.dim}, hermitian={eq.hermitian}")
            lines.append(_matrix_lines(eq.rhs))
        for k, (expr, label) in enumerate(self.psd_constraints):
            lines.append(f"psd[{k}] {label or '?'}: dim {expr.dim}")
            lines.append(_matrix_lines(expr.const))
        if self.objective:
            lines.append(f"objective: {self.objective[0]} (1x1 expr)")
        return "\n".join(lines)


def _matrix_lines(m: np.ndarray) -> str:
    rows = [[[float(np.real(v)), float(np.imag(v))] for v in row] for row in np.asarray(m)]
    return "  const " + repr(rows)


# ---------------------------------------------------------------------------
# Hermitian <-> real-symmetric embedding
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class HermitianEmbedding:
    """The 2d x 2d real symmetric representation [[Re, -Im], [Im, Re]].

    PSD is preserved in both directions and the real spectrum is the
    Hermitian spectrum with every eigenvalue doubled.
    """

    dim: int

    @property
    def embedded_dim(self) -> int:
        return 2 * self.dim

    def to_real(self, h: np.ndarray) -> np.ndarray:
        h = as_complex_matrix(h)
        if h.shape != (self.dim, self.dim):
            raise ValueError("matrix does not match embedding dimension")
        re, im = h.real, h.imag
        return np.block([[re, -im], [im, re]])

    def to_complex(self, t: np.ndarray) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        d = self.dim
        if t.shape != (2 * d, 2 * d):
            raise ValueError("matrix does not match embedded dimension")
        re = (t[:d, :d] + t[d:, d:]) / 2.0
        im = (t[d:, :d] - t[:d, d:]) / 2.0
        return re + 1j * im


def embed_hermitian(d: int) -> HermitianEmbedding:
    """Descriptor for the doubling real-symmetric embedding of dimension d."""
    if d < 1:
        raise ValueError("dimension must be positive")
    return HermitianEmbedding(d)


# ---------------------------------------------------------------------------
# Lowering to the conic backend
# ---------------------------------------------------------------------------

# Hermitian parametrization of a d x d block: first the d diagonal entries,
# then (Re, Im) pairs for the strict upper triangle in row-major order.
#
# When every constant and every linear map in a problem is real valued, the
# feasible set is closed under entrywise conjugation and the objective is
# conjugation invariant, so a real symmetric optimum exists. The lowering
# detects this (exact-zero imaginary parts) and then drops the Im
# parameters and the dimension-doubling embedding, which shrinks the PSD
# cones by half and the interior-point iteration cost by an order of
# magnitude. Solutions are still certified against the original complex
# problem by check_feasibility.


def _param_count(d: int, real_mode: bool) -> int:
    return d * (d + 1) // 2 if real_mode else d * d


def _upper_pairs(d: int) -> list[tuple[int, int]]:
    return [(i, j) for i in range(d) for j in range(i + 1, d)]


def _real_param_rows(d: int) -> np.ndarray:
    """Indices of the diagonal and Re-pair rows inside the full image array."""
    pairs = d * (d - 1) // 2
    return np.concatenate([np.arange(d), d + 2 * np.arange(pairs)]).astype(int)


def matrix_from_params(theta: np.ndarray, d: int, real_mode: bool = False) -> np.ndarray:
    """Rebuild the Hermitian matrix from its real parameter vector."""
    h = np.zeros((d, d), dtype=complex)
    h[np.diag_indices(d)] = theta[:d]
    if real_mode:
        for k, (i, j) in enumerate(_upper_pairs(d)):
            h[i, j] = h[j, i] = theta[d + k]
    else:
        for k, (i, j) in enumerate(_upper_pairs(d)):
            re, im = theta[d + 2 * k], theta[d + 2 * k + 1]
            h[i, j] = re + 1j * im
            h[j, i] = re - 1j * im
    return h


def params_from_matrix(h: np.ndarray) -> np.ndarray:
    d = h.shape[0]
    theta = np.empty(d * d)
    theta[:d] = np.real(np.diagonal(h))
    for k, (i, j) in enumerate(_upper_pairs(d)):
        theta[d + 2 * k] = h[i, j].real
        theta[d + 2 * k + 1] = h[i, j].imag
    return theta


def _unit_batch(d: int) -> np.ndarray:
    """All matrix units E_uv stacked as a (d*d, d, d) batch."""
    u = np.zeros((d * d, d, d), dtype=complex)
    idx = np.arange(d * d)
    u[idx, idx // d, idx % d] = 1.0
    return u


_UNIT_CACHE: dict[int, np.ndarray] = {}


def _units(d: int) -> np.ndarray:
    if d not in _UNIT_CACHE:
        _UNIT_CACHE[d] = _unit_batch(d)
    return _UNIT_CACHE[d]


def _term_param_images(term_apply, d: int, out_dim: int) -> np.ndarray:
    """Images of every Hermitian basis matrix under a linear map.

    Returns a (d*d, out_dim, out_dim) complex array ordered like the
    parameter vector.
    """
    f_units = term_apply(_units(d))
    f_units = np.asarray(f_units, dtype=complex).reshape(d * d, out_dim, out_dim)
    images = np.empty_like(f_units)
    diag_idx = np.arange(d) * d + np.arange(d)
    images[:d] = f_units[diag_idx]
    pairs = _upper_pairs(d)
    if pairs:
        ii = np.array([i * d + j for i, j in pairs])
        jj = np.array([j * d + i for i, j in pairs])
        images[d::2] = f_units[ii] + f_units[jj]
        images[d + 1 :: 2] = 1j * f_units[ii] - 1j * f_units[jj]
    return images


def _svec_entries(n: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Upper-triangle (row, col) indices in column-major order plus weights."""
    rows, cols = [], []
    for j in range(n):
        for i in range(j + 1):
            rows.append(i)
            cols.append(j)
    rows = np.array(rows)
    cols = np.array(cols)
    w = np.where(rows == cols, 1.0, math.sqrt(2.0))
    return rows, cols, w


def _svec_real_embedding(values: np.ndarray, d: int) -> np.ndarray:
    """svec of the real embedding of a batch of complex d x d matrices.

    ``values`` has shape (..., d, d); the result has shape
    (..., (2d)(2d+1)/2) in Clarabel's scaled upper-triangle ordering.
    """
    n = 2 * d
    rows, cols, w = _svec_entries(n)
    re = values.real
    im = values.imag
    out = np.empty(values.shape[:-2] + (rows.size,))
    for k in range(rows.size):
        i, j = rows[k], cols[k]
        if j < d:
            v = re[..., i, j]
        elif i < d:
            v = -im[..., i, j - d]
        else:
            v = re[..., i - d, j - d]
        out[..., k] = w[k] * v
    return out


def _svec_real_sym(values: np.ndarray, d: int) -> np.ndarray:
    """svec of the real part of a batch of d x d matrices (no embedding)."""
    rows, cols, w = _svec_entries(d)
    re = values.real
    out = np.empty(values.shape[:-2] + (rows.size,))
    for k in range(rows.size):
        out[..., k] = w[k] * re[..., rows[k], cols[k]]
    return out


def _variable_psd_rows(d: int, col_offset: int, real_mode: bool):
    """Sparse svec rows for the constraint `variable >= 0` (identity map).

    Returns (row_idx, col_idx, data, n_rows) for -svec of the (embedded)
    variable as a function of its parameters.
    """
    r_idx, c_idx, data = [], [], []

    def put(svec_row, param, coeff):
        r_idx.append(svec_row)
        c_idx.append(col_offset + param)
        data.append(-coeff)  # A = -svec(linear part)

    if real_mode:
        rows_i, cols_j, w = _svec_entries(d)
        pos = {(int(rows_i[k]), int(cols_j[k])): k for k in range(rows_i.size)}
        for i in range(d):
            k = pos[(i, i)]
            put(k, i, 1.0)
        for p, (i, j) in enumerate(_upper_pairs(d)):
            k = pos[(i, j)]
            put(k, d + p, w[k])
        return r_idx, c_idx, data, rows_i.size

    n = 2 * d
    rows_i, cols_j, w = _svec_entries(n)
    pos = {(int(rows_i[k]), int(cols_j[k])): k for k in range(rows_i.size)}

    def entry(i, j):
        k = pos[(i, j)]
        return k, w[k]

    for i in range(d):  # diagonal params
        k, wt = entry(i, i)
        put(k, i, wt)
        k, wt = entry(d + i, d + i)
        put(k, i, wt)
    for p, (i, j) in enumerate(_upper_pairs(d)):
        pre = d + 2 * p
        k, wt = entry(i, j)  # Re block, upper
        put(k, pre, wt)
        k, wt = entry(d + i, d + j)  # Re block, lower copy
        put(k, pre, wt)
        k, wt = entry(i, d + j)  # -Im at (i, j+d)
        put(k, pre + 1, -wt)
        k, wt = entry(j, d + i)  # -Im at (j, i+d) = +Im S_ij
        put(k, pre + 1, wt)
    return r_idx, c_idx, data, rows_i.size


# ---------------------------------------------------------------------------
# Solve
# ---------------------------------------------------------------------------


def _column_layout(problem: SdpProblem, real_mode: bool) -> tuple[dict[str, int], int]:
    offsets = {}
    n = 0
    for name, d in problem.variables.items():
        offsets[name] = n
        n += _param_count(d, real_mode)
    return offsets, n


def _equality_row_indices(dim: int, hermitian: bool, real_mode: bool) -> list[tuple[int, int, str]]:
    rows = []
    if hermitian:
        for i in range(dim):
            for j in range(i, dim):
                rows.append((i, j, "re"))
        if not real_mode:
            for i in range(dim):
                for j in range(i + 1, dim):
                    rows.append((i, j, "im"))
    else:
        for i in range(dim):
            for j in range(dim):
                rows.append((i, j, "re"))
                if not real_mode:
                    rows.append((i, j, "im"))
    return rows


def _all_images(problem: SdpProblem):
    """Images of every Hermitian basis matrix under every constraint map.

    Also reports whether the entire problem is real valued: all constants
    real and all maps real coefficient, i.e. images of the real basis
    matrices are exactly real and images of the Im basis matrices exactly
    imaginary. In that case a real symmetric optimum exists.
    """
    cache: dict[int, np.ndarray] = {}
    real = True

    def images_for(term, out_dim):
        nonlocal real
        key = id(term)
        if key not in cache:
            dv = problem.variables[term.var]
            img = _term_param_images(term.apply, dv, out_dim)
            if np.any(img[:dv].imag) or np.any(img[dv::2].imag) or np.any(img[dv + 1 :: 2].real):
                real = False
            cache[key] = img
        return cache[key]

    for eq in problem.equalities:
        if np.any(eq.rhs.imag) or np.any(eq.expr.const.imag):
            real = False
        for t in eq.expr.terms:
            images_for(t, eq.expr.dim)
    for expr, _ in problem.psd_constraints:
        if np.any(expr.const.imag):
            real = False
        for t in expr.terms:
            images_for(t, expr.dim)
    if problem.objective is not None:
        expr = problem.objective[1]
        if np.any(expr.const.imag):
            real = False
        for t in expr.terms:
            images_for(t, expr.dim)
    return images_for, real


def _assemble(problem: SdpProblem, cfg: SolverConfig):
    """Lower the problem to Clarabel's (A, b, cones, q) data."""
    images_for, real_mode = _all_images(problem)
    offsets, n_cols = _column_layout(problem, real_mode)

    def param_block(images, dv):
        # slice and order the image rows to match the parameter layout
        if real_mode:
            return images[_real_param_rows(dv)]
        return images

    blocks_A: list[sp.csc_matrix] = []
    blocks_b: list[np.ndarray] = []
    cones: list = []

    # Equalities first (zero cone), then inequality cones.
    zero_rows = 0
    for eq in problem.equalities:
        d = eq.expr.dim
        row_spec = _equality_row_indices(d, eq.hermitian, real_mode)
        dense = np.zeros((len(row_spec), n_cols))
        for t in eq.expr.terms:
            dv = problem.variables[t.var]
            images = param_block(images_for(t, d), dv)
            c0 = offsets[t.var]
            np_v = _param_count(dv, real_mode)
            for r, (i, j, part) in enumerate(row_spec):
                col_vals = images[:, i, j]
                dense[r, c0 : c0 + np_v] += col_vals.real if part == "re" else col_vals.imag
        diff = eq.rhs - eq.expr.const
        b = np.array([diff[i, j].real if part == "re" else diff[i, j].imag for (i, j, part) in row_spec])
        # Drop rows whose coefficients are exactly zero; a zero row with a
        # nonzero constant is a trivially infeasible equation.
        live = np.array([np.any(dense[r] != 0.0) for r in range(dense.shape[0])])
        dead_bad = (~live) & (np.abs(b) > 1e-12)
        if np.any(dead_bad):
            return None, None, None, None, "trivially_infeasible"
        dense = dense[live]
        b = b[live]
        if dense.shape[0] == 0:
            continue
        scale = np.linalg.norm(dense) / math.sqrt(dense.shape[0])
        if scale > 0:
            dense = dense / scale
            b = b / scale
        blocks_A.append(sp.csc_matrix(dense))
        blocks_b.append(b)
        zero_rows += dense.shape[0]
    if zero_rows:
        cones.append(clarabel.ZeroConeT(zero_rows))

    # Nonnegative cone for 1x1 PSD constraints, in declaration order.
    nonneg: list[tuple[np.ndarray, float]] = []
    psd_blocks: list[tuple[AffineExpr, str]] = []
    for expr, label in problem.psd_constraints:
        if expr.dim == 1:
            row = np.zeros(n_cols)
            for t in expr.terms:
                dv = problem.variables[t.var]
                images = param_block(images_for(t, 1), dv)
                row[offsets[t.var] : offsets[t.var] + _param_count(dv, real_mode)] += images[:, 0, 0].real
            nonneg.append((row, float(expr.const[0, 0].real)))
        else:
            psd_blocks.append((expr, label))
    if nonneg:
        dense = -np.vstack([r for r, _ in nonneg])
        b = np.array([c for _, c in nonneg])
        blocks_A.append(sp.csc_matrix(dense))
        blocks_b.append(b)
        cones.append(clarabel.NonnegativeConeT(len(nonneg)))

    svec = _svec_real_sym if real_mode else _svec_real_embedding
    cone_dim = (lambda d: d) if real_mode else (lambda d: 2 * d)
    for expr, label in psd_blocks:
        d = expr.dim
        n_rows = cone_dim(d) * (cone_dim(d) + 1) // 2
        is_bare_variable = (
            len(expr.terms) == 1
            and expr.terms[0].is_identity
            and problem.variables[expr.terms[0].var] == d
            and not np.any(expr.const)
        )
        if is_bare_variable:
            r_idx, c_idx, data, nr = _variable_psd_rows(d, offsets[expr.terms[0].var], real_mode)
            a_blk = sp.csc_matrix((data, (r_idx, c_idx)), shape=(nr, n_cols))
            b_blk = np.zeros(nr)
        else:
            dense = np.zeros((n_rows, n_cols))
            for t in expr.terms:
                dv = problem.variables[t.var]
                images = param_block(images_for(t, d), dv)
                svec_cols = svec(images, d)  # (params, n_rows)
                dense[:, offsets[t.var] : offsets[t.var] + _param_count(dv, real_mode)] -= svec_cols.T
            b_blk = svec(expr.const, d)
            # RMS row norm: scaling by the full Frobenius norm would shrink
            # the block and hide unscaled residuals from the stopping test.
            scale = float(np.linalg.norm(dense)) / math.sqrt(n_rows)
            if scale > 0:
                dense = dense / scale
                b_blk = b_blk / scale
            a_blk = sp.csc_matrix(dense)
        blocks_A.append(a_blk)
        blocks_b.append(b_blk)
        cones.append(clarabel.PSDTriangleConeT(cone_dim(d)))

    if not blocks_A:
        raise ValueError("problem has no constraints")
    A = sp.vstack(blocks_A, format="csc")
    b = np.concatenate(blocks_b)

    # Objective: min q^T theta (+ constant); max is solved as min of -q.
    q = np.zeros(n_cols)
    obj_const = 0.0
    sense_sign = 1.0
    if problem.objective is not None:
        sense, expr = problem.objective
        sense_sign = -1.0 if sense == "max" else 1.0
        for t in expr.terms:
            dv = problem.variables[t.var]
            images = param_block(images_for(t, 1), dv)
            q[offsets[t.var] : offsets[t.var] + _param_count(dv, real_mode)] += sense_sign * images[:, 0, 0].real
        obj_const = float(expr.const[0, 0].real)
    return A, b, cones, (q, obj_const, sense_sign, real_mode), None


def _run_clarabel(A, b, cones, q, cfg: SolverConfig, tighten: float, tweaks: dict | None = None):
    settings = clarabel.DefaultSettings()
    settings.verbose = False
    settings.max_iter = cfg.max_iterations
    tol = max(min(cfg.tol_gap, cfg.tol_feas) * tighten, 1e-13)
    settings.tol_gap_abs = tol
    settings.tol_gap_rel = tol
    settings.tol_feas = tol
    # Constraint blocks are already Frobenius normalized during assembly;
    # the built-in Ruiz equilibration on top of that destabilizes the
    # terminal iterations on the channel-simulation programs.
    settings.equilibrate_enable = False
    for key, value in (tweaks or {}).items():
        setattr(settings, key, value)
    P = sp.csc_matrix((q.size, q.size))
    solver = clarabel.DefaultSolver(P, q, A, b, cones, settings)
    return solver.solve()


# Retry ladder: interior-point stalls near degenerate optimal faces are
# sensitive to the step fraction and the static KKT regularization, so the
# retries vary those rather than just the tolerance.
_ATTEMPTS: tuple[tuple[float, dict], ...] = (
    (0.02, {}),
    (0.02, {"max_step_fraction": 0.95}),
    (0.02, {"static_regularization_enable": False}),
    (2e-4, {"max_step_fraction": 0.90, "static_regularization_enable": False}),
)


def solve(problem: SdpProblem, cfg: SolverConfig | None = None) -> SdpSolution:
    """Solve the problem and return a solution with recomputed residuals.

    Status "optimal" certifies |primal - dual| <= tol_gap * (1 + |primal|),
    max equality residual <= tol_feas and min PSD eigenvalue >= -tol_feas,
    all recomputed from the assignments. An infeasible problem carries its
    Farkas-type certificate vector under ``assignments["farkas_certificate"]``.
    """
    cfg = cfg or SolverConfig()
    problem.validate()
    A, b, cones, obj, early = _assemble(problem, cfg)
    if early == "trivially_infeasible":
        return SdpSolution(
            status="infeasible",
            primal_value=math.nan,
            dual_value=math.nan,
            assignments={FARKAS_KEY: np.zeros(0)},
            max_equality_residual=math.nan,
            min_psd_eigenvalue=math.nan,
        )
    q, obj_const, sense_sign, real_mode = obj

    sol = None
    for tighten, tweaks in _ATTEMPTS:
        sol = _run_clarabel(A, b, cones, q, cfg, tighten, tweaks)
        status = str(sol.status)
        if status in ("Solved", "AlmostSolved"):
            candidate = _extract(problem, sol, obj_const, sense_sign, real_mode)
            if candidate.certifies(cfg):
                return candidate
            continue  # retry with adjusted solver settings
        break

    status = str(sol.status)
    if status in ("PrimalInfeasible", "AlmostPrimalInfeasible"):
        return SdpSolution(
            status="infeasible",
            primal_value=math.nan,
            dual_value=math.nan,
            assignments={FARKAS_KEY: np.asarray(sol.z)},
            max_equality_residual=math.nan,
            min_psd_eigenvalue=math.nan,
            iterations=sol.iterations,
        )
    if status in ("DualInfeasible", "AlmostDualInfeasible"):
        return SdpSolution(
            status="unbounded",
            primal_value=math.nan,
            dual_value=math.nan,
            assignments={FARKAS_KEY: np.asarray(sol.x)},
            max_equality_residual=math.nan,
            min_psd_eigenvalue=math.nan,
            iterations=sol.iterations,
        )
    if status in ("Solved", "AlmostSolved"):
        # Converged for the backend but failed our certification.
        failed = _extract(problem, sol, obj_const, sense_sign, real_mode)
        failed.status = "numerical_failure"
        return failed
    return SdpSolution(
        status="numerical_failure",
        primal_value=math.nan,
        dual_value=math.nan,
        assignments={},
        max_equality_residual=math.nan,
        min_psd_eigenvalue=math.nan,
        iterations=sol.iterations,
    )


def _extract(problem: SdpProblem, sol, obj_const: float, sense_sign: float, real_mode: bool) -> SdpSolution:
    offsets, _ = _column_layout(problem, real_mode)
    x = np.asarray(sol.x)
    assignments = {}
    for name, d in problem.variables.items():
        theta = x[offsets[name] : offsets[name] + _param_count(d, real_mode)]
        assignments[name] = matrix_from_params(theta, d, real_mode)
    max_eq, min_eig = check_feasibility(problem, assignments)
    return SdpSolution(
        status="optimal",
        primal_value=sense_sign * float(sol.obj_val) + obj_const,
        dual_value=sense_sign * float(sol.obj_val_dual) + obj_const,
        assignments=assignments,
        max_equality_residual=max_eq,
        min_psd_eigenvalue=min_eig,
        iterations=sol.iterations,
    )


def evaluate_expr(expr: AffineExpr, assignments: dict[str, np.ndarray]) -> np.ndarray:
    """Numeric value of an affine expression under an assignment."""
    out = expr.const.copy()
    for t in expr.terms:
        if t.var not in assignments:
            raise KeyError(f"assignment for variable {t.var!r} is missing")
        out = out + t.apply(np.asarray(assignments[t.var], dtype=complex))
    return out


def check_feasibility(problem: SdpProblem, assignments: dict[str, np.ndarray]) -> tuple[float, float]:
    """Exact residuals of an assignment: no tolerance is applied.

    Returns (max equality residual, min PSD eigenvalue).
    """
    max_eq = 0.0
    for eq in problem.equalities:
        val = evaluate_expr(eq.expr, assignments)
        max_eq = max(max_eq, float(np.max(np.abs(val - eq.rhs), initial=0.0)))
    min_eig = math.inf
    for expr, _ in problem.psd_constraints:
        val = evaluate_expr(expr, assignments)
        if expr.dim == 1:
            min_eig = min(min_eig, float(val[0, 0].real))
        else:
            h = (val + val.conj().T) / 2.0
            min_eig = min(min_eig, float(np.linalg.eigvalsh(h)[0]))
    if min_eig is math.inf:
        min_eig = 0.0
    return max_eq, min_eig
