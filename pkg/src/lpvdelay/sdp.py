"""Linear-objective SDPs with affine matrix-inequality blocks.

Problems have the form

    minimize    c' x
    subject to  F0_b + sum_i x_i F_i_b  <=  -eps_b I     for every block b

Matrix-valued decision variables are flattened into scalar entries by
:class:`ProblemBuilder`; symmetric variables are parametrized by their upper
triangle so no extra symmetry ties are needed.  The numerical work is done by
cvxopt's primal-dual interior-point SDP solver.
"""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

log = logging.getLogger(__name__)

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
NUMERICAL_FAILURE = "numerical_failure"

EPS_STRICT = 1e-7


class Affine:
    """Matrix-valued affine function of the decision vector.

    ``coef[0]`` is the constant term and ``coef[1 + i]`` multiplies x_i.  The
    number of variables is fixed at creation; builders pad as they grow.
    """

    __slots__ = ("coef",)
    __array_ufunc__ = None  # make numpy defer to the reflected operators

    def __init__(self, coef: np.ndarray):
        self.coef = coef

    @classmethod
    def const(cls, M, nvar: int) -> "Affine":
        M = np.atleast_2d(np.asarray(M, dtype=float))
        coef = np.zeros((nvar + 1,) + M.shape)
        coef[0] = M
        return cls(coef)

    @property
    def nvar(self) -> int:
        return self.coef.shape[0] - 1

    @property
    def shape(self) -> tuple[int, int]:
        return self.coef.shape[1:]

    def pad(self, nvar: int) -> "Affine":
        if nvar == self.nvar:
            return self
        coef = np.zeros((nvar + 1,) + self.shape)
        coef[: self.coef.shape[0]] = self.coef
        return Affine(coef)

    @property
    def T(self) -> "Affine":
        return Affine(self.coef.transpose(0, 2, 1))

    def __add__(self, other):
        if isinstance(other, Affine):
            n = max(self.nvar, other.nvar)
            return Affine(self.pad(n).coef + other.pad(n).coef)
        out = self.coef.copy()
        out[0] = out[0] + np.asarray(other, dtype=float)
        return Affine(out)

    __radd__ = __add__

    def __neg__(self):
        return Affine(-self.coef)

    def __sub__(self, other):
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, a):
        if np.ndim(a) == 0:
            return Affine(self.coef * float(a))
        # 1x1 affine scalar times a constant matrix
        if self.shape != (1, 1):
            raise ValueError("only a 1x1 affine expression can scale a matrix")
        M = np.atleast_2d(np.asarray(a, dtype=float))
        return Affine(self.coef[:, 0, 0][:, None, None] * M[None])

    __rmul__ = __mul__

    def __matmul__(self, M):
        return Affine(self.coef @ np.asarray(M, dtype=float))

    def __rmatmul__(self, M):
        return Affine(np.asarray(M, dtype=float) @ self.coef)

    def sym(self) -> "Affine":
        """X + X'."""
        return self + self.T

    def __getitem__(self, idx) -> "Affine":
        rows, cols = idx
        return Affine(self.coef[:, rows, cols])

    def value(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return self.coef[0] + np.tensordot(x[: self.nvar], self.coef[1:], axes=1)


def block(rows: Sequence[Sequence], nvar: int | None = None) -> Affine:
    """``np.block`` for a mix of Affine and constant arrays (None = zero)."""
    if nvar is None:
        nvar = max(b.nvar for row in rows for b in row if isinstance(b, Affine))
    heights = []
    for row in rows:
        h = next((_shape(b)[0] for b in row if b is not None), None)
        if h is None:
            raise ValueError("block row without a sized entry")
        heights.append(h)
    widths = []
    for j in range(len(rows[0])):
        w = next((_shape(row[j])[1] for row in rows if row[j] is not None), None)
        if w is None:
            raise ValueError("block column without a sized entry")
        widths.append(w)
    out_rows = []
    for i, row in enumerate(rows):
        parts = []
        for j, b in enumerate(row):
            if b is None:
                parts.append(np.zeros((nvar + 1, heights[i], widths[j])))
            elif isinstance(b, Affine):
                parts.append(b.pad(nvar).coef)
            else:
                parts.append(Affine.const(b, nvar).coef)
            if parts[-1].shape[1:] != (heights[i], widths[j]):
                raise ValueError(f"block ({i},{j}) has shape {parts[-1].shape[1:]}, "
                                 f"expected {(heights[i], widths[j])}")
        out_rows.append(np.concatenate(parts, axis=2))
    return Affine(np.concatenate(out_rows, axis=1))


def _shape(b):
    return b.shape if isinstance(b, Affine) else np.atleast_2d(np.asarray(b)).shape


@dataclass
class LmiBlock:
    """F0 + sum x_i F_i <= -eps * I, stored with F as an Affine."""

    F: Affine
    name: str = ""
    eps: float = EPS_STRICT
    scale: float = 1.0

    @property
    def size(self) -> int:
        return self.F.shape[0]


@dataclass
class SdpProblem:
    nvar: int
    c: np.ndarray
    blocks: list[LmiBlock]
    names: dict[str, object] = field(default_factory=dict)

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float)
        if self.c.shape != (self.nvar,):
            raise ValueError(f"objective has length {self.c.size}, expected {self.nvar}")
        for b in self.blocks:
            b.F = b.F.pad(self.nvar)
            if b.F.shape[0] != b.F.shape[1]:
                raise ValueError(f"block {b.name!r} is not square")
            if not np.allclose(b.F.coef, b.F.coef.transpose(0, 2, 1), atol=1e-12 * max(1.0, np.abs(b.F.coef).max())):
                raise ValueError(f"block {b.name!r} is not symmetric")


@dataclass
class SdpSolution:
    status: str
    x: np.ndarray | None
    objective: float
    worst_margin: float
    info: dict = field(default_factory=dict)


class ProblemBuilder:
    """Allocates scalar variables for matrix unknowns and collects LMI blocks."""

    def __init__(self):
        self.nvar = 0
        self.blocks: list[LmiBlock] = []
        self.objective: dict[int, float] = {}
        self.variables: dict[str, tuple[str, tuple[int, int], np.ndarray]] = {}

    def _alloc(self, count: int) -> np.ndarray:
        idx = np.arange(self.nvar, self.nvar + count)
        self.nvar += count
        return idx

    def scalar(self, name: str) -> Affine:
        idx = self._alloc(1)
        self.variables[name] = ("scalar", (1, 1), idx)
        return self._expr_from_pattern([(0, 0, idx[0], 1.0)], (1, 1))

    def symmetric(self, name: str, n: int) -> Affine:
        iu = np.triu_indices(n)
        idx = self._alloc(len(iu[0]))
        pattern = []
        for (i, j), v in zip(zip(*iu), idx):
            pattern.append((i, j, v, 1.0))
            if i != j:
                pattern.append((j, i, v, 1.0))
        self.variables[name] = ("symmetric", (n, n), idx)
        return self._expr_from_pattern(pattern, (n, n))

    def full(self, name: str, m: int, n: int) -> Affine:
        idx = self._alloc(m * n)
        pattern = [(i, j, idx[i * n + j], 1.0) for i in range(m) for j in range(n)]
        self.variables[name] = ("full", (m, n), idx)
        return self._expr_from_pattern(pattern, (m, n))

    def _expr_from_pattern(self, pattern, shape) -> Affine:
        coef = np.zeros((self.nvar + 1,) + shape)
        for i, j, v, a in pattern:
            coef[1 + v, i, j] += a
        return Affine(coef)

    def minimize(self, expr: Affine, weight: float = 1.0):
        """Add weight * expr (a 1x1 affine) to the objective."""
        for i in range(expr.nvar):
            a = expr.coef[1 + i, 0, 0]
            if a:
                self.objective[i] = self.objective.get(i, 0.0) + weight * a

    def lmi(self, F: Affine, name: str = "", eps: float | None = None) -> LmiBlock:
        """Require F < 0, encoded as F <= -eps I after normalization."""
        F = Affine(0.5 * (F.coef + F.coef.transpose(0, 2, 1)))
        const = np.abs(F.coef[0]).max()
        scale = const if const > 0 else max(np.abs(F.coef).max(), 1.0)
        blk = LmiBlock(F, name, EPS_STRICT if eps is None else eps, scale)
        self.blocks.append(blk)
        return blk

    def build(self) -> SdpProblem:
        c = np.zeros(self.nvar)
        for i, a in self.objective.items():
            c[i] = a
        prob = SdpProblem(self.nvar, c, self.blocks, names=dict(self.variables))
        return prob

    def value(self, name: str, x: np.ndarray) -> np.ndarray:
        kind, (m, n), idx = self.variables[name]
        if kind == "scalar":
            return np.array(x[idx[0]])
        if kind == "full":
            return np.asarray(x[idx]).reshape(m, n)
        out = np.zeros((n, n))
        iu = np.triu_indices(n)
        out[iu] = x[idx]
        return out + np.triu(out, 1).T


def check_solution(problem: SdpProblem, x, tol: float | None = None) -> list[float]:
    """Largest eigenvalue of each scale-normalized block F(x) / scale.

    Uses LAPACK's symmetric eigensolver, independent of the SDP solver.
    """
    x = np.asarray(x, dtype=float)
    if x.shape != (problem.nvar,):
        raise ValueError(f"x has length {x.size}, expected {problem.nvar}")
    out = []
    for b in problem.blocks:
        M = b.F.value(x) / b.scale
        out.append(float(np.linalg.eigvalsh(0.5 * (M + M.T))[-1]))
    return out


def solve_sdp(problem: SdpProblem, abstol: float = 1e-7, reltol: float = 1e-7,
              feastol: float = 1e-8, maxiters: int = 100, feas_tol: float = 1e-6) -> SdpSolution:
    """Solve with cvxopt; never returns a silent failure."""
    import cvxopt
    from cvxopt import solvers

    if problem.nvar == 0:
        margins = check_solution(problem, np.zeros(0))
        ok = all(m <= 0 for m in margins)
        return SdpSolution(OPTIMAL if ok else INFEASIBLE, np.zeros(0), 0.0, max(margins, default=0.0))

    Gs, hs = [], []
    for b in problem.blocks:
        m = b.size
        F = b.F.coef / b.scale
        # cvxopt: sum x_i G_i + S = h, S >= 0, i.e. sum x_i F_i <= -F0 - eps I
        G = F[1:].transpose(0, 2, 1).reshape(problem.nvar, m * m).T
        h = -F[0] - b.eps * np.eye(m)
        Gs.append(cvxopt.matrix(np.ascontiguousarray(G)))
        hs.append(cvxopt.matrix(np.ascontiguousarray(h)))
    c = cvxopt.matrix(problem.c)
    opts = {"show_progress": bool(os.environ.get("LPVDELAY_SDP_VERBOSE")), "abstol": abstol,
            "reltol": reltol, "feastol": feastol, "maxiters": maxiters}
    try:
        sol = solvers.sdp(c, Gs=Gs, hs=hs, options=opts)
    except (ValueError, ArithmeticError) as exc:
        log.warning("SDP solver breakdown: %s", exc)
        return SdpSolution(NUMERICAL_FAILURE, None, float("nan"), float("nan"), {"error": str(exc)})

    info = {k: sol.get(k) for k in ("status", "gap", "relative gap", "primal infeasibility",
                                    "dual infeasibility", "iterations")}
    status = sol["status"]
    if status == "primal infeasible":
        return SdpSolution(INFEASIBLE, None, float("inf"), float("nan"), info)
    if status == "dual infeasible":
        info["error"] = "objective unbounded below"
        return SdpSolution(NUMERICAL_FAILURE, None, float("-inf"), float("nan"), info)
    if sol["x"] is None:
        return SdpSolution(NUMERICAL_FAILURE, None, float("nan"), float("nan"), info)
    x = np.array(sol["x"]).ravel()
    margins = check_solution(problem, x)
    worst = max(margins, default=0.0)
    obj = float(problem.c @ x)
    if status == "optimal" and worst <= feas_tol:
        return SdpSolution(OPTIMAL, x, obj, worst, info)
    if status == "unknown":
        # Stalled iterate: accept only if it is feasible and the gap closed.
        gap = info.get("relative gap")
        if worst <= feas_tol and gap is not None and abs(gap) < 1e-5:
            info["inaccurate"] = True
            return SdpSolution(OPTIMAL, x, obj, worst, info)
    log.warning("SDP solver ended with status %s (worst margin %.3g)", status, worst)
    return SdpSolution(NUMERICAL_FAILURE, x, obj, worst, info)


def dump_sparse(problem: SdpProblem, path, tol: float = 0.0) -> None:
    """Write 'block var row col value' lines; var 0 is the constant term.

    Only the upper triangle of each (symmetric) matrix is written.
    """
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# nvar {problem.nvar}\n# objective {' '.join(repr(float(v)) for v in problem.c)}\n")
        for bi, b in enumerate(problem.blocks):
            coef = b.F.coef
            for v in range(coef.shape[0]):
                rows, cols = np.nonzero(np.triu(np.abs(coef[v]) > tol))
                for i, j in zip(rows, cols):
                    fh.write(f"{bi} {v} {i} {j} {float(coef[v, i, j])!r}\n")


def solve_sdp_cvxpy(problem: SdpProblem, solver: str = "CLARABEL", feas_tol: float = 1e-6,
                    **solver_kw) -> SdpSolution:
    """Same contract as :func:`solve_sdp`, routed through cvxpy to another conic solver."""
    import cvxpy as cp

    x = cp.Variable(problem.nvar)
    cons = []
    for b in problem.blocks:
        m = b.size
        F = b.F.coef / b.scale
        expr = F[0] + (F[1:].reshape(problem.nvar, m * m).T @ x).reshape((m, m), order="C")
        expr = 0.5 * (expr + expr.T)
        cons.append(expr << -b.eps * np.eye(m))
    prob = cp.Problem(cp.Minimize(problem.c @ x), cons)
    try:
        prob.solve(solver=solver, **solver_kw)
    except cp.error.SolverError as exc:
        return SdpSolution(NUMERICAL_FAILURE, None, float("nan"), float("nan"), {"error": str(exc)})
    info = {"status": prob.status, "solver": solver}
    if prob.status in (cp.INFEASIBLE, cp.INFEASIBLE_INACCURATE):
        return SdpSolution(INFEASIBLE, None, float("inf"), float("nan"), info)
    if x.value is None:
        return SdpSolution(NUMERICAL_FAILURE, None, float("nan"), float("nan"), info)
    xv = np.asarray(x.value, dtype=float)
    worst = max(check_solution(problem, xv), default=0.0)
    status = OPTIMAL if prob.status in (cp.OPTIMAL, cp.OPTIMAL_INACCURATE) and worst <= feas_tol else NUMERICAL_FAILURE
    return SdpSolution(status, xv, float(problem.c @ xv), worst, info)
