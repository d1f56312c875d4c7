"""Gridded parameter-dependent LMI synthesis of the delay-dependent controller.

Decision variables, all expanded over monomial bases:

* ``R(rho)``   symmetric, size n_x + n_psi (inverse Lyapunov matrix)
* ``Xh(rho)``  full n_x x n_x slack matrix
* ``Xh_k(rho)`` symmetric n_x x n_x, one per multiplier (inverse IQC scalings)

The controller variables are eliminated by projecting onto the kernel of
[B_aug2' 0 0 0 D_aug12'] and recovered afterwards, grid point by grid point.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
import scipy.linalg
from scipy.interpolate import RegularGridInterpolator

from . import sdp
from .model import AugmentedSystem, DelayedLpvPlant, build_augmented, close_loop
from .params import BasisFunction, ParameterDomain, make_grid, monomial_basis, rate_vertices

log = logging.getLogger(__name__)

NULLSPACE_TOL = 1e-9
GAIN_NORM_CAP = 1e4
R_FLOOR_CAP = 1e3


class SynthesisError(RuntimeError):
    """Raised when a synthesis or recovery SDP is infeasible or fails."""

    def __init__(self, message: str, status: str = sdp.INFEASIBLE):
        super().__init__(message)
        self.status = status


@dataclass(frozen=True)
class SynthesisConfig:
    r_basis: tuple[BasisFunction, ...] = (BasisFunction((0,)),)
    x_basis: tuple[BasisFunction, ...] = (BasisFunction((0,)),)
    grid_counts: tuple[int, ...] = (11,)
    gamma_mode: str = "minimize"
    gamma: float | None = None
    margin: float = 0.01
    condition: bool = True

    def __post_init__(self):
        object.__setattr__(self, "r_basis", tuple(self.r_basis))
        object.__setattr__(self, "x_basis", tuple(self.x_basis))
        object.__setattr__(self, "grid_counts", tuple(np.atleast_1d(self.grid_counts).astype(int).tolist()))
        if not any(b.is_constant for b in self.r_basis):
            raise ValueError("the R basis must contain the constant function")
        if not self.x_basis:
            raise ValueError("the X basis must be nonempty")
        if self.gamma_mode not in ("minimize", "fixed"):
            raise ValueError(f"unknown gamma mode {self.gamma_mode!r}")
        if self.gamma_mode == "fixed" and not (self.gamma and self.gamma > 0):
            raise ValueError("fixed gamma mode needs a positive gamma")
        if self.margin < 0:
            raise ValueError("recovery margin must be nonnegative")

    @classmethod
    def quadratic(cls, dim: int = 1, **kw) -> "SynthesisConfig":
        c = BasisFunction.constant(dim)
        return cls(r_basis=(c,), x_basis=(c,), **kw)

    @classmethod
    def parameter_dependent(cls, dim: int = 1, r_degree: int = 2, x_degree: int = 1, **kw) -> "SynthesisConfig":
        return cls(r_basis=tuple(monomial_basis(dim, r_degree)),
                   x_basis=tuple(monomial_basis(dim, x_degree)), **kw)


def nullspace_basis(M, tol: float = NULLSPACE_TOL) -> np.ndarray:
    """Orthonormal basis of ker(M) from the SVD; columns span the kernel."""
    M = np.atleast_2d(np.asarray(M, dtype=float))
    n = M.shape[1]
    if M.size == 0:
        return np.eye(n)
    _, s, Vt = np.linalg.svd(M)
    smax = s[0] if s.size else 0.0
    rank = int(np.sum(s > tol * smax)) if smax > 0 else 0
    return Vt[rank:].T.copy()


def _expand(coeffs: Sequence, basis: Sequence[BasisFunction], rho):
    out = None
    for b, C in zip(basis, coeffs):
        term = b(rho) * C
        out = term if out is None else out + term
    return out


def _rate_term(coeffs: Sequence, basis: Sequence[BasisFunction], rho, nu):
    """sum_j nu_j dM/drho_j for M expanded over ``basis``; None if identically zero."""
    out = None
    for b, C in zip(basis, coeffs):
        a = sum(nu[j] * b.derivative(rho, j) for j in range(len(nu)))
        if a != 0.0:
            term = a * C
            out = term if out is None else out + term
    return out


@dataclass
class GainSchedule:
    """Gains on a tensor grid, multilinearly interpolated in between."""

    axes: tuple[np.ndarray, ...]
    points: list[np.ndarray]
    F_c: list[np.ndarray]
    H_c: list[np.ndarray]

    def __post_init__(self):
        shape = tuple(len(a) for a in self.axes)
        self._shape = shape
        stacked = np.stack([np.hstack([F, H]) for F, H in zip(self.F_c, self.H_c)])
        self._n_cl = self.F_c[0].shape[1]
        grid_vals = stacked.reshape(shape + stacked.shape[1:])
        live = [i for i, a in enumerate(self.axes) if len(a) > 1]
        self._live = live
        if live:
            sub = grid_vals
            for i in sorted(set(range(len(shape))) - set(live), reverse=True):
                sub = np.take(sub, 0, axis=i)
            self._interp = RegularGridInterpolator(tuple(self.axes[i] for i in live), sub)
        else:
            self._const = grid_vals.reshape(stacked.shape[1:])

    def __call__(self, rho) -> tuple[np.ndarray, np.ndarray]:
        rho = np.atleast_1d(np.asarray(rho, dtype=float))
        if self._live:
            q = np.array([np.clip(rho[i], self.axes[i][0], self.axes[i][-1]) for i in self._live])
            K = self._interp(q[None, :])[0]
        else:
            K = self._const
        return K[:, : self._n_cl], K[:, self._n_cl:]

    def evaluate_many(self, rhos) -> tuple[np.ndarray, np.ndarray]:
        """Vectorized ``__call__`` over rows of ``rhos``; returns stacked (F_c, H_c)."""
        rhos = np.atleast_2d(np.asarray(rhos, dtype=float))
        if self._live:
            q = np.stack([np.clip(rhos[:, i], self.axes[i][0], self.axes[i][-1]) for i in self._live],
                         axis=1)
            K = self._interp(q)
        else:
            K = np.broadcast_to(self._const, (len(rhos),) + self._const.shape)
        return K[:, :, : self._n_cl], K[:, :, self._n_cl:]

    def to_json(self) -> dict:
        return {
            "axes": [a.tolist() for a in self.axes],
            "points": [p.tolist() for p in self.points],
            "F_c": [F.tolist() for F in self.F_c],
            "H_c": [H.tolist() for H in self.H_c],
        }

    @classmethod
    def from_json(cls, data) -> "GainSchedule":
        return cls(tuple(np.asarray(a, dtype=float) for a in data["axes"]),
                   [np.asarray(p, dtype=float) for p in data["points"]],
                   [np.asarray(F, dtype=float) for F in data["F_c"]],
                   [np.asarray(H, dtype=float) for H in data["H_c"]])


def grid_axes(domain: ParameterDomain, counts) -> tuple[np.ndarray, ...]:
    counts = np.broadcast_to(np.asarray(counts, dtype=int), (domain.dim,))
    return tuple(np.linspace(lo, hi, n) if n > 1 else np.array([lo])
                 for n, (lo, hi) in zip(counts, domain.box))


@dataclass
class SynthesisResult:
    gamma: float
    R: list[np.ndarray]
    Xh: list[np.ndarray]
    Xh_k: list[list[np.ndarray]]
    r_basis: tuple[BasisFunction, ...]
    x_basis: tuple[BasisFunction, ...]
    grid: list[np.ndarray]
    axes: tuple[np.ndarray, ...]
    gains: GainSchedule | None = None
    gamma_recovery: float | None = None
    diagnostics: dict = field(default_factory=dict)

    def R_at(self, rho) -> np.ndarray:
        return _expand(self.R, self.r_basis, rho)

    def Xh_at(self, rho) -> np.ndarray:
        return _expand(self.Xh, self.x_basis, rho)

    def Xh_k_at(self, k: int, rho) -> np.ndarray:
        return _expand(self.Xh_k[k], self.x_basis, rho)

    def to_json(self) -> dict:
        return {
            "gamma": self.gamma,
            "gamma_recovery": self.gamma_recovery,
            "r_basis": [list(b.exponents) for b in self.r_basis],
            "x_basis": [list(b.exponents) for b in self.x_basis],
            "R": [M.tolist() for M in self.R],
            "Xh": [M.tolist() for M in self.Xh],
            "Xh_k": [[M.tolist() for M in Ms] for Ms in self.Xh_k],
            "grid": [p.tolist() for p in self.grid],
            "gains": None if self.gains is None else self.gains.to_json(),
            "diagnostics": self.diagnostics,
        }

    @classmethod
    def from_json(cls, data) -> "SynthesisResult":
        gains = data.get("gains")
        sched = GainSchedule.from_json(gains) if gains else None
        return cls(
            gamma=float(data["gamma"]),
            R=[np.asarray(M, dtype=float) for M in data["R"]],
            Xh=[np.asarray(M, dtype=float) for M in data["Xh"]],
            Xh_k=[[np.asarray(M, dtype=float) for M in Ms] for Ms in data["Xh_k"]],
            r_basis=tuple(BasisFunction(tuple(e)) for e in data["r_basis"]),
            x_basis=tuple(BasisFunction(tuple(e)) for e in data["x_basis"]),
            grid=[np.asarray(p, dtype=float) for p in data["grid"]],
            axes=sched.axes if sched else (),
            gains=sched,
            gamma_recovery=data.get("gamma_recovery"),
            diagnostics=data.get("diagnostics", {}),
        )


@dataclass
class SynthesisProblem:
    """Assembled SDP plus the handles needed to read the solution back."""

    problem: sdp.SdpProblem
    builder: sdp.ProblemBuilder
    aug: AugmentedSystem
    config: SynthesisConfig
    grid: list[np.ndarray]
    vertices: list[np.ndarray]
    counts: dict[str, int]
    skipped: list[int]


def _lmi1_matrix(aug: AugmentedSystem, m: dict, R, Rdot, Xh, Xh_k: list, gamma):
    """Unprojected synthesis matrix (controller terms removed).

    Block order: x_cl, w, d, stacked z-bar, e.  Entries may be Affine or
    numeric; returns the same kind.
    """
    n_x, n_d, n_e, N = aug.n_x, aug.n_d, aug.n_e, aug.n_mult
    AR = m["A_aug"] @ R
    Q11 = AR + AR.T
    if Rdot is not None:
        Q11 = Q11 - Rdot
    S = None
    for Xk in Xh_k:
        term = Xh + Xh.T - Xk
        S = term if S is None else S + term
    Lam = _blkdiag(Xh_k)
    eye_d, eye_e = np.eye(n_d), np.eye(n_e)
    rows = [
        [Q11, None, None, None, None],
        [Xh.T @ m["B_aug0"].T, -S, None, None, None],
        [m["B_aug1"].T, np.zeros((n_d, n_x)), -gamma * eye_d, None, None],
        [m["C_aug0"] @ R, m["D_aug00"] @ Xh, np.zeros((N * n_x, n_d)), -Lam, None],
        [m["C_aug1"] @ R, m["D_aug10"] @ Xh, m["D_aug11"], np.zeros((n_e, N * n_x)), -gamma * eye_e],
    ]
    return _symmetric_block(rows)


def _blkdiag(mats):
    if all(not isinstance(M, sdp.Affine) for M in mats):
        return scipy.linalg.block_diag(*mats)
    sizes = [M.shape[0] for M in mats]
    rows = []
    for i, M in enumerate(mats):
        rows.append([M if j == i else np.zeros((sizes[i], sizes[j])) for j in range(len(mats))])
    return sdp.block(rows)


def _symmetric_block(lower_rows):
    """Fill a lower-triangular block list by symmetry and assemble."""
    n = len(lower_rows)
    full = [[None] * n for _ in range(n)]
    for i in range(n):
        for j in range(i + 1):
            full[i][j] = lower_rows[i][j]
            if j < i:
                full[j][i] = lower_rows[i][j].T if lower_rows[i][j] is not None else None
    affine = any(isinstance(b, sdp.Affine) for row in full for b in row)
    if affine:
        return sdp.block(full)
    return np.block([[np.asarray(b, dtype=float) for b in row] for row in full])


def _controller_direction(aug: AugmentedSystem, m: dict) -> np.ndarray:
    """G with the controller term G [Fh Hh] E + (...)' in the synthesis matrix."""
    n_x, n_d, N, n_u = aug.n_x, aug.n_d, aug.n_mult, aug.n_u
    return np.vstack([m["B_aug2"], np.zeros((n_x + n_d + N * n_x, n_u)), m["D_aug12"]])


def _lmi_sizes(aug: AugmentedSystem) -> list[int]:
    return [aug.n_cl, aug.n_x, aug.n_d, aug.n_mult * aug.n_x, aug.n_e]


def assemble_synthesis_sdp(plant: DelayedLpvPlant, realization, config: SynthesisConfig,
                           aug: AugmentedSystem | None = None,
                           r_floor: bool = False) -> SynthesisProblem:
    """Gridded synthesis SDP.

    With ``r_floor`` (fixed gamma only) the objective becomes maximizing a
    common lower bound on the eigenvalues of R over the grid.
    """
    aug = aug or build_augmented(plant, realization)
    if r_floor and config.gamma_mode != "fixed":
        raise ValueError("the R-floor objective needs a fixed gamma")
    domain = plant.domain
    n_x, n_cl, N = aug.n_x, aug.n_cl, aug.n_mult
    grid = make_grid(domain, config.grid_counts)
    vertices = rate_vertices(domain)

    b = sdp.ProblemBuilder()
    R_c = [b.symmetric(f"R{i}", n_cl) for i in range(len(config.r_basis))]
    X_c = [b.full(f"Xh{i}", n_x, n_x) for i in range(len(config.x_basis))]
    Xk_c = [[b.symmetric(f"Xh{k}_{i}", n_x) for i in range(len(config.x_basis))] for k in range(N)]
    if config.gamma_mode == "minimize":
        gamma = b.scalar("gamma")
        b.minimize(gamma)
    else:
        gamma = config.gamma
    if r_floor:
        floor = b.scalar("r_floor")
        b.minimize(-floor)
        b.lmi(floor - R_FLOOR_CAP * np.ones((1, 1)), name="r_floor_cap", eps=0.0)

    counts = {"lmi1": 0, "lmi2": 0, "positivity": 0}
    skipped = []
    for j, rho in enumerate(grid):
        m = aug.at(rho)
        R = _expand(R_c, config.r_basis, rho)
        Xh = _expand(X_c, config.x_basis, rho)
        Xh_k = [_expand(Xs, config.x_basis, rho) for Xs in Xk_c]
        Nr = nullspace_basis(_controller_direction(aug, m).T)
        if Nr.shape[1] == 0:
            skipped.append(j)
            log.info("grid point %s: empty projection, LMI1 vacuous", rho)
        else:
            for nu in vertices:
                Rdot = _rate_term(R_c, config.r_basis, rho, nu)
                Q = _lmi1_matrix(aug, m, R, Rdot, Xh, Xh_k, gamma)
                b.lmi(Nr.T @ Q @ Nr, name=f"lmi1[{j},{tuple(nu)}]")
                counts["lmi1"] += 1
        # LMI2: the part of the synthesis matrix the controller cannot reach.
        D11 = m["D_aug11"]
        lmi2 = _symmetric_block([
            [-gamma * np.eye(aug.n_d), None, None],
            [np.zeros((N * n_x, aug.n_d)), -_blkdiag(Xh_k), None],
            [D11, np.zeros((aug.n_e, N * n_x)), -gamma * np.eye(aug.n_e)],
        ])
        if isinstance(lmi2, sdp.Affine):
            b.lmi(lmi2, name=f"lmi2[{j}]")
            counts["lmi2"] += 1
        if r_floor:
            b.lmi(floor * np.eye(n_cl) - R, name=f"R>0[{j}]", eps=0.0)
        else:
            b.lmi(-R, name=f"R>0[{j}]")
        S = None
        for Xk in Xh_k:
            term = Xh + Xh.T - Xk
            S = term if S is None else S + term
        b.lmi(-S, name=f"Xsum>0[{j}]")
        counts["positivity"] += 2
        for k, Xk in enumerate(Xh_k):
            b.lmi(-Xk, name=f"Xh{k}>0[{j}]")
            counts["positivity"] += 1
    return SynthesisProblem(b.build(), b, aug, config, grid, vertices, counts, skipped)


def minimize_gamma(plant: DelayedLpvPlant, realization, config: SynthesisConfig,
                   **solver_opts) -> SynthesisResult:
    """Solve the gridded synthesis SDP; gains are not filled in.

    With ``config.condition`` a second solve at gamma*(1 + margin/2) (or at
    the fixed gamma) maximizes the smallest eigenvalue of R on the grid.  The
    gamma-optimal certificate tends to sit on the boundary R -> singular,
    which maps to huge recovered gains; the second solve keeps the reported
    gamma and moves the certificate into the interior.
    """
    sp = assemble_synthesis_sdp(plant, realization, config)
    sol = sdp.solve_sdp(sp.problem, **solver_opts)
    d = plant.delay
    if sol.status != sdp.OPTIMAL:
        raise SynthesisError(f"synthesis {sol.status} for (r, tau_bar) = ({d.r}, {d.tau_bar})",
                             sol.status)
    cfg = config
    gamma = float(sp.builder.value("gamma", sol.x)) if cfg.gamma_mode == "minimize" else float(cfg.gamma)
    extra = {}
    if cfg.condition and (cfg.gamma_mode == "fixed" or cfg.margin > 0):
        gamma_c = gamma if cfg.gamma_mode == "fixed" else gamma * (1.0 + 0.5 * cfg.margin)
        cfg_c = replace(cfg, gamma_mode="fixed", gamma=gamma_c)
        sp_c = assemble_synthesis_sdp(plant, realization, cfg_c, aug=sp.aug, r_floor=True)
        sol_c = sdp.solve_sdp(sp_c.problem, **solver_opts)
        if sol_c.status == sdp.OPTIMAL:
            extra = {"conditioning_gamma": gamma_c,
                     "r_floor": float(sp_c.builder.value("r_floor", sol_c.x))}
            sp, sol = sp_c, sol_c
        else:
            log.warning("conditioning solve %s; keeping the gamma-optimal certificate", sol_c.status)
            extra = {"conditioning_status": sol_c.status}
    b, x = sp.builder, sol.x
    N = sp.aug.n_mult
    margins = sdp.check_solution(sp.problem, x)
    result = SynthesisResult(
        gamma=gamma,
        R=[b.value(f"R{i}", x) for i in range(len(cfg.r_basis))],
        Xh=[b.value(f"Xh{i}", x) for i in range(len(cfg.x_basis))],
        Xh_k=[[b.value(f"Xh{k}_{i}", x) for i in range(len(cfg.x_basis))] for k in range(N)],
        r_basis=cfg.r_basis,
        x_basis=cfg.x_basis,
        grid=sp.grid,
        axes=grid_axes(plant.domain, cfg.grid_counts),
        diagnostics={
            "worst_margin": max(margins),
            "block_margins": {blk.name: mg for blk, mg in zip(sp.problem.blocks, margins)},
            "block_counts": sp.counts,
            "skipped_grid_points": sp.skipped,
            "solver": {k: v for k, v in sol.info.items() if v is not None},
            **extra,
        },
    )
    return result


def _temp_matrix(aug, m, R, Rdot, Xh, Xh_k, gamma, Fh, Hh):
    """Synthesis matrix with the controller terms put back."""
    Q = _lmi1_matrix(aug, m, R, Rdot, Xh, Xh_k, gamma)
    G = _controller_direction(aug, m)
    sizes = _lmi_sizes(aug)
    E = np.zeros((aug.n_cl + aug.n_x, sum(sizes)))
    E[:, : aug.n_cl + aug.n_x] = np.eye(aug.n_cl + aug.n_x)
    K = sdp.block([[Fh, Hh]]) if isinstance(Fh, sdp.Affine) else np.hstack([Fh, Hh])
    term = G @ K @ E
    return Q + term + term.T


def recover_gains(plant: DelayedLpvPlant, realization, result: SynthesisResult,
                  margin: float = 0.01, **solver_opts) -> SynthesisResult:
    """Solve the pointwise gain LMI at every grid point and fill ``result.gains``.

    At each point a common (Fh, Hh) must satisfy the matrix inequality at all
    rate vertices; among feasible choices the spectral norm of [Fh Hh] is
    minimized.
    """
    aug = build_augmented(plant, realization)
    gamma_r = result.gamma * (1.0 + margin)
    vertices = rate_vertices(plant.domain)
    F_list, H_list, norms, fallbacks = [], [], [], []
    for rho in result.grid:
        m = aug.at(rho)
        R = result.R_at(rho)
        Xh = result.Xh_at(rho)
        Xh_k = [result.Xh_k_at(k, rho) for k in range(aug.n_mult)]
        temps = [(nu, _rate_term(result.R, result.r_basis, rho, nu)) for nu in vertices]

        def make(fallback):
            b = sdp.ProblemBuilder()
            Fh = b.full("Fh", aug.n_u, aug.n_cl)
            Hh = b.full("Hh", aug.n_u, aug.n_x)
            obj = b.scalar("lam" if fallback else "t")
            b.minimize(obj)
            for nu, Rdot in temps:
                T = _temp_matrix(aug, m, R, Rdot, Xh, Xh_k, gamma_r, Fh, Hh)
                if fallback:
                    b.lmi(T - obj * np.eye(T.shape[0]), name=f"temp[{tuple(nu)}]", eps=0.0)
                else:
                    b.lmi(T, name=f"temp[{tuple(nu)}]")
            K = sdp.block([[Fh, Hh]])
            n_k = K.shape[1]
            if fallback:
                tu, tk = -GAIN_NORM_CAP * np.eye(aug.n_u), -GAIN_NORM_CAP * np.eye(n_k)
            else:
                tu, tk = -obj * np.eye(aug.n_u), -obj * np.eye(n_k)
            b.lmi(sdp.block([[tu, K], [K.T, tk]]), name="norm", eps=0.0)
            return b

        b = make(False)
        sol = sdp.solve_sdp(b.build(), **solver_opts)
        if sol.status != sdp.OPTIMAL:
            # Strict margin not met: minimize the worst eigenvalue instead and
            # accept any strictly negative value.
            b = make(True)
            sol = sdp.solve_sdp(b.build(), **solver_opts)
            if sol.status != sdp.OPTIMAL or not b.value("lam", sol.x) < 0:
                lam = None if sol.x is None else float(b.value("lam", sol.x))
                raise SynthesisError(f"gain recovery {sol.status} at rho = {rho.tolist()} "
                                     f"(worst eigenvalue {lam}): certificate inconsistent with "
                                     "the pointwise condition", sol.status)
            fallbacks.append(rho.tolist())
        Fh_v, Hh_v = b.value("Fh", sol.x), b.value("Hh", sol.x)
        F_c = np.linalg.solve(R.T, Fh_v.T).T
        H_c = np.linalg.solve(Xh.T, Hh_v.T).T
        F_list.append(F_c)
        H_list.append(H_c)
        norms.append(float(np.linalg.norm(np.hstack([Fh_v, Hh_v]), 2)))
    result.gains = GainSchedule(result.axes, list(result.grid), F_list, H_list)
    result.gamma_recovery = gamma_r
    result.diagnostics["recovery_residuals"] = temp_residuals(plant, realization, result)
    result.diagnostics["recovery_gain_norms"] = norms
    result.diagnostics["recovery_fallback_points"] = fallbacks
    return result


def temp_residuals(plant: DelayedLpvPlant, realization, result: SynthesisResult) -> list[float]:
    """Worst scale-normalized eigenvalue of the pointwise gain LMI, per grid point.

    Recomputed from the recovered F_c, H_c (Fh = F_c R, Hh = H_c Xh).
    """
    aug = build_augmented(plant, realization)
    gamma_r = result.gamma_recovery or result.gamma
    out = []
    for rho, F_c, H_c in zip(result.grid, result.gains.F_c, result.gains.H_c):
        m = aug.at(rho)
        R, Xh = result.R_at(rho), result.Xh_at(rho)
        Xh_k = [result.Xh_k_at(k, rho) for k in range(aug.n_mult)]
        worst = -np.inf
        for nu in rate_vertices(plant.domain):
            Rdot = _rate_term(result.R, result.r_basis, rho, nu)
            T = _temp_matrix(aug, m, R, Rdot, Xh, Xh_k, gamma_r, F_c @ R, H_c @ Xh)
            worst = max(worst, float(np.linalg.eigvalsh(T)[-1] / np.abs(T).max()))
        out.append(worst)
    return out


def synthesize(plant: DelayedLpvPlant, realization, config: SynthesisConfig,
               **solver_opts) -> SynthesisResult:
    """minimize_gamma followed by recover_gains."""
    result = minimize_gamma(plant, realization, config, **solver_opts)
    return recover_gains(plant, realization, result, config.margin, **solver_opts)


@dataclass
class AnalysisCertificate:
    gamma: float
    P: list[np.ndarray]
    X_k: list[list[np.ndarray]]
    p_basis: tuple[BasisFunction, ...]
    x_basis: tuple[BasisFunction, ...]
    margins: dict[str, float]
    form: str = "primal"

    def P_at(self, rho) -> np.ndarray:
        """Storage matrix; in the dual form the stored coefficients expand R = P^-1."""
        M = _expand(self.P, self.p_basis, rho)
        return M if self.form == "primal" else np.linalg.inv(M)

    def X_at(self, k: int, rho) -> np.ndarray:
        return _expand(self.X_k[k], self.x_basis, rho)

    def to_json(self) -> dict:
        return {
            "gamma": self.gamma,
            "form": self.form,
            "p_basis": [list(b.exponents) for b in self.p_basis],
            "x_basis": [list(b.exponents) for b in self.x_basis],
            "P": [M.tolist() for M in self.P],
            "X_k": [[M.tolist() for M in Ms] for Ms in self.X_k],
            "worst_margin": max(self.margins.values()) if self.margins else None,
        }


def _analysis_problem(aug: AugmentedSystem, gains, grid, domain: ParameterDomain,
                      p_basis, x_basis, gamma):
    b = sdp.ProblemBuilder()
    n_cl, n_x, n_d, n_e, N = aug.n_cl, aug.n_x, aug.n_d, aug.n_e, aug.n_mult
    P_c = [b.symmetric(f"P{i}", n_cl) for i in range(len(p_basis))]
    X_c = [[b.symmetric(f"X{k}_{i}", n_x) for i in range(len(x_basis))] for k in range(N)]
    if gamma is None:
        g = b.scalar("gamma")
        b.minimize(g)
    else:
        g = float(gamma)
    vertices = rate_vertices(domain)
    for j, rho in enumerate(grid):
        F_c, H_c = gains(rho) if callable(gains) else gains[j]
        cl = close_loop(aug, F_c, H_c, rho)
        P = _expand(P_c, p_basis, rho)
        X = [_expand(Xs, x_basis, rho) for Xs in X_c]
        Xsum = None
        for Xk in X:
            Xsum = Xk if Xsum is None else Xsum + Xk
        iqc = None
        for k, Xk in enumerate(X):
            Cb, D1b, D2b = cl.bar(k)
            U = np.hstack([Cb, D1b, D2b])
            term = U.T @ Xk @ U
            iqc = term if iqc is None else iqc + term
        for nu in vertices:
            Pdot = _rate_term(P_c, p_basis, rho, nu)
            PA = P @ cl.A_cl
            M11 = PA + PA.T
            if Pdot is not None:
                M11 = M11 + Pdot
            core = _symmetric_block([
                [M11, None, None],
                [cl.B_cl1.T @ P, -Xsum, None],
                [cl.B_cl2.T @ P, np.zeros((n_d, n_x)), -g * np.eye(n_d)],
            ]) + iqc
            perf = np.hstack([cl.C_cl2, cl.D_cl21, cl.D_cl22])
            full = sdp.block([[core, perf.T], [perf, -g * np.eye(n_e)]])
            b.lmi(full, name=f"analysis[{j},{tuple(nu)}]")
        b.lmi(-P, name=f"P>0[{j}]")
        for k, Xk in enumerate(X):
            b.lmi(-Xk, name=f"X{k}>0[{j}]")
    return b


def _analysis_problem_dual(aug: AugmentedSystem, gains, grid, domain: ParameterDomain,
                           p_basis, x_basis, gamma):
    """Congruence-transformed analysis test, linear in R = P^-1, Xh, Xh_k, gamma.

    With the gains fixed, Fh = F_c R and Hh = H_c Xh are linear in the
    unknowns, so the synthesis matrix with controller terms is an LMI.
    X_k of the primal test corresponds to Xh_k^-1.
    """
    b = sdp.ProblemBuilder()
    n_cl, n_x, N = aug.n_cl, aug.n_x, aug.n_mult
    R_c = [b.symmetric(f"P{i}", n_cl) for i in range(len(p_basis))]
    X_c = [b.full(f"Xh{i}", n_x, n_x) for i in range(len(x_basis))]
    Xk_c = [[b.symmetric(f"X{k}_{i}", n_x) for i in range(len(x_basis))] for k in range(N)]
    if gamma is None:
        g = b.scalar("gamma")
        b.minimize(g)
    else:
        g = float(gamma)
    vertices = rate_vertices(domain)
    for j, rho in enumerate(grid):
        F_c, H_c = gains(rho) if callable(gains) else gains[j]
        m = aug.at(rho)
        R = _expand(R_c, p_basis, rho)
        Xh = _expand(X_c, x_basis, rho)
        Xh_k = [_expand(Xs, x_basis, rho) for Xs in Xk_c]
        for nu in vertices:
            Rdot = _rate_term(R_c, p_basis, rho, nu)
            T = _temp_matrix(aug, m, R, Rdot, Xh, Xh_k, g, np.asarray(F_c) @ R, np.asarray(H_c) @ Xh)
            b.lmi(T, name=f"analysis[{j},{tuple(nu)}]")
        b.lmi(-R, name=f"P>0[{j}]")
        S = None
        for Xk in Xh_k:
            term = Xh + Xh.T - Xk
            S = term if S is None else S + term
        b.lmi(-S, name=f"Xsum>0[{j}]")
        for k, Xk in enumerate(Xh_k):
            b.lmi(-Xk, name=f"X{k}>0[{j}]")
    return b


def verify_analysis(aug: AugmentedSystem, gains, grid, domain: ParameterDomain,
                    p_basis: Sequence[BasisFunction], x_basis: Sequence[BasisFunction],
                    gamma: float | None, form: str = "primal",
                    **solver_opts) -> AnalysisCertificate | None:
    """Closed-loop L2-gain certificate at a fixed gamma (or minimal gamma if None).

    The IQC term stays in its X_k-linear form and only the performance
    output is Schur-complemented, so the test is linear in P, X_k and gamma.
    ``gains`` is a callable rho -> (F_c, H_c) or a list aligned with ``grid``.

    ``form="dual"`` expands R = P^-1 (and Xh, Xh_k) over the bases instead of
    P and X_k.  Both are sufficient conditions; the dual one is the natural
    check for gains coming out of the synthesis, whose certificate is
    polynomial in R rather than in P.  Returns None when no certificate is
    found.
    """
    p_basis, x_basis = tuple(p_basis), tuple(x_basis)
    if form == "primal":
        b = _analysis_problem(aug, gains, grid, domain, p_basis, x_basis, gamma)
    elif form == "dual":
        b = _analysis_problem_dual(aug, gains, grid, domain, p_basis, x_basis, gamma)
    else:
        raise ValueError(f"unknown analysis form {form!r}")
    prob = b.build()
    sol = sdp.solve_sdp(prob, **solver_opts)
    if sol.status != sdp.OPTIMAL:
        if sol.status == sdp.NUMERICAL_FAILURE:
            log.warning("analysis SDP failed numerically: %s", sol.info)
        return None
    x = sol.x
    margins = dict(zip((blk.name for blk in prob.blocks), sdp.check_solution(prob, x)))
    g = float(b.value("gamma", x)) if gamma is None else float(gamma)
    return AnalysisCertificate(
        gamma=g,
        P=[b.value(f"P{i}", x) for i in range(len(p_basis))],
        X_k=[[b.value(f"X{k}_{i}", x) for i in range(len(x_basis))] for k in range(aug.n_mult)],
        p_basis=p_basis, x_basis=x_basis, margins=margins, form=form,
    )
