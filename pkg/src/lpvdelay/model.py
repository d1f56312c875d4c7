"""Delayed LPV plant, delay-operator transformation and closed-loop assembly.

The plant

    dx/dt = A_p x + A_d x(t - tau) + B_p1 d + B_p2 u
    e     = C_p1 x + C_d1 x(t - tau) + D_p11 d + D_p12 u

is rewritten around w = x - x(t - tau), the output of the delay-difference
operator, so that the remaining part is delay free.  That nominal part is
stacked with the multiplier filter to give the augmented system, and the
state-feedback law u = F_c [x; x_psi] + H_c w closes the loop.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .params import BasisFunction, ParamMatrixFunction, ParameterDomain

_PLANT_FIELDS = ("A_p", "A_d", "B_p1", "B_p2", "C_p1", "C_d1", "D_p11", "D_p12")


@dataclass(frozen=True)
class DelaySpec:
    tau_bar: float
    r: float

    def __post_init__(self):
        if not self.tau_bar > 0:
            raise ValueError(f"tau_bar must be positive, got {self.tau_bar}")
        if not self.r >= 0:
            raise ValueError(f"r must be nonnegative, got {self.r}")


def block_pmf(blocks, dim: int) -> ParamMatrixFunction:
    """Assemble a block matrix whose entries are pmfs or constant arrays.

    Every block row must have consistent heights, and every block column
    consistent widths, exactly as with ``np.block``.
    """
    rows = []
    for row in blocks:
        rows.append([b if isinstance(b, ParamMatrixFunction) else
                     ParamMatrixFunction.constant(np.atleast_2d(np.asarray(b, dtype=float)), dim)
                     for b in row])
    bases: list[BasisFunction] = []
    for row in rows:
        for b in row:
            for basis, _ in b.terms:
                if basis not in bases:
                    bases.append(basis)
    terms = []
    for basis in bases:
        coeff = np.block([[_coeff_of(b, basis) for b in row] for row in rows])
        terms.append((basis, coeff))
    return ParamMatrixFunction(tuple(terms))


def _coeff_of(pmf: ParamMatrixFunction, basis: BasisFunction) -> np.ndarray:
    out = np.zeros(pmf.shape)
    for b, c in pmf.terms:
        if b == basis:
            out = out + c
    return out


@dataclass(frozen=True)
class DelayedLpvPlant:
    A_p: ParamMatrixFunction
    A_d: ParamMatrixFunction
    B_p1: ParamMatrixFunction
    B_p2: ParamMatrixFunction
    C_p1: ParamMatrixFunction
    C_d1: ParamMatrixFunction
    D_p11: ParamMatrixFunction
    D_p12: ParamMatrixFunction
    delay: DelaySpec
    domain: ParameterDomain

    def __post_init__(self):
        for name in _PLANT_FIELDS:
            val = getattr(self, name)
            if not isinstance(val, ParamMatrixFunction):
                object.__setattr__(self, name, ParamMatrixFunction.constant(val, self.domain.dim))
            elif val.dim != self.domain.dim:
                raise ValueError(f"{name} depends on {val.dim} parameters, domain has {self.domain.dim}")
        n_x, n_d, n_u, n_e = self.n_x, self.n_d, self.n_u, self.n_e
        expected = {
            "A_p": (n_x, n_x), "A_d": (n_x, n_x), "B_p1": (n_x, n_d), "B_p2": (n_x, n_u),
            "C_p1": (n_e, n_x), "C_d1": (n_e, n_x), "D_p11": (n_e, n_d), "D_p12": (n_e, n_u),
        }
        for name, shape in expected.items():
            if getattr(self, name).shape != shape:
                raise ValueError(f"{name} has shape {getattr(self, name).shape}, expected {shape}")

    @property
    def n_x(self) -> int:
        return self.A_p.shape[0]

    @property
    def n_d(self) -> int:
        return self.B_p1.shape[1]

    @property
    def n_u(self) -> int:
        return self.B_p2.shape[1]

    @property
    def n_e(self) -> int:
        return self.C_p1.shape[0]

    def at(self, rho) -> dict[str, np.ndarray]:
        return {name: getattr(self, name)(rho) for name in _PLANT_FIELDS}

    def state_derivative(self, rho, x, x_delayed, d, u) -> np.ndarray:
        m = self.at(rho)
        return m["A_p"] @ x + m["A_d"] @ x_delayed + m["B_p1"] @ d + m["B_p2"] @ u

    def output(self, rho, x, x_delayed, d, u) -> np.ndarray:
        m = self.at(rho)
        return m["C_p1"] @ x + m["C_d1"] @ x_delayed + m["D_p11"] @ d + m["D_p12"] @ u


def example_plant(phi: float = 0.2, sigma: float = 0.1, tau_bar: float = 2.0, r: float = 1.2,
                  rate: float = 0.0) -> DelayedLpvPlant:
    """Second-order benchmark plant with one scheduling parameter in [-1, 1]."""
    aff = ParamMatrixFunction.affine
    return DelayedLpvPlant(
        A_p=aff([[0, 1], [-2, -3]], [[0, phi], [0, sigma]]),
        A_d=aff([[0, 0.1], [-0.2, -0.3]], [[phi, 0], [sigma, 0]]),
        B_p1=ParamMatrixFunction.constant([[0.2], [0.2]]),
        B_p2=aff([[0], [0.1]], [[phi], [sigma]]),
        C_p1=ParamMatrixFunction.constant([[0, 10], [0, 0]]),
        C_d1=ParamMatrixFunction.constant(np.zeros((2, 2))),
        D_p11=ParamMatrixFunction.constant(np.zeros((2, 1))),
        D_p12=ParamMatrixFunction.constant([[0], [0.1]]),
        delay=DelaySpec(tau_bar, r),
        domain=ParameterDomain.symmetric([(-1.0, 1.0)], rate),
    )


@dataclass(frozen=True)
class NominalSystem:
    """Delay-free part seen from inputs (x, w, d, u)."""

    A: ParamMatrixFunction
    B_w: ParamMatrixFunction
    B_d: ParamMatrixFunction
    B_u: ParamMatrixFunction
    C: ParamMatrixFunction
    D_w: ParamMatrixFunction
    D_d: ParamMatrixFunction
    D_u: ParamMatrixFunction
    plant: DelayedLpvPlant


def nominal_interconnection(plant: DelayedLpvPlant) -> NominalSystem:
    return NominalSystem(
        A=plant.A_p + plant.A_d,
        B_w=-plant.A_d,
        B_d=plant.B_p1,
        B_u=plant.B_p2,
        C=plant.C_p1 + plant.C_d1,
        D_w=-plant.C_d1,
        D_d=plant.D_p11,
        D_u=plant.D_p12,
        plant=plant,
    )


@dataclass(frozen=True)
class AugmentedSystem:
    A_aug: ParamMatrixFunction
    B_aug0: ParamMatrixFunction
    B_aug1: ParamMatrixFunction
    B_aug2: ParamMatrixFunction
    C_aug0: np.ndarray
    D_aug00: np.ndarray
    C_aug1: ParamMatrixFunction
    D_aug10: ParamMatrixFunction
    D_aug11: ParamMatrixFunction
    D_aug12: ParamMatrixFunction
    n_x: int
    n_psi: int
    n_d: int
    n_u: int
    n_e: int
    n_mult: int
    realization: object = field(repr=False)

    @property
    def n_cl(self) -> int:
        return self.n_x + self.n_psi

    def at(self, rho) -> dict[str, np.ndarray]:
        out = {}
        for name in ("A_aug", "B_aug0", "B_aug1", "B_aug2", "C_aug1", "D_aug10", "D_aug11", "D_aug12"):
            out[name] = getattr(self, name)(rho)
        out["C_aug0"] = self.C_aug0
        out["D_aug00"] = self.D_aug00
        return out

    def to_json(self, rho) -> dict:
        return {k: np.asarray(v).tolist() for k, v in self.at(rho).items()}


def augment_with_filter(nominal: NominalSystem, realization) -> AugmentedSystem:
    """Stack the nominal system with the multiplier filter driven by (x, w)."""
    plant = nominal.plant
    n_x, dim = plant.n_x, plant.domain.dim
    if realization.n_x != n_x:
        raise ValueError(f"filter expects {realization.n_x} state channels, plant has {n_x}")
    n_psi = realization.n_psi
    zx = np.zeros((n_x, n_psi))
    A_aug = block_pmf([[nominal.A, zx], [realization.B1, realization.A]], dim)
    B_aug0 = block_pmf([[nominal.B_w], [realization.B2]], dim)
    B_aug1 = block_pmf([[nominal.B_d], [np.zeros((n_psi, plant.n_d))]], dim)
    B_aug2 = block_pmf([[nominal.B_u], [np.zeros((n_psi, plant.n_u))]], dim)
    C_aug0 = np.vstack([np.hstack([D1, C]) for C, D1 in zip(realization.C_bar, realization.D1_bar)])
    D_aug00 = np.vstack(realization.D2_bar)
    C_aug1 = block_pmf([[nominal.C, np.zeros((plant.n_e, n_psi))]], dim)
    return AugmentedSystem(
        A_aug=A_aug, B_aug0=B_aug0, B_aug1=B_aug1, B_aug2=B_aug2,
        C_aug0=C_aug0, D_aug00=D_aug00,
        C_aug1=C_aug1, D_aug10=nominal.D_w, D_aug11=nominal.D_d, D_aug12=nominal.D_u,
        n_x=n_x, n_psi=n_psi, n_d=plant.n_d, n_u=plant.n_u, n_e=plant.n_e,
        n_mult=realization.n_mult, realization=realization,
    )


def build_augmented(plant: DelayedLpvPlant, realization) -> AugmentedSystem:
    return augment_with_filter(nominal_interconnection(plant), realization)


@dataclass(frozen=True)
class ClosedLoopRealization:
    A_cl: np.ndarray
    B_cl1: np.ndarray
    B_cl2: np.ndarray
    C_cl1: tuple[np.ndarray, ...]
    D_cl11: tuple[np.ndarray, ...]
    D_cl12: tuple[np.ndarray, ...]
    C_cl2: np.ndarray
    D_cl21: np.ndarray
    D_cl22: np.ndarray
    n_x: int

    def bar(self, k: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Top n_x rows of the k-th multiplier output (the X_k-weighted part)."""
        n = self.n_x
        return self.C_cl1[k][:n], self.D_cl11[k][:n], self.D_cl12[k][:n]


def close_loop(aug: AugmentedSystem, F_c, H_c, rho) -> ClosedLoopRealization:
    F_c = np.atleast_2d(np.asarray(F_c, dtype=float))
    H_c = np.atleast_2d(np.asarray(H_c, dtype=float))
    if F_c.shape != (aug.n_u, aug.n_cl):
        raise ValueError(f"F_c has shape {F_c.shape}, expected {(aug.n_u, aug.n_cl)}")
    if H_c.shape != (aug.n_u, aug.n_x):
        raise ValueError(f"H_c has shape {H_c.shape}, expected {(aug.n_u, aug.n_x)}")
    m = aug.at(rho)
    n_x = aug.n_x
    C_cl1, D_cl11, D_cl12 = [], [], []
    for k in range(aug.n_mult):
        rows = slice(k * n_x, (k + 1) * n_x)
        C_cl1.append(np.vstack([m["C_aug0"][rows], np.zeros((n_x, aug.n_cl))]))
        D_cl11.append(np.vstack([m["D_aug00"][rows], np.eye(n_x)]))
        D_cl12.append(np.zeros((2 * n_x, aug.n_d)))
    return ClosedLoopRealization(
        A_cl=m["A_aug"] + m["B_aug2"] @ F_c,
        B_cl1=m["B_aug0"] + m["B_aug2"] @ H_c,
        B_cl2=m["B_aug1"],
        C_cl1=tuple(C_cl1), D_cl11=tuple(D_cl11), D_cl12=tuple(D_cl12),
        C_cl2=m["C_aug1"] + m["D_aug12"] @ F_c,
        D_cl21=m["D_aug10"] + m["D_aug12"] @ H_c,
        D_cl22=m["D_aug11"],
        n_x=n_x,
    )
