"""Parameter-dependent matrices, monomial bases, grids and rate vertices."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np


def _as_point(rho, dim: int) -> np.ndarray:
    rho = np.atleast_1d(np.asarray(rho, dtype=float))
    if rho.ndim != 1 or rho.size != dim:
        raise ValueError(f"parameter point has dimension {rho.size}, expected {dim}")
    return rho


@dataclass(frozen=True)
class ParameterDomain:
    """Box of admissible parameter values and box of admissible rates."""

    box: tuple[tuple[float, float], ...]
    rate_box: tuple[tuple[float, float], ...]

    def __post_init__(self):
        box = tuple((float(lo), float(hi)) for lo, hi in self.box)
        rate = tuple((float(lo), float(hi)) for lo, hi in self.rate_box)
        if len(box) != len(rate):
            raise ValueError("box and rate_box must have the same dimension")
        for lo, hi in box:
            if lo > hi:
                raise ValueError(f"empty parameter interval [{lo}, {hi}]")
        for lo, hi in rate:
            if not lo <= 0.0 <= hi:
                raise ValueError(f"rate interval [{lo}, {hi}] must contain 0")
        object.__setattr__(self, "box", box)
        object.__setattr__(self, "rate_box", rate)

    @classmethod
    def symmetric(cls, box, rate: float | Sequence[float]) -> "ParameterDomain":
        box = [tuple(b) for b in box]
        rates = np.broadcast_to(np.asarray(rate, dtype=float), (len(box),))
        return cls(tuple(box), tuple((-abs(v), abs(v)) for v in rates))

    @property
    def dim(self) -> int:
        return len(self.box)

    def contains(self, rho, tol: float = 1e-12) -> bool:
        rho = _as_point(rho, self.dim)
        return all(lo - tol <= r <= hi + tol for r, (lo, hi) in zip(rho, self.box))


@dataclass(frozen=True)
class BasisFunction:
    """Monomial prod_k rho_k**exponents[k]."""

    exponents: tuple[int, ...]

    def __post_init__(self):
        exps = tuple(int(e) for e in self.exponents)
        if any(e < 0 for e in exps):
            raise ValueError("monomial exponents must be nonnegative")
        object.__setattr__(self, "exponents", exps)

    @classmethod
    def constant(cls, dim: int = 1) -> "BasisFunction":
        return cls((0,) * dim)

    @property
    def dim(self) -> int:
        return len(self.exponents)

    @property
    def is_constant(self) -> bool:
        return not any(self.exponents)

    def __call__(self, rho) -> float:
        rho = _as_point(rho, self.dim)
        return float(np.prod(rho ** np.asarray(self.exponents)))

    def derivative(self, rho, k: int) -> float:
        rho = _as_point(rho, self.dim)
        if not 0 <= k < self.dim:
            raise IndexError(f"component {k} outside parameter dimension {self.dim}")
        e = self.exponents[k]
        if e == 0:
            return 0.0
        exps = np.asarray(self.exponents, dtype=float)
        exps[k] -= 1
        return e * float(np.prod(rho ** exps))

    def label(self, names: Sequence[str] | None = None) -> str:
        if self.is_constant:
            return "1"
        names = names or [f"rho{k + 1}" if self.dim > 1 else "rho" for k in range(self.dim)]
        parts = []
        for name, e in zip(names, self.exponents):
            if e == 1:
                parts.append(name)
            elif e > 1:
                parts.append(f"{name}^{e}")
        return "*".join(parts)


def monomial_basis(dim: int, degree: int) -> list[BasisFunction]:
    """All monomials with per-component degree <= ``degree``, constant first."""
    exps = itertools.product(range(degree + 1), repeat=dim)
    basis = [BasisFunction(e) for e in exps]
    return sorted(basis, key=lambda b: (sum(b.exponents), b.exponents[::-1]))


def parse_basis(spec, dim: int = 1) -> list[BasisFunction]:
    """Accept exponent lists (``[[0], [1], [2]]``) or scalar powers for dim 1."""
    out = []
    for item in spec:
        if np.isscalar(item):
            if dim != 1:
                raise ValueError("scalar basis exponents need a one-dimensional parameter")
            out.append(BasisFunction((int(item),)))
        else:
            out.append(BasisFunction(tuple(item)))
    for b in out:
        if b.dim != dim:
            raise ValueError(f"basis {b.exponents} does not match parameter dimension {dim}")
    return out


@dataclass(frozen=True)
class ParamMatrixFunction:
    """Sum of basis functions times coefficient matrices."""

    terms: tuple[tuple[BasisFunction, np.ndarray], ...]
    shape: tuple[int, int] = field(init=False)

    def __post_init__(self):
        if not self.terms:
            raise ValueError("a parameter-dependent matrix needs at least one term")
        terms = []
        for basis, coeff in self.terms:
            coeff = np.atleast_2d(np.array(coeff, dtype=float))
            coeff.setflags(write=False)
            terms.append((basis, coeff))
        shapes = {c.shape for _, c in terms}
        dims = {b.dim for b, _ in terms}
        if len(shapes) != 1:
            raise ValueError(f"coefficient shapes differ: {sorted(shapes)}")
        if len(dims) != 1:
            raise ValueError("basis functions mix parameter dimensions")
        object.__setattr__(self, "terms", tuple(terms))
        object.__setattr__(self, "shape", terms[0][1].shape)

    @classmethod
    def constant(cls, M, dim: int = 1) -> "ParamMatrixFunction":
        return cls(((BasisFunction.constant(dim), M),))

    @classmethod
    def affine(cls, M0, M1, dim: int = 1, k: int = 0) -> "ParamMatrixFunction":
        """M0 + rho_k * M1."""
        e = [0] * dim
        e[k] = 1
        return cls(((BasisFunction.constant(dim), M0), (BasisFunction(tuple(e)), M1)))

    @property
    def dim(self) -> int:
        return self.terms[0][0].dim

    @property
    def is_constant(self) -> bool:
        return all(b.is_constant or not np.any(c) for b, c in self.terms)

    def __call__(self, rho) -> np.ndarray:
        return eval_param_matrix(self, rho)

    def derivative(self, rho, k: int) -> np.ndarray:
        return eval_param_derivative(self, rho, k)

    def __add__(self, other: "ParamMatrixFunction") -> "ParamMatrixFunction":
        return ParamMatrixFunction(self.terms + other.terms)

    def __neg__(self) -> "ParamMatrixFunction":
        return self.scale(-1.0)

    def __sub__(self, other: "ParamMatrixFunction") -> "ParamMatrixFunction":
        return self + (-other)

    def scale(self, a: float) -> "ParamMatrixFunction":
        return ParamMatrixFunction(tuple((b, a * c) for b, c in self.terms))

    def to_json(self) -> list[dict]:
        return [{"exponents": list(b.exponents), "coeff": c.tolist()} for b, c in self.terms]

    @classmethod
    def from_json(cls, data, dim: int = 1) -> "ParamMatrixFunction":
        """Terms as ``[{"exponents": [...], "coeff": [[...]]}, ...]`` or a bare matrix."""
        if isinstance(data, dict) and "terms" in data:
            data = data["terms"]
        if isinstance(data, list) and data and isinstance(data[0], dict):
            terms = []
            for t in data:
                exps = t["exponents"]
                exps = (int(exps),) if np.isscalar(exps) else tuple(exps)
                terms.append((BasisFunction(exps), t["coeff"]))
            pmf = cls(tuple(terms))
            if pmf.dim != dim:
                raise ValueError(f"matrix terms have parameter dimension {pmf.dim}, expected {dim}")
            return pmf
        return cls.constant(data, dim)


def eval_param_matrix(pmf: ParamMatrixFunction, rho) -> np.ndarray:
    rho = _as_point(rho, pmf.dim)
    out = np.zeros(pmf.shape)
    for basis, coeff in pmf.terms:
        out += basis(rho) * coeff
    return out


def eval_param_derivative(pmf: ParamMatrixFunction, rho, k: int) -> np.ndarray:
    """Exact partial derivative with respect to rho_k."""
    rho = _as_point(rho, pmf.dim)
    out = np.zeros(pmf.shape)
    for basis, coeff in pmf.terms:
        out += basis.derivative(rho, k) * coeff
    return out


def make_grid(domain: ParameterDomain, counts) -> list[np.ndarray]:
    """Uniform tensor grid over the parameter box, endpoints included."""
    counts = np.broadcast_to(np.asarray(counts, dtype=int), (domain.dim,))
    axes = []
    for n, (lo, hi) in zip(counts, domain.box):
        if n < 1:
            raise ValueError(f"grid count must be >= 1, got {n}")
        if n == 1 and lo != hi:
            raise ValueError(f"a single grid point cannot cover [{lo}, {hi}]")
        axes.append(np.linspace(lo, hi, n) if n > 1 else np.array([lo]))
    return [np.array(p) for p in itertools.product(*axes)]


def rate_vertices(domain: ParameterDomain) -> list[np.ndarray]:
    """Corners of the rate box; collapsed intervals contribute a single value."""
    axes = [sorted({lo, hi}) for lo, hi in domain.rate_box]
    return [np.array(v) for v in itertools.product(*axes)]
