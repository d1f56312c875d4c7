"""Dynamic IQC multipliers for the delay-difference operator w = x - x(t - tau).

Both multipliers have the form diag(|phi(jw)|^2 X, -X) with a scalar,
second-order shaping function phi.  Their J-spectral factors are
diag(psi(s) I, I) where psi is phi written in strictly-proper-plus-feedthrough
form, which is what the state-space filter realizes channel by channel.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.linalg

from .model import DelaySpec

DEFAULT_C1 = 1.0
DEFAULT_EPSILON = 1e-7
DEFAULT_DELTA = 1e-4

B2_CONST = math.sqrt(50.0)
C2_CONST = math.sqrt(12.5)


@dataclass(frozen=True)
class MultiplierSpec:
    """Shaping function of one delay multiplier.

    ``gain`` is k1 or k2, ``offset`` is epsilon or delta.  The shaping
    function is ``gain * (tb^2 s^2 + zero * tb s) / (tb^2 s^2 + damp * tb s + stiff) + offset``.
    """

    kind: str
    tau_bar: float
    r: float
    gain: float
    zero: float
    damp: float
    stiff: float
    offset: float
    c1: float | None = None

    @property
    def k1(self) -> float:
        return self._only("pi1", self.gain)

    @property
    def a1(self) -> float:
        return self._only("pi1", self.damp)

    @property
    def k2(self) -> float:
        return self._only("pi2", self.gain)

    @property
    def a2(self) -> float:
        return self._only("pi2", self.damp)

    @property
    def b2(self) -> float:
        return self._only("pi2", self.stiff)

    @property
    def c2(self) -> float:
        return self._only("pi2", self.zero)

    def _only(self, kind, value):
        if self.kind != kind:
            raise AttributeError(f"constant not defined for a {self.kind} multiplier")
        return value

    def shaping(self, s) -> complex:
        """Closed-form shaping function phi(s) (or varphi(s) for pi2)."""
        tb = self.tau_bar
        s = np.asarray(s, dtype=complex)
        num = tb ** 2 * s ** 2 + self.zero * tb * s
        den = tb ** 2 * s ** 2 + self.damp * tb * s + self.stiff
        return self.gain * num / den + self.offset

    def factor_coefficients(self) -> tuple[float, float, float, float, float]:
        """(den0, den1, num0, num1, feedthrough) of psi(s) = (num1 s + num0)/(s^2 + den1 s + den0) + feedthrough."""
        tb, k = self.tau_bar, self.gain
        den0 = self.stiff / tb ** 2
        den1 = self.damp / tb
        num0 = -k * self.stiff / tb ** 2
        num1 = k * (self.zero - self.damp) / tb
        return den0, den1, num0, num1, k + self.offset

    def factor(self, s) -> complex:
        """Spectral factor psi(s) in the realized partial-fraction form."""
        den0, den1, num0, num1, d = self.factor_coefficients()
        s = np.asarray(s, dtype=complex)
        return (num1 * s + num0) / (s ** 2 + den1 * s + den0) + d

    def multiplier(self, omega: float, X=None) -> np.ndarray:
        """Pi(j omega) = diag(|phi|^2 X, -X) for an n x n scaling X (identity by default)."""
        X = np.eye(1) if X is None else np.atleast_2d(X)
        mag2 = abs(complex(self.shaping(1j * omega))) ** 2
        n = X.shape[0]
        out = np.zeros((2 * n, 2 * n), dtype=complex)
        out[:n, :n] = mag2 * X
        out[n:, n:] = -X
        return out


def make_multiplier(kind: str, delay: DelaySpec, c1: float = DEFAULT_C1,
                    epsilon: float = DEFAULT_EPSILON, delta: float = DEFAULT_DELTA) -> MultiplierSpec:
    tb, r = delay.tau_bar, delay.r
    if kind == "pi1":
        if not r < 1:
            raise ValueError(f"pi1 requires r<1, got r={r}")
        if not epsilon > 0:
            raise ValueError("pi1 requires epsilon > 0")
        k1 = 1.0 + 1.0 / math.sqrt(1.0 - r)
        if not 0 < c1 < 2 * k1:
            raise ValueError(f"pi1 requires 0 < c1 < 2*k1 = {2 * k1:.6g}, got c1={c1}")
        a1 = math.sqrt(2.0 * k1 * c1)
        return MultiplierSpec("pi1", tb, r, gain=k1, zero=c1, damp=a1, stiff=k1 * c1,
                              offset=epsilon, c1=c1)
    if kind == "pi2":
        if not r < 2:
            raise ValueError(f"pi2 requires r<2, got r={r}")
        if not delta > 0:
            raise ValueError("pi2 requires delta > 0")
        k2 = math.sqrt(8.0 / (2.0 - r))
        a2 = math.sqrt(6.5 + 2.0 * B2_CONST)
        return MultiplierSpec("pi2", tb, r, gain=k2, zero=C2_CONST, damp=a2, stiff=B2_CONST,
                              offset=delta)
    raise ValueError(f"unknown multiplier kind {kind!r}")


def select_multipliers(delay: DelaySpec, **kw) -> list[MultiplierSpec]:
    """Both multipliers for r <= 0.5, pi2 alone above."""
    kinds = ["pi1", "pi2"] if delay.r <= 0.5 else ["pi2"]
    return [make_multiplier(k, delay, **kw) for k in kinds]


@dataclass(frozen=True)
class MultiplierRealization:
    """State-space filter (A, B1, B2) with per-multiplier outputs.

    The k-th output is z_k = [C_bar[k] x_psi + D1_bar[k] x + D2_bar[k] w ; w].
    """

    A: np.ndarray
    B1: np.ndarray
    B2: np.ndarray
    C_bar: tuple[np.ndarray, ...]
    D1_bar: tuple[np.ndarray, ...]
    D2_bar: tuple[np.ndarray, ...]
    n_x: int
    specs: tuple[MultiplierSpec, ...] = field(default=())

    @property
    def n_psi(self) -> int:
        return self.A.shape[0]

    @property
    def n_mult(self) -> int:
        return len(self.C_bar)

    @property
    def kinds(self) -> list[str]:
        return [s.kind for s in self.specs]

    def C(self, k: int) -> np.ndarray:
        return np.vstack([self.C_bar[k], np.zeros((self.n_x, self.n_psi))])

    def D1(self, k: int) -> np.ndarray:
        return np.vstack([self.D1_bar[k], np.zeros((self.n_x, self.n_x))])

    def D2(self, k: int) -> np.ndarray:
        return np.vstack([self.D2_bar[k], np.eye(self.n_x)])

    def W(self, k: int, X=None) -> np.ndarray:
        X = np.eye(self.n_x) if X is None else np.asarray(X, dtype=float)
        return scipy.linalg.block_diag(X, -X)

    def inverse_state_matrix(self, k: int) -> np.ndarray:
        """State matrix of Psi_k^{-1}, input z_k, output (x, w)."""
        D = np.hstack([self.D1(k), self.D2(k)])
        B = np.hstack([self.B1, self.B2])
        return self.A - B @ np.linalg.solve(D, self.C(k))

    def to_json(self) -> dict:
        return {
            "kinds": self.kinds,
            "A": self.A.tolist(), "B1": self.B1.tolist(), "B2": self.B2.tolist(),
            "C_bar": [c.tolist() for c in self.C_bar],
            "D1_bar": [d.tolist() for d in self.D1_bar],
            "D2_bar": [d.tolist() for d in self.D2_bar],
        }


def realize_filter(specs: Sequence[MultiplierSpec], n_x: int) -> MultiplierRealization:
    """Realize every multiplier per state channel, channels block-diagonal.

    Within one channel the states are ordered multiplier by multiplier, two
    states each (companion form driven by the channel's x component).
    """
    specs = list(specs)
    if not specs:
        raise ValueError("at least one multiplier is required")
    N = len(specs)
    A_t = np.zeros((2 * N, 2 * N))
    B_t = np.zeros((2 * N, 1))
    C_t, D_t = [], []
    for i, spec in enumerate(specs):
        den0, den1, num0, num1, d = spec.factor_coefficients()
        j = 2 * i
        A_t[j, j + 1] = 1.0
        A_t[j + 1, j] = -den0
        A_t[j + 1, j + 1] = -den1
        B_t[j + 1, 0] = 1.0
        c = np.zeros((1, 2 * N))
        c[0, j], c[0, j + 1] = num0, num1
        C_t.append(c)
        D_t.append(d)
    eye = np.eye(n_x)
    A = np.kron(eye, A_t)
    B1 = np.kron(eye, B_t)
    B2 = np.zeros((2 * N * n_x, n_x))
    C_bar = tuple(np.kron(eye, c) for c in C_t)
    D1_bar = tuple(d * eye for d in D_t)
    D2_bar = tuple(np.zeros((n_x, n_x)) for _ in specs)
    return MultiplierRealization(A, B1, B2, C_bar, D1_bar, D2_bar, n_x, tuple(specs))


def freq_response(obj, omega: float):
    """Frequency response at j*omega.

    For a realization, returns the list of Psi_k(j omega) (each 2n_x square);
    for a spec, the closed-form shaping function value.
    """
    s = 1j * float(omega)
    if isinstance(obj, MultiplierSpec):
        return complex(obj.shaping(s))
    real = obj
    B = np.hstack([real.B1, real.B2])
    resolvent = np.linalg.solve(s * np.eye(real.n_psi) - real.A, B)
    return [np.hstack([real.D1(k), real.D2(k)]) + real.C(k) @ resolvent for k in range(real.n_mult)]


def default_frequency_grid(tau_bar: float, n: int = 100) -> np.ndarray:
    return np.logspace(-3, 3, n) / tau_bar


@dataclass
class FactorizationReport:
    kind: str
    max_error: float
    worst_omega: float
    filter_hurwitz: bool
    inverse_hurwitz: bool
    tol: float

    @property
    def passed(self) -> bool:
        return self.max_error <= self.tol and self.filter_hurwitz and self.inverse_hurwitz

    def to_json(self) -> dict:
        return {"kind": self.kind, "max_error": self.max_error, "worst_omega": self.worst_omega,
                "filter_hurwitz": self.filter_hurwitz, "inverse_hurwitz": self.inverse_hurwitz,
                "tol": self.tol, "pass": self.passed}


def _hurwitz(M: np.ndarray, margin: float = 1e-9) -> bool:
    return bool(np.all(np.linalg.eigvals(M).real <= -margin))


def factorization_errors(spec: MultiplierSpec, realization: MultiplierRealization, omegas,
                         k: int | None = None) -> np.ndarray:
    """Max abs entry of Psi_k~ W Psi_k - Pi at each frequency (X slot = identity)."""
    if k is None:
        k = list(realization.specs).index(spec) if spec in realization.specs else 0
    n = realization.n_x
    W = realization.W(k)
    out = np.empty(len(omegas))
    for i, w in enumerate(omegas):
        Psi = freq_response(realization, w)[k]
        out[i] = np.max(np.abs(Psi.conj().T @ W @ Psi - spec.multiplier(w, np.eye(n))))
    return out


def verify_spectral_factorization(spec: MultiplierSpec, realization: MultiplierRealization,
                                  omegas=None, tol: float = 1e-6, k: int | None = None) -> FactorizationReport:
    """Compare Psi_k~ W Psi_k from the filter with the closed-form multiplier.

    The X slot of W is the identity.  Also checks that the filter and its
    inverse are both stable.
    """
    if k is None:
        k = list(realization.specs).index(spec) if spec in realization.specs else 0
    if omegas is None:
        omegas = default_frequency_grid(spec.tau_bar)
    omegas = np.asarray(omegas, dtype=float)
    err = factorization_errors(spec, realization, omegas, k)
    i = int(np.argmax(err))
    return FactorizationReport(spec.kind, float(err[i]), float(omegas[i]), _hurwitz(realization.A),
                               _hurwitz(realization.inverse_state_matrix(k)), tol)


def validate_delay_trajectory(tau: Callable[[float], float], delay: DelaySpec, T: float,
                              h: float, tol: float = 1e-9) -> None:
    t = np.arange(0.0, T + 0.5 * h, h)
    vals = np.array([tau(ti) for ti in t])
    if np.any(vals < -tol) or np.any(vals > delay.tau_bar + tol):
        raise ValueError(f"delay leaves [0, {delay.tau_bar}]")
    if len(t) > 1:
        rate = np.max(np.abs(np.diff(vals))) / h
        if rate > delay.r * (1 + 1e-6) + tol:
            raise ValueError(f"delay rate {rate:.6g} exceeds bound r={delay.r}")


def check_hard_iqc_empirical(realization: MultiplierRealization, v: Callable[[float], np.ndarray],
                             tau: Callable[[float], float], T: float, h: float, k: int = 0,
                             delay: DelaySpec | None = None) -> float:
    """Minimum over T' <= T of the running integral of z_k' W_k z_k (X = I).

    ``v`` is the operator input, taken as zero for negative time, and
    w(t) = v(t) - v(t - tau(t)).  The filter starts at rest and is stepped
    with classical RK4; the running integral uses the trapezoidal rule.
    """
    if delay is None and realization.specs:
        spec = realization.specs[0]
        delay = DelaySpec(spec.tau_bar, spec.r)
    if delay is not None:
        validate_delay_trajectory(tau, delay, T, h)

    n = realization.n_x

    def vv(t):
        return np.zeros(n) if t < 0 else np.asarray(v(t), dtype=float).reshape(n)

    def inputs(t):
        x = vv(t)
        return x, x - vv(t - tau(t))

    A, B1, B2 = realization.A, realization.B1, realization.B2
    Cb, D1b, D2b = realization.C_bar[k], realization.D1_bar[k], realization.D2_bar[k]

    def f(t, xs):
        x, w = inputs(t)
        return A @ xs + B1 @ x + B2 @ w

    def quad(t, xs):
        x, w = inputs(t)
        zb = Cb @ xs + D1b @ x + D2b @ w
        return float(zb @ zb - w @ w)

    steps = int(round(T / h))
    xs = np.zeros(realization.n_psi)
    t = 0.0
    q_prev = quad(t, xs)
    running, lowest = 0.0, 0.0
    for _ in range(steps):
        k1 = f(t, xs)
        k2 = f(t + h / 2, xs + h / 2 * k1)
        k3 = f(t + h / 2, xs + h / 2 * k2)
        k4 = f(t + h, xs + h * k3)
        xs = xs + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        t += h
        q = quad(t, xs)
        running += 0.5 * h * (q_prev + q)
        q_prev = q
        lowest = min(lowest, running)
    return lowest


def random_iqc_signals(rng: np.random.Generator, delay: DelaySpec, n_x: int, T: float):
    """Random admissible (v, tau): windowed sinusoids and a sinusoidal delay in the class."""
    n_terms = 3
    amps = rng.normal(size=(n_x, n_terms))
    freqs = rng.uniform(0.1, 5.0, size=(n_x, n_terms)) / max(1.0, 0.2 * delay.tau_bar)
    phases = rng.uniform(0, 2 * np.pi, size=(n_x, n_terms))
    stop = rng.uniform(0.3, 0.7) * T

    def v(t):
        if t < 0 or t > stop:
            return np.zeros(n_x)
        return np.sum(amps * np.sin(freqs * t + phases), axis=1)

    b = 0.5 * delay.tau_bar * rng.uniform(0.0, 1.0)
    if delay.r == 0 or b == 0:
        c = delay.tau_bar * rng.uniform(0.1, 1.0)

        def tau(t):
            return c
    else:
        om = rng.uniform(0.2, 1.0) * delay.r / b
        ph = rng.uniform(0, 2 * np.pi)

        def tau(t):
            return delay.tau_bar - b + b * math.sin(om * t + ph)

    return v, tau


def hard_iqc_trials(realization: MultiplierRealization, delay: DelaySpec, n_trials: int,
                    rng: np.random.Generator, T: float | None = None, h: float | None = None,
                    k: int = 0) -> list[tuple[float, float]]:
    """(lowest running integral, ||v||^2) for random admissible pairs."""
    T = T if T is not None else 8.0 * delay.tau_bar
    h = h if h is not None else T / 1000.0
    out = []
    for _ in range(n_trials):
        v, tau = random_iqc_signals(rng, delay, realization.n_x, T)
        lowest = check_hard_iqc_empirical(realization, v, tau, T, h, k=k, delay=delay)
        ts = np.arange(0.0, T + 0.5 * h, h)
        energy = float(np.trapezoid([float(v(t) @ v(t)) for t in ts], ts))
        out.append((lowest, energy))
    return out
