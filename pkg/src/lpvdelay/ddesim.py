"""Fixed-step simulation of the closed loop with a time-varying state delay.

The combined state (x_p, x_psi) is advanced with classical RK4.  Delayed plant
states are read from the stored history by linear interpolation; because the
step is at most half the smallest delay, every lookup made inside an RK4 stage
lands on an already computed node interval, so the scheme stays explicit.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.signal import lsim

from .model import DelayedLpvPlant
from .params import ParamMatrixFunction

DEFAULT_STEP = 1e-3
DEFAULT_HORIZON = 60.0
CLASS_TOL = 1e-9

KINDS = ("sinusoid", "pulse", "constant", "tabulated")


class ScenarioError(ValueError):
    """Scenario outside the admissible parameter or delay class."""


@dataclass(frozen=True)
class Trajectory:
    """Scalar signal of time.

    sinusoid:  offset + amplitude * sin(omega t + phase)
    pulse:     amplitude on [start, stop), zero elsewhere
    constant:  value
    tabulated: linear interpolation of (t, values), held at the ends
    """

    kind: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown trajectory kind {self.kind!r}; expected one of {KINDS}")
        p = dict(self.params)
        if self.kind == "sinusoid":
            p = {"amplitude": 1.0, "omega": 1.0, "phase": 0.0, "offset": 0.0, **p}
        elif self.kind == "pulse":
            p = {"amplitude": 1.0, "start": 0.0, "stop": 2.0, **p}
            if p["stop"] < p["start"]:
                raise ValueError("pulse stop precedes start")
        elif self.kind == "constant":
            p = {"value": 0.0, **p}
        else:
            t = np.asarray(p.get("t", []), dtype=float)
            v = np.asarray(p.get("values", []), dtype=float)
            if t.ndim != 1 or t.shape != v.shape or t.size < 2:
                raise ValueError("tabulated trajectory needs matching 't' and 'values' (>= 2 samples)")
            if np.any(np.diff(t) <= 0):
                raise ValueError("tabulated times must be strictly increasing")
            p = {"t": t.tolist(), "values": v.tolist()}
        object.__setattr__(self, "params", p)

    def __call__(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        p = self.params
        if self.kind == "sinusoid":
            return p["offset"] + p["amplitude"] * np.sin(p["omega"] * t + p["phase"])
        if self.kind == "pulse":
            return np.where((t >= p["start"]) & (t < p["stop"]), float(p["amplitude"]), 0.0)
        if self.kind == "constant":
            return np.full_like(t, float(p["value"]))
        return np.interp(t, p["t"], p["values"])

    def derivative(self, t) -> np.ndarray:
        """Derivative where it exists (zero for piecewise-constant parts)."""
        t = np.asarray(t, dtype=float)
        p = self.params
        if self.kind == "sinusoid":
            return p["amplitude"] * p["omega"] * np.cos(p["omega"] * t + p["phase"])
        if self.kind == "tabulated":
            tt, vv = np.asarray(p["t"]), np.asarray(p["values"])
            slopes = np.diff(vv) / np.diff(tt)
            idx = np.searchsorted(tt, t, side="right") - 1
            inside = (idx >= 0) & (idx < len(slopes))
            return np.where(inside, slopes[np.clip(idx, 0, len(slopes) - 1)], 0.0)
        return np.zeros_like(t)

    def to_json(self) -> dict:
        return {"kind": self.kind, "params": dict(self.params)}

    @classmethod
    def from_json(cls, data) -> "Trajectory":
        if isinstance(data, (int, float)):
            return cls("constant", {"value": float(data)})
        return cls(data["kind"], data.get("params", {}))


def _as_trajectories(obj) -> tuple[Trajectory, ...]:
    if isinstance(obj, Trajectory):
        return (obj,)
    return tuple(obj)


@dataclass(frozen=True)
class Scenario:
    rho: tuple[Trajectory, ...]
    tau: Trajectory
    d: tuple[Trajectory, ...]
    T: float = DEFAULT_HORIZON
    h: float = DEFAULT_STEP
    name: str = "scenario"

    def __post_init__(self):
        object.__setattr__(self, "rho", _as_trajectories(self.rho))
        object.__setattr__(self, "d", _as_trajectories(self.d))
        if not self.T > 0 or not self.h > 0:
            raise ValueError("horizon and step must be positive")
        n = round(self.T / self.h)
        if n < 1 or abs(n * self.h - self.T) > 1e-9 * self.T:
            raise ValueError(f"horizon {self.T} is not a whole number of steps {self.h}")

    @property
    def n_steps(self) -> int:
        return round(self.T / self.h)

    def rho_at(self, t) -> np.ndarray:
        return np.stack([tr(t) for tr in self.rho], axis=-1)

    def d_at(self, t) -> np.ndarray:
        return np.stack([tr(t) for tr in self.d], axis=-1)

    def validate(self, plant: DelayedLpvPlant, t=None) -> None:
        """Check the sampled trajectories against the plant's parameter and delay classes."""
        if len(self.rho) != plant.domain.dim:
            raise ScenarioError(f"scenario has {len(self.rho)} parameter signals, plant needs "
                                f"{plant.domain.dim}")
        if len(self.d) != plant.n_d:
            raise ScenarioError(f"scenario has {len(self.d)} disturbance signals, plant needs {plant.n_d}")
        if t is None:
            t = np.arange(self.n_steps + 1) * self.h
        tol = CLASS_TOL
        rho = self.rho_at(t)
        for k, ((lo, hi), (rlo, rhi)) in enumerate(zip(plant.domain.box, plant.domain.rate_box)):
            if rho[:, k].min() < lo - tol or rho[:, k].max() > hi + tol:
                raise ScenarioError(f"rho[{k}] leaves [{lo}, {hi}]")
            rate = np.concatenate([self.rho[k].derivative(t), np.diff(rho[:, k]) / np.diff(t)])
            if rate.min() < rlo - tol or rate.max() > rhi + tol:
                raise ScenarioError(f"rate of rho[{k}] leaves [{rlo}, {rhi}]")
        tau = self.tau(t)
        tau_bar, r = plant.delay.tau_bar, plant.delay.r
        if tau.min() < -tol or tau.max() > tau_bar + tol:
            raise ScenarioError(f"tau leaves [0, {tau_bar}] (range [{tau.min():.6g}, {tau.max():.6g}])")
        rate = np.concatenate([self.tau.derivative(t), np.diff(tau) / np.diff(t)])
        if np.abs(rate).max() > r + tol:
            raise ScenarioError(f"|dtau/dt| reaches {np.abs(rate).max():.6g} > r = {r}")

    def to_json(self) -> dict:
        return {
            "name": self.name, "T": self.T, "h": self.h,
            "rho": [tr.to_json() for tr in self.rho],
            "tau": self.tau.to_json(),
            "d": [tr.to_json() for tr in self.d],
        }

    @classmethod
    def from_json(cls, data) -> "Scenario":
        def many(x):
            return [Trajectory.from_json(v) for v in (x if isinstance(x, list) else [x])]

        return cls(rho=tuple(many(data["rho"])), tau=Trajectory.from_json(data["tau"]),
                   d=tuple(many(data["d"])), T=float(data.get("T", DEFAULT_HORIZON)),
                   h=float(data.get("h", DEFAULT_STEP)), name=data.get("name", "scenario"))


def pulse_scenario(T: float = DEFAULT_HORIZON, h: float = DEFAULT_STEP) -> Scenario:
    """rho = sin(0.5 t), tau = 1.8 + 0.2 sin(6 t), unit pulse on [0, 2]."""
    return Scenario(
        rho=(Trajectory("sinusoid", {"amplitude": 1.0, "omega": 0.5}),),
        tau=Trajectory("sinusoid", {"amplitude": 0.2, "omega": 6.0, "offset": 1.8}),
        d=(Trajectory("pulse", {"amplitude": 1.0, "start": 0.0, "stop": 2.0}),),
        T=T, h=h, name="pulse",
    )


def random_scenario(rng: np.random.Generator, plant: DelayedLpvPlant, T: float = DEFAULT_HORIZON,
                    h: float = DEFAULT_STEP, name: str = "random") -> Scenario:
    """Random admissible sinusoids for rho and tau, pulse or tabulated disturbances."""
    rho = []
    for (lo, hi), (rlo, rhi) in zip(plant.domain.box, plant.domain.rate_box):
        mid, half = 0.5 * (lo + hi), 0.5 * (hi - lo)
        amp = half * rng.uniform(0.3, 1.0)
        nu = min(-rlo, rhi)
        omega = 0.0 if amp == 0 or nu == 0 else rng.uniform(0.1, 1.0) * min(nu / amp, 5.0)
        if omega == 0.0:
            rho.append(Trajectory("constant", {"value": float(rng.uniform(lo, hi))}))
        else:
            rho.append(Trajectory("sinusoid", {"amplitude": amp, "omega": omega,
                                               "phase": rng.uniform(0, 2 * np.pi), "offset": mid}))
    tau_bar, r = plant.delay.tau_bar, plant.delay.r
    b = 0.25 * tau_bar * rng.uniform(0.0, 1.0)
    if r == 0 or b == 0:
        tau = Trajectory("constant", {"value": tau_bar * rng.uniform(0.5, 1.0)})
    else:
        omega = rng.uniform(0.1, 1.0) * min(r / b, 10.0)
        tau = Trajectory("sinusoid", {"amplitude": b, "omega": omega,
                                      "phase": rng.uniform(0, 2 * np.pi), "offset": tau_bar - b})
    d = []
    for _ in range(plant.n_d):
        if rng.uniform() < 0.5:
            start = rng.uniform(0.0, 5.0)
            d.append(Trajectory("pulse", {"amplitude": rng.uniform(0.5, 2.0) * rng.choice([-1, 1]),
                                          "start": start, "stop": start + rng.uniform(0.5, 4.0)}))
        else:
            knots = np.arange(0.0, 10.5, 0.5)
            vals = rng.normal(size=knots.size)
            vals[0] = vals[-1] = 0.0
            d.append(Trajectory("tabulated", {"t": knots.tolist(), "values": vals.tolist()}))
    return Scenario(rho=tuple(rho), tau=tau, d=tuple(d), T=T, h=h, name=name)


@dataclass
class History:
    """Uniformly sampled plant-state history, node j at time j * step."""

    step: float
    values: np.ndarray
    count: int

    @property
    def current_time(self) -> float:
        return (self.count - 1) * self.step


def delayed_lookup(history: History, t_query: float) -> np.ndarray:
    """x_p(t_query): zero before time 0, linear interpolation between nodes."""
    n_x = history.values.shape[1]
    if t_query < 0:
        return np.zeros(n_x)
    now = history.current_time
    if t_query > now + 1e-12 * max(1.0, now):
        raise ValueError(f"lookup at {t_query} is beyond the current time {now}")
    s = t_query / history.step
    j = min(int(s), history.count - 1)
    frac = s - j
    if j == history.count - 1 or frac == 0.0:
        return history.values[j].copy()
    return (1.0 - frac) * history.values[j] + frac * history.values[j + 1]


def _eval_many(pmf: ParamMatrixFunction, rhos: np.ndarray) -> np.ndarray:
    out = np.zeros((len(rhos),) + pmf.shape)
    for basis, coeff in pmf.terms:
        vals = np.prod(rhos ** np.asarray(basis.exponents, dtype=float), axis=1)
        out += vals[:, None, None] * coeff
    return out


def _interp_nodes(values: np.ndarray, h: float, q: np.ndarray) -> np.ndarray:
    """Vectorized delayed_lookup over query times (all within the stored range)."""
    out = np.zeros((len(q), values.shape[1]))
    ok = q >= 0
    s = q[ok] / h
    j = np.minimum(np.floor(s).astype(int), len(values) - 1)
    frac = (s - j)[:, None]
    j1 = np.minimum(j + 1, len(values) - 1)
    out[ok] = (1.0 - frac) * values[j] + frac * values[j1]
    return out


@dataclass
class SimulationTrace:
    t: np.ndarray
    x_p: np.ndarray
    x_psi: np.ndarray
    x_delayed: np.ndarray
    w: np.ndarray
    u: np.ndarray
    e: np.ndarray
    d: np.ndarray
    tau: np.ndarray
    rho: np.ndarray

    @property
    def max_abs_u(self) -> float:
        return float(np.abs(self.u).max())

    def columns(self) -> tuple[list[str], np.ndarray]:
        def names(prefix, arr):
            return [prefix] if arr.shape[1] == 1 else [f"{prefix}{i + 1}" for i in range(arr.shape[1])]

        header = ["t"] + [f"x_p{i + 1}" for i in range(self.x_p.shape[1])]
        header += names("u", self.u) + names("e", self.e) + names("d", self.d) + ["tau"]
        header += names("rho", self.rho)
        data = np.column_stack([self.t, self.x_p, self.u, self.e, self.d, self.tau, self.rho])
        return header, data

    def to_csv(self, path) -> None:
        header, data = self.columns()
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            for row in data:
                writer.writerow([repr(float(v)) for v in row])


def simulate(plant: DelayedLpvPlant, realization, gains, scenario: Scenario,
             x0: Sequence[float] | None = None, validate: bool = True) -> SimulationTrace:
    """Integrate the closed loop under ``scenario`` with the scheduled gains.

    ``gains`` is a GainSchedule (or anything with ``evaluate_many``).  The
    plant history is zero before t = 0; ``x0`` sets x_p(0) (default zero).
    """
    n, h = scenario.n_steps, scenario.h
    n_x, n_psi = plant.n_x, realization.n_psi
    t_nodes = np.arange(n + 1) * h
    t_half = np.arange(2 * n + 1) * (0.5 * h)
    if validate:
        scenario.validate(plant, t_nodes)
    rho_s = scenario.rho_at(t_half)
    tau_s = scenario.tau(t_half)
    d_s = scenario.d_at(t_half)

    delay_free = not np.any(tau_s)
    if not delay_free:
        tau_min = float(tau_s.min())
        if h > tau_min / 2:
            raise ScenarioError(f"step {h} exceeds half the smallest delay {tau_min:.6g}")

    A_p, A_d = _eval_many(plant.A_p, rho_s), _eval_many(plant.A_d, rho_s)
    B_p1, B_p2 = _eval_many(plant.B_p1, rho_s), _eval_many(plant.B_p2, rho_s)
    F, H = gains.evaluate_many(rho_s)
    F_x, F_psi = F[:, :, :n_x], F[:, :, n_x:]
    A_f, B_f1, B_f2 = realization.A, realization.B1, realization.B2

    # dz/dt = A_z z + B_z x_delayed + f_z, with u = (F_x + H) x + F_psi x_psi - H x_delayed
    n_z = n_x + n_psi
    A_z = np.zeros((len(t_half), n_z, n_z))
    A_z[:, :n_x, :n_x] = A_p + B_p2 @ (F_x + H)
    A_z[:, :n_x, n_x:] = B_p2 @ F_psi
    A_z[:, n_x:, :n_x] = B_f1 + B_f2
    A_z[:, n_x:, n_x:] = A_f
    B_z = np.zeros((len(t_half), n_z, n_x))
    B_z[:, :n_x] = A_d - B_p2 @ H
    B_z[:, n_x:] = -B_f2
    f_z = np.zeros((len(t_half), n_z))
    f_z[:, :n_x] = np.einsum("kij,kj->ki", B_p1, d_s)
    if delay_free:
        A_z[:, :, :n_x] += B_z

    Z = np.zeros((n + 1, n_z))
    if x0 is not None:
        Z[0, :n_x] = np.asarray(x0, dtype=float)
    X = Z[:, :n_x]

    def rhs(k, z, t_s):
        dz = A_z[k] @ z + f_z[k]
        if delay_free:
            return dz
        q = t_s - tau_s[k]
        if q < 0:
            return dz
        s = q / h
        j = int(s)
        frac = s - j
        xd = X[j] if frac == 0.0 else (1.0 - frac) * X[j] + frac * X[j + 1]
        return dz + B_z[k] @ xd

    for i in range(n):
        t = i * h
        z = Z[i]
        k1 = rhs(2 * i, z, t)
        k2 = rhs(2 * i + 1, z + 0.5 * h * k1, t + 0.5 * h)
        k3 = rhs(2 * i + 1, z + 0.5 * h * k2, t + 0.5 * h)
        k4 = rhs(2 * i + 2, z + h * k3, t + h)
        Z[i + 1] = z + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)

    # Signals at the nodes.
    nodes = slice(0, None, 2)
    rho_n, tau_n, d_n = rho_s[nodes], tau_s[nodes], d_s[nodes]
    x_p, x_psi = Z[:, :n_x], Z[:, n_x:]
    x_del = x_p.copy() if delay_free else _interp_nodes(x_p, h, t_nodes - tau_n)
    w = x_p - x_del
    u = (np.einsum("kij,kj->ki", F_x[nodes], x_p) + np.einsum("kij,kj->ki", F_psi[nodes], x_psi)
         + np.einsum("kij,kj->ki", H[nodes], w))
    e = (np.einsum("kij,kj->ki", _eval_many(plant.C_p1, rho_n), x_p)
         + np.einsum("kij,kj->ki", _eval_many(plant.C_d1, rho_n), x_del)
         + np.einsum("kij,kj->ki", _eval_many(plant.D_p11, rho_n), d_n)
         + np.einsum("kij,kj->ki", _eval_many(plant.D_p12, rho_n), u))
    return SimulationTrace(t=t_nodes, x_p=x_p.copy(), x_psi=x_psi.copy(), x_delayed=x_del, w=w, u=u,
                           e=e, d=d_n, tau=tau_n, rho=rho_n)


def l2_gain_estimate(trace: SimulationTrace) -> float:
    """||e||_2 / ||d||_2 over the horizon, trapezoidal quadrature."""
    d_energy = np.trapezoid(np.sum(trace.d ** 2, axis=1), trace.t)
    if not d_energy > 0:
        raise ValueError("zero disturbance energy")
    e_energy = np.trapezoid(np.sum(trace.e ** 2, axis=1), trace.t)
    return float(np.sqrt(e_energy / d_energy))


def refilter(realization, t: np.ndarray, x_p: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Offline filter states from recorded (x_p, w), first-order hold between samples."""
    n_psi = realization.n_psi
    B = np.hstack([realization.B1, realization.B2])
    sys = (realization.A, B, np.eye(n_psi), np.zeros((n_psi, B.shape[1])))
    _, _, states = lsim(sys, np.hstack([x_p, w]), t)
    return np.atleast_2d(states).reshape(len(t), n_psi)
