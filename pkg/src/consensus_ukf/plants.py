"""Vehicle plants as continuous-time state-space models.

Four benchmark plants are provided: a car cruise controller, a quarter
bus suspension, the longitudinal pitch dynamics of an aircraft and a DC
motor (position and speed variants).  Each factory returns an immutable
:class:`StateSpaceModel`; :func:`discretize` and :func:`as_nonlinear`
turn it into the discrete-time interface the filters consume.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.linalg import expm

from .errors import InvalidParameterError


def _frozen(a, ndim: int = 2) -> np.ndarray:
    arr = np.array(a, dtype=float)
    if ndim == 2:
        arr = np.atleast_2d(arr)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class StateSpaceModel:
    """Continuous-time LTI model ``dx/dt = A x + B u``, ``y = C x + D u``."""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray
    state_names: tuple[str, ...] = ()
    input_names: tuple[str, ...] = ()
    output_names: tuple[str, ...] = ()

    def __post_init__(self):
        for name in "ABCD":
            object.__setattr__(self, name, _frozen(getattr(self, name)))
        n, m, p = self.n_states, self.n_inputs, self.n_outputs
        if self.A.shape != (n, n):
            raise ValueError(f"A must be square, got {self.A.shape}")
        if self.B.shape[0] != n:
            raise ValueError(f"B has {self.B.shape[0]} rows, expected {n}")
        if self.C.shape[1] != n:
            raise ValueError(f"C has {self.C.shape[1]} columns, expected {n}")
        if self.D.shape != (p, m):
            raise ValueError(f"D must be {p}x{m}, got {self.D.shape}")
        for name in "ABCD":
            if not np.all(np.isfinite(getattr(self, name))):
                raise ValueError(f"{name} contains non-finite entries")
        object.__setattr__(self, "state_names", _labels(self.state_names, "x", n))
        object.__setattr__(self, "input_names", _labels(self.input_names, "u", m))
        object.__setattr__(self, "output_names", _labels(self.output_names, "y", p))

    @property
    def n_states(self) -> int:
        return self.A.shape[0]

    @property
    def n_inputs(self) -> int:
        return self.B.shape[1]

    @property
    def n_outputs(self) -> int:
        return self.C.shape[0]

    def transfer(self, s: complex) -> np.ndarray:
        """Evaluate ``C (sI - A)^-1 B + D`` at the complex frequency ``s``."""
        n = self.n_states
        return self.C @ np.linalg.solve(s * np.eye(n) - self.A, self.B) + self.D

    def derivative(self, x, u) -> np.ndarray:
        return self.A @ np.asarray(x, float) + self.B @ np.asarray(u, float)


def _labels(names: Sequence[str], prefix: str, count: int) -> tuple[str, ...]:
    names = tuple(names)
    if not names:
        return tuple(f"{prefix}{i + 1}" for i in range(count))
    if len(names) != count:
        raise ValueError(f"expected {count} labels, got {len(names)}")
    return names


def _require_positive(**values):
    for name, value in values.items():
        if not (np.isfinite(value) and value > 0):
            raise InvalidParameterError(name, f"{name} must be strictly positive, got {value}")


def _require_nonnegative(**values):
    for name, value in values.items():
        if not (np.isfinite(value) and value >= 0):
            raise InvalidParameterError(name, f"{name} must be non-negative, got {value}")


# --------------------------------------------------------------------------- #
# Parameters
# --------------------------------------------------------------------------- #


@dataclass(frozen=True)
class CruiseParams:
    m: float = 1000.0  # kg
    b: float = 50.0  # N.s/m


@dataclass(frozen=True)
class SuspensionParams:
    M1: float = 2500.0  # kg, quarter body mass
    M2: float = 320.0  # kg, suspension mass
    k1: float = 80000.0  # N/m
    k2: float = 500000.0  # N/m
    b1: float = 350.0  # N.s/m
    b2: float = 15020.0  # N.s/m


@dataclass(frozen=True)
class AircraftParams:
    c1: float = -0.313
    c2: float = 56.7
    c3: float = 0.232
    c4: float = -0.0139
    c5: float = -0.426
    c6: float = 0.0203
    c7: float = 56.7


@dataclass(frozen=True)
class MotorParams:
    J: float = 0.01  # kg.m^2
    b: float = 0.1  # N.m.s
    kappa: float = 0.01  # N.m/A == V.s/rad
    R: float = 1.0  # Ohm
    L: float = 0.5  # H


PARAMS_BY_PLANT = {
    "cruise": CruiseParams,
    "suspension": SuspensionParams,
    "aircraft": AircraftParams,
    "motor_position": MotorParams,
    "motor_speed": MotorParams,
}


# --------------------------------------------------------------------------- #
# Factories
# --------------------------------------------------------------------------- #


def make_cruise(params: CruiseParams = CruiseParams()) -> StateSpaceModel:
    """``m dv/dt + b v = u`` with the speed as the only state and output."""
    _require_positive(m=params.m)
    _require_nonnegative(b=params.b)
    m, b = params.m, params.b
    return StateSpaceModel(
        A=[[-b / m]], B=[[1.0 / m]], C=[[1.0]], D=[[0.0]],
        state_names=("v",), input_names=("u",), output_names=("v",),
    )


def make_suspension(params: SuspensionParams = SuspensionParams()) -> StateSpaceModel:
    """Quarter bus suspension with inputs (actuator force u, road height gamma).

    The model is built from the two Newton equations.  The wheel damper acts
    on ``d(gamma)/dt``, so the wheel velocity is first replaced by
    ``w = dx2/dt - (b2/M2) gamma`` to obtain a realization without input
    derivatives.  The states are then mapped to ``(x1, dx1/dt, y1, s4)`` with
    ``y1 = x1 - x2`` and ``s4 = dx1/dt - w``, which equals ``dy1/dt`` whenever
    ``gamma`` is zero (in general ``s4 = dy1/dt + (b2/M2) gamma``).
    """
    p = params
    _require_positive(M1=p.M1, M2=p.M2, k1=p.k1, k2=p.k2, b1=p.b1, b2=p.b2)
    M1, M2, k1, k2, b1, b2 = p.M1, p.M2, p.k1, p.k2, p.b1, p.b2
    c = b2 / M2

    # q = (x1, v1, x2, w); inputs (u, gamma); dx2/dt = w + c*gamma
    Aq = np.array([
        [0.0, 1.0, 0.0, 0.0],
        [-k1 / M1, -b1 / M1, k1 / M1, b1 / M1],
        [0.0, 0.0, 0.0, 1.0],
        [k1 / M2, b1 / M2, -(k1 + k2) / M2, -(b1 + b2) / M2],
    ])
    Bq = np.array([
        [0.0, 0.0],
        [1.0 / M1, b1 * c / M1],
        [0.0, c],
        [-1.0 / M2, (k2 - (b1 + b2) * c) / M2],
    ])
    T = np.array([
        [1.0, 0.0, 0.0, 0.0],
        [0.0, 1.0, 0.0, 0.0],
        [1.0, 0.0, -1.0, 0.0],
        [0.0, 1.0, 0.0, -1.0],
    ])
    A = T @ Aq @ np.linalg.inv(T)
    B = T @ Bq
    return StateSpaceModel(
        A=A, B=B, C=[[0.0, 0.0, 1.0, 0.0]], D=[[0.0, 0.0]],
        state_names=("x1", "x1_dot", "y1", "y1_dot"),
        input_names=("u", "gamma"), output_names=("y1",),
    )


def make_aircraft(params: AircraftParams = AircraftParams()) -> StateSpaceModel:
    """Longitudinal pitch dynamics, states (alpha, q, theta), input elevator delta."""
    c = params
    values = [c.c1, c.c2, c.c3, c.c4, c.c5, c.c6, c.c7]
    for i, v in enumerate(values, 1):
        if not np.isfinite(v):
            raise InvalidParameterError(f"c{i}", f"c{i} must be finite")
    return StateSpaceModel(
        A=[[c.c1, c.c2, 0.0], [c.c4, c.c5, 0.0], [0.0, c.c7, 0.0]],
        B=[[c.c3], [c.c6], [0.0]],
        C=[[0.0, 0.0, 1.0]], D=[[0.0]],
        state_names=("alpha", "q", "theta"), input_names=("delta",),
        output_names=("theta",),
    )


def _check_motor(p: MotorParams):
    _require_positive(J=p.J, kappa=p.kappa, R=p.R, L=p.L)
    _require_nonnegative(b=p.b)


def make_motor(params: MotorParams = MotorParams()) -> StateSpaceModel:
    """DC motor with states (theta, theta_dot, i), voltage input, outputs (theta, theta_dot)."""
    _check_motor(params)
    J, b, k, R, L = params.J, params.b, params.kappa, params.R, params.L
    return StateSpaceModel(
        A=[[0.0, 1.0, 0.0], [0.0, -b / J, k / J], [0.0, -k / L, -R / L]],
        B=[[0.0], [0.0], [1.0 / L]],
        C=[[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]], D=[[0.0], [0.0]],
        state_names=("theta", "theta_dot", "i"), input_names=("V",),
        output_names=("theta", "theta_dot"),
    )


def make_motor_speed(params: MotorParams = MotorParams()) -> StateSpaceModel:
    """Speed loop of the DC motor: states (theta_dot, i), output theta_dot.

    The shaft angle is a pure integrator that neither affects the speed nor
    can be held by a speed reference, so it is dropped for speed control.
    """
    _check_motor(params)
    J, b, k, R, L = params.J, params.b, params.kappa, params.R, params.L
    return StateSpaceModel(
        A=[[-b / J, k / J], [-k / L, -R / L]],
        B=[[0.0], [1.0 / L]],
        C=[[1.0, 0.0]], D=[[0.0]],
        state_names=("theta_dot", "i"), input_names=("V",),
        output_names=("theta_dot",),
    )


FACTORIES: dict[str, Callable[..., StateSpaceModel]] = {
    "cruise": make_cruise,
    "suspension": make_suspension,
    "aircraft": make_aircraft,
    "motor_position": make_motor,
    "motor_speed": make_motor_speed,
}


def make_plant(name: str, params: dict | None = None) -> StateSpaceModel:
    try:
        factory = FACTORIES[name]
    except KeyError:
        raise InvalidParameterError("plant", f"unknown plant {name!r}") from None
    return factory(PARAMS_BY_PLANT[name](**(params or {})))


# --------------------------------------------------------------------------- #
# Discretization
# --------------------------------------------------------------------------- #


@dataclass(frozen=True)
class DiscreteModel:
    """Zero-order-hold sampled model ``x[k+1] = F x[k] + G u[k]``, ``y = C x + D u``."""

    F: np.ndarray
    G: np.ndarray
    C: np.ndarray
    D: np.ndarray
    ts: float
    continuous: StateSpaceModel | None = field(default=None, compare=False)

    def __post_init__(self):
        for name in "FGCD":
            object.__setattr__(self, name, _frozen(getattr(self, name)))

    @property
    def n_states(self) -> int:
        return self.F.shape[0]

    def step(self, x, u) -> np.ndarray:
        return self.F @ x + self.G @ u


def discretize(model: StateSpaceModel, ts: float) -> DiscreteModel:
    """Exact ZOH sampling through the exponential of ``[[A, B], [0, 0]] * ts``."""
    if not ts > 0:
        raise InvalidParameterError("ts", f"sampling period must be positive, got {ts}")
    n, m = model.n_states, model.n_inputs
    M = np.zeros((n + m, n + m))
    M[:n, :n] = model.A
    M[:n, n:] = model.B
    E = expm(M * ts)
    return DiscreteModel(F=E[:n, :n], G=E[:n, n:], C=model.C, D=model.D, ts=ts,
                         continuous=model)


# --------------------------------------------------------------------------- #
# Filter-facing interface
# --------------------------------------------------------------------------- #


def _as_cov(value, dim: int, name: str) -> np.ndarray:
    cov = np.array(value, dtype=float)
    if cov.ndim == 0:
        cov = cov * np.eye(dim)
    elif cov.ndim == 1:
        cov = np.diag(cov)
    if cov.shape != (dim, dim):
        raise ValueError(f"{name} must be {dim}x{dim}, got {cov.shape}")
    if not np.allclose(cov, cov.T, atol=1e-12, rtol=1e-12):
        raise ValueError(f"{name} must be symmetric")
    if np.linalg.eigvalsh(cov).min() < -1e-10 * max(1.0, np.abs(cov).max()):
        raise ValueError(f"{name} must be positive semi-definite")
    return cov


@dataclass(frozen=True)
class NonlinearModel:
    """``x[k+1] = f(x[k], u[k]) + q``, ``y[k] = h(x[k]) + r``.

    When ``vectorized`` is true, ``f`` and ``h`` accept an ``(n, N)`` array of
    column states and return column results; otherwise they are called once
    per column.
    """

    f: Callable[[np.ndarray, np.ndarray], np.ndarray]
    h: Callable[[np.ndarray], np.ndarray]
    Q: np.ndarray
    R: np.ndarray
    ts: float
    vectorized: bool = False
    linear: DiscreteModel | None = field(default=None, compare=False)

    def __post_init__(self):
        if not self.ts > 0:
            raise ValueError("ts must be positive")
        Q = np.atleast_2d(np.asarray(self.Q, float))
        R = np.atleast_2d(np.asarray(self.R, float))
        object.__setattr__(self, "Q", _as_cov(Q, Q.shape[0], "Q"))
        object.__setattr__(self, "R", _as_cov(R, R.shape[0], "R"))

    @property
    def n_states(self) -> int:
        return self.Q.shape[0]

    @property
    def n_outputs(self) -> int:
        return self.R.shape[0]

    def propagate(self, X: np.ndarray, u) -> np.ndarray:
        """Apply ``f`` to every column of ``X``."""
        if self.vectorized:
            return np.asarray(self.f(X, u), float)
        return np.column_stack([self.f(X[:, i], u) for i in range(X.shape[1])])

    def observe(self, X: np.ndarray) -> np.ndarray:
        if self.vectorized:
            return np.asarray(self.h(X), float)
        return np.column_stack([self.h(X[:, i]) for i in range(X.shape[1])])


def as_nonlinear(model: DiscreteModel, Q, R, input_index: Sequence[int] | None = None) -> NonlinearModel:
    """Wrap a sampled linear model as ``f(x, u) = F x + G u``, ``h(x) = C x``.

    ``Q`` and ``R`` may be scalars (times identity), diagonals or full matrices.
    """
    n, p = model.n_states, model.C.shape[0]
    Qm = _as_cov(Q, n, "Q")
    Rm = _as_cov(R, p, "R")
    F, G, C = model.F, model.G, model.C

    def f(x, u):
        u = np.asarray(u, float)
        if x.ndim == 2:
            return F @ x + (G @ u)[:, None]
        return F @ x + G @ u

    def h(x):
        return C @ x

    return NonlinearModel(f=f, h=h, Q=Qm, R=Rm, ts=model.ts, vectorized=True, linear=model)
