"""Controller synthesis and discrete controller evaluation.

State feedback is designed on the continuous model (Ackermann pole
placement or LQR) and combined with a reference precompensator; the
classical PID and lag/lead forms are evaluated sample by sample with
explicit state objects.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.linalg import schur, solve_continuous_lyapunov

from .errors import (
    ControllabilityError,
    InvalidSpecError,
    NumericalError,
    PrecompensationInfeasibleError,
    StabilizabilityError,
)
from .plants import DiscreteModel, StateSpaceModel


@dataclass(frozen=True)
class StateFeedbackLaw:
    """``u[idx] = Nbar r - K x - Ki z`` with ``z`` the running integral of ``y - r``.

    The remaining inputs pass through unchanged.  ``Ki == 0`` disables the
    integrator; ``output_row`` is the output row it integrates.
    """

    K: np.ndarray
    Nbar: float = 1.0
    actuated_input_index: int = 0
    Ki: float = 0.0
    output_row: np.ndarray | None = None

    def __call__(self, x, r: float, z: float = 0.0) -> float:
        return float(self.Nbar * r - self.K @ np.asarray(x, float) - self.Ki * z)

    def integrate(self, x, r: float, z: float, ts: float) -> float:
        """Forward-Euler update of the integrator state over one sample."""
        if self.Ki == 0.0:
            return z
        return z + ts * (float(self.output_row @ np.asarray(x, float)) - r)

    def closed_loop(self, model: StateSpaceModel) -> np.ndarray:
        b = model.B[:, [self.actuated_input_index]]
        return model.A - b @ np.atleast_2d(self.K)

    def is_stable(self, model: StateSpaceModel) -> bool:
        return bool(np.all(np.linalg.eigvals(self.closed_loop(model)).real < 0))


def controllability_matrix(A: np.ndarray, b: np.ndarray) -> np.ndarray:
    n = A.shape[0]
    cols = [b.reshape(n)]
    for _ in range(n - 1):
        cols.append(A @ cols[-1])
    return np.column_stack(cols)


def _check_poles(poles, n: int) -> np.ndarray:
    poles = np.atleast_1d(np.asarray(poles, dtype=complex))
    if poles.size != n:
        raise InvalidSpecError(f"need {n} poles, got {poles.size}")
    tol = 1e-9 * max(1.0, np.abs(poles).max())
    for p in poles[np.abs(poles.imag) > tol]:
        if np.abs(poles - p.conjugate()).min() > tol:
            raise InvalidSpecError(f"pole {p} has no conjugate partner")
    return poles


def ackermann(A, b, poles) -> np.ndarray:
    """Gain ``k`` with ``eig(A - b k) = poles`` for a single input column ``b``."""
    A = np.atleast_2d(np.asarray(A, float))
    n = A.shape[0]
    poles = _check_poles(poles, n)
    ctrb = controllability_matrix(A, np.asarray(b, float))
    if np.linalg.matrix_rank(ctrb) < n:
        raise ControllabilityError("(A, b) is not controllable")
    coeffs = np.real_if_close(np.poly(poles), tol=1e6).real
    # phi(A) by Horner's scheme
    phi = np.zeros_like(A)
    for c in coeffs:
        phi = phi @ A + c * np.eye(n)
    last_row = np.linalg.solve(ctrb.T, np.eye(n)[:, -1])
    return last_row @ phi


def place_poles(model: StateSpaceModel, poles, input_index: int = 0) -> np.ndarray:
    """Single-input pole placement by Ackermann's formula.

    Returns the ``(n,)`` gain ``K`` so that ``A - B[:, input_index] K`` has the
    requested eigenvalues.
    """
    try:
        return ackermann(model.A, model.B[:, input_index], poles)
    except ControllabilityError:
        raise ControllabilityError(
            f"(A, B[:, {input_index}]) is not controllable") from None


def place_poles_discrete(model: DiscreteModel, poles, input_index: int = 0) -> np.ndarray:
    """Sampled-data placement: continuous ``poles`` are mapped to ``exp(p ts)``
    and placed on the ZOH pair ``(F, G[:, input_index])``."""
    zpoles = np.exp(np.asarray(poles, dtype=complex) * model.ts)
    return ackermann(model.F, model.G[:, input_index], zpoles)


def augment_integral(model: StateSpaceModel, output_index: int = 0) -> StateSpaceModel:
    """Append ``z' = y[output_index]`` as an extra state (integral action)."""
    n, m = model.n_states, model.n_inputs
    c = model.C[[output_index], :]
    A = np.block([[model.A, np.zeros((n, 1))], [c, np.zeros((1, 1))]])
    B = np.vstack([model.B, np.zeros((1, m))])
    C = np.hstack([model.C, np.zeros((model.n_outputs, 1))])
    return StateSpaceModel(A, B, C, model.D,
                           state_names=model.state_names + (f"int_{model.output_names[output_index]}",),
                           input_names=model.input_names, output_names=model.output_names)


def precompensator(model: StateSpaceModel, K, input_index: int = 0,
                   output_index: int = 0) -> float:
    """Reference gain ``Nbar = Nu + K Nx`` for unity DC gain from r to y.

    ``[Nx; Nu]`` solves ``[[A, b], [c, d]] [Nx; Nu] = [0; 1]`` for the chosen
    input column and output row.
    """
    n = model.n_states
    b = model.B[:, [input_index]]
    c = model.C[[output_index], :]
    d = model.D[[output_index], :][:, [input_index]]
    aug = np.block([[model.A, b], [c, d]])
    rhs = np.zeros(n + 1)
    rhs[-1] = 1.0
    if np.linalg.cond(aug) > 1e12:
        raise PrecompensationInfeasibleError(
            "augmented matrix [A B; C D] is singular: the plant has a zero at "
            f"the origin for output {output_index}")
    N = np.linalg.solve(aug, rhs)
    Nx, Nu = N[:n], N[n]
    return float(Nu + np.ravel(K) @ Nx)


def precompensator_discrete(model: DiscreteModel, K, input_index: int = 0,
                            output_index: int = 0) -> float:
    """Reference gain giving unity DC gain for the sampled loop ``F - G K``."""
    n = model.n_states
    aug = np.block([[model.F - np.eye(n), model.G[:, [input_index]]],
                    [model.C[[output_index], :], model.D[[output_index], :][:, [input_index]]]])
    if np.linalg.cond(aug) > 1e12:
        raise PrecompensationInfeasibleError(
            f"sampled plant has a zero at z = 1 for output {output_index}")
    rhs = np.zeros(n + 1)
    rhs[-1] = 1.0
    N = np.linalg.solve(aug, rhs)
    return float(N[n] + np.ravel(K) @ N[:n])


# --------------------------------------------------------------------------- #
# LQR
# --------------------------------------------------------------------------- #


def _care_residual(A, B, Q, R, P) -> np.ndarray:
    return A.T @ P + P @ A - P @ B @ np.linalg.solve(R, B.T @ P) + Q


def care_residual_norm(A, B, Q, R, P) -> float:
    return float(np.linalg.norm(_care_residual(A, B, Q, R, P)))


def _check_stabilizable(A, B):
    n = A.shape[0]
    for lam in np.linalg.eigvals(A):
        if lam.real >= -1e-12:
            pbh = np.hstack([A - lam * np.eye(n), B])
            if np.linalg.matrix_rank(pbh, tol=1e-9 * max(1.0, np.abs(pbh).max())) < n:
                raise StabilizabilityError(
                    f"(A, B) is not stabilizable: mode {lam:.6g} is uncontrollable")


def solve_care(A, B, Q, R, tol: float = 1e-10, max_iter: int = 50) -> np.ndarray:
    """Continuous algebraic Riccati equation ``A'P + PA - PBR^-1B'P + Q = 0``.

    The stable invariant subspace of the Hamiltonian gives a first solution,
    which Newton-Kleinman iterations then refine to a residual below ``tol``
    (scaled by ``max(1, |Q|)``).
    """
    A, B, Q, R = (np.atleast_2d(np.asarray(M, float)) for M in (A, B, Q, R))
    n = A.shape[0]
    _check_stabilizable(A, B)
    G = B @ np.linalg.solve(R, B.T)
    H = np.block([[A, -G], [-Q, -A.T]])
    T, Z, sdim = schur(H, sort="lhp")
    if sdim != n:
        raise StabilizabilityError(
            "Hamiltonian has eigenvalues on the imaginary axis; "
            "check stabilizability and detectability")
    U11, U21 = Z[:n, :n], Z[n:, :n]
    P = np.linalg.solve(U11.T, U21.T).T
    P = 0.5 * (P + P.T)

    scale = max(1.0, np.linalg.norm(Q))
    best = care_residual_norm(A, B, Q, R, P)
    for _ in range(max_iter):
        if best < tol * scale:
            return P
        K = np.linalg.solve(R, B.T @ P)
        Acl = A - B @ K
        if np.any(np.linalg.eigvals(Acl).real >= 0):
            break
        P_new = solve_continuous_lyapunov(Acl.T, -(Q + K.T @ R @ K))
        P_new = 0.5 * (P_new + P_new.T)
        res = care_residual_norm(A, B, Q, R, P_new)
        if res >= best:
            break
        P, best = P_new, res
    if best < tol * scale:
        return P
    raise NumericalError(f"Riccati iteration stalled at residual {best:.3e}")


def lqr_gain(model: StateSpaceModel, Qw, Rw, input_index: int | None = None) -> np.ndarray:
    """LQR gain ``K = Rw^-1 B' P``.

    With ``input_index`` set, only that column of ``B`` is used and a
    ``(n,)`` gain is returned.
    """
    B = model.B if input_index is None else model.B[:, [input_index]]
    Qw = np.atleast_2d(np.asarray(Qw, float))
    Rw = np.atleast_2d(np.asarray(Rw, float))
    if np.any(np.linalg.eigvalsh(0.5 * (Rw + Rw.T)) <= 0):
        raise InvalidSpecError("Rw must be positive definite")
    P = solve_care(model.A, B, Qw, Rw)
    K = np.linalg.solve(Rw, B.T @ P)
    return K[0] if input_index is not None else K


# --------------------------------------------------------------------------- #
# Classical controllers
# --------------------------------------------------------------------------- #


@dataclass(frozen=True)
class PidGains:
    Kp: float = 0.0
    Ki: float = 0.0
    Kd: float = 0.0
    ts: float = 0.01

    def __post_init__(self):
        if min(self.Kp, self.Ki, self.Kd) < 0:
            raise InvalidSpecError("PID gains must be non-negative")
        if self.Kp == self.Ki == self.Kd == 0:
            raise InvalidSpecError("at least one PID gain must be nonzero")
        if not self.ts > 0:
            raise InvalidSpecError("ts must be positive")


@dataclass(frozen=True)
class PidState:
    integral: float = 0.0
    prev_error: float = 0.0


def pid_control(gains: PidGains, e_k: float, state: PidState = PidState()):
    """One PID sample: trapezoidal integral, backward-difference derivative.

    Returns ``(u_k, new_state)``.  The error before the first sample is taken
    as zero.
    """
    integral = state.integral + 0.5 * gains.ts * (e_k + state.prev_error)
    derivative = (e_k - state.prev_error) / gains.ts
    u = gains.Kp * e_k + gains.Ki * integral + gains.Kd * derivative
    return u, PidState(integral=integral, prev_error=e_k)


@dataclass(frozen=True)
class DesignSpecs:
    rise_time: float
    overshoot: float

    def __post_init__(self):
        if not self.rise_time > 0:
            raise InvalidSpecError("rise time must be positive")
        if not 0 < self.overshoot < 1:
            raise InvalidSpecError("overshoot must lie in (0, 1)")


def design_specs_to_params(specs: DesignSpecs) -> tuple[float, float]:
    """Minimum natural frequency and damping ratio meeting rise time and overshoot."""
    omega_n = 1.8 / specs.rise_time
    ln_mp = math.log(specs.overshoot)
    zeta = math.sqrt(ln_mp ** 2 / (math.pi ** 2 + ln_mp ** 2))
    return omega_n, zeta


@dataclass(frozen=True)
class CompensatorTF:
    """First-order compensator ``K (s + z0) / (s + p0)``."""

    z0: float
    p0: float
    K: float = 1.0
    kind: str = "lag"

    def __post_init__(self):
        # z0 == p0 is allowed for either kind: the compensator is then a static gain
        if self.kind == "lag" and not self.z0 >= self.p0 > 0:
            raise InvalidSpecError("lag compensator needs z0 > p0 > 0")
        if self.kind == "lead" and not self.p0 >= self.z0 > 0:
            raise InvalidSpecError("lead compensator needs p0 > z0 > 0")
        if self.kind not in ("lag", "lead"):
            raise InvalidSpecError(f"unknown compensator kind {self.kind!r}")

    def state_space(self) -> StateSpaceModel:
        """Realization ``w' = -p0 w + e``, ``u = K (z0 - p0) w + K e``."""
        return StateSpaceModel(A=[[-self.p0]], B=[[1.0]], C=[[self.K * (self.z0 - self.p0)]],
                               D=[[self.K]], state_names=("w",), input_names=("e",),
                               output_names=("u",))

    def discrete_coefficients(self, ts: float) -> tuple[float, float, float]:
        """Tustin map to ``u[k] = b0 e[k] + b1 e[k-1] - a1 u[k-1]``."""
        c = 2.0 / ts
        den = c + self.p0
        b0 = self.K * (c + self.z0) / den
        b1 = self.K * (self.z0 - c) / den
        a1 = (self.p0 - c) / den
        return b0, b1, a1


@dataclass(frozen=True)
class CompensatorState:
    prev_error: float = 0.0
    prev_output: float = 0.0


def compensator_apply(comp: CompensatorTF, e_k: float, ts: float,
                      state: CompensatorState = CompensatorState()):
    b0, b1, a1 = comp.discrete_coefficients(ts)
    u = b0 * e_k + b1 * state.prev_error - a1 * state.prev_output
    return u, replace(state, prev_error=e_k, prev_output=u)
