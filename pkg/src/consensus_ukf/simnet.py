"""Closed-loop simulation of a plant, its controller and a filter network.

Draw order per step is fixed so traces are reproducible from the seed:
one standard-normal vector for the process noise of the true state
(drawn even when process noise is disabled), then one vector per node for
its measurement noise, in node order.  The generator is numpy's PCG64.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from . import control, plants
from .consensus import (
    TOPOLOGIES,
    ConsensusNetwork,
    NodeFilter,
    distributed_step,
    metropolis_weights,
    validate_network,
)
from .errors import CovarianceNotPSDError, DivergenceError, NumericalError
from .plants import NonlinearModel
from .scenario import Scenario, resolve_cov, schedule_value
from .ukf import UnscentedKalmanFilter, UtParams


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


def noise_factor(cov) -> np.ndarray:
    """Square-root factor ``S`` with ``S S' = cov``: Cholesky, or eigen-based when singular."""
    cov = np.atleast_2d(np.asarray(cov, float))
    if not np.allclose(cov, cov.T, rtol=1e-12, atol=1e-14):
        raise CovarianceNotPSDError("noise covariance is not symmetric")
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        pass
    w, V = np.linalg.eigh(cov)
    if w.min() < -1e-10 * max(1.0, np.abs(w).max()):
        raise CovarianceNotPSDError("noise covariance is not positive semi-definite")
    return V * np.sqrt(np.clip(w, 0.0, None))


def gaussian_noise(cov, rng: np.random.Generator) -> np.ndarray:
    """One draw from ``N(0, cov)`` as ``S z`` with ``z`` standard normal."""
    S = noise_factor(cov)
    return S @ rng.standard_normal(S.shape[0])


# --------------------------------------------------------------------------- #
# Scenario assembly
# --------------------------------------------------------------------------- #


@dataclass
class Setup:
    """Everything a run needs, built from a :class:`Scenario`."""

    scenario: Scenario
    plant: plants.StateSpaceModel
    discrete: plants.DiscreteModel
    model: NonlinearModel
    law: control.StateFeedbackLaw | None
    net: ConsensusNetwork
    ut: UtParams
    x0_true: np.ndarray
    x0_hat: np.ndarray
    P0: np.ndarray
    Q_true: np.ndarray


def build_network(spec) -> ConsensusNetwork:
    k = spec.nodes
    if spec.topology == "explicit":
        Pi = np.array(spec.Pi, float)
        if spec.adjacency is not None:
            adj = np.array(spec.adjacency, bool)
        else:
            adj = (Pi > 0) | (Pi.T > 0)
        np.fill_diagonal(adj, False)
        return ConsensusNetwork(adj, Pi)
    adj = TOPOLOGIES[spec.topology](k)
    if spec.adjacency is not None:
        adj = np.array(spec.adjacency, bool)
    Pi = np.array(spec.Pi, float) if spec.Pi is not None else metropolis_weights(adj)
    return ConsensusNetwork(adj, Pi)


def build_controller(s: Scenario, plant: plants.StateSpaceModel) -> control.StateFeedbackLaw | None:
    spec = s.controller
    if spec.type == "none":
        return None
    design = control.augment_integral(plant, spec.output_index) if spec.integral_action else plant
    disc = plants.discretize(design, s.ts) if spec.design == "discrete" else None
    if spec.type == "pole_placement":
        if disc is not None:
            K = control.place_poles_discrete(disc, spec.pole_values(), spec.input_index)
        else:
            K = control.place_poles(design, spec.pole_values(), spec.input_index)
    else:
        if disc is not None:
            raise ValueError("discrete design is only available for pole placement")
        C = design.C[[spec.output_index], :]
        Qw = spec.lqr.output_weight * C.T @ C
        if spec.integral_action:
            Qw[-1, -1] = spec.lqr.output_weight
        K = control.lqr_gain(design, Qw, spec.lqr.Rw, input_index=spec.input_index)
    K = np.asarray(K, float)
    n = plant.n_states
    if spec.integral_action:
        # the integrator drives y to r, so no reference feedforward is needed
        return control.StateFeedbackLaw(K=K[:n], Nbar=0.0, actuated_input_index=spec.input_index,
                                        Ki=float(K[n]), output_row=plant.C[spec.output_index].copy())
    Nbar = 0.0
    if spec.precompensate:
        if disc is not None:
            Nbar = control.precompensator_discrete(disc, K, spec.input_index, spec.output_index)
        else:
            Nbar = control.precompensator(plant, K, spec.input_index, spec.output_index)
    return control.StateFeedbackLaw(K=K, Nbar=Nbar, actuated_input_index=spec.input_index)


def setup(s: Scenario) -> Setup:
    plant = plants.make_plant(s.plant.type, s.plant.params)
    n = plant.n_states
    disc = plants.discretize(plant, s.ts)
    Q = resolve_cov(s.filter.Q, n, plant.C)
    R = resolve_cov(s.filter.R, plant.n_outputs, plant.C)
    model = plants.as_nonlinear(disc, Q, R)
    law = build_controller(s, plant)
    net = build_network(s.network)
    validate_network(net)
    kappa = s.filter.ut.kappa
    ut = UtParams(L=n, alpha=s.filter.ut.alpha, beta=s.filter.ut.beta, kappa=kappa)

    def vec(values, name):
        if values is None:
            return np.zeros(n)
        arr = np.asarray(values, float)
        if arr.shape != (n,):
            raise ValueError(f"{name} must have {n} entries")
        return arr

    P0 = np.asarray(s.filter.P0, float) if s.filter.P0 is not None else s.filter.p0 * np.eye(n)
    return Setup(s, plant, disc, model, law, net, ut,
                 vec(s.truth.x0, "truth.x0"), vec(s.filter.x0, "filter.x0"), P0, Q)


# --------------------------------------------------------------------------- #
# Traces and metrics
# --------------------------------------------------------------------------- #


@dataclass
class TraceRecord:
    t: float
    x_true: np.ndarray
    y_meas: np.ndarray  # (nodes, p)
    x_hat: np.ndarray  # (nodes, n)
    u: np.ndarray
    e: np.ndarray  # (nodes, n), x_hat - x_true
    r: float = 0.0


@dataclass
class Trace:
    """Column-oriented run output; row ``k`` is the state at ``t[k]``.

    ``u[k]`` is the input held over the interval ending at ``t[k]`` (zero for
    the initial row) and ``y_meas[0]`` is NaN because no measurement exists
    before the first step.
    """

    t: np.ndarray
    x_true: np.ndarray  # (N, n)
    y_meas: np.ndarray  # (N, nodes, p)
    x_hat: np.ndarray  # (N, nodes, n)
    u: np.ndarray  # (N, m)
    r: np.ndarray  # (N,)
    y_true: np.ndarray  # (N, p) noise-free outputs
    state_names: tuple[str, ...] = ()
    input_names: tuple[str, ...] = ()
    output_names: tuple[str, ...] = ()

    @property
    def e(self) -> np.ndarray:
        return self.x_hat - self.x_true[:, None, :]

    @property
    def num_nodes(self) -> int:
        return self.x_hat.shape[1]

    def __len__(self) -> int:
        return self.t.size

    def __iter__(self) -> Iterator[TraceRecord]:
        e = self.e
        for k in range(len(self)):
            yield TraceRecord(float(self.t[k]), self.x_true[k], self.y_meas[k], self.x_hat[k],
                              self.u[k], e[k], float(self.r[k]))

    def records(self) -> list[TraceRecord]:
        return list(self)


@dataclass
class MetricsSummary:
    rmse: np.ndarray  # (nodes, n)
    max_abs_error: np.ndarray  # (nodes, n)
    max_error_norm: np.ndarray  # (nodes,)
    settling_time: float | None  # None when the tracked output never settles
    steady_state_error: float
    error_bound: float | None = None
    bound_respected: bool | None = None
    extra: dict = field(default_factory=dict)

    def to_dict(self, state_names=()) -> dict:
        names = list(state_names) or [f"x{i + 1}" for i in range(self.rmse.shape[1])]
        return {
            "rmse": {f"node{i + 1}": dict(zip(names, map(float, row))) for i, row in enumerate(self.rmse)},
            "max_abs_error": {f"node{i + 1}": dict(zip(names, map(float, row)))
                              for i, row in enumerate(self.max_abs_error)},
            "max_error_norm": {f"node{i + 1}": float(v) for i, v in enumerate(self.max_error_norm)},
            "settling_time": self.settling_time,
            "steady_state_error": float(self.steady_state_error),
            "error_bound": self.error_bound,
            "bound_respected": self.bound_respected,
            **self.extra,
        }


def settling_time(t, y, target: float, t_event: float, band: float) -> float | None:
    """Time after ``t_event`` at which ``y`` enters ``|y - target| <= band`` for good."""
    t = np.asarray(t)
    y = np.asarray(y)
    sel = t >= t_event - 1e-12
    tt, yy = t[sel], y[sel]
    outside = np.abs(yy - target) > band
    if not outside.any():
        return 0.0
    last = int(np.flatnonzero(outside)[-1])
    if last == tt.size - 1:
        return None
    return float(tt[last + 1] - t_event)


def rmse(e: np.ndarray, axis=0) -> np.ndarray:
    return np.sqrt(np.mean(np.square(e), axis=axis))


def compute_metrics(trace: Trace, s: Scenario) -> MetricsSummary:
    e = trace.e[1:]
    out_idx = s.controller.output_index
    y = trace.y_true[:, out_idx]
    # the last reference switch or disturbance event defines the settling window
    events = [seg.start for seg in s.references]
    if s.disturbance is not None:
        events += [seg.start for seg in s.disturbance.schedule]
    t_event = max(events) if events else 0.0
    target = float(trace.r[-1])
    sel = trace.t >= t_event - 1e-12
    if abs(target) > 0:
        band = 0.02 * abs(target)
    else:
        peak = float(np.abs(y[sel] - target).max()) if sel.any() else 0.0
        band = 0.02 * peak if peak > 0 else 1e-12
    ts_settle = settling_time(trace.t, y, target, t_event, band)
    window = trace.t >= trace.t[-1] - s.metrics.steady_window + 1e-12
    mean_final = float(np.mean(y[window]))
    sse = abs(mean_final - target) / abs(target) if target != 0 else abs(mean_final - target)
    norms = np.linalg.norm(e, axis=2) if e.size else np.zeros((0, trace.num_nodes))
    max_norm = norms.max(axis=0) if norms.size else np.zeros(trace.num_nodes)
    bound = s.metrics.error_bound
    return MetricsSummary(
        rmse=rmse(e),
        max_abs_error=np.abs(e).max(axis=0),
        max_error_norm=max_norm,
        settling_time=ts_settle,
        steady_state_error=sse,
        error_bound=bound,
        bound_respected=None if bound is None else bool(np.all(max_norm <= bound)),
    )


# --------------------------------------------------------------------------- #
# Simulation loop
# --------------------------------------------------------------------------- #


class _Loop:
    """Shared state of one closed-loop run."""

    def __init__(self, st: Setup):
        self.st = st
        s = st.scenario
        self.rng = make_rng(s.rng_seed)
        self.k_nodes = st.net.num_nodes
        self.Sq = noise_factor(st.Q_true)
        self.Sr = noise_factor(st.model.R)
        self.n = st.plant.n_states
        self.m = st.plant.n_inputs
        self.p = st.plant.n_outputs
        self.z = 0.0  # controller integrator state

    def reference(self, t: float) -> float:
        return schedule_value(self.st.scenario.references, t)

    def input(self, t: float, x_fb: np.ndarray) -> np.ndarray:
        s = self.st.scenario
        u = np.zeros(self.m)
        law = self.st.law
        if law is not None:
            r = self.reference(t)
            u[s.controller.input_index] = law(x_fb, r, self.z)
            self.z = law.integrate(x_fb, r, self.z, s.ts)
        if s.disturbance is not None:
            u[s.disturbance.input_index] += schedule_value(s.disturbance.schedule, t)
        return u

    def advance(self, x: np.ndarray, u: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """True-state step followed by one noisy measurement per node."""
        s = self.st.scenario
        F, G, C = self.st.discrete.F, self.st.discrete.G, self.st.discrete.C
        zq = self.rng.standard_normal(self.n)
        x_next = F @ x + G @ u
        if s.truth.process_noise:
            x_next = x_next + self.Sq @ zq
        zr = self.rng.standard_normal((self.k_nodes, self.p))
        y_clean = C @ x_next
        if s.truth.measurement_noise:
            ys = y_clean[None, :] + zr @ self.Sr.T
        else:
            ys = np.repeat(y_clean[None, :], self.k_nodes, axis=0)
        return x_next, ys


def _node_filters(st: Setup) -> list[NodeFilter]:
    masks = st.scenario.network.output_masks
    return [NodeFilter(i, st.model, st.x0_hat.copy(), st.P0.copy(), st.ut,
                       None if masks is None else masks[i])
            for i in range(st.net.num_nodes)]


def _allocate(st: Setup, N: int, k: int) -> Trace:
    n, m, p = st.plant.n_states, st.plant.n_inputs, st.plant.n_outputs
    trace = Trace(
        t=np.arange(N + 1) * st.scenario.ts,
        x_true=np.empty((N + 1, n)),
        y_meas=np.full((N + 1, k, p), np.nan),
        x_hat=np.empty((N + 1, k, n)),
        u=np.zeros((N + 1, m)),
        r=np.empty(N + 1),
        y_true=np.empty((N + 1, p)),
        state_names=st.plant.state_names,
        input_names=st.plant.input_names,
        output_names=st.plant.output_names,
    )
    return trace


def _check_finite(estimates, step: int):
    for i, est in enumerate(estimates):
        if not (np.all(np.isfinite(est.x_hat)) and np.all(np.isfinite(est.P))):
            raise DivergenceError(step, f"node {i + 1} estimate is not finite")


def run_scenario(s: Scenario, st: Setup | None = None) -> tuple[Trace, MetricsSummary]:
    """Simulate the closed loop with the consensus filter network.

    Per step: the controller acts on the fed-back state, the true state
    advances, every node measures, then the network predicts, updates
    locally and fuses (see :func:`~consensus_ukf.consensus.distributed_step`).
    """
    st = st or setup(s)
    loop = _Loop(st)
    nodes = _node_filters(st)
    N = s.n_steps
    trace = _allocate(st, N, len(nodes))
    x = st.x0_true.copy()
    fb = s.controller
    C = st.discrete.C

    trace.x_true[0] = x
    trace.x_hat[0] = [nd.x_hat for nd in nodes]
    trace.r[0] = loop.reference(0.0)
    trace.y_true[0] = C @ x
    for k in range(N):
        t = k * s.ts
        x_fb = x if fb.feedback == "truth" else nodes[fb.feedback_node].x_hat
        u = loop.input(t, x_fb)
        x, ys = loop.advance(x, u)
        try:
            estimates = distributed_step(nodes, u, ys, st.net, s.network.l)
        except NumericalError as exc:
            raise DivergenceError(k + 1, str(exc)) from None
        _check_finite(estimates, k + 1)
        if not np.all(np.isfinite(x)):
            raise DivergenceError(k + 1, "true state is not finite")
        row = k + 1
        trace.x_true[row] = x
        trace.y_meas[row] = ys
        trace.x_hat[row] = [e.x_hat for e in estimates]
        trace.u[row] = u
        trace.r[row] = loop.reference(row * s.ts)
        trace.y_true[row] = C @ x
    return trace, compute_metrics(trace, s)


# --------------------------------------------------------------------------- #
# Centralized / consensus / isolated comparison
# --------------------------------------------------------------------------- #


@dataclass
class ComparisonReport:
    consensus: Trace
    centralized: Trace
    isolated: Trace
    rmse_consensus: np.ndarray  # (nodes,)
    rmse_centralized: float
    rmse_isolated: np.ndarray  # (nodes,)

    @property
    def ratio_to_centralized(self) -> np.ndarray:
        return self.rmse_consensus / self.rmse_centralized

    @property
    def ratio_to_isolated(self) -> np.ndarray:
        return self.rmse_consensus / self.rmse_isolated

    def table(self) -> list[dict]:
        rows = []
        for i in range(self.rmse_consensus.size):
            rows.append({
                "node": i + 1,
                "rmse_consensus": float(self.rmse_consensus[i]),
                "rmse_isolated": float(self.rmse_isolated[i]),
                "rmse_centralized": float(self.rmse_centralized),
                "consensus_over_centralized": float(self.ratio_to_centralized[i]),
                "consensus_over_isolated": float(self.ratio_to_isolated[i]),
            })
        return rows


def _stacked_model(st: Setup) -> tuple[NonlinearModel, np.ndarray]:
    k = st.net.num_nodes
    base = st.model
    masks = st.scenario.network.output_masks
    p = base.n_outputs
    keep = np.concatenate([np.ones(p, bool) if masks is None else np.asarray(masks[i], bool)
                           for i in range(k)])
    R_big = np.kron(np.eye(k), base.R)[np.ix_(keep, keep)]
    h = base.h

    def h_stacked(X):
        Y = h(X)
        return np.concatenate([Y] * k, axis=0)[keep]

    return NonlinearModel(f=base.f, h=h_stacked, Q=base.Q, R=R_big, ts=base.ts,
                          vectorized=True), keep


def _norm_rmse(e: np.ndarray) -> np.ndarray:
    """RMS of the error vector norm over time; ``e`` is ``(N, ..., n)``."""
    return np.sqrt(np.mean(np.sum(np.square(e), axis=-1), axis=0))


def compare_centralized(s: Scenario) -> ComparisonReport:
    """Run consensus, centralized and isolated filters on one truth realization.

    The controller feeds back the consensus arm, so all three filters see the
    same true trajectory and the same per-node measurements.
    """
    st = setup(s)
    loop = _Loop(st)
    k = st.net.num_nodes
    N = s.n_steps
    fb = s.controller
    C = st.discrete.C

    consensus_nodes = _node_filters(st)
    isolated_nodes = _node_filters(st)
    iso_net = ConsensusNetwork(st.net.adjacency, np.eye(k))
    big_model, keep = _stacked_model(st)
    central = UnscentedKalmanFilter(big_model, st.x0_hat.copy(), st.P0.copy(), st.ut)

    traces = {name: _allocate(st, N, kk) for name, kk in
              (("consensus", k), ("isolated", k), ("centralized", 1))}
    x = st.x0_true.copy()
    for tr, est in ((traces["consensus"], consensus_nodes), (traces["isolated"], isolated_nodes)):
        tr.x_hat[0] = [nd.x_hat for nd in est]
    traces["centralized"].x_hat[0, 0] = central.x_hat
    for tr in traces.values():
        tr.x_true[0] = x
        tr.r[0] = loop.reference(0.0)
        tr.y_true[0] = C @ x

    for step in range(N):
        t = step * s.ts
        x_fb = x if fb.feedback == "truth" else consensus_nodes[fb.feedback_node].x_hat
        u = loop.input(t, x_fb)
        x, ys = loop.advance(x, u)
        try:
            est_c = distributed_step(consensus_nodes, u, ys, st.net, s.network.l)
            est_i = distributed_step(isolated_nodes, u, ys, iso_net, 0)
            central.predict(u)
            central.update(ys.reshape(-1)[keep])
        except NumericalError as exc:
            raise DivergenceError(step + 1, str(exc)) from None
        _check_finite(est_c, step + 1)
        _check_finite(est_i, step + 1)
        _check_finite([central.estimate], step + 1)
        row = step + 1
        for name, ests in (("consensus", est_c), ("isolated", est_i), ("centralized", [central.estimate])):
            tr = traces[name]
            tr.x_true[row] = x
            tr.x_hat[row] = [e.x_hat for e in ests]
            tr.u[row] = u
            tr.r[row] = loop.reference(row * s.ts)
            tr.y_true[row] = C @ x
            if name != "centralized":
                tr.y_meas[row] = ys

    return ComparisonReport(
        consensus=traces["consensus"],
        centralized=traces["centralized"],
        isolated=traces["isolated"],
        rmse_consensus=_norm_rmse(traces["consensus"].e[1:]),
        rmse_centralized=float(_norm_rmse(traces["centralized"].e[1:])[0]),
        rmse_isolated=_norm_rmse(traces["isolated"].e[1:]),
    )
