"""Weighted-average consensus over node estimates.

Every node runs a local unscented filter; after each local measurement
update the nodes repeatedly replace their ``(x_hat, P)`` pair with the
row-stochastic weighted sum of their neighbourhood's pairs.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ConnectivityError, NetworkValidationError
from .plants import NonlinearModel
from .ukf import UkfEstimate, UnscentedKalmanFilter, UtParams, measurement_update, time_update

ROW_SUM_TOL = 1e-12


# --------------------------------------------------------------------------- #
# Topologies
# --------------------------------------------------------------------------- #


def complete_graph(k: int) -> np.ndarray:
    return ~np.eye(k, dtype=bool)


def ring_graph(k: int) -> np.ndarray:
    adj = np.zeros((k, k), dtype=bool)
    if k < 2:
        return adj
    for i in range(k):
        adj[i, (i + 1) % k] = adj[(i + 1) % k, i] = True
    np.fill_diagonal(adj, False)
    return adj


def path_graph(k: int) -> np.ndarray:
    adj = np.zeros((k, k), dtype=bool)
    for i in range(k - 1):
        adj[i, i + 1] = adj[i + 1, i] = True
    return adj


def star_graph(k: int) -> np.ndarray:
    adj = np.zeros((k, k), dtype=bool)
    adj[0, 1:] = adj[1:, 0] = True
    return adj


TOPOLOGIES = {
    "complete": complete_graph,
    "ring": ring_graph,
    "path": path_graph,
    "star": star_graph,
}


def is_connected(adjacency) -> bool:
    adj = np.asarray(adjacency, bool)
    k = adj.shape[0]
    seen = {0}
    frontier = [0]
    while frontier:
        i = frontier.pop()
        for j in np.flatnonzero(adj[i] | adj[:, i]):
            if j not in seen:
                seen.add(int(j))
                frontier.append(int(j))
    return len(seen) == k


def metropolis_weights(adjacency) -> np.ndarray:
    """Metropolis-Hastings weights ``1 / (1 + max(d_i, d_j))`` on every edge."""
    adj = np.array(adjacency, dtype=bool)
    if adj.ndim != 2 or adj.shape[0] != adj.shape[1]:
        raise ValueError("adjacency must be square")
    if not np.array_equal(adj, adj.T):
        raise ValueError("adjacency must be symmetric")
    np.fill_diagonal(adj, False)
    k = adj.shape[0]
    if not is_connected(adj):
        raise ConnectivityError("graph is not connected")
    deg = adj.sum(axis=1)
    Pi = np.zeros((k, k))
    rows, cols = np.nonzero(adj)
    Pi[rows, cols] = 1.0 / (1.0 + np.maximum(deg[rows], deg[cols]))
    Pi[np.diag_indices(k)] = 1.0 - Pi.sum(axis=1)
    return Pi


# --------------------------------------------------------------------------- #
# Network and validation
# --------------------------------------------------------------------------- #


@dataclass
class ConsensusNetwork:
    """Node set with neighbourhoods (self-loops implied) and weights ``Pi``."""

    adjacency: np.ndarray
    Pi: np.ndarray

    def __post_init__(self):
        self.adjacency = np.array(self.adjacency, dtype=bool)
        self.Pi = np.array(self.Pi, dtype=float)
        k = self.adjacency.shape[0]
        if self.adjacency.shape != (k, k) or self.Pi.shape != (k, k):
            raise ValueError("adjacency and Pi must both be k x k")

    @property
    def num_nodes(self) -> int:
        return self.Pi.shape[0]

    def neighbours(self, i: int) -> np.ndarray:
        mask = self.adjacency[i].copy()
        mask[i] = True
        return np.flatnonzero(mask)

    @classmethod
    def from_topology(cls, topology: str, k: int) -> "ConsensusNetwork":
        try:
            adj = TOPOLOGIES[topology](k)
        except KeyError:
            raise ValueError(f"unknown topology {topology!r}") from None
        return cls(adj, metropolis_weights(adj))


@dataclass
class PrimitivityReport:
    primitive: bool
    exponent: int | None
    perron_vector: np.ndarray
    second_eigenvalue_modulus: float
    row_sum_error: float = field(default=0.0)


def wielandt_bound(k: int) -> int:
    return (k - 1) ** 2 + 1


def primitivity_exponent(Pi: np.ndarray) -> int | None:
    """Smallest ``m <= (k-1)^2 + 1`` with ``Pi^m`` entrywise positive, else ``None``."""
    k = Pi.shape[0]
    pattern = Pi > 0
    power = pattern.copy()
    for m in range(1, wielandt_bound(k) + 1):
        if power.all():
            return m
        power = (power.astype(np.int64) @ pattern.astype(np.int64)) > 0
    return None


def perron_vector(Pi: np.ndarray) -> np.ndarray:
    """Left eigenvector of ``Pi`` for eigenvalue 1, normalised so it sums to 1."""
    vals, vecs = np.linalg.eig(Pi.T)
    idx = int(np.argmin(np.abs(vals - 1.0)))
    v = np.real(vecs[:, idx])
    return v / v.sum()


def validate_network(net: ConsensusNetwork) -> PrimitivityReport:
    Pi, adj = net.Pi, net.adjacency
    k = net.num_nodes
    if not np.all(np.isfinite(Pi)):
        raise NetworkValidationError("finite", "weight matrix has non-finite entries")
    if np.any(Pi < 0):
        raise NetworkValidationError("nonnegative", "weight matrix has negative entries")
    row_err = float(np.abs(Pi.sum(axis=1) - 1.0).max())
    if row_err > ROW_SUM_TOL:
        raise NetworkValidationError(
            "row-stochastic", f"rows of Pi do not sum to 1 (max error {row_err:.3e})")
    allowed = adj | np.eye(k, dtype=bool)
    if np.any((Pi > 0) & ~allowed):
        i, j = np.argwhere((Pi > 0) & ~allowed)[0]
        raise NetworkValidationError(
            "neighbourhood", f"Pi[{i},{j}] > 0 but node {j} is not a neighbour of {i}")
    exponent = primitivity_exponent(Pi)
    if exponent is None:
        raise NetworkValidationError(
            "primitive", f"Pi is not primitive (no power up to {wielandt_bound(k)} is positive)")
    eig = np.sort(np.abs(np.linalg.eigvals(Pi)))[::-1]
    lam2 = float(eig[1]) if k > 1 else 0.0
    return PrimitivityReport(True, exponent, perron_vector(Pi), lam2, row_err)


# --------------------------------------------------------------------------- #
# Consensus iterations
# --------------------------------------------------------------------------- #


def consensus_rounds(estimates: Sequence[UkfEstimate], net: ConsensusNetwork, l: int) -> list[UkfEstimate]:
    """``l`` synchronous rounds of ``(x_i, P_i) <- sum_j Pi[i, j] (x_j, P_j)``.

    All nodes read round ``l`` values before any node writes round ``l+1``,
    so the result does not depend on node ordering.
    """
    if l < 0:
        raise ValueError("iteration count must be non-negative")
    if len(estimates) != net.num_nodes:
        raise ValueError(f"expected {net.num_nodes} estimates, got {len(estimates)}")
    X = np.stack([e.x_hat for e in estimates])
    P = np.stack([e.P for e in estimates])
    for _ in range(l):
        X = net.Pi @ X
        P = np.einsum("ij,jab->iab", net.Pi, P)
    return [UkfEstimate(X[i].copy(), 0.5 * (P[i] + P[i].T)) for i in range(len(estimates))]


class NodeFilter(UnscentedKalmanFilter):
    """Local unscented filter of one network node."""

    def __init__(self, node_id: int, model: NonlinearModel, x0, P0,
                 params: UtParams | None = None, output_mask=None):
        super().__init__(model, x0, P0, params)
        self.node_id = node_id
        self.output_mask = None if output_mask is None else np.asarray(output_mask, bool)
        self._local_model = model if self.output_mask is None else _masked_model(model, self.output_mask)

    def local_update(self, y) -> UkfEstimate:
        y = np.asarray(y, float).reshape(-1)
        if self.output_mask is not None:
            y = y[self.output_mask]
        self.estimate = measurement_update(self.estimate, y, self._local_model, self.params)
        return self.estimate


def _masked_model(model: NonlinearModel, mask: np.ndarray) -> NonlinearModel:
    h = model.h
    if model.vectorized:
        def h_masked(x):
            return h(x)[mask]
    else:
        def h_masked(x):
            return np.asarray(h(x))[mask]
    return NonlinearModel(f=model.f, h=h_masked, Q=model.Q, R=model.R[np.ix_(mask, mask)],
                          ts=model.ts, vectorized=model.vectorized, linear=model.linear)


def distributed_step(nodes: Sequence[NodeFilter], u, measurements, net: ConsensusNetwork,
                     l: int) -> list[UkfEstimate]:
    """One sampling instant of the consensus filter.

    Each node predicts with the input applied over the last interval, runs its
    local measurement update with its own measurement, then the nodes fuse
    their posteriors over ``l`` consensus rounds and install the result.
    """
    if len(measurements) != len(nodes):
        raise ValueError("need exactly one measurement vector per node")
    for node in nodes:
        node.predict(u)
    for node, y in zip(nodes, measurements):
        node.local_update(y)
    fused = consensus_rounds([n.estimate for n in nodes], net, l)
    for node, est in zip(nodes, fused):
        node.estimate = est
    return [n.estimate for n in nodes]
