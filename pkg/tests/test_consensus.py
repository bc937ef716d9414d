import numpy as np
import pytest

from consensus_ukf.consensus import (
    ConsensusNetwork,
    NodeFilter,
    complete_graph,
    consensus_rounds,
    distributed_step,
    metropolis_weights,
    path_graph,
    perron_vector,
    primitivity_exponent,
    ring_graph,
    star_graph,
    validate_network,
)
from consensus_ukf.errors import ConnectivityError, NetworkValidationError
from consensus_ukf.plants import as_nonlinear, discretize, make_aircraft, make_cruise
from consensus_ukf.ukf import UkfEstimate, UnscentedKalmanFilter, UtParams

GRAPHS = {"ring": ring_graph, "path": path_graph, "complete": complete_graph, "star": star_graph}


def _estimates(rng, k, n):
    out = []
    for _ in range(k):
        L = rng.standard_normal((n, n))
        out.append(UkfEstimate(rng.standard_normal(n), L @ L.T + np.eye(n)))
    return out


def _power_iteration_left(Pi, iters=5000):
    v = np.full(Pi.shape[0], 1.0 / Pi.shape[0])
    for _ in range(iters):
        v = v @ Pi
    return v / v.sum()


# --- weights ----------------------------------------------------------------


def test_metropolis_two_nodes():
    np.testing.assert_allclose(metropolis_weights(complete_graph(2)), [[0.5, 0.5], [0.5, 0.5]])


def test_metropolis_single_node():
    assert metropolis_weights(np.zeros((1, 1), bool)).tolist() == [[1.0]]


@pytest.mark.parametrize("name", list(GRAPHS))
@pytest.mark.parametrize("k", [3, 4, 7])
def test_metropolis_doubly_stochastic(name, k):
    Pi = metropolis_weights(GRAPHS[name](k))
    np.testing.assert_allclose(Pi.sum(axis=1), 1.0, atol=1e-15)
    np.testing.assert_allclose(Pi.sum(axis=0), 1.0, atol=1e-15)
    assert np.all(Pi >= 0)


def test_metropolis_path_three():
    Pi = metropolis_weights(path_graph(3))
    np.testing.assert_allclose(Pi, [[2 / 3, 1 / 3, 0], [1 / 3, 1 / 3, 1 / 3], [0, 1 / 3, 2 / 3]])


def test_metropolis_disconnected():
    adj = np.zeros((4, 4), bool)
    adj[0, 1] = adj[1, 0] = adj[2, 3] = adj[3, 2] = True
    with pytest.raises(ConnectivityError):
        metropolis_weights(adj)


def test_metropolis_rejects_directed():
    adj = np.zeros((2, 2), bool)
    adj[0, 1] = True
    with pytest.raises(ValueError):
        metropolis_weights(adj)


# --- validation -------------------------------------------------------------


def test_doubly_stochastic_uniform_perron():
    rep = validate_network(ConsensusNetwork.from_topology("complete", 5))
    np.testing.assert_allclose(rep.perron_vector, 0.2, atol=1e-14)


def test_ring_primitive_uniform():
    net = ConsensusNetwork.from_topology("ring", 4)
    rep = validate_network(net)
    assert rep.primitive and rep.exponent == 2
    np.testing.assert_allclose(rep.perron_vector, _power_iteration_left(net.Pi), atol=1e-12)
    np.testing.assert_allclose(rep.perron_vector, 0.25, atol=1e-14)


def test_non_symmetric_perron_vector():
    Pi = np.array([[0.5, 0.5, 0.0], [0.2, 0.3, 0.5], [0.0, 0.6, 0.4]])
    net = ConsensusNetwork(path_graph(3), Pi)
    v = validate_network(net).perron_vector
    np.testing.assert_allclose(v, _power_iteration_left(Pi), atol=1e-12)
    np.testing.assert_allclose(v @ Pi, v, atol=1e-14)


def test_identity_not_primitive():
    net = ConsensusNetwork(complete_graph(3), np.eye(3))
    with pytest.raises(NetworkValidationError) as info:
        validate_network(net)
    assert info.value.property == "primitive"
    assert "not primitive" in str(info.value)


@pytest.mark.parametrize("Pi,prop", [
    ([[1.5, -0.5], [0.5, 0.5]], "nonnegative"),
    ([[0.6, 0.5], [0.5, 0.5]], "row-stochastic"),
    ([[np.nan, 0.5], [0.5, 0.5]], "finite"),
])
def test_validation_names_property(Pi, prop):
    with pytest.raises(NetworkValidationError) as info:
        validate_network(ConsensusNetwork(complete_graph(2), Pi))
    assert info.value.property == prop


def test_weight_outside_neighbourhood():
    Pi = np.full((3, 3), 1 / 3)
    with pytest.raises(NetworkValidationError) as info:
        validate_network(ConsensusNetwork(path_graph(3), Pi))
    assert info.value.property == "neighbourhood"


def test_primitivity_exponent():
    assert primitivity_exponent(metropolis_weights(path_graph(4))) == 3
    # a 2-cycle permutation is irreducible but periodic
    assert primitivity_exponent(np.array([[0.0, 1.0], [1.0, 0.0]])) is None


# --- rounds -----------------------------------------------------------------


def test_zero_rounds_identity():
    rng = np.random.default_rng(0)
    ests = _estimates(rng, 3, 2)
    out = consensus_rounds(ests, ConsensusNetwork.from_topology("path", 3), 0)
    for a, b in zip(ests, out):
        np.testing.assert_array_equal(a.x_hat, b.x_hat)
        np.testing.assert_array_equal(a.P, b.P)


def test_two_node_mean():
    net = ConsensusNetwork(complete_graph(2), [[0.5, 0.5], [0.5, 0.5]])
    out = consensus_rounds([UkfEstimate([1.0], [[1.0]]), UkfEstimate([3.0], [[3.0]])], net, 1)
    assert [o.x_hat[0] for o in out] == [2.0, 2.0]
    assert [o.P[0, 0] for o in out] == [2.0, 2.0]


def test_negative_rounds():
    with pytest.raises(ValueError):
        consensus_rounds([UkfEstimate([0.0], [[1.0]])], ConsensusNetwork.from_topology("complete", 1), -1)


@pytest.mark.parametrize("name", ["ring", "complete", "star"])
def test_converges_to_perron_combination(name):
    rng = np.random.default_rng(7)
    net = ConsensusNetwork.from_topology(name, 4)
    v = perron_vector(net.Pi)
    ests = _estimates(rng, 4, 3)
    target = sum(vi * e.x_hat for vi, e in zip(v, ests))
    out = consensus_rounds(ests, net, 200)
    for o in out:
        np.testing.assert_allclose(o.x_hat, target, atol=1e-10)


def test_conserved_quantity_and_psd():
    rng = np.random.default_rng(8)
    Pi = np.array([[0.5, 0.5, 0.0, 0.0], [0.1, 0.4, 0.5, 0.0], [0.0, 0.3, 0.3, 0.4], [0.0, 0.0, 0.2, 0.8]])
    net = ConsensusNetwork(path_graph(4), Pi)
    v = validate_network(net).perron_vector
    ests = _estimates(rng, 4, 3)
    start = sum(vi * e.x_hat for vi, e in zip(v, ests))
    for _ in range(30):
        ests = consensus_rounds(ests, net, 1)
        now = sum(vi * e.x_hat for vi, e in zip(v, ests))
        assert np.abs(now - start).max() < 1e-12 * max(1.0, np.abs(start).max())
        for e in ests:
            np.testing.assert_array_equal(e.P, e.P.T)
            assert np.linalg.eigvalsh(e.P).min() > -1e-10


@pytest.mark.parametrize("name", ["ring", "path", "complete"])
def test_disagreement_contracts_at_lambda2(name):
    rng = np.random.default_rng(2)
    net = ConsensusNetwork.from_topology(name, 5)
    lam2 = validate_network(net).second_eigenvalue_modulus
    ests = _estimates(rng, 5, 2)

    def spread(es):
        X = np.stack([e.x_hat for e in es])
        return max(np.linalg.norm(a - b) for a in X for b in X)

    d = [spread(ests)]
    for _ in range(40):
        ests = consensus_rounds(ests, net, 1)
        d.append(spread(ests))
    assert all(b <= a * (1 + 1e-12) + 1e-300 for a, b in zip(d, d[1:]))
    if lam2 > 1e-6:
        rate = (d[-1] / d[20]) ** (1 / 20)
        assert rate == pytest.approx(lam2, rel=0.05)


def test_rounds_are_synchronous():
    rng = np.random.default_rng(3)
    net = ConsensusNetwork.from_topology("ring", 5)
    ests = _estimates(rng, 5, 2)
    X = np.stack([e.x_hat for e in ests])
    for _ in range(3):
        old = X.copy()
        for i in rng.permutation(5):  # any visiting order reads only the old round
            X[i] = sum(net.Pi[i, j] * old[j] for j in range(5))
    out = consensus_rounds(ests, net, 3)
    np.testing.assert_allclose(np.stack([e.x_hat for e in out]), X, rtol=1e-14, atol=1e-15)


# --- distributed step -------------------------------------------------------


def _cruise_model():
    return as_nonlinear(discretize(make_cruise(), 0.01), 0.1, 0.5)


def test_single_node_equals_ukf():
    model = _cruise_model()
    net = ConsensusNetwork.from_topology("complete", 1)
    node = NodeFilter(0, model, [2.0], [[50.0]])
    ref = UnscentedKalmanFilter(model, [2.0], [[50.0]])
    rng = np.random.default_rng(0)
    for k in range(50):
        u, y = [500.0], [rng.standard_normal() + 1]
        distributed_step([node], u, [y], net, 7)
        ref.step(u, y)
        np.testing.assert_array_equal(node.x_hat, ref.x_hat)
        np.testing.assert_array_equal(node.P, ref.P)


@pytest.mark.parametrize("l", [0, 1, 5])
def test_identical_measurements_identical_nodes(l):
    model = as_nonlinear(discretize(make_aircraft(), 0.01), 1.0, 1.0)
    net = ConsensusNetwork.from_topology("path", 4)
    nodes = [NodeFilter(i, model, np.zeros(3), 50 * np.eye(3)) for i in range(4)]
    for y in (0.3, -0.1, 0.2):
        out = distributed_step(nodes, [0.1], [[y]] * 4, net, l)
        for e in out[1:]:
            # equal up to rounding of the Pi row sums, amplified by the small-alpha UT
            np.testing.assert_allclose(e.x_hat, out[0].x_hat, rtol=1e-9, atol=1e-12)


def test_large_l_equals_mean_of_local_posteriors():
    model = _cruise_model()
    net = ConsensusNetwork.from_topology("complete", 4)
    nodes = [NodeFilter(i, model, [float(i)], [[10.0 + i]]) for i in range(4)]
    twins = [UnscentedKalmanFilter(model, [float(i)], [[10.0 + i]]) for i in range(4)]
    ys = [[1.0], [2.0], [-1.0], [0.5]]
    out = distributed_step(nodes, [100.0], ys, net, 60)
    local = [t.step([100.0], y) for t, y in zip(twins, ys)]
    mean_x = np.mean([e.x_hat for e in local], axis=0)
    mean_P = np.mean([e.P for e in local], axis=0)
    for e in out:
        np.testing.assert_allclose(e.x_hat, mean_x, atol=1e-12)
        np.testing.assert_allclose(e.P, mean_P, atol=1e-12)


def test_output_mask():
    from consensus_ukf.plants import make_motor
    model = as_nonlinear(discretize(make_motor(), 0.01), 0.1, 1.0)
    node = NodeFilter(0, model, np.zeros(3), np.eye(3), output_mask=[False, True])
    est = node.local_update([100.0, 1.0])  # the masked position reading is ignored
    ref = NodeFilter(1, model, np.zeros(3), np.eye(3), output_mask=[False, True])
    est2 = ref.local_update([-5.0, 1.0])
    np.testing.assert_array_equal(est.x_hat, est2.x_hat)


def test_measurement_count_checked():
    model = _cruise_model()
    nodes = [NodeFilter(i, model, [0.0], [[1.0]]) for i in range(2)]
    with pytest.raises(ValueError):
        distributed_step(nodes, [0.0], [[1.0]], ConsensusNetwork.from_topology("complete", 2), 1)
