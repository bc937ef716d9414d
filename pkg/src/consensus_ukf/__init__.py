"""Distributed unscented Kalman filtering with weighted-average consensus.

Benchmark vehicle plants, state-feedback controllers and a closed-loop
sensor-network simulator for evaluating the consensus filter.
"""

from .consensus import (
    ConsensusNetwork,
    NodeFilter,
    consensus_rounds,
    distributed_step,
    metropolis_weights,
    validate_network,
)
from .control import lqr_gain, place_poles, precompensator
from .plants import (
    as_nonlinear,
    discretize,
    make_aircraft,
    make_cruise,
    make_motor,
    make_motor_speed,
    make_suspension,
)
from .scenario import Scenario, load_preset, load_scenario
from .simnet import compare_centralized, run_scenario
from .ukf import UkfEstimate, UnscentedKalmanFilter, UtParams, measurement_update, sigma_points, time_update

__version__ = "0.1.0"
