"""Additive-noise unscented Kalman filter."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .errors import CovarianceNotPSDError, InnovationSingularError, NumericalError
from .plants import NonlinearModel

JITTER = 1e-9


@dataclass(frozen=True)
class UtParams:
    """Unscented transform parameters.

    ``kappa`` may be given as the string ``"3-L"`` to use ``3 - L``.
    """

    L: int
    alpha: float = 1e-3
    beta: float = 2.0
    kappa: float = 0.0

    def __post_init__(self):
        if self.L < 1:
            raise ValueError("state dimension must be at least 1")
        if not 1e-4 <= self.alpha <= 1:
            raise ValueError(f"alpha must lie in [1e-4, 1], got {self.alpha}")
        if isinstance(self.kappa, str):
            if self.kappa.replace(" ", "") != "3-L":
                raise ValueError(f"kappa must be a number or '3-L', got {self.kappa!r}")
            object.__setattr__(self, "kappa", 3.0 - self.L)
        if not self.L + self.lam > 0:
            raise ValueError("L + lambda must be positive")

    @property
    def lam(self) -> float:
        return self.alpha ** 2 * (self.L + self.kappa) - self.L

    @property
    def weights(self) -> tuple[np.ndarray, np.ndarray]:
        L, lam = self.L, self.lam
        Wm = np.full(2 * L + 1, 0.5 / (L + lam))
        Wc = Wm.copy()
        Wm[0] = lam / (L + lam)
        Wc[0] = lam / (L + lam) + (1.0 - self.alpha ** 2 + self.beta)
        return Wm, Wc


@dataclass
class UkfEstimate:
    x_hat: np.ndarray
    P: np.ndarray

    def __post_init__(self):
        self.x_hat = np.asarray(self.x_hat, dtype=float).reshape(-1)
        self.P = np.atleast_2d(np.asarray(self.P, dtype=float))

    def copy(self) -> "UkfEstimate":
        return UkfEstimate(self.x_hat.copy(), self.P.copy())


@dataclass
class SigmaSet:
    points: np.ndarray  # (L, 2L+1), one sigma point per column
    Wm: np.ndarray
    Wc: np.ndarray

    def mean(self) -> np.ndarray:
        return _weighted_mean(self.points, self.Wm)

    def covariance(self, mean: np.ndarray | None = None) -> np.ndarray:
        if mean is None:
            mean = self.mean()
        d = self.points - mean[:, None]
        return (d * self.Wc) @ d.T


@dataclass
class PredictedEstimate(UkfEstimate):
    sigma: SigmaSet | None = field(default=None, repr=False)


def _weighted_mean(points: np.ndarray, Wm: np.ndarray) -> np.ndarray:
    # Centre on the first point: Wm[0] is large and negative for small alpha,
    # and sum(Wm) == 1, so this form avoids catastrophic cancellation.
    base = points[:, 0]
    return base + (points[:, 1:] - base[:, None]) @ Wm[1:]


def symmetrize(P: np.ndarray) -> np.ndarray:
    return 0.5 * (P + P.T)


def _sqrt_factor(M: np.ndarray) -> np.ndarray:
    try:
        return np.linalg.cholesky(M)
    except np.linalg.LinAlgError:
        pass
    try:
        return np.linalg.cholesky(M + JITTER * np.eye(M.shape[0]))
    except np.linalg.LinAlgError:
        raise CovarianceNotPSDError(
            "covariance is not positive semi-definite (Cholesky failed after jitter)"
        ) from None


def sigma_points(x_bar, P, params: UtParams) -> SigmaSet:
    """``2L+1`` sigma points ``x_bar`` and ``x_bar +/- columns of chol((L+lambda) P)``."""
    x_bar = np.asarray(x_bar, float).reshape(-1)
    P = np.atleast_2d(np.asarray(P, float))
    L = params.L
    if x_bar.size != L or P.shape != (L, L):
        raise ValueError(f"expected state of size {L} and {L}x{L} covariance")
    S = _sqrt_factor((L + params.lam) * symmetrize(P))
    points = np.empty((L, 2 * L + 1))
    points[:, 0] = x_bar
    points[:, 1:L + 1] = x_bar[:, None] + S
    points[:, L + 1:] = x_bar[:, None] - S
    Wm, Wc = params.weights
    return SigmaSet(points, Wm, Wc)


def time_update(est: UkfEstimate, u, model: NonlinearModel, params: UtParams):
    """Propagate sigma points through ``f``; returns ``(prediction, propagated sigma set)``."""
    sigma = sigma_points(est.x_hat, est.P, params)
    propagated = model.propagate(sigma.points, u)
    if not np.all(np.isfinite(propagated)):
        bad = int(np.where(~np.all(np.isfinite(propagated), axis=1))[0][0])
        raise NumericalError(f"process model returned non-finite value for state {bad}")
    prop_set = SigmaSet(propagated, sigma.Wm, sigma.Wc)
    x_pred = prop_set.mean()
    P_pred = symmetrize(prop_set.covariance(x_pred) + model.Q)
    return PredictedEstimate(x_pred, P_pred, sigma=prop_set), prop_set


def predict_measurement(pred: UkfEstimate, model: NonlinearModel, params: UtParams):
    """Mean, innovation covariance and cross covariance of the predicted measurement.

    Sigma points are redrawn from the predicted covariance (which already
    contains ``Q``) so that process noise reaches the measurement statistics.
    """
    sigma = sigma_points(pred.x_hat, pred.P, params)
    Y = model.observe(sigma.points)
    y_hat = _weighted_mean(Y, sigma.Wm)
    dY = Y - y_hat[:, None]
    dX = sigma.points - pred.x_hat[:, None]
    S = symmetrize((dY * sigma.Wc) @ dY.T + model.R)
    Pxy = (dX * sigma.Wc) @ dY.T
    return y_hat, S, Pxy


def measurement_update(pred: UkfEstimate, y, model: NonlinearModel, params: UtParams) -> UkfEstimate:
    y = np.asarray(y, float).reshape(-1)
    y_hat, S, Pxy = predict_measurement(pred, model, params)
    try:
        cho = cho_factor(S, lower=True)
    except np.linalg.LinAlgError:
        raise InnovationSingularError("innovation covariance is not positive definite") from None
    W = cho_solve(cho, Pxy.T).T
    if not np.all(np.isfinite(W)):
        raise InnovationSingularError("innovation covariance is singular")
    x_post = pred.x_hat + W @ (y - y_hat)
    P_post = symmetrize(pred.P - W @ S @ W.T)
    return UkfEstimate(x_post, P_post)


class UnscentedKalmanFilter:
    """Stateful wrapper holding one node's estimate."""

    def __init__(self, model: NonlinearModel, x0, P0, params: UtParams | None = None):
        self.model = model
        self.params = params or UtParams(L=model.n_states)
        self.estimate = UkfEstimate(x0, P0)

    @property
    def x_hat(self) -> np.ndarray:
        return self.estimate.x_hat

    @property
    def P(self) -> np.ndarray:
        return self.estimate.P

    def predict(self, u) -> UkfEstimate:
        self.estimate, _ = time_update(self.estimate, u, self.model, self.params)
        return self.estimate

    def update(self, y) -> UkfEstimate:
        self.estimate = measurement_update(self.estimate, y, self.model, self.params)
        return self.estimate

    def step(self, u, y) -> UkfEstimate:
        self.predict(u)
        return self.update(y)
