"""Multiplicative extended Kalman filter on (orientation, gyro bias).

The error state is ``[eta, db]``: a rotation vector applied on the right of the
reference quaternion and an additive gyro-bias correction. Its mean is folded
into ``q`` and ``bias`` at the end of every update, so between steps the error
state is zero and only ``P`` is carried. Position and velocity are dead
reckoned alongside and are not part of the Kalman state.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import precision as pr
from . import rotcore as rc
from .sensors import ImuSample, dead_reckon_step
from .surface import ReferenceVectors

ADDITIVE = "additive"
MULTIPLICATIVE = "multiplicative"


class SingularInnovation(ArithmeticError):
    """Innovation covariance is not numerically invertible."""


@dataclass(frozen=True)
class FilterState:
    q: np.ndarray
    bias: np.ndarray
    P: np.ndarray
    p: np.ndarray
    v: np.ndarray

    @classmethod
    def initial(cls, q, P0=1e-2, p=None, v=None, bias=None) -> "FilterState":
        prec = pr.precision_of(q)
        P = prec.eye(6) * prec.scalar(P0) if np.ndim(P0) == 0 else prec.asarray(P0)
        z = prec.zeros(3)
        return cls(q, z.copy() if bias is None else prec.asarray(bias), P,
                   z.copy() if p is None else p, z.copy() if v is None else v)


@dataclass(frozen=True)
class NoiseMatrices:
    Q: np.ndarray
    U: np.ndarray

    @classmethod
    def diagonal(cls, q=1e-2, u=1e-2, prec: pr.Precision = pr.DOUBLE) -> "NoiseMatrices":
        def diag(d):
            d = np.broadcast_to(np.asarray(d, dtype=float), (6,))
            return prec.asarray(np.diag(d))

        return cls(diag(q), diag(u))

    def __post_init__(self):
        if any(float(self.Q[i, i]) < 0 or float(self.U[i, i]) < 0 for i in range(6)):
            raise ValueError("noise diagonals must be non-negative")


@dataclass(frozen=True)
class MekfConfig:
    noise: NoiseMatrices
    refs: ReferenceVectors = field(default_factory=ReferenceVectors)
    residual_mode: str = ADDITIVE
    exact_transition: bool = False


def transition_matrix(omega_hat, dt, exact=False):
    F = pr.zeros_like(omega_hat, (6, 6))
    F[:3, :3] = -rc.skew(omega_hat)
    F[:3, 3:] = -pr.eye_like(omega_hat, 3)
    if exact:
        return pr.expm(F * dt)
    return pr.eye_like(omega_hat, 6) + F * dt


def predict(state: FilterState, omega, dt, Q, exact_transition=False):
    """Gyro propagation; returns the predicted state and the transition matrix."""
    omega_hat = omega - state.bias
    q = rc.quat_mul(state.q, rc.quat_exp(omega_hat * dt))
    Phi = transition_matrix(omega_hat, dt, exact_transition)
    P = pr.symmetrize(Phi @ state.P @ Phi.T + Q)
    return replace(state, q=q, P=P), Phi


def predicted_measurements(q, refs: ReferenceVectors):
    """Body-frame gravity and unit field direction expected at orientation ``q``."""
    qi = rc.quat_inverse(q)
    return rc.rotate_vec(qi, refs.g), rc.rotate_vec(qi, rc.unit(refs.b))


def build_H_additive(q, refs: ReferenceVectors):
    a_hat, m_hat = predicted_measurements(q, refs)
    H = pr.zeros_like(q, (6, 6))
    H[:3, :3] = rc.skew(a_hat)
    H[3:, :3] = rc.skew(m_hat)
    return H


def _projector(v):
    u = rc.unit(v)
    return pr.eye_like(v, 3) - np.outer(u, u)


def build_H_multiplicative(q, refs: ReferenceVectors):
    a_hat, m_hat = predicted_measurements(q, refs)
    H = pr.zeros_like(q, (6, 6))
    H[:3, :3] = _projector(a_hat)
    H[3:, :3] = _projector(m_hat)
    return H


def innovation(q, accel, mag, refs: ReferenceVectors, mode=ADDITIVE):
    a_hat, m_hat = predicted_measurements(q, refs)
    y = np.empty(6, dtype=q.dtype)
    if mode == ADDITIVE:
        y[:3] = accel - a_hat
        y[3:] = mag - m_hat
    elif mode == MULTIPLICATIVE:
        y[:3] = rc.cross(rc.unit(accel), rc.unit(a_hat))
        y[3:] = rc.cross(rc.unit(mag), rc.unit(m_hat))
    else:
        raise ValueError(f"unknown residual mode {mode!r}")
    return y


def build_H(q, refs, mode=ADDITIVE):
    return build_H_additive(q, refs) if mode == ADDITIVE else build_H_multiplicative(q, refs)


def condition_limit(prec: pr.Precision) -> float:
    return 1.0 / (1024 * prec.eps)


def kalman_gain(P, H, U):
    S = pr.symmetrize(H @ P @ H.T + U)
    try:
        L = pr.cholesky(S)
    except pr.SingularMatrix as exc:
        raise SingularInnovation(str(exc)) from exc
    d = [abs(float(L[i, i])) for i in range(L.shape[0])]
    if (max(d) / min(d)) ** 2 > condition_limit(pr.precision_of(P)):
        raise SingularInnovation(f"innovation covariance condition exceeds {condition_limit(pr.precision_of(P)):.3g}")
    return pr.cho_solve(L, H @ P).T


def kalman_correct(P, H, y, U):
    """Error-state correction ``K y`` and the reduced covariance ``(I - K H) P``."""
    K = kalman_gain(P, H, U)
    dx = K @ y
    P_new = pr.symmetrize((pr.eye_like(P, P.shape[0]) - K @ H) @ P)
    return dx, P_new


def apply_correction(state: FilterState, dx, P) -> FilterState:
    q = rc.quat_mul(state.q, rc.quat_exp(dx[:3]))
    return replace(state, q=q, bias=state.bias + dx[3:], P=P)


def update(state: FilterState, accel, mag, U, refs: ReferenceVectors, residual_mode=ADDITIVE) -> FilterState:
    y = innovation(state.q, accel, mag, refs, residual_mode)
    H = build_H(state.q, refs, residual_mode)
    dx, P = kalman_correct(state.P, H, y, U)
    return apply_correction(state, dx, P)


def advance_kinematics(state: FilterState, accel, refs: ReferenceVectors, dt) -> FilterState:
    p, v = dead_reckon_step(state.p, state.v, state.q, accel, refs.g, dt)
    return replace(state, p=p, v=v)


def mekf_step(state: FilterState, sample: ImuSample, config: MekfConfig, dt) -> FilterState:
    state, _ = predict(state, sample.omega, dt, config.noise.Q, config.exact_transition)
    state = update(state, sample.accel, sample.mag, config.noise.U, config.refs, config.residual_mode)
    return advance_kinematics(state, sample.accel, config.refs, dt)
