"""Differential-drive odometry prediction and the pressure-sensor constraint.

Here the magnetometer is replaced by two other facts. The robot sits flat on
the surface, so its body z-axis is the surface normal. A pressure reading
pins the height of the next position. Together they cut the rotations down to
a one-parameter family (heading about the normal) and a scalar equation on
that family, which the revkf solver handles unchanged.

The covariance is 6x6 over ``(x, y, z, rot1, rot2, rot3)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import precision as pr
from . import rotcore as rc
from .mekf import kalman_correct
from .revkf import (CORRECTED, DEFAULT_KEPT, LITERAL, NO_INTERSECTION, PREDICTION_OUTSIDE, TANGENCY,
                    Kinematics, LinAlgOutcome, _harmonic, _select, rotation_family, solve_surface_constraint)
from .sensors import GroundTruth, ImuStream, NoiseSpec, OdometrySample, OdometryStream, _ou
from .surface import SurfaceModel

AS_WRITTEN = "as_written"
CONVENTIONAL = "conventional"
KINEMATIC = "kinematic"

Z_AXIS = (0.0, 0.0, 1.0)


class DegenerateGeometry(ValueError):
    """Surface normal parallel to the vertical: accelerometer and pressure carry no attitude information."""


@dataclass(frozen=True)
class OdomState:
    q: np.ndarray
    p: np.ndarray
    P: np.ndarray
    d_w: object
    v: np.ndarray = None

    def __post_init__(self):
        if not float(self.d_w) > 0:
            raise ValueError("half wheel separation must be positive")
        if self.v is None:
            object.__setattr__(self, "v", pr.zeros_like(self.p, 3))

    @classmethod
    def initial(cls, q, d_w, p=None, v=None, P0=1e-2) -> "OdomState":
        prec = pr.precision_of(q)
        P = prec.eye(6) * prec.scalar(P0) if np.ndim(P0) == 0 else prec.asarray(P0)
        return cls(q, prec.zeros(3) if p is None else p, P, prec.scalar(d_w),
                   prec.zeros(3) if v is None else v)


@dataclass(frozen=True)
class PressureConstraint:
    depth_target: object
    z_axis: np.ndarray = field(default_factory=lambda: np.array(Z_AXIS))


def wheel_increments(d_left, d_right, d_w):
    """Travel of the robot centre and heading change for one sample."""
    return (d_left + d_right) / 2, (d_left - d_right) / (2 * d_w)


def _jacobians_as_written(theta, d, like):
    J = pr.eye_like(like, 6)
    s, c = pr.sin(theta), pr.cos(theta)
    J[5, 0] = -d * s
    J[5, 1] = -d * c
    K = pr.zeros_like(like, (2, 6))
    K[0, 0], K[0, 1] = s, c
    K[1, 0], K[1, 1], K[1, 5] = -d / 2 * s, d / 2 * c, 1
    return J, K


def _jacobians_conventional(theta, d, dtheta, like):
    m = theta + dtheta / 2
    s, c = pr.sin(m), pr.cos(m)
    F = pr.eye_like(like, 6)
    F[0, 5], F[1, 5] = -d * s, d * c
    G = pr.zeros_like(like, (6, 2))
    G[0, 0], G[1, 0] = c, s
    G[0, 1], G[1, 1], G[5, 1] = -d / 2 * s, d / 2 * c, 1
    return F, G


def odo_predict(state: OdomState, d_left, d_right, Q, dt, form=AS_WRITTEN) -> OdomState:
    """Pose and covariance after one pair of wheel increments.

    ``form='as_written'`` propagates ``J^T P J + K^T Q K`` with the sparse
    Jacobians laid out as in the reference algorithm; ``'conventional'`` uses
    the textbook ``F P F^T + G Q G^T`` of the midpoint model.
    """
    d, dtheta = wheel_increments(d_left, d_right, state.d_w)
    S = rc.quat_log(state.q)
    theta = S[2]
    S = S.copy()
    S[2] = S[2] + dtheta
    q = rc.quat_exp(S)
    m = theta + dtheta / 2
    step = pr.zeros_like(state.p, 3)
    step[0], step[1] = d * pr.cos(m), d * pr.sin(m)
    p = state.p + step
    if form == AS_WRITTEN:
        J, K = _jacobians_as_written(theta, d, state.p)
        P = J.T @ state.P @ J + K.T @ Q @ K
    elif form == CONVENTIONAL:
        F, G = _jacobians_conventional(theta, d, dtheta, state.p)
        P = F @ state.P @ F.T + G @ Q @ G.T
    else:
        raise ValueError(f"unknown covariance form {form!r}")
    return replace(state, q=q, p=p, P=pr.symmetrize(P), v=step / dt)


def pressure_family(n, z_axis=None):
    """Rotations (sensor-from-global) carrying the surface normal onto the body z-axis."""
    z = pr.like(n, Z_AXIS) if z_axis is None else z_axis
    if abs(float(pr.dot(rc.unit(n), rc.unit(z)))) >= 1 - 1e-9:
        raise DegenerateGeometry("surface normal is vertical")
    return rotation_family(n, z)


def pressure_target(constraint: PressureConstraint, g, kin: Kinematics | None, mode=KINEMATIC):
    """Required vertical component of the globally-expressed specific force.

    ``kinematic``: the one-step position ``p + v dt + (R^-1 A - g) dt^2`` has
    the measured height. ``tangency``: no vertical external acceleration.
    ``literal``: ``(p + v dt - g dt^2 + R^-1 A) . z = P`` as written.
    """
    z = constraint.z_axis
    if mode == TANGENCY:
        return pr.dot(g, z)
    p, v, dt = kin
    if mode == KINEMATIC:
        return (constraint.depth_target - pr.dot(p + v * dt, z)) / (dt * dt) + pr.dot(g, z)
    if mode == LITERAL:
        return constraint.depth_target - pr.dot(p + v * dt - g * dt * dt, z)
    raise ValueError(f"unknown constraint mode {mode!r}")


def _gravity_for(q, g):
    return rc.rotate_vec(rc.quat_inverse(q), g)


def pressure_linalg(pred_q, A, pressure, surface: SurfaceModel, kin: Kinematics | None = None,
                    mode=KINEMATIC, gamma=None, capture_tol=1e-6, slack=0.0) -> LinAlgOutcome:
    """Gravity recovered from the flat-on-surface and pressure constraints.

    With ``gamma`` set, the same detection rule as the magnetometer variant
    decides between the recovered and the raw reading.
    """
    constraint = PressureConstraint(pressure, pr.like(A, Z_AXIS))
    fam = pressure_family(surface.n, constraint.z_axis)
    c = pressure_target(constraint, surface.refs.g, kin, mode)
    cands = solve_surface_constraint(fam, A, constraint.z_axis, c, slack=slack)
    if not cands:
        return LinAlgOutcome(NO_INTERSECTION, A, A)
    scored = _select(cands, pred_q, surface.n)
    best = scored[0]
    a_g = _gravity_for(best.q, surface.refs.g)
    if gamma is None:
        return LinAlgOutcome(CORRECTED, a_g, A, rc.quat_inverse(best.q), tuple(scored))
    if gamma < 1:
        raise ValueError("gamma must be at least 1")
    off_family = pr.norm(rc.rotate_vec(rc.quat_inverse(pred_q), fam.b_hat) - fam.axis)
    if off_family > capture_tol:
        return LinAlgOutcome(PREDICTION_OUTSIDE, A, A, None, tuple(scored))
    _, a, b = _harmonic(fam, A, rc.unit(surface.refs.g))
    default_q = rc.quat_inverse(fam.member(pr.atan2(b, a)))
    d_def = rc.geodesic_distance(pred_q, default_q)
    if best.distance * gamma <= d_def:
        return LinAlgOutcome(CORRECTED, a_g, A, rc.quat_inverse(best.q), tuple(scored), d_def)
    return LinAlgOutcome(DEFAULT_KEPT, A, A, None, tuple(scored), d_def)


def accel_update(state: OdomState, accel, U, g) -> OdomState:
    """Kalman update from the accelerometer rows only (no magnetometer)."""
    a_hat = _gravity_for(state.q, g)
    H = pr.zeros_like(state.p, (3, 6))
    H[:, 3:] = rc.skew(a_hat)
    dx, P = kalman_correct(state.P, H, accel - a_hat, U)
    q = rc.quat_mul(state.q, rc.quat_exp(dx[3:]))
    return replace(state, q=q, p=state.p + dx[:3], P=P)


@dataclass(frozen=True)
class OdoConfig:
    Q: np.ndarray
    U: np.ndarray
    form: str = AS_WRITTEN
    use_pressure: bool = True
    gamma: float | None = None
    constraint: str = KINEMATIC
    capture_tol: float = 1e-2
    slack: float = 0.0

    @classmethod
    def diagonal(cls, q=1e-4, u=1e-2, prec: pr.Precision = pr.DOUBLE, **kw) -> "OdoConfig":
        return cls(prec.eye(2) * prec.scalar(q), prec.eye(3) * prec.scalar(u), **kw)


def odo_step(state: OdomState, odo: OdometrySample, accel, surface: SurfaceModel, config: OdoConfig, dt):
    """Odometry prediction followed by the raw accelerometer update."""
    state = odo_predict(state, odo.d_left, odo.d_right, config.Q, dt, config.form)
    return accel_update(state, accel, config.U, surface.refs.g)


def odo_revmekf_step(state: OdomState, odo: OdometrySample, accel, surface: SurfaceModel,
                     config: OdoConfig, dt, trace: list | None = None) -> OdomState:
    """Odometry prediction, pressure-constrained gravity recovery, accelerometer update.

    Without a pressure reading the raw accelerometer goes to the update. The
    position comes from the wheels; the update only nudges it through the
    cross-covariance.
    """
    kin = Kinematics(state.p, state.v, dt)
    state = odo_predict(state, odo.d_left, odo.d_right, config.Q, dt, config.form)
    if config.use_pressure and odo.pressure is not None:
        out = pressure_linalg(state.q, accel, odo.pressure, surface, kin, config.constraint,
                              config.gamma, config.capture_tol, config.slack)
    else:
        out = LinAlgOutcome(NO_INTERSECTION, accel, accel)
    if trace is not None:
        trace.append(out)
    return accel_update(state, out.a_g, config.U, surface.refs.g)


def correction_angle(out: LinAlgOutcome):
    """Angle between the raw reading and the vector handed to the update."""
    a, b = rc.unit(out.accel), rc.unit(out.a_g)
    return pr.atan2(pr.norm(rc.cross(a, b)), pr.dot(a, b))


# ------------------------------------------------------------ synthetic run


@dataclass(frozen=True)
class OdometryRun:
    truth: GroundTruth
    odometry: OdometryStream
    imu: ImuStream
    surface: SurfaceModel
    d_w: object


def banked_surface(bank, refs=None) -> SurfaceModel:
    """Plane containing the global x-axis, tilted by ``bank`` radians."""
    n = np.array([0.0, -np.sin(bank), np.cos(bank)])
    return SurfaceModel(n) if refs is None else SurfaceModel(n, refs=refs)


def generate_odometry_run(duration, rate=100.0, *, bank=0.2, speed=1.0, accel_std=0.01, d_w=0.25,
                          noise: NoiseSpec | None = None, seed=0,
                          precision: pr.Precision = pr.DOUBLE) -> OdometryRun:
    """Straight travel along the strike of a banked plane with gently varying speed.

    The body z-axis is the plane normal throughout, the height is constant and
    the external acceleration lies along the direction of travel.
    """
    n_samples = int(round(duration * rate))
    if n_samples < 1:
        raise ValueError("run needs at least one sample")
    rng = np.random.default_rng(seed)
    acc = _ou(rng, n_samples, 1, 0.02)[:, 0] * accel_std
    acc[0] = 0.0
    noise = noise or NoiseSpec()
    surface = banked_surface(bank)
    prec = precision
    with prec:
        surf = surface.at(prec)
        dt = prec.scalar(1) / prec.scalar(rate)
        q0 = rc.axis_angle_quat(prec.asarray([1.0, 0.0, 0.0]), prec.scalar(bank))
        a = prec.zeros((n_samples, 3))
        a[:, 0] = prec.asarray(acc)
        Q = np.empty((n_samples, 4), dtype=a.dtype)
        P = prec.zeros((n_samples, 3))
        V = prec.zeros((n_samples, 3))
        Q[:] = q0
        V[0, 0] = prec.scalar(speed)
        for k in range(1, n_samples):
            V[k] = V[k - 1] + a[k] * dt
            P[k] = P[k - 1] + V[k] * dt
        t = np.array([dt * k for k in range(n_samples)], dtype=a.dtype)
        d = np.array([prec.scalar(0)] + [P[k, 0] - P[k - 1, 0] for k in range(1, n_samples)], dtype=a.dtype)
        truth = GroundTruth(t, Q, P, V, a, prec.zeros((n_samples, 3)), dt)
        odo = OdometryStream(t.copy(), d.copy(), d.copy(), P[:, 2].copy())

        an = rng.standard_normal((n_samples, 3)) * noise.accel_noise_std
        accel = np.empty((n_samples, 3), dtype=a.dtype)
        for k in range(n_samples):
            accel[k] = _gravity_for(Q[k], surf.refs.g + a[k])
        accel = accel + prec.asarray(an)
        mag = np.empty((n_samples, 3), dtype=a.dtype)
        b_hat = rc.unit(surf.refs.b)
        for k in range(n_samples):
            mag[k] = _gravity_for(Q[k], b_hat)
        imu = ImuStream(t.copy(), prec.zeros((n_samples, 3)), accel, mag)
    return OdometryRun(truth, odo, imu, surface, d_w)
