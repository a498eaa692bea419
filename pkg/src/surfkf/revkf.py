"""Reversible MEKF: gravity recovery from the surface constraint.

Between prediction and update, the accelerometer reading is replaced by the
gravity vector of the rotation that (a) maps the global field reference onto
the measured field direction and (b) makes the globally-expressed specific
force satisfy the surface constraint. Condition (a) leaves a one-parameter
family of rotations; condition (b) cuts it down to at most two members, and
the one nearest to the prediction wins.

Rotation-family members follow the measurement convention: ``R`` maps global
vectors into the sensor frame, ``R b = M``. The filter state quaternion is the
inverse of such a member (see :mod:`surfkf.rotcore`).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, NamedTuple

import numpy as np

from . import precision as pr
from . import rotcore as rc
from .mekf import FilterState, MekfConfig, advance_kinematics, predict, update
from .sensors import ImuSample
from .surface import SurfaceModel

CORRECTED = "Corrected"
NO_INTERSECTION = "NoIntersection"
PREDICTION_OUTSIDE = "PredictionOutside"
DEFAULT_KEPT = "DefaultKept"

TANGENCY = "tangency"
LITERAL = "literal"


class Kinematics(NamedTuple):
    p: np.ndarray
    v: np.ndarray
    dt: object


@dataclass(frozen=True)
class RotationFamily:
    """``R(theta) = Rot(axis, theta) * base``; every member maps ``b_hat`` to ``axis``."""

    axis: np.ndarray
    base: np.ndarray
    b_hat: np.ndarray
    antiparallel: bool = False

    def member(self, theta) -> np.ndarray:
        return rc.quat_mul(rc.axis_angle_quat(self.axis, theta), self.base)


@dataclass(frozen=True)
class Candidate:
    """One root of the surface constraint.

    ``conditioning`` is the sine of half the angle between the two roots: 1
    for well separated roots, 0 at tangency. The recovered orientation's
    sensitivity to errors in ``A`` grows like its inverse.
    """

    theta: object
    multiplicity: int
    q: np.ndarray
    distance: object = None
    conditioning: object = None


@dataclass(frozen=True)
class LinAlgOutcome:
    """Result of the gravity-recovery step.

    ``a_g`` is the vector handed to the update: the recovered gravity when
    ``mode == CORRECTED``, otherwise the raw accelerometer reading.
    """

    mode: str
    a_g: np.ndarray
    accel: np.ndarray
    r_sel: np.ndarray | None = None
    candidates: tuple = ()
    default_distance: object = None
    mag: np.ndarray | None = None
    antiparallel: bool = False

    @property
    def q_sel(self):
        return None if self.r_sel is None else rc.quat_inverse(self.r_sel)

    @property
    def external_accel(self):
        return self.accel - self.a_g

    @property
    def selected_distance(self):
        return min((c.distance for c in self.candidates), default=None)

    @property
    def conditioning(self):
        return None if not self.candidates else self.candidates[0].conditioning


def rotation_family(b, M) -> RotationFamily:
    """All rotations taking the direction of ``b`` to the direction of ``M``."""
    b_hat, m_hat = rc.unit(b), rc.unit(M)
    try:
        base = rc.quat_between(b_hat, m_hat)
        anti = False
    except ValueError:
        base = rc.axis_angle_quat(rc.any_perpendicular(b_hat), pr.pi_like(b_hat))
        anti = True
    return RotationFamily(m_hat, base, b_hat, anti)


def _harmonic(family: RotationFamily, A, n):
    """Coefficients of ``<R(theta)^-1 A, n> = k + a cos(theta) + b sin(theta)``."""
    m = family.axis
    w = rc.rotate_vec(family.base, n)
    w_par = pr.dot(w, m) * m
    w_perp = w - w_par
    return pr.dot(A, w_par), pr.dot(A, w_perp), pr.dot(A, rc.cross(m, w))


def constraint_residual(r, A, n, c):
    """``<R^-1 A, n> - c`` for a sensor-from-global rotation ``r``."""
    return pr.dot(rc.rotate_vec(rc.quat_inverse(r), A), n) - c


def constraint_target(surface: SurfaceModel, kin: Kinematics | None, mode=TANGENCY):
    """Required normal component of the globally-expressed specific force.

    ``tangency``: external acceleration parallel to the surface, ``c = <g, n>``.
    ``literal``: ``(p + v dt - g dt^2 + R^-1 A) . n = 0`` taken as written.
    """
    n, g = surface.n, surface.refs.g
    if mode == TANGENCY:
        return pr.dot(g, n)
    if mode == LITERAL:
        p, v, dt = kin
        return -pr.dot(p - surface.point + v * dt - g * dt * dt, n)
    raise ValueError(f"unknown constraint mode {mode!r}")


def solve_surface_constraint(family: RotationFamily, A, n, c, tol=None, slack=0.0) -> list[Candidate]:
    """Members of ``family`` with ``<R^-1 A, n> = c``: zero, one (tangent) or two.

    ``slack`` (same units as ``A``) accepts near misses, ``|c - k| - r <= slack``,
    as tangent solutions; useful when ``A`` carries noise of known size.
    """
    k, a, b = _harmonic(family, A, n)
    d = c - k
    r2 = a * a + b * b
    prec = pr.precision_of(A)
    scale = pr.dot(A, A) * pr.dot(n, n)
    if not r2 > 1e4 * prec.eps * prec.eps * scale:
        return []
    tol = 64 * prec.eps * scale if tol is None else tol
    disc = r2 - d * d
    phi = pr.atan2(b, a)
    if disc < -tol and not (slack > 0 and abs(d) - pr.sqrt(r2) <= slack):
        return []
    if disc <= tol:
        # cos(theta - phi) = sign(d)
        th = phi + pr.pi_like(d) if d < 0 else phi
        return [Candidate(th, 2, rc.quat_inverse(family.member(th)), conditioning=0.0)]
    root = pr.sqrt(disc)
    half = pr.atan2(root, d)
    cond = root / pr.sqrt(r2)
    return [Candidate(th, 1, rc.quat_inverse(family.member(th)), conditioning=cond)
            for th in (phi - half, phi + half)]


def default_rotation(family: RotationFamily, A, g) -> Candidate:
    """Family member aligning the rotated specific force with gravity."""
    _, a, b = _harmonic(family, A, rc.unit(g))
    phi = pr.atan2(b, a)
    return Candidate(phi, 1, rc.quat_inverse(family.member(phi)))


def _select(cands, pred_q, n):
    scored = [replace(c, distance=rc.geodesic_distance(pred_q, c.q)) for c in cands]
    scored.sort(key=lambda c: c.distance)
    if len(scored) == 2:
        d0, d1 = scored[0].distance, scored[1].distance
        if abs(d1 - d0) <= 16 * pr.precision_of(pred_q).eps:
            ez = pr.like(pred_q, [0.0, 0.0, 1.0])
            up = [pr.dot(rc.rotate_vec(c.q, ez), n) for c in scored]
            if up[1] > up[0]:
                scored.reverse()
    return scored


def linalg_gravity(pred_q, A, M, surface: SurfaceModel, kin: Kinematics | None = None,
                   constraint=TANGENCY, field_ref=None, slack=0.0) -> LinAlgOutcome:
    """Replace the accelerometer reading by the constraint-consistent gravity."""
    b = surface.refs.b if field_ref is None else field_ref
    fam = rotation_family(b, M)
    c = constraint_target(surface, kin, constraint)
    cands = solve_surface_constraint(fam, A, surface.n, c, slack=slack)
    if not cands:
        return LinAlgOutcome(NO_INTERSECTION, A, A, mag=M, antiparallel=fam.antiparallel)
    scored = _select(cands, pred_q, surface.n)
    best = scored[0]
    a_g = rc.rotate_vec(rc.quat_inverse(best.q), surface.refs.g)
    return LinAlgOutcome(CORRECTED, a_g, A, rc.quat_inverse(best.q), tuple(scored), mag=M,
                         antiparallel=fam.antiparallel)


def detect_and_correct(pred_q, A, M_raw, surface: SurfaceModel, gamma, kin: Kinematics | None = None,
                       constraint=TANGENCY, pseudo_ref=(0.0, 1.0, 0.0), capture_tol=1e-6,
                       use_pseudo_mag=True, slack=0.0) -> LinAlgOutcome:
    """Apply the correction only where the prediction clearly favours it.

    1. Swap the magnetometer for the field reference seen from the prediction.
    2. The default rotation aligns the rotated specific force with gravity.
    3. No intersection, or a prediction outside the rotation family
       (farther than ``capture_tol`` radians): keep the raw reading.
    4. Correct when ``gamma * d(pred, nearest intersection) <= d(pred, default)``.
    """
    if gamma < 1:
        raise ValueError("gamma must be at least 1")
    ref = pr.like(pred_q, pseudo_ref) if use_pseudo_mag else surface.refs.b
    M = rc.rotate_vec(rc.quat_inverse(pred_q), rc.unit(ref)) if use_pseudo_mag else M_raw
    fam = rotation_family(ref, M)
    c = constraint_target(surface, kin, constraint)
    cands = solve_surface_constraint(fam, A, surface.n, c, slack=slack)
    if not cands:
        return LinAlgOutcome(NO_INTERSECTION, A, A, mag=M)
    off_family = pr.norm(rc.rotate_vec(rc.quat_inverse(pred_q), fam.b_hat) - fam.axis)
    if off_family > capture_tol:
        return LinAlgOutcome(PREDICTION_OUTSIDE, A, A, mag=M)
    scored = _select(cands, pred_q, surface.n)
    default = default_rotation(fam, A, surface.refs.g)
    d_def = rc.geodesic_distance(pred_q, default.q)
    best = scored[0]
    if best.distance * gamma <= d_def:
        a_g = rc.rotate_vec(rc.quat_inverse(best.q), surface.refs.g)
        return LinAlgOutcome(CORRECTED, a_g, A, rc.quat_inverse(best.q), tuple(scored), d_def, mag=M)
    return LinAlgOutcome(DEFAULT_KEPT, A, A, None, tuple(scored), d_def, mag=M)


@dataclass(frozen=True)
class RevConfig:
    base: MekfConfig
    gamma: float | None = None
    constraint: str = TANGENCY
    pseudo_ref: tuple = (0.0, 1.0, 0.0)
    capture_tol: float = 1e-6
    slack: float = 0.0
    cond_ref: float = 0.0
    cond_cap: float = 1e10


def conditioned_noise(U, out: LinAlgOutcome, cond_ref, cap=1e10):
    """Accelerometer-row noise inflated by ``1 + (cond_ref / conditioning)^2``.

    Near tangency the recovered gravity is poorly determined, so the update
    leans on the gyro prediction instead. ``cond_ref = 0`` leaves ``U`` as is.
    """
    if not cond_ref or out.mode != CORRECTED or out.conditioning is None:
        return U
    c = float(out.conditioning)
    scale = cap if c == 0 else min(cap, 1.0 + (cond_ref / c) ** 2)
    U = U.copy()
    U[:3, :3] = U[:3, :3] * pr.precision_of(U).scalar(scale)
    return U


def revmekf_step(state: FilterState, sample: ImuSample, surface: SurfaceModel, config: RevConfig, dt,
                 trace: list | None = None) -> FilterState:
    """Prediction, gravity recovery, update, then dead reckoning with the raw reading.

    With ``config.gamma`` set, the detection heuristic decides per sample, and
    the update sees the pseudo-magnetometer against the same reference.
    """
    kin = Kinematics(state.p, state.v, dt)
    state, _ = predict(state, sample.omega, dt, config.base.noise.Q, config.base.exact_transition)
    refs = config.base.refs
    if config.gamma is None:
        out = linalg_gravity(state.q, sample.accel, sample.mag, surface, kin, config.constraint,
                             slack=config.slack)
    else:
        out = detect_and_correct(state.q, sample.accel, sample.mag, surface, config.gamma, kin,
                                 config.constraint, config.pseudo_ref, config.capture_tol,
                                 slack=config.slack)
        refs = replace(refs, b=pr.like(state.q, config.pseudo_ref))
    if trace is not None:
        trace.append(out)
    U = conditioned_noise(config.base.noise.U, out, config.cond_ref, config.cond_cap)
    state = update(state, out.a_g, out.mag, U, refs, config.base.residual_mode)
    return advance_kinematics(state, sample.accel, config.base.refs, dt)


# ------------------------------------------------------------ reversibility


class Measurement(NamedTuple):
    """Group element plus vector readings: ``(h, (A, M))``.

    ``h`` is the relative-frame increment ``exp(-omega dt)``, so the global
    orientation advances as ``q <- q * h^-1``.
    """

    h: np.ndarray
    accel: np.ndarray
    mag: np.ndarray


def measurement_from_sample(sample: ImuSample, dt) -> Measurement:
    return Measurement(rc.quat_exp(-sample.omega * dt), sample.accel, sample.mag)


def act(h, m: Measurement) -> Measurement:
    """Left action ``h * (g, (v, w)) = (h g, (h.v, h.w))``."""
    return Measurement(rc.quat_mul(h, m.h), rc.rotate_vec(h, m.accel), rc.rotate_vec(h, m.mag))


def reverse_measurement(m: Measurement) -> Measurement:
    """``h^-1 * (Id, w)``: undo the increment and carry the readings back."""
    h_inv = rc.quat_inverse(m.h)
    return act(h_inv, Measurement(rc.identity_quat(m.h), m.accel, m.mag))


def measurement_filter(step: Callable, dt, **kwargs) -> Callable:
    """Adapt a sample-driven step into ``f(state, measurement) -> state``."""

    def f(state, m: Measurement):
        omega = -rc.quat_log(m.h) / dt
        return step(state, ImuSample(None, omega, m.accel, m.mag), dt=dt, **kwargs)

    return f


def state_distance(a: FilterState, b: FilterState):
    return rc.geodesic_distance(a.q, b.q) + pr.norm(a.bias - b.bias)


def check_reversibility(filter_fn: Callable, u: FilterState, m: Measurement, epsilon=0.0, direction=None):
    """Distances to ``u`` after a forward step and a step on the reversed measurement.

    Returns ``(exact_error, perturbed_error)``; the perturbed run adds
    ``epsilon`` times a fixed unit direction to both reversed readings.
    """
    u1 = filter_fn(u, m)
    back = reverse_measurement(m)
    exact = state_distance(filter_fn(u1, back), u)
    if direction is None:
        direction = rc.unit(pr.like(m.accel, [1.0, -2.0, 2.0]))
    eps = pr.precision_of(m.accel).scalar(epsilon)
    pert = Measurement(back.h, back.accel + eps * direction, back.mag + eps * direction)
    perturbed = state_distance(filter_fn(u1, pert), u)
    return exact, perturbed
