"""Rotation algebra on SO(3): quaternions, rotation vectors, Rodrigues.

Conventions (used throughout the package):

* Quaternions are scalar-first ``[w, x, y, z]`` with the Hamilton product.
* The state quaternion ``q`` maps body-frame vectors to the global frame:
  ``v_global = rotate_vec(q, v_body) = R(q) @ v_body``. A global reference
  seen by the sensor is therefore ``rotate_vec(quat_inverse(q), ref)``.
* Body rates integrate by right multiplication, ``q <- q * exp(omega * dt)``.
* ``quat_log`` returns the principal branch (angle in ``[0, pi]``) after
  flipping ``q`` to ``w >= 0``.

All functions are precision-polymorphic: they accept ``float64`` or mpfr
``object`` arrays and return the same kind.
"""

from __future__ import annotations

import numpy as np

from . import precision as pr


def _taylor_threshold(x) -> float:
    return pr.precision_of(x).taylor_threshold


def identity_quat(like=None) -> np.ndarray:
    q = [1.0, 0.0, 0.0, 0.0]
    return pr.like(like, q) if like is not None else np.array(q)


def cross(a, b) -> np.ndarray:
    return np.array([a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]],
                    dtype=a.dtype if isinstance(a, np.ndarray) else None)


def skew(v) -> np.ndarray:
    """Matrix ``S`` with ``S @ w == cross(v, w)``."""
    z = v[0] * 0
    return np.array([[z, -v[2], v[1]], [v[2], z, -v[0]], [-v[1], v[0], z]],
                    dtype=v.dtype if isinstance(v, np.ndarray) else None)


def _exp_coeffs(alpha, alpha2):
    """sin(a)/a and (1 - cos a)/a^2, series below the Taylor threshold."""
    if alpha < _taylor_threshold(alpha):
        return 1 - alpha2 / 6, 0.5 - alpha2 / 24
    s = pr.sin(alpha / 2)
    return pr.sin(alpha) / alpha, 2 * s * s / alpha2


def so3_exp(u) -> np.ndarray:
    """Rodrigues formula ``I + sin(a)[u]x + (1 - cos a)[u]x^2`` for ``u = a*u_hat``."""
    alpha2 = pr.dot(u, u)
    alpha = pr.sqrt(alpha2)
    A, B = _exp_coeffs(alpha, alpha2)
    K = skew(u)
    return pr.eye_like(u, 3) + A * K + B * (K @ K)


def quat_exp(u) -> np.ndarray:
    alpha2 = pr.dot(u, u)
    alpha = pr.sqrt(alpha2)
    half = alpha / 2
    if alpha < _taylor_threshold(alpha):
        c = 1 - alpha2 / 8
        s_over = 0.5 - alpha2 / 48
    else:
        c = pr.cos(half)
        s_over = pr.sin(half) / alpha
    out = np.empty(4, dtype=u.dtype)
    out[0] = c
    out[1:] = s_over * u
    return out


def quat_log(q) -> np.ndarray:
    """Principal rotation vector of ``q`` (norm in ``[0, pi]``)."""
    if q[0] < 0:
        q = -q
    w, v = q[0], q[1:]
    s2 = pr.dot(v, v)
    s = pr.sqrt(s2)
    if s < _taylor_threshold(s) and w > 0:
        r2 = s2 / (w * w)
        factor = (2 / w) * (1 - r2 / 3)
    else:
        factor = 2 * pr.atan2(s, w) / s
    return factor * v


def quat_normalize(q) -> np.ndarray:
    return q / pr.norm(q)


def quat_mul(a, b) -> np.ndarray:
    """Hamilton product ``a * b``, renormalized."""
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    out = np.array([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ], dtype=a.dtype)
    return quat_normalize(out)


def quat_inverse(q) -> np.ndarray:
    out = -q
    out[0] = q[0]
    return out


def rotate_vec(q, v) -> np.ndarray:
    """Conjugation ``q (0|v) q^-1``, i.e. ``R(q) @ v``."""
    w, u = q[0], q[1:]
    t = 2 * cross(u, v)
    return v + w * t + cross(u, t)


def quat_to_matrix(q) -> np.ndarray:
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ], dtype=q.dtype)


def geodesic_distance(a, b):
    """Rotation angle of ``a^-1 * b`` in ``[0, pi]``."""
    return pr.norm(quat_log(quat_mul(quat_inverse(a), b)))


def axis_angle_quat(axis, angle) -> np.ndarray:
    """Quaternion rotating by ``angle`` about the unit vector ``axis``."""
    half = angle / 2
    out = np.empty(4, dtype=axis.dtype)
    out[0] = pr.cos(half)
    out[1:] = pr.sin(half) * axis
    return out


def unit(v) -> np.ndarray:
    return v / pr.norm(v)


def any_perpendicular(v) -> np.ndarray:
    """A unit vector orthogonal to ``v`` (deterministic choice)."""
    a = np.abs(pr.to_float(v))
    e = pr.zeros_like(v, 3)
    e[int(np.argmin(a))] = 1
    return unit(cross(v, e))


def quat_between(a, b) -> np.ndarray:
    """Minimal rotation taking direction ``a`` to direction ``b``.

    Raises ``ValueError`` for antiparallel inputs, where the axis is ambiguous.
    """
    a, b = unit(a), unit(b)
    c = pr.dot(a, b)
    axis = cross(a, b)
    # (1 + c, a x b) normalized is the half-angle quaternion
    q = np.empty(4, dtype=a.dtype)
    q[0] = 1 + c
    q[1:] = axis
    n = pr.norm(q)
    if n < 1e3 * pr.precision_of(a).eps:
        raise ValueError("antiparallel directions")
    return q / n
