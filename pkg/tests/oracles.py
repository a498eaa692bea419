"""Independent reference computations used by the unit and acceptance tests."""

from functools import lru_cache

import numpy as np

from surfkf import rotcore as rc
from surfkf.precision import to_float


def constraint_on_grid(family, A, n, c, points=1_000_000):
    """Residual ``<R(theta)^-1 A, n> - c`` on a uniform theta grid.

    Rotations are built with a vectorized Rodrigues formula from the family
    axis and the base quaternion's matrix, not from the solver's harmonic
    coefficients.
    """
    m = to_float(family.axis)
    R0 = to_float(rc.quat_to_matrix(family.base))
    A, n = to_float(A), to_float(n)
    theta, cos, sin = _grid(points)
    # <R0^T Rot(m, -theta) A, n> with each Rodrigues term projected on R0 n
    w = R0 @ n
    res = cos * (A @ w) - sin * (np.cross(m, A) @ w) + (1 - cos) * (m @ A) * (m @ w) - float(c)
    return theta, res


@lru_cache(maxsize=2)
def _grid(points):
    theta = np.linspace(0.0, 2 * np.pi, points, endpoint=False)
    return theta, np.cos(theta), np.sin(theta)


def grid_roots(theta, res, tangent_tol=1e-9):
    """Sign changes (refined by linear interpolation) plus touching extrema.

    A touching extremum is a local extremum of the residual whose parabolic
    vertex value is within ``tangent_tol`` of zero; it counts as one root.
    """
    h = theta[1] - theta[0]
    nxt = np.roll(res, -1)
    roots = []
    for i in np.nonzero((res != 0) & (np.sign(res) != np.sign(nxt)))[0]:
        roots.append(theta[i] + h * res[i] / (res[i] - nxt[i]))
    roots.extend(theta[np.nonzero(res == 0)[0]])
    prv = np.roll(res, 1)
    ext = np.nonzero(((res >= prv) & (res >= nxt)) | ((res <= prv) & (res <= nxt)))[0]
    for i in ext:
        y0, y1, y2 = prv[i], res[i], nxt[i]
        curv = y0 - 2 * y1 + y2
        if curv == 0:
            continue
        off = 0.5 * (y0 - y2) / curv
        vertex = y1 - 0.25 * (y0 - y2) * off
        if abs(vertex) <= tangent_tol and abs(off) <= 1:
            t = theta[i] + off * h
            if all(_adist(t, r) > 1e-4 for r in roots):
                roots.append(t)
    # a numerically split double root shows up as two crossings a hair apart
    merged = []
    for r in sorted(r % (2 * np.pi) for r in roots):
        if merged and _adist(r, merged[-1]) <= 1e-4:
            merged[-1] = 0.5 * (merged[-1] + r)
        else:
            merged.append(r)
    if len(merged) > 1 and _adist(merged[0], merged[-1]) <= 1e-4:
        merged[0] = (merged[0] + (merged.pop() - 2 * np.pi)) / 2 % (2 * np.pi)
    return merged


def _adist(a, b):
    d = (a - b) % (2 * np.pi)
    return min(d, 2 * np.pi - d)


def match_roots(solver_thetas, oracle_thetas, tol=1e-6):
    """True when both root sets have the same size and pair up within ``tol``."""
    if len(solver_thetas) != len(oracle_thetas):
        return False
    left = list(oracle_thetas)
    for t in solver_thetas:
        j = min(range(len(left)), key=lambda i: _adist(float(t), left[i]))
        if _adist(float(t), left[j]) > tol:
            return False
        left.pop(j)
    return True


def random_instance(rng, kind, variant="revkf"):
    """A (family, A, normal, c) instance with 0, 1 or 2 roots by construction.

    ``kind`` is 0, 1 (tangent) or 2. ``variant`` picks the magnetometer
    family or the pressure family.
    """
    from surfkf import odom, revkf

    while True:
        if variant == "revkf":
            b = rng.standard_normal(3)
            fam = revkf.rotation_family(b, rng.standard_normal(3))
            normal = rc.unit(rng.standard_normal(3))
        else:
            n = rc.unit(rng.standard_normal(3))
            if abs(n[2]) > 0.95:
                continue
            fam = odom.pressure_family(n)
            normal = np.array([0.0, 0.0, 1.0])
        A = rng.standard_normal(3) * rng.uniform(1, 10)
        k, a, bb = revkf._harmonic(fam, A, normal)
        r = float(np.hypot(a, bb))
        if r < 0.1 * np.linalg.norm(A):
            continue
        if kind == 2:
            c = k + r * rng.uniform(-0.95, 0.95)
        elif kind == 1:
            c = k + r * (1 if rng.random() < 0.5 else -1)
        else:
            c = k + r * (1 if rng.random() < 0.5 else -1) * rng.uniform(1.05, 2.0)
        return fam, A, normal, c
