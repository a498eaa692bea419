"""Configurable-precision scalar backend.

Every numeric array in the package is a NumPy array. At 53 bits it is a plain
``float64`` array; above 53 bits it is an ``object`` array whose entries are
``gmpy2.mpfr`` values. Arithmetic on mpfr values rounds to the *active* gmpy2
context precision, so extended-precision work must run inside the
:class:`Precision` context manager::

    prec = Precision(160)
    with prec:
        q = prec.asarray([1, 0, 0, 0])
        ...

The helpers in this module (``sqrt``, ``sin``, ``zeros_like`` ...) dispatch on
the dtype of their argument so the same code path serves both precisions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import gmpy2
import numpy as np

DOUBLE_BITS = 53


class SingularMatrix(ArithmeticError):
    """A matrix expected to be symmetric positive definite is not."""


@dataclass(frozen=True)
class Precision:
    """Mantissa width of the scalar type, in bits (53 means IEEE double)."""

    bits: int = DOUBLE_BITS
    _saved: list = field(default_factory=list, init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.bits < DOUBLE_BITS:
            raise ValueError(f"precision must be at least {DOUBLE_BITS} bits, got {self.bits}")

    @property
    def extended(self) -> bool:
        return self.bits > DOUBLE_BITS

    @property
    def eps(self) -> float:
        """Unit roundoff spacing at 1.0 (one ulp)."""
        return 2.0 ** (1 - self.bits)

    @property
    def taylor_threshold(self) -> float:
        return 2.0 ** (-self.bits / 2)

    def __enter__(self):
        if self.extended:
            self._saved.append(gmpy2.get_context())
            gmpy2.set_context(gmpy2.context(gmpy2.get_context(), precision=self.bits))
        return self

    def __exit__(self, *exc):
        if self.extended:
            gmpy2.set_context(self._saved.pop())
        return False

    def scalar(self, x):
        if not self.extended:
            return float(x)
        return gmpy2.mpfr(x, self.bits)

    def asarray(self, x) -> np.ndarray:
        if not self.extended:
            return np.asarray(x, dtype=float)
        arr = np.asarray(x, dtype=object)
        out = np.empty(arr.shape, dtype=object)
        flat_in, flat_out = arr.reshape(-1), out.reshape(-1)
        for i, v in enumerate(flat_in):
            flat_out[i] = gmpy2.mpfr(float(v) if isinstance(v, np.floating) else v, self.bits)
        return out

    def zeros(self, shape) -> np.ndarray:
        if not self.extended:
            return np.zeros(shape)
        # mpfr values are immutable, so one shared zero is safe
        return np.full(shape, gmpy2.mpfr(0, self.bits), dtype=object)

    def eye(self, n: int) -> np.ndarray:
        if not self.extended:
            return np.eye(n)
        out = self.zeros((n, n))
        one = gmpy2.mpfr(1, self.bits)
        for i in range(n):
            out[i, i] = one
        return out

    def pi(self):
        if not self.extended:
            return math.pi
        with self:
            return gmpy2.const_pi()


DOUBLE = Precision(DOUBLE_BITS)


def is_mp(x) -> bool:
    if isinstance(x, np.ndarray):
        return x.dtype == object
    return isinstance(x, gmpy2.mpfr)


def precision_of(x) -> Precision:
    if isinstance(x, np.ndarray) and x.dtype == object:
        x = x.reshape(-1)[0]
    if isinstance(x, gmpy2.mpfr):
        return Precision(x.precision)
    return DOUBLE


def to_float(x) -> np.ndarray | float:
    """Round to double, e.g. for reporting and plotting."""
    if isinstance(x, np.ndarray):
        if x.dtype == object:
            return np.array([float(v) for v in x.reshape(-1)]).reshape(x.shape)
        return x.astype(float)
    return float(x)


def like(ref, x) -> np.ndarray:
    """Convert ``x`` to the scalar type of ``ref``."""
    return precision_of(ref).asarray(x)


def zeros_like(ref, shape) -> np.ndarray:
    return precision_of(ref).zeros(shape)


def eye_like(ref, n: int) -> np.ndarray:
    return precision_of(ref).eye(n)


def _unary(np_fn, mp_fn):
    def fn(x):
        if isinstance(x, np.ndarray) and x.dtype == object:
            return np.array([mp_fn(v) for v in x.reshape(-1)], dtype=object).reshape(x.shape)
        if isinstance(x, gmpy2.mpfr):
            return mp_fn(x)
        return np_fn(x)

    fn.__name__ = np_fn.__name__
    return fn


sqrt = _unary(np.sqrt, gmpy2.sqrt)
sin = _unary(np.sin, gmpy2.sin)
cos = _unary(np.cos, gmpy2.cos)
exp = _unary(np.exp, gmpy2.exp)
log = _unary(np.log, gmpy2.log)
tan = _unary(np.tan, gmpy2.tan)
isfinite = _unary(np.isfinite, gmpy2.is_finite)


def atan2(y, x):
    if is_mp(y) or is_mp(x):
        if isinstance(y, np.ndarray):
            return np.array([gmpy2.atan2(a, b) for a, b in zip(y.reshape(-1), np.broadcast_to(x, y.shape).reshape(-1))],
                            dtype=object).reshape(y.shape)
        return gmpy2.atan2(y, x)
    return np.arctan2(y, x)


def pi_like(ref):
    return gmpy2.const_pi() if is_mp(ref) else math.pi


def all_finite(a) -> bool:
    a = np.asarray(a)
    if a.dtype == object:
        return all(gmpy2.is_finite(v) for v in a.reshape(-1))
    return bool(np.all(np.isfinite(a)))


def dot(a, b):
    return (a * b).sum()


def norm(v):
    return sqrt((v * v).sum())


def symmetrize(P: np.ndarray) -> np.ndarray:
    return (P + P.T) / 2


def cholesky(A: np.ndarray) -> np.ndarray:
    """Lower Cholesky factor; raises :class:`SingularMatrix` if ``A`` is not PD."""
    if A.dtype != object:
        try:
            return np.linalg.cholesky(A)
        except np.linalg.LinAlgError as exc:
            raise SingularMatrix(str(exc)) from exc
    n = A.shape[0]
    L = zeros_like(A, (n, n))
    for j in range(n):
        s = A[j, j] - sum(L[j, k] * L[j, k] for k in range(j))
        if not s > 0:
            raise SingularMatrix(f"non-positive pivot at column {j}")
        L[j, j] = gmpy2.sqrt(s)
        for i in range(j + 1, n):
            L[i, j] = (A[i, j] - sum(L[i, k] * L[j, k] for k in range(j))) / L[j, j]
    return L


def cho_solve(L: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Solve ``(L Lᵀ) X = B`` given the lower factor ``L``."""
    if L.dtype != object and B.dtype != object:
        import scipy.linalg

        return scipy.linalg.cho_solve((L, True), B)
    n = L.shape[0]
    B2 = B.reshape(n, -1)
    Y = zeros_like(L, B2.shape)
    X = zeros_like(L, B2.shape)
    for c in range(B2.shape[1]):
        for i in range(n):
            Y[i, c] = (B2[i, c] - sum(L[i, k] * Y[k, c] for k in range(i))) / L[i, i]
        for i in reversed(range(n)):
            X[i, c] = (Y[i, c] - sum(L[k, i] * X[k, c] for k in range(i + 1, n))) / L[i, i]
    return X.reshape(B.shape)


def is_psd(P: np.ndarray, rel_tol: float | None = None) -> bool:
    """Symmetric PSD check: Cholesky of the symmetrized matrix plus a tiny jitter."""
    S = symmetrize(P)
    prec = precision_of(P)
    tol = rel_tol if rel_tol is not None else 64 * prec.eps
    scale = max(abs(float(S[i, i])) for i in range(S.shape[0])) or 1.0
    try:
        cholesky(S + eye_like(P, S.shape[0]) * prec.scalar(tol * scale))
    except SingularMatrix:
        return False
    return True


def expm(A: np.ndarray) -> np.ndarray:
    """Matrix exponential by scaling and squaring of a Taylor series."""
    if A.dtype != object:
        import scipy.linalg

        return scipy.linalg.expm(A)
    prec = precision_of(A)
    nrm = max(abs(float(v)) for v in A.reshape(-1))
    s = max(0, int(math.ceil(math.log2(nrm))) + 1) if nrm > 0 else 0
    X = A / prec.scalar(2**s)
    n = A.shape[0]
    term = eye_like(A, n)
    out = eye_like(A, n)
    for k in range(1, 200):
        term = term @ X / k
        out = out + term
        if max(abs(float(v)) for v in term.reshape(-1)) < prec.eps * 1e-3:
            break
    for _ in range(s):
        out = out @ out
    return out
