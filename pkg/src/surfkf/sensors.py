"""Measurement model, synthetic trajectories and IMU streams, CSV ingestion.

Indexing: a stream of ``N`` rows describes times ``t_k = k * dt``. Row ``k``
carries the body rate ``omega_k`` that advanced the orientation from row
``k-1`` to row ``k`` and the specific force measured at row ``k``. Row 0 is the
initial condition; its rate is zero.

Translational motion uses semi-implicit Euler, for ground truth and for dead
reckoning alike::

    v_k = v_{k-1} + a_k * dt
    p_k = p_{k-1} + v_k * dt
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np

from . import precision as pr
from . import rotcore as rc
from .surface import ReferenceVectors, SurfaceModel


@dataclass(frozen=True)
class ImuSample:
    t: object
    omega: np.ndarray
    accel: np.ndarray
    mag: np.ndarray


@dataclass(frozen=True)
class OdometrySample:
    t: object
    d_left: object
    d_right: object
    pressure: object = None


@dataclass(frozen=True)
class ImuStream:
    t: np.ndarray
    omega: np.ndarray
    accel: np.ndarray
    mag: np.ndarray

    def __len__(self):
        return len(self.t)

    def __iter__(self) -> Iterator[ImuSample]:
        for k in range(len(self)):
            yield self[k]

    def __getitem__(self, k) -> ImuSample:
        return ImuSample(self.t[k], self.omega[k], self.accel[k], self.mag[k])


@dataclass(frozen=True)
class OdometryStream:
    t: np.ndarray
    d_left: np.ndarray
    d_right: np.ndarray
    pressure: np.ndarray | None = None

    def __len__(self):
        return len(self.t)

    def __getitem__(self, k) -> OdometrySample:
        p = None if self.pressure is None else self.pressure[k]
        return OdometrySample(self.t[k], self.d_left[k], self.d_right[k], p)

    def __iter__(self) -> Iterator[OdometrySample]:
        for k in range(len(self)):
            yield self[k]


@dataclass(frozen=True)
class GroundTruth:
    t: np.ndarray
    q: np.ndarray
    p: np.ndarray
    v: np.ndarray
    a_ext: np.ndarray
    omega: np.ndarray
    dt: object

    def __len__(self):
        return len(self.t)


@dataclass(frozen=True)
class NoiseSpec:
    gyro_bias: np.ndarray = field(default_factory=lambda: np.zeros(3))
    gyro_noise_std: float = 0.0
    accel_noise_std: float = 0.0
    mag_noise_std: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if min(self.gyro_noise_std, self.accel_noise_std, self.mag_noise_std) < 0:
            raise ValueError("noise standard deviations must be non-negative")


def integrate_gyro(q, omega, dt):
    return rc.quat_mul(q, rc.quat_exp(omega * dt))


def body_from_global(q, v):
    return rc.rotate_vec(rc.quat_inverse(q), v)


def measure_accel_variation(accel) -> float:
    """Mean ``|A_{k+1} - A_k|`` over a stream of vectors."""
    if len(accel) < 2:
        return 0.0
    d = accel[1:] - accel[:-1]
    return float(np.mean([float(pr.norm(row)) for row in d]))


def _ou(rng, n, dim, smoothing):
    """Leaky cumulative sum of Gaussian increments with unit stationary variance."""
    x = np.empty((n, dim))
    x[0] = rng.standard_normal(dim)
    gain = math.sqrt(2 * smoothing - smoothing * smoothing)
    inc = rng.standard_normal((n, dim)) * gain
    for k in range(1, n):
        x[k] = (1 - smoothing) * x[k - 1] + inc[k]
    return x


def generate_trajectory(duration, rate=100.0, accel_variation_target=0.0, seed=0, *,
                        surface: SurfaceModel | None = None, omega_scale=0.5, smoothing=0.02,
                        accel_offset=None, initial_velocity=None, initial_orientation=None,
                        precision: pr.Precision = pr.DOUBLE) -> GroundTruth:
    """Random orientation history with surface-tangent external acceleration.

    The body rate and the external acceleration are smoothed random processes.
    The acceleration is scaled so that its mean variation per sample equals
    ``accel_variation_target`` exactly (up to rounding) and is added to the
    constant tangent offset ``accel_offset``.
    """
    if not (math.isfinite(accel_variation_target) and math.isfinite(duration) and math.isfinite(rate)):
        raise ValueError("trajectory parameters must be finite")
    if rate <= 0 or accel_variation_target < 0:
        raise ValueError("rate must be positive and the variation target non-negative")
    n = int(round(duration * rate))
    if n < 1:
        raise ValueError("trajectory needs at least one sample")
    surface = surface or SurfaceModel()
    rng = np.random.default_rng(seed)

    q0 = rng.standard_normal(4)
    if initial_orientation is not None:
        q0 = pr.to_float(initial_orientation)
    w = _ou(rng, n, 3, smoothing) * omega_scale
    w[0] = 0.0
    y = _ou(rng, n, 2, smoothing)
    dy = np.linalg.norm(np.diff(y, axis=0), axis=1).mean() if n > 1 else 1.0
    scale = accel_variation_target / dy if dy > 0 else 0.0

    prec = precision
    with prec:
        surf = surface.at(prec)
        t1, t2 = surf.tangent_basis()
        dt = prec.scalar(1) / prec.scalar(rate)
        q = prec.asarray(q0)
        q = q / pr.norm(q)
        omega = prec.asarray(w)
        yy = prec.asarray(y) * prec.scalar(scale)
        a0 = prec.zeros(3) if accel_offset is None else _tangent(prec.asarray(accel_offset), surf.n)
        a = np.empty((n, 3), dtype=omega.dtype)
        for k in range(n):
            a[k] = a0 + yy[k, 0] * t1 + yy[k, 1] * t2
        v0 = prec.zeros(3) if initial_velocity is None else _tangent(prec.asarray(initial_velocity), surf.n)

        Q = np.empty((n, 4), dtype=omega.dtype)
        P = np.empty((n, 3), dtype=omega.dtype)
        V = np.empty((n, 3), dtype=omega.dtype)
        Q[0], P[0], V[0] = q, surf.point, v0
        for k in range(1, n):
            Q[k] = integrate_gyro(Q[k - 1], omega[k], dt)
            V[k] = V[k - 1] + a[k] * dt
            P[k] = P[k - 1] + V[k] * dt
        t = np.array([dt * k for k in range(n)], dtype=omega.dtype)
    return GroundTruth(t, Q, P, V, a, omega, dt)


def _tangent(v, n):
    return v - pr.dot(v, n) * n


def synthesize_imu(truth: GroundTruth, noise: NoiseSpec | None = None,
                   surface: SurfaceModel | ReferenceVectors | None = None) -> ImuStream:
    """Gyro, accelerometer and magnetometer readings for a ground truth.

    ``accel`` is the body-frame specific force ``R(q)^T (g + a_ext)``; ``mag`` is
    the body-frame unit field direction.
    """
    noise = noise or NoiseSpec()
    refs = surface.refs if isinstance(surface, SurfaceModel) else (surface or ReferenceVectors())
    prec = pr.precision_of(truth.q)
    n = len(truth)
    rng = np.random.default_rng(noise.seed)
    gyro_noise = rng.standard_normal((n, 3)) * noise.gyro_noise_std
    accel_noise = rng.standard_normal((n, 3)) * noise.accel_noise_std
    mag_noise = rng.standard_normal((n, 3)) * noise.mag_noise_std
    with prec:
        refs = refs.at(prec)
        b_hat = rc.unit(refs.b)
        omega = truth.omega + prec.asarray(noise.gyro_bias) + prec.asarray(gyro_noise)
        omega[0] = prec.zeros(3)
        accel = np.empty((n, 3), dtype=omega.dtype)
        mag = np.empty((n, 3), dtype=omega.dtype)
        for k in range(n):
            accel[k] = body_from_global(truth.q[k], refs.g + truth.a_ext[k])
            mag[k] = body_from_global(truth.q[k], b_hat)
        accel = accel + prec.asarray(accel_noise)
        mag = mag + prec.asarray(mag_noise)
    return ImuStream(truth.t.copy(), omega, accel, mag)


def dead_reckon(q_stream, accel_stream, g, dt, p0=None, v0=None):
    """Positions and velocities from orientations and body-frame specific force."""
    n = len(q_stream)
    prec = pr.precision_of(q_stream)
    with prec:
        P = np.empty((n, 3), dtype=q_stream.dtype)
        V = np.empty((n, 3), dtype=q_stream.dtype)
        P[0] = prec.zeros(3) if p0 is None else p0
        V[0] = prec.zeros(3) if v0 is None else v0
        for k in range(1, n):
            p, v = dead_reckon_step(P[k - 1], V[k - 1], q_stream[k], accel_stream[k], g, dt)
            P[k], V[k] = p, v
    return P, V


def dead_reckon_step(p, v, q, accel, g, dt):
    a = rc.rotate_vec(q, accel) - g
    v = v + a * dt
    return p + v * dt, v


# ---------------------------------------------------------------- CSV


class CsvFormatError(ValueError):
    pass


class MalformedRow(CsvFormatError):
    def __init__(self, line: int, detail: str):
        super().__init__(f"line {line}: {detail}")
        self.line = line


class NonMonotoneTime(CsvFormatError):
    def __init__(self, line: int):
        super().__init__(f"line {line}: timestamp does not increase")
        self.line = line


class MissingColumn(CsvFormatError):
    def __init__(self, column: str):
        super().__init__(f"missing column {column!r}")
        self.column = column


@dataclass(frozen=True)
class CsvSchema:
    """Declarative mapping from CSV columns to stream fields.

    ``columns`` maps a field name (``t``, ``omega``, ``accel``, ``mag``,
    ``d_left``, ``d_right``, ``pressure``) to a column name, or a tuple of three
    column names for vector fields, together with a unit factor applied on load.
    """

    kind: str
    columns: dict
    factors: dict = field(default_factory=dict)
    optional: tuple = ()
    normalize_mag: bool = True

    def names(self, fld):
        cols = self.columns[fld]
        return (cols,) if isinstance(cols, str) else tuple(cols)


IMU_SCHEMA = CsvSchema("imu", {
    "t": "t",
    "omega": ("wx", "wy", "wz"),
    "accel": ("ax", "ay", "az"),
    "mag": ("mx", "my", "mz"),
}, normalize_mag=False)

ODOMETRY_SCHEMA = CsvSchema("odometry", {
    "t": "t",
    "d_left": "d_left",
    "d_right": "d_right",
    "pressure": "pressure",
}, optional=("pressure",))

TRUTH_SCHEMA = CsvSchema("truth", {
    "t": "t",
    "q": ("qw", "qx", "qy", "qz"),
    "p": ("px", "py", "pz"),
    "v": ("vx", "vy", "vz"),
    "a_ext": ("ax", "ay", "az"),
    "omega": ("wx", "wy", "wz"),
})


def driving_dataset_schema(placement: str = "dashboard") -> CsvSchema:
    """Schema for the public vehicle-driving IMU recordings (MPU9250 exports).

    Gyro columns are in deg/s and converted to rad/s; the magnetometer is
    normalized to a direction on load.
    """
    s = placement
    return CsvSchema("imu", {
        "t": "timestamp",
        "omega": (f"gyro_x_{s}", f"gyro_y_{s}", f"gyro_z_{s}"),
        "accel": (f"acc_x_{s}", f"acc_y_{s}", f"acc_z_{s}"),
        "mag": (f"mag_x_{s}", f"mag_y_{s}", f"mag_z_{s}"),
    }, factors={"omega": math.pi / 180})


def _fmt(x) -> str:
    return str(x) if pr.is_mp(x) else repr(float(x))


def write_csv(path, stream, schema: CsvSchema | None = None) -> None:
    schema = schema or _schema_for(stream)
    fields = [f for f in schema.columns if getattr(stream, f, None) is not None]
    header = [c for f in fields for c in schema.names(f)]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for k in range(len(stream)):
            row = []
            for f in fields:
                val = getattr(stream, f)[k]
                factor = schema.factors.get(f, 1.0)
                vals = val if np.ndim(val) else [val]
                row.extend(_fmt(x / factor if factor != 1.0 else x) for x in vals)
            w.writerow(row)


def _schema_for(stream):
    if isinstance(stream, ImuStream):
        return IMU_SCHEMA
    if isinstance(stream, OdometryStream):
        return ODOMETRY_SCHEMA
    if isinstance(stream, GroundTruth):
        return TRUTH_SCHEMA
    raise TypeError(f"no default schema for {type(stream).__name__}")


def load_csv(path, schema: CsvSchema = IMU_SCHEMA, precision: pr.Precision = pr.DOUBLE):
    """Parse a stream. Timestamps must strictly increase."""
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise MalformedRow(1, "empty file") from None
        index = {h: i for i, h in enumerate(header)}
        present = {}
        for f in schema.columns:
            names = schema.names(f)
            missing = [c for c in names if c not in index]
            if missing:
                if f in schema.optional:
                    continue
                raise MissingColumn(missing[0])
            present[f] = [index[c] for c in names]
        data = {f: [] for f in present}
        last_t = None
        for line, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise MalformedRow(line, f"expected {len(header)} fields, got {len(row)}")
            for f, idx in present.items():
                try:
                    vals = [precision.scalar(row[i].strip()) for i in idx]
                except (ValueError, TypeError):
                    raise MalformedRow(line, f"non-numeric value in {f!r}") from None
                if not all(math.isfinite(float(v)) for v in vals):
                    raise MalformedRow(line, f"non-finite value in {f!r}")
                data[f].append(vals)
            t = data["t"][-1][0]
            if last_t is not None and not t > last_t:
                raise NonMonotoneTime(line)
            last_t = t

    def arr(f):
        if f not in data:
            return None
        a = precision.asarray(np.array(data[f], dtype=object))
        factor = schema.factors.get(f, 1.0)
        if factor != 1.0:
            with precision:
                a = a * precision.scalar(factor)
        return a[:, 0] if len(schema.names(f)) == 1 else a

    if schema.kind == "imu":
        mag = arr("mag")
        if schema.normalize_mag:
            with precision:
                mag = np.array([row / pr.norm(row) for row in mag], dtype=mag.dtype).reshape(mag.shape)
        return ImuStream(arr("t"), arr("omega"), arr("accel"), mag)
    if schema.kind == "odometry":
        return OdometryStream(arr("t"), arr("d_left"), arr("d_right"), arr("pressure"))
    if schema.kind == "truth":
        t = arr("t")
        dt = t[1] - t[0] if len(t) > 1 else precision.scalar(0)
        return GroundTruth(t, arr("q"), arr("p"), arr("v"), arr("a_ext"), arr("omega"), dt)
    raise ValueError(f"unknown schema kind {schema.kind!r}")
