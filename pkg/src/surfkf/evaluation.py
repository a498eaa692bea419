"""Experiment harness: datasets, filter runs, sweeps and SVG plots."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy import stats

from . import mekf as mk
from . import odom as od
from . import precision as pr
from . import revkf as rk
from . import rotcore as rc
from .sensors import (GroundTruth, ImuStream, NoiseSpec, OdometryStream, generate_trajectory,
                      measure_accel_variation, synthesize_imu)
from .surface import SurfaceModel

FILTER_IDS = ("mekf_additive", "mekf_multiplicative", "revmekf", "revmekf_detect", "odo", "odo_rev")
SWEEP_PARAMETERS = ("accel_variation", "update_noise", "gyro_bias", "accel_noise", "gamma")
DIAGNOSTIC_COLUMNS = ("step", "mode", "n_candidates", "selected_distance", "default_distance",
                      "ext_accel_norm")
SWEEP_COLUMNS = ("parameter", "error", "trial", "seed")


class FilterError(RuntimeError):
    """A filter step failed; ``step`` is the sample index."""

    def __init__(self, step: int, cause: Exception):
        super().__init__(f"step {step}: {type(cause).__name__}: {cause}")
        self.step = step
        self.cause = cause


class EmptyTable(ValueError):
    pass


@dataclass(frozen=True)
class Dataset:
    truth: GroundTruth
    imu: ImuStream
    surface: SurfaceModel = field(default_factory=SurfaceModel)
    odometry: OdometryStream | None = None
    d_w: float = 0.25

    def __len__(self):
        return len(self.truth)


@dataclass(frozen=True)
class FilterConfig:
    """Tuning shared by all filter ids; fields irrelevant to a filter are ignored."""

    q: float = 1e-2
    u: float = 1e-2
    P0: float = 1e-2
    gamma: float = 2.0
    constraint: str = rk.TANGENCY
    capture_tol: float | None = None
    slack: float = 0.0
    exact_transition: bool = False
    odo_q: float = 1e-4
    odo_form: str = od.AS_WRITTEN
    cond_ref: float = 0.0


@dataclass(frozen=True)
class RunReport:
    filter_id: str
    max_position_error: float
    final_orientation_error: float
    position_errors: np.ndarray
    orientation_errors: np.ndarray
    mean_accel_variation: float
    correction_rate: float
    mean_correction_angle: float
    mode_counts: dict
    update_accel: np.ndarray = None

    def __post_init__(self):
        if len(self.position_errors) != len(self.orientation_errors):
            raise ValueError("error series lengths differ")


# ------------------------------------------------------------ datasets


def synthetic_dataset(duration=10.0, rate=100.0, accel_variation=1e-1, seed=0,
                      noise: NoiseSpec | None = None, surface: SurfaceModel | None = None,
                      precision: pr.Precision = pr.DOUBLE, **trajectory_kw) -> Dataset:
    surface = surface or SurfaceModel()
    truth = generate_trajectory(duration, rate, accel_variation, seed, surface=surface,
                                precision=precision, **trajectory_kw)
    return Dataset(truth, synthesize_imu(truth, noise, surface), surface)


def static_dataset(duration=1.0, rate=100.0, precision: pr.Precision = pr.DOUBLE) -> Dataset:
    """Sensor at rest in a fixed orientation: no rotation, no external acceleration."""
    surface = SurfaceModel()
    truth = generate_trajectory(duration, rate, 0.0, 0, surface=surface, omega_scale=0.0,
                                precision=precision)
    return Dataset(truth, synthesize_imu(truth, None, surface), surface)


def vibration_dataset(duration=10.0, rate=100.0, accel_variation=1e-1, amplitude=0.1, frequency=17.0,
                      offset=(3.0, 0.0, 0.0), omega_scale=0.05, seed=0, noise: NoiseSpec | None = None,
                      precision: pr.Precision = pr.DOUBLE) -> Dataset:
    """Vehicle-like stream: level start, slow turns, strong horizontal
    acceleration, and a sinusoidal vibration on the accelerometer z-axis."""
    data = synthetic_dataset(duration, rate, accel_variation, seed, noise, precision=precision,
                             omega_scale=omega_scale, accel_offset=np.asarray(offset, float),
                             initial_orientation=np.array([1.0, 0.0, 0.0, 0.0]))
    with precision:
        t = data.imu.t
        accel = data.imu.accel.copy()
        amp, two_pi_f = precision.scalar(amplitude), 2 * pr.pi_like(t[0]) * frequency
        for k in range(len(t)):
            accel[k, 2] = accel[k, 2] + amp * pr.sin(two_pi_f * t[k])
    return replace(data, imu=replace(data.imu, accel=accel))


def odometry_dataset(duration=20.0, rate=100.0, accel_noise=0.0, seed=0, bank=0.2,
                     precision: pr.Precision = pr.DOUBLE) -> Dataset:
    run = od.generate_odometry_run(duration, rate, bank=bank, noise=NoiseSpec(accel_noise_std=accel_noise,
                                                                             seed=seed + 1),
                                   seed=seed, precision=precision)
    return Dataset(run.truth, run.imu, run.surface, run.odometry, run.d_w)


# ------------------------------------------------------------ runs


def _imu_runner(filter_id, data: Dataset, config: FilterConfig, prec):
    surface = data.surface.at(prec)
    noise = mk.NoiseMatrices.diagonal(config.q, config.u, prec)
    base = mk.MekfConfig(noise, surface.refs,
                         mk.MULTIPLICATIVE if filter_id == "mekf_multiplicative" else mk.ADDITIVE,
                         config.exact_transition)
    tr = data.truth
    state = mk.FilterState.initial(tr.q[0].copy(), config.P0, tr.p[0].copy(), tr.v[0].copy())
    if filter_id.startswith("mekf"):
        return state, lambda s, k, trace: mk.mekf_step(s, data.imu[k], base, tr.dt)
    rev = rk.RevConfig(base, config.gamma if filter_id == "revmekf_detect" else None, config.constraint,
                       capture_tol=1e-6 if config.capture_tol is None else config.capture_tol,
                       slack=config.slack, cond_ref=config.cond_ref)
    return state, lambda s, k, trace: rk.revmekf_step(s, data.imu[k], surface, rev, tr.dt, trace)


def _odo_runner(filter_id, data: Dataset, config: FilterConfig, prec):
    if data.odometry is None:
        raise ValueError(f"filter {filter_id!r} needs an odometry stream")
    surface = data.surface.at(prec)
    kw = {} if config.capture_tol is None else {"capture_tol": config.capture_tol}
    cfg = od.OdoConfig.diagonal(config.odo_q, config.u, prec, form=config.odo_form,
                                gamma=config.gamma if filter_id == "odo_rev" else None,
                                constraint=od.KINEMATIC if config.constraint == rk.TANGENCY else config.constraint,
                                slack=config.slack, **kw)
    tr = data.truth
    state = od.OdomState.initial(tr.q[0].copy(), data.d_w, tr.p[0].copy(), tr.v[0].copy(), config.P0)
    accel = data.imu.accel
    if filter_id == "odo":
        return state, lambda s, k, trace: od.odo_step(s, data.odometry[k], accel[k], surface, cfg, tr.dt)
    return state, lambda s, k, trace: od.odo_revmekf_step(s, data.odometry[k], accel[k], surface, cfg,
                                                          tr.dt, trace)


def _diag_row(k, out):
    if out is None:
        return [k, "Raw", 0, "", "", 0.0]
    sel = out.selected_distance
    return [k, out.mode, len(out.candidates), "" if sel is None else repr(float(sel)),
            "" if out.default_distance is None else repr(float(out.default_distance)),
            repr(float(pr.norm(out.external_accel)))]


def run_filter(filter_id: str, data: Dataset, config: FilterConfig | None = None,
               diagnostics_path=None) -> RunReport:
    """Run one filter over a dataset and score it against the ground truth.

    The run uses the precision of the dataset's arrays. Step 0 is the initial
    condition, so both error series start at zero.
    """
    if filter_id not in FILTER_IDS:
        raise ValueError(f"unknown filter id {filter_id!r}; expected one of {', '.join(FILTER_IDS)}")
    if len(data) < 1:
        raise ValueError("empty dataset")
    config = config or FilterConfig()
    prec = pr.precision_of(data.truth.q)
    tr = data.truth
    n = len(tr)
    pos_err = np.zeros(n)
    ori_err = np.zeros(n)
    fed = pr.to_float(data.imu.accel).copy()
    outcomes: list = []
    rows = []
    with prec:
        runner = _odo_runner if filter_id.startswith("odo") else _imu_runner
        state, step = runner(filter_id, data, config, prec)
        for k in range(1, n):
            trace: list = []
            try:
                state = step(state, k, trace)
            except Exception as exc:  # noqa: BLE001 - re-raised with the step index
                raise FilterError(k, exc) from exc
            out = trace[0] if trace else None
            outcomes.append(out)
            if out is not None:
                fed[k] = pr.to_float(out.a_g)
            rows.append(_diag_row(k, out))
            pos_err[k] = float(pr.norm(state.p - tr.p[k]))
            ori_err[k] = float(rc.geodesic_distance(state.q, tr.q[k]))
        angles = [float(od.correction_angle(o)) for o in outcomes if o is not None and o.mode == rk.CORRECTED]
    counts: dict = {}
    for o in outcomes:
        key = "Raw" if o is None else o.mode
        counts[key] = counts.get(key, 0) + 1
    if diagnostics_path is not None:
        write_rows(diagnostics_path, DIAGNOSTIC_COLUMNS, rows)
    steps = max(n - 1, 1)
    return RunReport(filter_id, float(pos_err.max()), float(ori_err[-1]), pos_err, ori_err,
                     measure_accel_variation(tr.a_ext), len(angles) / steps,
                     float(np.mean(angles)) if angles else 0.0, counts, fed)


def write_rows(path, header, rows) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def write_report(path, report: RunReport) -> None:
    """Per-step error series plus the summary in a two-part CSV."""
    rows = [[k, repr(float(e)), repr(float(o))] for k, (e, o) in
            enumerate(zip(report.position_errors, report.orientation_errors))]
    summary = [
        ("filter_id", report.filter_id),
        ("max_position_error", repr(report.max_position_error)),
        ("final_orientation_error", repr(report.final_orientation_error)),
        ("mean_accel_variation", repr(report.mean_accel_variation)),
        ("correction_rate", repr(report.correction_rate)),
        ("mean_correction_angle", repr(report.mean_correction_angle)),
    ] + [(f"mode_{k}", v) for k, v in sorted(report.mode_counts.items())]
    path = Path(path)
    write_rows(path, ("key", "value"), summary)
    write_rows(path.with_name(path.stem + "_series.csv"), ("step", "position_error", "orientation_error"), rows)


# ------------------------------------------------------------ sweeps


@dataclass(frozen=True)
class SweepSpec:
    """Log-spaced grid over one parameter; every point runs ``trials`` seeds."""

    parameter: str
    lo: float
    hi: float
    points: int
    trials: int = 5
    seed_base: int = 0
    duration: float = 100.0
    rate: float = 100.0
    accel_variation: float = 1e-1
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    config: FilterConfig = field(default_factory=FilterConfig)
    precision: pr.Precision = pr.DOUBLE

    def __post_init__(self):
        if self.parameter not in SWEEP_PARAMETERS:
            raise ValueError(f"unknown sweep parameter {self.parameter!r}")
        if self.points < 1 or self.trials < 1:
            raise ValueError("a sweep needs at least one point and one trial")
        if not (0 < self.lo <= self.hi):
            raise ValueError("grid bounds must satisfy 0 < lo <= hi")
        if self.points > 1 and self.lo == self.hi:
            raise ValueError("grid is not monotone")

    def grid(self) -> np.ndarray:
        return np.logspace(math.log10(self.lo), math.log10(self.hi), self.points)


@dataclass(frozen=True)
class SweepResult:
    rows: list
    slope: float
    spearman: float

    def floor(self) -> dict:
        """Smallest error per parameter value."""
        out: dict = {}
        for p, e, _, _ in self.rows:
            out[p] = min(e, out.get(p, math.inf))
        return out


def _point(spec: SweepSpec, filter_id, value, trial):
    seed = spec.seed_base + trial
    variation, noise, config = spec.accel_variation, replace(spec.noise, seed=seed + 10_000), spec.config
    if spec.parameter == "accel_variation":
        variation = value
    elif spec.parameter == "update_noise":
        config = replace(config, u=value)
    elif spec.parameter == "gyro_bias":
        noise = replace(noise, gyro_bias=np.array([value, 0.0, 0.0]))
    elif spec.parameter == "accel_noise":
        noise = replace(noise, accel_noise_std=value)
    else:
        config = replace(config, gamma=value)
    if filter_id.startswith("odo"):
        data = odometry_dataset(spec.duration, spec.rate, noise.accel_noise_std, seed, precision=spec.precision)
    else:
        data = synthetic_dataset(spec.duration, spec.rate, variation, seed, noise, precision=spec.precision)
    return run_filter(filter_id, data, config).max_position_error, seed


def fit_loglog(x, y) -> tuple[float, float]:
    """Least-squares slope and Spearman rank correlation of log10 y against log10 x."""
    lx, ly = np.log10(np.asarray(x, float)), np.log10(np.maximum(np.asarray(y, float), 1e-300))
    if len(lx) < 2 or np.ptp(lx) == 0:
        return math.nan, math.nan
    slope = float(np.polyfit(lx, ly, 1)[0])
    rho = stats.spearmanr(lx, ly).statistic
    return slope, float(rho)


def sweep(spec: SweepSpec, filter_id: str) -> SweepResult:
    rows = []
    for value in spec.grid():
        for trial in range(spec.trials):
            err, seed = _point(spec, filter_id, float(value), trial)
            rows.append((float(value), err, trial, seed))
    rows.sort(key=lambda r: (r[0], r[2]))
    slope, rho = fit_loglog([r[0] for r in rows], [r[1] for r in rows])
    return SweepResult(rows, slope, rho)


def write_sweep(path, result: SweepResult) -> None:
    write_rows(path, SWEEP_COLUMNS, [(repr(p), repr(e), t, s) for p, e, t, s in result.rows])


# ------------------------------------------------------------ plotting


@dataclass(frozen=True)
class Axes:
    title: str = ""
    xlabel: str = "parameter"
    ylabel: str = "error"
    log_x: bool = True
    log_y: bool = True
    width: int = 640
    height: int = 420


_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf")


def _series(table) -> dict:
    if isinstance(table, SweepResult):
        table = table.rows
    if isinstance(table, dict):
        return {str(k): list(v) for k, v in table.items()}
    return {"": [(r[0], r[1]) for r in table]}


def _esc(s: str) -> str:
    return s.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


def plot(table, axes: Axes | None = None) -> str:
    """Deterministic SVG line chart, one polyline per series.

    ``table`` is a sequence of ``(x, y, ...)`` rows, a :class:`SweepResult`,
    or a mapping from series name to rows.
    """
    axes = axes or Axes()
    series = {k: sorted((float(x), float(y)) for x, y in v) for k, v in _series(table).items() if v}
    if not series:
        raise EmptyTable("nothing to plot")

    def tx(v, log):
        return math.log10(max(v, 1e-300)) if log else v

    xs = [tx(x, axes.log_x) for pts in series.values() for x, _ in pts]
    ys = [tx(y, axes.log_y) for pts in series.values() for _, y in pts]
    x0, x1 = min(xs), max(xs)
    y0, y1 = min(ys), max(ys)
    if x1 == x0:
        x0, x1 = x0 - 1, x1 + 1
    if y1 == y0:
        y0, y1 = y0 - 1, y1 + 1
    ml, mr, mt, mb = 70, 20, 40, 50
    W, H = axes.width, axes.height

    def sx(v):
        return ml + (tx(v, axes.log_x) - x0) / (x1 - x0) * (W - ml - mr)

    def sy(v):
        return H - mb - (tx(v, axes.log_y) - y0) / (y1 - y0) * (H - mt - mb)

    def lab(v, log):
        return f"1e{v:.3g}" if log else f"{v:.4g}"

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {W} {H}" width="{W}" height="{H}">',
           f'<rect x="0" y="0" width="{W}" height="{H}" fill="white"/>',
           f'<line x1="{ml}" y1="{H - mb}" x2="{W - mr}" y2="{H - mb}" stroke="black"/>',
           f'<line x1="{ml}" y1="{mt}" x2="{ml}" y2="{H - mb}" stroke="black"/>',
           f'<text x="{W / 2:.1f}" y="20" text-anchor="middle" font-size="14">{_esc(axes.title)}</text>',
           f'<text x="{W / 2:.1f}" y="{H - 10}" text-anchor="middle" font-size="12">{_esc(axes.xlabel)}</text>',
           f'<text x="15" y="{H / 2:.1f}" text-anchor="middle" font-size="12" '
           f'transform="rotate(-90 15 {H / 2:.1f})">{_esc(axes.ylabel)}</text>',
           f'<text x="{ml}" y="{H - mb + 15}" font-size="10">{lab(x0, axes.log_x)}</text>',
           f'<text x="{W - mr}" y="{H - mb + 15}" text-anchor="end" font-size="10">{lab(x1, axes.log_x)}</text>',
           f'<text x="{ml - 5}" y="{H - mb}" text-anchor="end" font-size="10">{lab(y0, axes.log_y)}</text>',
           f'<text x="{ml - 5}" y="{mt + 5}" text-anchor="end" font-size="10">{lab(y1, axes.log_y)}</text>']
    for i, (name, pts) in enumerate(sorted(series.items())):
        color = _PALETTE[i % len(_PALETTE)]
        coords = " ".join(f"{sx(x):.2f},{sy(y):.2f}" for x, y in pts)
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{coords}"/>')
        if name:
            out.append(f'<text x="{W - mr - 5}" y="{mt + 15 * (i + 1)}" text-anchor="end" font-size="11" '
                       f'fill="{color}">{_esc(name)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def floor_series(result: SweepResult) -> list:
    """``(parameter, minimum error)`` rows, one per grid value."""
    return sorted(result.floor().items())


def median_series(result: SweepResult) -> list:
    by: dict = {}
    for p, e, _, _ in result.rows:
        by.setdefault(p, []).append(e)
    return [(p, float(np.median(v))) for p, v in sorted(by.items())]

