"""Batch command line: ``surfkf generate | run | sweep``.

Exit codes: 0 success, 1 runtime or filter error, 2 usage or configuration
error. Every command writes ``manifest.json`` next to its outputs with the
seed, the precision and a hash of the effective configuration.
"""

from __future__ import annotations

import argparse
import configparser
import hashlib
import json
import re
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import evaluation as ev
from . import precision as pr
from .odom import banked_surface
from .sensors import (IMU_SCHEMA, ODOMETRY_SCHEMA, TRUTH_SCHEMA, CsvFormatError, NoiseSpec, load_csv,
                      write_csv)
from .surface import ReferenceVectors, SurfaceModel

DATA_KINDS = ("random", "static", "vibration", "odometry")


class ConfigParse(ValueError):
    """Bad configuration; ``line`` and ``key`` locate the problem when known."""

    def __init__(self, message, line=None, key=None):
        where = ", ".join(x for x in (f"line {line}" if line else "", f"key {key!r}" if key else "") if x)
        super().__init__(f"{where}: {message}" if where else message)
        self.line, self.key = line, key


# ------------------------------------------------------------ configuration


@dataclass(frozen=True)
class SweepSettings:
    parameter: str = "accel_variation"
    lo: float = 1e-10
    hi: float = 1e-1
    points: int = 10
    trials: int = 5
    filters: tuple = ("mekf_additive",)
    levels: tuple = ()


@dataclass(frozen=True)
class ExperimentConfig:
    preset: str = ""
    seed: int = 0
    precision: str = "double"
    kind: str = "random"
    duration: float = 10.0
    rate: float = 100.0
    accel_variation: float = 1e-1
    omega_scale: float = 0.5
    bank: float = 0.2
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    filter: ev.FilterConfig = field(default_factory=ev.FilterConfig)
    surface: SurfaceModel = field(default_factory=SurfaceModel)
    sweep: SweepSettings = field(default_factory=SweepSettings)

    def prec(self) -> pr.Precision:
        return parse_precision(self.precision)

    def as_dict(self) -> dict:
        def clean(v):
            if isinstance(v, np.ndarray):
                return [float(x) for x in pr.to_float(v)]
            if isinstance(v, (tuple, list)):
                return [clean(x) for x in v]
            if hasattr(v, "__dataclass_fields__"):
                return {k: clean(getattr(v, k)) for k in v.__dataclass_fields__}
            return v

        return clean(self)

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.as_dict(), sort_keys=True).encode()).hexdigest()


def parse_precision(text: str) -> pr.Precision:
    """``double``, ``extended`` (160 bits) or ``extended:BITS`` / plain ``BITS``."""
    t = str(text).strip().lower()
    if t in ("double", "53"):
        return pr.DOUBLE
    if t == "extended":
        return pr.Precision(160)
    m = re.fullmatch(r"(?:extended:)?(\d+)", t)
    if not m or int(m.group(1)) < 53:
        raise ConfigParse(f"precision must be 'double', 'extended' or a bit count >= 53, got {text!r}",
                          key="precision")
    return pr.DOUBLE if int(m.group(1)) == 53 else pr.Precision(int(m.group(1)))


PRESETS = {
    "fig1": {
        "experiment": {"preset": "fig1"},
        "filter": {"id": "mekf_additive"},
        "sweep": {"parameter": "accel_variation", "lo": "1e-10", "hi": "1e-1", "points": "10", "trials": "5",
                  "filters": "mekf_additive"},
    },
    "fig2": {
        "experiment": {"preset": "fig2"},
        "noise": {"gyro_bias": "1e-2, 0, 0"},
        "sweep": {"parameter": "update_noise", "lo": "1e-10", "hi": "1e-1", "points": "10", "trials": "1",
                  "filters": "mekf_additive", "levels": "1e-1, 1e-3, 1e-5"},
    },
}


def _key_lines(text: str) -> dict:
    lines, section = {}, None
    for i, raw in enumerate(text.splitlines(), start=1):
        s = raw.strip()
        if s.startswith("[") and s.endswith("]"):
            section = s[1:-1].strip()
        elif "=" in s and section and not s.startswith(("#", ";")):
            lines[(section, s.split("=", 1)[0].strip().lower())] = i
    return lines


def _vec(s):
    vals = [float(x) for x in s.replace(",", " ").split()]
    if len(vals) != 3:
        raise ValueError("expected three components")
    return np.array(vals)


def _floats(s):
    return tuple(float(x) for x in s.replace(",", " ").split())


def _names(s):
    return tuple(x for x in s.replace(",", " ").split())


_FIELDS = {
    "experiment": {"preset": str, "seed": int, "precision": str},
    "trajectory": {"kind": str, "duration": float, "rate": float, "accel_variation": float,
                   "omega_scale": float, "bank": float},
    "noise": {"gyro_bias": _vec, "gyro_noise_std": float, "accel_noise_std": float, "mag_noise_std": float},
    "filter": {"id": str, "q": float, "u": float, "p0": float, "gamma": float, "constraint": str,
               "capture_tol": float, "slack": float, "exact_transition": lambda s: s.strip().lower() in
               ("1", "true", "yes", "on"), "odo_q": float, "odo_form": str,
               "cond_ref": float},
    "surface": {"n": _vec, "point": _vec, "g": _vec, "b": _vec},
    "sweep": {"parameter": str, "lo": float, "hi": float, "points": int, "trials": int, "filters": _names,
              "levels": _floats},
}


def load_config(path=None, preset: str | None = None) -> ExperimentConfig:
    """Read an INI-style experiment file, layered over an optional preset."""
    cp = configparser.ConfigParser(interpolation=None)
    text = ""
    preset_name = preset
    if path is not None:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigParse(f"cannot read config: {exc}") from exc
        probe = configparser.ConfigParser(interpolation=None)
        try:
            probe.read_string(text)
        except configparser.Error as exc:
            raise ConfigParse(str(exc).replace("\n", " "), getattr(exc, "lineno", None)) from exc
        preset_name = preset or probe.get("experiment", "preset", fallback="") or None
    if preset_name:
        if preset_name not in PRESETS:
            raise ConfigParse(f"unknown preset {preset_name!r}", key="preset")
        cp.read_dict(PRESETS[preset_name])
    if text:
        cp.read_string(text)
    lines = _key_lines(text)
    values: dict = {}
    for section in cp.sections():
        if section not in _FIELDS:
            raise ConfigParse(f"unknown section [{section}]")
        for key, raw in cp.items(section):
            conv = _FIELDS[section].get(key)
            line = lines.get((section, key))
            if conv is None:
                raise ConfigParse(f"unknown key in [{section}]", line, key)
            try:
                values[(section, key)] = conv(raw)
            except (ValueError, TypeError) as exc:
                raise ConfigParse(f"bad value {raw!r}: {exc}", line, key) from None
    return _build(values, lines)


def _build(v: dict, lines: dict) -> ExperimentConfig:
    def get(section, key, default):
        return v.get((section, key), default)

    def fail(section, key, msg):
        raise ConfigParse(msg, lines.get((section, key)), key)

    base = ExperimentConfig()
    kind = get("trajectory", "kind", base.kind)
    if kind not in DATA_KINDS:
        fail("trajectory", "kind", f"kind must be one of {', '.join(DATA_KINDS)}")
    precision = get("experiment", "precision", base.precision)
    try:
        parse_precision(precision)
    except ConfigParse as exc:
        fail("experiment", "precision", str(exc))
    noise = NoiseSpec(get("noise", "gyro_bias", np.zeros(3)), get("noise", "gyro_noise_std", 0.0),
                      get("noise", "accel_noise_std", 0.0), get("noise", "mag_noise_std", 0.0),
                      get("experiment", "seed", 0))
    f = base.filter
    fc = ev.FilterConfig(get("filter", "q", f.q), get("filter", "u", f.u), get("filter", "p0", f.P0),
                         get("filter", "gamma", f.gamma), get("filter", "constraint", f.constraint),
                         get("filter", "capture_tol", f.capture_tol), get("filter", "slack", f.slack),
                         get("filter", "exact_transition", f.exact_transition), get("filter", "odo_q", f.odo_q),
                         get("filter", "odo_form", f.odo_form), get("filter", "cond_ref", f.cond_ref))
    filter_id = get("filter", "id", None)
    if filter_id is not None and filter_id not in ev.FILTER_IDS:
        fail("filter", "id", f"unknown filter id {filter_id!r}")
    try:
        refs = ReferenceVectors(get("surface", "g", ReferenceVectors().g), get("surface", "b", ReferenceVectors().b))
        surface = SurfaceModel(get("surface", "n", SurfaceModel().n), get("surface", "point", np.zeros(3)), refs)
    except ValueError as exc:
        raise ConfigParse(str(exc), key="surface") from None
    s = base.sweep
    sweep = SweepSettings(get("sweep", "parameter", s.parameter), get("sweep", "lo", s.lo), get("sweep", "hi", s.hi),
                          get("sweep", "points", s.points), get("sweep", "trials", s.trials),
                          get("sweep", "filters", (filter_id,) if filter_id else s.filters),
                          get("sweep", "levels", s.levels))
    if sweep.parameter not in ev.SWEEP_PARAMETERS:
        fail("sweep", "parameter", f"parameter must be one of {', '.join(ev.SWEEP_PARAMETERS)}")
    if sweep.points < 1 or sweep.trials < 1:
        fail("sweep", "points" if sweep.points < 1 else "trials", "empty grid")
    if not 0 < sweep.lo <= sweep.hi:
        fail("sweep", "lo", "grid bounds must satisfy 0 < lo <= hi")
    if sweep.points > 1 and sweep.lo == sweep.hi:
        fail("sweep", "hi", "empty grid: lo equals hi with more than one point")
    for fid in sweep.filters:
        if fid not in ev.FILTER_IDS:
            fail("sweep", "filters", f"unknown filter id {fid!r}")
    if not (get("trajectory", "duration", base.duration) > 0 and get("trajectory", "rate", base.rate) > 0):
        fail("trajectory", "duration", "duration and rate must be positive")
    cfg = ExperimentConfig(get("experiment", "preset", ""), get("experiment", "seed", 0), precision, kind,
                           get("trajectory", "duration", base.duration), get("trajectory", "rate", base.rate),
                           get("trajectory", "accel_variation", base.accel_variation),
                           get("trajectory", "omega_scale", base.omega_scale),
                           get("trajectory", "bank", base.bank), noise, fc, surface, sweep)
    return cfg


# ------------------------------------------------------------ commands


def make_dataset(cfg: ExperimentConfig) -> ev.Dataset:
    prec = cfg.prec()
    if cfg.kind == "static":
        return ev.static_dataset(cfg.duration, cfg.rate, prec)
    if cfg.kind == "vibration":
        return ev.vibration_dataset(cfg.duration, cfg.rate, cfg.accel_variation, seed=cfg.seed,
                                    noise=cfg.noise, precision=prec)
    if cfg.kind == "odometry":
        return ev.odometry_dataset(cfg.duration, cfg.rate, cfg.noise.accel_noise_std, cfg.seed, cfg.bank,
                                   precision=prec)
    return ev.synthetic_dataset(cfg.duration, cfg.rate, cfg.accel_variation, cfg.seed, cfg.noise,
                                cfg.surface, prec, omega_scale=cfg.omega_scale)


def _manifest(out: Path, command: str, cfg: ExperimentConfig, outputs: list, extra: dict | None = None):
    doc = {"command": command, "seed": cfg.seed, "precision": cfg.precision, "config_hash": cfg.digest(),
           "config": cfg.as_dict(), "outputs": sorted(outputs)}
    if extra:
        doc.update(extra)
    (out / "manifest.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def cmd_generate(cfg: ExperimentConfig, out: Path) -> int:
    out.mkdir(parents=True, exist_ok=True)
    data = make_dataset(cfg)
    write_csv(out / "truth.csv", data.truth, TRUTH_SCHEMA)
    write_csv(out / "imu.csv", data.imu, IMU_SCHEMA)
    outputs = ["truth.csv", "imu.csv"]
    if data.odometry is not None:
        write_csv(out / "odo.csv", data.odometry, ODOMETRY_SCHEMA)
        outputs.append("odo.csv")
    _manifest(out, "generate", cfg, outputs)
    return 0


def load_dataset(path: Path, cfg: ExperimentConfig) -> ev.Dataset:
    prec = cfg.prec()
    truth = load_csv(path / "truth.csv", TRUTH_SCHEMA, prec)
    imu = load_csv(path / "imu.csv", IMU_SCHEMA, prec)
    odo_path = path / "odo.csv"
    odo = load_csv(odo_path, ODOMETRY_SCHEMA, prec) if odo_path.exists() else None
    surface = cfg.surface
    if cfg.kind == "odometry":
        surface = banked_surface(cfg.bank, cfg.surface.refs)
    return ev.Dataset(truth, imu, surface, odo)


def cmd_run(cfg: ExperimentConfig, filter_id: str, data_path: Path, out: Path) -> int:
    data = load_dataset(data_path, cfg)
    out.mkdir(parents=True, exist_ok=True)
    report = ev.run_filter(filter_id, data, cfg.filter, out / "diagnostics.csv")
    ev.write_report(out / "report.csv", report)
    _manifest(out, "run", cfg, ["report.csv", "report_series.csv", "diagnostics.csv"], {"filter": filter_id})
    print(f"{filter_id}: max position error {report.max_position_error:.3e} m, "
          f"final orientation error {report.final_orientation_error:.3e} rad, "
          f"correction rate {report.correction_rate:.3%}")
    return 0


def _spec(cfg: ExperimentConfig, variation: float) -> ev.SweepSpec:
    s = cfg.sweep
    return ev.SweepSpec(s.parameter, s.lo, s.hi, s.points, s.trials, cfg.seed, cfg.duration, cfg.rate,
                        variation, cfg.noise, cfg.filter, cfg.prec())


def cmd_sweep(cfg: ExperimentConfig, out: Path) -> int:
    out.mkdir(parents=True, exist_ok=True)
    name = cfg.preset or "sweep"
    outputs, series, summary = [], {}, []
    levels = cfg.sweep.levels or (cfg.accel_variation,)
    floors = []
    for fid in cfg.sweep.filters:
        for level in levels:
            result = ev.sweep(_spec(cfg, level), fid)
            tag = fid if len(levels) == 1 else f"{fid}_var{level:g}"
            fname = f"{name}_{tag}.csv"
            ev.write_sweep(out / fname, result)
            outputs.append(fname)
            series[tag] = ev.median_series(result)
            summary.append((fid, repr(level), repr(result.slope), repr(result.spearman)))
            floors.append((fid, repr(level), repr(min(e for _, e, _, _ in result.rows))))
    ev.write_rows(out / f"{name}_summary.csv", ("filter", "accel_variation", "slope", "spearman"), summary)
    outputs.append(f"{name}_summary.csv")
    if cfg.sweep.levels:
        ev.write_rows(out / f"{name}_floor.csv", ("filter", "accel_variation", "min_error"), floors)
        outputs.append(f"{name}_floor.csv")
    axes = ev.Axes(title=f"max position error vs {cfg.sweep.parameter}", xlabel=cfg.sweep.parameter,
                   ylabel="max |p - p_truth| (m)")
    (out / f"{name}.svg").write_text(ev.plot(series, axes), encoding="utf-8")
    outputs.append(f"{name}.svg")
    _manifest(out, "sweep", cfg, outputs)
    return 0


# ------------------------------------------------------------ entry point


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="surfkf", description="Surface-constrained Kalman filter experiments.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config_required=False):
        sp.add_argument("--config", type=Path, required=config_required, help="INI experiment file")
        sp.add_argument("--out", type=Path, required=True, help="output directory")
        sp.add_argument("--precision", help="double, extended or a bit count")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--preset", choices=sorted(PRESETS))

    g = sub.add_parser("generate", help="write synthetic truth/imu(/odo) CSV files")
    common(g)
    r = sub.add_parser("run", help="run one filter over a data directory")
    common(r)
    r.add_argument("--filter", required=True, choices=ev.FILTER_IDS)
    r.add_argument("--data", type=Path, required=True, help="directory holding truth.csv and imu.csv")
    r.add_argument("--gamma", type=float)
    s = sub.add_parser("sweep", help="parameter sweep with tables and SVG")
    common(s)
    s.add_argument("--filter", choices=ev.FILTER_IDS, help="override the swept filter")
    s.add_argument("--gamma", type=float)
    return p


def _apply_flags(cfg: ExperimentConfig, args) -> ExperimentConfig:
    if args.precision is not None:
        parse_precision(args.precision)
        cfg = replace(cfg, precision=args.precision)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed, noise=replace(cfg.noise, seed=args.seed))
    if getattr(args, "gamma", None) is not None:
        if args.gamma < 1:
            raise ConfigParse("gamma must be at least 1", key="gamma")
        cfg = replace(cfg, filter=replace(cfg.filter, gamma=args.gamma))
    if args.command == "sweep" and args.filter:
        cfg = replace(cfg, sweep=replace(cfg.sweep, filters=(args.filter,)))
    return cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _apply_flags(load_config(args.config, args.preset), args)
    except ConfigParse as exc:
        print(f"surfkf: config error: {exc}", file=sys.stderr)
        return 2
    try:
        if args.command == "generate":
            return cmd_generate(cfg, args.out)
        if args.command == "run":
            return cmd_run(cfg, args.filter, args.data, args.out)
        return cmd_sweep(cfg, args.out)
    except ev.FilterError as exc:
        print(f"surfkf: filter error at step {exc.step}: {exc.cause}", file=sys.stderr)
        return 1
    except (OSError, CsvFormatError, ValueError) as exc:
        print(f"surfkf: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
