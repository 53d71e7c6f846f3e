"""Run configuration, snapshot files, CSV/JSON output and SVG plots.

Configuration files are TOML. Every table maps onto a dataclass; unknown
keys and wrongly typed values are rejected with the dotted field path and,
when it can be located, the line of the offending key.

Snapshot files are an append-only sequence of self-describing records::

    magic b"ARWSNAP1" | u32 version, n, N0, N1 | f64 t, dt_next, omega, m |
    u64 record index | N0*N1 little-endian f64 values (row-major)
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
import struct
import sys
import warnings
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional

import numpy as np
import tomli_w

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover - exercised on 3.10
    import tomli as tomllib

from .background import ArwParams, make_canonical, make_perturbed
from .cosmology import FluidConfig, FriedmannScaleFactor, solve_friedmann
from .errors import ConfigurationError
from .flow import DiagnosticsRecord, FlowConfig, InitialData, Mode, Snapshot
from .geometry import SpatialDomain

log = logging.getLogger(__name__)

__all__ = [
    "SCHEMA_VERSION",
    "RunConfig",
    "parse_config",
    "load_config",
    "dump_config",
    "config_hash",
    "build_scale_factor",
    "build_flow_config",
    "export_scale_factor",
    "load_scale_factor",
    "SnapshotWriter",
    "write_snapshot",
    "read_snapshots",
    "DiagnosticsWriter",
    "read_diagnostics",
    "write_series_csv",
    "write_field_csv",
    "to_jsonable",
    "write_report",
    "read_report",
    "emit_plots",
]

SCHEMA_VERSION = 1
SNAP_MAGIC = b"ARWSNAP1"
SNAP_VERSION = 1
_HEAD = struct.Struct("<8sIIII4dQ")


# --------------------------------------------------------------------------- config


@dataclass
class ParamsSection:
    n: int = 2
    omega: float = 2.0
    m: float = 1.0


@dataclass
class FluidSection:
    kappa: float = 1.0
    rho0: float = 0.5
    R_bar: float = 0.0
    tau0: float = 0.0
    f0: float = 0.0


@dataclass
class ScaleFactorSection:
    kind: str = "canonical"  # canonical | perturbed | ode_derived
    a: float = -1.0
    amplitude: float = 0.0
    path: str = ""  # exported ode_derived solution (alternative to [scale_factor.fluid])
    fluid: Optional[FluidSection] = None


@dataclass
class DomainSection:
    N: int = 64
    stencil_order: int = 4
    beta: float = 0.0


@dataclass
class ModeSection:
    amplitude: float
    k: list
    kind: str = "cos"


@dataclass
class InitialSection:
    constant: float = -0.5
    modes: list = field(default_factory=list)  # of ModeSection


@dataclass
class FlowSection:
    t_end: float = 12.0
    u_floor: float = 1e-5
    rel_tol: float = 1e-8
    abs_tol: float = 1e-10
    record_every: float = 0.1


@dataclass
class AnalysisSection:
    window: list = field(default_factory=list)  # [t_lo, t_hi]; empty = default
    claims: list = field(default_factory=lambda: ["all"])


@dataclass
class TransitionSection:
    enabled: bool = False
    seeds: list = field(default_factory=list)  # [[x1, x2], ...]; empty = default


@dataclass
class OutputSection:
    dir: str = "out"


@dataclass
class RunConfig:
    schema_version: int = SCHEMA_VERSION
    seed: int = 0  # reserved; no computation is random
    params: ParamsSection = field(default_factory=ParamsSection)
    scale_factor: ScaleFactorSection = field(default_factory=ScaleFactorSection)
    domain: DomainSection = field(default_factory=DomainSection)
    initial: InitialSection = field(default_factory=InitialSection)
    flow: FlowSection = field(default_factory=FlowSection)
    analysis: AnalysisSection = field(default_factory=AnalysisSection)
    transition: TransitionSection = field(default_factory=TransitionSection)
    output: OutputSection = field(default_factory=OutputSection)


_NESTED = {
    (RunConfig, "params"): ParamsSection,
    (RunConfig, "scale_factor"): ScaleFactorSection,
    (RunConfig, "domain"): DomainSection,
    (RunConfig, "initial"): InitialSection,
    (RunConfig, "flow"): FlowSection,
    (RunConfig, "analysis"): AnalysisSection,
    (RunConfig, "transition"): TransitionSection,
    (RunConfig, "output"): OutputSection,
    (ScaleFactorSection, "fluid"): FluidSection,
}
_LISTS_OF = {(InitialSection, "modes"): ModeSection}


def _locate(text: Optional[str], path: str) -> str:
    """Best-effort ``(line N)`` of the key (or table) named by a dotted path."""
    if not text:
        return ""
    parts = [p for p in path.replace("]", "").replace("[", ".").split(".") if not p.isdigit()]
    full, table, key = ".".join(parts), ".".join(parts[:-1]), parts[-1]
    current = ""
    for i, line in enumerate(text.splitlines(), 1):
        s = line.strip()
        if s.startswith("["):
            current = s.strip("[]").strip()
            if current == full:
                return f" (line {i})"
            continue
        if current == table and s.split("=")[0].strip() == key:
            return f" (line {i})"
    return ""


def _fail(msg, path, text):
    raise ConfigurationError(f"config field '{path}': {msg}{_locate(text, path)}")


def _coerce(value, type_name, path, text):
    if type_name == "float":
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            _fail(f"expected a number, got {type(value).__name__}", path, text)
        return float(value)
    if type_name == "int":
        if isinstance(value, bool) or not isinstance(value, int):
            _fail(f"expected an integer, got {type(value).__name__}", path, text)
        return value
    if type_name == "bool":
        if not isinstance(value, bool):
            _fail(f"expected true/false, got {type(value).__name__}", path, text)
        return value
    if type_name == "str":
        if not isinstance(value, str):
            _fail(f"expected a string, got {type(value).__name__}", path, text)
        return value
    if type_name == "list":
        if not isinstance(value, list):
            _fail(f"expected an array, got {type(value).__name__}", path, text)
        return value
    return value


def _build(cls, data, path, text):
    if not isinstance(data, dict):
        _fail(f"expected a table, got {type(data).__name__}", path or "<root>", text)
    known = {f.name: f for f in fields(cls)}
    unknown = sorted(set(data) - set(known))
    if unknown:
        where = f"{path}.{unknown[0]}" if path else unknown[0]
        _fail("unknown key", where, text)
    kwargs = {}
    for name, f in known.items():
        sub = f"{path}.{name}" if path else name
        if name not in data:
            continue
        value = data[name]
        nested = _NESTED.get((cls, name))
        if nested is not None:
            kwargs[name] = _build(nested, value, sub, text)
            continue
        type_name = f.type.split("[")[0].replace("Optional", "").strip()
        value = _coerce(value, type_name, sub, text)
        item_cls = _LISTS_OF.get((cls, name))
        if item_cls is not None:
            value = [_build(item_cls, v, f"{sub}[{i}]", text) for i, v in enumerate(value)]
        kwargs[name] = value
    try:
        return cls(**kwargs)
    except TypeError as exc:
        _fail(f"missing required key ({exc})", path or "<root>", text)


def _validate(cfg: RunConfig, text):
    if cfg.schema_version != SCHEMA_VERSION:
        _fail(f"unsupported schema version {cfg.schema_version}", "schema_version", text)
    if cfg.scale_factor.kind not in ("canonical", "perturbed", "ode_derived"):
        _fail(f"unknown kind {cfg.scale_factor.kind!r}", "scale_factor.kind", text)
    if cfg.scale_factor.kind == "ode_derived" and cfg.scale_factor.fluid is None and not cfg.scale_factor.path:
        _fail("ode_derived needs a [scale_factor.fluid] table or a path", "scale_factor.kind", text)
    for i, m in enumerate(cfg.initial.modes):
        _coerce(m.amplitude, "float", f"initial.modes[{i}].amplitude", text)
        if not all(isinstance(k, int) and not isinstance(k, bool) for k in m.k):
            _fail("wavevector entries must be integers", f"initial.modes[{i}].k", text)
        if len(m.k) != cfg.params.n:
            _fail(f"wavevector length must equal n={cfg.params.n}", f"initial.modes[{i}].k", text)
    if cfg.analysis.window and len(cfg.analysis.window) != 2:
        _fail("window must be [t_lo, t_hi]", "analysis.window", text)
    for i, s in enumerate(cfg.transition.seeds):
        if not isinstance(s, list) or len(s) not in (1, 2):
            _fail("seed must be [x1] or [x1, x2]", f"transition.seeds[{i}]", text)


def parse_config(text: str) -> RunConfig:
    """Parse TOML text into a :class:`RunConfig` (strict keys and types)."""
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigurationError(f"config is not valid TOML: {exc}") from exc
    cfg = _build(RunConfig, data, "", text)
    _validate(cfg, text)
    return cfg


def load_config(path) -> RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text)


def _strip_none(d):
    if isinstance(d, dict):
        return {k: _strip_none(v) for k, v in d.items() if v is not None}
    if isinstance(d, list):
        return [_strip_none(v) for v in d]
    return d


def dump_config(cfg: RunConfig) -> str:
    """Serialize to TOML; ``parse_config(dump_config(c)) == c``."""
    return tomli_w.dumps(_strip_none(asdict(cfg)))


def config_hash(cfg: RunConfig) -> str:
    """Git blob SHA-1 of the canonical TOML serialization."""
    data = dump_config(cfg).encode()
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


def build_scale_factor(cfg: RunConfig, base_dir=None):
    """Scale factor described by the config (solving the Friedmann ODE if requested)."""
    sfc = cfg.scale_factor
    p = cfg.params
    if sfc.kind == "ode_derived":
        if sfc.path:
            path = Path(sfc.path)
            if base_dir is not None and not path.is_absolute():
                path = Path(base_dir) / path
            sf = load_scale_factor(path)
        else:
            fl = sfc.fluid
            sf = solve_friedmann(FluidConfig(p.n, p.omega, fl.kappa, fl.rho0, fl.R_bar, fl.tau0, fl.f0)).sf
        if abs(sf.params.m - p.m) > 1e-12 * max(1.0, p.m) or sf.params.n != p.n or sf.params.omega != p.omega:
            raise ConfigurationError(
                f"config field 'params': ode_derived scale factor implies (n, omega, m) = "
                f"({sf.params.n}, {sf.params.omega}, {sf.params.m})"
            )
        return sf
    params = ArwParams(p.n, p.omega, p.m)
    base = make_canonical(params, sfc.a)
    if sfc.kind == "perturbed":
        return make_perturbed(base, sfc.amplitude)
    return base


def build_flow_config(cfg: RunConfig, sf=None, base_dir=None) -> FlowConfig:
    sf = sf if sf is not None else build_scale_factor(cfg, base_dir)
    p = cfg.params
    modes = tuple(Mode(m.amplitude, tuple(m.k), m.kind) for m in cfg.initial.modes)
    f = cfg.flow
    return FlowConfig(
        params=sf.params, sf=sf,
        domain=SpatialDomain(p.n, cfg.domain.N, cfg.domain.stencil_order, cfg.domain.beta),
        u0=InitialData(cfg.initial.constant, modes), t_end=f.t_end, u_floor=f.u_floor,
        rel_tol=f.rel_tol, abs_tol=f.abs_tol, record_every=f.record_every,
    )


# --------------------------------------------------------------------------- scale factors


def export_scale_factor(sf: FriedmannScaleFactor, path) -> None:
    """Write an ODE-derived scale factor as a JSON file (nodes are exact floats)."""
    spec = {
        "kind": sf.kind,
        "params": {"n": sf.params.n, "omega": sf.params.omega, "m": sf.params.m},
        "B": sf.B,
        "fluid": sf.fluid.to_spec() if sf.fluid is not None else None,
        "tau": [float(x) for x in sf.nodes],
        "f": [float(x) for x in sf.values],
    }
    Path(path).write_text(json.dumps(spec))


def load_scale_factor(path) -> FriedmannScaleFactor:
    try:
        spec = json.loads(Path(path).read_text())
    except (OSError, ValueError) as exc:
        raise ConfigurationError(f"cannot load scale-factor file {path}: {exc}") from exc
    if spec.get("kind") != "ode_derived":
        raise ConfigurationError(f"{path}: unsupported scale-factor kind {spec.get('kind')!r}")
    p = spec["params"]
    fluid = FluidConfig(**spec["fluid"]) if spec.get("fluid") else None
    return FriedmannScaleFactor(ArwParams(p["n"], p["omega"], p["m"]), spec["B"],
                                np.array(spec["tau"]), np.array(spec["f"]), fluid)


# --------------------------------------------------------------------------- snapshots


def _snapshot_bytes(snap: Snapshot, params: ArwParams) -> bytes:
    u = np.ascontiguousarray(snap.u, dtype="<f8")
    N0 = u.shape[0]
    N1 = u.shape[1] if u.ndim == 2 else 1
    head = _HEAD.pack(SNAP_MAGIC, SNAP_VERSION, u.ndim, N0, N1, snap.t, snap.dt_next,
                      params.omega, params.m, snap.index)
    return head + u.tobytes(order="C")


def write_snapshot(fh, snap: Snapshot, params: ArwParams) -> None:
    """Append one record (a single ``write`` call) and flush."""
    fh.write(_snapshot_bytes(snap, params))
    fh.flush()


class SnapshotWriter:
    """Append-only snapshot stream; usable as the flow's ``on_record`` hook."""

    def __init__(self, path, params: ArwParams, mode: str = "wb"):
        self.path = Path(path)
        self.params = params
        self._fh = open(self.path, mode)

    def write(self, snap: Snapshot) -> None:
        write_snapshot(self._fh, snap, self.params)

    def close(self):
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def read_snapshots(path, params: Optional[ArwParams] = None, shape: Optional[tuple] = None):
    """Read every complete record. A truncated trailing record is dropped with a warning."""
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise ConfigurationError(f"cannot read snapshots {path}: {exc}") from exc
    out, pos = [], 0
    while pos < len(data):
        if len(data) - pos < _HEAD.size:
            warnings.warn(f"{path}: ignoring truncated trailing record at byte {pos}")
            break
        magic, ver, n, N0, N1, t, dt_next, omega, m, index = _HEAD.unpack_from(data, pos)
        if magic != SNAP_MAGIC:
            raise ConfigurationError(f"{path}: bad snapshot magic at byte {pos}")
        if ver != SNAP_VERSION:
            raise ConfigurationError(f"{path}: unsupported snapshot version {ver}")
        count = N0 * N1
        end = pos + _HEAD.size + 8 * count
        if end > len(data):
            warnings.warn(f"{path}: ignoring truncated trailing record at byte {pos}")
            break
        u = np.frombuffer(data, dtype="<f8", count=count, offset=pos + _HEAD.size).astype(float)
        u = u.reshape((N0, N1) if n == 2 else (N0,))
        if params is not None and (params.omega != omega or params.m != m or params.n != n):
            raise ConfigurationError(f"{path}: snapshot parameters (n={n}, omega={omega}, m={m}) "
                                     f"do not match the configuration")
        if shape is not None and tuple(shape) != u.shape:
            raise ConfigurationError(f"{path}: snapshot grid {u.shape} does not match {tuple(shape)}")
        out.append(Snapshot(t, u, dt_next, int(index)))
        pos = end
    return out


# --------------------------------------------------------------------------- CSV


class DiagnosticsWriter:
    """Diagnostics CSV with one header row; floats written with ``repr`` (exact)."""

    def __init__(self, path):
        self._fh = open(path, "w", newline="")
        self._w = csv.writer(self._fh)
        self._w.writerow(DiagnosticsRecord.columns())

    def write(self, rec: DiagnosticsRecord):
        self._w.writerow([repr(v) for v in rec.values()])
        self._fh.flush()

    def close(self):
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def read_diagnostics(path) -> dict:
    """Column name -> float array."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        return {}
    header, body = rows[0], rows[1:]
    return {name: np.array([float(r[i]) for r in body]) for i, name in enumerate(header)}


def write_series_csv(series, path) -> None:
    """Transition series as ``s, marker, component, value`` rows."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["s", "marker", "component", "value"])
        for s, mk, name, val in series.rows():
            w.writerow([repr(s), mk, name, repr(val)])


def write_field_csv(values, domain: SpatialDomain, path) -> None:
    """One row per grid point: coordinates then the value."""
    xs = domain.coords()
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"x{i + 1}" for i in range(domain.n)] + ["value"])
        for idx in np.ndindex(*domain.shape):
            w.writerow([repr(float(x[idx])) for x in xs] + [repr(float(values[idx]))])


# --------------------------------------------------------------------------- report


def to_jsonable(obj):
    """Convert numpy scalars/arrays and non-finite floats into strict-JSON values."""
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if math.isfinite(x) else repr(x)
    if obj is None or isinstance(obj, str):
        return obj
    if hasattr(obj, "to_dict"):
        return to_jsonable(obj.to_dict())
    return repr(obj)


def write_report(report: dict, path) -> None:
    Path(path).write_text(json.dumps(to_jsonable(report), indent=2) + "\n")


def read_report(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except (OSError, ValueError) as exc:
        raise ConfigurationError(f"cannot read report {path}: {exc}") from exc


# --------------------------------------------------------------------------- plots

_W, _H, _M = 640, 400, 60


def _svg_plot(title, t, y, log_scale, guide=None):
    """Pure-text SVG line plot; ``guide = (rate, label)`` draws ``y0 exp(-rate (t - t0))``."""
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    yy = np.log10(y) if log_scale else y
    lines = [yy]
    if guide is not None:
        rate, _ = guide
        g = y[-1] * np.exp(-rate * (t - t[-1]))
        lines.append(np.log10(g) if log_scale else g)
    lo = min(float(np.min(v)) for v in lines)
    hi = max(float(np.max(v)) for v in lines)
    # a range at roundoff level relative to the values is drawn as a flat line
    if hi - lo <= 1e-6 * max(1.0, abs(hi), abs(lo)):
        mid = 0.5 * (hi + lo)
        pad = 0.5 * max(1.0, abs(mid))
        lo, hi = mid - pad, mid + pad
    t0, t1 = float(t[0]), float(t[-1]) if t[-1] > t[0] else float(t[0]) + 1.0

    def px(tv, yv):
        X = _M + (tv - t0) / (t1 - t0) * (_W - 2 * _M)
        Y = _H - _M - (yv - lo) / (hi - lo) * (_H - 2 * _M)
        return X, Y

    def path(v):
        return " ".join(f"{x:.2f},{yv:.2f}" for x, yv in (px(a, b) for a, b in zip(t, v)))

    ylab = "log10 value" if log_scale else "value"
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" viewBox="0 0 {_W} {_H}">',
        f'<rect width="{_W}" height="{_H}" fill="white"/>',
        f'<text x="{_W / 2}" y="24" text-anchor="middle" font-family="sans-serif" font-size="14">{title}</text>',
        f'<line x1="{_M}" y1="{_H - _M}" x2="{_W - _M}" y2="{_H - _M}" stroke="black"/>',
        f'<line x1="{_M}" y1="{_M}" x2="{_M}" y2="{_H - _M}" stroke="black"/>',
        f'<text x="{_W / 2}" y="{_H - 20}" text-anchor="middle" font-family="sans-serif" font-size="12">t</text>',
        f'<text x="16" y="{_H / 2}" font-family="sans-serif" font-size="12" '
        f'transform="rotate(-90 16 {_H / 2})" text-anchor="middle">{ylab}</text>',
    ]
    for frac in (0.0, 0.5, 1.0):
        tv, yv = t0 + frac * (t1 - t0), lo + frac * (hi - lo)
        x, _ = px(tv, lo)
        _, yp = px(t0, yv)
        out.append(f'<text x="{x:.1f}" y="{_H - _M + 16}" text-anchor="middle" font-family="sans-serif" '
                   f'font-size="10">{tv:.3g}</text>')
        out.append(f'<text x="{_M - 4}" y="{yp:.1f}" text-anchor="end" font-family="sans-serif" '
                   f'font-size="10">{yv:.4g}</text>')
    out.append(f'<polyline fill="none" stroke="#1f77b4" stroke-width="1.5" points="{path(lines[0])}"/>')
    if guide is not None:
        out.append(f'<polyline fill="none" stroke="#d62728" stroke-dasharray="6,4" points="{path(lines[1])}"/>')
        out.append(f'<text x="{_W - _M}" y="{_M - 8}" text-anchor="end" font-family="sans-serif" '
                   f'font-size="11" fill="#d62728">{guide[1]}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _predicted_rates(report) -> dict:
    p = (report or {}).get("config", {}).get("params", {})
    n, omega = p.get("n"), p.get("omega")
    if n is None or omega is None:
        return {}
    gamma = (n + omega - 2) / (2 * n)
    rates = {"grad_utilde_max": ("grad_utilde_max", gamma),
             "umbilicity_ratio_max": ("umbilicity_ratio_max", 2 * gamma),
             "fu_residual_max": ("fu_residual_max", 2 * gamma)}
    if n + omega - 4 > 0:
        rates["umbilicity_breve_scaled_max"] = ("umbilicity_breve_scaled_max", (n + omega - 4) / (2 * n))
    return rates


# decaying diagnostics are drawn on a log axis, the rest on a linear one
_LOG_SERIES = ("grad_utilde_max", "umbilicity_ratio_max", "umbilicity_breve_scaled_max",
               "metric_deviation", "fu_residual_max")
_LINEAR_SERIES = ("utilde_min", "utilde_max", "normA_scaled_max", "F_scaled_min", "F_scaled_max")


def emit_plots(report: Optional[dict], series_dir, out_dir=None) -> list:
    """Write one SVG per diagnostic found in ``series_dir/diagnostics.csv``.

    Decaying series use a log axis with the predicted-rate guide line; the
    gradient plot shows ``max |Du| = exp(-gamma t) max |D u~|`` (rate
    ``gamma``) and the breve plot the unscaled breve-frame umbilicity. Missing or non-positive log series are skipped with a
    warning.
    """
    series_dir = Path(series_dir)
    out_dir = Path(out_dir) if out_dir is not None else series_dir / "plots"
    path = series_dir / "diagnostics.csv"
    if not path.exists():
        warnings.warn(f"no diagnostics at {path}; no plots written")
        return []
    data = read_diagnostics(path)
    if not data or data["t"].size == 0:
        warnings.warn(f"{path} has no records; no plots written")
        return []
    out_dir.mkdir(parents=True, exist_ok=True)
    t = data["t"]
    rates = _predicted_rates(report)
    gamma = None
    p = (report or {}).get("config", {}).get("params", {})
    if "n" in p and "omega" in p:
        gamma = (p["n"] + p["omega"] - 2) / (2 * p["n"])
    written = []
    for name in _LINEAR_SERIES + _LOG_SERIES:
        if name not in data:
            warnings.warn(f"diagnostic {name!r} missing; skipped")
            continue
        y = data[name]
        log_scale = name in _LOG_SERIES
        title, guide = name, None
        if name in ("grad_utilde_max", "umbilicity_breve_scaled_max"):
            if gamma is None:
                warnings.warn(f"no parameters in report; {name} plot skipped")
                continue
            if name == "grad_utilde_max":
                y = y * np.exp(-gamma * t)
                title = "max |Du| = exp(-gamma t) max |D u~|"
            else:
                y = y * np.exp(-(p["n"] + p["omega"] - 4) / (2 * p["n"]) * t)
                title = "max breve-frame umbilicity"
        if log_scale:
            if not np.all(y > 0):
                warnings.warn(f"diagnostic {name!r} is not strictly positive; log plot skipped")
                continue
            if name in rates:
                guide = (rates[name][1], f"predicted rate {rates[name][1]:.4g}")
        target = out_dir / f"{name}.svg"
        target.write_text(_svg_plot(title, t, y, log_scale, guide))
        written.append(target)
    return written
