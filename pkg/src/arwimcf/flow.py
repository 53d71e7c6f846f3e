"""Method-of-lines integration of the scalar inverse mean curvature flow.

The graph function evolves by ``du/dt = v / F`` with
``F = H - n v~ f'(u)``. Diagnostics are recorded at multiples of
``record_every``; each snapshot stores the suggested next step so that a run
resumed from any snapshot repeats the uninterrupted stepping sequence.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, fields
from typing import Callable, Optional, Sequence

import numpy as np

from .background import ArwParams, ScaleFactor
from .errors import ArwError, BarrierError, ConfigurationError, FlowError
from .geometry import CurvatureBundle, GraphState, SpatialDomain, curvature_bundle, umbilicity
from .integrator import DT_MIN, StepResult, dp54_step

log = logging.getLogger(__name__)

__all__ = [
    "C_CFL",
    "Mode",
    "InitialData",
    "FlowConfig",
    "Snapshot",
    "DiagnosticsRecord",
    "FlowTrajectory",
    "rhs",
    "stability_cap",
    "step",
    "diagnostics",
    "run",
]

C_CFL = 0.4


@dataclass(frozen=True)
class Mode:
    """One Fourier term ``amplitude * cos(k . x)`` (or ``sin``)."""

    amplitude: float
    k: tuple
    kind: str = "cos"

    def __post_init__(self):
        if self.kind not in ("cos", "sin"):
            raise ConfigurationError(f"mode kind must be 'cos' or 'sin', got {self.kind!r}")
        object.__setattr__(self, "k", tuple(int(x) for x in self.k))


@dataclass(frozen=True)
class InitialData:
    """``u0 = constant + sum of modes``."""

    constant: float
    modes: tuple = ()

    def field(self, domain: SpatialDomain) -> np.ndarray:
        xs = domain.coords()
        u = np.full(domain.shape, float(self.constant))
        for mode in self.modes:
            if len(mode.k) != domain.n:
                raise ConfigurationError(f"mode wavevector {mode.k} does not match n={domain.n}")
            phase = sum(kk * x for kk, x in zip(mode.k, xs))
            trig = np.cos if mode.kind == "cos" else np.sin
            u = u + mode.amplitude * trig(phase)
        return u


@dataclass
class FlowConfig:
    params: ArwParams
    sf: ScaleFactor
    domain: SpatialDomain
    u0: InitialData
    t_end: float
    u_floor: float = 1e-5
    rel_tol: float = 1e-8
    abs_tol: float = 1e-10
    record_every: float = 0.1

    def __post_init__(self):
        if self.sf.params != self.params:
            raise ConfigurationError("scale factor was built for different parameters")
        if self.domain.n != self.params.n:
            raise ConfigurationError(f"domain dimension {self.domain.n} != params.n {self.params.n}")
        if not self.t_end > 0:
            raise ConfigurationError(f"t_end must be positive, got {self.t_end}")
        if not self.record_every > 0:
            raise ConfigurationError("record_every must be positive")
        k = self.t_end / self.record_every
        if abs(k - round(k)) > 1e-9 * max(1.0, k):
            raise ConfigurationError(
                f"t_end={self.t_end} must be a whole multiple of record_every={self.record_every}"
            )
        if not (self.rel_tol > 0 and self.abs_tol > 0):
            raise ConfigurationError("tolerances must be positive")
        if not self.u_floor > 0:
            raise ConfigurationError("u_floor must be positive")

    @property
    def n_records(self) -> int:
        return int(round(self.t_end / self.record_every))

    def record_time(self, k: int) -> float:
        return k * self.record_every

    def initial_field(self) -> np.ndarray:
        u = self.u0.field(self.domain)
        if not np.all(u < 0):
            raise ConfigurationError("initial data must be strictly negative")
        if np.any(u <= self.sf.a):
            raise ConfigurationError("initial data leaves the scale-factor domain")
        return u


@dataclass
class Snapshot:
    t: float
    u: np.ndarray
    dt_next: float
    index: int


@dataclass
class DiagnosticsRecord:
    t: float
    utilde_min: float
    utilde_max: float
    grad_utilde_max: float
    normA_scaled_max: float
    F_scaled_min: float
    F_scaled_max: float
    umbilicity_ratio_max: float
    umbilicity_breve_scaled_max: float
    metric_deviation: float
    fu_residual_max: float

    @classmethod
    def columns(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    def values(self) -> list[float]:
        return [float(getattr(self, c)) for c in self.columns()]


@dataclass
class FlowTrajectory:
    config: FlowConfig
    snapshots: list = field(default_factory=list)
    diagnostics: list = field(default_factory=list)
    termination: str = "running"
    steps: int = 0
    rejected: int = 0

    def times(self) -> np.ndarray:
        return np.array([s.t for s in self.snapshots])

    def series(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.diagnostics])

    @property
    def final(self) -> Snapshot:
        return self.snapshots[-1]


def rhs(state, sf: ScaleFactor, domain: SpatialDomain, bundle: Optional[CurvatureBundle] = None):
    """``du/dt = v / F``; raises :class:`BarrierError` where ``F <= 0``."""
    if bundle is None:
        bundle = curvature_bundle(state, sf, domain)
    idx = bundle.first_barrier_violation()
    if idx is not None:
        raise BarrierError(f"mean-curvature barrier violated (F <= 0) at grid index {idx}", index=idx)
    return bundle.v / bundle.F


def stability_cap(bundle: CurvatureBundle, domain: SpatialDomain, c_cfl: float = C_CFL) -> float:
    """Diffusive bound ``c_cfl * min(F^2 / v~) * h^2``."""
    return float(c_cfl * np.min(bundle.F**2 * bundle.v) * domain.h**2)


def step(state: GraphState, dt_suggest: float, config: FlowConfig, dt_max: float = np.inf):
    """One adaptive step; returns ``(new_state, dt_used, error_estimate, dt_next)``."""
    res = _step(state.t, state.u, dt_suggest, config, dt_max)
    return GraphState(res.t, res.y, state.params), res.dt_used, res.error, res.dt_next


def _step(t, u, dt_suggest, config: FlowConfig, dt_max=np.inf) -> StepResult:
    sf, dom = config.sf, config.domain
    bundle = curvature_bundle(u, sf, dom)
    k1 = rhs(u, sf, dom, bundle)
    cap = stability_cap(bundle, dom)

    def fun(_t, y):
        return rhs(y, sf, dom)

    return dp54_step(fun, t, u, dt_suggest, config.rel_tol, config.abs_tol,
                     k1=k1, dt_max=min(dt_max, cap))


def diagnostics(t: float, u: np.ndarray, config: FlowConfig) -> DiagnosticsRecord:
    """Rescaled scalar diagnostics of the graph ``u`` at flow time ``t``."""
    p, sf, dom = config.params, config.sf, config.domain
    n, gt, g = p.n, p.gamma_tilde, p.gamma
    b = curvature_bundle(u, sf, dom)
    et = np.exp(g * t)
    ut = u * et
    grad = np.sqrt(np.maximum(1.0 - b.v**2, 0.0))  # |Du|_sigma
    ratio, breve = umbilicity(b, p)
    breve_scale = np.exp((n + p.omega - 4) * t / (2 * n))

    target = p.metric_constant * (-ut) ** (2.0 / gt)
    scale = np.exp(2.0 * t / n + 2.0 * b.f)
    dev = 0.0
    for i in range(n):
        for j in range(n):
            d = scale * b.g[i, j] - (target if i == j else 0.0)
            dev = max(dev, float(np.max(np.abs(d))))

    return DiagnosticsRecord(
        t=float(t),
        utilde_min=float(ut.min()),
        utilde_max=float(ut.max()),
        grad_utilde_max=float(grad.max() * et),
        normA_scaled_max=float(np.sqrt(np.maximum(b.normA2, 0.0)).max() * et),
        F_scaled_min=float(b.F.min() / et),
        F_scaled_max=float(b.F.max() / et),
        umbilicity_ratio_max=float(ratio.max()),
        umbilicity_breve_scaled_max=float(breve.max() * breve_scale),
        metric_deviation=dev,
        fu_residual_max=float(np.max(np.abs(b.f1 * u - 1.0 / gt))),
    )


def run(config: FlowConfig, resume: Optional[Sequence[Snapshot]] = None,
        on_record: Optional[Callable[[Snapshot, DiagnosticsRecord], None]] = None,
        max_steps: int = 10_000_000) -> FlowTrajectory:
    """Integrate from ``t = 0`` (or the last of ``resume``) to ``t_end`` or the ``u_floor`` stop.

    ``on_record`` is called for every snapshot produced by this call (not for
    the resumed prefix). Failures raise :class:`FlowError` carrying the
    trajectory recorded so far.
    """
    traj = FlowTrajectory(config)
    try:
        if resume:
            for snap in resume:
                traj.snapshots.append(snap)
                traj.diagnostics.append(diagnostics(snap.t, snap.u, config))
            last = traj.snapshots[-1]
            t, u, dt, k = last.t, last.u, last.dt_next, last.index
        else:
            u = config.initial_field()
            t, k = 0.0, 0
            # initial guess: a fraction of the stability cap
            b0 = curvature_bundle(u, config.sf, config.domain)
            rhs(u, config.sf, config.domain, b0)
            dt = min(stability_cap(b0, config.domain), config.record_every)
            _record(traj, Snapshot(t, u, dt, 0), config, on_record)
    except ArwError as exc:
        traj.termination = "error"
        raise FlowError(f"invalid initial state: {exc}", traj, exc) from exc

    K = config.n_records
    if k >= K or np.max(u) > -config.u_floor:
        traj.termination = "t_end" if k >= K else "u_floor"
        return traj

    while k < K:
        t_target = config.record_time(k + 1)
        while t < t_target:
            if traj.steps >= max_steps:
                traj.termination = "error"
                raise FlowError(f"exceeded {max_steps} steps at t={t}", traj)
            remaining = t_target - t
            try:
                res = _step(t, u, dt, config, dt_max=remaining)
            except ArwError as exc:
                traj.termination = "error"
                raise FlowError(f"flow failed at t={t}: {exc}", traj, exc) from exc
            traj.steps += 1
            traj.rejected += res.rejected
            landed = res.dt_used >= remaining
            t = t_target if landed else res.t
            u = res.y
            dt = res.dt_next
            if np.max(u) > -config.u_floor:
                if landed:
                    k += 1
                _record(traj, Snapshot(t, u, dt, k), config, on_record)
                traj.termination = "u_floor"
                log.info("u_floor reached at t=%.6g", t)
                return traj
        k += 1
        _record(traj, Snapshot(t, u, dt, k), config, on_record)
    traj.termination = "t_end"
    return traj


def _record(traj, snap, config, on_record):
    rec = diagnostics(snap.t, snap.u, config)
    traj.snapshots.append(snap)
    traj.diagnostics.append(rec)
    if on_record is not None:
        on_record(snap, rec)
