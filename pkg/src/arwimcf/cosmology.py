"""Scale factors generated by the Einstein equations with a perfect fluid.

With a static spatial metric of constant scalar curvature ``R_bar`` and a
fluid with ``p = (omega/n) rho`` and conserved ``rho0 = rho e^{(n+omega) f}``,
the Hamiltonian constraint reduces to

    n(n-1)/2 f'^2 + R_bar/2 = kappa rho0 exp(-2 gt f),

so ``f' = -sqrt(m exp(-2 gt f) - B)`` with ``m = 2 kappa rho0 / (n(n-1))`` and
``B = R_bar / (n(n-1))``. Along solutions ``f'' + gt f'^2 = -gt B`` exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.integrate import quad, solve_ivp
from scipy.interpolate import CubicHermiteSpline

from .background import ArwParams, ScaleFactor
from .errors import ConfigurationError, DomainError, RecollapseError

__all__ = [
    "FluidConfig",
    "FriedmannScaleFactor",
    "FriedmannSolution",
    "solve_friedmann",
    "density_along",
    "closed_form_warp",
]

# stop the numerical integration once exp(f) drops below this
EXP_F_STOP = 1e-6
# relative spacing of the interpolation nodes, |dtau| <= NODE_SPACING |tau|
NODE_SPACING = 2e-3


@dataclass(frozen=True)
class FluidConfig:
    n: int
    omega: float
    kappa: float = 1.0
    rho0: float = 0.5
    R_bar: float = 0.0
    tau0: float = 0.0
    f0: float = 0.0

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 1:
            raise ConfigurationError(f"n must be a positive integer, got {self.n}")
        if self.n == 1:
            raise ConfigurationError(
                "the Friedmann constraint is degenerate for n = 1 (n(n-1) = 0); use n >= 2"
            )
        if self.n + self.omega - 2 <= 0:
            raise ConfigurationError("n + omega - 2 must be positive")
        if not self.kappa > 0:
            raise ConfigurationError("kappa must be positive")
        if not self.rho0 > 0:
            raise ConfigurationError("rho0 must be positive")
        if not self.R_bar >= 0:
            raise ConfigurationError("R_bar must be nonnegative")
        if not (np.isfinite(self.tau0) and np.isfinite(self.f0)):
            raise ConfigurationError("initial condition must be finite")

    @property
    def mass(self) -> float:
        return 2.0 * self.kappa * self.rho0 / (self.n * (self.n - 1))

    @property
    def curvature_term(self) -> float:
        return self.R_bar / (self.n * (self.n - 1))

    @property
    def params(self) -> ArwParams:
        return ArwParams(self.n, self.omega, self.mass)

    @property
    def phi_limit_predicted(self) -> float:
        return -self.params.gamma * self.R_bar / (self.n - 1)

    def to_spec(self) -> dict:
        return {
            "n": self.n, "omega": self.omega, "kappa": self.kappa, "rho0": self.rho0,
            "R_bar": self.R_bar, "tau0": self.tau0, "f0": self.f0,
        }


def _slope(f, m, B, gt):
    rad = m * np.exp(-2.0 * gt * f) - B
    if np.any(rad <= 0):
        raise RecollapseError("Friedmann constraint has no real root: recollapse before the singularity")
    return -np.sqrt(rad)


class FriedmannScaleFactor(ScaleFactor):
    """Hermite interpolant of ``f``; higher derivatives from the ODE right-hand side."""

    kind = "ode_derived"

    def __init__(self, params: ArwParams, B: float, tau, f, fluid: FluidConfig | None = None):
        tau = np.asarray(tau, dtype=float)
        f = np.asarray(f, dtype=float)
        super().__init__(params, float(tau[0]), float(tau[-1]))
        self.B = float(B)
        self.nodes = tau
        self.values = f
        self.fluid = fluid
        self.spline = CubicHermiteSpline(tau, f, _slope(f, params.m, self.B, params.gamma_tilde))

    def _check(self, tau):
        tau = np.asarray(tau, dtype=float)
        if np.any((tau < self.a) | (tau > self.b)) or not np.all(np.isfinite(tau)):
            bad = tau[(tau < self.a) | (tau > self.b) | ~np.isfinite(tau)]
            first = bad.flat[0] if bad.size else tau
            raise DomainError(f"tau={first!r} outside solution domain [{self.a}, {self.b}]")
        return tau

    def _derivatives(self, tau):
        gt, m = self.params.gamma_tilde, self.params.m
        f = self.spline(tau)
        e = m * np.exp(-2.0 * gt * f)
        f1 = _slope(f, m, self.B, gt)
        f2 = -gt * e
        f3 = 2.0 * gt * gt * e * f1
        return f, f1, f2, f3

    def phi(self, tau):
        # f'' + gt f'^2 = -gt m e^{-2 gt f} + gt (m e^{-2 gt f} - B) = -gt B exactly
        tau = self._check(tau)
        return np.full_like(tau, -self.params.gamma_tilde * self.B)

    def spline_slope(self, tau):
        """Derivative of the interpolant itself (independent of the ODE formula)."""
        return self.spline(self._check(tau), 1)

    def to_spec(self) -> dict:
        spec = {"kind": self.kind}
        if self.fluid is not None:
            spec["fluid"] = self.fluid.to_spec()
        return spec


@dataclass
class FriedmannSolution:
    config: FluidConfig
    sf: FriedmannScaleFactor
    m: float
    phi_limit_predicted: float
    tau_shift: float
    constraint_residual: float
    n_nodes: int

    def to_report(self) -> dict:
        return {
            "fluid": self.config.to_spec(),
            "m": self.m,
            "phi_limit_predicted": self.phi_limit_predicted,
            "domain": list(self.sf.domain),
            "tau_shift": self.tau_shift,
            "constraint_residual": self.constraint_residual,
            "n_nodes": self.n_nodes,
        }


def closed_form_warp(tau, m: float, B: float, gt: float):
    """Exact ``exp(gt f)`` for a solution with its singularity at ``tau = 0``."""
    tau = np.asarray(tau, dtype=float)
    if B == 0:
        return -gt * np.sqrt(m) * tau
    return np.sqrt(m / B) * np.sin(-gt * np.sqrt(B) * tau)


def _constraint_residual(sf: FriedmannScaleFactor, cfg: FluidConfig) -> float:
    """Max relative residual of the constraint using the interpolant's own slope, at node midpoints."""
    mid = 0.5 * (sf.nodes[1:] + sf.nodes[:-1])
    f = sf.spline(mid)
    fp = sf.spline(mid, 1)
    gt = sf.params.gamma_tilde
    n = cfg.n
    rhs = cfg.kappa * cfg.rho0 * np.exp(-2.0 * gt * f)
    lhs = 0.5 * n * (n - 1) * fp**2 + 0.5 * cfg.R_bar
    return float(np.max(np.abs(lhs - rhs) / rhs))


def solve_friedmann(cfg: FluidConfig, rtol: float = 1e-13) -> FriedmannSolution:
    """Integrate toward the singularity and package the result as a scale factor.

    The constraint is integrated in the variable ``w = exp(gt f)``, where it
    reads ``w' = -gt sqrt(m - B w^2)`` and stays regular at the crunch (the
    equation for ``f`` itself amplifies step errors like ``1/|tau|`` there).
    Integration stops once ``exp(f) < 1e-6``; the remaining conformal time to
    the singularity is obtained by quadrature and the solution is translated
    so that the singularity sits at ``tau = 0``.
    """
    params = cfg.params
    gt, m, B = params.gamma_tilde, cfg.mass, cfg.curvature_term
    _slope(np.array([cfg.f0]), m, B, gt)  # fails early if the initial state recollapses
    w0 = np.exp(gt * cfg.f0)
    w_stop = EXP_F_STOP**gt

    def rhs(_tau, y):
        rad = m - B * y * y
        if np.any(rad <= 0):
            raise RecollapseError("Friedmann constraint has no real root: recollapse before the singularity")
        return -gt * np.sqrt(rad)

    def reached(_tau, y):
        return y[0] - w_stop

    reached.terminal = True
    reached.direction = -1

    tail, _ = quad(lambda w: 1.0 / (gt * np.sqrt(m - B * w * w)), 0.0, w_stop, epsabs=0, epsrel=1e-13)
    # |w'| >= gt sqrt(m - B w0^2) along the way, which bounds the time to the crunch
    horizon = 2.0 * w0 / (gt * np.sqrt(m - B * w0 * w0)) + 1.0

    def integrate(start, stop, y0, max_step=np.inf):
        return solve_ivp(rhs, (start, stop), [y0], method="DOP853", rtol=rtol,
                         atol=1e-3 * rtol * w_stop, dense_output=True, events=reached,
                         max_step=max_step)

    # A first pass locates the crunch. The second starts at minus that duration so
    # the crunch lands near tau = 0, where time values keep full relative
    # precision, and proceeds in halving chunks with steps proportional to |tau|:
    # a single long step would make the dense output evaluate w ~ 1e-6 as a
    # difference of O(1) numbers.
    first = integrate(cfg.tau0, cfg.tau0 + horizon, w0)
    if first.status != 1:
        raise RecollapseError(f"integration did not reach the singularity: {first.message}")
    duration = float(first.t_events[0][0]) + tail - cfg.tau0
    start = -duration
    chunks = []
    lo, w_lo = start, w0
    while True:
        hi = 0.5 * lo
        sol = integrate(lo, hi, w_lo, max_step=0.125 * abs(hi))
        if sol.status == -1:
            raise RecollapseError(f"integration failed: {sol.message}")
        chunks.append(sol)
        if sol.status == 1:
            break
        lo, w_lo = hi, float(sol.y[0, -1])
        if abs(lo) < 1e-300:
            raise RecollapseError("integration did not reach the singularity")
    tau_end = float(sol.t_events[0][0])
    tau_star = tau_end + tail

    # geometric node spacing in the shifted variable
    a, b = start - tau_star, tau_end - tau_star
    nodes = [b]
    while nodes[-1] > a:
        nodes.append(nodes[-1] * (1.0 + NODE_SPACING))
    nodes = np.array(nodes[::-1])
    nodes[0] = a
    # drop a node crowding the left endpoint
    if nodes.size > 2 and nodes[1] - nodes[0] < 0.25 * NODE_SPACING * abs(nodes[1]):
        nodes = np.delete(nodes, 1)
    t_nodes = nodes + tau_star
    w_nodes = np.empty_like(nodes)
    ends = np.array([c.t[-1] for c in chunks])
    which = np.minimum(np.searchsorted(ends, t_nodes), len(chunks) - 1)
    for k, c in enumerate(chunks):
        sel = which == k
        if np.any(sel):
            w_nodes[sel] = c.sol(t_nodes[sel])[0]
    f_nodes = np.log(w_nodes) / gt
    f_nodes[0] = cfg.f0
    sf = FriedmannScaleFactor(params, B, nodes, f_nodes, fluid=cfg)
    return FriedmannSolution(
        config=cfg, sf=sf, m=m, phi_limit_predicted=cfg.phi_limit_predicted, tau_shift=-(cfg.tau0 + duration),
        constraint_residual=_constraint_residual(sf, cfg), n_nodes=int(nodes.size),
    )


def density_along(solution, tau):
    """Perfect-fluid density and pressure ``(rho, p)`` along the solution."""
    if isinstance(solution, FriedmannSolution):
        sf, cfg = solution.sf, solution.config
    else:
        sf, cfg = solution, getattr(solution, "fluid", None)
    if cfg is None:
        raise ConfigurationError("scale factor carries no fluid description")
    f = sf(tau)
    rho = cfg.rho0 * np.exp(-(cfg.n + cfg.omega) * f)
    return rho, (cfg.omega / cfg.n) * rho
