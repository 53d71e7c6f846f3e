"""Periodic grids and the pointwise geometry of spacelike graphs.

The ambient space is ``-dtau^2 + sigma_ij(tau, x) dx^i dx^j`` on the circle
or the flat 2-torus with ``sigma_ij = s(tau, x) delta_ij`` where
``s = 1 + beta * exp(-1/tau^2) * cos(x^1)``. A hypersurface is the graph
``tau = u(x)``; all curvature quantities are recomputed from ``u`` on every
call, with the past-directed unit normal.

Small index loops (n <= 2) are written out explicitly instead of using
``einsum`` so that every output value is produced by the same arithmetic at
every grid point; this makes the operators exactly translation-equivariant.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .background import ArwParams, ScaleFactor
from .errors import BarrierError, ConfigurationError, DomainError, SpacelikeError

__all__ = [
    "V_MIN",
    "SpatialDomain",
    "GraphState",
    "CurvatureBundle",
    "differentiate",
    "curvature_bundle",
    "umbilicity",
]

V_MIN = 1e-6


@dataclass(frozen=True)
class SpatialDomain:
    """Uniform periodic grid on ``[0, 2pi)^n`` for ``n`` in ``{1, 2}``."""

    n: int
    N: int
    stencil_order: int = 4
    beta: float = 0.0

    def __post_init__(self):
        if self.n not in (1, 2):
            raise ConfigurationError(f"spatial dimension must be 1 or 2, got {self.n}")
        if int(self.N) != self.N or self.N < 16 or self.N % 2:
            raise ConfigurationError(f"grid size N must be an even integer >= 16, got {self.N}")
        if self.stencil_order not in (2, 4):
            raise ConfigurationError(f"stencil_order must be 2 or 4, got {self.stencil_order}")
        if not abs(self.beta) < 1:
            raise ConfigurationError(f"|beta| must be < 1 for a positive definite metric, got {self.beta}")

    @property
    def h(self) -> float:
        return 2 * np.pi / self.N

    @property
    def shape(self) -> tuple:
        return (self.N,) * self.n

    def axis(self) -> np.ndarray:
        return np.arange(self.N) * self.h

    def coords(self) -> list[np.ndarray]:
        """Coordinate arrays ``x^1, ..., x^n`` broadcast to the grid shape."""
        ax = self.axis()
        return list(np.meshgrid(*([ax] * self.n), indexing="ij"))

    def sigma_factor(self, tau, x1=None):
        """Conformal factor ``s`` of ``sigma_ij = s delta_ij`` and ``ds/dtau``.

        ``tau`` is a field on the grid (or broadcastable to it); ``x1`` defaults
        to the grid's first coordinate.
        """
        tau = np.asarray(tau, dtype=float)
        if self.beta == 0.0:
            return np.ones_like(tau), np.zeros_like(tau)
        if x1 is None:
            x1 = self.coords()[0]
        with np.errstate(under="ignore"):
            bump = np.exp(-1.0 / tau**2)
        c = self.beta * np.cos(x1)
        s = 1.0 + c * bump
        s_tau = c * 2.0 * bump / tau**3
        return s, s_tau

    def sigma_gradient(self, tau) -> list:
        """Spatial partials ``d s / d x^i`` at fixed ``tau`` (analytic)."""
        tau = np.asarray(tau, dtype=float)
        zero = np.zeros_like(tau)
        if self.beta == 0.0:
            return [zero] * self.n
        with np.errstate(under="ignore"):
            bump = np.exp(-1.0 / tau**2)
        return [-self.beta * bump * np.sin(self.coords()[0])] + [zero] * (self.n - 1)

    def to_spec(self) -> dict:
        return {"n": self.n, "N": self.N, "stencil_order": self.stencil_order, "beta": self.beta}


@dataclass
class GraphState:
    t: float
    u: np.ndarray
    params: Optional[ArwParams] = None


def _d1(u, axis, h, order):
    # terms are grouped symmetrically so constant fields give exact zeros
    if order == 2:
        return (np.roll(u, -1, axis) - np.roll(u, 1, axis)) / (2 * h)
    near = np.roll(u, -1, axis) - np.roll(u, 1, axis)
    far = np.roll(u, -2, axis) - np.roll(u, 2, axis)
    return (8 * near - far) / (12 * h)


def _d2(u, axis, h, order):
    if order == 2:
        return ((np.roll(u, -1, axis) + np.roll(u, 1, axis)) - 2 * u) / h**2
    near = np.roll(u, -1, axis) + np.roll(u, 1, axis)
    far = np.roll(u, -2, axis) + np.roll(u, 2, axis)
    return ((16 * near - far) - 30 * u) / (12 * h**2)


def gradient(u, domain: SpatialDomain) -> np.ndarray:
    """First partial derivatives, shape ``(n,) + grid``."""
    return np.stack([_d1(u, a, domain.h, domain.stencil_order) for a in range(domain.n)])


def differentiate(u, domain: SpatialDomain):
    """Periodic central differences: ``Du`` of shape ``(n,)+grid``, ``D2u`` of shape ``(n,n)+grid``."""
    u = np.asarray(u, dtype=float)
    if u.shape != domain.shape:
        raise ConfigurationError(f"field shape {u.shape} does not match grid {domain.shape}")
    if not np.all(np.isfinite(u)):
        raise DomainError("non-finite values in field")
    h, order, n = domain.h, domain.stencil_order, domain.n
    Du = gradient(u, domain)
    D2u = np.empty((n, n) + u.shape)
    for a in range(n):
        D2u[a, a] = _d2(u, a, h, order)
    if n == 2:
        mixed = _d1(Du[0], 1, h, order)
        D2u[0, 1] = mixed
        D2u[1, 0] = mixed
    return Du, D2u


def _matmul(a, b):
    n = a.shape[0]
    out = np.zeros_like(a)
    for i in range(n):
        for j in range(n):
            acc = a[i, 0] * b[0, j]
            for k in range(1, n):
                acc = acc + a[i, k] * b[k, j]
            out[i, j] = acc
    return out


def _trace(a):
    acc = a[0, 0]
    for i in range(1, a.shape[0]):
        acc = acc + a[i, i]
    return acc


@dataclass(frozen=True)
class CurvatureBundle:
    """Every derived graph quantity at one instant (arrays are grid fields).

    ``h_mixed[i, j]`` is ``h^i_j = g^{ik} h_kj``; ``nu[0]`` is the time component
    of the past-directed normal and ``nu[1:]`` its spatial components.
    """

    u: np.ndarray
    Du: np.ndarray
    D2u: np.ndarray
    s: np.ndarray
    s_tau: np.ndarray
    v: np.ndarray
    v_tilde: np.ndarray
    g: np.ndarray
    g_inv: np.ndarray
    christoffel: np.ndarray
    hess: np.ndarray
    hbar: np.ndarray
    h: np.ndarray
    h_mixed: np.ndarray
    H: np.ndarray
    normA2: np.ndarray
    F: np.ndarray
    nu: np.ndarray
    f: np.ndarray
    f1: np.ndarray
    n: int

    @property
    def barrier_ok(self) -> bool:
        return bool(np.all(self.F > 0))

    def first_barrier_violation(self):
        bad = np.argwhere(~(self.F > 0))
        return tuple(int(i) for i in bad[0]) if bad.size else None

    @property
    def laplacian(self) -> np.ndarray:
        """``g^{ij} u_{;ij}``."""
        return _trace(_matmul(self.g_inv, self.hess))

    @property
    def trace_free_norm(self) -> np.ndarray:
        """``|h^i_j - (H/n) delta^i_j|`` using the invariant pairing ``tr(W0 W0)``."""
        n = self.n
        W0 = self.h_mixed.copy()
        for i in range(n):
            W0[i, i] = W0[i, i] - self.H / n
        sq = _trace(_matmul(W0, W0))
        return np.sqrt(np.maximum(sq, 0.0))


def curvature_bundle(state, sf: ScaleFactor, domain: SpatialDomain, v_min: float = V_MIN) -> CurvatureBundle:
    """Compute metric, normal, second fundamental form and ``F = H - n v~ f'(u)``.

    ``state`` may be a :class:`GraphState` or a bare field. Raises
    :class:`SpacelikeError` if ``v <= v_min`` anywhere; a nonpositive ``F`` is
    only flagged (see :attr:`CurvatureBundle.barrier_ok`).
    """
    u = state.u if isinstance(state, GraphState) else state
    u = np.asarray(u, dtype=float)
    n = domain.n
    Du, D2u = differentiate(u, domain)
    f, f1, _, _ = sf.derivatives(u)
    s, s_tau = domain.sigma_factor(u)

    grad2 = Du[0] * Du[0]
    for i in range(1, n):
        grad2 = grad2 + Du[i] * Du[i]
    v2 = 1.0 - grad2 / s
    bad = np.argwhere(~(v2 > v_min**2))
    if bad.size:
        idx = tuple(int(i) for i in bad[0])
        raise SpacelikeError(f"graph is not spacelike at grid index {idx} (v^2={v2[idx]:.3e})", index=idx)
    v = np.sqrt(v2)
    vt = 1.0 / v

    g = np.empty((n, n) + u.shape)
    for i in range(n):
        for j in range(n):
            g[i, j] = -Du[i] * Du[j]
            if i == j:
                g[i, j] = g[i, j] + s
    g_inv = np.empty_like(g)
    up = Du / s  # u^i = sigma^{ij} u_j
    for i in range(n):
        for j in range(n):
            g_inv[i, j] = up[i] * up[j] / v2
            if i == j:
                g_inv[i, j] = g_inv[i, j] + 1.0 / s

    # dg[l, i, j] = d_l g_ij
    dg = np.empty((n, n, n) + u.shape)
    for i in range(n):
        for j in range(i, n):
            d = gradient(g[i, j], domain)
            dg[:, i, j] = d
            dg[:, j, i] = d
    # lowered symbols Gamma_{l,ij} = (d_i g_jl + d_j g_il - d_l g_ij) / 2
    gam_low = np.empty((n, n, n) + u.shape)
    for l in range(n):
        for i in range(n):
            for j in range(n):
                gam_low[l, i, j] = 0.5 * (dg[i, j, l] + dg[j, i, l] - dg[l, i, j])
    gam = np.zeros_like(gam_low)
    for k in range(n):
        for i in range(n):
            for j in range(n):
                acc = g_inv[k, 0] * gam_low[0, i, j]
                for l in range(1, n):
                    acc = acc + g_inv[k, l] * gam_low[l, i, j]
                gam[k, i, j] = acc

    hess = np.empty_like(D2u)
    for i in range(n):
        for j in range(n):
            acc = D2u[i, j]
            for k in range(n):
                acc = acc - gam[k, i, j] * Du[k]
            hess[i, j] = acc

    hbar = np.zeros_like(g)
    for i in range(n):
        hbar[i, i] = -0.5 * s_tau
    h = np.empty_like(g)
    for i in range(n):
        for j in range(n):
            h[i, j] = v * (-hess[i, j] + hbar[i, j])

    W = _matmul(g_inv, h)
    H = _trace(W)
    normA2 = _trace(_matmul(W, W))
    F = H - n * vt * f1

    nu = np.empty((n + 1,) + u.shape)
    nu[0] = -vt
    for i in range(n):
        nu[i + 1] = -vt * up[i]

    return CurvatureBundle(
        u=u, Du=Du, D2u=D2u, s=s, s_tau=s_tau, v=v, v_tilde=vt, g=g, g_inv=g_inv,
        christoffel=gam, hess=hess, hbar=hbar, h=h, h_mixed=W, H=H, normA2=normA2,
        F=F, nu=nu, f=f, f1=f1, n=n,
    )


def umbilicity(bundle: CurvatureBundle, params: Optional[ArwParams] = None):
    """Return ``(|h0|/F, exp(-f(u)) |h0|)`` where ``h0`` is the trace-free part of ``h^i_j``.

    The first field is frame independent; the second is the physical-frame
    absolute value before any time rescaling.
    """
    idx = bundle.first_barrier_violation()
    if idx is not None:
        raise BarrierError(f"F <= 0 at grid index {idx}", index=idx)
    tf = bundle.trace_free_norm
    return tf / bundle.F, np.exp(-bundle.f) * tf
