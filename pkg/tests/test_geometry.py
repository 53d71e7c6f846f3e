import dataclasses

import numpy as np
import pytest

from arwimcf.background import ArwParams, make_canonical
from arwimcf.errors import BarrierError, ConfigurationError, SpacelikeError
from arwimcf.geometry import SpatialDomain, curvature_bundle, differentiate, gradient, umbilicity

P2 = ArwParams(2, 2.0, 1.0)
P1 = ArwParams(1, 3.0, 1.0)
SF2 = make_canonical(P2)
SF1 = make_canonical(P1)


def _field_2d(dom, c=-0.5):
    x, y = dom.coords()
    return c + 0.05 * np.cos(x) + 0.03 * np.sin(x + 2 * y) + 0.02 * np.cos(3 * y)


def _h_closed_n1(x):
    u1 = 0.1 * np.cos(x)
    u2 = -0.1 * np.sin(x)
    return -u2 * (1 - u1**2) ** -1.5


@pytest.mark.parametrize("order", [2, 4])
def test_n1_mean_curvature_convergence_order(order):
    errs = []
    Ns = [32, 64, 128, 256]
    for N in Ns:
        dom = SpatialDomain(1, N, stencil_order=order)
        x = dom.axis()
        b = curvature_bundle(-0.6 + 0.1 * np.sin(x), SF1, dom)
        errs.append(np.max(np.abs(b.H - _h_closed_n1(x))))
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(np.abs(orders - order) <= 0.2 * order), orders


def test_homogeneous_bundle_is_exact():
    dom = SpatialDomain(2, 16)
    b = curvature_bundle(np.full(dom.shape, -0.5), SF2, dom)
    assert np.all(b.H == 0.0) and np.all(b.normA2 == 0.0) and np.all(b.v == 1.0)
    np.testing.assert_allclose(b.F, -2 * SF2.derivatives(-0.5)[1], rtol=1e-15)
    assert np.all(b.trace_free_norm == 0.0)


def test_translation_equivariance_is_bitwise():
    dom = SpatialDomain(2, 32)
    u = _field_2d(dom)
    b0 = curvature_bundle(u, SF2, dom)
    for axis in (0, 1):
        b1 = curvature_bundle(np.roll(u, 1, axis), SF2, dom)
        for f in ("H", "F", "v", "normA2"):
            assert np.array_equal(np.roll(getattr(b0, f), 1, axis), getattr(b1, f)), f


def test_reflection_symmetry():
    dom = SpatialDomain(2, 32)
    x, y = dom.coords()
    reflect = lambda a: np.roll(a[::-1, ::-1], 1, axis=(0, 1))  # noqa: E731  x -> -x on the grid
    u = -0.5 + 0.05 * np.cos(x) + 0.02 * np.cos(x + y) + 0.01 * np.cos(2 * y)
    u = 0.5 * (u + reflect(u))  # remove last-bit asymmetry of the cosines
    b = curvature_bundle(u, SF2, dom)
    assert np.array_equal(reflect(u), u)
    for f in ("H", "F", "v", "normA2"):
        a = getattr(b, f)
        assert np.max(np.abs(reflect(a) - a)) <= 1e-12 * (1 + np.max(np.abs(a))), f


@pytest.mark.parametrize("beta", [0.0, 0.3])
def test_trace_consistency_and_v_bound(beta):
    dom = SpatialDomain(2, 32, beta=beta)
    u = _field_2d(dom)
    b = curvature_bundle(u, SF2, dom)
    tr = sum(b.g_inv[i, j] * b.h[i, j] for i in range(2) for j in range(2))
    assert np.all(np.abs(b.H - tr) <= 1e-10 * (1 + np.abs(b.H)))
    assert np.all(b.v <= 1.0)
    # the inverse metric is the inverse
    for i in range(2):
        for j in range(2):
            prod = sum(b.g_inv[i, k] * b.g[k, j] for k in range(2))
            np.testing.assert_allclose(prod, float(i == j), atol=1e-13)
    # normal is a unit timelike vector orthogonal to the graph
    s = b.s
    norm = -b.nu[0] ** 2 + s * (b.nu[1] ** 2 + b.nu[2] ** 2)
    np.testing.assert_allclose(norm, -1.0, atol=1e-13)
    for k in range(2):
        np.testing.assert_allclose(-b.nu[0] * b.Du[k] + s * b.nu[1 + k], 0.0, atol=1e-14)


def test_v_equals_one_only_where_gradient_vanishes():
    dom = SpatialDomain(1, 64)
    x = dom.axis()
    b = curvature_bundle(-0.5 + 0.05 * np.cos(x), SF1, dom)
    flat = b.Du[0] == 0.0
    assert np.all(b.v[flat] == 1.0) and np.all(b.v[~flat] < 1.0)


def test_background_second_fundamental_form_matches_sigma_derivative():
    dom = SpatialDomain(2, 16, beta=0.4)
    u = _field_2d(dom, c=-0.7)
    b = curvature_bundle(u, SF2, dom)
    eps = 1e-6
    sp, _ = dom.sigma_factor(u + eps)
    sm, _ = dom.sigma_factor(u - eps)
    ref = -0.5 * (sp - sm) / (2 * eps)
    for i in range(2):
        np.testing.assert_allclose(b.hbar[i, i], ref, rtol=1e-7, atol=1e-12)
    np.testing.assert_array_equal(b.hbar[0, 1], 0.0)


def test_sigma_gradient_matches_finite_difference():
    dom = SpatialDomain(2, 256, beta=0.4)
    tau = np.full(dom.shape, -0.7)
    ds = dom.sigma_gradient(tau)
    s, _ = dom.sigma_factor(tau)
    np.testing.assert_allclose(ds[0], gradient(s, dom)[0], atol=1e-9)
    assert np.all(ds[1] == 0.0)


def test_umbilicity_n1_is_zero_and_n2_positive():
    dom1 = SpatialDomain(1, 64)
    b1 = curvature_bundle(-0.5 + 0.05 * np.cos(dom1.axis()), SF1, dom1)
    ratio, breve = umbilicity(b1)
    assert np.all(ratio == 0.0) and np.all(breve == 0.0)
    dom2 = SpatialDomain(2, 32)
    ratio, breve = umbilicity(curvature_bundle(_field_2d(dom2), SF2, dom2))
    assert np.all(ratio >= 0) and ratio.max() > 0 and breve.max() > 0


def test_barrier_violation_is_located():
    dom = SpatialDomain(1, 64)
    x = dom.axis()
    u = -0.5 + 0.04 * np.cos(8 * x)  # curvature overwhelms the -n v f' term in the troughs
    b = curvature_bundle(u, SF1, dom)
    assert not b.barrier_ok
    with pytest.raises(BarrierError) as info:
        umbilicity(b)
    assert info.value.index == b.first_barrier_violation()


def test_spacelike_violation_is_located():
    dom = SpatialDomain(1, 64)
    u = -0.5 + 0.3 * np.sin(4 * dom.axis())
    with pytest.raises(SpacelikeError) as info:
        curvature_bundle(u, SF1, dom)
    assert info.value.index is not None


@pytest.mark.parametrize("kw", [dict(n=3, N=16), dict(n=2, N=15), dict(n=2, N=8), dict(n=2, N=16, stencil_order=6),
                                dict(n=2, N=16, beta=1.0)])
def test_domain_validation(kw):
    with pytest.raises(ConfigurationError):
        SpatialDomain(**kw)


def test_differentiate_shape_check():
    with pytest.raises(ConfigurationError):
        differentiate(np.zeros(10), SpatialDomain(1, 16))


def test_bundle_is_immutable():
    dom = SpatialDomain(1, 16)
    b = curvature_bundle(np.full(16, -0.5), SF1, dom)
    with pytest.raises(dataclasses.FrozenInstanceError):
        b.H = None
