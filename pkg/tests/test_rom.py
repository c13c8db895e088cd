import math

import numpy as np
import pytest
import scipy.integrate
import scipy.linalg
from hypothesis import given, strategies as st

from conftest import rk4
from romstack import rom
from romstack.rom import GaitTiming, LipParams, RomState

finite = st.floats(-1.0, 1.0, allow_nan=False)
z0s = st.floats(0.3, 1.5)
dts = st.floats(0.0, 2.0)


def lip_rhs(params):
    a = rom.a_ss(params)
    return lambda x: a @ x


def test_lip_params_lambda_and_validation():
    p = LipParams(0.8, 9.81)
    assert p.lam == math.sqrt(9.81 / 0.8)
    with pytest.raises(ValueError):
        LipParams(0.0)
    with pytest.raises(ValueError):
        LipParams(1.0, -1.0)
    with pytest.raises(ValueError):
        GaitTiming(0.0, 0.1)
    with pytest.raises(ValueError):
        GaitTiming(0.3, -0.1)


def test_ss_flow_identity_at_zero():
    p = LipParams(0.9)
    assert tuple(rom.ss_flow(p, (0.1, -0.2), 0.0)) == (0.1, -0.2)


def test_ss_flow_matches_rk4():
    p = LipParams(1.0, 9.81)
    got = np.array(rom.ss_flow(p, (0.1, 0.0), 0.4))
    ref = rk4(lip_rhs(p), [0.1, 0.0], 0.4)
    assert np.allclose(got, ref, rtol=1e-8, atol=1e-12)


def test_ss_flow_momentum_column():
    p = LipParams(0.8)
    L, t = 0.3, 0.27
    got = rom.ss_flow(p, (0.0, L), t)
    assert got.p == pytest.approx(math.sinh(p.lam * t) * L / (p.z0 * p.lam), rel=1e-14)
    assert got.L == pytest.approx(math.cosh(p.lam * t) * L, rel=1e-14)


@given(z0s, dts)
def test_ss_transition_unimodular_and_matches_expm(z0, dt):
    p = LipParams(z0)
    m = rom.ss_transition(p, dt)
    assert np.linalg.det(m) == pytest.approx(1.0, abs=1e-12 * max(1.0, np.abs(m).max() ** 2))
    ref = scipy.linalg.expm(rom.a_ss(p) * dt)
    assert np.abs(m - ref).max() <= 1e-11 * np.abs(ref).max()


@given(z0s, finite, finite, st.floats(0.0, 1.0), st.floats(0.0, 1.0))
def test_flow_semigroup(z0, p0, L0, t1, t2):
    prm = LipParams(z0)
    x = (p0, L0)
    a = np.array(rom.ss_flow(prm, x, t1 + t2))
    b = np.array(rom.ss_flow(prm, rom.ss_flow(prm, x, t1), t2))
    assert np.allclose(a, b, rtol=1e-10, atol=1e-10)
    a = np.array(rom.ds_flow(prm, x, t1 + t2))
    b = np.array(rom.ds_flow(prm, rom.ds_flow(prm, x, t1), t2))
    assert np.allclose(a, b, rtol=1e-12, atol=1e-12)


def test_ss_flow_rejects_bad_input():
    p = LipParams(0.8)
    with pytest.raises(ValueError):
        rom.ss_flow(p, (np.nan, 0.0), 0.1)
    with pytest.raises(ValueError):
        rom.ss_flow(p, (0.0, 0.0), -0.1)


def test_ds_flow_drift():
    got = rom.ds_flow(LipParams(1.0), (0.0, 0.5), 0.1)
    assert got.p == pytest.approx(0.05) and got.L == 0.5
    assert tuple(rom.ds_flow(LipParams(1.0), (0.2, 0.3), 0.0)) == (0.2, 0.3)


def test_impact_update():
    got = rom.impact_update((0.2, 0.3), 0.35)
    assert got.p == pytest.approx(-0.15) and got.L == 0.3
    x = (0.12, -0.4)
    assert tuple(rom.impact_update(rom.impact_update(x, 0.2), -0.2)) == pytest.approx(x)
    assert tuple(rom.impact_update(x, 0.0)) == x


def test_predict_preimpact_formula_and_rk4(rng):
    p = LipParams(0.85)
    for _ in range(5):
        x = rng.normal(scale=0.2, size=2)
        dt = 0.3
        got = rom.predict_preimpact(p, x, dt)
        lam = p.lam
        L_hat = p.z0 * lam * math.sinh(lam * dt) * x[0] + math.cosh(lam * dt) * x[1]
        assert got.L == pytest.approx(L_hat, rel=1e-13, abs=1e-15)
        assert np.allclose(got, rk4(lip_rhs(p), x, dt), rtol=1e-8, atol=1e-12)
    assert tuple(rom.predict_preimpact(p, (0.1, 0.2), 0.0)) == (0.1, 0.2)


def test_s2s_hlip_product_of_exponentials():
    p, t = LipParams(0.8, 9.81), GaitTiming(0.35, 0.1)
    m = rom.s2s_hlip(p, t)
    e_ss = scipy.linalg.expm(rom.a_ss(p) * t.t_ss)
    e_ds = scipy.linalg.expm(rom.a_ds(p) * t.t_ds)
    assert np.allclose(m.a, e_ss @ e_ds, atol=1e-10)
    assert np.allclose(m.b[:, 0], e_ss @ np.array([-1.0, 0.0]), atol=1e-10)


def test_s2s_hlip_single_support_only():
    p, t = LipParams(0.8), GaitTiming(0.35, 0.0)
    m = rom.s2s_hlip(p, t)
    assert np.allclose(m.a, rom.ss_transition(p, 0.35), atol=1e-14)
    eig = np.sort(np.linalg.eigvals(m.a).real)
    assert np.allclose(eig, [math.exp(-p.lam * 0.35), math.exp(p.lam * 0.35)], rtol=1e-12)


def test_s2s_mlip_integral_term_by_quadrature():
    p, t = LipParams(0.8), GaitTiming(0.35, 0.1)
    a, b = rom.mlip_ct(p)
    s = np.linspace(0.0, t.t_ds, 10001)
    vals = np.array([scipy.linalg.expm(a * si) @ b[:, 0] for si in s])
    quad = scipy.integrate.trapezoid(vals, s, axis=0) / t.t_ds
    assert np.allclose(rom.mlip_ds_input_column(p, t.t_ds), quad, atol=1e-8)


def test_s2s_mlip_against_ode_composition():
    # impact, DS with the ZMP ramping from the old foot to the new pivot, then SS
    p, t = LipParams(0.8), GaitTiming(0.35, 0.1)
    m = rom.s2s_mlip(p, t)
    a, b = rom.mlip_ct(p)
    x_pre = np.array([0.05, 0.25, 0.0])
    for u in (0.0, 0.12, -0.07):
        assert np.allclose(m.step(x_pre, u), _ref_step(a, b, t, x_pre, u), atol=1e-9)


def _ref_step(a, b, t, x_pre, u):
    z = x_pre + np.array([-u, 0.0, -u])

    def rhs(_, s):
        return a @ s + b[:, 0] * (u / t.t_ds)

    z = scipy.integrate.solve_ivp(rhs, (0, t.t_ds), z, rtol=1e-12, atol=1e-14).y[:, -1]
    return scipy.linalg.expm(a * t.t_ss) @ z


def test_mlip_reduces_to_hlip_without_double_support():
    p, t = LipParams(0.8), GaitTiming(0.35, 0.0)
    m = rom.s2s_mlip(p, t)
    h = rom.s2s_hlip(p, t)
    assert np.allclose(m.a[:2, :2], h.a, atol=1e-10)
    assert np.allclose(m.b[:2], h.b, atol=1e-10)
    assert np.allclose(m.step(np.zeros(3), 0.0), 0.0)


def test_dcm_transform_round_trip_and_triangular(rng):
    p = LipParams(0.9)
    for _ in range(20):
        x = rng.normal(size=2)
        q, xi = rom.dcm_transform(p, x)
        back = rom.dcm_inverse(p, q, xi)
        assert np.allclose(back, x, rtol=1e-14, atol=1e-15)
    assert rom.dcm_transform(p, (0.3, 0.0))[1] == 0.3
    d = rom.dcm_dynamics(p)
    assert abs(d[1, 0]) < 1e-12
    assert np.allclose(np.diag(d), [-p.lam, p.lam], atol=1e-12)
    assert np.allclose(np.sort(np.linalg.eigvals(d).real), [-p.lam, p.lam], atol=1e-12)


def test_s2s_dcm_coefficients():
    p = LipParams(0.8)
    lam = p.lam
    m = rom.s2s_dcm(p, GaitTiming(0.35, 0.0))
    assert m.b[0, 0] == pytest.approx(-math.exp(lam * 0.35), rel=1e-15)
    m2 = rom.s2s_dcm(p, GaitTiming(0.35, 1e-8))
    assert m2.b[0, 0] == pytest.approx(-math.exp(lam * 0.35), rel=1e-6)
    m3 = rom.s2s_dcm(p, GaitTiming(0.35, 0.1))
    assert m3.a[0, 0] == pytest.approx(math.exp(lam * 0.45), rel=1e-15)


def test_s2s_dcm_is_xi_row_of_mlip():
    p, t = LipParams(0.8), GaitTiming(0.35, 0.1)
    mlip = rom.s2s_mlip(p, t)
    lz = p.lam * p.z0
    T = np.array([[1.0, 0.0, 0.0], [1.0, 1.0 / lz, 0.0], [0.0, 0.0, 1.0]])
    a = T @ mlip.a @ np.linalg.inv(T)
    b = T @ mlip.b
    dcm = rom.s2s_dcm(p, t)
    # with the SS ZMP at the pivot, xi+ depends only on xi and u
    assert abs(a[1, 0]) < 1e-12
    assert a[1, 1] == pytest.approx(dcm.a[0, 0], rel=1e-12)
    assert b[1, 0] == pytest.approx(dcm.b[0, 0], rel=1e-12)


def test_s2s_map_validation():
    with pytest.raises(ValueError):
        rom.S2SMap(np.eye(2), np.ones(3), "HLIP")
    with pytest.raises(ValueError):
        rom.S2SMap(np.eye(2), np.ones(2), "LIPX")
    with pytest.raises(ValueError):
        rom.S2SMap(np.full((2, 2), np.inf), np.ones(2), "HLIP")


@given(z0s, finite, finite, st.floats(0.0, 0.8))
def test_orbital_energy_conserved(z0, p0, L0, dt):
    prm = LipParams(z0)
    e0 = rom.orbital_energy(prm, (p0, L0))
    e1 = rom.orbital_energy(prm, rom.ss_flow(prm, (p0, L0), dt))
    scale = max(1.0, abs(e0), prm.g * 10.0)
    assert abs(e1 - e0) <= 1e-9 * scale
