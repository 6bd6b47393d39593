import math

import numpy as np
import pytest
from scipy import stats

from fvslv.calibration import (
    CalibrationError,
    LvSurface,
    calibrate,
    conditional_expectation,
    leverage_update,
    lv_density_1d,
    marginal_density,
    smile_surface,
)
from fvslv.cli import log_grid, slv_params, variance_grid
from fvslv.grids import NonUniformGrid
from fvslv.timestepping import TimeGrid

GV = NonUniformGrid(np.array([0.0, 1.0, 3.0]))  # weights 0.5, 1.5, 1.0


def test_expectation_single_column():
    P = np.zeros((4, 3))
    P[:, 1] = [1.0, 2.0, 0.1, 7.0]
    np.testing.assert_allclose(conditional_expectation(P, GV, lambda v: v**2), 1.0)


def test_expectation_two_columns_by_hand():
    P = np.array([[0.0, 2.0, 4.0]])
    # |P| * w = (0, 3, 4): E = (3 * 1 + 4 * 9) / 7
    assert conditional_expectation(P, GV, lambda v: v**2)[0] == pytest.approx(39.0 / 7.0)


def test_expectation_uses_absolute_values():
    P = np.array([[1.0, -2.0, 0.0]])
    # |P| * w = (0.5, 3, 0): E[v] = 3 / 3.5
    assert conditional_expectation(P, GV, np.array([0.0, 1.0, 3.0]))[0] == pytest.approx(3 / 3.5)


def test_expectation_fallback_only_for_empty_rows():
    P = np.array([[0.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
    out = conditional_expectation(P, GV, lambda v: v, fallback=np.array([0.5, 99.0]))
    np.testing.assert_allclose(out, [0.5, 1.0])
    with pytest.raises(CalibrationError):
        conditional_expectation(P, GV, lambda v: v)
    with pytest.raises(ValueError):
        conditional_expectation(np.ones((2, 4)), GV, lambda v: v)


def test_leverage_update():
    np.testing.assert_allclose(leverage_update([0.2, 0.3], [0.04, 0.09]), [1.0, 1.0])
    with pytest.raises(CalibrationError):
        leverage_update([0.2, 0.2], [0.04, 0.0])
    with pytest.raises(CalibrationError):
        leverage_update([0.2], [np.nan])


def test_marginal_density():
    P = np.array([[1.0, 1.0, 1.0], [0.0, 2.0, 0.0]])
    np.testing.assert_allclose(marginal_density(P, GV), [3.0, 3.0])


def test_lattice_surface_interpolation_and_flat_extrapolation():
    s = LvSurface(taus=[0.0, 1.0], xs=[-1.0, 0.0, 1.0],
                  values=[[0.1, 0.2, 0.3], [0.3, 0.4, 0.5]])
    assert s(np.array(0.5), 0.5) == pytest.approx(0.35)
    assert s(np.array(5.0), 2.0) == pytest.approx(0.5)
    assert s(np.array(-5.0), -1.0) == pytest.approx(0.1)
    assert s(np.array([[0.0], [-0.5]]), 0.0).shape == (2, 1)


def test_lattice_csv_round_trip(tmp_path):
    s = LvSurface(taus=[0.0, 0.5, 1.0], xs=[-0.2, 0.0, 0.3],
                  values=np.arange(1, 10).reshape(3, 3) / 10.0)
    path = tmp_path / "lv.csv"
    s.write_csv(path)
    back = LvSurface.read_csv(path)
    np.testing.assert_array_equal(back.values, s.values)
    np.testing.assert_array_equal(back.xs, s.xs)


def test_csv_rejects_bad_lattices(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("tau,x,sigma_lv\n0,0,0.1\n0,1,0.1\n1,0,0.1\n")
    with pytest.raises(ValueError):
        LvSurface.read_csv(path)
    path.write_text("t,x,s\n0,0,0.1\n")
    with pytest.raises(ValueError):
        LvSurface.read_csv(path)
    with pytest.raises(ValueError):
        LvSurface(taus=[0.0], xs=[0.0], values=[[-0.1]])
    with pytest.raises(ValueError):
        LvSurface()


def test_smile_surface():
    s = smile_surface(0.1, 0.2, 3.0)
    assert s(np.array(0.0), 0.3) == pytest.approx(0.1)
    assert s(np.array(10.0), 0.3) == pytest.approx(0.3)


def test_lv_density_constant_vol_is_normal():
    sigma, T = 0.2, 1.0
    g = log_grid(0.0, 400)
    out = lv_density_1d(LvSurface(lambda x, t: sigma + 0 * x), 0.02, 0.01, g, TimeGrid(T, 200))
    ref = stats.norm((0.01 - 0.5 * sigma**2) * T, sigma * math.sqrt(T)).pdf(g.nodes)
    assert np.max(np.abs(out.values - ref)) <= 2e-3 * ref.max()
    assert out.mass() == pytest.approx(1.0, abs=1e-12)


def small_calibration(Q=2, N=12, **kw):
    p = slv_params("G", **kw)
    gx = log_grid(p.X0, 60)
    gv = variance_grid(p.V0, 30)
    lv = smile_surface()
    kinds = []
    lev, dens = calibrate(p, lv, gx, gv, TimeGrid(p.T, N), Q=Q,
                          callback=lambda k, n, t, w: kinds.append(k))
    return p, gx, gv, lv, lev, dens, kinds


@pytest.fixture(scope="module")
def calib():
    return small_calibration()


def test_calibration_shapes_and_first_column(calib):
    p, gx, gv, lv, lev, dens, kinds = calib
    assert lev.values.shape == (13, 60)
    np.testing.assert_array_equal(lev.values[0], lev.values[1])
    assert kinds == ["ie_half"] * 4 + ["hv"] * 10
    assert np.all(lev.values > 0)


def test_calibration_conserves_mass(calib):
    # the iterative implicit solves stop at a relative residual of 1e-12
    *_, dens, _ = calib
    assert dens.mass() == pytest.approx(1.0, abs=1e-10)
    p = slv_params("G")
    _, exact = calibrate(p, smile_surface(), log_grid(p.X0, 60), variance_grid(p.V0, 30),
                         TimeGrid(p.T, 12), ie_method="direct")
    assert exact.mass() == pytest.approx(1.0, abs=1e-13)


def test_calibrated_marginal_tracks_local_vol(calib):
    p, gx, gv, lv, lev, dens, _ = calib
    marg = marginal_density(dens.values, gv)
    ref = lv_density_1d(lv, p.r_d, p.r_f, gx, TimeGrid(p.T, 12)).values
    assert np.max(np.abs(marg - ref)) <= 0.05 * ref.max()


def test_more_inner_iterations_do_not_hurt():
    p, gx, gv, lv, _, d2, _ = small_calibration(Q=2)
    *_, d5, _ = small_calibration(Q=5)
    ref = lv_density_1d(lv, p.r_d, p.r_f, gx, TimeGrid(p.T, 12)).values
    e2 = np.max(np.abs(marginal_density(d2.values, gv) - ref))
    e5 = np.max(np.abs(marginal_density(d5.values, gv) - ref))
    assert e5 <= 1.05 * e2


def test_calibration_rejects_bad_inputs():
    p = slv_params("G")
    with pytest.raises(ValueError):
        calibrate(p, smile_surface(), log_grid(0.0, 20), variance_grid(p.V0, 10),
                  TimeGrid(1.0, 4), Q=0)
