import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import constants as const

from traparray import dynamics, metrics
from traparray.errors import DomainError, InsufficientDataError, InvalidParameterError
from traparray.field import DriveConfig

OMEGA = 2 * math.pi * 10e6


def _free(point_trap, duration, **kw):
    sp = metrics.Species(const.e, 1e-25)
    return dynamics.Scenario(point_trap, DriveConfig(0.0, OMEGA), sp, duration, **kw)


def test_constant_force_is_exact(point_trap):
    sc = _free(point_trap, 50 * 2 * math.pi / OMEGA, external_field=[1.0, -2.0, 3.0])
    p0 = np.array([0.0, 0.0, 5e-4])
    v0 = np.array([1.0, 0.5, -0.2])
    tr = dynamics.integrate(sc, dynamics.SimState(p0, v0))
    a = sc.species.q_over_m * np.array([1.0, -2.0, 3.0])
    t = tr.t[:, None]
    assert np.allclose(tr.position, p0 + v0 * t + 0.5 * a * t * t, rtol=1e-10, atol=1e-15)
    assert not tr.escaped


def test_linear_drag_decay(point_trap):
    gamma = 2e5
    sc = _free(point_trap, 100 * 2 * math.pi / OMEGA, drag=gamma)
    v0 = np.array([1.0, 0.0, 0.0])
    tr = dynamics.integrate(sc, dynamics.SimState([0, 0, 5e-4], v0))
    expected = np.exp(-gamma * tr.t)
    assert np.allclose(tr.velocity[:, 0], expected, rtol=1e-3)


def test_integrator_second_order(point_trap, drive10):
    """Error against a fine reference falls as dt^2."""
    sp = metrics.CA40
    site = dynamics._site_minimum(point_trap, drive10, sp, (0, 0), 6e-4)
    start = dynamics.SimState(site + [2e-6, 1e-6, 1.5e-6], np.zeros(3))
    period = 2 * math.pi / drive10.omega
    duration = 12 * period
    finals = {}
    for n in (50, 100, 200, 1600):
        sc = dynamics.Scenario(point_trap, drive10, sp, duration, timestep=period / n)
        finals[n] = dynamics.integrate(sc, start).position[-1]
    ref = finals[1600]
    e = [np.linalg.norm(finals[n] - ref) for n in (50, 100, 200)]
    orders = np.log2(np.array(e[:-1]) / np.array(e[1:]))
    assert np.all(np.abs(orders - 2.0) < 0.2), orders


def test_escape_truncates(point_trap):
    sc = _free(point_trap, 1e-3)
    tr = dynamics.integrate(sc, dynamics.SimState([0, 0, 5e-4], [0, 0, 1e3]))
    assert tr.escaped
    assert len(tr) < sc.n_steps + 1


def test_start_outside_domain(point_trap):
    sc = _free(point_trap, 1e-6)
    with pytest.raises(DomainError):
        dynamics.integrate(sc, dynamics.SimState([0, 0, -1e-4], [0, 0, 0]))


def test_scenario_validation(point_trap):
    period = 2 * math.pi / OMEGA
    with pytest.raises(InvalidParameterError):
        _free(point_trap, 1e-6, timestep=period / 10)
    with pytest.raises(InvalidParameterError):
        _free(point_trap, -1.0)
    with pytest.raises(InvalidParameterError):
        dynamics.SimState([np.inf, 0, 0], [0, 0, 0])


def test_scenario_roundtrip(tmp_path, point_trap):
    sc = _free(point_trap, 1e-6, gravity=True, drag=3.0)
    dynamics.save_scenario(sc, tmp_path / "s.json")
    back = dynamics.load_scenario(tmp_path / "s.json")
    assert back.to_dict() == sc.to_dict()


def _synthetic(omega_drive, omega_sec, a_sec, a_mm, periods=1000, per_period=40):
    dt = 2 * math.pi / omega_drive / per_period
    t = np.arange(int(periods * per_period)) * dt
    x = a_sec * np.cos(omega_sec * t) + a_mm * np.cos(omega_drive * t)
    pos = np.column_stack([x, 0.5 * x, np.zeros_like(x)])
    return dynamics.Trajectory(t, pos, np.zeros_like(pos), False, omega_drive)


@settings(max_examples=15, deadline=None)
@given(ratio=st.floats(0.03, 0.2), c=st.floats(1.0, 2.0))
def test_spectral_estimators_on_synthetic_signal(ratio, c):
    # micromotion amplitude comparable to a real trap, where it is about sqrt(2) w/Omega
    w = ratio * OMEGA
    a_mm = c * ratio * 1e-6
    tr = _synthetic(OMEGA, w, 1e-6, a_mm)
    peaks = dynamics.component_peaks(tr)
    assert peaks[0] == pytest.approx(w, rel=2e-3)
    assert dynamics.measured_secular_frequencies(tr)[0] == pytest.approx(w, rel=2e-3)
    # x and y both carry the drive tone, with amplitudes a_mm and a_mm / 2
    assert dynamics.micromotion_amplitude(tr) == pytest.approx(a_mm * math.sqrt(1.25), rel=1e-2)


def test_spectrum_needs_enough_periods():
    tr = _synthetic(OMEGA, 0.1 * OMEGA, 1e-6, 0.0, periods=40)
    with pytest.raises(InsufficientDataError):
        dynamics.measured_secular_frequencies(tr, min_periods=20)


def test_dust_calibration():
    assert dynamics.calibrate_dust_qm(150.0, 0.03) == pytest.approx(const.g * 0.03 / 150.0)
    assert dynamics.calibrate_dust_qm(150.0, 0.03) == pytest.approx(1.96e-3, rel=1e-3)
    with pytest.raises(InvalidParameterError):
        dynamics.calibrate_dust_qm(0.0, 0.03)


def test_mesh_field_cancels_gravity():
    qm = dynamics.calibrate_dust_qm(150.0, 0.03)
    acc = qm * dynamics.mesh_field(150.0, 0.03) + dynamics.GRAVITY
    assert np.allclose(acc, 0.0, atol=1e-12)


def test_trajectory_csv(point_trap):
    sc = _free(point_trap, 10 * 2 * math.pi / OMEGA, sample_every=10)
    tr = dynamics.integrate(sc, dynamics.SimState([0, 0, 5e-4], [1, 0, 0]))
    lines = tr.to_csv().splitlines()
    assert lines[0] == "t,x,y,z,vx,vy,vz"
    assert len(lines) == len(tr) + 1 == sc.n_steps // 10 + 2


def test_seeded_offsets_reproducible():
    a = dynamics._offset(np.random.default_rng(5), 1e-6)
    b = dynamics._offset(np.random.default_rng(5), 1e-6)
    assert np.array_equal(a, b)
    assert np.all(np.abs(a) <= 1e-6)
