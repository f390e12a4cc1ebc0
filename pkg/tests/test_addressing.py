import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import constants as const

from traparray import addressing, metrics
from traparray.errors import InsufficientDataError, InvalidParameterError
from traparray.field import DriveConfig

GROUP = "addr_r0c0_r0c1"


@pytest.fixture(scope="module")
def drive215():
    return DriveConfig(215.0, 2 * math.pi * 10e6)


def test_default_fractions():
    fr = addressing.default_fractions()
    assert fr[0] == 1.0 and fr[-1] == 0.0
    assert all(b < a for a, b in zip(fr, fr[1:]))
    for f in (0.46, 0.45, 0.44, 0.43, 0.42, 0.41, 0.40):
        assert f in fr
    assert len(fr) == 26  # 21 coarse + 7 fine, two shared


def test_bordering_sites(array2x2):
    s = addressing.bordering_sites(array2x2, GROUP)
    assert s.shape == (2, 2)
    assert np.linalg.norm(s[0] - s[1]) == pytest.approx(array2x2.pitch)
    with pytest.raises(InvalidParameterError):
        addressing.bordering_sites(array2x2, "nope")


def test_morph_frame_roundtrip(array2x2):
    fr = addressing.morph_frame(array2x2, GROUP)
    p = np.array([[1e-3, -2e-3, 5e-4]])
    assert np.allclose(fr.to_world(fr.to_local(p)), p)


@pytest.mark.parametrize("bad", [[], [0.5, 0.6], [1.2, 0.5], [0.5, 0.5]])
def test_sweep_rejects_bad_fractions(array2x2, drive215, bad):
    with pytest.raises(InvalidParameterError):
        addressing.sweep_addressing(array2x2, drive215, metrics.CA40, GROUP, bad)


def test_full_drive_sites_match_minima(array2x2, drive215):
    """At full drive the tracked pair coincides with the grid-search minima."""
    rep = addressing.sweep_addressing(array2x2, drive215, metrics.CA40, GROUP, [1.0])
    p = rep.sweep[0]
    assert not p.merged and not p.third_trap_present
    assert p.barrier_height > 0.1
    L = metrics.characteristic_length(array2x2)
    region = metrics.default_region(array2x2, L / 12)
    mins = metrics.find_minima(array2x2, drive215, metrics.CA40, region)
    cell = L / 12
    for s in p.site_positions:
        d = min(np.linalg.norm(m.position - s) for m in mins)
        assert d <= 0.5 * cell
    assert p.inter_site_distance == pytest.approx(np.linalg.norm(p.site_positions[0]
                                                                 - p.site_positions[1]))
    csv = rep.to_csv().splitlines()
    assert csv[0] == ",".join(addressing.CSV_COLUMNS)
    assert rep.to_dict()["sweep"][0]["saddle_height"] is None


@settings(max_examples=25, deadline=None)
@given(k=st.floats(-6, 6), c=st.floats(1e-3, 1e3))
def test_power_law_fit_exact(k, c):
    x = np.geomspace(0.1, 1.0, 7)
    fit = addressing.fit_power_law(x, c * x ** k)
    assert fit.exponent == pytest.approx(k, abs=1e-9)
    assert fit.prefactor == pytest.approx(c, rel=1e-9)


def test_power_law_fit_needs_points():
    with pytest.raises(InsufficientDataError):
        addressing.fit_power_law([1, 2, 3], [1, 2, 3])


def test_gate_time_value():
    sp = metrics.CA40
    expected = 4 * math.pi ** 2 * const.epsilon_0 * sp.mass * (375e-6) ** 3 * 2e6 / const.e ** 2
    assert addressing.gate_time(375e-6, 2e6, sp) == pytest.approx(expected, rel=1e-14)


@settings(max_examples=25, deadline=None)
@given(a=st.floats(1e-6, 1e-2), w=st.floats(1e3, 1e8), s=st.floats(0.1, 10))
def test_gate_time_cubic_and_linear(a, w, s):
    sp = metrics.CA40
    t = addressing.gate_time(a, w, sp)
    assert addressing.gate_time(a * s, w, sp) == pytest.approx(t * s ** 3, rel=1e-12)
    assert addressing.gate_time(a, w * s, sp) == pytest.approx(t * s, rel=1e-12)


def test_scaling_report_laws():
    rows = addressing.scaling_report([0.5e-3, 1e-3, 2e-3], 1e-3)
    assert [r.gate_time for r in rows] == pytest.approx([0.25, 1.0, 4.0])
    assert [r.heating for r in rows] == pytest.approx([16.0, 1.0, 1 / 16])


def test_table1_rows_and_reduction():
    rows = addressing.table1(metrics.CA40)
    assert len(rows) == 5
    for r, (a, w) in zip(rows, addressing.TABLE1_ROWS):
        assert r.a == a and r.omega == pytest.approx(w * 1e6)
        assert r.t_gate_reduced == pytest.approx(r.t_gate / 10)
    text = addressing.table1_csv(rows).splitlines()
    assert text[0] == "a_um,omega_1e6_rad_s,t_gate_ms,t_gate_reduced_ms"


def test_ramp_time():
    assert addressing.adiabatic_ramp_time(2 * math.pi * 1e5) == pytest.approx(1e-4)
