import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from traparray import geometry
from traparray.errors import DomainError, InvalidParameterError
from traparray.field import (DriveConfig, FieldSolver, converged_image_order,
                             evaluate_grid, potential_at, potential_gradient, rf_field_at)

R_DISC = 1e-3


@pytest.fixture(scope="module")
def disc():
    e = geometry.Electrode("disc", geometry.circle((0.0, 0.0), R_DISC, 2048), "rf_fixed", "rf")
    return geometry.ElectrodeLayout((e,), (-2e-3, -2e-3, 2e-3, 2e-3), name="disc")


@pytest.fixture(scope="module")
def fine_ring():
    return geometry.make_point_trap(0.5e-3, 1.0e-3, 50e-6, n_vertices=512)


def _axis_ring(z, a, b):
    return z / math.hypot(z, a) - z / math.hypot(z, b)


@pytest.mark.parametrize("z", [1e-4, 5e-4, 1e-3, 4e-3])
def test_disc_on_axis_matches_closed_form(disc, z):
    drive = DriveConfig(1.0, 1.0)
    got = potential_at(disc, drive, [0.0, 0.0, z])
    expected = 1.0 - z / math.hypot(z, R_DISC)
    assert got == pytest.approx(expected, rel=2e-5)


def test_ring_on_axis_uses_half_gap_growth(fine_ring):
    # each electrode grows by half the gap, so the ring spans r0 + g/2 .. r0 + g + w + g/2
    a, b = 0.525e-3, 1.575e-3
    drive = DriveConfig(1.0, 1.0)
    for z in (2e-4, 6e-4, 1.2e-3):
        assert potential_at(fine_ring, drive, [0, 0, z]) == pytest.approx(_axis_ring(z, a, b),
                                                                         rel=5e-5)


def test_group_basis_is_sum_of_electrodes(point_trap):
    s = FieldSolver(point_trap)
    p = [[1e-4, -2e-4, 4e-4]]
    wg, gg = s.basis(p)
    we, ge = s.basis(p, per="electrode")
    gi = s.groups.index("gnd")
    cols = [s.electrode_ids.index(e.id) for e in point_trap.group("gnd")]
    assert wg[0, gi] == pytest.approx(we[0, cols].sum(), rel=1e-9)
    assert np.allclose(gg[0, gi], ge[0, cols].sum(axis=0), rtol=1e-9)


def _grad_fd(layout, drive, p, h):
    def d(hh):
        out = np.empty(3)
        for k in range(3):
            e = np.zeros(3)
            e[k] = hh
            out[k] = (potential_at(layout, drive, p + e) - potential_at(layout, drive, p - e)) / (2 * hh)
        return out
    return (4 * d(h / 2) - d(h)) / 3


@pytest.mark.parametrize("gp", [False, True])
def test_gradient_matches_finite_difference(point_trap, point_trap_gp, drive10, gp):
    lay = point_trap_gp if gp else point_trap
    for p in ([1e-4, 2e-4, 5e-4], [-3e-4, 6e-4, 9e-4], [8e-4, -1e-4, 2e-4]):
        p = np.array(p)
        g = potential_gradient(lay, drive10, p)
        fd = _grad_fd(lay, drive10, p, 1e-5)
        assert np.max(np.abs(g - fd)) / np.max(np.abs(g)) < 1e-6


def test_gradient_fd_on_array(array2x2):
    drive = DriveConfig(215.0, 2 * math.pi * 10e6, {"addr_r0c0_r0c1": 0.6})
    p = np.array([-2.5e-3, -2.0e-3, 0.8e-3])
    g = potential_gradient(array2x2, drive, p)
    fd = _grad_fd(array2x2, drive, p, 2e-5)
    assert np.max(np.abs(g - fd)) / np.max(np.abs(g)) < 1e-6


def _second_derivatives(layout, drive, p, h):
    out = []
    for k in range(3):
        e = np.zeros(3)
        e[k] = h
        out.append((potential_gradient(layout, drive, p + e)[k]
                    - potential_gradient(layout, drive, p - e)[k]) / (2 * h))
    return np.array(out)


@pytest.mark.parametrize("gp", [False, True])
def test_harmonic(point_trap, point_trap_gp, drive10, gp):
    lay = point_trap_gp if gp else point_trap
    rng = np.random.default_rng(3)
    pts = np.column_stack([rng.uniform(-8e-4, 8e-4, (8, 2)), rng.uniform(2e-4, 1.2e-3, 8)])
    for p in pts:
        d2 = _second_derivatives(lay, drive10, p, 1e-6)
        assert abs(d2.sum()) < 1e-5 * np.abs(d2).sum()


@settings(max_examples=20, deadline=None)
@given(v1=st.floats(-50, 50), v2=st.floats(-50, 50),
       x=st.floats(-1e-3, 1e-3), z=st.floats(1e-4, 2e-3))
def test_superposition(point_trap, v1, v2, x, z):
    p = [x, 0.3 * x, z]
    a = DriveConfig(0.0, 1.0, dc_bias={"rf": v1})
    b = DriveConfig(0.0, 1.0, dc_bias={"gnd": v2})
    ab = DriveConfig(0.0, 1.0, dc_bias={"rf": v1, "gnd": v2})
    total = potential_at(point_trap, ab, p)
    assert total == pytest.approx(potential_at(point_trap, a, p) + potential_at(point_trap, b, p),
                                  abs=1e-9 * (abs(v1) + abs(v2)) + 1e-15)


@settings(max_examples=10, deadline=None)
@given(v=st.floats(1, 500))
def test_rf_field_linear_in_amplitude(point_trap, v):
    p = [1e-4, 2e-4, 6e-4]
    e1 = rf_field_at(point_trap, DriveConfig(1.0, 1.0), p)
    ev = rf_field_at(point_trap, DriveConfig(v, 1.0), p)
    assert np.allclose(ev, v * e1, rtol=1e-12, atol=0)


def test_ground_plane_pins_potential(point_trap_gp, drive10):
    h = point_trap_gp.ground_plane_height
    near = potential_at(point_trap_gp, drive10, [0, 0, h * (1 - 1e-6)])
    # truncated image series: residual well below 1e-4 of the drive
    assert abs(near) < 1e-4 * drive10.v_nom


def test_domain_checks(point_trap, point_trap_gp, drive10):
    with pytest.raises(DomainError):
        potential_at(point_trap, drive10, [0, 0, 0.0])
    with pytest.raises(DomainError):
        potential_at(point_trap_gp, drive10, [0, 0, 2e-3])
    with pytest.raises(DomainError):
        potential_at(point_trap, drive10, [np.nan, 0, 1e-3])


def test_image_order_converges(point_trap_gp):
    n = converged_image_order(point_trap_gp, [0, 0, 5e-4])
    assert n >= 8
    w8 = FieldSolver(point_trap_gp, 8).basis([[0, 0, 5e-4]], grad=False)[0]
    w32 = FieldSolver(point_trap_gp, 32).basis([[0, 0, 5e-4]], grad=False)[0]
    assert np.max(np.abs(w8 - w32)) < 1e-4


def test_drive_validation():
    with pytest.raises(InvalidParameterError):
        DriveConfig(1.0, 0.0)
    with pytest.raises(InvalidParameterError):
        DriveConfig(1.0, 1.0, {"rf": 1.5})
    with pytest.raises(InvalidParameterError):
        DriveConfig(-1.0, 1.0)


def test_drive_roundtrip():
    d = DriveConfig(3.0, 7.0, {"a": 0.5}, {"b": 1.0}, 0.25)
    assert DriveConfig.from_dict(json.loads(json.dumps(d.to_dict()))) == d


def test_field_grid_exports(point_trap, drive10):
    axes = (np.linspace(-1e-4, 1e-4, 3), np.array([0.0]), np.linspace(3e-4, 7e-4, 4))
    grid = evaluate_grid(point_trap, drive10, axes, 1.602176634e-19, 6.6e-26)
    lines = grid.to_csv().splitlines()
    assert lines[0] == "x,y,z,Ex,Ey,Ez,phi_pseudo"
    assert len(lines) == 1 + 12
    # z varies fastest
    assert [float(r.split(",")[2]) for r in lines[1:5]] == pytest.approx(list(axes[2]))
    d = json.loads(grid.to_json())
    assert d["shape"] == [3, 1, 4]
    assert len(d["phi_pseudo"]) == 12
    e = rf_field_at(point_trap, drive10, grid.points())
    assert np.allclose(grid.e_field, e)
    from traparray import metrics
    ion = metrics.Species(1.602176634e-19, 6.6e-26)
    assert np.allclose(grid.phi_pseudo, metrics.pseudopotential_from_field(e, ion, drive10.omega),
                       rtol=1e-12)
