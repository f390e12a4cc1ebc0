import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from traparray import geometry
from traparray.errors import InvalidParameterError


def test_point_trap_structure(point_trap):
    roles = sorted(e.role for e in point_trap.electrodes)
    assert roles == ["ground", "ground", "rf_fixed"]
    assert point_trap.rf_groups == ["rf"]
    assert point_trap.addressable_groups == []
    assert geometry.validate_layout(point_trap) == []


def test_array2x2_groups(array2x2):
    assert len(array2x2.sites) == 4
    assert len(array2x2.addressable_groups) == 4
    assert array2x2.ground_plane_height == pytest.approx(3e-3)
    assert array2x2.pitch == pytest.approx(6e-3)
    assert geometry.validate_layout(array2x2) == []


def test_array4x4_preset():
    lay = geometry.make_addressable_array(geometry.array4x4_params())
    assert len(lay.sites) == 16
    # 24 inter-site addressing bars between neighbouring sites of a 4x4 lattice
    assert len(lay.addressable_groups) == 24
    assert lay.ground_plane_height == pytest.approx(1.5e-3)
    assert geometry.validate_layout(lay) == []


def test_no_ground_plane_override():
    lay = geometry.make_addressable_array(geometry.array2x2_params(ground_plane_height=None))
    assert lay.ground_plane_height is None


def test_electrodes_do_not_overlap(array2x2):
    polys = [e.polygon for e in array2x2.electrodes]
    for i in range(len(polys)):
        for j in range(i + 1, len(polys)):
            assert polys[i].intersection(polys[j]).area < 1e-15


def test_gaps_are_respected(array2x2):
    polys = [e.polygon for e in array2x2.electrodes]
    for i in range(len(polys)):
        for j in range(i + 1, len(polys)):
            d = polys[i].distance(polys[j])
            assert d == 0.0 or d >= 0.99 * array2x2.gap


def test_roundtrip(tmp_path, array2x2):
    path = tmp_path / "layout.json"
    array2x2.save(path)
    back = geometry.ElectrodeLayout.load(path)
    assert back.to_dict() == array2x2.to_dict()
    assert json.loads(path.read_text())["version"] == geometry.LAYOUT_VERSION


def test_bad_version_rejected(array2x2):
    d = array2x2.to_dict()
    d["version"] = 99
    with pytest.raises(InvalidParameterError):
        geometry.ElectrodeLayout.from_dict(d)


@pytest.mark.parametrize("kw", [dict(pitch=-1.0), dict(gap=0.0), dict(rows=0),
                                dict(inner_ground_radius=3e-3)])
def test_invalid_params(kw):
    with pytest.raises(InvalidParameterError):
        geometry.make_addressable_array(geometry.array2x2_params(**kw))


def test_point_trap_rejects_nonpositive():
    with pytest.raises(InvalidParameterError):
        geometry.make_point_trap(0.5e-3, -1e-3, 50e-6)


def test_reflect_is_involution(array2x2):
    twice = geometry.reflect(geometry.reflect(array2x2, "x"), "x")
    for a, b in zip(array2x2.electrodes, twice.electrodes):
        assert np.allclose(a.outer, b.outer)


@settings(max_examples=15, deadline=None)
@given(pitch=st.floats(1e-3, 1e-2), gap_frac=st.floats(0.002, 0.02))
def test_array_always_valid(pitch, gap_frac):
    lay = geometry.make_addressable_array(geometry.array2x2_params(pitch=pitch, gap=gap_frac * pitch))
    assert geometry.validate_layout(lay) == []
    assert len(lay.sites) == 4
