import numpy as np
import pytest
from hypothesis import given, strategies as st

from lirecon.ocp import (
    NEGATIVE, POSITIVE, ElectrodeCurve, OcpTableError, default_graphite, default_lfp,
    read_ocp_table, write_ocp_table,
)


def test_validation():
    with pytest.raises(OcpTableError):
        ElectrodeCurve([0.0], [1.0])
    with pytest.raises(OcpTableError):
        ElectrodeCurve([0.0, 0.0, 1.0], [1.0, 0.5, 0.1])
    with pytest.raises(OcpTableError):
        ElectrodeCurve([0.0, 1.0], [0.1, 0.5])
    with pytest.raises(OcpTableError):
        ElectrodeCurve([0.0, 1.0], [1.0, np.nan])
    with pytest.raises(OcpTableError):
        ElectrodeCurve([0.0, 1.0], [1.0, 0.0], "middle")


def test_clamps_outside_table():
    c = ElectrodeCurve([0.2, 0.8], [1.0, 0.4])
    assert c(0.0) == 1.0
    assert c(1.0) == 0.4
    assert c(0.5) == pytest.approx(0.7)


def test_shipped_shapes():
    g, f = default_graphite(), default_lfp()
    assert g.electrode_kind == NEGATIVE and f.electrode_kind == POSITIVE
    assert g.z_range == (0.0, 1.0) and f.z_range == (0.0, 1.0)
    # graphite staircase below ~0.25 V over the working range, LFP plateau near 3.4 V
    assert 0.05 < g(0.5) < 0.25
    assert 3.3 < f(0.5) < 3.5
    assert g(0.02) > 0.4
    assert f(0.99) < 3.0


def test_round_trip(tmp_path):
    c = default_lfp()
    path = tmp_path / "lfp.ocp"
    write_ocp_table(c, path, comment="test table")
    back = read_ocp_table(path, POSITIVE)
    assert np.array_equal(back.z, c.z)
    assert np.array_equal(back.potential, c.potential)


def test_malformed_line(tmp_path):
    path = tmp_path / "bad.ocp"
    path.write_text("0.0\t1.0\n0.5 0.7 9\n")
    with pytest.raises(OcpTableError, match=":2:"):
        read_ocp_table(path)


@given(st.floats(-0.5, 1.5), st.floats(-0.5, 1.5))
def test_evaluation_monotone(a, b):
    g = default_graphite()
    lo, hi = sorted((a, b))
    assert g(hi) <= g(lo)
