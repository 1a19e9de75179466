import math

import numpy as np
import pytest

from lirecon.life.data import parse_cycling_dir, write_cycling_dir
from lirecon.life.features import build_feature_table, cycle_life_label
from lirecon.synthetic import (FleetError, SyntheticFleetSpec, gen_synthetic_fleet,
                               read_fleet_spec, write_fleet_spec)
from conftest import SMALL_FLEET
from oracles import spearman


def lives(ds):
    return {c.cell_id: cycle_life_label(c.discharge_capacities()).cycle for c in ds.cells}


def test_deterministic(small_fleet):
    again = gen_synthetic_fleet(SyntheticFleetSpec(**SMALL_FLEET))
    assert again == small_fleet
    other = gen_synthetic_fleet(SyntheticFleetSpec(**{**SMALL_FLEET, "seed": 12}))
    assert other != small_fleet


def test_parses_back(tmp_path, small_fleet):
    write_cycling_dir(small_fleet, tmp_path)
    back = parse_cycling_dir(tmp_path)
    assert back == small_fleet
    assert lives(back) == lives(small_fleet)


def test_every_cell_reaches_end_of_life(small_fleet):
    for c in small_fleet.cells:
        lab = cycle_life_label(c.discharge_capacities())
        assert not lab.censored and lab.last_cycle >= 45
        assert c.has_curve(40) and not c.has_curve(lab.last_cycle + 1)


def test_higher_current_shorter_life(small_fleet):
    lv = lives(small_fleet)
    by_current = {}
    for c in small_fleet.cells:
        by_current.setdefault(c.current_a, []).append(lv[c.cell_id])
    means = [np.mean(by_current[i]) for i in sorted(by_current)]
    assert means == sorted(means, reverse=True)


def test_single_current_feature_tracks_life():
    ds = gen_synthetic_fleet(SyntheticFleetSpec(**{**SMALL_FLEET, "n_cells": 20,
                                                   "currents": (1.5,)}))
    rows, excluded = build_feature_table(ds, 10, 40)
    assert not excluded
    rho = spearman([r.log10_var for r in rows], [math.log(r.label) for r in rows])
    assert rho <= -0.9


def test_spec_file_round_trip(tmp_path):
    spec = SyntheticFleetSpec(**SMALL_FLEET)
    write_fleet_spec(spec, tmp_path / "fleet.ini")
    assert read_fleet_spec(tmp_path / "fleet.ini") == spec
    (tmp_path / "bad.ini").write_text("[fleet]\nn_cells = 10\nspeed = 3\n")
    with pytest.raises(FleetError, match="speed"):
        read_fleet_spec(tmp_path / "bad.ini")
    (tmp_path / "bad.ini").write_text("[other]\n")
    with pytest.raises(FleetError):
        read_fleet_spec(tmp_path / "bad.ini")


@pytest.mark.parametrize("kw", [dict(n_cells=1), dict(currents=()), dict(currents=(1.0, -2.0)),
                                dict(fade_rate=0.0), dict(q_noise=-1.0), dict(z_pos_top=1.0),
                                dict(curve_points=3)])
def test_spec_validation(kw):
    with pytest.raises(FleetError):
        SyntheticFleetSpec(**kw)
