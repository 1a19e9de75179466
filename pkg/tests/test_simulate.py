import warnings

import numpy as np
import pytest

from lirecon.ecm import EcmState, solve_network, subcell_ocv, symmetric_state
from lirecon.protocol import (
    CC_CHARGE, CC_DISCHARGE, CV_HOLD, REST, Protocol, ProtocolBlock, ProtocolStep,
)
from lirecon.simulate import (
    IntegrationSettings, SimulationError, SimulationTrace, extract_cycle_capacities,
    run_protocol, run_step,
)
from oracles import quasi_static_discharge, single_cell_cc_voltage

# lithium inventory per sub-cell of the reference initial state, Ah
HALF_LITHIUM = 0.5324


def charged_state(p, z_pos=0.02):
    z_neg = (HALF_LITHIUM - z_pos * p.q_pos_sub) / p.q_neg_sub
    return symmetric_state(p, z_neg, z_pos)


def tables(p):
    return (p.ocp_neg.z, p.ocp_neg.potential), (p.ocp_pos.z, p.ocp_pos.potential)


def test_rest_on_symmetric_state_is_fixed_point(ref_params):
    s = symmetric_state(ref_params, 0.4, 0.5)
    new, seg = run_step(ref_params, s, ProtocolStep(REST, duration=600.0))
    assert np.allclose(new.z, s.z, rtol=0, atol=1e-12)
    assert new.t == 600.0
    assert np.max(np.abs(seg.i_e)) < 1e-12


def test_hold_at_ocv_is_fixed_point(ref_params):
    s = symmetric_state(ref_params, 0.4, 0.5)
    ocv = subcell_ocv(ref_params, s)[0]
    new, seg = run_step(ref_params, s, ProtocolStep(CV_HOLD, voltage=ocv, duration=3600.0))
    assert np.max(np.abs(seg.i_terminal)) < 1e-12
    assert np.allclose(new.z, s.z, atol=1e-12)


def test_quasi_static_discharge_capacity(ref_params):
    p = ref_params
    s = charged_state(p)
    new, seg = run_step(p, s, ProtocolStep(CC_DISCHARGE, 0.3, 2.0))
    simulated = 0.3 * (new.t - s.t) / 3600.0
    neg, pos = tables(p)
    oracle = quasi_static_discharge(neg, pos, 2 * p.q_neg_sub, 2 * p.q_pos_sub,
                                    s.z[0], s.z[1], 0.3, p.r0, 2.0)
    # the oracle ignores the transient current imbalance between sub-cells; at 0.3 A
    # that costs well under a mAh
    assert simulated == pytest.approx(oracle, abs=5e-4)
    assert abs(seg.v_terminal[-1] - 2.0) < 1e-3


@pytest.mark.parametrize("ke", [500.0, 2000.0])
def test_symmetry_collapse_cc_cycle(ref_params, ke):
    p = ref_params.with_values(k=1.0, ke=ke)
    s = charged_state(p, 0.3)
    proto = Protocol.single(
        ProtocolStep(CC_DISCHARGE, 1.0, 2.5), ProtocolStep(REST, duration=120.0),
        ProtocolStep(CC_CHARGE, 1.0, 4.0), ProtocolStep(REST, duration=120.0),
    )
    tr = run_protocol(p, s, proto)
    neg, pos = tables(p)
    # the oracle is one sub-cell carrying half the current through its 2*R2 path
    r_path = 2 * p.r2_branch
    v = np.empty(len(tr))
    t_start = 0.0
    zn, zp = s.z[0], s.z[1]
    for label in ("cc_discharge", "rest", "cc_charge", "rest"):
        m = tr.step_label == label
        blocks = np.split(np.nonzero(m)[0], np.nonzero(np.diff(np.nonzero(m)[0]) > 1)[0] + 1)
        del blocks
    # walk segments in time order
    bounds = np.nonzero(tr.step_label[1:] != tr.step_label[:-1])[0] + 1
    starts = np.concatenate([[0], bounds])
    ends = np.concatenate([bounds, [len(tr)]])
    amps = {"cc_discharge": 1.0, "cc_charge": -1.0, "rest": 0.0}
    for a, b in zip(starts, ends):
        cur = amps[tr.step_label[a]]
        t0 = tr.t[a - 1] if a else 0.0
        v[a:b] = single_cell_cc_voltage(neg, pos, p.q_neg_sub, p.q_pos_sub, zn, zp,
                                        cur / 2, r_path, tr.t[a:b], t0)
        zn = zn - (cur / 2) * (tr.t[b - 1] - t0) / 3600 / p.q_neg_sub
        zp = zp + (cur / 2) * (tr.t[b - 1] - t0) / 3600 / p.q_pos_sub
        t_start = tr.t[b - 1]
    assert t_start == tr.t[-1]
    assert np.max(np.abs(tr.v_terminal - v)) <= 1e-9


def test_row_invariants(ref_params, chain_trace):
    tr = chain_trace
    assert np.all(np.diff(tr.t) > 0)
    for r in np.linspace(0, len(tr) - 1, 40).astype(int):
        s = EcmState(tr.z[r])
        if tr.step_label[r] in ("hold_high", "hold_low"):
            sol = solve_network(ref_params, s, voltage=tr.v_terminal[r])
            assert sol.current == pytest.approx(tr.i_terminal[r], abs=1e-9)
        else:
            sol = solve_network(ref_params, s, current=tr.i_terminal[r])
            assert sol.v_terminal == pytest.approx(tr.v_terminal[r], abs=1e-9)
        assert sol.i_bridge == pytest.approx(tr.i_e[r], abs=1e-9)


def test_voltage_continuity(chain_trace):
    tr = chain_trace
    same = tr.step_label[1:] == tr.step_label[:-1]
    same &= tr.cycle_index[1:] == tr.cycle_index[:-1]
    dv = np.abs(np.diff(tr.v_terminal))[same]
    assert dv.max() < 0.05


def test_bridge_bookkeeping(ref_params):
    settings = IntegrationSettings(cadence_cycle=1.0, cadence_hold=1.0)
    s = ref_params.initial_state()
    _, seg = run_step(ref_params, s, ProtocolStep(CV_HOLD, voltage=3.6, duration=3000.0),
                      settings)
    dn1 = seg.n1[-1] - seg.n1[0]
    integral = np.trapezoid(seg.i_e, seg.t) / 3600.0
    assert dn1 == pytest.approx(integral, rel=1e-4)


@pytest.mark.parametrize("label", ["hold_high", "hold_low"])
def test_hold_halves_imbalance(chain_trace, label):
    tr = chain_trace
    idx = np.nonzero(tr.step_label == label)[0]
    start = abs(tr.n1[idx[0] - 1] - tr.n2[idx[0] - 1])
    end = abs(tr.n1[idx[-1]] - tr.n2[idx[-1]])
    assert end <= 0.5 * start


@pytest.mark.parametrize("label", [
    pytest.param("hold_high", marks=pytest.mark.xfail(
        strict=True,
        reason="shipped graphite table is too sloped on its stage-1 plateau: the bridge "
               "current only decays to ~1.6e-4 A within 3 days at 3.6 V")),
    "hold_low",
])
def test_hold_bridge_current_settles(chain_trace, label):
    tr = chain_trace
    idx = np.nonzero(tr.step_label == label)[0]
    assert abs(tr.i_e[idx[-1]]) < 1e-4


def test_determinism(ref_params):
    proto = Protocol.single(ProtocolStep(CC_DISCHARGE, 1.0, 2.5),
                            ProtocolStep(CV_HOLD, voltage=2.5, duration=7200.0))
    a = run_protocol(ref_params, ref_params.initial_state(), proto)
    b = run_protocol(ref_params, ref_params.initial_state(), proto)
    for name in ("t", "v_terminal", "i_terminal", "z", "i_e", "n1", "n2"):
        assert np.array_equal(getattr(a, name), getattr(b, name))


@pytest.mark.parametrize("method", ["explicit", "stiff"])
def test_tolerance_convergence(ref_params, method):
    base = IntegrationSettings(method=method)
    caps = []
    for settings in (base, base.tightened()):
        tr = run_protocol(ref_params, ref_params.initial_state(),
                          _short_chain(), settings)
        caps.append(extract_cycle_capacities(tr))
    for c in caps[0]:
        if caps[0][c].discharge_ah is not None:
            assert abs(caps[0][c].discharge_ah - caps[1][c].discharge_ah) < 1e-4


def test_methods_agree(ref_params):
    out = []
    for method in ("explicit", "stiff"):
        tr = run_protocol(ref_params, ref_params.initial_state(), _short_chain(),
                          IntegrationSettings(method=method))
        out.append(extract_cycle_capacities(tr))
    for c in out[0]:
        assert out[0][c].discharge_ah == pytest.approx(out[1][c].discharge_ah, abs=1e-4)


def _short_chain():
    return Protocol((
        ProtocolBlock((ProtocolStep(CC_CHARGE, 1.0, 4.0, label="charge"),
                       ProtocolStep(REST, duration=120.0),
                       ProtocolStep(CC_DISCHARGE, 1.0, 2.5, label="discharge"),
                       ProtocolStep(REST, duration=120.0)), 2),
    ))


def test_single_rest_block_matches_run_step(ref_params):
    s = ref_params.initial_state()
    step = ProtocolStep(REST, duration=900.0)
    _, seg = run_step(ref_params, s, step, cycle_index=1)
    tr = run_protocol(ref_params, s, Protocol.single(step))
    assert np.array_equal(seg.v_terminal, tr.v_terminal)
    assert np.array_equal(seg.z, tr.z)


def test_unreachable_cutoff_raises_with_partial(ref_params):
    proto = Protocol.single(ProtocolStep(REST, duration=10.0),
                            ProtocolStep(CC_CHARGE, 2.0, 9.0, label="overcharge"))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        with pytest.raises(SimulationError) as info:
            run_protocol(ref_params, ref_params.initial_state(), proto)
    assert info.value.where == (0, 0, 1)
    assert len(info.value.partial) > 2
    assert "overcharge" in str(info.value)


def test_capacity_of_constant_discharge():
    n = 361
    t = np.linspace(0.0, 3600.0, n)
    tr = SimulationTrace(t, np.full(n, 3.3), np.ones(n), np.zeros((n, 4)), np.zeros(n),
                         np.zeros(n), np.zeros(n), np.full(n, "discharge", dtype=object),
                         np.ones(n, dtype=int))
    caps = extract_cycle_capacities(tr)
    assert caps[1].discharge_ah == pytest.approx(1.0, rel=1e-14)
    assert caps[1].charge_ah is None


def test_cycle_without_discharge_flagged(chain_trace):
    caps = extract_cycle_capacities(chain_trace)
    # the 3.6 V hold block has no discharge segment
    hold_cycle = int(chain_trace.cycle_index[chain_trace.step_label == "hold_high"][0])
    assert caps[hold_cycle].flagged


def test_csv_round_trip(tmp_path, ref_params):
    _, seg = run_step(ref_params, ref_params.initial_state(),
                      ProtocolStep(CC_DISCHARGE, 1.0, 2.5), cycle_index=3)
    path = tmp_path / "trace.csv"
    seg.to_csv(path)
    back = SimulationTrace.from_csv(path)
    for name in ("t", "v_terminal", "i_terminal", "z", "i_e", "n1", "n2", "cycle_index"):
        assert np.array_equal(getattr(back, name), getattr(seg, name))
    assert list(back.step_label) == list(seg.step_label)
