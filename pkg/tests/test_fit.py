import math

import numpy as np
import pytest

from lirecon.de import DeSettings, FitResult, ParameterBounds
from lirecon.ecm import params_to_vector
from lirecon.fit import (ECM_NAMES, EcmObjective, FitError, FitObjectiveSpec, default_ecm_bounds,
                         fit_ecm, fit_relaxation, parameter_table, read_fit_config,
                         write_fit_config, write_fit_report)
from lirecon.protocol import reconditioning_protocol
from lirecon.simulate import run_protocol

FIG_S9 = (1.058, 0.07, 75.702)


def test_default_bounds_match_prior_ranges():
    b = default_ecm_bounds()
    assert b.names == ECM_NAMES
    assert b.lower == (0.010, 1.0, 500.0, 1.1, 1.0, 1e-8, 0.7, 1e-8, 0.7)
    assert b.upper == (0.300, 8.0, 2000.0, 2.2, 2.0, 0.3, 1 - 1e-8, 0.3, 1 - 1e-8)


@pytest.fixture(scope="module")
def objective(chain_trace):
    return EcmObjective(FitObjectiveSpec(reconditioning_protocol(), chain_trace))


def test_objective_near_zero_at_truth(objective, ref_params):
    assert objective(params_to_vector(ref_params)) < 1e-8


def test_objective_grows_off_truth(objective, ref_params):
    x = params_to_vector(ref_params)
    x[0] *= 1.05
    assert objective(x) > 1e-4


def test_invalid_candidate_scores_inf(objective, ref_params):
    x = params_to_vector(ref_params)
    x[1] = 0.5  # k < 1 is not a valid circuit
    assert objective(x) == math.inf


def test_segments_and_validation(chain_trace):
    spec = FitObjectiveSpec(reconditioning_protocol(), chain_trace)
    segs = spec.segments()
    assert [s[0] for s in segs] == [918, 921, 924, 925]
    assert all(s[2][0] > 0 for s in segs)  # first row lies after the aligned start
    with pytest.raises(FitError):
        FitObjectiveSpec(reconditioning_protocol(), chain_trace, cycles=())
    with pytest.raises(FitError):
        FitObjectiveSpec(reconditioning_protocol(), chain_trace, cycles=(5,))


def test_ke_at_upper_bound_reproduces_voltage(ref_params):
    # only ke is free; the others are pinned to the generating values
    truth = ref_params.with_values(ke=2000.0)
    proto = reconditioning_protocol()
    ref = run_protocol(truth, truth.initial_state(), proto, max_repetitions=3)
    x = params_to_vector(truth)
    lo = [v * (1 - 1e-12) for v in x]
    hi = [v * (1 + 1e-12) + 1e-15 for v in x]
    lo[2], hi[2] = 500.0, 2000.0
    res = fit_ecm(FitObjectiveSpec(proto, ref), ParameterBounds(ECM_NAMES, lo, hi),
                  DeSettings(population=6, max_generations=12, seed=0))
    assert math.sqrt(res.loss) < 5e-3


def test_relaxation_recovers_printed_formula():
    a, b, tau = FIG_S9
    x = np.arange(0, 201, 10.0)
    fit = fit_relaxation(np.c_[x, a * (1 - b * np.exp(-x / tau))])
    assert fit.a == pytest.approx(a, rel=1e-3)
    assert fit.b == pytest.approx(b, rel=1e-3)
    assert fit.tau == pytest.approx(tau, rel=1e-3)
    assert fit.predict([50.0])[0] == pytest.approx(a * (1 - b * math.exp(-50 / tau)), rel=1e-6)


def test_relaxation_constant_data():
    fit = fit_relaxation([(0, 1.0), (5, 1.0), (10, 1.0)])
    assert fit.a == 1.0 and fit.b == 0.0 and not fit.tau_identified and math.isnan(fit.tau)


@pytest.mark.parametrize("samples", [[(0, 1.0), (1, 1.1)], [(-1, 1.0), (1, 1.1), (2, 1.2)],
                                     [(0, 1.0), (1, math.nan), (2, 1.2)]])
def test_relaxation_bad_input(samples):
    with pytest.raises(FitError):
        fit_relaxation(samples)


def test_config_round_trip(tmp_path):
    b = default_ecm_bounds().replace("k", 1.0, 4.0)
    s = DeSettings(population=40, mutation=0.6, seed=3, max_evaluations=5000)
    write_fit_config(tmp_path / "fit.ini", b, s)
    b2, s2 = read_fit_config(tmp_path / "fit.ini")
    assert b2 == b and s2 == s


def test_config_partial_and_errors(tmp_path):
    p = tmp_path / "fit.ini"
    p.write_text("[de]\npopulation = 20\n\n[ke]\nupper = 1000\n")
    b, s = read_fit_config(p)
    assert s.population == 20 and b.upper[2] == 1000.0 and b.lower[2] == 500.0
    p.write_text("[de]\nspeed = 3\n")
    with pytest.raises(FitError, match="speed"):
        read_fit_config(p)
    p.write_text("[nope]\nlower = 1\n")
    with pytest.raises(FitError, match="nope"):
        read_fit_config(p)
    p.write_text("[k]\nlower = 5\nupper = 2\n")
    with pytest.raises(FitError):
        read_fit_config(p)


def test_parameter_table_and_report(tmp_path, ref_params):
    rows = {name: value for name, value, _ in parameter_table(ref_params)}
    assert rows["R0"] == pytest.approx(111.0, abs=1e-4)
    assert rows["Re"] == pytest.approx(44514.26, abs=1e-6)
    res = FitResult(params_to_vector(ref_params), 1e-9, 3, 30, True, [1e-3, 1e-6, 1e-9], ECM_NAMES)
    write_fit_report(tmp_path, res, ref_params)
    assert (tmp_path / "loss_history.csv").read_text().count("\n") == 4
    assert "R1" in (tmp_path / "parameters.csv").read_text()
