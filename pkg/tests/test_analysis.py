import copy
import json

import numpy as np
import pytest

from crwfield.analysis import (
    CheckReport,
    SampleSpec,
    check_cor42,
    check_cor43,
    check_dp_inequality,
    check_remark3,
    check_thm41_cond1,
    check_thm41_cond2,
    empirical_eta_bar,
    estimate_drift,
    face_states,
    near_face_states,
    relaxed_min_drift,
    shell_states,
)
from crwfield.errors import GradientUnavailable
from crwfield.fields import (
    CustomField,
    HMaxWeightField,
    Linear,
    MaxWeightField,
    MuPThetaField,
    Perturbation,
    QuadraticDiag,
    TandemFluid,
)
from crwfield.model import fig1_loop, tandem2
from crwfield.policy import Policy
from oracles import exact_drift

TF = TandemFluid(1.0, 2.0, 0.5, 1.0)
SMALL = SampleSpec(points_per_shell=128)


# -- sampling ----------------------------------------------------------------------

def test_shell_sampling_geometry():
    rng = np.random.default_rng(0)
    X = shell_states(4, 100.0, 200, rng)
    assert np.allclose(X.sum(axis=1), 100.0) and np.all(X >= 0)
    F = face_states(3, 50.0, 10, rng)
    assert F.shape == (30, 3)
    assert all(np.any(row == 0) for row in F)
    N, coords = near_face_states(3, 1000.0, 10.0, 20, rng, positive=True)
    assert np.all(N[np.arange(len(N)), coords] > 0)
    assert np.all(N[np.arange(len(N)), coords] <= 10.0)
    assert np.allclose(N.sum(axis=1), 1000.0)


def test_sample_spec_validation():
    with pytest.raises(ValueError):
        SampleSpec(shell_radii=(100.0, 10.0))
    with pytest.raises(ValueError):
        SampleSpec(points_per_shell=0)


# -- local constancy ---------------------------------------------------------------

def test_cond1_constant_field():
    r = check_thm41_cond1(CustomField(("2", "1")), 0.1, SMALL)
    assert r.passed and r.worst_violation == 0.0 and r.witness_threshold == 100.0


def test_cond1_maxweight_decay_rate():
    r = check_thm41_cond1(MaxWeightField(None), 0.1)
    assert r.passed
    radii = np.log10(r.details["shell_radii"])
    slope = np.polyfit(radii, np.log10(r.details["shell_max"]), 1)[0]
    assert slope <= -0.9


def test_cond1_oscillating_field_fails():
    r = check_thm41_cond1(CustomField(("(+ 1 (sin x1))", "1")), 0.1, SMALL)
    assert not r.passed
    assert min(r.details["shell_max"]) > 0.3
    assert r.counterexamples and "perturbation" in r.counterexamples[0]


# -- small coordinates -------------------------------------------------------------

def test_cond2_mu_ptheta_passes_with_closed_form_bound():
    r = check_thm41_cond2(MuPThetaField(Linear((1.0, 1.0)), 1.0), 0.05, SMALL)
    assert r.passed
    # P_theta entry bound at B = 1000, C2 = 10 caps the normalized weight
    bound = 1 - np.exp(-10 / (1 + 1000 - 10))
    assert r.details["shell_max"][1] <= bound / (1 - np.exp(-1)) + 1e-12


def test_cond2_constant_field_fails():
    r = check_thm41_cond2(CustomField(("1", "1")), 0.1, SMALL)
    assert not r.passed
    assert r.worst_violation == pytest.approx(0.5)


# -- log-gradient and face conditions ----------------------------------------------

def test_cor42_tandem_verdicts():
    bad = check_cor42(HMaxWeightField(TF, Perturbation("exp", 1.0)), 0.05)
    good = check_cor42(MuPThetaField(TF, 1.0), 0.05)
    assert not bad.passed and bad.counterexamples
    assert good.passed and not good.counterexamples
    assert good.details["face_violations"] == 0


def test_cor42_exponential_weights_fail():
    r = check_cor42(CustomField(("(exp x1)", "(exp x2)")), 0.05, SMALL)
    assert not r.passed
    assert any(c.get("kind") == "nonzero weight on empty queue" for c in r.counterexamples) or r.details["face_violations"]


def test_cor42_flags_non_positive_interior_weight():
    r = check_cor42(CustomField(("x1", "0")), 0.05, SMALL)
    assert not r.passed
    assert r.details["positivity_violations"] > 0


# -- simple perturbations ------------------------------------------------------------

def test_cor43_log_passes():
    r = check_cor43(QuadraticDiag((1.0, 1.0)), "log", 0.1, SampleSpec(shell_radii=(1e3, 1e4, 1e5)))
    assert r.passed
    assert r.details["lipschitz"]["passed"] and r.details["growth"]["passed"]
    assert np.all(np.asarray(r.details["ratio"]["values"])[:, -1] >= 1)


def test_cor43_exp_fails_growth():
    r = check_cor43(QuadraticDiag((1.0, 1.0)), Perturbation("exp", 1.0), 0.1)
    assert not r.passed
    assert not r.details["growth"]["passed"]
    assert r.details["lipschitz"]["passed"]


def test_cor43_requires_cost_function():
    with pytest.raises(GradientUnavailable):
        check_cor43(lambda x: x, "log", 0.1)


# -- dynamic programming inequality ----------------------------------------------------

def test_dp_origin_equality():
    r = check_dp_inequality(lambda x: np.asarray(x, float), QuadraticDiag((1.0, 1.0)), tandem2(0.5), [[0, 0]])
    assert r.passed and r.worst_violation == pytest.approx(0.0, abs=1e-12)


def test_dp_tandem_holds_with_lp_value():
    val, _ = relaxed_min_drift([3.0, 1.0], tandem2(0.5), [3, 1])
    assert val == pytest.approx(-1.5)
    r = check_dp_inequality(lambda x: np.asarray(x, float), Linear((0.3, 0.3)), tandem2(0.5), [[3, 1]])
    assert r.passed


def test_dp_fails_when_unstabilizable():
    states = [[k, 0] for k in (10, 100, 1000)]
    r = check_dp_inequality(lambda x: np.asarray(x, float), Linear((0.1, 0.1)), tandem2(1.0), states)
    assert not r.passed and len(r.counterexamples) == 3


# -- Remark-style gradient ratio ---------------------------------------------------------

def test_remark3_examples():
    r = check_remark3(MaxWeightField(None), 0.05, SMALL)
    assert r.passed and r.details["informational"]
    assert check_remark3(CustomField(("3", "1")), 0.01, SMALL).worst_violation == 0.0
    r = check_remark3(CustomField(("(exp x1)",)), 0.5, SampleSpec(shell_radii=(10, 50, 100)), m=1)
    assert not r.passed


# -- reports and determinism ----------------------------------------------------------------

def test_report_json_shape():
    r = check_thm41_cond2(CustomField(("1", "1")), 0.1, SMALL)
    d = json.loads(r.to_json())
    assert {"check", "passed", "witness_threshold", "worst_violation", "counterexamples"} <= set(d)
    assert isinstance(CheckReport("x", True, 1.0, 0.0).to_json(), str)


def test_checkers_deterministic_and_pure():
    fld = MuPThetaField(TF, 1.0)
    before = copy.deepcopy(fld.__dict__)
    a = check_thm41_cond1(fld, 0.2, SMALL).to_json()
    b = check_thm41_cond1(fld, 0.2, SMALL).to_json()
    assert a == b
    assert fld.__dict__.keys() == before.keys()
    c = check_thm41_cond1(fld, 0.2, SMALL.replace(rng_seed=1)).to_json()
    assert c != a


def test_passed_reports_have_no_counterexamples_above_threshold():
    r = check_thm41_cond1(MaxWeightField(None), 0.02, SMALL)
    assert r.passed and r.witness_threshold == 1000.0
    assert r.counterexamples == []


# -- drift --------------------------------------------------------------------------------

def test_drift_zero_without_arrivals():
    net = fig1_loop(0.0)
    pol = Policy(net, MaxWeightField(None))
    mean, se = estimate_drift(pol, net, [0] * 5, 1000, 0, lambda y: float(np.sum(y)))
    assert mean == 0.0 and se == 0.0


def test_drift_deterministic_when_no_randomness():
    net = tandem2(1.0)
    pol = Policy(net, MaxWeightField(None))
    V = QuadraticDiag((1.0, 1.0))
    mean, se = estimate_drift(pol, net, [5, 3], 500, 4, V)
    assert se == 0.0
    assert mean == exact_drift(pol.select([5, 3]), net, [5, 3], V.value)


@pytest.mark.parametrize("x", [[0, 0], [1, 0], [0, 4], [7, 2], [30, 50]])
def test_drift_matches_enumeration(x):
    net = tandem2(0.6)
    pol = Policy(net, MuPThetaField(Linear((1.0, 2.0)), 1.0))
    V = QuadraticDiag((1.0, 1.0))
    mean, se = estimate_drift(pol, net, x, 50_000, 8, V)
    exact = exact_drift(pol.select(x), net, x, V.value)
    assert abs(mean - exact) <= 3 * se + 1e-12


def test_fig1_drift_negative_regression():
    net = fig1_loop(0.5)
    pol = Policy(net, MuPThetaField(Linear((1.0,) * 5), 1.0))
    mean, se = estimate_drift(pol, net, [50] * 5, 100_000, 1, QuadraticDiag((1.0,) * 5))
    assert mean < 0
    assert mean == pytest.approx(-24.25, abs=4 * se)


def test_empirical_eta_bar_is_finite():
    net = tandem2(0.5)
    pol = Policy(net, MaxWeightField(None))
    eta = empirical_eta_bar(pol, net, [[0, 0], [2, 1], [10, 10]], Linear((1.0, 1.0)), QuadraticDiag((1.0, 1.0)), 2000)
    assert np.isfinite(eta)
