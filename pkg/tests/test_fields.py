import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from crwfield.errors import DomainError, EvaluationError, InvalidParams, UnsupportedCombination
from crwfield.fields import (
    CustomField,
    FieldSpec,
    HMaxWeightField,
    Linear,
    MaxWeightField,
    MuPThetaField,
    Perturbation,
    QuadraticDiag,
    TandemFluid,
    exp_perturb,
    exp_perturb_deriv,
    exp_perturb_deriv2,
    field_jacobian,
    log_perturb,
    log_perturb_deriv,
    log_perturb_deriv2,
    make_field,
    normalize_field,
    numeric_gradient,
    numeric_jacobian,
    p_theta,
    p_theta_jacobian,
    parse_expression,
    perturbed_potential,
    tandem_fluid_gradient,
)

TF = TandemFluid(1.0, 2.0, 0.5, 1.0)
nonneg = st.floats(0.0, 1e3, allow_nan=False)


# -- perturbations -------------------------------------------------------------

def test_exp_perturb_examples():
    assert exp_perturb(0.0, 5.0) == 0.0
    assert exp_perturb(1.0, 1.0) == pytest.approx(math.exp(-1), rel=1e-12)
    oracle = float(mpmath.mpf(10) + (mpmath.exp(-10) - 1))
    assert exp_perturb(10.0, 1.0) == pytest.approx(oracle, rel=1e-14)


def test_log_perturb_examples():
    assert log_perturb(0.0, 3.0) == 0.0
    assert log_perturb(2.5, 2.5) == pytest.approx(2.5 * math.log(2), rel=1e-14)
    assert log_perturb(math.e - 1, 1.0) == pytest.approx(math.e - 1, rel=1e-14)


@pytest.mark.parametrize("fn", [exp_perturb, log_perturb])
def test_negative_inputs_rejected(fn):
    with pytest.raises(DomainError):
        fn(-1.0, 2.0)


def test_theta_domains():
    with pytest.raises(DomainError):
        exp_perturb(1.0, 0.5)
    with pytest.raises(DomainError):
        log_perturb(1.0, 0.0)


@settings(max_examples=200)
@given(x=nonneg, theta=st.floats(1.0, 50.0))
def test_exp_sandwich(x, theta):
    v = exp_perturb(x, theta)
    assert 0.0 <= v <= x + 1e-12
    assert v >= x - theta - 1e-9


@settings(max_examples=100)
@given(x=st.floats(0.0, 100.0), dx=st.floats(1e-3, 10.0), theta=st.floats(1.0, 10.0))
def test_perturbations_monotone(x, dx, theta):
    assert exp_perturb(x + dx, theta) >= exp_perturb(x, theta)
    assert log_perturb(x + dx, theta) >= log_perturb(x, theta)


def test_derivatives_vanish_at_zero():
    for theta in (1.0, 3.0, 10.0):
        assert exp_perturb_deriv(0.0, theta) == 0.0
        assert log_perturb_deriv(0.0, theta) == 0.0


@pytest.mark.parametrize(
    "f,df,d2f",
    [(exp_perturb, exp_perturb_deriv, exp_perturb_deriv2), (log_perturb, log_perturb_deriv, log_perturb_deriv2)],
)
def test_derivatives_match_central_differences(f, df, d2f):
    rng = np.random.default_rng(7)
    for x in rng.uniform(0.1, 50.0, 50):
        theta = float(rng.uniform(1.0, 5.0))
        h = 1e-5
        assert df(x, theta) == pytest.approx((f(x + h, theta) - f(x - h, theta)) / (2 * h), abs=1e-6)
        assert d2f(x, theta) == pytest.approx((df(x + h, theta) - df(x - h, theta)) / (2 * h), abs=1e-5)


def test_vector_input():
    x = np.array([0.0, 1.0, 4.0])
    assert np.allclose(exp_perturb(x, 1.0), [exp_perturb(v, 1.0) for v in x])
    assert isinstance(exp_perturb(1.0, 1.0), float)


# -- P_theta -------------------------------------------------------------------

def test_p_theta_examples():
    assert p_theta([0.0, 7.0], 1.0)[0] == 0.0
    assert np.allclose(p_theta([1.0, 0.0], 1.0), [1 - math.exp(-1), 0.0], atol=1e-7)
    t = 1e6
    assert np.allclose(p_theta([t, t], 1.0), 1 - math.exp(-1), atol=1e-5)


@settings(max_examples=100)
@given(x=st.lists(st.floats(0.01, 100.0), min_size=2, max_size=5), theta=st.floats(0.1, 5.0))
def test_p_theta_monotonicity(x, theta):
    x = np.array(x)
    base = p_theta(x, theta)
    # entries saturate at 1.0 in double precision once the exponent is large
    assert np.all((base > 0) & (base <= 1))
    for i in range(x.size):
        up = x.copy()
        up[i] *= 1.5
        moved = p_theta(up, theta)
        assert moved[i] > base[i] or base[i] == 1.0
        others = np.arange(x.size) != i
        assert np.all(moved[others] <= base[others])


def test_p_theta_jacobian_matches_numeric():
    x = np.array([2.0, 3.0, 0.5])
    assert np.allclose(p_theta_jacobian(x, 1.5), numeric_jacobian(lambda v: p_theta(v, 1.5), x), atol=1e-7)


# -- costs and fields ----------------------------------------------------------

def test_tandem_fluid_constants():
    assert (TF.d1, TF.d2) == (2.0, 1.0)
    with pytest.raises(InvalidParams):
        TandemFluid(1.0, 2.0, 1.0, 1.0)


def test_tandem_gradient_examples():
    for variant in ("exp", "modified"):
        assert np.array_equal(tandem_fluid_gradient([0.0, 0.0], TF, 1.0, variant), [0.0, 0.0])
    xt = math.exp(-1)
    f = 1 - math.exp(-1)
    expected = [2 * (2 * xt) * f, (2 * (2 * xt) + xt) * f]
    got = tandem_fluid_gradient([1.0, 1.0], TF, 1.0, "exp")
    assert np.allclose(got, expected, rtol=1e-12)
    h = perturbed_potential(TF, Perturbation("exp", 1.0))
    assert np.allclose(got, numeric_gradient(h, [1.0, 1.0]), atol=1e-6)


def test_modified_tandem_field_cross_coupled():
    x = np.array([2.0, 3.0])
    xt = exp_perturb(x, 1.0)
    g = TF.gradient(xt)
    damp = [1 - math.exp(-2.0 / 4.0), 1 - math.exp(-3.0 / 3.0)]
    assert np.allclose(tandem_fluid_gradient(x, TF, 1.0, "modified"), g * damp, rtol=1e-12)


def test_make_field_examples():
    assert np.array_equal(make_field({"kind": "maxweight"})([3.0, 1.0]), [3.0, 1.0])
    mu = make_field({"kind": "mu-ptheta", "theta": 1.0, "cost": {"kind": "linear", "c": [1, 1]}})
    assert np.allclose(mu([1.0, 0.0]), [1 - math.exp(-1), 0.0])
    hexp = make_field({"kind": "h-maxweight-exp", "theta": 1.0, "cost": {"kind": "quadratic", "D": [1, 1]}})
    for k in (0.0, 1.0, 50.0):
        assert hexp([0.0, k])[0] == 0.0


def test_make_field_errors():
    with pytest.raises(InvalidParams):
        make_field({"kind": "h-maxweight-exp", "theta": 0.5, "cost": {"kind": "linear", "c": [1]}})
    with pytest.raises(UnsupportedCombination):
        make_field({"kind": "mu-ptheta", "theta": 1.0})
    with pytest.raises(UnsupportedCombination):
        make_field({"kind": "maxweight", "cost": {"kind": "linear", "c": [1, 1]}})
    with pytest.raises(InvalidParams):
        make_field({"kind": "nope"})


def test_field_spec_round_trip():
    spec = FieldSpec("h-maxweight-log", 2.0, QuadraticDiag((1.0, 2.0)))
    assert FieldSpec.from_dict(spec.to_dict()) == spec


BUILTIN = [
    MaxWeightField(None),
    MaxWeightField((1.0, 2.0, 3.0)),
    HMaxWeightField(Linear((1.0, 2.0, 1.0)), Perturbation("exp", 1.0)),
    HMaxWeightField(QuadraticDiag((1.0, 1.0, 2.0)), Perturbation("log", 0.5)),
    MuPThetaField(Linear((1.0, 1.0, 5.0)), 1.0),
    MuPThetaField(QuadraticDiag((1.0, 2.0, 1.0)), 2.0),
]


@pytest.mark.parametrize("fld", BUILTIN)
def test_builtin_fields_nonnegative_and_zero_at_origin(fld):
    rng = np.random.default_rng(3)
    X = rng.integers(0, 200, size=(10_000, 3)).astype(float)
    X[::7, rng.integers(0, 3)] = 0.0
    for x in X:
        assert np.all(fld(x) >= 0)
    assert np.all(fld(np.zeros(3)) == 0)


@pytest.mark.parametrize("fld", BUILTIN)
def test_analytic_jacobians_match_numeric(fld):
    rng = np.random.default_rng(11)
    for x in rng.uniform(0.5, 30.0, size=(20, 3)):
        J = fld.jacobian(x)
        N = numeric_jacobian(fld, x)
        assert np.allclose(J, N, atol=1e-6, rtol=1e-4)


def test_h_gradient_matches_potential():
    for pert in (Perturbation("exp", 2.0), Perturbation("log", 1.0)):
        fld = HMaxWeightField(QuadraticDiag((1.0, 3.0)), pert)
        h = fld.potential()
        for x in ([1.0, 2.0], [5.0, 0.5], [40.0, 7.0]):
            val = fld(np.array(x))
            assert np.allclose(val, numeric_gradient(h, x), atol=1e-6, rtol=1e-4)


def test_scaled_field():
    fld = MaxWeightField(None).scaled(2.5)
    assert np.allclose(fld([2.0, 4.0]), [5.0, 10.0])
    assert np.allclose(fld.jacobian([2.0, 4.0]), 2.5 * np.eye(2))


# -- normalisation and numerics ---------------------------------------------------

def test_normalize_examples():
    assert np.allclose(normalize_field([2.0, 2.0]).mu, [0.5, 0.5])
    z = normalize_field([0.0, 0.0, 0.0])
    assert z.is_zero and np.array_equal(z.mu, [0.0, 0.0, 0.0])
    assert np.allclose(normalize_field([1.0, 3.0]).mu, [0.25, 0.75])


@settings(max_examples=200)
@given(st.lists(st.floats(0.0, 1e6), min_size=1, max_size=6).filter(lambda v: max(v) > 1e-10))
def test_normalize_sums_to_one(v):
    out = normalize_field(v)
    assert not out.is_zero
    assert abs(math.fsum(out.mu) - 1.0) <= 1e-12


def test_numeric_gradient_examples():
    assert np.allclose(numeric_gradient(lambda x: 0.5 * np.dot(x, x), [3.0, 1.0], 1e-5), [3.0, 1.0], atol=1e-6)
    assert np.array_equal(numeric_gradient(lambda x: 4.0, [1.0, 2.0]), [0.0, 0.0])
    assert np.allclose(numeric_gradient(lambda x: x[0] * x[1], [2.0, 5.0]), [5.0, 2.0], atol=1e-6)


def test_numeric_gradient_one_sided_at_boundary():
    calls = []

    def f(x):
        calls.append(x.copy())
        if np.any(x < 0):
            raise DomainError("negative")
        return float(np.sum(np.sqrt(x + 1)))

    g = numeric_gradient(f, [0.0, 3.0])
    assert np.allclose(g, [0.5, 0.25], atol=1e-5)
    assert all(np.all(c >= 0) for c in calls)


def test_numeric_gradient_wraps_errors():
    def bad(x):
        raise RuntimeError("boom")

    with pytest.raises(EvaluationError):
        numeric_gradient(bad, [1.0])


def test_custom_field_parsing():
    f = CustomField(("(+ 1 (sin x1))", "(* 2 x2)"))
    assert np.allclose(f([0.0, 3.0]), [1.0, 6.0])
    assert field_jacobian(f, np.array([0.0, 3.0])) == pytest.approx(np.array([[1.0, 0.0], [0.0, 2.0]]), abs=1e-6)
    assert parse_expression("x1") is not None
    with pytest.raises(InvalidParams):
        parse_expression("(+ 1")


def test_mu_ptheta_accepts_small_theta_with_curved_cost():
    fld = MuPThetaField(QuadraticDiag((1.0, 1.0)), 0.5)
    x = np.array([2.0, 3.0])
    xt = x + 0.5 * np.expm1(-x / 0.5)
    assert np.allclose(fld(x), p_theta(x, 0.5) * xt)
    with pytest.raises(DomainError):
        Perturbation("exp", 0.5)
