"""Scheduling fields: weight vectors mu(x) that drive the myopic policy.

Built-in kinds

``maxweight``
    ``mu(x) = D x``.
``h-maxweight-exp`` / ``h-maxweight-log``
    Gradient of ``h(x) = h0(xt(x))`` where ``xt`` perturbs every coordinate
    separately (exponential or logarithmic).
``mu-ptheta``
    ``mu(x) = P_theta(x) g(x)`` with the diagonal damping matrix
    ``P_theta(x)_ii = 1 - exp(-x_i / (theta (1 + sum_{j != i} x_j)))`` and
    ``g = c`` for a linear cost, ``g = grad h0(xt)`` otherwise (exponential
    perturbation).
``custom``
    One prefix-notation expression per coordinate, e.g. ``"(+ 1 (sin x1))"``.

Every field is an immutable callable; ``field.jacobian(x)`` returns the
analytic Jacobian where one is known and ``None`` otherwise.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import (
    DimensionMismatch,
    DomainError,
    EvaluationError,
    InvalidParams,
    UnsupportedCombination,
)

ZERO_TOL = 1e-15


# -- componentwise perturbations ---------------------------------------------

def _check_nonneg(x, theta, theta_min: float, strict: bool):
    x = np.asarray(x, dtype=float)
    if np.any(x < 0) or np.any(np.isnan(x)):
        raise DomainError("perturbations are defined for x >= 0 only")
    if strict and not theta > theta_min:
        raise DomainError(f"theta must be > {theta_min}, got {theta}")
    if not strict and not theta >= theta_min:
        raise DomainError(f"theta must be >= {theta_min}, got {theta}")
    return x


def _exp_value(x, theta):
    # cancellation can leave a rounding-sized excursion outside [0, x]
    return np.clip(x + theta * np.expm1(-x / theta), np.maximum(0.0, x - theta), x)


def exp_perturb(x, theta: float):
    """``x + theta (exp(-x/theta) - 1)``, which lies in ``[max(0, x - theta), x]``."""
    x = _check_nonneg(x, theta, 1.0, strict=False)
    return _ret(_exp_value(x, theta))


def exp_perturb_deriv(x, theta: float):
    x = _check_nonneg(x, theta, 1.0, strict=False)
    return _ret(-np.expm1(-x / theta))


def exp_perturb_deriv2(x, theta: float):
    x = _check_nonneg(x, theta, 1.0, strict=False)
    return _ret(np.exp(-x / theta) / theta)


def log_perturb(x, theta: float):
    """``x log(1 + x/theta)``."""
    x = _check_nonneg(x, theta, 0.0, strict=True)
    return _ret(x * np.log1p(x / theta))


def log_perturb_deriv(x, theta: float):
    x = _check_nonneg(x, theta, 0.0, strict=True)
    return _ret(np.log1p(x / theta) + x / (theta + x))


def log_perturb_deriv2(x, theta: float):
    x = _check_nonneg(x, theta, 0.0, strict=True)
    return _ret(1.0 / (theta + x) + theta / (theta + x) ** 2)


def _ret(a: np.ndarray):
    return float(a) if a.ndim == 0 else a


@dataclass(frozen=True)
class Perturbation:
    """Value and first two derivatives of a componentwise perturbation."""

    name: str
    theta: float

    def __post_init__(self):
        if self.name not in ("exp", "log"):
            raise InvalidParams(f"unknown perturbation {self.name!r}")
        # theta domain check up front
        (exp_perturb if self.name == "exp" else log_perturb)(0.0, self.theta)

    def _x(self, x):
        # the exp threshold theta >= 1 is enforced at construction only, so
        # P_theta fields may reuse the exponential map with any theta > 0
        return _check_nonneg(x, self.theta, 0.0, strict=True)

    def value(self, x):
        x = self._x(x)
        if self.name == "exp":
            return _ret(_exp_value(x, self.theta))
        return _ret(x * np.log1p(x / self.theta))

    def deriv(self, x):
        x = self._x(x)
        if self.name == "exp":
            return _ret(-np.expm1(-x / self.theta))
        return _ret(np.log1p(x / self.theta) + x / (self.theta + x))

    def deriv2(self, x):
        x = self._x(x)
        t = self.theta
        if self.name == "exp":
            return _ret(np.exp(-x / t) / t)
        return _ret(1.0 / (t + x) + t / (t + x) ** 2)


def _exp_pert_unchecked(theta: float) -> Perturbation:
    # exponential perturbation inside P_theta fields accepts any theta > 0
    p = object.__new__(Perturbation)
    object.__setattr__(p, "name", "exp")
    object.__setattr__(p, "theta", float(theta))
    return p


# -- P_theta -----------------------------------------------------------------

def p_theta(x, theta: float) -> np.ndarray:
    """Diagonal of ``P_theta(x)``: ``1 - exp(-x_i / (theta (1 + sum_{j != i} x_j)))``."""
    x = np.asarray(x, dtype=float)
    if np.any(x < 0):
        raise DomainError("p_theta is defined for x >= 0 only")
    if not theta > 0:
        raise DomainError("theta must be positive")
    rest = x.sum() - x
    return -np.expm1(-x / (theta * (1.0 + rest)))


def p_theta_jacobian(x, theta: float) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    rest = x.sum() - x
    denom = theta * (1.0 + rest)
    e = np.exp(-x / denom)
    # d/dx_j of x_i/denom_i is -x_i theta/denom_i^2 for j != i, 1/denom_i for j == i
    J = (e * (-x * theta / denom**2))[:, None] * np.ones((1, x.size))
    np.fill_diagonal(J, e / denom)
    return J


# -- cost functions / surrogate value functions ------------------------------

class CostFunction:
    """Non-negative cost with ``c(0) = 0`` and a componentwise gradient."""

    kind = ""

    def value(self, x) -> float:
        raise NotImplementedError

    def gradient(self, x) -> np.ndarray:
        raise NotImplementedError

    def hessian(self, x) -> np.ndarray:
        raise NotImplementedError

    def __call__(self, x) -> float:
        return self.value(x)

    def values(self, X) -> np.ndarray:
        """Cost of each row of a state matrix."""
        return np.array([self.value(x) for x in np.atleast_2d(X)])

    def to_dict(self) -> dict:
        raise NotImplementedError


@dataclass(frozen=True)
class Linear(CostFunction):
    c: tuple
    kind = "linear"

    def __post_init__(self):
        c = tuple(float(v) for v in self.c)
        if any(v < 0 for v in c):
            raise InvalidParams("linear cost weights must be non-negative")
        object.__setattr__(self, "c", c)

    def value(self, x) -> float:
        return float(np.dot(self.c, x))

    def values(self, X) -> np.ndarray:
        return np.atleast_2d(X) @ np.asarray(self.c)

    def gradient(self, x) -> np.ndarray:
        return np.asarray(self.c, dtype=float)

    def hessian(self, x) -> np.ndarray:
        return np.zeros((len(self.c), len(self.c)))

    def to_dict(self) -> dict:
        return {"kind": self.kind, "c": list(self.c)}


@dataclass(frozen=True)
class QuadraticDiag(CostFunction):
    """``0.5 * sum_i D_i x_i**2``; the gradient is ``D x``."""

    D: tuple
    kind = "quadratic"

    def __post_init__(self):
        D = tuple(float(v) for v in self.D)
        if any(v <= 0 for v in D):
            raise InvalidParams("quadratic weights must be positive")
        object.__setattr__(self, "D", D)

    def value(self, x) -> float:
        x = np.asarray(x, dtype=float)
        return 0.5 * float(np.dot(self.D, x * x))

    def values(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return 0.5 * (X * X) @ np.asarray(self.D)

    def gradient(self, x) -> np.ndarray:
        return np.asarray(self.D) * np.asarray(x, dtype=float)

    def hessian(self, x) -> np.ndarray:
        return np.diag(self.D)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "D": list(self.D)}


@dataclass(frozen=True)
class TandemFluid(CostFunction):
    """Fluid value function of the two-queue tandem under linear cost.

    ``h0(x) = d1 (x1 + x2)**2 / 2 + d2 x2**2 / 2`` with
    ``d1 = c1 / (nu2 - alpha1)`` and ``d2 = (c2 - c1) / nu2``.
    """

    c1: float
    c2: float
    alpha1: float
    nu2: float
    kind = "tandem-fluid"

    def __post_init__(self):
        if not self.nu2 > self.alpha1 >= 0:
            raise InvalidParams("need nu2 > alpha1 >= 0")
        if not self.c2 >= self.c1 > 0:
            raise InvalidParams("need c2 >= c1 > 0")

    @property
    def d1(self) -> float:
        return self.c1 / (self.nu2 - self.alpha1)

    @property
    def d2(self) -> float:
        return (self.c2 - self.c1) / self.nu2

    def value(self, x) -> float:
        x1, x2 = np.asarray(x, dtype=float)
        return 0.5 * self.d1 * (x1 + x2) ** 2 + 0.5 * self.d2 * x2**2

    def gradient(self, x) -> np.ndarray:
        x1, x2 = np.asarray(x, dtype=float)
        s = self.d1 * (x1 + x2)
        return np.array([s, s + self.d2 * x2])

    def hessian(self, x) -> np.ndarray:
        d1, d2 = self.d1, self.d2
        return np.array([[d1, d1], [d1, d1 + d2]])

    def linear_cost(self) -> Linear:
        return Linear((self.c1, self.c2))

    def to_dict(self) -> dict:
        return {"kind": self.kind, "c1": self.c1, "c2": self.c2,
                "alpha1": self.alpha1, "nu2": self.nu2}


def cost_from_dict(d: dict) -> CostFunction:
    kind = d.get("kind")
    if kind == "linear":
        return Linear(tuple(d["c"]))
    if kind == "quadratic":
        return QuadraticDiag(tuple(d["D"]))
    if kind == "tandem-fluid":
        return TandemFluid(float(d["c1"]), float(d["c2"]), float(d["alpha1"]), float(d["nu2"]))
    raise InvalidParams(f"unknown cost kind {kind!r}")


def perturbed_potential(h0: CostFunction, perturbation: Perturbation) -> Callable:
    """``x -> h0(xt(x))``, the Lyapunov-style surrogate of an h-MaxWeight policy."""

    def h(x):
        return h0.value(perturbation.value(np.asarray(x, dtype=float)))

    return h


# -- fields ------------------------------------------------------------------

class SchedulingField:
    """Base class: ``field(x)`` returns the weight vector at state ``x``."""

    kind = ""

    def __call__(self, x) -> np.ndarray:
        raise NotImplementedError

    def jacobian(self, x) -> np.ndarray | None:
        return None

    def scaled(self, kappa: float) -> "SchedulingField":
        return ScaledField(self, float(kappa))


@dataclass(frozen=True)
class ScaledField(SchedulingField):
    base: SchedulingField
    kappa: float
    kind = "scaled"

    def __call__(self, x):
        return self.kappa * self.base(x)

    def jacobian(self, x):
        J = self.base.jacobian(x)
        return None if J is None else self.kappa * J


@dataclass(frozen=True)
class MaxWeightField(SchedulingField):
    D: tuple | None = None
    kind = "maxweight"

    def _d(self, n: int) -> np.ndarray:
        if self.D is None:
            return np.ones(n)
        if len(self.D) != n:
            raise DimensionMismatch(f"D has length {len(self.D)}, state has {n}")
        return np.asarray(self.D, dtype=float)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        return self._d(x.size) * x

    def jacobian(self, x):
        return np.diag(self._d(np.size(x)))


@dataclass(frozen=True)
class HMaxWeightField(SchedulingField):
    """``mu_i(x) = dh0/dxt_i(xt) * dxt_i/dx_i`` (chain rule)."""

    cost: CostFunction
    perturbation: Perturbation

    @property
    def kind(self):
        return f"h-maxweight-{self.perturbation.name}"

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        p = self.perturbation
        return self.cost.gradient(p.value(x)) * p.deriv(x)

    def jacobian(self, x):
        x = np.asarray(x, dtype=float)
        p = self.perturbation
        xt, l1, l2 = p.value(x), p.deriv(x), p.deriv2(x)
        J = self.cost.hessian(xt) * np.outer(l1, l1)
        J[np.diag_indices_from(J)] += self.cost.gradient(xt) * l2
        return J

    def potential(self) -> Callable:
        return perturbed_potential(self.cost, self.perturbation)


@dataclass(frozen=True)
class MuPThetaField(SchedulingField):
    """``P_theta(x) g(x)``; ``g = c`` for linear cost, else ``grad h0(xt)``."""

    cost: CostFunction
    theta: float
    kind = "mu-ptheta"

    def _g(self, x):
        if isinstance(self.cost, Linear):
            return self.cost.gradient(x), None
        pert = _exp_pert_unchecked(self.theta)
        xt = pert.value(x)
        g = self.cost.gradient(xt)
        dg = self.cost.hessian(xt) * pert.deriv(x)[None, :]
        return g, dg

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        g, _ = self._g(x)
        return p_theta(x, self.theta) * g

    def jacobian(self, x):
        x = np.asarray(x, dtype=float)
        g, dg = self._g(x)
        J = g[:, None] * p_theta_jacobian(x, self.theta)
        if dg is not None:
            J = J + p_theta(x, self.theta)[:, None] * dg
        return J


# -- custom expressions ------------------------------------------------------

_TOKEN = re.compile(r"\(|\)|[^\s()]+")

_UNARY = {"exp": np.exp, "log": np.log, "sin": np.sin, "cos": np.cos,
          "neg": np.negative, "abs": np.abs}
_NARY = {"+": np.add, "*": np.multiply}
_BINARY = {"-": np.subtract, "/": np.divide, "pow": np.power, "^": np.power}


def parse_expression(text: str):
    """Parse a prefix expression such as ``"(* 2 (exp x1))"`` into a nested tuple.

    Leaves are float constants or coordinates ``x1 .. xm`` (1-based).
    """
    tokens = _TOKEN.findall(text)
    pos = 0

    def parse():
        nonlocal pos
        if pos >= len(tokens):
            raise InvalidParams(f"unexpected end of expression {text!r}")
        tok = tokens[pos]
        pos += 1
        if tok == "(":
            if pos >= len(tokens):
                raise InvalidParams(f"unexpected end of expression {text!r}")
            op = tokens[pos]
            pos += 1
            args = []
            while pos < len(tokens) and tokens[pos] != ")":
                args.append(parse())
            if pos >= len(tokens):
                raise InvalidParams(f"missing ')' in {text!r}")
            pos += 1
            if op in _UNARY and len(args) == 1:
                return (op, *args)
            if op in _BINARY and len(args) == 2:
                return (op, *args)
            if op in _NARY and len(args) >= 1:
                return (op, *args)
            if op == "-" and len(args) == 1:
                return ("neg", *args)
            raise InvalidParams(f"bad operator or arity: ({op} ...{len(args)} args)")
        if tok == ")":
            raise InvalidParams(f"unexpected ')' in {text!r}")
        if re.fullmatch(r"x[1-9][0-9]*", tok):
            return ("x", int(tok[1:]) - 1)
        try:
            return ("const", float(tok))
        except ValueError:
            raise InvalidParams(f"unknown token {tok!r}") from None

    tree = parse()
    if pos != len(tokens):
        raise InvalidParams(f"trailing tokens in {text!r}")
    return tree


def eval_expression(tree, x: np.ndarray):
    op = tree[0]
    if op == "const":
        return tree[1]
    if op == "x":
        if tree[1] >= x.size:
            raise DimensionMismatch(f"expression uses x{tree[1] + 1} but state has {x.size}")
        return x[tree[1]]
    args = [eval_expression(a, x) for a in tree[1:]]
    if op in _UNARY:
        return _UNARY[op](args[0])
    if op in _BINARY:
        return _BINARY[op](args[0], args[1])
    out = args[0]
    for a in args[1:]:
        out = _NARY[op](out, a)
    return out


@dataclass(frozen=True)
class CustomField(SchedulingField):
    expressions: tuple
    trees: tuple = field(init=False, repr=False, compare=False)
    kind = "custom"

    def __post_init__(self):
        object.__setattr__(self, "expressions", tuple(self.expressions))
        object.__setattr__(self, "trees", tuple(parse_expression(e) for e in self.expressions))

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        if x.size != len(self.trees):
            raise DimensionMismatch(f"field has {len(self.trees)} coordinates, state has {x.size}")
        with np.errstate(all="ignore"):
            return np.array([float(eval_expression(t, x)) for t in self.trees])


# -- field specs -------------------------------------------------------------

FIELD_KINDS = {
    "maxweight": "mu(x) = D x (classic MaxWeight)",
    "h-maxweight-exp": "gradient of h0(xt), exponential perturbation (theta >= 1)",
    "h-maxweight-log": "gradient of h0(xt), logarithmic perturbation (theta > 0)",
    "mu-ptheta": "P_theta(x) times the cost gradient (throughput-optimal field)",
    "custom": "per-coordinate prefix expressions over x1..xm",
}


@dataclass(frozen=True)
class FieldSpec:
    kind: str
    theta: float = 1.0
    cost: CostFunction | None = None
    D: tuple | None = None
    expressions: tuple | None = None

    def to_dict(self) -> dict:
        d: dict = {"kind": self.kind}
        if self.kind in ("h-maxweight-exp", "h-maxweight-log", "mu-ptheta"):
            d["theta"] = self.theta
        if self.cost is not None:
            d["cost"] = self.cost.to_dict()
        if self.D is not None:
            d["D"] = list(self.D)
        if self.expressions is not None:
            d["expressions"] = list(self.expressions)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "FieldSpec":
        if "kind" not in d:
            raise InvalidParams("field spec needs a 'kind'")
        cost = cost_from_dict(d["cost"]) if d.get("cost") is not None else None
        return cls(
            kind=d["kind"],
            theta=float(d.get("theta", 1.0)),
            cost=cost,
            D=tuple(d["D"]) if d.get("D") is not None else None,
            expressions=tuple(d["expressions"]) if d.get("expressions") is not None else None,
        )


def make_field(spec: FieldSpec | dict) -> SchedulingField:
    if isinstance(spec, dict):
        spec = FieldSpec.from_dict(spec)
    kind = spec.kind
    if kind not in FIELD_KINDS:
        raise InvalidParams(f"unknown field kind {kind!r}")
    if kind == "maxweight":
        if spec.cost is not None and not isinstance(spec.cost, QuadraticDiag):
            raise UnsupportedCombination("maxweight takes a diagonal D, not a cost")
        D = spec.D if spec.D is not None else (spec.cost.D if spec.cost is not None else None)
        return MaxWeightField(D)
    if kind == "custom":
        if not spec.expressions:
            raise InvalidParams("custom field needs expressions")
        if spec.cost is not None:
            raise UnsupportedCombination("custom fields do not take a cost")
        return CustomField(spec.expressions)
    if spec.cost is None:
        raise UnsupportedCombination(f"{kind} requires a cost function")
    if kind == "h-maxweight-exp":
        if not spec.theta >= 1:
            raise InvalidParams("exponential perturbation needs theta >= 1")
        return HMaxWeightField(spec.cost, Perturbation("exp", spec.theta))
    if not spec.theta > 0:
        raise InvalidParams("theta must be positive")
    if kind == "h-maxweight-log":
        return HMaxWeightField(spec.cost, Perturbation("log", spec.theta))
    return MuPThetaField(spec.cost, spec.theta)


def tandem_fluid_gradient(x, params: TandemFluid, theta: float, variant: str = "exp") -> np.ndarray:
    """Weights for the two-queue tandem built on the fluid value function.

    ``variant="exp"`` is the gradient of ``h0(xt)`` under exponential
    perturbation; ``variant="modified"`` replaces each damping factor
    ``1 - exp(-x_i/theta)`` by ``1 - exp(-x_i/(theta (1 + x_j)))``.
    """
    if not params.nu2 > params.alpha1:
        raise InvalidParams("need nu2 > alpha1")
    x = np.asarray(x, dtype=float)
    if x.shape != (2,):
        raise DimensionMismatch("tandem state must have two entries")
    if variant == "exp":
        return HMaxWeightField(params, Perturbation("exp", theta))(x)
    if variant == "modified":
        return MuPThetaField(params, theta)(x)
    raise InvalidParams(f"unknown tandem variant {variant!r}")


@dataclass(frozen=True)
class FieldValue:
    mu: np.ndarray
    is_zero: bool


def normalize_field(mu) -> FieldValue:
    """``mu / ||mu||_1``; the zero vector is passed through and flagged."""
    mu = np.asarray(mu.mu if isinstance(mu, FieldValue) else mu, dtype=float)
    if np.any(mu < 0):
        raise DomainError("weights must be non-negative")
    if np.all(mu < ZERO_TOL):
        return FieldValue(np.zeros_like(mu), True)
    return FieldValue(mu / math.fsum(mu), False)


# -- numerical differentiation -----------------------------------------------

def _steps(x: np.ndarray, step) -> np.ndarray:
    if step is None:
        return 1e-5 * np.maximum(1.0, np.abs(x))
    h = np.broadcast_to(np.asarray(step, dtype=float), x.shape)
    if np.any(h <= 0):
        raise ValueError("step must be positive")
    return h


def numeric_gradient(f: Callable, x: Sequence[float], step=None) -> np.ndarray:
    """Central differences, switching to forward differences when ``x_i < h``.

    The default step is ``1e-5 * max(1, |x_i|)``.
    """
    x = np.asarray(x, dtype=float)
    h = _steps(x, step)
    grad = np.empty_like(x)
    try:
        for i in range(x.size):
            e = np.zeros_like(x)
            e[i] = h[i]
            if x[i] >= h[i]:
                grad[i] = (f(x + e) - f(x - e)) / (2 * h[i])
            else:
                grad[i] = (f(x + e) - f(x)) / h[i]
    except EvaluationError:
        raise
    except Exception as exc:
        raise EvaluationError(f"function evaluation failed near {x}: {exc}") from exc
    return grad


def numeric_jacobian(F: Callable, x: Sequence[float], step=None) -> np.ndarray:
    """Jacobian of a vector map, one column per coordinate (same stencil rules)."""
    x = np.asarray(x, dtype=float)
    h = _steps(x, step)
    f0 = np.asarray(F(x), dtype=float)
    J = np.empty((f0.size, x.size))
    try:
        for i in range(x.size):
            e = np.zeros_like(x)
            e[i] = h[i]
            if x[i] >= h[i]:
                J[:, i] = (np.asarray(F(x + e)) - np.asarray(F(x - e))) / (2 * h[i])
            else:
                J[:, i] = (np.asarray(F(x + e)) - f0) / h[i]
    except EvaluationError:
        raise
    except Exception as exc:
        raise EvaluationError(f"field evaluation failed near {x}: {exc}") from exc
    return J


def field_jacobian(fld: SchedulingField, x) -> np.ndarray:
    J = fld.jacobian(x)
    return numeric_jacobian(fld, x) if J is None else J
