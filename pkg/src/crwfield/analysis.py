"""Sampled numerical audits of throughput-optimality conditions for scheduling fields.

The conditions are asymptotic ("for all states beyond some radius"), so each
checker samples states on a sequence of l1-shells of increasing radius, measures
the relevant quantity and reports the smallest sampled radius from which every
outer shell stays within the bound.  Failing checks carry counterexample states
so a verdict can be reproduced by hand.  Nothing here is a proof.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import linprog

from .errors import FieldEvaluationError, GradientUnavailable, LPFailure
from .fields import (
    CostFunction,
    Perturbation,
    SchedulingField,
    field_jacobian,
    normalize_field,
)
from .model import Network, Variant, validate_network
from .policy import Policy
from .sim import arrival_block, service_block

MAX_COUNTEREXAMPLES = 20


@dataclass(frozen=True)
class SampleSpec:
    shell_radii: tuple = (1e2, 1e3, 1e4)
    points_per_shell: int = 512
    delta_norm_bound: float = 10.0  # C1: l-inf radius of perturbations
    small_coord_bound: float = 10.0  # C2: "small coordinate" level
    rng_seed: int = 0

    def __post_init__(self):
        radii = tuple(float(r) for r in self.shell_radii)
        if not radii or any(r <= 0 for r in radii) or any(b <= a for a, b in zip(radii, radii[1:])):
            raise ValueError("shell radii must be positive and strictly increasing")
        if self.points_per_shell < 1:
            raise ValueError("points_per_shell must be positive")
        object.__setattr__(self, "shell_radii", radii)

    def replace(self, **kw) -> "SampleSpec":
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        d.update(kw)
        return SampleSpec(**d)


@dataclass
class CheckReport:
    check: str
    passed: bool
    witness_threshold: float | None
    worst_violation: float
    counterexamples: list = field(default_factory=list)
    details: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "check": self.check,
            "passed": bool(self.passed),
            "witness_threshold": self.witness_threshold,
            "worst_violation": _jsonable(self.worst_violation),
            "counterexamples": _jsonable(self.counterexamples),
            "details": _jsonable(self.details),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, allow_nan=False)


def _jsonable(v):
    if isinstance(v, dict):
        return {k: _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, np.ndarray):
        return _jsonable(v.tolist())
    if isinstance(v, (np.floating, float)):
        f = float(v)
        return f if math.isfinite(f) else ("inf" if f > 0 else ("-inf" if f < 0 else "nan"))
    if isinstance(v, np.integer):
        return int(v)
    if isinstance(v, np.bool_):
        return bool(v)
    return v


# -- state sampling ----------------------------------------------------------

def shell_states(m: int, radius: float, n: int, rng: np.random.Generator) -> np.ndarray:
    """``n`` states uniform on ``{x >= 0, ||x||_1 = radius}``."""
    if m == 1:
        return np.full((n, 1), radius)
    return rng.dirichlet(np.ones(m), size=n) * radius


def face_states(m: int, radius: float, n_per_face: int, rng: np.random.Generator) -> np.ndarray:
    """States on the shell with one coordinate exactly zero, for every coordinate."""
    if m == 1:
        return np.empty((0, 1))
    out = []
    for i in range(m):
        rest = shell_states(m - 1, radius, n_per_face, rng)
        out.append(np.insert(rest, i, 0.0, axis=1))
    return np.vstack(out)


def near_face_states(m: int, radius: float, small: float, n_per_face: int,
                     rng: np.random.Generator, positive: bool = False):
    """States with coordinate ``i`` in ``[0, small)`` (``(0, small]`` if positive)
    and the remaining mass on the other coordinates.  Returns ``(states, coords)``."""
    if m == 1:
        xi = rng.uniform(0, min(small, radius), size=n_per_face)
        if positive:
            xi = min(small, radius) - xi
        return xi[:, None], np.zeros(n_per_face, dtype=int)
    states, coords = [], []
    for i in range(m):
        xi = rng.uniform(0, small, size=n_per_face)
        if positive:
            xi = small - xi
        rest = shell_states(m - 1, 1.0, n_per_face, rng) * (radius - xi)[:, None]
        states.append(np.insert(rest, i, xi, axis=1))
        coords.append(np.full(n_per_face, i))
    return np.vstack(states), np.concatenate(coords)


def _per_face(sample: SampleSpec, m: int) -> int:
    return max(8, sample.points_per_shell // (2 * m))


def _eval(fld: SchedulingField, x: np.ndarray) -> np.ndarray:
    try:
        mu = np.asarray(fld(x), dtype=float)
    except Exception as exc:  # noqa: BLE001
        raise FieldEvaluationError(f"field evaluation failed at {x.tolist()}: {exc}") from exc
    return mu


def _normalized(fld, x):
    return normalize_field(np.maximum(_eval(fld, x), 0.0)).mu


def _threshold(radii, shell_max, bound) -> int | None:
    """Index of the smallest radius from which all shells satisfy the bound."""
    k = len(radii)
    while k > 0 and shell_max[k - 1] <= bound:
        k -= 1
    return k if k < len(radii) else None


def _summarize(name, radii, shell_max, bound, records, details) -> CheckReport:
    """Common verdict logic.  ``records`` holds ``(radius_index, value, payload)``."""
    shell_max = [float(v) if math.isfinite(v) else math.inf for v in shell_max]
    k = _threshold(radii, shell_max, bound)
    passed = k is not None
    audited = shell_max[k:] if passed else shell_max
    worst = max(audited) if audited else 0.0
    lo = k if passed else 0
    bad = [r for r in records if r[0] >= lo and not (r[1] <= bound)]
    bad.sort(key=lambda r: -r[1] if math.isfinite(r[1]) else -math.inf)
    counter = [dict(r[2], radius=radii[r[0]], value=r[1]) for r in bad[:MAX_COUNTEREXAMPLES]]
    details = dict(details, shell_radii=list(radii), shell_max=shell_max, bound=bound)
    return CheckReport(name, passed, radii[k] if passed else None, worst, counter, details)


# -- conditions on the normalized field ---------------------------------------

def check_thm41_cond1(fld: SchedulingField, eps1: float, sample: SampleSpec = SampleSpec(), m: int = 2) -> CheckReport:
    """Local constancy of the normalized field far from the origin.

    For states on each shell and perturbations ``dx`` with ``||dx||_inf < C1``
    (kept inside the orthant) measures ``max_i |mubar_i(x + dx) - mubar_i(x)|``.
    """
    if not 0 < eps1 < 1:
        raise ValueError("eps1 must lie in (0, 1)")
    rng = np.random.default_rng(sample.rng_seed)
    C1 = sample.delta_norm_bound
    shell_max, records = [], []
    for r_idx, radius in enumerate(sample.shell_radii):
        X = np.vstack([
            shell_states(m, radius, sample.points_per_shell, rng),
            face_states(m, radius, _per_face(sample, m), rng),
        ])
        D = rng.uniform(-C1, C1, size=X.shape)
        D = np.maximum(D, -X)
        worst = 0.0
        for x, dx in zip(X, D):
            v = float(np.max(np.abs(_normalized(fld, x + dx) - _normalized(fld, x))))
            v = v if math.isfinite(v) else math.inf
            worst = max(worst, v)
            if v > eps1:
                records.append((r_idx, v, {"state": x, "perturbation": dx}))
        shell_max.append(worst)
    return _summarize("thm41-1", sample.shell_radii, shell_max, eps1, records, {"eps1": eps1, "C1": C1})


def check_thm41_cond2(fld: SchedulingField, eps2: float, sample: SampleSpec = SampleSpec(), m: int = 2) -> CheckReport:
    """Small coordinates get small normalized weight far from the origin.

    Samples shell states with some ``x_i < C2`` (including ``x_i = 0``) and
    measures ``mubar_i(x)`` on those coordinates.
    """
    if not 0 < eps2 < 1:
        raise ValueError("eps2 must lie in (0, 1)")
    rng = np.random.default_rng(sample.rng_seed)
    C2 = sample.small_coord_bound
    shell_max, records = [], []
    for r_idx, radius in enumerate(sample.shell_radii):
        X, _ = near_face_states(m, radius, C2, _per_face(sample, m) * 2, rng)
        X = np.vstack([X, face_states(m, radius, _per_face(sample, m), rng)])
        worst = 0.0
        for x in X:
            mubar = _normalized(fld, x)
            small = np.flatnonzero(x < C2)
            if small.size == 0:
                continue
            i = int(small[np.argmax(mubar[small])])
            v = float(mubar[i])
            worst = max(worst, v)
            if v > eps2:
                records.append((r_idx, v, {"state": x, "coordinate": i + 1}))
        shell_max.append(worst)
    return _summarize("thm41-2", sample.shell_radii, shell_max, eps2, records, {"eps2": eps2, "C2": C2})


# -- gradient-based conditions ---------------------------------------------------

def _jac(fld, x):
    try:
        J = field_jacobian(fld, x)
    except GradientUnavailable:
        raise
    except Exception as exc:  # noqa: BLE001
        raise FieldEvaluationError(f"Jacobian failed at {x.tolist()}: {exc}") from exc
    return J


def check_cor42(fld: SchedulingField, eps: float, sample: SampleSpec = SampleSpec(), m: int = 2) -> CheckReport:
    """Log-gradient condition plus vanishing weights on empty queues.

    Condition 1 is measured as ``||grad mu_i(x)|| / ||mu(x)||_1``, which equals
    ``mubar_i(x) * ||grad log mu_i(x)||``: the relative change of weight ``i``
    weighted by its share of the total.  The unweighted ``||grad log mu_i||``
    cannot stay bounded next to a face where ``mu_i`` must vanish, so it is
    reported in ``details`` but does not gate the verdict.

    Condition 2 is checked exactly: ``mu_i(x) == 0`` whenever ``x_i == 0``.
    A zero weight at a state with ``x_i > 0`` is reported as a strict
    positivity violation.
    """
    if not eps > 0:
        raise ValueError("eps must be positive")
    rng = np.random.default_rng(sample.rng_seed)
    C2 = sample.small_coord_bound
    shell_max, raw_log_max, records = [], [], []
    face_violations, positivity = [], []
    for r_idx, radius in enumerate(sample.shell_radii):
        near, _ = near_face_states(m, radius, C2, _per_face(sample, m), rng, positive=True)
        X = np.vstack([shell_states(m, radius, sample.points_per_shell, rng), near])
        X = X[np.all(X > 0, axis=1)]
        worst, worst_raw = 0.0, 0.0
        for x in X:
            with np.errstate(all="ignore"):
                mu = _eval(fld, x)
                J = _jac(fld, x)
                total = float(np.sum(np.abs(mu)))
                gnorm = np.linalg.norm(J, axis=1)
            for i in np.flatnonzero(mu <= 0):
                positivity.append({"state": x, "coordinate": int(i) + 1, "mu_i": float(mu[i])})
            with np.errstate(divide="ignore", invalid="ignore"):
                stat = gnorm / total if total > 0 else np.full(m, math.inf)
                raw = np.where(mu > 0, gnorm / mu, math.inf)
            stat = np.where(np.isfinite(stat), stat, math.inf)
            i = int(np.argmax(stat))
            v = float(stat[i])
            worst = max(worst, v)
            worst_raw = max(worst_raw, float(np.max(raw)))
            if v > eps:
                records.append((r_idx, v, {"state": x, "coordinate": i + 1,
                                           "log_gradient_norm": float(raw[i])}))
        shell_max.append(worst)
        raw_log_max.append(worst_raw)
        for x in face_states(m, radius, _per_face(sample, m), rng):
            mu = _eval(fld, x)
            for i in np.flatnonzero(x == 0):
                if mu[i] != 0.0:
                    face_violations.append({"state": x, "coordinate": int(i) + 1, "mu_i": float(mu[i])})
    report = _summarize("cor42", sample.shell_radii, shell_max, eps, records,
                        {"eps": eps, "raw_log_gradient_max": raw_log_max,
                         "face_violations": len(face_violations),
                         "positivity_violations": len(positivity)})
    if face_violations or positivity:
        report.passed = False
        report.witness_threshold = None
        extra = [dict(v, kind="nonzero weight on empty queue") for v in face_violations]
        extra += [dict(v, kind="non-positive weight on non-empty queue") for v in positivity]
        report.counterexamples = (report.counterexamples + extra)[:MAX_COUNTEREXAMPLES]
        report.worst_violation = max(report.worst_violation,
                                     max((abs(v["mu_i"]) for v in face_violations), default=0.0))
    return report


def check_remark3(fld: SchedulingField, eps: float, sample: SampleSpec = SampleSpec(), m: int = 2) -> CheckReport:
    """Informational: ``||grad mu_i(x)|| <= eps ||mu(x)||`` on the sampled shells."""
    if not eps > 0:
        raise ValueError("eps must be positive")
    rng = np.random.default_rng(sample.rng_seed)
    shell_max, records = [], []
    for r_idx, radius in enumerate(sample.shell_radii):
        X = np.vstack([
            shell_states(m, radius, sample.points_per_shell, rng),
            face_states(m, radius, _per_face(sample, m), rng),
        ])
        worst = 0.0
        for x in X:
            with np.errstate(all="ignore"):
                mu = _eval(fld, x)
                J = _jac(fld, x)
                norm = float(np.linalg.norm(mu))
                stat = np.linalg.norm(J, axis=1) / norm if norm > 0 else np.full(m, math.inf)
            stat = np.where(np.isfinite(stat), stat, math.inf)
            i = int(np.argmax(stat))
            v = float(stat[i])
            worst = max(worst, v)
            if v > eps:
                records.append((r_idx, v, {"state": x, "coordinate": i + 1}))
        shell_max.append(worst)
    report = _summarize("remark3", sample.shell_radii, shell_max, eps, records, {"eps": eps})
    report.details["informational"] = True
    return report


def _cost_dim(h0: CostFunction) -> int:
    for attr in ("c", "D"):
        if hasattr(h0, attr):
            return len(getattr(h0, attr))
    return 2  # tandem-style two-queue costs


# -- simple perturbations ----------------------------------------------------------

def _lipschitz_estimate(fn: Callable, xmax: float, h: float) -> float:
    xs = np.concatenate([[0.0], np.geomspace(1e-3, xmax, 400)])
    return float(np.max(np.abs(fn(xs + h) - fn(xs)) / h))


def check_cor43(h0: CostFunction, perturbation: str | Perturbation, eps: float,
                sample: SampleSpec = SampleSpec(), theta: float = 1.0, m: int | None = None) -> CheckReport:
    """Audit the sufficient conditions for ``mu = grad h0(xt)`` with a simple perturbation.

    Clauses, evaluated on the ray ``x = r e_i`` for each coordinate ``i`` and
    ``r`` over ``sample.shell_radii``:

    * ``lipschitz`` -- the finite-difference slope bound of ``dxt/dx`` agrees
      within 5% between steps ``h`` and ``h/10``;
    * ``growth`` -- ``dxt/dx`` strictly increases over the sampled radii and
      its per-radius increments do not shrink below half the first increment
      (a function converging to a finite limit must have shrinking increments);
    * ``ratio`` -- ``(dh0/dxt_i)(xt) / (dxt_i/dx_i)**(1 + eps) >= 1`` at the
      largest sampled radius.
    """
    if not isinstance(h0, CostFunction):
        raise GradientUnavailable("h0 must be a CostFunction with an analytic gradient")
    if not eps > 0:
        raise ValueError("eps must be positive")
    pert = perturbation if isinstance(perturbation, Perturbation) else Perturbation(perturbation, theta)
    radii = np.asarray(sample.shell_radii)
    if m is None:
        m = _cost_dim(h0)

    h = 1e-2
    L1 = _lipschitz_estimate(pert.deriv, radii[-1], h)
    L2 = _lipschitz_estimate(pert.deriv, radii[-1], h / 10)
    lipschitz_ok = abs(L1 - L2) <= 0.05 * max(L1, L2) or max(L1, L2) == 0.0

    lvals = np.asarray(pert.deriv(radii), dtype=float)
    inc = np.diff(lvals)
    growth_ok = bool(inc.size > 0 and np.all(inc > 0) and np.all(inc >= 0.5 * inc[0]))

    ratios = np.empty((m, radii.size))
    for i in range(m):
        for k, r in enumerate(radii):
            x = np.zeros(m)
            x[i] = r
            g = h0.gradient(pert.value(x))[i]
            ratios[i, k] = g / float(pert.deriv(r)) ** (1 + eps)
    ratio_ok = bool(np.all(ratios[:, -1] >= 1.0))

    counter = []
    if not growth_ok:
        counter.append({"clause": "growth", "radii": radii, "derivative": lvals})
    if not lipschitz_ok:
        counter.append({"clause": "lipschitz", "slope_h": L1, "slope_h_over_10": L2})
    for i in np.flatnonzero(ratios[:, -1] < 1.0):
        counter.append({"clause": "ratio", "coordinate": int(i) + 1,
                        "radius": float(radii[-1]), "value": float(ratios[i, -1])})
    passed = lipschitz_ok and growth_ok and ratio_ok
    worst = float(max(0.0, 1.0 - ratios[:, -1].min())) if m else 0.0
    return CheckReport(
        "cor43", passed, float(radii[-1]) if passed else None, worst, counter,
        {"perturbation": pert.name, "theta": pert.theta, "eps": eps,
         "lipschitz": {"passed": lipschitz_ok, "slope_h": L1, "slope_h_over_10": L2},
         "growth": {"passed": growth_ok, "derivative": lvals},
         "ratio": {"passed": ratio_ok, "values": ratios}},
    )


# -- dynamic programming inequality ---------------------------------------------

def relaxed_min_drift(g, net: Network, x) -> tuple[float, np.ndarray]:
    """``min <g, B u + alpha>`` over ``0 <= u <= 1``, ``C u <= 1`` and
    ``[B u + alpha]_i >= 0`` wherever ``x_i = 0``."""
    net = validate_network(net)
    g = np.asarray(g, dtype=float)
    x = np.asarray(x)
    B = net.B.astype(float)
    rows = [net.C.astype(float)]
    rhs = [np.ones(net.l_m)]
    empty = np.flatnonzero(x == 0)
    if empty.size:
        rows.append(-B[empty])
        rhs.append(net.alpha[empty])
    res = linprog(B.T @ g, A_ub=np.vstack(rows), b_ub=np.concatenate(rhs),
                  bounds=[(0.0, 1.0)] * net.l, method="highs")
    if res.status != 0:
        raise LPFailure(f"DP-inequality LP failed at x={x.tolist()}: {res.message}")
    return float(res.fun + g @ net.alpha), res.x


def check_dp_inequality(grad_h, cost: CostFunction, net: Network, states: Sequence, tol: float = 1e-9) -> CheckReport:
    """``min_{u in U(x)} <grad h(x), B u + alpha> <= -c(x)`` at every given state."""
    states = [np.asarray(s, dtype=float) for s in states]
    if not states:
        raise ValueError("states must be non-empty")
    worst = -math.inf
    counter = []
    margins = []
    for x in states:
        g = np.asarray(grad_h(x), dtype=float)
        val, u = relaxed_min_drift(g, net, x)
        slack = val + cost.value(x)
        margins.append(slack)
        worst = max(worst, slack)
        if slack > tol * max(1.0, abs(cost.value(x))):
            counter.append({"state": x, "min_drift": val, "cost": cost.value(x), "value": slack, "u": u})
    counter.sort(key=lambda r: -r["value"])
    passed = not counter
    return CheckReport("dp", passed, None, float(worst), counter[:MAX_COUNTEREXAMPLES],
                       {"margins": margins})


# -- drift estimation ----------------------------------------------------------

def next_states(policy: Policy, x, arrivals: np.ndarray, services: np.ndarray | None = None) -> np.ndarray:
    """Successor states of ``x`` for each row of ``arrivals`` (and service draws)."""
    net = policy.net
    x = np.asarray(x, dtype=np.int64)
    u = policy.select(x)
    if services is None:
        y = np.broadcast_to(x + net.B @ u, arrivals.shape).copy()
    else:
        y = x[None, :] + (services * u[None, :]) @ net.B.T
    if net.variant is Variant.TRUNCATED:
        y = np.maximum(y, 0)
    return y + arrivals


def estimate_drift(policy: Policy, net: Network, x, n_samples: int, seed: int,
                   V: Callable) -> tuple[float, float]:
    """Monte Carlo estimate of ``E[V(Q(t+1)) - V(x) | Q(t) = x]`` and its standard error."""
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    if not isinstance(policy, Policy) or policy.net is not net:
        policy = Policy(net, policy.field if isinstance(policy, Policy) else policy)
    x = np.asarray(x, dtype=np.int64)
    a = arrival_block(net, seed, 0, n_samples)
    s = service_block(net, seed, 0, n_samples)
    Y = next_states(policy, x, a, s)
    if hasattr(V, "values"):
        vals = np.asarray(V.values(Y), dtype=float)
        v0 = float(V.value(x))
    else:
        vals = np.array([V(y) for y in Y], dtype=float)
        v0 = float(V(x))
    d = vals - v0
    mean = math.fsum(d) / n_samples
    stderr = float(np.std(d, ddof=1) / math.sqrt(n_samples)) if n_samples > 1 else 0.0
    return mean, stderr


def empirical_eta_bar(policy: Policy, net: Network, states: Sequence, cost: CostFunction,
                      V: Callable, n_samples: int = 10_000, seed: int = 0) -> float:
    """Smallest constant with ``drift(x) <= -c(x)/2 + eta/2`` over the given states."""
    return max(
        2.0 * estimate_drift(policy, net, x, n_samples, seed, V)[0] + cost.value(x)
        for x in states
    )


CHECKS = {
    "thm41-1": check_thm41_cond1,
    "thm41-2": check_thm41_cond2,
    "cor42": check_cor42,
    "cor43": check_cor43,
    "dp": check_dp_inequality,
    "remark3": check_remark3,
}
