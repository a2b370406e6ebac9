"""Slotted-time simulation of a controlled random walk under a myopic policy.

Each run starts from the empty state.  Per slot the policy picks a control
from the current backlog, then the queueing law is applied with the slot's
arrivals (and service outcomes when service is random).  All randomness comes
from :mod:`crwfield.rng`, keyed by ``(seed, slot, queue-or-activity)``.
"""

from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy.stats import poisson

from . import rng
from .errors import CRWError, InvalidRate, NegativeStateViolation
from .fields import CostFunction, FieldSpec, Linear, SchedulingField, make_field
from .model import ArrivalDist, Network, ServiceDist, Variant, alpha_vector, validate_network
from .policy import Policy

SWEEP_COLUMNS = (
    "policy", "alpha", "seed", "horizon", "avg_cost", "avg_backlog",
    "max_backlog", "idle_fraction", "total_excess",
)


# -- randomness --------------------------------------------------------------

def arrival_block(net: Network, seed: int, start: int, n: int) -> np.ndarray:
    """Arrivals for slots ``start .. start+n-1`` as an ``(n, m)`` int array."""
    alpha = net.alpha
    if net.arrival_dist is ArrivalDist.BERNOULLI and np.any(alpha > 1):
        raise InvalidRate("Bernoulli arrival rates must not exceed 1")
    slots = np.arange(start, start + n, dtype=np.uint64)[:, None]
    lanes = np.arange(net.m, dtype=np.uint64)[None, :]
    u = rng.uniforms(seed, slots, lanes, rng.ARRIVALS)
    if net.arrival_dist is ArrivalDist.BERNOULLI:
        return (u < alpha).astype(np.int64)
    a = poisson.ppf(u, np.broadcast_to(alpha, u.shape))
    return np.nan_to_num(np.maximum(a, 0), nan=0).astype(np.int64)


def sample_arrivals(net: Network, seed: int, slot: int) -> np.ndarray:
    """Arrival vector of a single slot (same values as :func:`arrival_block`)."""
    return arrival_block(net, seed, slot, 1)[0]


def service_block(net: Network, seed: int, start: int, n: int) -> np.ndarray | None:
    """Per-activity service success indicators, or ``None`` when deterministic."""
    if net.service_dist is ServiceDist.DETERMINISTIC:
        return None
    slots = np.arange(start, start + n, dtype=np.uint64)[:, None]
    lanes = np.arange(net.l, dtype=np.uint64)[None, :]
    u = rng.uniforms(seed, slots, lanes, rng.SERVICE)
    return (u < net.service_prob).astype(np.int64)


# -- one slot ----------------------------------------------------------------

@dataclass(frozen=True)
class StepOutcome:
    next_state: np.ndarray
    excess: np.ndarray
    arrivals: np.ndarray
    service_matrix_used: np.ndarray


def step(net: Network, x, u, arrivals, service_matrix=None) -> StepOutcome:
    """Apply the queueing law for one slot.

    Truncated: ``next = [x + B u]^+ + a`` and ``excess = max(0, -(x + B u))``.
    MeynRegion: ``next = x + B u + a``; a negative result raises
    :class:`NegativeStateViolation`.
    """
    x = np.asarray(x, dtype=np.int64)
    u = np.asarray(u, dtype=np.int64)
    a = np.asarray(arrivals, dtype=np.int64)
    Bt = net.B if service_matrix is None else np.asarray(service_matrix, dtype=np.int64)
    y = x + Bt @ u
    if net.variant is Variant.TRUNCATED:
        z = np.maximum(0, -y)
        return StepOutcome(y + z + a, z, a, Bt)
    if np.any(y < 0):
        raise NegativeStateViolation(
            f"control {u.tolist()} drives state {x.tolist()} to {y.tolist()}"
        )
    return StepOutcome(y + a, np.zeros_like(y), a, Bt)


# -- runs --------------------------------------------------------------------

@dataclass(frozen=True)
class SimMetrics:
    horizon: int
    avg_cost: float
    avg_backlog: float
    max_backlog: int
    idle_fraction: float
    total_excess: int
    seed: int


@dataclass(frozen=True)
class Trace:
    states: np.ndarray  # (n, m): Q(0) .. Q(n-1)
    controls: np.ndarray  # (n, l)
    costs: np.ndarray  # (n,)
    final_state: np.ndarray

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        m, l = self.states.shape[1], self.controls.shape[1]
        w.writerow(["t", *(f"q_{i + 1}" for i in range(m)), *(f"u_{j + 1}" for j in range(l)), "cost"])
        for t in range(self.states.shape[0]):
            w.writerow([t, *self.states[t].tolist(), *self.controls[t].tolist(), repr(float(self.costs[t]))])
        return buf.getvalue()


@dataclass(frozen=True, eq=False)
class RunConfig:
    net: Network
    policy: Policy | SchedulingField
    horizon: int
    seed: int
    cost: CostFunction
    record_trace: bool = False

    def __post_init__(self):
        if int(self.horizon) < 1:
            raise ValueError("horizon must be >= 1")
        net = validate_network(self.net)
        object.__setattr__(self, "net", net)
        if not isinstance(self.policy, Policy) or self.policy.net is not net:
            fld = self.policy.field if isinstance(self.policy, Policy) else self.policy
            object.__setattr__(self, "policy", Policy(net, fld))


def run(config: RunConfig) -> tuple[SimMetrics, Trace]:
    """Simulate and return both the metrics and the full state trajectory."""
    net, pol = config.net, config.policy
    n, seed = int(config.horizon), int(config.seed)
    m = net.m
    arrivals = arrival_block(net, seed, 0, n)
    services = service_block(net, seed, 0, n)
    BU = pol.BU
    truncated = net.variant is Variant.TRUNCATED
    meyn_region = not truncated

    states = np.empty((n, m), dtype=np.int64)
    choice = np.empty(n, dtype=np.int64)
    total_excess = 0
    cache: dict[bytes, int] = {}
    x = np.zeros(m, dtype=np.int64)
    for t in range(n):
        states[t] = x
        key = x.tobytes()
        k = cache.get(key)
        if k is None:
            k = pol.select_index(x)
            if len(cache) < 500_000:
                cache[key] = k
        choice[t] = k
        if services is None:
            y = x + BU[k]
        else:
            y = x + (net.B * services[t]) @ pol.controls[k]
        if truncated:
            neg = y < 0
            if neg.any():
                total_excess += int(-y[neg].sum())
                y[neg] = 0
        elif meyn_region and (y < 0).any():
            raise NegativeStateViolation(f"slot {t}: state {x.tolist()} -> {y.tolist()}")
        x = y + arrivals[t]

    costs = np.asarray(config.cost.values(states), dtype=float)
    backlog = states.sum(axis=1)
    controls = pol.controls[choice]
    metrics = SimMetrics(
        horizon=n,
        avg_cost=math.fsum(costs) / n,
        avg_backlog=int(backlog.sum()) / n,
        max_backlog=int(backlog.max()),
        idle_fraction=float(np.count_nonzero(~controls.any(axis=1))) / n,
        total_excess=int(total_excess),
        seed=seed,
    )
    return metrics, Trace(states, controls, costs, x)


def simulate(config: RunConfig):
    """Metrics of one run; with ``record_trace`` returns ``(metrics, trace)``."""
    metrics, trace = run(config)
    return (metrics, trace) if config.record_trace else metrics


# -- sweeps ------------------------------------------------------------------

@dataclass(frozen=True)
class SweepRow:
    policy: str
    alpha: float
    seed: int
    metrics: SimMetrics

    def as_dict(self) -> dict:
        d = asdict(self.metrics)
        return {
            "policy": self.policy,
            "alpha": self.alpha,
            "seed": self.seed,
            "horizon": d["horizon"],
            "avg_cost": d["avg_cost"],
            "avg_backlog": d["avg_backlog"],
            "max_backlog": d["max_backlog"],
            "idle_fraction": d["idle_fraction"],
            "total_excess": d["total_excess"],
        }


def _as_field(f) -> SchedulingField:
    if isinstance(f, SchedulingField):
        return f
    return make_field(f)


def _cell(args) -> SweepRow:
    net, label, fld, alpha, seed, horizon, cost = args
    try:
        cell_net = net.with_alpha(alpha_vector(net, alpha))
        metrics = simulate(RunConfig(cell_net, Policy(cell_net, fld, label), horizon, seed, cost))
    except CRWError as exc:
        raise type(exc)(f"sweep cell policy={label!r} alpha={alpha} seed={seed}: {exc}") from exc
    return SweepRow(label, float(alpha), int(seed), metrics)


def sweep(
    net: Network,
    policies: Mapping[str, SchedulingField | FieldSpec | dict],
    alphas: Sequence[float],
    seeds: Sequence[int],
    horizon: int,
    cost: CostFunction | None = None,
    jobs: int = 1,
) -> list[SweepRow]:
    """Run every (policy, alpha, seed) cell; rows sorted by (policy, alpha, seed).

    ``alphas`` are scalar loads expanded onto the network's arrival pattern
    (see :func:`crwfield.model.alpha_vector`).
    """
    net = validate_network(net)
    if not policies or not len(alphas) or not len(seeds):
        raise ValueError("sweep grid must be non-empty")
    cost = cost if cost is not None else Linear((1.0,) * net.m)
    fields = {label: _as_field(f) for label, f in policies.items()}
    cells = [
        (net, label, fld, float(a), int(s), int(horizon), cost)
        for label, fld in fields.items() for a in alphas for s in seeds
    ]
    if jobs > 1 and len(cells) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            rows = list(ex.map(_cell, cells))
    else:
        rows = [_cell(c) for c in cells]
    rows.sort(key=lambda r: (r.policy, r.alpha, r.seed))
    return rows


def rows_to_csv(rows: Iterable[SweepRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SWEEP_COLUMNS)
    for r in rows:
        d = r.as_dict()
        w.writerow([repr(v) if isinstance(v, float) else v for v in (d[c] for c in SWEEP_COLUMNS)])
    return buf.getvalue()


def mean_by(rows: Iterable[SweepRow], metric: str = "avg_cost") -> dict[tuple[str, float], float]:
    """Average a metric over seeds for each (policy, alpha) pair."""
    acc: dict[tuple[str, float], list[float]] = {}
    for r in rows:
        acc.setdefault((r.policy, r.alpha), []).append(getattr(r.metrics, metric))
    return {k: math.fsum(v) / len(v) for k, v in acc.items()}
