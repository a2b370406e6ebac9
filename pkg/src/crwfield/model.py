"""Controlled random walk networks: topology, constraints and stabilizability.

A network is described by the mean topology matrix ``B`` (m queues by l
activities), the binary constituency matrix ``C`` (resource constraints
``C u <= 1``) and the arrival-rate vector ``alpha``.  :func:`validate_network`
turns a raw :class:`NetworkSpec` into an immutable :class:`Network` carrying
the enumerated feasible binary controls.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np
from scipy.optimize import linprog

from .errors import (
    DimensionMismatch,
    InvalidRate,
    LPFailure,
    NegativeRate,
    NonBinaryConstituency,
    TooManyControls,
)

DEFAULT_CONTROL_CAP = 20


class Variant(str, enum.Enum):
    TRUNCATED = "truncated"  # Q' = [Q + B U]^+ + A
    MEYN_REGION = "meyn-region"  # Q' = Q + B U + A, U restricted at empty queues


class ArrivalDist(str, enum.Enum):
    BERNOULLI = "bernoulli"
    POISSON = "poisson"


class ServiceDist(str, enum.Enum):
    DETERMINISTIC = "deterministic"
    BERNOULLI = "bernoulli"


def _frozen(a, dtype) -> np.ndarray:
    arr = np.array(a, dtype=dtype)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class NetworkSpec:
    """Raw, unvalidated network description (mirrors the JSON document)."""

    B: Any
    C: Any
    alpha: Any
    variant: Variant = Variant.TRUNCATED
    arrival_dist: ArrivalDist = ArrivalDist.BERNOULLI
    service_dist: ServiceDist = ServiceDist.DETERMINISTIC
    service_prob: float = 1.0
    name: str = ""

    def with_alpha(self, alpha) -> "NetworkSpec":
        return NetworkSpec(
            self.B, self.C, alpha, self.variant, self.arrival_dist,
            self.service_dist, self.service_prob, self.name,
        )

    def to_dict(self) -> dict:
        B = np.asarray(self.B)
        return {
            "m": int(B.shape[0]),
            "l": int(B.shape[1]),
            "B": np.asarray(self.B).astype(int).tolist(),
            "C": np.asarray(self.C).astype(int).tolist(),
            "alpha": [float(a) for a in np.asarray(self.alpha, dtype=float)],
            "variant": Variant(self.variant).value,
            "arrival_dist": ArrivalDist(self.arrival_dist).value,
            "service_dist": ServiceDist(self.service_dist).value,
            "service_prob": float(self.service_prob),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkSpec":
        spec = cls(
            B=d["B"],
            C=d["C"],
            alpha=d["alpha"],
            variant=Variant(d.get("variant", "truncated")),
            arrival_dist=ArrivalDist(d.get("arrival_dist", "bernoulli")),
            service_dist=ServiceDist(d.get("service_dist", "deterministic")),
            service_prob=float(d.get("service_prob", 1.0)),
            name=d.get("name", ""),
        )
        B = np.asarray(spec.B)
        if B.ndim != 2:
            raise DimensionMismatch("B must be a 2-D array")
        if "m" in d and int(d["m"]) != B.shape[0]:
            raise DimensionMismatch(f"m={d['m']} but B has {B.shape[0]} rows")
        if "l" in d and int(d["l"]) != B.shape[1]:
            raise DimensionMismatch(f"l={d['l']} but B has {B.shape[1]} columns")
        return spec

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_json(cls, text: str) -> "NetworkSpec":
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True, eq=False)
class Network:
    """A validated network.  Arrays are read-only."""

    B: np.ndarray
    C: np.ndarray
    alpha: np.ndarray
    variant: Variant
    arrival_dist: ArrivalDist
    service_dist: ServiceDist
    service_prob: float
    name: str
    controls: np.ndarray | None = field(repr=False)

    @property
    def m(self) -> int:
        return self.B.shape[0]

    @property
    def l(self) -> int:  # noqa: E743
        return self.B.shape[1]

    @property
    def l_m(self) -> int:
        return self.C.shape[0]

    def spec(self) -> NetworkSpec:
        return NetworkSpec(
            self.B, self.C, self.alpha, self.variant, self.arrival_dist,
            self.service_dist, self.service_prob, self.name,
        )

    def with_alpha(self, alpha) -> "Network":
        return validate_network(self.spec().with_alpha(alpha))

    def with_variant(self, variant: Variant) -> "Network":
        s = self.spec()
        return validate_network(
            NetworkSpec(s.B, s.C, s.alpha, Variant(variant), s.arrival_dist,
                        s.service_dist, s.service_prob, s.name)
        )


ValidatedNetwork = Network


def validate_network(spec: NetworkSpec | Network, control_cap: int = DEFAULT_CONTROL_CAP) -> Network:
    """Check shapes and entry domains, then precompute the feasible controls.

    Networks with more than ``control_cap`` activities are accepted but carry
    ``controls=None``; only the LP-based routines work on them.
    """
    if isinstance(spec, Network):
        return spec
    B = np.asarray(spec.B, dtype=float)
    C = np.asarray(spec.C, dtype=float)
    alpha = np.asarray(spec.alpha, dtype=float)
    if B.ndim != 2:
        raise DimensionMismatch(f"B must be 2-D, got shape {B.shape}")
    m, l = B.shape
    if C.ndim != 2 or C.shape[1] != l:
        raise DimensionMismatch(f"C must have {l} columns, got shape {C.shape}")
    if alpha.shape != (m,):
        raise DimensionMismatch(f"alpha must have length {m}, got shape {alpha.shape}")
    if not np.all(np.isin(C, (0.0, 1.0))):
        raise NonBinaryConstituency("C entries must be 0 or 1")
    if not np.array_equal(B, np.round(B)):
        raise DimensionMismatch("B entries must be integers")
    if np.any(alpha < 0) or not np.all(np.isfinite(alpha)):
        raise NegativeRate("arrival rates must be finite and non-negative")
    arrival_dist = ArrivalDist(spec.arrival_dist)
    if arrival_dist is ArrivalDist.BERNOULLI and np.any(alpha > 1):
        raise InvalidRate("Bernoulli arrival rates must not exceed 1")
    if not 0.0 <= spec.service_prob <= 1.0:
        raise InvalidRate("service_prob must lie in [0, 1]")

    B_int = _frozen(B, np.int64)
    C_int = _frozen(C, np.int64)
    controls = _enumerate_controls(C_int) if l <= control_cap else None
    return Network(
        B=B_int,
        C=C_int,
        alpha=_frozen(alpha, np.float64),
        variant=Variant(spec.variant),
        arrival_dist=arrival_dist,
        service_dist=ServiceDist(spec.service_dist),
        service_prob=float(spec.service_prob),
        name=spec.name,
        controls=controls,
    )


def _enumerate_controls(C: np.ndarray) -> np.ndarray:
    l = C.shape[1]
    codes = np.arange(2**l, dtype=np.int64)
    shifts = np.arange(l - 1, -1, -1, dtype=np.int64)
    U = ((codes[:, None] >> shifts[None, :]) & 1).astype(np.int64)
    U = U[np.all(U @ C.T <= 1, axis=1)]
    U.setflags(write=False)
    return U


def feasible_controls(net: Network | NetworkSpec, cap: int = DEFAULT_CONTROL_CAP) -> np.ndarray:
    """All binary ``u`` with ``C u <= 1`` as rows, in lexicographic order."""
    net = validate_network(net, control_cap=max(cap, DEFAULT_CONTROL_CAP))
    if net.l > cap:
        raise TooManyControls(f"l={net.l} exceeds the enumeration cap {cap}")
    if net.controls is None:
        return _enumerate_controls(net.C)
    return net.controls


@dataclass(frozen=True)
class StabilizabilityReport:
    stabilizable: bool
    margin: float
    witness_u: np.ndarray


def check_stabilizable(net: Network | NetworkSpec, tol: float = 1e-9) -> StabilizabilityReport:
    """Largest uniform drain rate ``delta`` reachable by a relaxed control.

    Solves ``max delta`` s.t. ``0 <= u <= 1``, ``C u <= 1``,
    ``B u + alpha <= -delta``.  ``delta > tol`` certifies that the zero
    velocity lies inside the velocity set.
    """
    net = validate_network(net)
    m, l = net.m, net.l
    cost = np.zeros(l + 1)
    cost[-1] = -1.0
    A_ub = np.block([
        [net.C.astype(float), np.zeros((net.l_m, 1))],
        [net.B.astype(float), np.ones((m, 1))],
    ])
    b_ub = np.concatenate([np.ones(net.l_m), -net.alpha])
    bounds = [(0.0, 1.0)] * l + [(None, None)]
    res = linprog(cost, A_ub=A_ub, b_ub=b_ub, bounds=bounds, method="highs")
    if res.status != 0:
        raise LPFailure(f"stabilizability LP failed: {res.message}")
    margin = float(res.x[-1])
    witness = np.clip(res.x[:l], 0.0, 1.0)
    return StabilizabilityReport(margin > tol, margin, witness)


def decompose_control(net: Network, u: Sequence[float]) -> np.ndarray:
    """Convex weights over ``feasible_controls(net)`` reproducing relaxed ``u``.

    Returns a weight vector ``lam >= 0`` with ``sum(lam) == 1`` and
    ``lam @ controls == u`` (to LP tolerance).
    """
    U = feasible_controls(net).astype(float)
    u = np.asarray(u, dtype=float)
    k = U.shape[0]
    A_eq = np.vstack([U.T, np.ones((1, k))])
    b_eq = np.concatenate([u, [1.0]])
    res = linprog(np.zeros(k), A_eq=A_eq, b_eq=b_eq, bounds=[(0, None)] * k, method="highs")
    if res.status != 0:
        raise LPFailure(f"u is not a convex combination of feasible controls: {res.message}")
    return res.x


# -- built-in networks -------------------------------------------------------

FIG1_B = (
    (-1, 0, 0, 0, 0, 0),
    (1, -1, 0, 0, 1, 0),
    (0, 1, -1, -1, 0, 0),
    (0, 0, 1, 0, 0, -1),
    (0, 0, 0, 1, -1, 0),
)
FIG1_C = (
    (1, 0, 0, 0, 0, 0),
    (0, 1, 0, 0, 0, 0),
    (0, 0, 1, 1, 0, 0),
    (0, 0, 0, 0, 0, 1),
    (0, 0, 0, 0, 1, 0),
)
TANDEM_B = ((-1, 0), (1, -1))
TANDEM_C = ((1, 0), (0, 1))


def fig1_loop(alpha: float = 0.5, **kwargs) -> Network:
    """Five-queue network with a reverse loop; traffic enters at queue 1.

    Queue 3 forwards either to queue 4 (exit path) or to queue 5, which feeds
    back into queue 2, hence ``u3 + u4 <= 1``.
    """
    return validate_network(
        NetworkSpec(FIG1_B, FIG1_C, (alpha, 0, 0, 0, 0), name="fig1-loop", **kwargs)
    )


def tandem2(alpha1: float = 0.5, **kwargs) -> Network:
    """Two queues in series, each with unit service; arrivals at queue 1."""
    return validate_network(
        NetworkSpec(TANDEM_B, TANDEM_C, (alpha1, 0), name="tandem2", **kwargs)
    )


BUILTIN_NETWORKS = {
    "fig1-loop": (fig1_loop, "five-queue network with a reverse loop (u3 + u4 <= 1)"),
    "tandem2": (tandem2, "two unit-rate queues in tandem, arrivals at queue 1"),
}


def builtin_network(name: str, alpha: float | None = None, **kwargs) -> Network:
    try:
        factory, _ = BUILTIN_NETWORKS[name]
    except KeyError:
        raise KeyError(f"unknown network {name!r}; known: {sorted(BUILTIN_NETWORKS)}") from None
    return factory(alpha, **kwargs) if alpha is not None else factory(**kwargs)


def load_network(source: str | dict) -> Network:
    """Resolve a built-in name, a JSON document (dict), or a JSON file path."""
    if isinstance(source, dict):
        if "builtin" in source:
            alpha = source.get("alpha")
            net = builtin_network(source["builtin"])
            if alpha is not None:
                net = net.with_alpha(alpha_vector(net, alpha))
            return net
        return validate_network(NetworkSpec.from_dict(source))
    if source in BUILTIN_NETWORKS:
        return builtin_network(source)
    with open(source, encoding="utf-8") as fh:
        return validate_network(NetworkSpec.from_dict(json.load(fh)))


def alpha_vector(net: Network, alpha) -> np.ndarray:
    """Expand a scalar load onto the network's arrival pattern.

    A scalar rescales the built-in pattern (arrivals only where the current
    ``alpha`` is positive, or at queue 1 when ``alpha`` is zero).
    """
    if np.ndim(alpha) > 0:
        return np.asarray(alpha, dtype=float)
    pattern = (net.alpha > 0).astype(float)
    if not pattern.any():
        pattern[0] = 1.0
    return pattern * float(alpha)

