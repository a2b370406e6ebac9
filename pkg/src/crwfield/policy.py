"""Myopic control selection: ``argmin_u <mu(x), B u + alpha>`` over binary controls.

The argmin is taken over the enumerated feasible controls (restricted at empty
queues for the MeynRegion variant).  Ties are broken towards the
lexicographically smallest control.  Candidate minimisers are first screened
in floating point and then compared in exact rational arithmetic, so the
decision does not depend on summation order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .errors import DimensionMismatch, EmptyRegion
from .fields import ZERO_TOL, SchedulingField
from .model import Network, Variant, feasible_controls, validate_network


def _region_mask(net: Network, BU_alpha: np.ndarray, x: np.ndarray) -> np.ndarray:
    empty = x == 0
    if net.variant is not Variant.MEYN_REGION or not empty.any():
        return np.ones(BU_alpha.shape[0], dtype=bool)
    return np.all(BU_alpha[:, empty] >= 0, axis=1)


def control_region(net: Network, x) -> np.ndarray:
    """Binary controls admissible at state ``x`` (rows, lexicographic order)."""
    net = validate_network(net)
    x = np.asarray(x)
    U = feasible_controls(net)
    mask = _region_mask(net, U @ net.B.T + net.alpha, x)
    if not mask.any():
        raise EmptyRegion(f"no admissible binary control at x={x.tolist()}")
    return U[mask]


def objective_value(mu, net: Network, u) -> float:
    """``<mu, B u + alpha>``."""
    mu = np.asarray(mu, dtype=float)
    u = np.asarray(u)
    if mu.shape != (net.m,) or u.shape != (net.l,):
        raise DimensionMismatch("mu must have length m and u length l")
    v = net.B @ u + net.alpha
    return math.fsum(mu * v)


def _exact_argmin(mu: np.ndarray, BU: np.ndarray, idx: np.ndarray) -> int:
    nz = np.flatnonzero(mu)
    fr = [Fraction(float(mu[i])) for i in nz]
    best, best_val = idx[0], None
    for k in idx:
        row = BU[k]
        val = sum((f * int(row[i]) for f, i in zip(fr, nz)), Fraction(0))
        if best_val is None or val < best_val:
            best, best_val = k, val
    return int(best)


@dataclass(frozen=True, eq=False)
class Policy:
    """A scheduling field bound to a network, with the control table cached."""

    net: Network
    field: SchedulingField
    label: str = ""
    controls: np.ndarray = field(init=False, repr=False)
    BU: np.ndarray = field(init=False, repr=False)
    BU_alpha: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        net = validate_network(self.net)
        object.__setattr__(self, "net", net)
        U = feasible_controls(net)
        BU = U @ net.B.T
        object.__setattr__(self, "controls", U)
        object.__setattr__(self, "BU", BU)
        object.__setattr__(self, "BU_alpha", BU + net.alpha)

    def weights(self, x) -> np.ndarray:
        return np.asarray(self.field(np.asarray(x, dtype=float)), dtype=float)

    def select_index(self, x, mu=None) -> int:
        x = np.asarray(x)
        if mu is None:
            mu = self.weights(x)
        mask = _region_mask(self.net, self.BU_alpha, x)
        idx = np.flatnonzero(mask)
        if idx.size == 0:
            raise EmptyRegion(f"no admissible binary control at x={x.tolist()}")
        if np.all(np.abs(mu) < ZERO_TOL):
            # zero field idles; u = 0 is admissible whenever alpha >= 0
            return int(idx[0])
        scores = self.BU[idx] @ mu
        best = scores.min()
        tol = 1e-9 * (np.abs(mu).sum() * max(1, np.abs(self.BU).max()) + 1e-300)
        cand = idx[scores <= best + tol]
        if cand.size == 1:
            return int(cand[0])
        return _exact_argmin(mu, self.BU, cand)

    def select(self, x, mu=None) -> np.ndarray:
        return self.controls[self.select_index(x, mu)]

    def __call__(self, x) -> np.ndarray:
        return self.select(x)


def select_control(policy: Policy | SchedulingField, net: Network, x) -> np.ndarray:
    """Myopic control at ``x``; lexicographically smallest among minimisers."""
    if not isinstance(policy, Policy) or policy.net is not net:
        fld = policy.field if isinstance(policy, Policy) else policy
        policy = Policy(net, fld)
    return policy.select(x)
