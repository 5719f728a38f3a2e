"""Performance metrics, scalar cost and safety constraint for one operation cycle.

Three tracking metrics are read off the position-error signal: the peak error
after departing the operation location, the peak error (overshoot) while at
the operation location, and the time-scaled L1 error over the dwell.  A
fourth, gain-space penalty term grows exponentially as the candidate gains
approach experimentally determined critical gains.  The scalar cost is their
weighted sum; the safety constraint is the dwell overshoot itself.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .plant import (GainVector, NoiseModel, PlantParams, ReferenceProfile,
                    SimTrace, NO_NOISE, simulate_cycle)


class MissingCriticalGains(ValueError):
    """Raised when the gain-proximity penalty is weighted in without critical gains."""


@dataclass(frozen=True)
class MetricBundle:
    c_sp: float     # mm, max |error| after departure
    c_ss: float     # mm*s, L1 dwell error scaled by the sample time
    c_st: float     # mm, max |error| during the dwell (overshoot)
    c_crit: float   # dimensionless gain-proximity penalty

    def as_array(self) -> np.ndarray:
        return np.array([self.c_sp, self.c_ss, self.c_st, self.c_crit])


@dataclass(frozen=True)
class CostWeights:
    """Weights of the scalar cost and the overshoot constraint bound.

    ``weights`` multiplies ``(c_sp, c_ss, c_st, c_crit)`` in that order.  The
    critical gains (kp_crit, kv_crit) are required whenever the fourth weight
    is nonzero.  ``rho_crit`` scales the proximity penalty to the magnitude of
    the tracking terms; its value is a free parameter of the method.
    """

    weights: tuple = (0.25, 0.25, 0.5, 0.0)
    constraint_bound: float = 3e-3          # mm, bound on the dwell overshoot
    rho_crit: float = 1e-4
    critical_gains: tuple | None = None     # (kp_crit, kv_crit)

    def __post_init__(self):
        if len(self.weights) != 4 or any(w < 0 for w in self.weights):
            raise ValueError("weights must be four nonnegative numbers")
        if self.constraint_bound <= 0:
            raise ValueError("constraint_bound must be positive")
        if self.weights[3] > 0 and self.critical_gains is not None:
            kp_c, kv_c = self.critical_gains
            if kp_c <= 0 or kv_c <= 0:
                raise ValueError("critical gains must be positive")


@dataclass(frozen=True)
class Observation:
    """One scored experiment: gains, measured cost and constraint."""

    gains: GainVector
    cost: float
    constraint: float
    metrics: MetricBundle
    diverged: bool = False


def compute_metrics(trace: SimTrace, gains: GainVector, weights: CostWeights):
    """Metrics, scalar cost and constraint value for a simulated cycle.

    Returns ``(bundle, cost, constraint)``.  The constraint equals the dwell
    overshoot component exactly.
    """
    e = np.abs(trace.position_error)
    c_st = float(e[trace.k_sp:trace.k_st + 1].max())
    c_sp = float(e[trace.k_st + 1:].max())
    c_ss = float(trace.sample_time * e[trace.k_sp:trace.k_st + 1].sum())

    w = weights.weights
    if weights.critical_gains is not None:
        kp_c, kv_c = weights.critical_gains
        c_crit = weights.rho_crit * math.exp(gains.kp / kp_c) * math.exp(gains.kv / kv_c)
    elif w[3] > 0:
        raise MissingCriticalGains(
            "critical gains are required when the proximity penalty is weighted in")
    else:
        c_crit = 0.0

    bundle = MetricBundle(c_sp=c_sp, c_ss=c_ss, c_st=c_st, c_crit=c_crit)
    cost = float(np.dot(w, bundle.as_array()))
    return bundle, cost, c_st


def evaluate_candidate(gains: GainVector, plant: PlantParams, profile: ReferenceProfile,
                       weights: CostWeights, noise: NoiseModel = NO_NOISE,
                       feedforward="accel",
                       cost_ceiling: float | None = None) -> Observation:
    """Run one cycle with the candidate gains and score it.

    Numerically diverged traces never abort a campaign: they are mapped to a
    large finite ceiling (``cost_ceiling`` when the campaign provides one,
    otherwise 1e6) and a constraint of ten times the constraint bound.
    """
    trace = simulate_cycle(plant, gains, profile, noise, feedforward=feedforward)
    bundle, cost, constraint = compute_metrics(trace, gains, weights)
    if trace.diverged:
        cost = cost_ceiling if cost_ceiling is not None else 1e6
        constraint = 10.0 * weights.constraint_bound
    return Observation(gains=gains, cost=cost, constraint=constraint,
                       metrics=bundle, diverged=trace.diverged)


METRIC_CSV_HEADER = "kp,kv,ti,c_sp,c_ss,c_st,c_crit,cost,constraint"


def observations_to_csv(observations, path):
    """Write scored candidates as CSV rows under ``METRIC_CSV_HEADER``."""
    with open(path, "w") as f:
        f.write(METRIC_CSV_HEADER + "\n")
        for ob in observations:
            m = ob.metrics
            f.write(f"{ob.gains.kp!r},{ob.gains.kv!r},{ob.gains.ti!r},"
                    f"{m.c_sp!r},{m.c_ss!r},{m.c_st!r},{m.c_crit!r},"
                    f"{ob.cost!r},{ob.constraint!r}\n")
