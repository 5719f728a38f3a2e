"""Constrained Bayesian optimization campaign for the cascade gains.

A campaign evaluates a Latin-hypercube initial design, fits one Gaussian
process to the measured cost and one to the measured overshoot constraint,
then repeatedly samples the maximizer of the constrained expected
improvement.  Kernel hyperparameters are fitted once on the initial design
and kept fixed afterwards; refitting them every iteration can destabilize
convergence.  The loop stops once the acquisition value has dropped below a
fraction of its running maximum for a number of consecutive iterations, or
when the iteration budget runs out.

Either two gains (kp, kv; integral time pinned) or three gains (kp, kv, ti)
can be tuned, depending on the dimension of the bounds box.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import gp
from .acquisition import AcquisitionContext, PsoConfig, argmax_grid, argmax_pso
from .metrics import CostWeights, Observation, evaluate_candidate
from .plant import GainVector, NoiseModel, PlantParams, ReferenceProfile, NO_NOISE

FALLBACK_CEILING = 1e6


def latin_hypercube(m: int, dims: int, seed) -> np.ndarray:
    """m points in the unit box, one per axis-aligned stratum in every dimension.

    Each dimension's coordinates occupy each interval [(j-1)/m, j/m) exactly
    once; placement within a stratum is uniform and the per-dimension stratum
    permutations are independent.
    """
    if m < 1:
        raise ValueError("need at least one sample")
    rng = np.random.default_rng(seed)
    pts = np.empty((m, dims))
    for d in range(dims):
        pts[:, d] = (rng.permutation(m) + rng.random(m)) / m
    return pts


def stopping_check(acq_history, eta_limit: float, consecutive_required: int = 3) -> bool:
    """Convergence test on the acquisition-value history.

    True iff each of the last ``consecutive_required`` values is at most
    ``eta_limit`` times the maximum over all strictly earlier values.  The
    very first entry has no earlier maximum and can never satisfy the test.
    """
    a = list(acq_history)
    if not a:
        raise ValueError("acquisition history must be nonempty")
    n = len(a)
    if n < consecutive_required:
        return False
    for i in range(n - consecutive_required, n):
        if i < 1 or a[i] > eta_limit * max(a[:i]):
            return False
    return True


@dataclass(frozen=True)
class TunerConfig:
    bounds: tuple                      # ((lo, hi) per tuned gain), 2-D or 3-D
    m_init: int = 15
    eta_limit: float = 0.05
    consecutive_required: int = 3
    max_iterations: int = 120
    acquisition: str = "pso"           # "pso" | "grid"
    pso: PsoConfig = PsoConfig()
    grid_resolution: tuple = (60, 60)
    weights: CostWeights = CostWeights()
    seed: int = 0
    fixed_ti: float = 7.5              # ms, used when only (kp, kv) are tuned
    feedforward: str = "accel"

    def __post_init__(self):
        b = np.asarray(self.bounds, dtype=np.float64)
        if b.ndim != 2 or b.shape[1] != 2 or b.shape[0] not in (2, 3):
            raise ValueError("bounds must be ((lo, hi), ...) for two or three gains")
        if np.any(b[:, 0] >= b[:, 1]) or np.any(b[:, 0] <= 0):
            raise ValueError("bounds must be positive with lo < hi")
        if self.m_init < 2:
            raise ValueError("m_init must be at least 2")
        if not 0.0 <= self.eta_limit < 1.0:
            raise ValueError("eta_limit must lie in [0, 1)")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be positive")
        if self.acquisition not in ("pso", "grid"):
            raise ValueError("acquisition must be 'pso' or 'grid'")
        if self.fixed_ti <= 0:
            raise ValueError("fixed_ti must be positive")

    @property
    def box(self) -> np.ndarray:
        return np.asarray(self.bounds, dtype=np.float64)

    @property
    def dims(self) -> int:
        return self.box.shape[0]

    def to_gains(self, x) -> GainVector:
        x = np.asarray(x, dtype=np.float64)
        if self.dims == 2:
            return GainVector(kp=float(x[0]), kv=float(x[1]), ti=self.fixed_ti)
        return GainVector(kp=float(x[0]), kv=float(x[1]), ti=float(x[2]))


@dataclass
class IterationRecord:
    iteration: int
    x: tuple
    cost: float
    constraint: float
    acq_value: float
    best_so_far: float
    stopped: bool


@dataclass
class TuneReport:
    """Full campaign history plus the selected gains."""

    history: list
    initial_design: gp.Dataset
    cost_kernel: gp.KernelParams
    constraint_kernel: gp.KernelParams
    best_x: tuple
    best_cost: float
    best_constraint: float
    stop_reason: str
    iteration_of_stop: int
    violations: int
    cost_ceiling: float
    all_initial_infeasible: bool
    config: TunerConfig

    @property
    def best_gains(self) -> GainVector:
        return self.config.to_gains(np.asarray(self.best_x))

    def to_json(self, path=None):
        payload = {
            "best": {"x": list(self.best_x), "cost": self.best_cost,
                     "constraint": self.best_constraint},
            "stop_reason": self.stop_reason,
            "iteration_of_stop": self.iteration_of_stop,
            "violations": self.violations,
            "cost_ceiling": self.cost_ceiling,
            "all_initial_infeasible": self.all_initial_infeasible,
            "cost_kernel": _kernel_dict(self.cost_kernel),
            "constraint_kernel": _kernel_dict(self.constraint_kernel),
            "initial_design": {
                "inputs": self.initial_design.inputs.tolist(),
                "cost": self.initial_design.cost_targets.tolist(),
                "constraint": self.initial_design.constraint_targets.tolist(),
            },
            "history": [
                {"iteration": r.iteration, "x": list(r.x), "cost": r.cost,
                 "constraint": r.constraint, "acq": r.acq_value,
                 "best_so_far": r.best_so_far, "stopped": r.stopped}
                for r in self.history
            ],
        }
        text = json.dumps(payload, indent=2, sort_keys=True)
        if path is not None:
            with open(path, "w") as f:
                f.write(text + "\n")
        return text

    def to_csv(self, path):
        """Per-iteration convergence data for plotting."""
        with open(path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["iter", "kp", "kv", "ti", "cost", "constraint", "acq"])
            for r in self.history:
                g = self.config.to_gains(np.asarray(r.x))
                writer.writerow([r.iteration, repr(g.kp), repr(g.kv), repr(g.ti),
                                 repr(r.cost), repr(r.constraint), repr(r.acq_value)])


def _kernel_dict(k: gp.KernelParams):
    return {"signal_variance": k.signal_variance,
            "length_scales": list(k.length_scales),
            "noise_variance": k.noise_variance}


def feasible_best(costs, constraints, threshold):
    """Best cost among feasible observations; overall best if none are feasible.

    Returns ``(index, all_infeasible)``.
    """
    costs = np.asarray(costs, dtype=np.float64)
    constraints = np.asarray(constraints, dtype=np.float64)
    feas = constraints <= threshold
    if np.any(feas):
        idx = np.flatnonzero(feas)[np.argmin(costs[feas])]
        return int(idx), False
    return int(np.argmin(costs)), True


def tune(plant: PlantParams, profile: ReferenceProfile, noise: NoiseModel,
         cfg: TunerConfig) -> TuneReport:
    """Run one tuning campaign and return its full report.

    Noise seeds are derived deterministically from the configured seeds, so a
    rerun with an identical configuration reproduces the report bit for bit.
    """
    box = cfg.box
    threshold = cfg.weights.constraint_bound

    unit = latin_hypercube(cfg.m_init, cfg.dims, cfg.seed)
    X = box[:, 0] + unit * (box[:, 1] - box[:, 0])

    observations: list[Observation] = []
    for i, x in enumerate(X):
        ob = evaluate_candidate(cfg.to_gains(x), plant, profile, cfg.weights,
                                noise=replace(noise, seed=noise.seed + i),
                                feedforward=cfg.feedforward)
        observations.append(ob)

    finite = [ob.cost for ob in observations if not ob.diverged]
    ceiling = 10.0 * max(finite) if finite else FALLBACK_CEILING
    observations = [
        replace(ob, cost=ceiling, constraint=10.0 * threshold) if ob.diverged else ob
        for ob in observations
    ]

    dataset = gp.Dataset(
        inputs=X.copy(),
        cost_targets=np.array([ob.cost for ob in observations]),
        constraint_targets=np.array([ob.constraint for ob in observations]),
    )
    initial_design = gp.Dataset(dataset.inputs.copy(), dataset.cost_targets.copy(),
                                dataset.constraint_targets.copy())

    cost_model = gp.fit(dataset, "cost", box, seed=cfg.seed + 1)
    constraint_model = gp.fit(dataset, "constraint", box, seed=cfg.seed + 2)
    cost_kernel, constraint_kernel = cost_model.kernel, constraint_model.kernel

    _, all_initial_infeasible = feasible_best(
        dataset.cost_targets, dataset.constraint_targets, threshold)

    history: list[IterationRecord] = []
    acq_history: list[float] = []
    violations = 0
    stop_reason = "max_iterations"
    iteration_of_stop = cfg.max_iterations

    for m in range(1, cfg.max_iterations + 1):
        best_idx, _ = feasible_best(dataset.cost_targets,
                                    dataset.constraint_targets, threshold)
        ctx = AcquisitionContext(
            cost_model=cost_model, constraint_model=constraint_model,
            best_observed=float(dataset.cost_targets[best_idx]),
            threshold=threshold, bounds=box)
        if cfg.acquisition == "pso":
            x_next, acq = argmax_pso(ctx, replace(cfg.pso, seed=cfg.pso.seed + m))
        else:
            x_next, acq = argmax_grid(ctx, cfg.grid_resolution)

        ob = evaluate_candidate(
            cfg.to_gains(x_next), plant, profile, cfg.weights,
            noise=replace(noise, seed=noise.seed + cfg.m_init + m - 1),
            feedforward=cfg.feedforward, cost_ceiling=ceiling)
        if ob.diverged:
            ob = replace(ob, constraint=10.0 * threshold)
        if ob.constraint > threshold:
            violations += 1
        dataset.append(x_next, ob.cost, ob.constraint)

        cost_model = gp.condition(cost_kernel, dataset.inputs,
                                  dataset.cost_targets, box)
        constraint_model = gp.condition(constraint_kernel, dataset.inputs,
                                        dataset.constraint_targets, box)

        acq_history.append(acq)
        stopped = stopping_check(acq_history, cfg.eta_limit, cfg.consecutive_required)
        run_best, _ = feasible_best(dataset.cost_targets,
                                    dataset.constraint_targets, threshold)
        history.append(IterationRecord(
            iteration=m, x=tuple(float(t) for t in x_next),
            cost=ob.cost, constraint=ob.constraint, acq_value=acq,
            best_so_far=float(dataset.cost_targets[run_best]), stopped=stopped))
        if stopped:
            stop_reason = "converged"
            iteration_of_stop = m
            break

    best_idx, _ = feasible_best(dataset.cost_targets, dataset.constraint_targets,
                                threshold)
    return TuneReport(
        history=history,
        initial_design=initial_design,
        cost_kernel=cost_kernel,
        constraint_kernel=constraint_kernel,
        best_x=tuple(float(t) for t in dataset.inputs[best_idx]),
        best_cost=float(dataset.cost_targets[best_idx]),
        best_constraint=float(dataset.constraint_targets[best_idx]),
        stop_reason=stop_reason,
        iteration_of_stop=iteration_of_stop if stop_reason == "converged"
        else len(history),
        violations=violations,
        cost_ceiling=ceiling,
        all_initial_infeasible=all_initial_infeasible,
        config=cfg,
    )
