"""Acquisition functions and their maximizers.

The sampling criterion is constrained expected improvement: expected
improvement of the cost surrogate multiplied by the probability that the
constraint surrogate predicts a feasible overshoot.  Both a dense grid search
and a particle swarm are provided to maximize it; the swarm works in
continuous space and scales better with dimension, the grid is exhaustive at
its resolution.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from .gp import GpModel, posterior

_SQRT_2PI = math.sqrt(2.0 * math.pi)
_STD_FLOOR = 1e-12


@dataclass(frozen=True)
class AcquisitionContext:
    """Everything a maximizer needs: both surrogates, the incumbent and the box."""

    cost_model: GpModel
    constraint_model: GpModel
    best_observed: float        # best feasible cost among scored experiments
    threshold: float            # constraint bound on the overshoot [mm]
    bounds: np.ndarray          # (d, 2) admissible box

    def __post_init__(self):
        if not math.isfinite(self.best_observed):
            raise ValueError("best_observed must be finite")
        if self.threshold <= 0:
            raise ValueError("threshold must be positive")


@dataclass(frozen=True)
class PsoConfig:
    particles: int = 10
    iterations: int = 50
    inertia: float = 0.729
    cognitive: float = 1.49445
    social: float = 1.49445
    seed: int = 0

    def __post_init__(self):
        if self.particles < 2:
            raise ValueError("need at least two particles")
        if not 0.0 < self.inertia < 1.0:
            raise ValueError("inertia must lie in (0, 1)")
        if self.iterations < 1:
            raise ValueError("iterations must be positive")


def expected_improvement(mean, std, best):
    """Expected improvement of a minimization objective, elementwise.

    Degenerate predictive deviations (below 1e-12) yield zero improvement.
    """
    mean = np.asarray(mean, dtype=np.float64)
    std = np.asarray(std, dtype=np.float64)
    safe = np.maximum(std, _STD_FLOOR)
    xi = (best - mean) / safe
    phi = np.exp(-0.5 * xi * xi) / _SQRT_2PI
    ei = (xi * ndtr(xi) + phi) * safe
    ei = np.where(std < _STD_FLOOR, 0.0, ei)
    if ei.ndim == 0:
        return float(ei)
    return ei


def constrained_ei(ctx: AcquisitionContext, x):
    """Constrained expected improvement at one point or a batch of points."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    xq = np.atleast_2d(x)
    mu_f, var_f = posterior(ctx.cost_model, xq)
    mu_g, var_g = posterior(ctx.constraint_model, xq)
    ei = expected_improvement(mu_f, np.sqrt(var_f), ctx.best_observed)
    std_g = np.sqrt(var_g)
    with np.errstate(divide="ignore", invalid="ignore"):
        prob = ndtr((ctx.threshold - mu_g) / np.maximum(std_g, _STD_FLOOR))
    prob = np.where(std_g < _STD_FLOOR, (mu_g <= ctx.threshold).astype(float), prob)
    cei = prob * ei
    if single:
        return float(cei[0])
    return cei


def grid_points(bounds, resolution):
    """Regular grid over the box, row-major (first dimension slowest)."""
    bounds = np.asarray(bounds, dtype=np.float64)
    resolution = _resolution_tuple(resolution, bounds.shape[0])
    axes = [np.linspace(lo, hi, r) for (lo, hi), r in zip(bounds, resolution)]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=-1)


def _resolution_tuple(resolution, dims):
    if np.isscalar(resolution):
        resolution = (int(resolution),) * dims
    resolution = tuple(int(r) for r in resolution)
    if len(resolution) != dims or any(r < 2 for r in resolution):
        raise ValueError("need a resolution of at least 2 per dimension")
    return resolution


def argmax_grid(ctx: AcquisitionContext, resolution):
    """Exhaustive CEI maximization on a regular grid.

    Ties break toward the lowest row-major index, so the result is
    deterministic regardless of the CEI landscape.
    """
    pts = grid_points(ctx.bounds, resolution)
    vals = constrained_ei(ctx, pts)
    idx = int(np.argmax(vals))
    return pts[idx].copy(), float(vals[idx])


def swarm_maximize(f_batch, bounds, cfg: PsoConfig, record=None, init=None):
    """Global-best particle swarm maximization of a batch-evaluable function.

    Positions are clipped to the box and velocities to twenty percent of the
    box width per dimension.  Deterministic for a fixed config seed.  If
    ``record`` is a list, the best value after each iteration is appended.
    ``init`` seeds some particles at given positions (extra particles are
    placed uniformly at random).
    """
    bounds = np.asarray(bounds, dtype=np.float64)
    d = bounds.shape[0]
    lo, hi = bounds[:, 0], bounds[:, 1]
    width = hi - lo
    vmax = 0.2 * width

    rng = np.random.default_rng(cfg.seed)
    x = lo + rng.random((cfg.particles, d)) * width
    if init is not None:
        init = np.atleast_2d(np.asarray(init, dtype=np.float64))[:cfg.particles]
        x[:len(init)] = np.clip(init, lo, hi)
    v = (rng.random((cfg.particles, d)) - 0.5) * 2.0 * vmax
    fx = np.asarray(f_batch(x), dtype=np.float64)

    pbest_x = x.copy()
    pbest_f = fx.copy()
    g = int(np.argmax(pbest_f))
    gbest_x = pbest_x[g].copy()
    gbest_f = float(pbest_f[g])
    if record is not None:
        record.append(gbest_f)

    for _ in range(cfg.iterations):
        r1 = rng.random((cfg.particles, d))
        r2 = rng.random((cfg.particles, d))
        v = (cfg.inertia * v
             + cfg.cognitive * r1 * (pbest_x - x)
             + cfg.social * r2 * (gbest_x - x))
        v = np.clip(v, -vmax, vmax)
        x = np.clip(x + v, lo, hi)
        fx = np.asarray(f_batch(x), dtype=np.float64)
        improved = fx > pbest_f
        pbest_x[improved] = x[improved]
        pbest_f[improved] = fx[improved]
        g = int(np.argmax(pbest_f))
        if pbest_f[g] > gbest_f:
            gbest_x = pbest_x[g].copy()
            gbest_f = float(pbest_f[g])
        if record is not None:
            record.append(gbest_f)
    return gbest_x, gbest_f


def argmax_pso(ctx: AcquisitionContext, cfg: PsoConfig):
    """CEI maximization by particle swarm; returns the best-ever particle."""
    return swarm_maximize(lambda pts: constrained_ei(ctx, pts), ctx.bounds, cfg)


def surface_to_csv(ctx: AcquisitionContext, resolution, path):
    """Dump the CEI surface on a 2-D grid for plotting."""
    if np.asarray(ctx.bounds).shape[0] != 2:
        raise ValueError("surface dump supports two tuned gains only")
    pts = grid_points(ctx.bounds, resolution)
    vals = constrained_ei(ctx, pts)
    with open(path, "w") as f:
        f.write("kp,kv,cei\n")
        for (kp, kv), a in zip(pts, vals):
            f.write(f"{kp!r},{kv!r},{a!r}\n")
