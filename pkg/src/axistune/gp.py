"""Gaussian-process regression surrogates for the cost and constraint functions.

Both surrogates use a zero prior mean and a Matern-3/2 kernel with automatic
relevance determination (one length scale per input dimension).  Inputs are
normalized to the unit box spanned by the admissible gain ranges before any
kernel evaluation; the gain ranges differ by more than an order of magnitude,
and ARD scales condition far better on [0, 1].

Hyperparameters are chosen by minimizing the negative log marginal likelihood
with a multi-start direct search in log space.  Campaigns fit them once on
the initial design and keep them fixed afterwards, reconditioning only the
Gram factorization as data accumulates.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize

SQRT3 = math.sqrt(3.0)

# Log-space hyperparameter search box, relative to the target variance.
LENGTH_SCALE_RANGE = (0.01, 10.0)
SIGNAL_VAR_RANGE = (1e-4, 10.0)
NOISE_VAR_RANGE = (1e-8, 1.0)

JITTER_START = 1e-10
JITTER_MAX = 1e-6


class DegenerateData(ValueError):
    """All training targets identical; hyperparameter fitting is meaningless."""


@dataclass(frozen=True)
class KernelParams:
    signal_variance: float
    length_scales: tuple
    noise_variance: float

    def __post_init__(self):
        if self.signal_variance <= 0 or self.noise_variance <= 0:
            raise ValueError("variances must be strictly positive")
        if any(l <= 0 for l in self.length_scales):
            raise ValueError("length scales must be strictly positive")


@dataclass
class Dataset:
    """Scored experiments: gain vectors with measured cost and constraint."""

    inputs: np.ndarray              # (n, d) raw gain-space points
    cost_targets: np.ndarray        # (n,)
    constraint_targets: np.ndarray  # (n,)

    def __post_init__(self):
        self.inputs = np.atleast_2d(np.asarray(self.inputs, dtype=np.float64))
        self.cost_targets = np.asarray(self.cost_targets, dtype=np.float64)
        self.constraint_targets = np.asarray(self.constraint_targets, dtype=np.float64)
        n = self.inputs.shape[0]
        if not (len(self.cost_targets) == len(self.constraint_targets) == n and n >= 1):
            raise ValueError("inputs and targets must have equal nonzero length")

    def targets(self, which: str) -> np.ndarray:
        if which == "cost":
            return self.cost_targets
        if which == "constraint":
            return self.constraint_targets
        raise ValueError(f"unknown target selector {which!r}")

    def append(self, x, cost, constraint):
        self.inputs = np.vstack([self.inputs, np.asarray(x, dtype=np.float64)])
        self.cost_targets = np.append(self.cost_targets, cost)
        self.constraint_targets = np.append(self.constraint_targets, constraint)

    def __len__(self):
        return self.inputs.shape[0]


def normalize(x, box):
    box = np.asarray(box, dtype=np.float64)
    return (np.asarray(x, dtype=np.float64) - box[:, 0]) / (box[:, 1] - box[:, 0])


def denormalize(u, box):
    box = np.asarray(box, dtype=np.float64)
    return box[:, 0] + np.asarray(u, dtype=np.float64) * (box[:, 1] - box[:, 0])


def matern32_ard(a, b, kernel: KernelParams) -> float:
    """Matern-3/2 ARD covariance between two normalized points."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    ell = np.asarray(kernel.length_scales)
    r = math.sqrt(float(np.sum(((a - b) / ell) ** 2)))
    return kernel.signal_variance * (1.0 + SQRT3 * r) * math.exp(-SQRT3 * r)


def kernel_matrix(A, B, kernel: KernelParams) -> np.ndarray:
    """Covariance matrix between two sets of normalized points, shapes (n,d) and (m,d)."""
    ell = np.asarray(kernel.length_scales)
    diff = (A[:, None, :] - B[None, :, :]) / ell
    r = np.sqrt(np.sum(diff * diff, axis=-1))
    return kernel.signal_variance * (1.0 + SQRT3 * r) * np.exp(-SQRT3 * r)


@dataclass
class GpModel:
    """Fitted surrogate: kernel, training data and factored Gram matrix."""

    kernel: KernelParams
    box: np.ndarray            # (d, 2) admissible input box
    x_norm: np.ndarray         # (n, d) normalized training inputs
    targets: np.ndarray        # (n,)
    chol: np.ndarray           # lower-triangular factor of K + sigma_n^2 I (+ jitter)
    alpha: np.ndarray          # solve of the factored system against the targets
    nlml: float
    degenerate: bool = False

    def to_json(self, path=None):
        payload = {
            "kernel": {
                "signal_variance": self.kernel.signal_variance,
                "length_scales": list(self.kernel.length_scales),
                "noise_variance": self.kernel.noise_variance,
            },
            "box": self.box.tolist(),
            "x_norm": self.x_norm.tolist(),
            "targets": self.targets.tolist(),
            "nlml": self.nlml,
            "degenerate": self.degenerate,
        }
        text = json.dumps(payload, indent=2, sort_keys=True)
        if path is not None:
            with open(path, "w") as f:
                f.write(text + "\n")
        return text


def _chol_with_jitter(K, noise_variance, signal_variance):
    n = K.shape[0]
    jitter = JITTER_START * signal_variance
    base = K + noise_variance * np.eye(n)
    try:
        return np.linalg.cholesky(base)
    except np.linalg.LinAlgError:
        pass
    while jitter <= JITTER_MAX * signal_variance:
        try:
            return np.linalg.cholesky(base + jitter * np.eye(n))
        except np.linalg.LinAlgError:
            jitter *= 2.0
    raise np.linalg.LinAlgError("Gram matrix not factorizable even with maximum jitter")


def nlml_value(kernel: KernelParams, x_norm, y) -> float:
    """Negative log marginal likelihood of the targets under the kernel."""
    n = len(y)
    K = kernel_matrix(x_norm, x_norm, kernel)
    L = _chol_with_jitter(K, kernel.noise_variance, kernel.signal_variance)
    alpha = np.linalg.solve(L.T, np.linalg.solve(L, y))
    return float(0.5 * y @ alpha + np.sum(np.log(np.diag(L))) + 0.5 * n * math.log(2 * math.pi))


def condition(kernel: KernelParams, inputs, targets, box) -> GpModel:
    """Factor the Gram matrix for the given data under fixed hyperparameters."""
    box = np.asarray(box, dtype=np.float64)
    x_norm = np.atleast_2d(normalize(inputs, box))
    y = np.asarray(targets, dtype=np.float64)
    K = kernel_matrix(x_norm, x_norm, kernel)
    L = _chol_with_jitter(K, kernel.noise_variance, kernel.signal_variance)
    alpha = np.linalg.solve(L.T, np.linalg.solve(L, y))
    nlml = float(0.5 * y @ alpha + np.sum(np.log(np.diag(L)))
                 + 0.5 * len(y) * math.log(2 * math.pi))
    return GpModel(kernel=kernel, box=box, x_norm=x_norm, targets=y,
                   chol=L, alpha=alpha, nlml=nlml)


def fit(dataset: Dataset, which: str, box, restarts: int = 10,
        max_iter: int = 200, seed: int = 0,
        length_scale_bounds: tuple = LENGTH_SCALE_RANGE) -> GpModel:
    """Fit kernel hyperparameters by multi-start NLML minimization.

    ``length_scale_bounds`` constrains the search in normalized input units;
    callers that certify safety from the posterior should cap it near the
    domain size, since data that happen to look flat along one gain otherwise
    fit an effectively infinite scale and extrapolate with false confidence.

    Datasets whose targets are all identical cannot inform the fit; they fall
    back to prior-scale defaults and the returned model carries the
    ``degenerate`` flag.
    """
    if len(dataset) < 2:
        raise ValueError("need at least two observations to fit a surrogate")
    box = np.asarray(box, dtype=np.float64)
    y = dataset.targets(which)
    x_norm = normalize(dataset.inputs, box)
    d = x_norm.shape[1]

    var_y = float(np.var(y))
    if var_y == 0.0:
        kernel = KernelParams(signal_variance=1.0, length_scales=(0.5,) * d,
                              noise_variance=1e-6)
        model = condition(kernel, dataset.inputs, y, box)
        model.degenerate = True
        return model

    lo = np.log(np.array([length_scale_bounds[0]] * d
                         + [SIGNAL_VAR_RANGE[0] * var_y, NOISE_VAR_RANGE[0] * var_y]))
    hi = np.log(np.array([length_scale_bounds[1]] * d
                         + [SIGNAL_VAR_RANGE[1] * var_y, NOISE_VAR_RANGE[1] * var_y]))

    def unpack(theta):
        return KernelParams(signal_variance=float(np.exp(theta[d])),
                            length_scales=tuple(np.exp(theta[:d])),
                            noise_variance=float(np.exp(theta[d + 1])))

    def objective(theta):
        try:
            val = nlml_value(unpack(theta), x_norm, y)
        except np.linalg.LinAlgError:
            return 1e25
        return val if math.isfinite(val) else 1e25

    rng = np.random.default_rng(seed)
    from .tuner import latin_hypercube
    starts = lo + latin_hypercube(restarts, d + 2, rng.integers(2**63)) * (hi - lo)

    best_theta, best_val = None, np.inf
    for theta0 in starts:
        val0 = objective(theta0)
        if val0 < best_val:
            best_theta, best_val = theta0, val0
        res = minimize(objective, theta0, method="Nelder-Mead",
                       bounds=list(zip(lo, hi)),
                       options={"maxiter": max_iter, "xatol": 1e-4, "fatol": 1e-8})
        if res.fun < best_val:
            best_theta, best_val = res.x, res.fun

    model = condition(unpack(best_theta), dataset.inputs, y, box)
    return model


def posterior(model: GpModel, x):
    """Posterior mean and variance at one raw-space point or a batch of points.

    The variance is that of the latent function (measurement noise excluded)
    and is clamped to be nonnegative.
    """
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    xq = normalize(np.atleast_2d(x), model.box)
    k_star = kernel_matrix(model.x_norm, xq, model.kernel)      # (n, q)
    mean = k_star.T @ model.alpha
    v = np.linalg.solve(model.chol, k_star)
    var = model.kernel.signal_variance - np.sum(v * v, axis=0)
    var = np.maximum(var, 0.0)
    if single:
        return float(mean[0]), float(var[0])
    return mean, var
