"""Comparison tuners: relay-feedback autotuning and a swarm-based SafeOpt.

Both baselines score candidates through the same cycle simulation and metric
pipeline as the Bayesian tuner, so comparisons are like for like.

The relay tuner replaces each controller in turn by a hysteresis relay,
measures the resulting limit cycle, and sets the gains from the estimated
ultimate gain and period (describing-function estimate ``Ku = 4d / (pi a)``).
The exact tuning-rule constants are configurable; the defaults are standard
relay-autotuning choices, reconstructed here since only the method itself is
prescribed.

SafeOpt explores with high-probability safety certificates instead of a
constrained acquisition: a candidate is certified safe when the upper
confidence bound of the constraint surrogate stays below the bound.  Each
iteration runs three particle swarms (safe anchor, certified minimizers,
safe-set expanders) and samples whichever of minimizer/expander carries the
larger cost-posterior uncertainty.  It runs a fixed iteration budget with no
early stopping.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace

import numpy as np

from . import gp
from .acquisition import PsoConfig, swarm_maximize
from .metrics import CostWeights, evaluate_candidate
from .plant import (GainVector, NoiseModel, PlantParams, ReferenceProfile,
                    KP_TO_MM_S_PER_MM, KV_TO_N_PER_MM_S, NO_NOISE)
from .tuner import IterationRecord, TuneReport, TunerConfig, feasible_best

_BIG_PENALTY = 1e9


class NoSustainedOscillation(RuntimeError):
    """The relay experiment failed to settle into a measurable limit cycle."""


@dataclass(frozen=True)
class RelayConfig:
    force_amplitude: float = 400.0       # N, relay output in the velocity loop
    velocity_amplitude: float = 5.0      # mm/s, relay output in the position loop
    velocity_hysteresis: float = 1.0     # mm/s, probe relay band in the velocity loop
    position_hysteresis: float = 0.02    # mm, probe relay band in the position loop
    hysteresis_fraction: float = 0.2     # refined band as a fraction of the probe amplitude
    cycles_to_measure: int = 5
    velocity_gain_factor: float = 0.45   # Kv = factor * Ku
    velocity_integral_factor: float = 0.85  # Ti = factor * Tu
    position_gain_factor: float = 0.5    # Kp = factor * Ku
    settle_cycles: int = 4
    period_tolerance: float = 0.25       # relative spread allowed across cycles

    def __post_init__(self):
        if self.force_amplitude <= 0 or self.velocity_amplitude <= 0:
            raise ValueError("relay amplitudes must be positive")
        if self.velocity_hysteresis < 0 or self.position_hysteresis < 0:
            raise ValueError("hysteresis bands must be nonnegative")
        if self.cycles_to_measure < 3:
            raise ValueError("need at least three cycles to measure")
        if not 0.0 <= self.hysteresis_fraction < 1.0:
            raise ValueError("hysteresis_fraction must lie in [0, 1)")


@dataclass
class RelayStage:
    stage: str
    amplitude: float
    ultimate_period: float   # s
    ultimate_gain: float     # physical units of the replaced controller


@dataclass
class RelayResult:
    gains: GainVector
    stages: list

    def to_csv(self, path):
        with open(path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["stage", "amplitude", "Tu_s", "Ku"])
            for s in self.stages:
                writer.writerow([s.stage, repr(s.amplitude),
                                 repr(s.ultimate_period), repr(s.ultimate_gain)])


def _relay_velocity_loop(plant, amplitude, hysteresis, ts, duration):
    """Relay in place of the velocity controller; returns the velocity trace
    and relay switch-up sample indices."""
    n = int(round(duration / ts))
    v = 0.0
    p = 0.0
    u_pending = 0.0
    u_act = 0.0
    lag_alpha = 1.0 - math.exp(-ts / plant.actuator_lag) if plant.actuator_lag > 0 else 1.0
    state = 1.0
    vel = np.empty(n)
    switches = []
    amps, phases = plant.harmonic_arrays()
    c1, c2, period = plant.ripple_coeffs[:3]
    for k in range(n):
        e = -v
        if state > 0 and e < -hysteresis:
            state = -1.0
        elif state < 0 and e > hysteresis:
            state = 1.0
            switches.append(k)
        u = amplitude * state
        u_cmd = u_pending
        u_pending = u
        u_act += lag_alpha * (u_cmd - u_act)
        pm = p * 1e-3
        fr = c1 + c2 * pm
        for i in range(len(amps)):
            fr += amps[i] * math.sin(2.0 * math.pi * (i + 1) * pm / period + phases[i])
        fnet = u_act - plant.damping * v * 1e-3 - plant.ripple_sign * fr
        if plant.coulomb_friction > 0:
            fnet -= plant.coulomb_friction * np.sign(v)
        v += ts * 1e3 * fnet / plant.mass
        p += ts * v
        vel[k] = v
    return vel, switches


def _relay_position_loop(plant, gains, amplitude, hysteresis, ts, duration):
    """Relay in place of the position controller, inner PI velocity loop closed."""
    n = int(round(duration / ts))
    kv_n = gains.kv * KV_TO_N_PER_MM_S
    ti_s = gains.ti * 1e-3
    v = 0.0
    p = 0.0
    integ = 0.0
    u_pending = 0.0
    u_act = 0.0
    lag_alpha = 1.0 - math.exp(-ts / plant.actuator_lag) if plant.actuator_lag > 0 else 1.0
    state = 1.0
    pos = np.empty(n)
    switches = []
    amps, phases = plant.harmonic_arrays()
    c1, c2, period = plant.ripple_coeffs[:3]
    for k in range(n):
        e = -p
        if state > 0 and e < -hysteresis:
            state = -1.0
        elif state < 0 and e > hysteresis:
            state = 1.0
            switches.append(k)
        vref = amplitude * state
        ev = vref - v
        u = kv_n * (ev + integ)
        saturated = abs(u) > plant.force_limit
        if saturated:
            u = math.copysign(plant.force_limit, u)
        else:
            integ += ts / ti_s * ev
        u_cmd = u_pending
        u_pending = u
        u_act += lag_alpha * (u_cmd - u_act)
        pm = p * 1e-3
        fr = c1 + c2 * pm
        for i in range(len(amps)):
            fr += amps[i] * math.sin(2.0 * math.pi * (i + 1) * pm / period + phases[i])
        fnet = u_act - plant.damping * v * 1e-3 - plant.ripple_sign * fr
        if plant.coulomb_friction > 0:
            fnet -= plant.coulomb_friction * np.sign(v)
        v += ts * 1e3 * fnet / plant.mass
        p += ts * v
        pos[k] = p
    return pos, switches


def _measure_limit_cycle(signal, switches, ts, cfg: RelayConfig):
    """Ultimate period and oscillation amplitude from the relay experiment."""
    need = cfg.settle_cycles + cfg.cycles_to_measure + 1
    if len(switches) < need:
        raise NoSustainedOscillation(
            f"only {len(switches)} relay cycles observed, need {need}")
    pts = np.asarray(switches[-(cfg.cycles_to_measure + 1):])
    periods = np.diff(pts) * ts
    if periods.min() <= 0:
        raise NoSustainedOscillation("degenerate switching pattern")
    spread = (periods.max() - periods.min()) / periods.mean()
    if spread > cfg.period_tolerance:
        raise NoSustainedOscillation(
            f"oscillation period has not settled (spread {spread:.2f})")
    window = signal[pts[0]:pts[-1] + 1]
    amplitude = 0.5 * (window.max() - window.min())
    if amplitude <= 0:
        raise NoSustainedOscillation("zero oscillation amplitude")
    return float(periods.mean()), float(amplitude)


def _two_pass_relay(run, probe_band, frac, ts, cfg):
    """Probe with a fixed relay band, then refine with a band proportional to
    the measured amplitude; fall back to the probe if the refined cycle jitters."""
    signal, sw = run(probe_band)
    tu, amp = _measure_limit_cycle(signal, sw, ts, cfg)
    refined = frac * amp
    if probe_band > 0.0 and 0.0 < refined < probe_band:
        try:
            signal, sw = run(refined)
            tu, amp = _measure_limit_cycle(signal, sw, ts, cfg)
        except NoSustainedOscillation:
            pass
    return tu, amp


def _velocity_stage(plant, cfg, ts, duration=2.0):
    d = cfg.force_amplitude
    run = lambda band: _relay_velocity_loop(plant, d, band, ts, duration)
    tu, amp = _two_pass_relay(run, cfg.velocity_hysteresis,
                              cfg.hysteresis_fraction, ts, cfg)
    ku = 4.0 * d / (math.pi * amp)       # N per mm/s
    return tu, ku


def _position_stage(plant, gains, cfg, ts, duration=6.0):
    d = cfg.velocity_amplitude
    run = lambda band: _relay_position_loop(plant, gains, d, band, ts, duration)
    tu, amp = _two_pass_relay(run, cfg.position_hysteresis,
                              cfg.hysteresis_fraction, ts, cfg)
    ku = 4.0 * d / (math.pi * amp)       # (mm/s) per mm
    return tu, ku


def relay_tune(plant: PlantParams, profile: ReferenceProfile,
               cfg: RelayConfig = RelayConfig()) -> RelayResult:
    """Two-stage relay autotuning of (kp, kv, ti).

    Stage one excites the velocity loop and sets the PI from the measured
    ultimate point; stage two closes that loop and excites the position loop
    to set the proportional gain.  The whole procedure counts as a single
    tuning iteration: it needs no scored experiment on the reference cycle.
    """
    ts = profile.sample_time
    tu_v, ku_v = _velocity_stage(plant, cfg, ts)
    kv = cfg.velocity_gain_factor * ku_v / KV_TO_N_PER_MM_S
    ti_ms = cfg.velocity_integral_factor * tu_v * 1e3
    stage1 = RelayStage("velocity", cfg.force_amplitude, tu_v, ku_v)

    gains_v = GainVector(kp=1.0, kv=kv, ti=ti_ms)   # kp placeholder, loop open
    tu_p, ku_p = _position_stage(plant, gains_v, cfg, ts)
    kp = cfg.position_gain_factor * ku_p / KP_TO_MM_S_PER_MM
    stage2 = RelayStage("position", cfg.velocity_amplitude, tu_p, ku_p)

    return RelayResult(gains=GainVector(kp=kp, kv=kv, ti=ti_ms),
                       stages=[stage1, stage2])


def ultimate_point_oracle(plant: PlantParams, ts: float, extra_delay: float = 0.0):
    """Describing-function prediction of the velocity-loop ultimate point.

    Solves for the frequency where the phase of the force-to-velocity plant
    plus the loop dead time (one-sample computation delay, half a sample of
    hold, plus ``extra_delay``) reaches -180 degrees, and returns
    ``(Tu, Ku)`` with Ku in N per mm/s.
    """
    from scipy.optimize import brentq

    delay = 1.5 * ts + extra_delay
    m, b = plant.mass, plant.damping

    def phase(w):
        ph = -math.atan2(w * m, b) - w * delay
        if plant.actuator_lag > 0:
            ph -= math.atan(w * plant.actuator_lag)
        return ph + math.pi

    w_u = brentq(phase, 1e-3, math.pi / ts)
    gain = 1e3 / math.hypot(m * w_u, b)           # (mm/s) per N
    if plant.actuator_lag > 0:
        gain /= math.hypot(1.0, w_u * plant.actuator_lag)
    return 2.0 * math.pi / w_u, 1.0 / gain


@dataclass(frozen=True)
class SafeOptConfig:
    bounds: tuple
    safe_seed_set: tuple                 # ((kp, kv[, ti]), ...) known-feasible points
    beta: float = 2.0
    swarm: PsoConfig = PsoConfig()
    iterations: int = 50
    hyper_mode: str = "tuned"            # "tuned" | "fixed-conservative"
    seed: int = 0
    fixed_ti: float = 7.5
    feedforward: str = "accel"

    def __post_init__(self):
        if len(self.safe_seed_set) == 0:
            raise ValueError("safe_seed_set must be nonempty")
        if self.beta <= 0:
            raise ValueError("beta must be positive")
        if self.hyper_mode not in ("tuned", "fixed-conservative"):
            raise ValueError("hyper_mode must be 'tuned' or 'fixed-conservative'")
        if self.iterations < 1:
            raise ValueError("iterations must be positive")

    @property
    def box(self):
        return np.asarray(self.bounds, dtype=np.float64)

    def to_gains(self, x) -> GainVector:
        x = np.asarray(x, dtype=np.float64)
        if self.box.shape[0] == 2:
            return GainVector(kp=float(x[0]), kv=float(x[1]), ti=self.fixed_ti)
        return GainVector(kp=float(x[0]), kv=float(x[1]), ti=float(x[2]))


class EmptySafeSet(RuntimeError):
    """No point in the box could be certified safe during an iteration."""


def _confidence(model, pts, beta):
    # certificates are checked against measured values, so the confidence
    # bound covers the observation, latent posterior plus measurement noise
    mu, var = gp.posterior(model, np.atleast_2d(pts))
    std = np.sqrt(var + model.kernel.noise_variance)
    return mu, std, mu + beta * std, mu - beta * std


def propose_next(cost_model, constraint_model, cfg: SafeOptConfig, threshold, it,
                 safe_points=None):
    """One SafeOpt proposal: three swarm runs and the uncertainty comparison.

    ``safe_points`` seeds each swarm with known-feasible locations so that the
    certified islands around the data are always reachable.  Returns
    ``(x_next, selected_uncertainty, ucb_g_at_x)``.  Raises ``EmptySafeSet``
    when not even the safest point of the anchor swarm is certified feasible.
    """
    beta = cfg.beta
    box = cfg.box

    def safety_margin(pts):
        _, _, ucb, _ = _confidence(constraint_model, pts, beta)
        return threshold - ucb

    def minimizer_fitness(pts):
        mu_f, _, _, lcb_f = _confidence(cost_model, pts, beta)
        violation = np.maximum(0.0, -safety_margin(pts))
        return -lcb_f - _BIG_PENALTY * violation

    def expander_fitness(pts):
        _, std_g, ucb_g, _ = _confidence(constraint_model, pts, beta)
        violation = np.maximum(0.0, ucb_g - threshold)
        return std_g - _BIG_PENALTY * violation

    base = cfg.seed + 1000 * it
    if safe_points is not None and len(safe_points):
        rng = np.random.default_rng(base)
        pick = rng.choice(len(safe_points),
                          size=min(len(safe_points), max(2, cfg.swarm.particles // 2)),
                          replace=False)
        init = np.asarray(safe_points)[pick]
    else:
        init = None
    x_anchor, anchor_margin = swarm_maximize(
        safety_margin, box, replace(cfg.swarm, seed=base), init=init)
    if anchor_margin < 0:
        raise EmptySafeSet(f"no certifiably safe point found at iteration {it}")

    x_min, fit_min = swarm_maximize(
        minimizer_fitness, box, replace(cfg.swarm, seed=base + 1), init=init)
    x_exp, fit_exp = swarm_maximize(
        expander_fitness, box, replace(cfg.swarm, seed=base + 2), init=init)

    candidates = []
    for x, fit in ((x_min, fit_min), (x_exp, fit_exp)):
        if fit > -_BIG_PENALTY / 2 and safety_margin(x[None, :])[0] >= 0:
            _, std_f, _, _ = _confidence(cost_model, x[None, :], beta)
            candidates.append((x, float(std_f[0])))
    if not candidates:
        candidates = [(x_anchor, 0.0)]
    x_next, sel_std = max(candidates, key=lambda c: c[1])
    _, _, ucb_g, _ = _confidence(constraint_model, x_next[None, :], beta)
    return x_next, sel_std, float(ucb_g[0])


CONSERVATIVE_SCALE_CAP = 0.25
CONSERVATIVE_NOISE_FRACTION = 0.2


def conservative_kernel(k: gp.KernelParams, threshold_scale: float) -> gp.KernelParams:
    """More cautious constraint kernel: shorter scales, larger variances.

    Certification rides entirely on the kernel.  The conservative mode halves
    the fitted length scales and caps them at a quarter of the normalized
    domain, raises the signal variance at least to the scale of the safety
    threshold, and floors the assumed observation noise at a fifth of the
    threshold.  Predictive uncertainty away from data then always covers a
    threshold-sized excursion, and the certified frontier stalls two
    observation-sigmas short of the measured boundary instead of hugging it.
    """
    return gp.KernelParams(
        signal_variance=max(2.0 * k.signal_variance, threshold_scale**2),
        length_scales=tuple(min(0.5 * l, CONSERVATIVE_SCALE_CAP)
                            for l in k.length_scales),
        noise_variance=max(k.noise_variance,
                           (CONSERVATIVE_NOISE_FRACTION * threshold_scale) ** 2),
    )


def safeopt_tune(plant: PlantParams, profile: ReferenceProfile, weights: CostWeights,
                 cfg: SafeOptConfig, noise: NoiseModel = NO_NOISE) -> TuneReport:
    """Safe exploration campaign over a fixed iteration budget.

    Every seed point must measure feasible, otherwise the precondition fails.
    In ``fixed-conservative`` mode the fitted constraint kernel is made more
    cautious (shorter length scales, larger signal variance), which raises
    predictive uncertainty away from data and suppresses boundary sampling.
    """
    box = cfg.box
    threshold = weights.constraint_bound
    X = np.atleast_2d(np.asarray(cfg.safe_seed_set, dtype=np.float64))

    observations = []
    for i, x in enumerate(X):
        ob = evaluate_candidate(cfg.to_gains(x), plant, profile, weights,
                                noise=replace(noise, seed=noise.seed + i),
                                feedforward=cfg.feedforward)
        observations.append(ob)
        if ob.constraint > threshold:
            raise ValueError(
                f"safe seed point {tuple(x)} measured infeasible "
                f"(constraint {ob.constraint:.3g} > {threshold:.3g})")

    dataset = gp.Dataset(
        inputs=X.copy(),
        cost_targets=np.array([ob.cost for ob in observations]),
        # the safety surrogate models the margin g - c_b: with a zero prior
        # mean, unexplored regions then predict "at the boundary" and stay
        # uncertified until the expanders reach them
        constraint_targets=np.array([ob.constraint - threshold
                                     for ob in observations]),
    )
    initial_design = gp.Dataset(dataset.inputs.copy(), dataset.cost_targets.copy(),
                                dataset.constraint_targets.copy() + threshold)

    # certification-grade fits: correlation reach capped at the domain size
    cost_model = gp.fit(dataset, "cost", box, seed=cfg.seed + 1,
                        length_scale_bounds=(0.01, 1.0))
    constraint_model = gp.fit(dataset, "constraint", box, seed=cfg.seed + 2,
                              length_scale_bounds=(0.01, 1.0))
    cost_kernel = cost_model.kernel
    constraint_kernel = constraint_model.kernel
    if cfg.hyper_mode == "fixed-conservative":
        constraint_kernel = conservative_kernel(constraint_kernel, threshold)
        constraint_model = gp.condition(constraint_kernel, dataset.inputs,
                                        dataset.constraint_targets, box)

    history = []
    violations = 0
    stop_reason = "fixed_budget"
    n_seed = len(X)

    for it in range(1, cfg.iterations + 1):
        measured_safe = dataset.inputs[dataset.constraint_targets <= 0.0]
        try:
            x_next, sel_std, _ = propose_next(cost_model, constraint_model, cfg,
                                              0.0, it, safe_points=measured_safe)
        except EmptySafeSet:
            stop_reason = "empty_safe_set"
            break
        ob = evaluate_candidate(
            cfg.to_gains(x_next), plant, profile, weights,
            noise=replace(noise, seed=noise.seed + n_seed + it - 1),
            feedforward=cfg.feedforward)
        if ob.constraint > threshold:
            violations += 1
        dataset.append(x_next, ob.cost, ob.constraint - threshold)
        cost_model = gp.condition(cost_kernel, dataset.inputs,
                                  dataset.cost_targets, box)
        constraint_model = gp.condition(constraint_kernel, dataset.inputs,
                                        dataset.constraint_targets, box)
        run_best, _ = feasible_best(dataset.cost_targets,
                                    dataset.constraint_targets, 0.0)
        history.append(IterationRecord(
            iteration=it, x=tuple(float(t) for t in x_next),
            cost=ob.cost, constraint=ob.constraint, acq_value=sel_std,
            best_so_far=float(dataset.cost_targets[run_best]), stopped=False))

    best_idx, all_infeasible = feasible_best(dataset.cost_targets,
                                             dataset.constraint_targets, 0.0)
    tuner_cfg = TunerConfig(bounds=cfg.bounds, m_init=max(2, len(X)),
                            max_iterations=cfg.iterations, weights=weights,
                            seed=cfg.seed, fixed_ti=cfg.fixed_ti,
                            feedforward=cfg.feedforward)
    return TuneReport(
        history=history,
        initial_design=initial_design,
        cost_kernel=cost_kernel,
        constraint_kernel=constraint_kernel,
        best_x=tuple(float(t) for t in dataset.inputs[best_idx]),
        best_cost=float(dataset.cost_targets[best_idx]),
        best_constraint=float(dataset.constraint_targets[best_idx]) + threshold,
        stop_reason=stop_reason,
        iteration_of_stop=len(history),
        violations=violations,
        cost_ceiling=math.nan,
        all_initial_infeasible=all_infeasible,
        config=tuner_cfg,
    )
