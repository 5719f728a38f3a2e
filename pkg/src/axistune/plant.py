"""Discrete-time simulation of a cascaded position/velocity loop on a linear servo axis.

The axis is a damped single mass driven by a force actuator.  Position-periodic
disturbance forces (magnet cogging and thrust ripple) are modelled by a
truncated Fourier series over the motor position.  The controller is the
classic machine-tool cascade: an outer proportional position loop commanding a
velocity setpoint, an inner PI velocity loop commanding force, with velocity
and force feedforward from the reference trajectory.  The current loop of the
drive is treated as part of the plant (unity gain by default, optional
first-order lag).

Gain units follow industrial drive conventions:

* ``kp`` in 1000/min -- the position loop outputs ``kp`` m/min of velocity
  setpoint per mm of position error, i.e. ``kp * 1000/60`` (mm/s)/mm.
* ``kv`` in N/(mm/min) -- mapped to ``kv * KV_TO_N_PER_MM_S`` N per mm/s of
  velocity error.  The nominal conversion of this unit label would be a
  factor 60; the simulator deliberately uses a larger drive transconductance
  (factor 240) so that, with the default identified axis parameters, the
  closed loop reproduces the qualitative behaviour of the physical machine at
  the same gain numbers: the nominal gains (20, 1) are comfortably stable,
  and ramping either gain from nominal reaches a vibration onset within a
  two-dozen-experiment scan budget.
* ``ti`` in ms -- integral time of the velocity PI.

Everything is deterministic: the same plant, gains, profile and noise seed
produce a bit-identical trace.  The per-sample loop is compiled with numba so
that large gain-grid studies stay cheap.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from numba import njit

# Unit conversions applied by the simulator (see module docstring).
KP_TO_MM_S_PER_MM = 1000.0 / 60.0
KV_TO_N_PER_MM_S = 240.0

# A state beyond this magnitude marks the trace as numerically diverged.
DIVERGENCE_LIMIT = 1e9


class InsufficientExcitation(ValueError):
    """Raised when traces lack the constant-velocity travel needed to fit the ripple model."""


@dataclass(frozen=True)
class PlantParams:
    """Physical parameters of the linear axis.

    ``ripple_coeffs`` is the ordered tuple ``(c1, c2, c3, c4, c5, ...)``:
    constant thrust offset [N], linear gradient [N/m], dominant spatial
    period [m], then amplitude [N] / phase [rad] pairs for each harmonic.
    """

    mass: float                       # kg
    damping: float                    # kg/s
    ripple_coeffs: tuple              # (c1..c_{2n+3})
    n_harmonics: int = 1
    coulomb_friction: float = 0.0     # N
    velocity_limit: float = 315.0     # mm/s, clamp on the velocity setpoint
    force_limit: float = 2000.0       # N, actuator saturation
    actuator_lag: float = 0.0         # s, optional first-order current-loop lag
    ripple_sign: float = 1.0          # +1: disturbance opposes the motor force

    def __post_init__(self):
        if self.mass <= 0:
            raise ValueError("mass must be positive")
        if self.damping < 0:
            raise ValueError("damping must be nonnegative")
        if self.n_harmonics < 1:
            raise ValueError("n_harmonics must be >= 1")
        if len(self.ripple_coeffs) != 2 * self.n_harmonics + 3:
            raise ValueError(
                f"ripple_coeffs needs {2 * self.n_harmonics + 3} entries, "
                f"got {len(self.ripple_coeffs)}"
            )
        if self.ripple_coeffs[2] <= 0:
            raise ValueError("ripple period c3 must be positive")
        if self.velocity_limit <= 0 or self.force_limit <= 0:
            raise ValueError("velocity_limit and force_limit must be positive")
        if self.actuator_lag < 0:
            raise ValueError("actuator_lag must be nonnegative")

    @property
    def ripple_period(self) -> float:
        return self.ripple_coeffs[2]

    def harmonic_arrays(self):
        """Amplitudes and phases as arrays, one entry per harmonic."""
        amps = np.array(self.ripple_coeffs[3::2], dtype=np.float64)
        phases = np.array(self.ripple_coeffs[4::2], dtype=np.float64)
        return amps, phases


def default_plant(**overrides) -> PlantParams:
    """Identified parameters of the reference axis used in examples and tests."""
    params = dict(
        mass=388.61,
        damping=2224.60,
        ripple_coeffs=(-104.9, 682.44, 0.2364, 23.55, 8.77e-7),
        n_harmonics=1,
    )
    params.update(overrides)
    return PlantParams(**params)


@dataclass(frozen=True)
class GainVector:
    """Cascade controller gains: kp [1000/min], kv [N/(mm/min)], ti [ms]."""

    kp: float
    kv: float
    ti: float = 7.5

    def __post_init__(self):
        if not (self.kp > 0 and self.kv > 0 and self.ti > 0):
            raise ValueError("all gains must be strictly positive")
        if not (math.isfinite(self.kp) and math.isfinite(self.kv) and math.isfinite(self.ti)):
            raise ValueError("gains must be finite")


NOMINAL_GAINS = GainVector(kp=20.0, kv=1.0, ti=7.5)


@dataclass(frozen=True)
class ReferenceProfile:
    """Trapezoidal move-dwell-return position reference.

    The cycle is: hold at zero for ``lead_in``, move ``stroke`` mm with a
    trapezoidal (or triangular, for short strokes) velocity profile, dwell at
    the operation location for ``dwell_time``, return, then hold for ``tail``.
    """

    stroke: float = 20.0              # mm
    cruise_velocity: float = 30.0     # mm/s
    accel: float = 600.0              # mm/s^2
    dwell_time: float = 1.0           # s
    sample_time: float = 0.5e-3       # s
    lead_in: float = 0.2              # s
    tail: float = 0.3                 # s

    def __post_init__(self):
        if min(self.stroke, self.cruise_velocity, self.accel, self.dwell_time,
               self.sample_time) <= 0:
            raise ValueError("profile parameters must be positive")
        if self.lead_in < 0 or self.tail < 0:
            raise ValueError("lead_in and tail must be nonnegative")

    def move_time(self) -> float:
        """Duration of one point-to-point move."""
        t_acc = self.cruise_velocity / self.accel
        d_acc = 0.5 * self.accel * t_acc**2
        if 2 * d_acc >= self.stroke:
            # triangular profile: never reaches cruise velocity
            t_acc = math.sqrt(self.stroke / self.accel)
            return 2 * t_acc
        return 2 * t_acc + (self.stroke - 2 * d_acc) / self.cruise_velocity

    def build(self):
        """Sampled reference arrays.

        Returns ``(pos, vel, acc, k_sp, k_st)`` where ``k_sp`` is the sample
        index of arrival at the operation location and ``k_st`` the index of
        departure.
        """
        ts = self.sample_time
        t_move = self.move_time()
        t_arrive = self.lead_in + t_move
        t_depart = t_arrive + self.dwell_time
        t_total = t_depart + t_move + self.tail
        n = int(round(t_total / ts)) + 1
        t = np.arange(n) * ts

        pos = np.zeros(n)
        vel = np.zeros(n)
        acc = np.zeros(n)

        fwd = self._move_samples(t - self.lead_in)
        pos += fwd[0]
        vel += fwd[1]
        acc += fwd[2]
        back = self._move_samples(t - t_depart)
        pos -= back[0]
        vel -= back[1]
        acc -= back[2]

        k_sp = int(round(t_arrive / ts))
        k_st = int(round(t_depart / ts))
        return pos, vel, acc, k_sp, k_st

    def _move_samples(self, tau):
        """Position/velocity/acceleration of one forward move at relative times tau."""
        a = self.accel
        t_acc = self.cruise_velocity / a
        d_acc = 0.5 * a * t_acc**2
        if 2 * d_acc >= self.stroke:
            t_acc = math.sqrt(self.stroke / a)
            t_cruise = 0.0
            v_peak = a * t_acc
        else:
            t_cruise = (self.stroke - 2 * d_acc) / self.cruise_velocity
            v_peak = self.cruise_velocity
        t1, t2, t3 = t_acc, t_acc + t_cruise, 2 * t_acc + t_cruise
        d1 = 0.5 * a * t_acc**2

        pos = np.zeros_like(tau)
        vel = np.zeros_like(tau)
        acc = np.zeros_like(tau)

        m = (tau >= 0) & (tau < t1)
        pos[m] = 0.5 * a * tau[m] ** 2
        vel[m] = a * tau[m]
        acc[m] = a

        m = (tau >= t1) & (tau < t2)
        pos[m] = d1 + v_peak * (tau[m] - t1)
        vel[m] = v_peak

        m = (tau >= t2) & (tau < t3)
        dt = t3 - tau[m]
        pos[m] = self.stroke - 0.5 * a * dt**2
        vel[m] = a * dt
        acc[m] = -a

        pos[tau >= t3] = self.stroke
        return pos, vel, acc


@dataclass(frozen=True)
class NoiseModel:
    """Measurement model of the position encoder.

    ``encoder_std`` is zero-mean Gaussian noise drawn from the seed;
    ``quantization`` is the deterministic resolution of the optical scale
    (100 nm), applied after the noise.  Identical seeds reproduce identical
    traces bit-exactly; quantization needs no seed.
    """

    encoder_std: float = 1e-4    # mm (Gaussian)
    seed: int = 0
    quantization: float = 0.0    # mm (deterministic rounding; 0 disables)

    def __post_init__(self):
        if self.encoder_std < 0 or self.quantization < 0:
            raise ValueError("encoder_std and quantization must be nonnegative")

    def sample(self, n: int) -> np.ndarray:
        if self.encoder_std == 0.0:
            return np.zeros(n)
        rng = np.random.default_rng(self.seed)
        return self.encoder_std * rng.standard_normal(n)


# No stochastic noise; the deterministic encoder resolution stays active.
NO_NOISE = NoiseModel(encoder_std=0.0, seed=0)


@dataclass
class SimTrace:
    """Sampled result of one simulated operation cycle."""

    sample_time: float
    position_error: np.ndarray   # mm, reference minus measured position
    velocity: np.ndarray         # mm/s, physical axis velocity
    force_command: np.ndarray    # N, force applied by the actuator
    k_sp: int
    k_st: int
    diverged: bool = False

    def __post_init__(self):
        n = len(self.position_error)
        if not (len(self.velocity) == n and len(self.force_command) == n):
            raise ValueError("trace series must share one length")
        if not self.k_sp < self.k_st:
            raise ValueError("k_sp must precede k_st")
        if n < self.k_st + 2:
            raise ValueError("trace must extend at least two samples past k_st")

    def dwell_error(self) -> np.ndarray:
        """Position error over the operation-location window [k_sp, k_st]."""
        return self.position_error[self.k_sp:self.k_st + 1]

    def to_csv(self, path):
        with open(path, "w") as f:
            f.write("t,err_mm,vel_mm_s,force_N\n")
            for k in range(len(self.position_error)):
                f.write(
                    f"{k * self.sample_time:.6f},"
                    f"{self.position_error[k]!r},"
                    f"{self.velocity[k]!r},"
                    f"{self.force_command[k]!r}\n"
                )


def ripple_force(position_mm, params: PlantParams):
    """Cogging and thrust-ripple force at the given axis position (mm)."""
    c = params.ripple_coeffs
    p = np.asarray(position_mm, dtype=np.float64) * 1e-3
    out = c[0] + c[1] * p
    for k in range(1, params.n_harmonics + 1):
        out = out + c[2 * k + 1] * np.sin(2.0 * np.pi * k * p / c[2] + c[2 * k + 2])
    if np.ndim(position_mm) == 0:
        return float(out)
    return out


@njit(cache=True)
def _run_cascade(ref_pos, vel_ff, force_ff, noise, quant, mass, damping,
                 c1, c2, period, amps, phases, coulomb, ripple_sign,
                 v_limit, f_limit, kp_mm, kv_n, ti_s, ts, lag_tau):
    n = ref_pos.shape[0]
    err = np.empty(n)
    vel = np.empty(n)
    force = np.empty(n)
    p = 0.0
    v = 0.0
    integ = 0.0
    u_pending = 0.0   # command computed last sample, applied this sample
    u_act = 0.0
    lag_alpha = 1.0 - np.exp(-ts / lag_tau) if lag_tau > 0.0 else 1.0
    diverged = False
    last = n
    for k in range(n):
        p_meas = p + noise[k]
        if quant > 0.0:
            p_meas = np.rint(p_meas / quant) * quant
        e = ref_pos[k] - p_meas
        vref = kp_mm * e + vel_ff[k]
        if vref > v_limit:
            vref = v_limit
        elif vref < -v_limit:
            vref = -v_limit
        ev = vref - v
        # command computed now acts one sample later; the trajectory
        # feedforward is scheduled ahead so it stays aligned
        kff = k + 1 if k + 1 < n else k
        u = kv_n * (ev + integ) + force_ff[kff]
        saturated = False
        if u > f_limit:
            u = f_limit
            saturated = True
        elif u < -f_limit:
            u = -f_limit
            saturated = True
        if not saturated:
            integ += ts / ti_s * ev
        u_cmd = u_pending
        u_pending = u
        u_act += lag_alpha * (u_cmd - u_act)

        pm = p * 1e-3
        fr = c1 + c2 * pm
        for i in range(amps.shape[0]):
            fr += amps[i] * np.sin(2.0 * np.pi * (i + 1) * pm / period + phases[i])
        fnet = u_act - damping * v * 1e-3 - ripple_sign * fr
        if coulomb > 0.0:
            if v > 0.0:
                fnet -= coulomb
            elif v < 0.0:
                fnet += coulomb

        err[k] = e
        vel[k] = v
        force[k] = u_act

        v = v + ts * 1e3 * fnet / mass
        p = p + ts * v
        if abs(v) > DIVERGENCE_LIMIT or abs(p) > DIVERGENCE_LIMIT:
            diverged = True
            last = k + 1
            break
    if diverged:
        for k in range(last, n):
            err[k] = err[last - 1]
            vel[k] = vel[last - 1]
            force[k] = force[last - 1]
    return err, vel, force, diverged


def feedforward_arrays(params: PlantParams, ref_pos, ref_vel, ref_acc, mode="accel"):
    """Velocity and force feedforward signals the drive schedules along the reference.

    Mode ``"accel"`` is velocity plus inertial feedforward; ``"full"`` adds
    damping and disturbance-model (ripple/cogging) compensation the way a
    commissioned drive would; ``"off"`` returns zeros (pure feedback).
    """
    code = _ff_code(mode)
    n = len(ref_pos)
    if code == 0:
        return np.zeros(n), np.zeros(n)
    vel_ff = np.asarray(ref_vel, dtype=np.float64)
    force_ff = params.mass * np.asarray(ref_acc) * 1e-3
    if code > 1:
        force_ff = force_ff + params.damping * vel_ff * 1e-3
        force_ff = force_ff + params.ripple_sign * ripple_force(ref_pos, params)
    return vel_ff, force_ff


FEEDFORWARD_MODES = {"off": 0, "accel": 1, "full": 2}


def _ff_code(feedforward) -> int:
    if isinstance(feedforward, bool):
        return 2 if feedforward else 0
    try:
        return FEEDFORWARD_MODES[feedforward]
    except KeyError:
        raise ValueError(f"feedforward must be one of {sorted(FEEDFORWARD_MODES)}")


def simulate_cycle(params: PlantParams, gains: GainVector, profile: ReferenceProfile,
                   noise: NoiseModel = NO_NOISE, feedforward="accel") -> SimTrace:
    """Run one operation cycle of the closed loop and return the sampled trace.

    ``feedforward`` selects the drive's reference-based compensation:
    ``"full"`` (default) applies velocity, acceleration, damping and
    disturbance-model compensation the way a commissioned drive would;
    ``"accel"`` applies only velocity and inertial feedforward; ``"off"``
    disables it (pure feedback).  Booleans map to "full"/"off".

    A numerically diverged loop (state beyond ``DIVERGENCE_LIMIT``) is
    returned as a flagged trace with the remaining samples frozen, so that
    unstable gains still produce finite metric values.
    """
    ref_pos, ref_vel, ref_acc, k_sp, k_st = profile.build()
    noise_arr = noise.sample(len(ref_pos))
    return _simulate_prebuilt(params, gains, profile.sample_time,
                              ref_pos, ref_vel, ref_acc, k_sp, k_st,
                              noise_arr, feedforward,
                              quantization=noise.quantization)


def _simulate_prebuilt(params, gains, ts, ref_pos, ref_vel, ref_acc,
                       k_sp, k_st, noise_arr, feedforward="accel",
                       quantization=0.0) -> SimTrace:
    """Simulation entry point for callers that reuse prebuilt reference arrays."""
    amps, phases = params.harmonic_arrays()
    vel_ff, force_ff = feedforward_arrays(params, ref_pos, ref_vel, ref_acc,
                                          feedforward)
    err, vel, force, diverged = _run_cascade(
        ref_pos, vel_ff, force_ff, noise_arr, quantization,
        params.mass, params.damping,
        params.ripple_coeffs[0], params.ripple_coeffs[1], params.ripple_coeffs[2],
        amps, phases, params.coulomb_friction, params.ripple_sign,
        params.velocity_limit, params.force_limit,
        gains.kp * KP_TO_MM_S_PER_MM, gains.kv * KV_TO_N_PER_MM_S,
        gains.ti * 1e-3, ts, params.actuator_lag,
    )
    return SimTrace(sample_time=ts, position_error=err, velocity=vel,
                    force_command=force, k_sp=k_sp, k_st=k_st, diverged=diverged)


def identify_plant(force_trace, velocity_trace, position_trace, n_harmonics: int,
                   sample_time: float, ripple_period: float | None = None,
                   min_speed: float | None = None) -> PlantParams:
    """Least-squares identification of the axis parameters from measured traces.

    The disturbance coefficients are fitted linearly on the constant-velocity
    portion of the traces (each harmonic expanded into sine/cosine components,
    the phase recovered by ``atan2``); mass and damping come from the same
    regression via the finite-difference acceleration.  When ``ripple_period``
    is not given, it is estimated from the spectrum of the detrended force
    over the cruise segment and refined by a one-dimensional residual search.

    Raises ``InsufficientExcitation`` if the longest constant-velocity segment
    covers less than two ripple periods of travel, or the regression is
    rank-deficient.
    """
    u = np.asarray(force_trace, dtype=np.float64)
    v = np.asarray(velocity_trace, dtype=np.float64)
    p = np.asarray(position_trace, dtype=np.float64)
    if not (len(u) == len(v) == len(p)):
        raise ValueError("traces must have equal length")
    if len(u) < 16:
        raise InsufficientExcitation("traces too short")

    a = np.diff(v) / sample_time      # mm/s^2, aligned with samples 0..n-2
    u, v, p = u[:-1], v[:-1], p[:-1]

    vmax = np.max(np.abs(v))
    if vmax == 0.0:
        raise InsufficientExcitation("no motion in the traces")
    if min_speed is None:
        min_speed = 0.5 * vmax
    cruise = (np.abs(a) < 0.02 * np.max(np.abs(a))) & (np.abs(v) >= min_speed)
    seg = _longest_run(cruise)
    if seg is None:
        raise InsufficientExcitation("no constant-velocity segment found")
    s0, s1 = seg

    if ripple_period is None:
        ripple_period = _estimate_period(u, v, p, a, s0, s1, sample_time)
    travel = abs(p[s1 - 1] - p[s0]) * 1e-3
    if travel < 2.0 * ripple_period:
        raise InsufficientExcitation(
            f"constant-velocity travel {travel:.3f} m covers less than two "
            f"ripple periods ({ripple_period:.3f} m)"
        )

    mask = np.abs(v) >= 1e-3 * vmax
    m_hat, b_hat, coeffs = _fit_linear_model(
        u[mask], v[mask], p[mask], a[mask], ripple_period, n_harmonics)
    return PlantParams(mass=m_hat, damping=b_hat, ripple_coeffs=tuple(coeffs),
                       n_harmonics=n_harmonics)


def _longest_run(mask):
    best = None
    start = None
    for i, flag in enumerate(np.append(mask, False)):
        if flag and start is None:
            start = i
        elif not flag and start is not None:
            if best is None or i - start > best[1] - best[0]:
                best = (start, i)
            start = None
    return best


def _estimate_period(u, v, p, a, s0, s1, ts):
    """Dominant ripple period [m] from the cruise segment, refined by residual search."""
    from scipy.optimize import minimize_scalar

    seg = slice(s0, s1)
    us = u[seg] - np.polyval(np.polyfit(p[seg], u[seg], 1), p[seg])
    spec = np.abs(np.fft.rfft(us - us.mean()))
    freqs = np.fft.rfftfreq(len(us), d=ts)
    spec[0] = 0.0
    f_peak = freqs[int(np.argmax(spec))]
    if f_peak <= 0.0:
        raise InsufficientExcitation("no periodic component in the cruise force")
    v_mean = abs(np.mean(v[seg]))
    period0 = v_mean / f_peak * 1e-3   # m

    def residual(period):
        try:
            return _fit_linear_model(u, v, p, a, period, 1, return_residual=True)
        except np.linalg.LinAlgError:
            return np.inf

    res = minimize_scalar(residual, bounds=(0.7 * period0, 1.4 * period0),
                          method="bounded", options={"xatol": period0 * 1e-12})
    return float(res.x)


def _fit_linear_model(u, v, p, a, period, n_harmonics, return_residual=False):
    """Regress force on [accel, velocity, 1, position, sin/cos per harmonic]."""
    pm = p * 1e-3
    pbar = pm.mean()
    cols = [a * 1e-3, v * 1e-3, np.ones_like(u), pm - pbar]
    for k in range(1, n_harmonics + 1):
        arg = 2.0 * np.pi * k * pm / period
        cols.append(np.sin(arg))
        cols.append(np.cos(arg))
    X = np.column_stack(cols)
    beta, _, rank, _ = np.linalg.lstsq(X, u, rcond=None)
    if return_residual:
        return float(np.sum((u - X @ beta) ** 2))
    if rank < X.shape[1]:
        raise InsufficientExcitation("regression matrix is rank-deficient")
    m_hat, b_hat = beta[0], beta[1]
    c2 = beta[3]
    c1 = beta[2] - c2 * pbar
    coeffs = [c1, c2, period]
    for k in range(n_harmonics):
        A, B = beta[4 + 2 * k], beta[5 + 2 * k]
        coeffs.append(math.hypot(A, B))
        coeffs.append(math.atan2(B, A))
    return m_hat, b_hat, coeffs
