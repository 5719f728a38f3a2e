"""Experimental critical-gain detection by spectral monitoring.

Starting from the nominal controller settings, each gain is ramped geometrically
while the discrete Fourier spectrum of the dwell-window position error is
watched inside a fixed frequency band.  The first gain whose spectral peak
exceeds the vibration threshold (or whose trace diverges outright) is taken
as the critical gain for that loop.  The velocity gain is scanned first with
the position gain held nominal, then the position gain with the velocity loop
pinned at nominal, so the mutual dependence of the two loops is deliberately
ignored.

The detected critical gains serve two purposes downstream: they parameterize
the gain-proximity penalty of the cost, and (shrunk by a safety margin) they
bound the optimization box.

The default detection threshold is calibrated to this simulator.  On the real
axis, vibration at the stability boundary reaches several tenths of a
millimetre; here the force saturation of the rigid-axis model caps oscillation
amplitudes near onset at a few micrometres, so the default threshold sits at
half a micrometre.  Both threshold and frequency window are configurable.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace

import numpy as np

from .plant import (GainVector, NoiseModel, PlantParams, ReferenceProfile,
                    NO_NOISE, simulate_cycle)


class NominalUnstable(RuntimeError):
    """The scan cannot start: the nominal gains already exceed the vibration threshold."""


class WindowEmpty(ValueError):
    """No DFT bin falls inside the requested frequency window."""


@dataclass(frozen=True)
class ScanConfig:
    start_gains: GainVector = GainVector(kp=20.0, kv=1.0, ti=7.5)
    step_factor: float = 1.1
    fft_window: tuple = (50.0, 500.0)   # Hz
    threshold: float = 5e-4             # mm, spectral peak at onset (see module docstring)
    max_steps: int = 15                 # per scanned gain
    margin: float = 0.75                # safe-range shrink factor

    def __post_init__(self):
        if self.step_factor <= 1.0:
            raise ValueError("step_factor must exceed 1")
        if not 0.0 <= self.fft_window[0] < self.fft_window[1]:
            raise ValueError("fft_window must satisfy 0 <= f_low < f_high")
        if self.threshold <= 0:
            raise ValueError("threshold must be positive")
        if self.max_steps < 1:
            raise ValueError("max_steps must be positive")
        if not 0.0 < self.margin <= 1.0:
            raise ValueError("margin must lie in (0, 1]")


@dataclass
class ScanEntry:
    phase: str        # "kv" or "kp"
    gain: float
    peak_mm: float
    exceeded: bool


@dataclass
class CriticalGains:
    kp_crit: float
    kv_crit: float
    scan_log: list
    kp_threshold_reached: bool
    kv_threshold_reached: bool
    simulations: int

    @property
    def complete(self) -> bool:
        return self.kp_threshold_reached and self.kv_threshold_reached

    def safe_bounds(self, margin: float, bounds) -> np.ndarray:
        """Shrink a (kp, kv, ...) optimization box to margin times the critical gains."""
        out = np.array(bounds, dtype=np.float64)
        out[0, 1] = min(out[0, 1], margin * self.kp_crit)
        out[1, 1] = min(out[1, 1], margin * self.kv_crit)
        if np.any(out[:, 0] >= out[:, 1]):
            raise ValueError("margin-shrunk bounds collapsed; critical gains too low")
        return out

    def to_csv(self, path):
        with open(path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["phase", "gain", "peak_mm", "exceeded"])
            for e in self.scan_log:
                writer.writerow([e.phase, repr(e.gain), repr(e.peak_mm),
                                 int(e.exceeded)])


def spectral_peak(error_segment, sample_time: float, window) -> float:
    """Peak magnitude [mm] of the error spectrum inside the frequency window.

    The segment is mean-removed and Hann-windowed; the magnitude is scaled so
    a pure in-band sinusoid of amplitude A reports approximately A.
    """
    seg = np.asarray(error_segment, dtype=np.float64)
    if len(seg) < 64:
        raise ValueError("need at least 64 samples for a meaningful spectrum")
    f_low, f_high = window
    nyquist = 0.5 / sample_time
    if f_high > nyquist:
        raise ValueError(f"window edge {f_high} Hz beyond Nyquist {nyquist} Hz")
    w = np.hanning(len(seg))
    spectrum = np.abs(np.fft.rfft((seg - seg.mean()) * w)) * 2.0 / w.sum()
    freqs = np.fft.rfftfreq(len(seg), d=sample_time)
    mask = (freqs >= f_low) & (freqs <= f_high)
    if not np.any(mask):
        raise WindowEmpty("no DFT bin inside the frequency window")
    return float(spectrum[mask].max())


def _dwell_peak(plant, gains, profile, cfg, noise):
    trace = simulate_cycle(plant, gains, profile, noise)
    if trace.diverged:
        return np.inf, True
    peak = spectral_peak(trace.dwell_error(), trace.sample_time, cfg.fft_window)
    return peak, False


def detect_critical_gains(plant: PlantParams, profile: ReferenceProfile,
                          cfg: ScanConfig, noise: NoiseModel = NO_NOISE) -> CriticalGains:
    """Consecutive gain scans locating the vibration onset of each loop.

    Phase one ramps the velocity gain from nominal with the position gain held
    at nominal; phase two ramps the position gain with the velocity loop back
    at nominal.  Each phase stops at the first gain whose dwell-window
    spectral peak exceeds the threshold or whose trace diverges; that gain is
    reported as critical.  A phase that exhausts ``max_steps`` leaves its
    ``*_threshold_reached`` flag unset and reports the last gain tried.

    Noise seeds advance deterministically with the simulation count, so a
    rerun reproduces the scan log exactly.
    """
    log: list[ScanEntry] = []
    sims = 0

    def run(gains, phase):
        nonlocal sims
        peak, diverged = _dwell_peak(plant, gains, profile, cfg,
                                     replace(noise, seed=noise.seed + sims))
        sims += 1
        gain = gains.kv if phase == "kv" else gains.kp
        exceeded = diverged or peak > cfg.threshold
        log.append(ScanEntry(phase=phase, gain=gain,
                             peak_mm=float(peak if np.isfinite(peak) else -1.0),
                             exceeded=exceeded))
        return exceeded

    nominal = cfg.start_gains
    if run(nominal, "kv"):
        raise NominalUnstable(
            "spectral peak at the nominal gains already exceeds the threshold")

    kv_crit, kv_reached = nominal.kv, False
    for step in range(1, cfg.max_steps):
        kv = nominal.kv * cfg.step_factor**step
        kv_crit = kv
        if run(replace(nominal, kv=kv), "kv"):
            kv_reached = True
            break

    kp_crit, kp_reached = nominal.kp, False
    for step in range(1, cfg.max_steps + 1):
        kp = nominal.kp * cfg.step_factor**step
        kp_crit = kp
        if run(replace(nominal, kp=kp), "kp"):
            kp_reached = True
            break

    return CriticalGains(kp_crit=kp_crit, kv_crit=kv_crit, scan_log=log,
                         kp_threshold_reached=kp_reached,
                         kv_threshold_reached=kv_reached,
                         simulations=sims)
