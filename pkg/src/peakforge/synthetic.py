"""Synthetic signals for the three application archetypes.

All randomness comes from ``numpy.random.Generator(PCG64(seed))`` and is
drawn in a fixed order, so a seed reproduces a record bit for bit.

* ``dive``: non-overlapping unimodal excursions below the surface, depth
  stored positive-down, sampled every 5 s.
* ``pulses``: accumulated single-photon waves at integer arrival samples.
* ``spectrum``: a fixed early bump near 0.5 plus a few bumps of diverse
  widths on a near-zero baseline.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .l0deconv import FACT_WAVE, WaveParams, wave_eval


@dataclass
class SignalRecord:
    x: np.ndarray
    y: np.ndarray
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float)
        self.y = np.asarray(self.y, dtype=float)
        if self.x.shape != self.y.shape or self.x.ndim != 1:
            raise ValueError("x and y must be 1-d with equal length")
        if not (np.all(np.isfinite(self.x)) and np.all(np.isfinite(self.y))):
            raise ValueError("non-finite values in signal")
        if np.any(np.diff(self.x) <= 0):
            raise ValueError("x must be strictly increasing")

    def __len__(self):
        return self.x.size


@dataclass
class Synthetic:
    record: SignalRecord
    truth: dict
    components: np.ndarray  # n x K noiseless parts, one column per peak


def _rng(seed):
    return np.random.Generator(np.random.PCG64(seed))


def _place(rng, count, lo, hi, min_gap, tries=1000):
    for _ in range(tries):
        pts = np.sort(rng.integers(lo, hi, size=count))
        if count < 2 or np.min(np.diff(pts)) >= min_gap:
            return pts
    raise ValueError("cannot satisfy spacing constraints; lower the count or the gap")


def dive_profile(n_dives: int = 5, seed: int = 0, step: float = 5.0,
                 surface: int = 30, noise: float = 0.15,
                 depth_range=(8.0, 40.0), duration_range=(40, 90)) -> Synthetic:
    """Dives as asymmetric smooth bumps separated by surface intervals."""
    rng = _rng(seed)
    pieces = [np.zeros(surface)]
    comps_meta = []
    pos = surface
    for _ in range(n_dives):
        dur = int(rng.integers(duration_range[0], duration_range[1] + 1))
        depth = float(rng.uniform(*depth_range))
        turn = float(rng.uniform(0.35, 0.65))
        u = np.linspace(0.0, 1.0, dur)
        # descent and ascent halves of a sine-squared lobe meeting at `turn`
        phase = np.where(u <= turn, 0.5 * u / turn, 0.5 + 0.5 * (u - turn) / (1 - turn))
        pieces.append(depth * np.sin(np.pi * phase) ** 2)
        comps_meta.append({"start": pos, "stop": pos + dur, "depth": depth,
                           "turn_index": pos + turn * (dur - 1)})
        pos += dur
        gap = int(rng.integers(surface // 2, surface + 1))
        pieces.append(np.zeros(gap))
        pos += gap
    clean = np.concatenate(pieces)
    n = clean.size
    x = step * np.arange(n)
    y = clean + noise * rng.standard_normal(n)
    comps = np.zeros((n, n_dives))
    for i, c in enumerate(comps_meta):
        comps[c["start"]:c["stop"], i] = clean[c["start"]:c["stop"]]
        c["turn_time"] = step * c["turn_index"]
    truth = {"archetype": "dive", "count": n_dives, "noise_sd": noise, "dives": comps_meta}
    return Synthetic(SignalRecord(x, y, {"source": "synthetic:dive", "units": "s,m"}), truth, comps)


def pulse_train(n_pulses: int = 7, seed: int = 0, n: int = 300,
                wave: WaveParams = WaveParams(*FACT_WAVE), noise_frac: float = 0.02,
                max_photons: int = 3, min_gap: int = 12, n_g: int = 151) -> Synthetic:
    """Accumulated waves at integer arrival samples plus Gaussian noise.

    Each arrival carries 1..``max_photons`` photons; the noise standard
    deviation is ``noise_frac * wave.U0``.
    """
    rng = _rng(seed)
    if n_pulses:
        onsets = _place(rng, n_pulses, 5, max(n - 60, 6), min_gap)
        photons = rng.integers(1, max_photons + 1, size=n_pulses)
    else:
        onsets = np.zeros(0, dtype=int)
        photons = np.zeros(0, dtype=int)
    t = np.arange(n, dtype=float)
    comps = np.zeros((n, n_pulses))
    for i, (t0, n_p) in enumerate(zip(onsets, photons)):
        tt = t - t0
        comps[:, i] = np.where(tt < n_g, n_p * wave_eval(tt, wave), 0.0)
    y = comps.sum(axis=1) + noise_frac * wave.U0 * rng.standard_normal(n)
    truth = {"archetype": "pulses", "count": int(n_pulses), "onsets": onsets.tolist(),
             "photons": photons.tolist(), "U0": wave.U0, "xi1": wave.xi1, "xi2": wave.xi2,
             "noise_sd": noise_frac * wave.U0, "n_g": n_g}
    return Synthetic(SignalRecord(t, y, {"source": "synthetic:pulses", "units": "slice,mV"}),
                     truth, comps)


def skewed_bump(x, center, width, height, skew=0.0):
    """Unimodal bump: Gaussian with different widths left and right of center."""
    x = np.asarray(x, dtype=float)
    left = width * (1 - skew)
    right = width * (1 + skew)
    s = np.where(x < center, left, right)
    return height * np.exp(-0.5 * ((x - center) / s) ** 2)


def _quiet_window(clean, rel=1e-3):
    """Longest 1-based inclusive index run where the clean signal is negligible."""
    quiet = np.abs(clean) <= rel * max(np.max(np.abs(clean)), 1e-300) if clean.size else np.zeros(0, bool)
    best, start = (0, -1), None
    for i, q in enumerate(np.append(quiet, False)):
        if q and start is None:
            start = i
        elif not q and start is not None:
            if i - start > best[1] - best[0] + 1:
                best = (start, i - 1)
            start = None
    if best[1] < 0:
        return 0, 0
    return best[0] + 1, best[1] + 1


def spectrum(seed: int = 0, n: int = 1200, bumps=None, noise: float = 0.01,
             reaction_peak: bool = True, x_range=(0.4, 1.2)) -> Synthetic:
    """Spectrum-like signal of diverse bumps on a zero baseline.

    ``bumps`` is a list of ``(center, width, height, skew)``; when omitted
    two to four bumps are drawn at random right of the reaction peak.
    """
    rng = _rng(seed)
    x = np.linspace(x_range[0], x_range[1], n)
    if bumps is None:
        count = int(rng.integers(2, 5))
        centers = np.sort(rng.uniform(0.65, 1.1, size=count))
        widths = rng.uniform(0.006, 0.03, size=count)
        heights = rng.uniform(0.3, 1.0, size=count)
        skews = rng.uniform(-0.3, 0.3, size=count)
        bumps = list(zip(centers, widths, heights, skews))
    bumps = [tuple(float(v) for v in b) + (0.0,) * (4 - len(b)) for b in bumps]
    if reaction_peak:
        bumps = [(0.5, 0.012, 1.0, 0.2)] + bumps
    comps = np.column_stack([skewed_bump(x, *b) for b in bumps]) if bumps else np.zeros((n, 0))
    y = comps.sum(axis=1) + noise * rng.standard_normal(n)
    lo, hi = _quiet_window(comps.sum(axis=1))
    truth = {"archetype": "spectrum", "count": len(bumps), "noise_sd": noise,
             "noise_window_lo": lo, "noise_window_hi": hi,
             "bumps": [dict(zip(("center", "width", "height", "skew"), b)) for b in bumps]}
    return Synthetic(SignalRecord(x, y, {"source": "synthetic:spectrum", "units": "Vs/cm2,V"}),
                     truth, comps)


def generate_synthetic(archetype: str, seed: int = 0, **params) -> Synthetic:
    makers = {"dive": dive_profile, "pulses": pulse_train, "spectrum": spectrum}
    if archetype not in makers:
        raise ValueError(f"unknown archetype {archetype!r}; choose from {sorted(makers)}")
    return makers[archetype](seed=seed, **params)
