"""FSR tactile frames, filtering, threshold calibration and a trace generator.

A frame holds three 4x4 taxel arrays of calibrated force (N). The threshold
procedure works on the aggregate (sum over taxels) trace:

1. noise floor = mean + 3 sigma of the pre-grasp segment;
2. grasp start = first run of ``consecutive`` frames above the floor;
3. oscillation window = longest high rolling-variance run after the stable
   hold that follows the grasp ramp;
4. f_min = lowest zero-phase low-passed reading inside that window, ignoring
   readings at or below the noise floor; when the window holds several slip
   cycles the median of the per-cycle lows is used, which is far less
   sensitive to sensor noise than a single extreme sample.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import signal

from .errors import NoGraspDetected, NoOscillationDetected
from .rng import substream

N_ARRAYS = 3
ROWS = COLS = 4
N_TAXELS = ROWS * COLS


@dataclass(frozen=True, eq=False)
class TactileFrame:
    """One reading: ``forces`` has shape (3, 16), row-major 4x4 per array."""

    timestamp: float
    forces: np.ndarray

    def __post_init__(self):
        f = np.asarray(self.forces, dtype=float).reshape(N_ARRAYS, N_TAXELS)
        if np.any(f < 0) or not np.all(np.isfinite(f)):
            raise ValueError("taxel readings must be finite and non-negative")
        f.setflags(write=False)
        object.__setattr__(self, "forces", f)
        object.__setattr__(self, "timestamp", float(self.timestamp))

    def grid(self, array: int) -> np.ndarray:
        return self.forces[array].reshape(ROWS, COLS)

    def equals(self, other: "TactileFrame") -> bool:
        return self.timestamp == other.timestamp and np.array_equal(self.forces, other.forces)


def stack(frames) -> tuple:
    """(timestamps (T,), forces (T, 3, 16)) from a list of frames."""
    if len(frames) == 0:
        return np.zeros(0), np.zeros((0, N_ARRAYS, N_TAXELS))
    t = np.array([f.timestamp for f in frames])
    x = np.stack([f.forces for f in frames])
    return t, x


def unstack(times, forces) -> list:
    forces = np.asarray(forces, dtype=float).reshape(len(times), N_ARRAYS, N_TAXELS)
    return [TactileFrame(t, f) for t, f in zip(times, forces)]


@dataclass(frozen=True)
class CalibrationMap:
    """Per-taxel linear calibration: force = gain * (raw - offset), clipped at 0."""

    gain: np.ndarray
    offset: np.ndarray

    def __post_init__(self):
        g = np.broadcast_to(np.asarray(self.gain, float), (N_ARRAYS, N_TAXELS)).copy()
        o = np.broadcast_to(np.asarray(self.offset, float), (N_ARRAYS, N_TAXELS)).copy()
        if np.any(g <= 0):
            raise ValueError("calibration gains must be positive")
        object.__setattr__(self, "gain", g)
        object.__setattr__(self, "offset", o)

    @classmethod
    def identity(cls) -> "CalibrationMap":
        return cls(np.ones((N_ARRAYS, N_TAXELS)), np.zeros((N_ARRAYS, N_TAXELS)))

    def apply(self, raw, timestamp: float = 0.0) -> TactileFrame:
        raw = np.asarray(raw, float).reshape(N_ARRAYS, N_TAXELS)
        return TactileFrame(timestamp, np.maximum(self.gain * (raw - self.offset), 0.0))


def aggregate_force(frame: TactileFrame) -> float:
    """Sum of all 48 taxel forces (N)."""
    return float(frame.forces.sum())


def mean_force(frame: TactileFrame) -> float:
    return float(frame.forces.mean())


def aggregate_trace(frames) -> np.ndarray:
    return stack(frames)[1].sum(axis=(1, 2))


def lowpass(frames, alpha: float) -> list:
    """Per-taxel exponential moving average, y0 = x0."""
    if not 0 < alpha <= 1:
        raise ValueError("alpha must be in (0, 1]")
    t, x = stack(frames)
    return unstack(t, ema(x, alpha))


def ema(x: np.ndarray, alpha: float) -> np.ndarray:
    """EMA along axis 0 (recursive filter via scipy.signal.lfilter)."""
    x = np.asarray(x, float)
    if len(x) == 0 or alpha == 1:
        return x.copy()
    zi = ((1 - alpha) * x[0])[None, ...]
    y, _ = signal.lfilter([alpha], [1, -(1 - alpha)], x, axis=0, zi=zi)
    return y


# ----------------------------------------------------------------- threshold

@dataclass(frozen=True)
class SlipThresholdModel:
    noise_floor: float
    f_min: float
    grasp_start: float
    oscillation_window: tuple
    nonzero_mean: float = float("nan")   # diagnostic only

    def __post_init__(self):
        if not 0 <= self.noise_floor < self.f_min:
            raise ValueError("need 0 <= noise_floor < f_min")
        t0, t1 = self.oscillation_window
        if not t0 < t1:
            raise ValueError("oscillation window must satisfy t0 < t1")
        object.__setattr__(self, "oscillation_window", (float(t0), float(t1)))

    def to_dict(self) -> dict:
        return {
            "noise_floor": self.noise_floor,
            "f_min": self.f_min,
            "grasp_start": self.grasp_start,
            "oscillation_window": list(self.oscillation_window),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SlipThresholdModel":
        return cls(float(d["noise_floor"]), float(d["f_min"]), float(d["grasp_start"]),
                   tuple(d["oscillation_window"]))


def _runs(mask: np.ndarray) -> list:
    """(start, stop) index pairs of True runs."""
    m = np.concatenate([[False], mask, [False]]).astype(int)
    d = np.diff(m)
    return list(zip(np.flatnonzero(d == 1), np.flatnonzero(d == -1)))


def rolling_variance(x: np.ndarray, window: int) -> np.ndarray:
    """Centred rolling variance; edges use the nearest full window."""
    n = len(x)
    if n < window:
        return np.full(n, np.var(x))
    kernel = np.ones(window) / window
    m1 = np.convolve(x, kernel, mode="valid")
    m2 = np.convolve(x * x, kernel, mode="valid")
    v = np.maximum(m2 - m1 * m1, 0.0)
    pad = window // 2
    return np.concatenate([np.full(pad, v[0]), v, np.full(n - len(v) - pad, v[-1])])


def zero_phase_lowpass(x: np.ndarray, cutoff: float, rate: float, order: int = 4) -> np.ndarray:
    """Forward-backward Butterworth filter (no lag)."""
    wn = min(cutoff / (0.5 * rate), 0.99)
    sos = signal.butter(order, wn, output="sos")
    if len(x) <= 3 * (2 * len(sos) + 1):
        return x.copy()
    return signal.sosfiltfilt(sos, x)


def _noise_gain(cutoff: float, rate: float, n: int = 513) -> float:
    """Variance gain of ``zero_phase_lowpass`` on white noise."""
    imp = np.zeros(n)
    imp[n // 2] = 1.0
    return float(np.sum(zero_phase_lowpass(imp, cutoff, rate) ** 2))


def highest_significant_frequency(x: np.ndarray, rate: float, rel: float = 0.3) -> float:
    """Highest frequency whose spectral magnitude reaches ``rel`` of the peak."""
    x = x - np.mean(x)
    spec = np.abs(np.fft.rfft(x * np.hanning(len(x))))
    freqs = np.fft.rfftfreq(len(x), 1.0 / rate)
    spec[0] = 0.0
    if spec.max() == 0:
        return float(freqs[-1])
    return float(freqs[np.flatnonzero(spec >= rel * spec.max())[-1]])


def _trough_level(x: np.ndarray, period: float) -> float:
    """Median of the per-cycle minima of ``x`` (plain minimum if no cycles)."""
    finite = x[np.isfinite(x)]
    swing = finite.max() - finite.min()
    lows, _ = signal.find_peaks(-np.where(np.isfinite(x), x, finite.max()),
                                distance=max(1, int(0.5 * period)), prominence=0.25 * swing)
    if len(lows) == 0:
        return float(finite.min())
    return float(np.median(x[lows]))


def calibrate_threshold(frames, *, pre_grasp: float = 0.5, consecutive: int = 5,
                        window: int = 25, factor: float = 4.0,
                        cutoff_ratio: float = 1.5, prefilter: float = 0.1) -> SlipThresholdModel:
    """Estimate the noise floor and minimum holding force from a grip trace.

    ``pre_grasp`` seconds at the start of the trace are taken as the
    no-contact segment.
    """
    t, x = stack(frames)
    if len(t) < 2:
        raise NoGraspDetected("trace too short")
    agg = x.sum(axis=(1, 2))
    rate = 1.0 / np.median(np.diff(t))

    pre = agg[t < t[0] + pre_grasp]
    if len(pre) < 2:
        pre = agg[:2]
    noise_floor = float(pre.mean() + 3.0 * pre.std())

    above = agg > noise_floor
    start = None
    for a, b in _runs(above):
        if b - a >= consecutive:
            start = a
            break
    if start is None:
        raise NoGraspDetected("aggregate force never exceeds the noise floor")

    # variance is measured on a lightly smoothed copy so sensor noise does
    # not mask the oscillation
    pre_smooth = zero_phase_lowpass(agg, prefilter * rate, rate)
    post = pre_smooth[start:]
    var = rolling_variance(post, window)
    # stable-phase variance: sensor noise (robust, from first differences of
    # the raw trace) passed through the smoothing filter
    d = np.diff(agg[start:])
    sigma2 = (1.4826 * np.median(np.abs(d - np.median(d)))) ** 2 / 2.0
    noise_var = sigma2 * _noise_gain(prefilter * rate, rate)
    scale = max(float(np.median(post)), 1e-9)
    level = factor * max(noise_var, (1e-3 * scale) ** 2)
    high = var > level
    # bridge dips shorter than one window (crests and troughs of a slow cycle)
    for a, b in _runs(~high):
        if 0 < a and b < len(high) and b - a < window:
            high[a:b] = True
    runs = [r for r in _runs(high) if r[1] - r[0] >= window]
    # a run starting at the grasp is the loading ramp
    if runs and runs[0][0] <= window:
        runs = runs[1:]
    if not runs:
        raise NoOscillationDetected("variance never exceeds the stable-phase level")
    a, b = max(runs, key=lambda r: r[1] - r[0])
    a, b = a + start, b + start

    seg = agg[a:b]
    f0 = highest_significant_frequency(seg, rate) if len(seg) > 4 else 0.25 * rate
    smooth = zero_phase_lowpass(agg, max(cutoff_ratio * f0, 1e-3), rate, order=8)[a:b]
    valid = smooth > noise_floor
    if not np.any(valid):
        raise NoOscillationDetected("oscillation window holds only sub-noise readings")
    f_min = _trough_level(np.where(valid, smooth, np.inf), rate / max(f0, 1e-9))
    raw = seg[seg > noise_floor]
    return SlipThresholdModel(
        noise_floor=noise_floor,
        f_min=f_min,
        grasp_start=float(t[start]),
        oscillation_window=(float(t[a]), float(t[b - 1])),
        nonzero_mean=float(raw.mean()) if len(raw) else float("nan"),
    )


def detect_slip_threshold(frame: TactileFrame, model: SlipThresholdModel,
                          grasping: bool = True) -> bool:
    """Slip iff grasping and the (already filtered) aggregate is strictly below f_min."""
    return bool(grasping and aggregate_force(frame) < model.f_min)


class ThresholdDetector:
    """Online threshold detector: EMA filter plus grasp-state tracking."""

    def __init__(self, model: SlipThresholdModel, alpha: float = 0.5):
        self.model = model
        self.alpha = alpha
        self.reset()

    def reset(self):
        self.filtered = None
        self.grasping = False

    def update(self, frame: TactileFrame) -> bool:
        x = frame.forces
        self.filtered = x if self.filtered is None else self.alpha * x + (1 - self.alpha) * self.filtered
        f = TactileFrame(frame.timestamp, self.filtered)
        if aggregate_force(f) >= self.model.f_min:
            self.grasping = True
        return detect_slip_threshold(f, self.model, self.grasping)


# ----------------------------------------------------------------- generator

@dataclass(frozen=True)
class TraceSpec:
    """Synthetic grip trace.

    Phases: pre-grasp (no contact), ramp to ``stable_force``, stable hold,
    gradual decline to the oscillation crest, ``n_cycles`` stick-slip cycles
    between ``oscillation_min + A`` and ``oscillation_min``, then a hold at
    the crest level. Every trough of the noise-free trace equals
    ``oscillation_min`` exactly.
    """

    noise_sigma: float = 0.02
    stable_force: float = 5.0
    oscillation_amplitude: float = 2.0
    oscillation_min: float = 1.2
    pre_grasp: float = 1.0
    ramp: float = 0.5
    stable: float = 2.0
    decline: float = 1.0
    oscillation_period: float = 0.5
    n_cycles: int = 5
    hold: float = 1.0
    sample_rate: float = 100.0
    patch_spread: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if not self.oscillation_min < self.stable_force:
            raise ValueError("oscillation_min must be below stable_force")
        if not 0 < self.oscillation_amplitude <= self.stable_force - self.oscillation_min:
            raise ValueError("oscillation_amplitude must lie in (0, stable - osc_min]")
        if self.noise_sigma < 0 or self.oscillation_min < 0:
            raise ValueError("noise_sigma and oscillation_min must be non-negative")
        for name in ("pre_grasp", "ramp", "stable", "decline", "oscillation_period",
                     "hold", "sample_rate"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.n_cycles < 1:
            raise ValueError("n_cycles must be >= 1")
        if self.period_samples < 4 or self.period_samples % 2:
            raise ValueError("oscillation_period * sample_rate must be an even integer >= 4")

    @property
    def period_samples(self) -> int:
        return int(round(self.oscillation_period * self.sample_rate))

    def phase_samples(self) -> dict:
        r = self.sample_rate
        return {
            "pre_grasp": int(round(self.pre_grasp * r)),
            "ramp": int(round(self.ramp * r)),
            "stable": int(round(self.stable * r)),
            "decline": int(round(self.decline * r)),
            "oscillation": self.n_cycles * self.period_samples,
            "hold": int(round(self.hold * r)),
        }

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    @classmethod
    def from_dict(cls, d: dict) -> "TraceSpec":
        return cls(**d)


def envelope(spec: TraceSpec) -> tuple:
    """Noise-free aggregate force per sample and the oscillation index range."""
    ph = spec.phase_samples()
    crest = spec.oscillation_min + spec.oscillation_amplitude
    pre = np.zeros(ph["pre_grasp"])
    nr = ph["ramp"]
    ramp = spec.stable_force * np.arange(1, nr + 1) / nr
    stable = np.full(ph["stable"], spec.stable_force)
    nd = ph["decline"]
    decline = spec.stable_force + (crest - spec.stable_force) * np.arange(1, nd + 1) / nd
    j = np.arange(ph["oscillation"])
    cyc = (1.0 + np.cos(2.0 * np.pi * j / spec.period_samples)) / 2.0
    osc = spec.oscillation_min + spec.oscillation_amplitude * cyc
    hold = np.full(ph["hold"], crest)
    start = len(pre) + nr + len(stable) + nd
    return np.concatenate([pre, ramp, stable, decline, osc, hold]), (start, start + len(osc))


def contact_patch(centers, spread: float, shares=None) -> np.ndarray:
    """(3, 16) taxel weights summing to 1 from a Gaussian footprint per array.

    ``centers`` is (3, 2) in taxel units (row, col); ``shares`` splits the load
    between arrays (default equal).
    """
    centers = np.asarray(centers, float).reshape(N_ARRAYS, 2)
    rr, cc = np.meshgrid(np.arange(ROWS), np.arange(COLS), indexing="ij")
    d2 = (rr.ravel()[None, :] - centers[:, :1]) ** 2 + (cc.ravel()[None, :] - centers[:, 1:]) ** 2
    w = np.exp(-0.5 * d2 / spread ** 2)
    w /= w.sum(axis=1, keepdims=True)
    shares = np.full(N_ARRAYS, 1.0 / N_ARRAYS) if shares is None else np.asarray(shares, float)
    return w * (shares / shares.sum())[:, None]


def render_frames(force: np.ndarray, weights: np.ndarray, noise: np.ndarray, t0: float,
                  rate: float) -> list:
    """Frames whose taxels carry ``weights * max(force + noise, 0)``."""
    total = np.maximum(force + noise, 0.0)
    x = total[:, None, None] * weights[None]
    times = t0 + np.arange(len(force)) / rate
    return unstack(times, x)


def generate_trace(spec: TraceSpec) -> list:
    """Deterministic synthetic trace for ``spec`` (seeded)."""
    force, _ = envelope(spec)
    rng = substream(spec.seed, "tactile/trace")
    centers = rng.uniform(1.0, 2.0, size=(N_ARRAYS, 2))
    weights = contact_patch(centers, spec.patch_spread)
    noise = rng.normal(0.0, spec.noise_sigma, size=len(force)) if spec.noise_sigma > 0 else np.zeros(len(force))
    return render_frames(force, weights, noise, 0.0, spec.sample_rate)


CSV_HEADER = ["timestamp_s"] + [f"a{a}t{k}" for a in range(N_ARRAYS) for k in range(N_TAXELS)]
