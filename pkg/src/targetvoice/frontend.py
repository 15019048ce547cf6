"""Perceptual band frontend: framing, ERB filterbank, pitch, 68-dim features.

A 48 kHz stream is cut into 20 ms analysis windows hopping every 10 ms.
Each frame yields 68 features: 32 log-compressed band energies on a
triangular ERB-rate filterbank, 32 per-band pitch coherences, and 4
general features (normalized pitch period, pitch correlation, frame
log-energy, log-energy delta).

The analysis/synthesis window is the squared-sine (Vorbis) window, which
satisfies the Princen-Bradley condition at 50% overlap so the identity
pipeline reconstructs its input exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.signal import correlate

SAMPLE_RATE = 48000
HOP = 480            # 10 ms
WINDOW = 960         # 20 ms
N_BINS = WINDOW // 2 + 1
N_BANDS = 32
FEATURE_DIM = 68
LOOKAHEAD_FRAMES = 3

PITCH_MIN_LAG = 96   # 500 Hz
PITCH_MAX_LAG = 768  # 62.5 Hz
PITCH_CORR_WINDOW = 768
PITCH_HISTORY = PITCH_MAX_LAG + PITCH_CORR_WINDOW
VOICING_THRESHOLD = 0.3
OCTAVE_PREFERENCE = 0.85

ENERGY_FLOOR = 1e-9
LOG_FLOOR = float(np.log10(ENERGY_FLOOR))

# context a frame needs behind its own start: the coherence comparison
# window reaches back one maximum pitch lag before the frame
FRAME_CONTEXT = PITCH_MAX_LAG


class ConfigurationError(ValueError):
    """Raised when a filterbank layout cannot be realized."""


@dataclass(frozen=True)
class FrameSpec:
    """Framing constants: 10 ms hop, 20 ms window, 30 ms look-ahead."""

    hop: int = HOP
    window: int = WINDOW
    lookahead_frames: int = LOOKAHEAD_FRAMES

    def __post_init__(self) -> None:
        if self.window != 2 * self.hop:
            raise ConfigurationError("window must be exactly two hops")

    @property
    def lookahead_ms(self) -> float:
        return self.lookahead_frames * self.hop * 1000.0 / SAMPLE_RATE


@dataclass(frozen=True)
class PitchEstimate:
    """Pitch period in samples (None when unvoiced) and its correlation."""

    period: int | None
    correlation: float

    @property
    def voiced(self) -> bool:
        return self.period is not None


@dataclass(frozen=True)
class ErbFilterbank:
    """Triangular band weights forming a partition of unity over bins."""

    weights: np.ndarray       # [n_bands, n_bins]
    band_centers: np.ndarray  # Hz, strictly increasing

    @property
    def n_bands(self) -> int:
        return self.weights.shape[0]

    @property
    def n_bins(self) -> int:
        return self.weights.shape[1]


def hz_to_erb_rate(hz):
    """Glasberg & Moore ERB-rate scale."""
    return 21.4 * np.log10(1.0 + 0.00437 * np.asarray(hz, dtype=np.float64))


def erb_rate_to_hz(erb):
    return (np.power(10.0, np.asarray(erb, dtype=np.float64) / 21.4) - 1.0) / 0.00437


def design_erb_filterbank(n_bins: int = N_BINS,
                          sample_rate: int = SAMPLE_RATE) -> ErbFilterbank:
    """Build the 32-band triangular filterbank on the ERB-rate scale.

    Band centers sit at uniform steps on the ERB-rate scale from DC to
    Nyquist; each spectrum bin is split between its two surrounding bands
    by linear interpolation, so the band weights sum to exactly 1 at every
    bin and each band's profile is triangular.

    Raises
    ------
    ConfigurationError
        If n_bins < 64 or too coarse to give every band a dedicated bin
        (a bin where that band holds the largest weight).
    """
    if sample_rate != SAMPLE_RATE:
        raise ConfigurationError(f"sample_rate must be {SAMPLE_RATE}")
    if n_bins < 64:
        raise ConfigurationError(f"n_bins must be >= 64, got {n_bins}")

    nyquist = sample_rate / 2.0
    erb_top = hz_to_erb_rate(nyquist)
    centers = erb_rate_to_hz(np.linspace(0.0, erb_top, N_BANDS))
    centers[0] = 0.0
    centers[-1] = nyquist

    freqs = np.linspace(0.0, nyquist, n_bins)
    weights = np.zeros((N_BANDS, n_bins), dtype=np.float64)
    # each bin's frequency lies between two adjacent centers; split linearly
    upper = np.searchsorted(centers, freqs, side="left").clip(1, N_BANDS - 1)
    lower = upper - 1
    span = centers[upper] - centers[lower]
    frac = (freqs - centers[lower]) / span
    cols = np.arange(n_bins)
    weights[lower, cols] += 1.0 - frac
    weights[upper, cols] += frac

    dedicated = np.argmax(weights, axis=0)
    missing = sorted(set(range(N_BANDS)) - set(dedicated.tolist()))
    if missing:
        raise ConfigurationError(
            f"n_bins={n_bins} leaves bands {missing} without a dedicated bin"
        )
    return ErbFilterbank(weights=weights, band_centers=centers)


def vorbis_window(length: int = WINDOW) -> np.ndarray:
    """Squared-sine window; w[n]^2 + w[n + L/2]^2 == 1 (Princen-Bradley)."""
    n = np.arange(length)
    inner = np.sin(np.pi * (n + 0.5) / length)
    return np.sin(0.5 * np.pi * inner * inner)


_ANALYSIS_WINDOW = vorbis_window(WINDOW)


def analyze_frame(window_samples: np.ndarray) -> np.ndarray:
    """Window a 960-sample frame and return its 481 complex bins."""
    x = np.asarray(window_samples, dtype=np.float64)
    if x.shape != (WINDOW,):
        raise ValueError(f"expected exactly {WINDOW} samples, got {x.shape}")
    return np.fft.rfft(x * _ANALYSIS_WINDOW)


def band_energies(spectrum: np.ndarray, fb: ErbFilterbank,
                  out: np.ndarray | None = None) -> np.ndarray:
    """Per-band energy: E[b] = sum_bin weights[b, bin] * |X[bin]|^2."""
    if spectrum.shape[-1] != fb.n_bins:
        raise ValueError(
            f"spectrum has {spectrum.shape[-1]} bins, filterbank expects {fb.n_bins}"
        )
    power = (spectrum.real * spectrum.real) + (spectrum.imag * spectrum.imag)
    return np.matmul(fb.weights, power, out=out)


def estimate_pitch(history: np.ndarray) -> PitchEstimate:
    """Search lags 96..768 for the pitch period by normalized autocorrelation.

    The last 768 samples are correlated against lagged copies; the returned
    lag is the smallest local maximum of r(tau) whose correlation reaches
    85% of the global peak, which suppresses octave errors toward multiples
    of the true period. A peak below 0.3 is treated as unvoiced.
    """
    x = np.asarray(history, dtype=np.float64)
    if x.ndim != 1 or len(x) < PITCH_HISTORY:
        raise ValueError(f"need at least {PITCH_HISTORY} samples of history")
    x = x[-PITCH_HISTORY:]
    cur = x[PITCH_CORR_WINDOW:]

    cur_energy = float(np.dot(cur, cur))
    if cur_energy < 1e-20:
        return PitchEstimate(None, 0.0)

    # c[k] = sum_n x[k+n] * cur[n]  ->  r(tau) uses k = 768 - tau
    c = correlate(x, cur, mode="valid", method="fft")
    sq = np.concatenate(([0.0], np.cumsum(x * x)))
    lags = np.arange(PITCH_MIN_LAG, PITCH_MAX_LAG + 1)
    lag_energy = sq[PITCH_HISTORY - lags] - sq[PITCH_CORR_WINDOW - lags]
    denom = np.sqrt(cur_energy * lag_energy)
    with np.errstate(invalid="ignore", divide="ignore"):
        r = np.where(denom > 1e-20, c[PITCH_CORR_WINDOW - lags] / denom, 0.0)
    r = np.clip(r, -1.0, 1.0)

    peak = float(r.max())
    if peak < VOICING_THRESHOLD:
        return PitchEstimate(None, 0.0)

    is_peak = np.empty(len(r), dtype=bool)
    is_peak[0] = r[0] >= r[1]
    is_peak[-1] = r[-1] >= r[-2]
    is_peak[1:-1] = (r[1:-1] >= r[:-2]) & (r[1:-1] >= r[2:])
    candidates = np.flatnonzero(is_peak & (r >= OCTAVE_PREFERENCE * peak))
    idx = int(candidates[0]) if len(candidates) else int(np.argmax(r))
    return PitchEstimate(int(lags[idx]), float(r[idx]))


def pitch_coherence(window_samples: np.ndarray, delayed_samples: np.ndarray,
                    fb: ErbFilterbank) -> np.ndarray:
    """Per-band normalized correlation between a frame and its pitch-lagged copy.

    Both frames are analysis-windowed and transformed; coherence in band b is
    the band-weighted real cross-spectrum normalized by the band energies,
    clamped to [0, 1]. Bands without energy read 0.
    """
    spec = analyze_frame(window_samples)
    spec_d = analyze_frame(delayed_samples)
    return coherence_from_spectra(spec, spec_d, fb)


def coherence_from_spectra(spec: np.ndarray, spec_delayed: np.ndarray,
                           fb: ErbFilterbank) -> np.ndarray:
    cross = spec.real * spec_delayed.real + spec.imag * spec_delayed.imag
    e_cur = band_energies(spec, fb)
    e_del = band_energies(spec_delayed, fb)
    num = fb.weights @ cross
    denom = np.sqrt(e_cur * e_del)
    with np.errstate(invalid="ignore", divide="ignore"):
        coh = np.where(denom > 1e-20, num / denom, 0.0)
    return np.clip(coh, 0.0, 1.0)


@dataclass(frozen=True)
class FrameFeatures:
    """One frame's 68-dim feature vector plus the pitch estimate behind it.

    band_mag:        32 log10-compressed band energies (floor -9)
    pitch_coherence: 32 values in [0, 1]
    general:         [normalized period, pitch correlation,
                      frame log-energy, log-energy delta]
    """

    band_mag: np.ndarray
    pitch_coherence: np.ndarray
    general: np.ndarray
    pitch: PitchEstimate

    @property
    def vector(self) -> np.ndarray:
        return np.concatenate([self.band_mag, self.pitch_coherence, self.general])

    @property
    def log_energy(self) -> float:
        return float(self.general[2])


def assemble_features(energies: np.ndarray, coherences: np.ndarray,
                      pitch: PitchEstimate,
                      prev_log_energy: float | None) -> FrameFeatures:
    """Compress energies and pack the 68-dim frame vector."""
    band_mag = np.log10(np.maximum(energies, 0.0) + ENERGY_FLOOR)
    log_energy = float(np.log10(float(np.sum(energies)) + ENERGY_FLOOR))
    if pitch.voiced:
        norm_period = (pitch.period - PITCH_MIN_LAG) / (PITCH_MAX_LAG - PITCH_MIN_LAG)
    else:
        norm_period = 0.0
    delta = 0.0 if prev_log_energy is None else log_energy - prev_log_energy
    general = np.array([norm_period, pitch.correlation, log_energy, delta])
    return FrameFeatures(
        band_mag=band_mag.astype(np.float32),
        pitch_coherence=coherences.astype(np.float32),
        general=general.astype(np.float32),
        pitch=pitch,
    )


class FeatureStream:
    """Streaming feature extractor for one audio session.

    Frame t covers input samples [t*480, t*480 + 960); its features are
    returned from push() the moment that window is complete.  Missing
    history at stream start is treated as silence, so chunking never
    changes the output: pushing a file sample-by-sample produces
    bit-identical features to one big push.

    The 30 ms look-ahead is not a feature-side delay: the enhancer engine
    consumes features up to frame t+3 before finalizing its output for
    frame t (a 3-frame delay line at the feature/output boundary).

    Not thread-safe; use one FeatureStream per stream, one thread at a time.
    The filterbank is immutable and may be shared between sessions.
    """

    def __init__(self, fb: ErbFilterbank | None = None,
                 spec: FrameSpec = FrameSpec()):
        self.fb = fb if fb is not None else design_erb_filterbank()
        self.spec = spec
        # context behind the frame start, zero-primed
        self._history = np.zeros(FRAME_CONTEXT + WINDOW, dtype=np.float64)
        self._filled = FRAME_CONTEXT  # fill position inside the history buffer
        self._pending = np.zeros(0, dtype=np.float64)
        self._total = 0          # samples received
        self._absorbed = 0       # samples moved from pending into history
        self._next_frame = 0     # next frame index to emit
        self._prev_log_energy: float | None = None

    def push(self, samples: np.ndarray) -> list[FrameFeatures]:
        """Feed samples; return every frame whose window is now complete."""
        chunk = np.asarray(samples, dtype=np.float64).ravel()
        self._pending = np.concatenate([self._pending, chunk])
        self._total += len(chunk)

        out: list[FrameFeatures] = []
        while self._next_frame * self.spec.hop + WINDOW <= self._total:
            needed = self._next_frame * self.spec.hop + WINDOW - self._absorbed
            if needed > 0:
                self._absorb(needed)
            out.append(self._emit_frame())
            self._next_frame += 1
        return out

    def _absorb(self, n: int) -> None:
        take, self._pending = self._pending[:n], self._pending[n:]
        if len(take) != n:
            raise AssertionError("internal framing accounting is wrong")
        room = len(self._history) - self._filled
        if n > room:
            shift = n - room
            self._history[:-shift] = self._history[shift:]
            self._filled -= shift
        self._history[self._filled : self._filled + n] = take
        self._filled += n
        self._absorbed += n

    def _emit_frame(self) -> FrameFeatures:
        end = self._filled
        frame = self._history[end - WINDOW : end]
        spec = np.fft.rfft(frame * _ANALYSIS_WINDOW)
        energies = band_energies(spec, self.fb)
        pitch = estimate_pitch(self._history[end - PITCH_HISTORY : end])
        if pitch.voiced:
            start = end - WINDOW - pitch.period
            delayed = self._history[start : start + WINDOW]
            spec_d = np.fft.rfft(delayed * _ANALYSIS_WINDOW)
            coh = coherence_from_spectra(spec, spec_d, self.fb)
        else:
            coh = np.zeros(N_BANDS)
        feats = assemble_features(energies, coh, pitch, self._prev_log_energy)
        self._prev_log_energy = feats.log_energy
        return feats


def extract_features(audio: np.ndarray,
                     fb: ErbFilterbank | None = None) -> list[FrameFeatures]:
    """Whole-file feature extraction; identical to streaming the same samples."""
    return FeatureStream(fb).push(np.asarray(audio))


def feature_matrix(frames: list[FrameFeatures]) -> np.ndarray:
    """Stack frame features into a [T, 68] float32 matrix."""
    if not frames:
        return np.zeros((0, FEATURE_DIM), dtype=np.float32)
    return np.stack([f.vector for f in frames]).astype(np.float32)


def frame_periods(frames: list[FrameFeatures]) -> np.ndarray:
    """Per-frame pitch period in samples, 0 where unvoiced."""
    return np.array([f.pitch.period or 0 for f in frames], dtype=np.int32)
