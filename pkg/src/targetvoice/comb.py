"""Pitch comb filtering, per-band gain/strength application, resynthesis.

The comb filter averages five pitch-period-spaced copies of the signal
(taps 0.125/0.25/0.25/0.25/0.125 over lags -2P..+2P), which passes
period-periodic signals unchanged while attenuating inter-harmonic noise.
Band gains and pitch-filter strengths are interpolated from 32 band values
to spectrum bins with the same triangular weights used by the analysis
filterbank, the strength blends the plain and combed spectra per bin, and
the gain scales the blend. Overlap-add with the shared squared-sine window
makes the identity configuration (gains 1, strengths 0) an exact
reconstructor.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from targetvoice.frontend import (
    HOP,
    PITCH_MAX_LAG,
    WINDOW,
    ErbFilterbank,
    vorbis_window,
)

COMB_TAPS = np.array([0.125, 0.25, 0.25, 0.25, 0.125])
# forward taps may only reach into the buffered look-ahead: 3 hops past
# the end of the current window
COMB_MAX_LEAD = 3 * HOP

_SYNTHESIS_WINDOW = vorbis_window(WINDOW)


@dataclass
class EnhancerOutputs:
    """Per-frame control signals: band gains, pitch strengths, VAD."""

    gains: np.ndarray      # [32] in [0, 1]
    strengths: np.ndarray  # [32] in [0, 1]
    vad: float

    def clamped(self) -> "EnhancerOutputs":
        return EnhancerOutputs(
            gains=np.clip(self.gains, 0.0, 1.0),
            strengths=np.clip(self.strengths, 0.0, 1.0),
            vad=float(min(max(self.vad, 0.0), 1.0)),
        )


def identity_outputs() -> EnhancerOutputs:
    """Pass-through controls: unit gains, zero strengths."""
    return EnhancerOutputs(
        gains=np.ones(32), strengths=np.zeros(32), vad=0.0
    )


def comb_filter_window(context: np.ndarray, window_start: int,
                       period: int | None) -> np.ndarray:
    """Comb one 960-sample window inside its surrounding context.

    The context must extend 2*768 samples behind the window and 3 hops
    (the look-ahead budget) past it. k=+2 would look two periods ahead;
    with long periods that exceeds the budget, so it falls back to the +1
    lag. An absent period returns the window unchanged.
    """
    window = context[window_start : window_start + WINDOW]
    if period is None or period <= 0:
        return window.copy()
    if not PITCH_MAX_LAG // 8 <= period <= PITCH_MAX_LAG:
        raise ValueError(f"period {period} outside supported range")
    if window_start < 2 * period or window_start + WINDOW + COMB_MAX_LEAD > len(context):
        raise ValueError("context too short for the comb taps")
    lead2 = 2 * period if 2 * period <= COMB_MAX_LEAD else period
    offsets = (-2 * period, -period, 0, period, lead2)
    out = np.zeros(WINDOW)
    for weight, off in zip(COMB_TAPS, offsets):
        out += weight * context[window_start + off : window_start + off + WINDOW]
    return out


class CombState:
    """Ring of past and look-ahead samples for one stream's comb filter.

    Holds 2*768 samples behind the current analysis window and 3 hops ahead
    of it, which is every sample the five taps can touch. push() advances
    the window by one hop; filter_window() combs the window at the current
    pitch period.
    """

    def __init__(self) -> None:
        self._past = 2 * PITCH_MAX_LAG
        self._buf = np.zeros(self._past + WINDOW + COMB_MAX_LEAD)

    def push(self, hop_samples: np.ndarray) -> None:
        """Advance one hop: shift the ring and append 480 new samples."""
        x = np.asarray(hop_samples, dtype=np.float64)
        if x.shape != (HOP,):
            raise ValueError(f"expected {HOP} samples per hop, got {x.shape}")
        self._buf[:-HOP] = self._buf[HOP:]
        self._buf[-HOP:] = x

    def window_samples(self) -> np.ndarray:
        """The current 960-sample analysis window."""
        return self._buf[self._past : self._past + WINDOW]

    def filter_window(self, period: int | None) -> np.ndarray:
        """Comb-filter the current window; pass-through when unvoiced."""
        return comb_filter_window(self._buf, self._past, period)


def comb_filter_frame(state: CombState, frame: np.ndarray,
                      period: int | None) -> np.ndarray:
    """Push one hop-aligned frame through the comb at the given period.

    The frame must be the state's current window (callers advance the state
    by hops); an absent period returns the input unchanged.
    """
    frame = np.asarray(frame, dtype=np.float64)
    if frame.shape != (WINDOW,):
        raise ValueError(f"expected {WINDOW} samples, got {frame.shape}")
    if not np.allclose(state.window_samples(), frame):
        raise ValueError("frame does not match the comb state's current window")
    return state.filter_window(period)


def bands_to_bins(values: np.ndarray, fb: ErbFilterbank,
                  out: np.ndarray | None = None) -> np.ndarray:
    """Interpolate 32 per-band values to per-bin values (triangular weights)."""
    return np.matmul(values, fb.weights, out=out)


def apply_per_band(noisy_spectrum: np.ndarray, comb_spectrum: np.ndarray,
                   gains: np.ndarray, strengths: np.ndarray,
                   fb: ErbFilterbank) -> np.ndarray:
    """Blend plain and combed spectra per bin, then apply the band gains.

    out[bin] = g[bin] * ((1 - r[bin]) * X_noisy[bin] + r[bin] * X_comb[bin])
    with g, r interpolated from band values. gains all 1 with strengths all
    0 returns the noisy spectrum unchanged.
    """
    if noisy_spectrum.shape != comb_spectrum.shape:
        raise ValueError("spectra must come from the same frame")
    r = bands_to_bins(np.asarray(strengths, dtype=np.float64), fb)
    g = bands_to_bins(np.asarray(gains, dtype=np.float64), fb)
    return g * ((1.0 - r) * noisy_spectrum + r * comb_spectrum)


class OverlapAddSynthesizer:
    """Streaming inverse transform: one spectrum in, 480 samples out.

    Applies the synthesis window and overlap-adds; with the shared
    squared-sine analysis/synthesis pair every sample position is covered
    by w^2 from two consecutive frames summing to one, so an unmodified
    spectrum stream reconstructs the input exactly.
    """

    def __init__(self) -> None:
        self._tail = np.zeros(HOP)

    def push(self, spectrum: np.ndarray) -> np.ndarray:
        frame = np.fft.irfft(spectrum, n=WINDOW) * _SYNTHESIS_WINDOW
        out = self._tail + frame[:HOP]
        self._tail = frame[HOP:].copy()
        return out


def synthesize(spectra) -> np.ndarray:
    """Overlap-add a sequence of frame spectra into a signal.

    Returns hop-aligned output: frame t contributes to samples
    [t*480, t*480 + 960); the emitted stream covers everything up to the
    last frame's midpoint.
    """
    ola = OverlapAddSynthesizer()
    hops = [ola.push(spec) for spec in spectra]
    if not hops:
        return np.zeros(0)
    return np.concatenate(hops)
