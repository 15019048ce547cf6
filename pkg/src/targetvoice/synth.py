"""Synthetic speakers, SNR/SIR mixing, augmentation, dataset builders.

Mixtures pair a target talker with an interfering talker and background
noise at controlled signal-to-interference and signal-to-noise ratios,
optionally through the augmentation stack (random low-pass cutoff between
3 and 20 kHz plus a spectral tilt simulating microphone responses). Every
generator is a pure function of its seed, so datasets are bit-reproducible.

Synthetic "speakers" stand in for corpora at desk scale: a glottal-pulse
train with a speaker-specific F0 base and vibrato drives a 3-formant
resonator, alternating voiced / unvoiced / silent segments, so different
seeds produce distinct pitch ranges and long-term spectra.
"""

from __future__ import annotations

from dataclasses import dataclass
import json

import numpy as np
from scipy.signal import lfilter

from targetvoice.audio import SAMPLE_RATE, AudioBuffer
from targetvoice.enhancer import compute_target_gains, vad_labels_from_energy
from targetvoice.frontend import (
    HOP,
    N_BANDS,
    WINDOW,
    ErbFilterbank,
    design_erb_filterbank,
    extract_features,
    feature_matrix,
)

LOWPASS_MIN_HZ = 3000.0
LOWPASS_MAX_HZ = 20000.0
TILT_REF_HZ = 1000.0
TILT_FLOOR_HZ = 50.0


class MixtureError(ValueError):
    """Raised for silent components or malformed mixing requests."""


# ---------------------------------------------------------------------------
# Ratio mixing
# ---------------------------------------------------------------------------


def mix_at_ratio(signal: np.ndarray, other: np.ndarray, ratio_db: float):
    """Scale `other` so signal-to-other energy ratio equals ratio_db.

    Returns (signal + scale * other, scale); the achieved ratio is exact up
    to float rounding (well inside 0.01 dB).
    """
    signal = np.asarray(signal, dtype=np.float64)
    other = np.asarray(other, dtype=np.float64)
    if signal.shape != other.shape:
        raise MixtureError(f"length mismatch: {signal.shape} vs {other.shape}")
    e_signal = float(np.sum(signal * signal))
    e_other = float(np.sum(other * other))
    if e_signal <= 0.0:
        raise MixtureError("signal is silent; ratio undefined")
    if e_other <= 0.0:
        raise MixtureError("other component is silent; ratio undefined")
    scale = float(np.sqrt(e_signal / (e_other * 10.0 ** (ratio_db / 10.0))))
    return signal + scale * other, scale


# ---------------------------------------------------------------------------
# Augmentation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AugmentSpec:
    lowpass_hz: float | None = None
    tilt_db_per_octave: float | None = None

    @property
    def active(self) -> bool:
        return self.lowpass_hz is not None or self.tilt_db_per_octave is not None


def _augment_response(aug: AugmentSpec, n_bins: int = WINDOW // 2 + 1) -> np.ndarray:
    freqs = np.linspace(0.0, SAMPLE_RATE / 2.0, n_bins)
    h = np.ones(n_bins)
    if aug.lowpass_hz is not None:
        if not LOWPASS_MIN_HZ <= aug.lowpass_hz <= LOWPASS_MAX_HZ:
            raise MixtureError(
                f"low-pass cutoff {aug.lowpass_hz} outside "
                f"[{LOWPASS_MIN_HZ}, {LOWPASS_MAX_HZ}] Hz"
            )
        # 4th-order Butterworth magnitude, applied zero-phase
        h *= 1.0 / np.sqrt(1.0 + (freqs / aug.lowpass_hz) ** 8)
    if aug.tilt_db_per_octave is not None:
        octaves = np.log2(np.maximum(freqs, TILT_FLOOR_HZ) / TILT_REF_HZ)
        h *= 10.0 ** (aug.tilt_db_per_octave * octaves / 20.0)
    return h


def augment(audio: np.ndarray, aug: AugmentSpec) -> np.ndarray:
    """Apply the low-pass + tilt magnitude response frame by frame.

    The signal runs through the analysis/synthesis chain with the response
    multiplied onto each frame spectrum, so the shaping matches what the
    enhancement pipeline itself would apply; output length equals input.
    """
    x = np.asarray(audio, dtype=np.float64)
    if not aug.active:
        return x.copy()
    h = _augment_response(aug)
    from targetvoice.frontend import analyze_frame
    from targetvoice.comb import synthesize

    padded = np.concatenate([np.zeros(HOP), x, np.zeros(WINDOW + HOP)])
    n_frames = (len(padded) - WINDOW) // HOP + 1
    spectra = (
        analyze_frame(padded[t * HOP : t * HOP + WINDOW]) * h
        for t in range(n_frames)
    )
    y = synthesize(spectra)
    return y[HOP : HOP + len(x)]


# ---------------------------------------------------------------------------
# Synthetic speakers and noise
# ---------------------------------------------------------------------------


def _resonator_coeffs(freq: float, bandwidth: float):
    r = np.exp(-np.pi * bandwidth / SAMPLE_RATE)
    theta = 2.0 * np.pi * freq / SAMPLE_RATE
    a = [1.0, -2.0 * r * np.cos(theta), r * r]
    b = [1.0 - r]
    return b, a


def synth_speaker(speaker_seed: int, duration: float) -> AudioBuffer:
    """Deterministic synthetic talker audio for desk-scale training.

    The speaker's base F0 (90-280 Hz), vibrato, three formant resonances,
    and segment rhythm all derive from the seed; the waveform alternates
    amplitude-modulated voiced stretches, soft unvoiced noise, and pauses.
    """
    if duration < 1.0:
        raise ValueError("duration must be at least 1 s")
    rng = np.random.default_rng(np.random.SeedSequence([917, int(speaker_seed)]))
    n = int(round(duration * SAMPLE_RATE))

    base_f0 = 90.0 * (280.0 / 90.0) ** rng.uniform()
    vib_rate = rng.uniform(4.0, 7.0)
    vib_depth = rng.uniform(0.01, 0.025)
    formants = [
        (rng.uniform(300.0, 900.0), rng.uniform(60.0, 120.0)),
        (rng.uniform(1000.0, 2200.0), rng.uniform(90.0, 180.0)),
        (rng.uniform(2400.0, 3400.0), rng.uniform(120.0, 250.0)),
    ]

    # segment plan: voiced / unvoiced / silence
    excitation = np.zeros(n)
    voiced_mask = np.zeros(n, dtype=bool)
    pos = 0
    phase = 0.0
    t_axis = np.arange(n) / SAMPLE_RATE
    f0_track = base_f0 * (1.0 + vib_depth * np.sin(2 * np.pi * vib_rate * t_axis))
    while pos < n:
        kind = rng.choice(3, p=[0.62, 0.18, 0.20])
        if kind == 0:  # voiced
            length = int(rng.uniform(0.15, 0.40) * SAMPLE_RATE)
            end = min(pos + length, n)
            env = 0.55 + 0.45 * np.sin(
                np.linspace(0.15, np.pi - 0.15, end - pos)
            )
            for i in range(pos, end):
                phase += f0_track[i] / SAMPLE_RATE
                if phase >= 1.0:
                    phase -= 1.0
                    excitation[i] = env[i - pos]
            voiced_mask[pos:end] = True
            pos = end
        elif kind == 1:  # unvoiced
            length = int(rng.uniform(0.06, 0.15) * SAMPLE_RATE)
            end = min(pos + length, n)
            excitation[pos:end] = 0.02 * rng.standard_normal(end - pos)
            pos = end
        else:  # silence
            length = int(rng.uniform(0.10, 0.30) * SAMPLE_RATE)
            pos = min(pos + length, n)

    signal = excitation
    for freq, bandwidth in formants:
        b, a = _resonator_coeffs(freq, bandwidth)
        signal = lfilter(b, a, signal)
    peak = float(np.max(np.abs(signal)))
    if peak > 0:
        signal = 0.5 * signal / peak
    return AudioBuffer(signal.astype(np.float32))


def speaker_base_f0(speaker_seed: int) -> float:
    """The seeded talker's base F0 in Hz (same draw synth_speaker makes)."""
    rng = np.random.default_rng(np.random.SeedSequence([917, int(speaker_seed)]))
    return 90.0 * (280.0 / 90.0) ** rng.uniform()


def synth_noise(seed: int, duration: float) -> AudioBuffer:
    """Seeded background noise with a random spectral slope."""
    rng = np.random.default_rng(np.random.SeedSequence([431, int(seed)]))
    n = int(round(duration * SAMPLE_RATE))
    white = rng.standard_normal(n)
    spec = np.fft.rfft(white)
    freqs = np.linspace(0.0, SAMPLE_RATE / 2.0, len(spec))
    slope_db_oct = rng.uniform(-9.0, -3.0)
    shape = 10.0 ** (slope_db_oct * np.log2(np.maximum(freqs, 80.0) / 80.0) / 20.0)
    noise = np.fft.irfft(spec * shape, n=n)
    noise *= 0.3 / max(float(np.max(np.abs(noise))), 1e-12)
    return AudioBuffer(noise.astype(np.float32))


def speech_shaped_noise(seed: int, duration: float) -> AudioBuffer:
    """Noise with a speech-like long-term spectrum (flat low, -9 dB/oct above)."""
    rng = np.random.default_rng(np.random.SeedSequence([733, int(seed)]))
    n = int(round(duration * SAMPLE_RATE))
    white = rng.standard_normal(n)
    spec = np.fft.rfft(white)
    freqs = np.linspace(0.0, SAMPLE_RATE / 2.0, len(spec))
    shape = 1.0 / (1.0 + (np.maximum(freqs, 1.0) / 500.0) ** 1.5)
    noise = np.fft.irfft(spec * shape, n=n)
    noise *= 0.3 / max(float(np.max(np.abs(noise))), 1e-12)
    return AudioBuffer(noise.astype(np.float32))


# ---------------------------------------------------------------------------
# Mixture synthesis
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MixtureSpec:
    snr_db: float
    sir_db: float | None  # None: no interferer
    seed: int
    augment: AugmentSpec = AugmentSpec()

    def __post_init__(self) -> None:
        if not np.isfinite(self.snr_db):
            raise MixtureError("snr_db must be finite")
        if self.sir_db is not None and not np.isfinite(self.sir_db):
            raise MixtureError("sir_db must be finite (or None to omit)")


@dataclass
class SupervisionTargets:
    gains: np.ndarray      # [T, 32] ideal ratio masks
    strengths: np.ndarray  # [T, 32] clean-frame pitch coherence
    vad: np.ndarray        # [T] target-active labels {0, 1}


@dataclass
class MixtureExample:
    mixture: AudioBuffer
    clean_target: AudioBuffer
    interferer: AudioBuffer | None
    noise: AudioBuffer
    enrollment: AudioBuffer | None
    targets: SupervisionTargets
    spec: MixtureSpec


def make_mixture(spec: MixtureSpec, target: AudioBuffer,
                 interferer: AudioBuffer | None, noise: AudioBuffer,
                 enrollment: AudioBuffer | None = None,
                 fb: ErbFilterbank | None = None) -> MixtureExample:
    """Mix target + interferer + noise at the requested SIR/SNR.

    Interferer and noise are scaled against the (unscaled) target, then the
    augmentation response — when active — is applied identically to every
    component, so the stored mixture equals the sample-exact sum of the
    stored components and the [0,1] gain targets stay attainable.
    Supervision targets come from the stored clean target vs. the mixture.
    """
    fb = fb if fb is not None else design_erb_filterbank()
    t = np.asarray(target.samples, dtype=np.float64)
    n = np.asarray(noise.samples, dtype=np.float64)
    length = min(len(t), len(n))
    if interferer is not None:
        i = np.asarray(interferer.samples, dtype=np.float64)
        length = min(length, len(i))
    t = t[:length]
    n = n[:length]

    if interferer is not None:
        if spec.sir_db is None:
            raise MixtureError("interferer given but sir_db is None")
        _, i_scale = mix_at_ratio(t, i[:length], spec.sir_db)
        i_scaled = i_scale * i[:length]
    else:
        i_scaled = None
    _, n_scale = mix_at_ratio(t, n, spec.snr_db)
    n_scaled = n_scale * n

    if spec.augment.active:
        t = augment(t, spec.augment)
        n_scaled = augment(n_scaled, spec.augment)
        if i_scaled is not None:
            i_scaled = augment(i_scaled, spec.augment)

    # sum at storage precision so mixture == stored components, bit for bit
    t32 = t.astype(np.float32)
    n32 = n_scaled.astype(np.float32)
    i32 = None if i_scaled is None else i_scaled.astype(np.float32)
    mixture = t32 + n32 if i32 is None else t32 + i32 + n32
    targets = compute_supervision(t32, mixture, fb)
    return MixtureExample(
        mixture=AudioBuffer(mixture),
        clean_target=AudioBuffer(t32),
        interferer=None if i32 is None else AudioBuffer(i32),
        noise=AudioBuffer(n32),
        enrollment=enrollment,
        targets=targets,
        spec=spec,
    )


def compute_supervision(clean: np.ndarray, mixture: np.ndarray,
                        fb: ErbFilterbank) -> SupervisionTargets:
    """Frame-aligned training targets from the stored components."""
    clean_frames = extract_features(clean, fb)
    mix_frames = extract_features(mixture, fb)
    n_frames = min(len(clean_frames), len(mix_frames))
    gains = np.zeros((n_frames, N_BANDS))
    strengths = np.zeros((n_frames, N_BANDS))
    clean_log_e = np.zeros(n_frames)
    for idx in range(n_frames):
        clean_e = 10.0 ** clean_frames[idx].band_mag.astype(np.float64)
        mix_e = 10.0 ** mix_frames[idx].band_mag.astype(np.float64)
        gains[idx] = compute_target_gains(clean_e, mix_e)
        strengths[idx] = clean_frames[idx].pitch_coherence
        clean_log_e[idx] = clean_frames[idx].log_energy
    vad = vad_labels_from_energy(clean_log_e)
    return SupervisionTargets(gains=gains, strengths=strengths, vad=vad)


# ---------------------------------------------------------------------------
# Dataset presets
# ---------------------------------------------------------------------------


def evaluation_specs(n: int, seed: int,
                     snr_range=(3.0, 15.0), sir_range=(3.0, 15.0),
                     augmented: bool = False) -> list[MixtureSpec]:
    """Evaluation preset: SIR and SNR uniform over [3, 15] dB."""
    rng = np.random.default_rng(np.random.SeedSequence([271, int(seed)]))
    specs = []
    for k in range(n):
        aug = AugmentSpec()
        if augmented:
            aug = AugmentSpec(
                lowpass_hz=float(rng.uniform(LOWPASS_MIN_HZ, LOWPASS_MAX_HZ)),
                tilt_db_per_octave=float(rng.uniform(-6.0, 2.0)),
            )
        specs.append(MixtureSpec(
            snr_db=float(rng.uniform(*snr_range)),
            sir_db=float(rng.uniform(*sir_range)),
            seed=int(rng.integers(2 ** 31)),
            augment=aug,
        ))
    return specs


def training_specs(n: int, seed: int, augmented: bool = True) -> list[MixtureSpec]:
    """Training preset: SNR in [-5, 35] dB, SIR in [-5, 10] dB."""
    rng = np.random.default_rng(np.random.SeedSequence([272, int(seed)]))
    specs = []
    for k in range(n):
        aug = AugmentSpec()
        if augmented:
            aug = AugmentSpec(
                lowpass_hz=float(rng.uniform(LOWPASS_MIN_HZ, LOWPASS_MAX_HZ)),
                tilt_db_per_octave=float(rng.uniform(-6.0, 2.0)),
            )
        specs.append(MixtureSpec(
            snr_db=float(rng.uniform(-5.0, 35.0)),
            sir_db=float(rng.uniform(-5.0, 10.0)),
            seed=int(rng.integers(2 ** 31)),
            augment=aug,
        ))
    return specs


# ---------------------------------------------------------------------------
# Manifest I/O (line-delimited JSON)
# ---------------------------------------------------------------------------


def manifest_row(paths: dict, spec: MixtureSpec) -> str:
    row = {
        "mixture": paths["mixture"],
        "target": paths["target"],
        "interferer": paths.get("interferer"),
        "noise": paths["noise"],
        "enrollment": paths.get("enrollment"),
        "snr_db": spec.snr_db,
        "sir_db": spec.sir_db,
        "seed": spec.seed,
        "lowpass_hz": spec.augment.lowpass_hz,
        "tilt_db_per_octave": spec.augment.tilt_db_per_octave,
    }
    return json.dumps(row, sort_keys=True)


def read_manifest(path) -> list[dict]:
    rows = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line:
                rows.append(json.loads(line))
    return rows


# ---------------------------------------------------------------------------
# Toy corpus (desk-scale stand-in for real speech datasets)
# ---------------------------------------------------------------------------


@dataclass
class ToySpeaker:
    speaker_id: int
    train_audio: np.ndarray    # source for training crops / mixtures
    heldout_audio: np.ndarray  # disjoint, for evaluation mixtures
    enroll_audio: np.ndarray   # disjoint, for enrollment embeddings


def build_toy_speakers(n_speakers: int = 8, seed: int = 0,
                       train_s: float = 60.0, heldout_s: float = 20.0,
                       enroll_s: float = 8.0) -> list[ToySpeaker]:
    """Synthesize speakers and split each into disjoint regions."""
    speakers = []
    total = train_s + heldout_s + enroll_s
    for k in range(n_speakers):
        buf = synth_speaker(seed * 1000 + k, total)
        x = buf.samples
        a = int(train_s * SAMPLE_RATE)
        b = a + int(heldout_s * SAMPLE_RATE)
        speakers.append(ToySpeaker(
            speaker_id=k,
            train_audio=x[:a],
            heldout_audio=x[a:b],
            enroll_audio=x[b:],
        ))
    return speakers


def embedder_crop_sets(speakers: list[ToySpeaker], crop_s: float = 6.0,
                       n_train: int = 16, n_heldout: int = 4,
                       fb: ErbFilterbank | None = None):
    """Equal-length feature crops per speaker for GE2E training + EER eval.

    Crops tile the speaker's train region (cycling when short); held-out
    crops come from the disjoint held-out region.
    """
    fb = fb if fb is not None else design_erb_filterbank()
    crop_n = int(crop_s * SAMPLE_RATE)
    train_set: dict[int, list[np.ndarray]] = {}
    heldout_set: dict[int, list[np.ndarray]] = {}
    for spk in speakers:
        feats = feature_matrix(extract_features(spk.train_audio, fb))
        hfeats = feature_matrix(extract_features(spk.heldout_audio, fb))
        crop_t = (crop_n - WINDOW) // HOP + 1
        train_set[spk.speaker_id] = [
            feats[i * crop_t // 2 : i * crop_t // 2 + crop_t]
            for i in range(n_train)
            if i * crop_t // 2 + crop_t <= len(feats)
        ]
        heldout_set[spk.speaker_id] = [
            hfeats[i * crop_t // 2 : i * crop_t // 2 + crop_t]
            for i in range(n_heldout)
            if i * crop_t // 2 + crop_t <= len(hfeats)
        ]
    return train_set, heldout_set


def enrollment_embeddings(speakers: list[ToySpeaker], embedder_net,
                          fb: ErbFilterbank | None = None) -> dict[int, np.ndarray]:
    """Per-speaker embeddings from the enrollment region (disjoint audio)."""
    from targetvoice.embedder import enroll_embedding

    fb = fb if fb is not None else design_erb_filterbank()
    return {
        spk.speaker_id: enroll_embedding(
            embedder_net,
            feature_matrix(extract_features(spk.enroll_audio, fb)),
        )
        for spk in speakers
    }


def _random_slice(rng: np.random.Generator, audio: np.ndarray, n: int,
                  min_rms: float = 0.02, tries: int = 20) -> np.ndarray:
    """A random n-sample slice, retrying away from mostly-silent stretches."""
    if len(audio) < n:
        raise MixtureError("speaker region shorter than requested duration")
    best, best_rms = None, -1.0
    for _ in range(tries):
        start = int(rng.integers(0, len(audio) - n + 1))
        cut = audio[start : start + n]
        rms = float(np.sqrt(np.mean(cut.astype(np.float64) ** 2)))
        if rms >= min_rms:
            return cut
        if rms > best_rms:
            best, best_rms = cut, rms
    return best


def toy_enhancer_dataset(speakers: list[ToySpeaker], embedder_net,
                         n_mixtures: int = 96, seed: int = 0,
                         duration_s: float = 3.0,
                         fb: ErbFilterbank | None = None):
    """Training examples for the toy enhancer.

    Each example mixes an ordered speaker pair (both orders occur, so the
    net cannot ignore its conditioning) with background noise at the
    training SNR/SIR recipe, and carries the mixture features, the target
    speaker's enrollment embedding, and the supervision targets.

    Returns (dataset, embeddings) where embeddings maps speaker id to its
    enrollment vector.
    """
    fb = fb if fb is not None else design_erb_filterbank()
    embeddings = enrollment_embeddings(speakers, embedder_net, fb)
    rng = np.random.default_rng(np.random.SeedSequence([551, int(seed)]))
    specs = training_specs(n_mixtures, seed, augmented=False)
    n = int(duration_s * SAMPLE_RATE)

    dataset = []
    for k in range(n_mixtures):
        a, b = rng.choice(len(speakers), size=2, replace=False)
        target = _random_slice(rng, speakers[a].train_audio, n)
        interf = _random_slice(rng, speakers[b].train_audio, n)
        noise = synth_noise(int(rng.integers(2 ** 31)), duration_s).samples
        try:
            example = make_mixture(specs[k], AudioBuffer(target),
                                   AudioBuffer(interf), AudioBuffer(noise), fb=fb)
        except MixtureError:
            continue  # silent slice (rare); skip
        feats = feature_matrix(extract_features(example.mixture.samples, fb))
        t = min(len(feats), len(example.targets.vad))
        dataset.append({
            "features": feats[:t].astype(np.float64),
            "embedding": embeddings[speakers[a].speaker_id],
            "gains": example.targets.gains[:t],
            "strengths": example.targets.strengths[:t],
            "vad": example.targets.vad[:t],
            "target_speaker": speakers[a].speaker_id,
            "interferer_speaker": speakers[b].speaker_id,
        })
    if not dataset:
        raise MixtureError("no usable training mixtures were generated")
    return dataset, embeddings


def toy_eval_mixtures(speakers: list[ToySpeaker], n_mixtures: int = 50,
                      seed: int = 100, duration_s: float = 3.0,
                      snr_db: float = 25.0, sir_db: float = 0.0,
                      fb: ErbFilterbank | None = None):
    """Held-out two-speaker mixtures for conditioning / VAD evaluation.

    Returns a list of (MixtureExample, target_id, interferer_id); the
    symmetric default SIR makes "enhance the louder talker" useless, so
    only genuine speaker conditioning separates the pair.
    """
    fb = fb if fb is not None else design_erb_filterbank()
    rng = np.random.default_rng(np.random.SeedSequence([552, int(seed)]))
    n = int(duration_s * SAMPLE_RATE)
    out = []
    k = 0
    while len(out) < n_mixtures:
        a, b = rng.choice(len(speakers), size=2, replace=False)
        target = _random_slice(rng, speakers[a].heldout_audio, n)
        interf = _random_slice(rng, speakers[b].heldout_audio, n)
        noise = synth_noise(int(rng.integers(2 ** 31)), duration_s).samples
        spec = MixtureSpec(snr_db=snr_db, sir_db=sir_db,
                           seed=int(rng.integers(2 ** 31)))
        try:
            example = make_mixture(spec, AudioBuffer(target), AudioBuffer(interf),
                                   AudioBuffer(noise), fb=fb)
        except MixtureError:
            k += 1
            if k > 10 * n_mixtures:
                raise
            continue
        out.append((example, speakers[a].speaker_id, speakers[b].speaker_id))
    return out
