"""Waveform I/O, log-mel filter-bank extraction, and far-field corruption.

All audio is 16 kHz mono 16-bit PCM. Features use a 25 ms window with a
10 ms shift, HTK-style mel filters over 0-8000 Hz, a power spectrum, and
natural log floored at ln(1e-10). Pre-emphasis is 0.97 with the first
sample treated as its own predecessor; the analysis window is Hamming.
These conventions are fixed so that feature values are reproducible
bit-for-bit at double precision.
"""

from __future__ import annotations

import functools
import wave
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import signal as _signal

SAMPLE_RATE = 16000
FRAME_LENGTH = 400  # 25 ms
FRAME_SHIFT = 160   # 10 ms
N_FFT = 512
PREEMPHASIS = 0.97
LOG_FLOOR = 1e-10
MEL_LOW_HZ = 0.0
MEL_HIGH_HZ = 8000.0
_ALLOWED_NUM_MELS = (40, 80)

AUGMENT_KINDS = ("noise", "music", "babble", "reverb")


class UnsupportedSampleRateError(ValueError):
    """Audio file is not 16 kHz; the caller must resample before loading."""


@dataclass
class Waveform:
    """Mono waveform with amplitudes in roughly [-1, 1] at 16 kHz."""

    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1 or self.samples.size < 1:
            raise ValueError("waveform must be a non-empty 1-D sample array")
        if self.sample_rate != SAMPLE_RATE:
            raise UnsupportedSampleRateError(
                f"unsupported sample rate {self.sample_rate} Hz (expected {SAMPLE_RATE})"
            )
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("waveform contains non-finite samples")

    def __len__(self) -> int:
        return self.samples.size

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate


def load_waveform(path: str | Path) -> Waveform:
    """Read a 16 kHz mono 16-bit PCM WAV file, scaled to [-1, 1)."""
    path = Path(path)
    with wave.open(str(path), "rb") as fh:
        if fh.getframerate() != SAMPLE_RATE:
            raise UnsupportedSampleRateError(
                f"unsupported sample rate {fh.getframerate()} Hz in {path} "
                f"(expected {SAMPLE_RATE}; resample before loading)"
            )
        if fh.getnchannels() != 1:
            raise ValueError(f"{path} has {fh.getnchannels()} channels (expected mono)")
        if fh.getsampwidth() != 2:
            raise ValueError(f"{path} is not 16-bit PCM")
        raw = fh.readframes(fh.getnframes())
    samples = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    return Waveform(samples)


def save_waveform(w: Waveform, path: str | Path) -> None:
    """Write a waveform as 16 kHz mono 16-bit PCM WAV (clipped to [-1, 1])."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    pcm = np.round(np.clip(w.samples, -1.0, 1.0) * 32767.0).astype("<i2")
    with wave.open(str(path), "wb") as fh:
        fh.setnchannels(1)
        fh.setsampwidth(2)
        fh.setframerate(SAMPLE_RATE)
        fh.writeframes(pcm.tobytes())


def num_frames(n_samples: int) -> int:
    """Feature frame count for an n-sample waveform (no padding, full windows only)."""
    if n_samples < FRAME_LENGTH:
        raise ValueError(
            f"waveform of {n_samples} samples is shorter than one {FRAME_LENGTH}-sample window"
        )
    return 1 + (n_samples - FRAME_LENGTH) // FRAME_SHIFT


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


@functools.lru_cache(maxsize=None)
def _mel_weights(num_mels: int) -> np.ndarray:
    """Triangular mel filter weights, shape [N_FFT//2 + 1, num_mels]."""
    mel_pts = np.linspace(hz_to_mel(MEL_LOW_HZ), hz_to_mel(MEL_HIGH_HZ), num_mels + 2)
    hz_pts = mel_to_hz(mel_pts)
    bin_hz = np.arange(N_FFT // 2 + 1) * (SAMPLE_RATE / N_FFT)
    weights = np.zeros((bin_hz.size, num_mels))
    for m in range(num_mels):
        lo, center, hi = hz_pts[m], hz_pts[m + 1], hz_pts[m + 2]
        rising = (bin_hz - lo) / (center - lo)
        falling = (hi - bin_hz) / (hi - center)
        weights[:, m] = np.maximum(0.0, np.minimum(rising, falling))
    return weights


def compute_fbank(w: Waveform, num_mels: int) -> np.ndarray:
    """Log-mel filter-bank features, shape [T, num_mels].

    T == 1 + floor((N - 400) / 160) for an N-sample input. Scaling the
    waveform by c > 0 shifts every output value by exactly 2*ln(c) as long
    as no value is clipped by the log floor.
    """
    if num_mels not in _ALLOWED_NUM_MELS:
        raise ValueError(f"num_mels must be one of {_ALLOWED_NUM_MELS}, got {num_mels}")
    x = w.samples
    t = num_frames(x.size)  # raises on short input
    emphasized = np.empty_like(x)
    emphasized[0] = x[0] - PREEMPHASIS * x[0]
    emphasized[1:] = x[1:] - PREEMPHASIS * x[:-1]
    frames = np.lib.stride_tricks.sliding_window_view(emphasized, FRAME_LENGTH)
    frames = frames[::FRAME_SHIFT][:t]
    windowed = frames * np.hamming(FRAME_LENGTH)
    power = np.abs(np.fft.rfft(windowed, n=N_FFT, axis=1)) ** 2
    return np.log(np.maximum(power @ _mel_weights(num_mels), LOG_FLOOR))


def add_noise(clean: Waveform, noise: Waveform, snr_db: float) -> Waveform:
    """Mix noise into clean speech at the requested signal-to-noise ratio.

    The noise is tiled or truncated to the clean length, then scaled by the
    gain g that satisfies 10*log10(P_clean / P_{g*noise}) == snr_db, with
    both powers measured over the nonsilent (nonzero) clean samples.
    """
    if not np.isfinite(snr_db):
        raise ValueError(f"snr_db must be finite, got {snr_db}")
    x = clean.samples
    n = np.resize(noise.samples, x.size)  # cyclic tiling / truncation
    support = x != 0.0
    if not support.any():
        raise ValueError("clean signal has zero power (all-zero samples)")
    p_clean = np.mean(x[support] ** 2)
    p_noise = np.mean(n[support] ** 2)
    if p_noise == 0.0:
        raise ValueError("noise has zero power over the clean signal's support")
    gain = np.sqrt(p_clean / (p_noise * 10.0 ** (snr_db / 10.0)))
    return Waveform(x + gain * n)


def apply_reverb(dry: Waveform, rir: Waveform) -> Waveform:
    """Convolve with an impulse response, truncate to the dry length, and
    renormalize so the peak amplitude matches the dry signal's peak."""
    h = rir.samples
    if not np.any(h != 0.0):
        raise ValueError("impulse response is all zeros")
    x = dry.samples
    if h.size <= 32:
        wet = np.convolve(x, h, mode="full")[: x.size]
    else:
        wet = _signal.fftconvolve(x, h, mode="full")[: x.size]
    dry_peak = np.max(np.abs(x))
    wet_peak = np.max(np.abs(wet))
    if wet_peak > 0.0:
        wet = wet * (dry_peak / wet_peak)
    return Waveform(wet)


@dataclass
class AugmentPolicy:
    """One-corruption-per-call augmentation policy.

    kinds: subset of AUGMENT_KINDS to draw from (uniformly).
    snr_db_range: [low, high] dB range for the additive kinds.
    rir_pool: WAV paths of impulse responses for the reverb kind.
    """

    kinds: tuple[str, ...]
    snr_db_range: tuple[float, float] = (5.0, 20.0)
    rir_pool: tuple[str, ...] = ()
    seed: int = 0

    def __post_init__(self):
        self.kinds = tuple(self.kinds)
        self.rir_pool = tuple(str(p) for p in self.rir_pool)
        self.snr_db_range = (float(self.snr_db_range[0]), float(self.snr_db_range[1]))
        if not self.kinds:
            raise ValueError("augmentation policy needs at least one kind")
        unknown = set(self.kinds) - set(AUGMENT_KINDS)
        if unknown:
            raise ValueError(f"unknown augmentation kinds {sorted(unknown)}")
        if self.snr_db_range[0] > self.snr_db_range[1]:
            raise ValueError("snr_db_range low must be <= high")


def _gen_noise(kind: str, n: int, rng: np.random.Generator) -> np.ndarray:
    """Synthesize additive-noise material for one corruption kind."""
    t = np.arange(n) / SAMPLE_RATE
    if kind == "noise":
        return rng.standard_normal(n)
    if kind == "music":
        # A few steady tones with slow independent amplitude modulation.
        out = np.zeros(n)
        for _ in range(5):
            freq = np.exp(rng.uniform(np.log(100.0), np.log(2000.0)))
            phase = rng.uniform(0.0, 2.0 * np.pi)
            am = 0.6 + 0.4 * np.sin(2.0 * np.pi * rng.uniform(0.2, 1.5) * t + rng.uniform(0, 2 * np.pi))
            out += am * np.sin(2.0 * np.pi * freq * t + phase)
        return out
    if kind == "babble":
        # Several competing "voices": harmonic carriers with syllabic-rate envelopes.
        out = np.zeros(n)
        for _ in range(6):
            f0 = rng.uniform(120.0, 280.0)
            envelope = 0.5 + 0.5 * np.sin(2.0 * np.pi * rng.uniform(2.0, 6.0) * t + rng.uniform(0, 2 * np.pi))
            voice = np.zeros(n)
            for h in range(1, 6):
                voice += np.sin(2.0 * np.pi * h * f0 * t + rng.uniform(0, 2 * np.pi)) / h
            out += envelope * voice
        return out
    raise ValueError(f"no noise generator for kind {kind!r}")


def augment(w: Waveform, policy: AugmentPolicy) -> Waveform:
    """Apply one corruption drawn from the policy; deterministic in (w, policy)."""
    rng = np.random.default_rng(policy.seed)
    kind = policy.kinds[rng.integers(len(policy.kinds))]
    if kind == "reverb":
        if not policy.rir_pool:
            raise ValueError("reverb augmentation requested but rir_pool is empty")
        rir_path = policy.rir_pool[rng.integers(len(policy.rir_pool))]
        return apply_reverb(w, load_waveform(rir_path))
    snr_db = rng.uniform(*policy.snr_db_range)
    noise = _gen_noise(kind, len(w), rng)
    return add_noise(w, Waveform(noise), snr_db)


def measure_snr_db(clean: Waveform, noisy: Waveform) -> float:
    """SNR in dB between a clean signal and its noisy version (residual = noise)."""
    x = clean.samples
    residual = noisy.samples - x
    support = x != 0.0
    p_clean = np.mean(x[support] ** 2)
    p_noise = np.mean(residual[support] ** 2)
    return 10.0 * np.log10(p_clean / p_noise)
