"""Frozen phonetic feature sequences for the matching loss.

Sequences come either from precomputed feature files (one per utterance,
written offline by an external extractor) or from a deterministic synthetic
generator used for tests and toy runs. Nothing in this module carries
trainable parameters: teacher vectors are data.

Feature file format (.jtsf), little-endian:

    bytes 0-3   magic "JTSF"
    bytes 4-7   version, uint32 (currently 1)
    bytes 8-11  T, uint32 (frame count)
    bytes 12-15 D, uint32 (vector dimension)
    then        T*D float32 values, row-major

Frames are laid out on a 25 ms window / 20 ms hop grid at 16 kHz
(window 400 samples, hop 320), so an N-sample utterance yields
T = 1 + floor((N - 400) / 320) frames.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .audio import Waveform

HOP_SAMPLES = 320
WINDOW_SAMPLES = 400
JTSF_MAGIC = b"JTSF"
JTSF_VERSION = 1

_N_BANDS = 24
_FFT = 512
_LOG_FLOOR = 1e-10


@dataclass
class TeacherSequence:
    """Per-frame phonetic vectors for one utterance, shape [T, dim]."""

    vectors: np.ndarray
    utt_id: str = ""
    hop_samples: int = HOP_SAMPLES
    window_samples: int = WINDOW_SAMPLES

    def __post_init__(self):
        self.vectors = np.asarray(self.vectors, dtype=np.float32)
        if self.vectors.ndim != 2 or self.vectors.shape[0] < 1:
            raise ValueError("teacher vectors must be a non-empty [T, dim] matrix")
        if not np.all(np.isfinite(self.vectors)):
            raise ValueError("teacher vectors contain non-finite values")

    def __len__(self) -> int:
        return self.vectors.shape[0]

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]


@dataclass
class TeacherSource:
    """Where teacher sequences come from.

    kind "file_backed": root is a directory of <utt_id>.jtsf files.
    kind "synthetic": root is an integer seed for the synthetic generator.
    """

    kind: str
    root: str | int
    dim: int

    def __post_init__(self):
        if self.kind not in ("file_backed", "synthetic"):
            raise ValueError(f"unknown teacher source kind {self.kind!r}")
        if self.dim < 1:
            raise ValueError("teacher dim must be >= 1")
        if self.kind == "synthetic":
            self.root = int(self.root)

    @property
    def seed(self) -> int:
        if self.kind != "synthetic":
            raise ValueError("seed is only defined for synthetic sources")
        return int(self.root)


def teacher_frames(n_samples: int) -> int:
    """Frame count produced by the teacher for an n-sample waveform."""
    if n_samples < WINDOW_SAMPLES:
        raise ValueError(
            f"waveform of {n_samples} samples is shorter than one teacher window"
        )
    return 1 + (n_samples - WINDOW_SAMPLES) // HOP_SAMPLES


def write_jtsf(path: str | Path, vectors: np.ndarray) -> None:
    vectors = np.ascontiguousarray(vectors, dtype="<f4")
    if vectors.ndim != 2:
        raise ValueError("expected a [T, D] matrix")
    t, d = vectors.shape
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(JTSF_MAGIC)
        fh.write(struct.pack("<III", JTSF_VERSION, t, d))
        fh.write(vectors.tobytes(order="C"))


def read_jtsf(path: str | Path) -> np.ndarray:
    path = Path(path)
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != JTSF_MAGIC:
            raise ValueError(f"{path} is not a JTSF file (bad magic {magic!r})")
        version, t, d = struct.unpack("<III", fh.read(12))
        if version != JTSF_VERSION:
            raise ValueError(f"{path}: unsupported JTSF version {version}")
        data = fh.read(4 * t * d)
    if len(data) != 4 * t * d:
        raise ValueError(f"{path}: truncated payload (expected {t}x{d} float32)")
    return np.frombuffer(data, dtype="<f4").reshape(t, d).copy()


def synthetic_teacher(w: Waveform, dim: int, seed: int, utt_id: str = "") -> TeacherSequence:
    """Deterministic stand-in for a frozen phonetic extractor.

    Each frame is a seeded random projection of the window's energy-normalized
    spectral band profile, so the output is invariant to overall input gain
    and depends only on (waveform content, dim, seed).
    """
    x = w.samples
    t = teacher_frames(x.size)
    windows = np.lib.stride_tricks.sliding_window_view(x, WINDOW_SAMPLES)
    windows = windows[::HOP_SAMPLES][:t]
    power = np.abs(np.fft.rfft(windows, n=_FFT, axis=1)) ** 2
    edges = np.linspace(0, power.shape[1], _N_BANDS + 1).astype(int)
    bands = np.add.reduceat(power, edges[:-1], axis=1)
    totals = bands.sum(axis=1, keepdims=True)
    profile = np.where(totals > 0.0, bands / np.where(totals > 0.0, totals, 1.0), 1.0 / _N_BANDS)
    feat = np.log(np.maximum(profile, _LOG_FLOOR))
    projection = np.random.default_rng(seed).standard_normal((_N_BANDS, dim))
    vectors = feat @ projection
    norms = np.linalg.norm(vectors, axis=1, keepdims=True)
    vectors = np.where(norms > 0.0, vectors / np.where(norms > 0.0, norms, 1.0), vectors)
    return TeacherSequence(vectors.astype(np.float32), utt_id=utt_id)


def jtsf_path(root: str | Path, utt_id: str) -> Path:
    return Path(root) / f"{utt_id}.jtsf"


def load_teacher(
    src: TeacherSource, utt_id: str, waveform: Waveform | None = None
) -> TeacherSequence:
    """Fetch the frozen teacher sequence for one utterance.

    File-backed sources read <root>/<utt_id>.jtsf and check the stored
    dimension against src.dim. Synthetic sources recompute from the given
    waveform (required).
    """
    if src.kind == "file_backed":
        path = jtsf_path(src.root, utt_id)
        if not path.exists():
            raise FileNotFoundError(f"no teacher features for {utt_id!r} at {path}")
        vectors = read_jtsf(path)
        if vectors.shape[1] != src.dim:
            raise ValueError(
                f"{path}: dimension {vectors.shape[1]} does not match source dim {src.dim}"
            )
        return TeacherSequence(vectors, utt_id=utt_id)
    if waveform is None:
        raise ValueError("synthetic teacher needs the utterance waveform")
    return synthetic_teacher(waveform, src.dim, src.seed, utt_id=utt_id)


def slice_for_crop(vectors: np.ndarray, offset_samples: int, crop_samples: int) -> np.ndarray:
    """Rows of a full-utterance teacher matrix covering a waveform crop.

    The crop offset must sit on the teacher hop grid. Row indices wrap
    modulo the stored frame count, mirroring wrap-around waveform padding
    of utterances shorter than the crop.
    """
    if offset_samples % HOP_SAMPLES != 0:
        raise ValueError(f"crop offset {offset_samples} is not a multiple of hop {HOP_SAMPLES}")
    t_total = vectors.shape[0]
    start = offset_samples // HOP_SAMPLES
    idx = (start + np.arange(teacher_frames(crop_samples))) % t_total
    return vectors[idx]
