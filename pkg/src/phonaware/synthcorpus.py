"""Deterministic synthetic corpus: parametric harmonic "speakers" rendered in
clean and far-field conditions, with manifests and balanced trial lists.

Each speaker gets a fixed fundamental frequency (log-spaced across the
speaker set, with seeded jitter) and a fixed harmonic amplitude profile.
Utterances vary phase, vibrato, and amplitude envelope. The far-field
condition pushes each clean utterance through one seeded corruption
(noise / music / babble / reverberation against a generated impulse-response
pool). The corpus bytes are a pure function of the spec.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .audio import SAMPLE_RATE, AugmentPolicy, Waveform, augment, compute_fbank, load_waveform, save_waveform
from .manifest import UttRecord, read_manifest, write_manifest
from .scoring import Trial, write_trials

CONDITIONS = ("clean", "farfield")
_EVAL_FRACTION = 0.25
_N_RIRS = 4
_FARFIELD_SNR = (5.0, 20.0)


@dataclass
class SynthSpec:
    n_speakers: int
    utts_per_speaker: int
    utt_seconds: float = 2.0
    seed: int = 0
    conditions: tuple[str, ...] = CONDITIONS

    def __post_init__(self):
        self.conditions = tuple(self.conditions)
        if self.n_speakers < 2:
            raise ValueError("need at least 2 speakers")
        if self.utts_per_speaker < 2:
            raise ValueError("need at least 2 utterances per speaker")
        if self.utt_seconds <= 0:
            raise ValueError("utt_seconds must be positive")
        unknown = set(self.conditions) - set(CONDITIONS)
        if unknown:
            raise ValueError(f"unknown conditions {sorted(unknown)}")
        if not self.conditions:
            raise ValueError("need at least one condition")


@dataclass
class CorpusPaths:
    root: Path
    train_manifest: Path
    eval_manifest: Path
    eval_manifests: dict[str, Path] = field(default_factory=dict)
    trial_lists: dict[str, Path] = field(default_factory=dict)
    rir_paths: list[Path] = field(default_factory=list)


def _speaker_f0(spec: SynthSpec, s: int, rng: np.random.Generator) -> float:
    # Log-spaced across [90, 280] Hz with a little seeded jitter; spacing
    # guarantees separation regardless of the draw.
    lo, hi = np.log(90.0), np.log(280.0)
    pos = (s + 0.5 + 0.25 * rng.uniform(-1.0, 1.0)) / spec.n_speakers
    return float(np.exp(lo + pos * (hi - lo)))


def _render_utterance(
    f0: float, amps: np.ndarray, n: int, rng: np.random.Generator
) -> np.ndarray:
    t = np.arange(n) / SAMPLE_RATE
    vib_rate = rng.uniform(4.0, 7.0)
    vib_depth = rng.uniform(0.005, 0.02)
    drift = 1.0 + rng.uniform(-0.01, 0.01)
    inst_f0 = f0 * drift * (1.0 + vib_depth * np.sin(2 * np.pi * vib_rate * t + rng.uniform(0, 2 * np.pi)))
    phase = 2 * np.pi * np.cumsum(inst_f0) / SAMPLE_RATE
    envelope = 0.8 + 0.2 * np.sin(2 * np.pi * rng.uniform(1.0, 3.0) * t + rng.uniform(0, 2 * np.pi))
    out = np.zeros(n)
    for h, amp in enumerate(amps, start=1):
        if h * f0 * 1.05 >= SAMPLE_RATE / 2:
            break
        out += amp * np.sin(h * phase + rng.uniform(0, 2 * np.pi))
    out *= envelope
    peak = np.max(np.abs(out))
    return 0.7 * out / peak if peak > 0 else out


def _make_rirs(root: Path, seed: int) -> list[Path]:
    """Small pool of exponentially decaying noise impulse responses."""
    paths = []
    for i in range(_N_RIRS):
        rng = np.random.default_rng([seed, 9000 + i])
        decay_s = rng.uniform(0.15, 0.45)
        n = int(decay_s * SAMPLE_RATE)
        t = np.arange(n) / SAMPLE_RATE
        h = rng.standard_normal(n) * np.exp(-6.9 * t / decay_s)
        h[0] = 1.0  # direct path
        h *= 0.9 / np.max(np.abs(h))
        path = root / "rir" / f"rir{i:02d}.wav"
        save_waveform(Waveform(h), path)
        paths.append(path)
    return paths


def generate_corpus(spec: SynthSpec, out_dir: str | Path) -> CorpusPaths:
    """Write WAVs, train/eval manifests, per-condition eval manifests, and
    balanced per-condition trial lists under out_dir."""
    root = Path(out_dir)
    (root / "wav").mkdir(parents=True, exist_ok=True)
    rir_paths = _make_rirs(root, spec.seed) if "farfield" in spec.conditions else []
    n_samples = int(round(spec.utt_seconds * SAMPLE_RATE))
    # At least two eval utterances per speaker so within-speaker trials exist.
    n_eval = min(spec.utts_per_speaker, max(2, int(round(_EVAL_FRACTION * spec.utts_per_speaker))))

    train_rows: list[UttRecord] = []
    eval_rows: list[UttRecord] = []
    eval_by_cond: dict[str, list[UttRecord]] = {c: [] for c in spec.conditions}
    for s in range(spec.n_speakers):
        spk_rng = np.random.default_rng([spec.seed, s])
        f0 = _speaker_f0(spec, s, spk_rng)
        n_harmonics = 12
        amps = (1.0 / np.arange(1, n_harmonics + 1) ** spk_rng.uniform(0.5, 1.5)) * (
            1.0 + 0.5 * spk_rng.uniform(-1.0, 1.0, size=n_harmonics)
        )
        amps = np.abs(amps)
        speaker_id = f"spk{s:03d}"
        for u in range(spec.utts_per_speaker):
            utt_rng = np.random.default_rng([spec.seed, s, u])
            clean = Waveform(_render_utterance(f0, amps, n_samples, utt_rng))
            is_eval = u >= spec.utts_per_speaker - n_eval
            for cond in spec.conditions:
                if cond == "farfield":
                    # Reverberation pass then an additive pass, one sampled
                    # corruption each, so every far-field utterance carries
                    # both a room response and a noise floor.
                    seed_rng = np.random.default_rng([spec.seed, s, u, 1])
                    reverb = AugmentPolicy(
                        kinds=("reverb",),
                        rir_pool=tuple(str(p) for p in rir_paths),
                        seed=int(seed_rng.integers(2**31)),
                    )
                    additive = AugmentPolicy(
                        kinds=("noise", "music", "babble"),
                        snr_db_range=_FARFIELD_SNR,
                        seed=int(seed_rng.integers(2**31)),
                    )
                    wav = augment(augment(clean, reverb), additive)
                else:
                    wav = clean
                utt_id = f"{speaker_id}-u{u:03d}-{cond}"
                path = root / "wav" / f"{utt_id}.wav"
                save_waveform(wav, path)
                rec = UttRecord(utt_id, speaker_id, str(path), n_samples)
                if is_eval:
                    eval_rows.append(rec)
                    eval_by_cond[cond].append(rec)
                else:
                    train_rows.append(rec)

    paths = CorpusPaths(
        root=root,
        train_manifest=root / "manifest_train.jsonl",
        eval_manifest=root / "manifest_eval.jsonl",
        rir_paths=rir_paths,
    )
    write_manifest(paths.train_manifest, train_rows, relative_to=root)
    write_manifest(paths.eval_manifest, eval_rows, relative_to=root)
    for cond in spec.conditions:
        p = root / f"manifest_eval_{cond}.jsonl"
        write_manifest(p, eval_by_cond[cond], relative_to=root)
        paths.eval_manifests[cond] = p
        trials = _balanced_trials(eval_by_cond[cond], seed=[spec.seed, 777, CONDITIONS.index(cond)])
        t = root / f"trials_{cond}.txt"
        write_trials(t, trials)
        paths.trial_lists[cond] = t
    return paths


def _balanced_trials(rows: list[UttRecord], seed) -> list[Trial]:
    """All within-speaker pairs as targets plus an equal seeded sample of
    cross-speaker pairs; counts are capped to the smaller side."""
    targets = [
        Trial(a.utt_id, b.utt_id, True)
        for a, b in itertools.combinations(rows, 2)
        if a.speaker_id == b.speaker_id
    ]
    cross = [
        (a.utt_id, b.utt_id)
        for a, b in itertools.combinations(rows, 2)
        if a.speaker_id != b.speaker_id
    ]
    rng = np.random.default_rng(seed)
    n = min(len(targets), len(cross))
    if n == 0:
        raise ValueError("not enough evaluation utterances to build balanced trials")
    targets = targets[:n]
    picked = rng.choice(len(cross), size=n, replace=False)
    nontargets = [Trial(cross[i][0], cross[i][1], False) for i in sorted(picked)]
    return targets + nontargets


def sanity_separation(manifest: str | Path | list[UttRecord], num_mels: int = 80) -> float:
    """Mean within-speaker minus mean between-speaker cosine similarity of
    time-averaged filter-bank features; positive means the corpus is usable."""
    rows = manifest if isinstance(manifest, list) else read_manifest(manifest)
    means = {}
    for r in rows:
        feats = compute_fbank(load_waveform(r.path), num_mels)
        means[r.utt_id] = feats.mean(axis=0)
    within, between = [], []
    for a, b in itertools.combinations(rows, 2):
        va, vb = means[a.utt_id], means[b.utt_id]
        cos = float(np.dot(va, vb) / (np.linalg.norm(va) * np.linalg.norm(vb)))
        (within if a.speaker_id == b.speaker_id else between).append(cos)
    if not within or not between:
        raise ValueError("need both within- and between-speaker pairs")
    return float(np.mean(within) - np.mean(between))
