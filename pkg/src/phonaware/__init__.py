"""Far-field speaker verification toolkit.

Speaker-embedding encoders (TDNN and SE-Res2 variants) trained jointly with
an additive-angular-margin classifier and a frame-level cosine matching loss
against a frozen phonetic feature extractor, plus a full verification
back-end (cosine scoring, adaptive score normalization, EER, minDCF) and a
deterministic synthetic corpus for desk-scale experiments.
"""

from .audio import (
    AugmentPolicy,
    Waveform,
    add_noise,
    apply_reverb,
    augment,
    compute_fbank,
    load_waveform,
    save_waveform,
)
from .backbones import EncoderConfig, build_encoder, stats_pool, weighted_stats_pool
from .losses import AamConfig, aam_softmax_loss, align, speech_loss, total_loss
from .manifest import UttRecord, read_manifest, write_manifest
from .scoring import (
    Trial,
    asnorm,
    compute_eer,
    compute_min_dcf,
    cosine_score,
    extract_embeddings,
    read_trials,
    run_trials,
    write_trials,
)
from .synthcorpus import SynthSpec, generate_corpus, sanity_separation
from .teacher import (
    TeacherSequence,
    TeacherSource,
    load_teacher,
    read_jtsf,
    synthetic_teacher,
    teacher_frames,
    write_jtsf,
)
from .training import JointModel, TrainConfig, fit, load_checkpoint, lr_at, sample_crop, train_step

__version__ = "0.1.0"
