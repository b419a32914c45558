import numpy as np
import pytest

from phonaware.audio import SAMPLE_RATE, Waveform
from phonaware.synthcorpus import SynthSpec, generate_corpus


def sine(freq_hz: float, seconds: float = 1.0, amp: float = 0.5) -> Waveform:
    t = np.arange(int(seconds * SAMPLE_RATE)) / SAMPLE_RATE
    return Waveform(amp * np.sin(2 * np.pi * freq_hz * t))


@pytest.fixture(scope="session")
def tiny_corpus(tmp_path_factory):
    """3 speakers x 4 utterances x 1.2 s, clean + farfield."""
    root = tmp_path_factory.mktemp("tiny_corpus")
    spec = SynthSpec(n_speakers=3, utts_per_speaker=4, utt_seconds=1.2, seed=11)
    return generate_corpus(spec, root)
