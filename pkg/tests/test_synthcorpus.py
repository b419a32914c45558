import hashlib
from pathlib import Path

import pytest

from phonaware.manifest import UttRecord, read_manifest, write_manifest
from phonaware.scoring import read_trials
from phonaware.synthcorpus import SynthSpec, generate_corpus, sanity_separation


def _tree_digest(root: Path) -> str:
    digest = hashlib.sha256()
    for path in sorted(root.rglob("*")):
        if path.is_file():
            digest.update(str(path.relative_to(root)).encode())
            digest.update(path.read_bytes())
    return digest.hexdigest()


def test_spec_validation():
    with pytest.raises(ValueError, match="speakers"):
        SynthSpec(n_speakers=1, utts_per_speaker=2)
    with pytest.raises(ValueError, match="utterances"):
        SynthSpec(n_speakers=2, utts_per_speaker=1)
    with pytest.raises(ValueError, match="conditions"):
        SynthSpec(n_speakers=2, utts_per_speaker=2, conditions=("studio",))


def test_counting_two_by_two_clean(tmp_path):
    spec = SynthSpec(n_speakers=2, utts_per_speaker=2, utt_seconds=0.5, seed=0, conditions=("clean",))
    paths = generate_corpus(spec, tmp_path / "c")
    wavs = sorted((tmp_path / "c" / "wav").glob("*.wav"))
    assert len(wavs) == 4
    eval_rows = read_manifest(paths.eval_manifest)
    assert len(eval_rows) == 4  # tiny corpora are all-eval
    assert paths.train_manifest.read_text() == ""


def test_corpus_byte_determinism(tmp_path):
    spec = SynthSpec(n_speakers=2, utts_per_speaker=3, utt_seconds=0.5, seed=5)
    generate_corpus(spec, tmp_path / "a")
    generate_corpus(spec, tmp_path / "b")
    assert _tree_digest(tmp_path / "a") == _tree_digest(tmp_path / "b")
    generate_corpus(SynthSpec(2, 3, 0.5, seed=6), tmp_path / "d")
    assert _tree_digest(tmp_path / "a") != _tree_digest(tmp_path / "d")


def test_trials_balanced_and_reference_existing_utts(tiny_corpus):
    eval_ids = {r.utt_id for r in read_manifest(tiny_corpus.eval_manifest)}
    for cond, trial_path in tiny_corpus.trial_lists.items():
        trials = read_trials(trial_path)
        n_target = sum(t.is_target for t in trials)
        assert n_target == len(trials) - n_target, cond
        for t in trials:
            assert t.enroll in eval_ids and t.test in eval_ids
            assert t.enroll.endswith(cond) and t.test.endswith(cond)


def test_no_utt_id_collisions(tiny_corpus):
    rows = read_manifest(tiny_corpus.train_manifest) + read_manifest(tiny_corpus.eval_manifest)
    ids = [r.utt_id for r in rows]
    assert len(ids) == len(set(ids))


def test_separation_positive_for_distinct_speakers(tmp_path):
    spec = SynthSpec(n_speakers=2, utts_per_speaker=3, utt_seconds=0.8, seed=1, conditions=("clean",))
    paths = generate_corpus(spec, tmp_path / "c")
    assert sanity_separation(paths.eval_manifests["clean"]) > 0.0


def test_separation_near_zero_for_duplicated_speaker(tmp_path):
    # one speaker's utterances relabeled as two "speakers": no real margin
    spec = SynthSpec(n_speakers=2, utts_per_speaker=4, utt_seconds=0.8, seed=2, conditions=("clean",))
    paths = generate_corpus(spec, tmp_path / "c")
    rows = [r for r in read_manifest(paths.eval_manifest) if r.speaker_id == "spk000"]
    rows += [
        UttRecord(r.utt_id, "spk_fake", r.path, r.n_samples)
        for r in read_manifest(paths.train_manifest)
        if r.speaker_id == "spk000"
    ]
    margin = sanity_separation(rows)
    assert abs(margin) < 0.05


def test_separation_clean_at_least_farfield(tmp_path):
    # enough speakers/pairs to beat small-sample variance in the margins
    spec = SynthSpec(n_speakers=6, utts_per_speaker=4, utt_seconds=2.0, seed=0)
    paths = generate_corpus(spec, tmp_path / "c")
    rows = read_manifest(paths.train_manifest) + read_manifest(paths.eval_manifest)
    margins = {}
    for cond in ("clean", "farfield"):
        margins[cond] = sanity_separation([r for r in rows if r.utt_id.endswith(cond)])
    assert margins["clean"] > 0.0
    assert margins["clean"] >= margins["farfield"]


# ------------------------------------------------------------------ manifest


def test_manifest_roundtrip(tmp_path):
    rows = [UttRecord("u1", "s1", "/x/u1.wav", 16000), UttRecord("u2", "s2", "/x/u2.wav", 8000)]
    path = tmp_path / "m.jsonl"
    write_manifest(path, rows)
    assert read_manifest(path) == rows


def test_manifest_rejects_duplicates(tmp_path):
    path = tmp_path / "m.jsonl"
    path.write_text(
        '{"utt_id": "u", "speaker_id": "s", "path": "p", "n_samples": 1}\n' * 2
    )
    with pytest.raises(ValueError, match="duplicate"):
        read_manifest(path)


def test_manifest_rejects_missing_keys(tmp_path):
    path = tmp_path / "m.jsonl"
    path.write_text('{"utt_id": "u", "speaker_id": "s"}\n')
    with pytest.raises(ValueError, match="missing"):
        read_manifest(path)
