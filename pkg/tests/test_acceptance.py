"""Acceptance suite: one test per release criterion, each printing a
PASS/FAIL line (run with `pytest tests/test_acceptance.py -v -s`).

The end-to-end criterion trains the toy encoder twice (matching weight 0
and 0.1) on the generated 20x20 corpus via the ablate command; everything
it needs is produced through the CLI surface.
"""

import csv
import functools
import hashlib
import math
import time
from pathlib import Path

import numpy as np
import pytest
import torch
import torch.nn as nn
import yaml
from click.testing import CliRunner

from phonaware.backbones import EncoderConfig, build_encoder
from phonaware.cli import main
from phonaware.losses import AamConfig, aam_softmax_loss, align, speech_loss
from phonaware.manifest import read_manifest
from phonaware.scoring import compute_eer, compute_min_dcf
from phonaware.teacher import TeacherSource, jtsf_path, synthetic_teacher, write_jtsf
from phonaware.training import TrainConfig, fit, load_checkpoint

from test_losses import finite_difference_gradient, relative_gradient_error
from test_scoring import _random_score_set, oracle_eer, oracle_min_dcf


def criterion(num, description):
    def decorate(fn):
        @functools.wraps(fn)
        def wrapper(*args, **kwargs):
            try:
                fn(*args, **kwargs)
            except BaseException:
                print(f"\n[ACCEPTANCE] criterion {num}: FAIL - {description}")
                raise
            print(f"\n[ACCEPTANCE] criterion {num}: PASS - {description}")

        return wrapper

    return decorate


def _run_cli(args):
    result = CliRunner().invoke(main, args)
    assert result.exit_code == 0, f"command {args} failed:\n{result.output}"
    return result


def _read_csv(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def _tree_digest(root: Path) -> str:
    digest = hashlib.sha256()
    for path in sorted(Path(root).rglob("*")):
        if path.is_file():
            digest.update(str(path.relative_to(root)).encode())
            digest.update(path.read_bytes())
    return digest.hexdigest()


# --------------------------------------------------------------- fixtures


@pytest.fixture(scope="module")
def micro_setup(tmp_path_factory):
    """Small CLI-generated corpus plus a fast config for determinism checks."""
    root = tmp_path_factory.mktemp("micro")
    corpus = root / "corpus"
    _run_cli(
        ["gen-data", "--out", str(corpus), "--speakers", "4", "--utts-per-speaker", "3",
         "--seconds", "1.0", "--seed", "5"]
    )
    raw = yaml.safe_load((corpus / "config.yaml").read_text())
    raw["model"].update({"channels": 16, "embed_dim": 16})
    raw["train"].update({"epochs": 2, "batch_size": 6, "crop_seconds": 1.0, "seed": 5})
    cfg_path = corpus / "micro.yaml"
    cfg_path.write_text(yaml.safe_dump(raw))
    return {"root": root, "corpus": corpus, "config": cfg_path, "raw": raw}


@pytest.fixture(scope="module")
def e2e(tmp_path_factory):
    """Criterion-7 corpus and ablation sweep over matching weights {0, 0.1}."""
    root = tmp_path_factory.mktemp("e2e")
    corpus = root / "corpus"
    started = time.monotonic()
    _run_cli(
        ["gen-data", "--out", str(corpus), "--speakers", "20", "--utts-per-speaker", "20",
         "--seconds", "2.0", "--seed", "0"]
    )
    sweep_dir = root / "sweep"
    _run_cli(
        ["ablate", "--config", str(corpus / "config.yaml"),
         "--sweep", "phonetic_weight=0,0.1", "--out", str(sweep_dir)]
    )
    elapsed = time.monotonic() - started
    return {"corpus": corpus, "sweep": sweep_dir, "elapsed": elapsed}


# --------------------------------------------------------------- criteria


@criterion(1, "loss gradients match central finite differences (rel err < 1e-4)")
def test_criterion_1_gradient_checks():
    started = time.monotonic()
    rng = np.random.default_rng(2024)
    checked = 0
    while checked < 10:  # margin-classifier loss
        b, d, c = int(rng.integers(2, 6)), int(rng.integers(2, 7)), int(rng.integers(2, 6))
        emb = torch.as_tensor(rng.standard_normal((b, d)), dtype=torch.float64)
        w = torch.as_tensor(rng.standard_normal((c, d)), dtype=torch.float64)
        cosine = (emb / emb.norm(dim=1, keepdim=True)) @ (w / w.norm(dim=1, keepdim=True)).t()
        if (cosine.abs() > 0.999).any() or ((cosine - math.cos(math.pi - 0.2)).abs() < 1e-3).any():
            continue
        labels = torch.as_tensor(rng.integers(0, c, size=b))
        cfg = AamConfig(num_classes=c, margin=0.2, scale=30.0)
        emb.requires_grad_(True)
        w.requires_grad_(True)
        analytic = torch.autograd.grad(aam_softmax_loss(emb, labels, w, cfg), [emb, w])
        with torch.no_grad():
            fn = lambda: aam_softmax_loss(emb, labels, w, cfg)
            for got, tensor in zip(analytic, (emb, w)):
                assert relative_gradient_error(got, finite_difference_gradient(fn, tensor)) < 1e-4
        checked += 1
    for case in range(10):  # matching loss through alignment and projection
        case_rng = np.random.default_rng(3000 + case)
        t_target = int(case_rng.integers(2, 6))
        t_x = int(case_rng.integers(t_target, 2 * t_target + 4))
        d, d_t = int(case_rng.integers(2, 6)), int(case_rng.integers(2, 5))
        x = torch.as_tensor(case_rng.standard_normal((t_x, d)), dtype=torch.float64)
        with torch.random.fork_rng():
            torch.manual_seed(case)
            proj = nn.Linear(d, d_t).double()
        v = torch.as_tensor(case_rng.standard_normal((t_target, d_t)), dtype=torch.float64)
        x.requires_grad_(True)
        loss = speech_loss(align(x, t_target, projection=proj), v)
        analytic = torch.autograd.grad(loss, [x, proj.weight, proj.bias])
        with torch.no_grad():
            fn = lambda: speech_loss(align(x, t_target, projection=proj), v)
            for got, tensor in zip(analytic, (x, proj.weight, proj.bias)):
                assert relative_gradient_error(got, finite_difference_gradient(fn, tensor)) < 1e-4
    assert time.monotonic() - started < 60.0


@criterion(2, "EER and minDCF agree with the exhaustive threshold oracle (1e-9, 100 sets)")
def test_criterion_2_metric_oracles():
    started = time.monotonic()
    for seed in range(100):
        rng = np.random.default_rng(seed)
        scores, labels = _random_score_set(rng, max_trials=500)
        eer, _ = compute_eer(scores, labels)
        assert abs(eer - oracle_eer(scores, labels)) < 1e-9
        mdcf, _ = compute_min_dcf(scores, labels)
        assert abs(mdcf - oracle_min_dcf(scores, labels)) < 1e-9
    assert time.monotonic() - started < 60.0


@criterion(3, "logged steps satisfy the exact loss decomposition; weight-0 run is bit-identical to teacher-free")
def test_criterion_3_decomposition(micro_setup, e2e):
    # bit-level identity over every logged step of the end-to-end runs
    for weight in ("0.0", "0.1"):
        steps = _read_csv(e2e["sweep"] / f"phonetic_weight_{weight}" / "steps.csv")
        assert steps
        for row in steps:
            total = float(row["l_total"])
            expect = float(row["l_speaker"]) + float(weight) * float(row["l_speech"])
            assert total == expect, f"step {row['step']} at weight {weight}"
    # weight-0 training equals a teacher-free baseline, bit for bit
    raw = dict(micro_setup["raw"])
    corpus = micro_setup["corpus"]
    raw_a = yaml.safe_load(yaml.safe_dump(raw))
    raw_a["train"]["phonetic_weight"] = 0.0
    raw_b = yaml.safe_load(yaml.safe_dump(raw_a))
    raw_b["teacher"] = None
    (corpus / "w0_teacher.yaml").write_text(yaml.safe_dump(raw_a))
    (corpus / "w0_bare.yaml").write_text(yaml.safe_dump(raw_b))
    out_a = micro_setup["root"] / "w0_teacher"
    out_b = micro_setup["root"] / "w0_bare"
    _run_cli(["train", "--config", str(corpus / "w0_teacher.yaml"), "--out", str(out_a)])
    _run_cli(["train", "--config", str(corpus / "w0_bare.yaml"), "--out", str(out_b)])
    for name in ("metrics.csv", "steps.csv"):
        assert (out_a / name).read_bytes() == (out_b / name).read_bytes(), name
    state_a = load_checkpoint(out_a / "checkpoint.pt").model_state
    state_b = load_checkpoint(out_b / "checkpoint.pt").model_state
    assert state_a.keys() == state_b.keys()
    for key in state_a:
        assert torch.equal(state_a[key], state_b[key]), key


@criterion(4, "teacher features are frozen: unchanged bytes across fit, none in the parameter registry")
def test_criterion_4_teacher_freezing(micro_setup, tmp_path):
    rows = read_manifest(micro_setup["corpus"] / "manifest_train.jsonl")
    teacher_dir = tmp_path / "teacher"
    from phonaware.audio import load_waveform

    for r in rows:
        seq = synthetic_teacher(load_waveform(r.path), 8, seed=5, utt_id=r.utt_id)
        write_jtsf(jtsf_path(teacher_dir, r.utt_id), seq.vectors)

    def checksum():
        digest = hashlib.sha256()
        for r in rows:
            digest.update(jtsf_path(teacher_dir, r.utt_id).read_bytes())
        return digest.hexdigest()

    before = checksum()
    cfg = TrainConfig(epochs=2, batch_size=6, crop_seconds=1.0, phonetic_weight=0.1, seed=5)
    encoder_cfg = EncoderConfig(arch="ecapa", channels=16, embed_dim=16, num_mels=80)
    result = fit(rows, TeacherSource("file_backed", str(teacher_dir), 8), cfg, encoder_cfg)
    assert checksum() == before
    registry = result.model.parameter_registry()
    assert registry
    assert all("teacher" not in name for name in registry)
    assert {n.split(".")[0] for n in registry} == {"encoder", "class_weights", "projection"}


@criterion(5, "alignment matches the bin-max oracle, preserves teacher length, identity when shapes agree")
def test_criterion_5_alignment_contracts():
    rng = np.random.default_rng(99)
    for _ in range(30):
        t_target = int(rng.integers(1, 40))
        t_x = int(rng.integers(t_target, 4 * t_target + 8))
        d = int(rng.integers(1, 8))
        x = rng.standard_normal((t_x, d))
        z = align(torch.as_tensor(x), t_target).numpy()
        assert z.shape == (t_target, d)
        for i in range(t_target):
            lo = (i * t_x) // t_target
            hi = ((i + 1) * t_x) // t_target
            np.testing.assert_array_equal(z[i], x[lo:hi].max(axis=0))
    x = torch.as_tensor(rng.standard_normal((17, 5)))
    torch.testing.assert_close(align(x, 17), x, rtol=0, atol=0)
    with pytest.raises(ValueError):
        align(x, 18)


@criterion(6, "embedding and frame-map shapes conform at reference widths")
def test_criterion_6_shape_conformance():
    ecapa = build_encoder(EncoderConfig(arch="ecapa", channels=512, embed_dim=192, num_mels=80), seed=0)
    ecapa.eval()
    feats = torch.randn(120, 80)
    with torch.no_grad():
        for tap in range(5):
            frame_map, emb = ecapa(feats, tap_layer=tap)
            assert emb.shape == (192,)
            assert frame_map.shape[0] == 120
    xvec = build_encoder(EncoderConfig(arch="xvector", channels=512, embed_dim=512, num_mels=40), seed=0)
    xvec.eval()
    with torch.no_grad():
        _, emb = xvec(torch.randn(120, 40))
    assert emb.shape == (512,)


@criterion(7, "toy end-to-end: losses halve, held-out clean EER < 0.15, both sweep settings reported")
def test_criterion_7_toy_end_to_end(e2e):
    rows = _read_csv(e2e["sweep"] / "ablation.csv")
    seen = {(r["setting"], r["condition"]) for r in rows}
    assert seen == {("0.0", "clean"), ("0.0", "farfield"), ("0.1", "clean"), ("0.1", "farfield")}
    eer = {(r["setting"], r["condition"]): float(r["eer"]) for r in rows}
    for setting in ("0.0", "0.1"):
        metrics = _read_csv(e2e["sweep"] / f"phonetic_weight_{setting}" / "metrics.csv")
        assert len(metrics) == 20
        first = float(metrics[0]["l_speaker"])
        last = float(metrics[-1]["l_speaker"])
        assert last < 0.5 * first, f"speaker loss did not halve at weight {setting}"
        assert eer[(setting, "clean")] < 0.15
    gap = eer[("0.0", "clean")] - eer[("0.1", "clean")]
    far_gap = eer[("0.0", "farfield")] - eer[("0.1", "farfield")]
    print(
        f"\n[ACCEPTANCE] criterion 7 report: clean EER baseline {eer[('0.0', 'clean')]:.4f} "
        f"vs matched {eer[('0.1', 'clean')]:.4f} (gap {gap:+.4f}); "
        f"farfield {eer[('0.0', 'farfield')]:.4f} vs {eer[('0.1', 'farfield')]:.4f} "
        f"(gap {far_gap:+.4f}); runtime {e2e['elapsed']:.0f}s"
    )
    assert e2e["elapsed"] < 600.0


@criterion(8, "frame-count formula and SNR accuracy hold on 50 randomized cases each")
def test_criterion_8_fbank_and_snr():
    from phonaware.audio import Waveform, add_noise, compute_fbank, measure_snr_db

    rng = np.random.default_rng(7)
    for _ in range(50):
        n = int(rng.integers(400, 50_000))
        w = Waveform(rng.standard_normal(n) * 0.2)
        assert compute_fbank(w, 40).shape == (1 + (n - 400) // 160, 40)
    for _ in range(50):
        n = int(rng.integers(1000, 20_000))
        clean = Waveform(rng.standard_normal(n) * 0.3 + 0.01)
        noise = Waveform(rng.standard_normal(int(rng.integers(500, 30_000))))
        snr = float(rng.uniform(-10.0, 35.0))
        noisy = add_noise(clean, noise, snr)
        assert abs(measure_snr_db(clean, noisy) - snr) < 1e-6


@criterion(9, "fixed seeds reproduce metric logs and corpus bytes exactly")
def test_criterion_9_determinism(micro_setup):
    root = micro_setup["root"]
    corpus_args = ["--speakers", "3", "--utts-per-speaker", "3", "--seconds", "0.6", "--seed", "21"]
    _run_cli(["gen-data", "--out", str(root / "det_a")] + corpus_args)
    _run_cli(["gen-data", "--out", str(root / "det_b")] + corpus_args)
    assert _tree_digest(root / "det_a") == _tree_digest(root / "det_b")

    out_a = root / "train_a"
    out_b = root / "train_b"
    _run_cli(["train", "--config", str(micro_setup["config"]), "--seed", "13", "--out", str(out_a)])
    _run_cli(["train", "--config", str(micro_setup["config"]), "--seed", "13", "--out", str(out_b)])
    for name in ("metrics.csv", "steps.csv"):
        assert (out_a / name).read_bytes() == (out_b / name).read_bytes(), name
