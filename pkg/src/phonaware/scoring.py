"""Verification back-end: cosine scoring, adaptive score normalization,
equal error rate, and minimum detection cost.

EER is read off the ROC polyline built from every distinct score threshold
(accept when score >= threshold) plus a reject-everything start point, with
linear interpolation between adjacent operating points; ties are broken
toward the lower threshold. The detection cost is minimized over the same
threshold set (the reject-everything endpoint keeps the normalized minimum
at or below 1).
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .audio import compute_fbank, load_waveform

log = logging.getLogger(__name__)

TARGET = "target"
NONTARGET = "nontarget"


@dataclass(frozen=True)
class Trial:
    enroll: str
    test: str
    is_target: bool


def read_trials(path: str | Path) -> list[Trial]:
    trials = []
    with open(path) as fh:
        for line_no, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 3 or parts[2] not in (TARGET, NONTARGET):
                raise ValueError(f"{path}:{line_no}: expected '<enroll> <test> <target|nontarget>'")
            trials.append(Trial(parts[0], parts[1], parts[2] == TARGET))
    if not trials:
        raise ValueError(f"{path}: empty trial list")
    return trials


def write_trials(path: str | Path, trials: list[Trial]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        for t in trials:
            fh.write(f"{t.enroll} {t.test} {TARGET if t.is_target else NONTARGET}\n")


def cosine_score(e1: np.ndarray, e2: np.ndarray) -> float:
    e1 = np.asarray(e1, dtype=np.float64)
    e2 = np.asarray(e2, dtype=np.float64)
    n1 = np.linalg.norm(e1)
    n2 = np.linalg.norm(e2)
    if n1 == 0.0 or n2 == 0.0:
        raise ValueError("zero-norm embedding: cosine undefined")
    return float(np.dot(e1, e2) / (n1 * n2))


def asnorm(raw: float, enroll_cohort, test_cohort, k: int = 50) -> float:
    """Symmetric adaptive score normalization using top-k cohort statistics.

    Each side's mean/std (population form) is computed over its k largest
    cohort scores. A degenerate zero std falls back to the raw score.
    """
    if k < 2:
        raise ValueError("asnorm needs k >= 2")
    stats = []
    for name, cohort in (("enroll", enroll_cohort), ("test", test_cohort)):
        c = np.asarray(cohort, dtype=np.float64)
        if c.size < k:
            raise ValueError(f"{name} cohort has {c.size} scores, needs at least k={k}")
        top = np.sort(c)[-k:]
        stats.append((top.mean(), top.std()))
    (mu_e, sd_e), (mu_t, sd_t) = stats
    if sd_e == 0.0 or sd_t == 0.0:
        log.warning("asnorm: degenerate zero std in cohort; returning raw score")
        return float(raw)
    return float(0.5 * ((raw - mu_e) / sd_e + (raw - mu_t) / sd_t))


def _roc_points(scores, labels):
    """Operating points at +inf and every distinct threshold, descending.

    Returns (thresholds, false_accept, false_reject) arrays.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=bool)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise ValueError("scores and labels must be 1-D and the same length")
    if not np.all(np.isfinite(scores)):
        raise ValueError("scores must be finite")
    n_target = int(labels.sum())
    n_nontarget = int((~labels).sum())
    if n_target == 0 or n_nontarget == 0:
        raise ValueError("need at least one target and one nontarget trial")
    order = np.argsort(-scores, kind="stable")
    s = scores[order]
    tgt = labels[order]
    cum_t = np.cumsum(tgt)
    cum_n = np.cumsum(~tgt)
    last = np.flatnonzero(np.r_[s[1:] != s[:-1], True])
    thresholds = np.r_[np.inf, s[last]]
    fa = np.r_[0.0, cum_n[last] / n_nontarget]
    fr = np.r_[1.0, 1.0 - cum_t[last] / n_target]
    return thresholds, fa, fr


def compute_eer(scores, labels) -> tuple[float, float]:
    """Equal error rate and the threshold at the crossover.

    Returns (eer, threshold) with eer in [0, 1].
    """
    thresholds, fa, fr = _roc_points(scores, labels)
    diff = fr - fa  # monotone nonincreasing from 1 to -1
    i = int(np.argmax(diff <= 0.0))
    if diff[i] == 0.0:
        while i + 1 < diff.size and diff[i + 1] == 0.0:
            i += 1
        return float(fa[i]), float(thresholds[i])
    alpha = diff[i - 1] / (diff[i - 1] - diff[i])
    eer = fa[i - 1] + alpha * (fa[i] - fa[i - 1])
    if np.isfinite(thresholds[i - 1]):
        threshold = thresholds[i - 1] + alpha * (thresholds[i] - thresholds[i - 1])
    else:
        threshold = thresholds[i]
    return float(eer), float(threshold)


def compute_min_dcf(
    scores, labels, p_target: float = 0.01, c_miss: float = 1.0, c_fa: float = 1.0
) -> tuple[float, float]:
    """Minimum normalized detection cost over all thresholds (endpoints included).

    Returns (min_dcf, threshold); the reject-everything endpoint bounds the
    result at 1.
    """
    thresholds, fa, fr = _roc_points(scores, labels)
    dcf = c_miss * p_target * fr + c_fa * (1.0 - p_target) * fa
    dcf = dcf / min(c_miss * p_target, c_fa * (1.0 - p_target))
    i = dcf.size - 1 - int(np.argmin(dcf[::-1]))  # ties -> lower threshold
    return float(dcf[i]), float(thresholds[i])


@dataclass
class TrialScores:
    trials: list[Trial]
    raw: np.ndarray
    normalized: np.ndarray | None = None

    def selected(self) -> np.ndarray:
        return self.raw if self.normalized is None else self.normalized

    def labels(self) -> np.ndarray:
        return np.array([t.is_target for t in self.trials], dtype=bool)


def _metric_row(scores: np.ndarray, labels: np.ndarray, p_target, c_miss, c_fa) -> dict:
    eer, eer_thr = compute_eer(scores, labels)
    mdcf, dcf_thr = compute_min_dcf(scores, labels, p_target, c_miss, c_fa)
    return {
        "eer": eer,
        "eer_threshold": eer_thr,
        "min_dcf": mdcf,
        "dcf_threshold": dcf_thr,
        "n_target": int(labels.sum()),
        "n_nontarget": int((~labels).sum()),
    }


def run_trials(
    trials: list[Trial],
    embeddings: dict[str, np.ndarray],
    cohort: dict[str, np.ndarray] | None = None,
    k: int = 50,
    p_target: float = 0.01,
    c_miss: float = 1.0,
    c_fa: float = 1.0,
) -> tuple[TrialScores, dict]:
    """Score a trial list with the cosine backend, optionally AS-normalized.

    Returns the per-trial scores and a metrics dict with a "raw" entry and,
    when a cohort is given, a "norm" entry computed on the normalized scores.
    """
    if not trials:
        raise ValueError("empty trial list")
    for t in trials:
        for utt in (t.enroll, t.test):
            if utt not in embeddings:
                raise ValueError(f"no embedding for utterance {utt!r}")
    raw = np.array([cosine_score(embeddings[t.enroll], embeddings[t.test]) for t in trials])
    normalized = None
    if cohort is not None:
        cohort_ids = sorted(cohort)
        matrix = np.stack([cohort[c] for c in cohort_ids]).astype(np.float64)
        norms = np.linalg.norm(matrix, axis=1, keepdims=True)
        if (norms == 0.0).any():
            bad = cohort_ids[int(np.argmin(norms))]
            raise ValueError(f"zero-norm cohort embedding {bad!r}")
        matrix /= norms
        side_scores: dict[str, np.ndarray] = {}
        for utt in {t.enroll for t in trials} | {t.test for t in trials}:
            e = np.asarray(embeddings[utt], dtype=np.float64)
            side_scores[utt] = matrix @ (e / np.linalg.norm(e))
        normalized = np.array(
            [
                asnorm(raw[i], side_scores[t.enroll], side_scores[t.test], k=k)
                for i, t in enumerate(trials)
            ]
        )
    result = TrialScores(trials=list(trials), raw=raw, normalized=normalized)
    labels = result.labels()
    metrics = {"raw": _metric_row(raw, labels, p_target, c_miss, c_fa)}
    if normalized is not None:
        metrics["norm"] = _metric_row(normalized, labels, p_target, c_miss, c_fa)
    return result, metrics


def write_scores_csv(path: str | Path, scores: TrialScores) -> None:
    """Per-trial CSV: enroll, test, raw_score, norm_score (blank without cohort), label."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["enroll", "test", "raw_score", "norm_score", "label"])
        for i, t in enumerate(scores.trials):
            norm = "" if scores.normalized is None else repr(float(scores.normalized[i]))
            writer.writerow(
                [t.enroll, t.test, repr(float(scores.raw[i])), norm, TARGET if t.is_target else NONTARGET]
            )


def extract_embeddings(encoder, rows, num_mels: int) -> dict[str, np.ndarray]:
    """Full-utterance embeddings for manifest rows, inference mode."""
    encoder.eval()
    out: dict[str, np.ndarray] = {}
    with torch.no_grad():
        for row in rows:
            feats = compute_fbank(load_waveform(row.path), num_mels)
            _, emb = encoder(torch.as_tensor(feats, dtype=torch.float32))
            out[row.utt_id] = emb.numpy().astype(np.float64)
    return out
