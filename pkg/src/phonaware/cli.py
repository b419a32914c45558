"""Command-line surface: corpus generation, teacher feature extraction,
training, embedding extraction, scoring, evaluation, and ablation sweeps.

Report-producing commands write CSVs plus matplotlib figures next to them.
All commands are deterministic for a fixed config and seed.
"""

from __future__ import annotations

import csv
import dataclasses
import functools
import logging
from pathlib import Path

import click
import numpy as np

from . import figures
from .audio import AugmentPolicy
from .config import RunConfig, dump_config, load_config
from .manifest import read_manifest
from .scoring import extract_embeddings, read_trials, run_trials, write_scores_csv
from .synthcorpus import SynthSpec, generate_corpus
from .teacher import TeacherSource, jtsf_path, synthetic_teacher, write_jtsf
from .training import fit, load_checkpoint

SWEEP_AXES = ("tap_layer", "phonetic_weight")


def _friendly_errors(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except (ValueError, FileNotFoundError, RuntimeError) as exc:
            raise click.ClickException(str(exc)) from exc

    return wrapper


@click.group()
def main():
    """Far-field speaker verification toolkit."""
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")


def _apply_overrides(cfg: RunConfig, seed: int | None, out: str | None) -> RunConfig:
    if seed is not None:
        cfg.train = dataclasses.replace(cfg.train, seed=seed)
    if out is not None:
        cfg.out_dir = str(Path(out))
    return cfg


def _teacher_source(cfg: RunConfig) -> TeacherSource | None:
    if cfg.teacher is None:
        return None
    return TeacherSource(cfg.teacher.kind, cfg.teacher.root, cfg.teacher.dim)


def _augment_policy(cfg: RunConfig) -> AugmentPolicy | None:
    if cfg.augment is None:
        return None
    a = cfg.augment
    return AugmentPolicy(
        kinds=tuple(a.kinds),
        snr_db_range=(a.snr_db_range[0], a.snr_db_range[1]),
        rir_pool=tuple(a.rir_pool),
        seed=a.seed,
    )


@main.command("gen-data")
@click.option("--out", required=True, type=click.Path(), help="Corpus output directory.")
@click.option("--speakers", default=20, show_default=True)
@click.option("--utts-per-speaker", default=20, show_default=True)
@click.option("--seconds", default=2.0, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--conditions", default="clean,farfield", show_default=True)
@_friendly_errors
def cmd_gen_data(out, speakers, utts_per_speaker, seconds, seed, conditions):
    """Generate a synthetic corpus with manifests, trial lists, and a starter config."""
    spec = SynthSpec(
        n_speakers=speakers,
        utts_per_speaker=utts_per_speaker,
        utt_seconds=seconds,
        seed=seed,
        conditions=tuple(c.strip() for c in conditions.split(",") if c.strip()),
    )
    paths = generate_corpus(spec, out)
    cfg = RunConfig()
    cfg.out_dir = "run"
    cfg.data = dataclasses.replace(
        cfg.data,
        train_manifest=paths.train_manifest.name,
        eval_manifest=paths.eval_manifest.name,
        trials={c: paths.trial_lists[c].name for c in sorted(paths.trial_lists)},
    )
    cfg.teacher = dataclasses.replace(cfg.teacher, kind="synthetic", root=seed, dim=32)
    cfg.model = dataclasses.replace(cfg.model, channels=64, embed_dim=64)
    cfg.train = dataclasses.replace(cfg.train, epochs=20, seed=seed)
    config_path = paths.root / "config.yaml"
    config_path.write_text(dump_config(cfg))
    click.echo(f"corpus: {paths.root}")
    click.echo(f"train manifest: {paths.train_manifest}")
    click.echo(f"eval manifest: {paths.eval_manifest}")
    for cond, p in sorted(paths.trial_lists.items()):
        click.echo(f"trials ({cond}): {p}")
    click.echo(f"starter config: {config_path}")


@main.command("extract-teacher")
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path(), help="Directory for .jtsf files.")
@click.option("--seed", type=int, default=None, help="Generator seed override.")
@_friendly_errors
def cmd_extract_teacher(config_path, out, seed):
    """Write synthetic teacher features for every manifest utterance."""
    cfg = load_config(config_path)
    if cfg.teacher is None:
        raise click.ClickException("config has no teacher section")
    if seed is None:
        seed = int(cfg.teacher.root) if cfg.teacher.kind == "synthetic" else 0
    out = Path(out)
    rows = {r.utt_id: r for r in read_manifest(cfg.data.train_manifest)}
    for r in read_manifest(cfg.data.eval_manifest):
        rows.setdefault(r.utt_id, r)
    from .audio import load_waveform

    for utt_id in sorted(rows):
        seq = synthetic_teacher(load_waveform(rows[utt_id].path), cfg.teacher.dim, seed, utt_id)
        write_jtsf(jtsf_path(out, utt_id), seq.vectors)
    click.echo(f"wrote {len(rows)} teacher feature files to {out}")


def _train_run(cfg: RunConfig, out_dir: Path):
    result = fit(
        cfg.data.train_manifest,
        _teacher_source(cfg),
        cfg.train,
        cfg.model,
        out_dir=out_dir,
        augment_policy=_augment_policy(cfg),
    )
    figures.plot_training_curves(result.epoch_metrics, out_dir / "figures" / "training_curves.png")
    return result


@main.command("train")
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--seed", type=int, default=None, help="Override train.seed.")
@click.option("--out", type=click.Path(), default=None, help="Override out_dir.")
@_friendly_errors
def cmd_train(config_path, seed, out):
    """Train a model; writes checkpoint, metric CSVs, and loss-curve figure."""
    cfg = _apply_overrides(load_config(config_path), seed, out)
    out_dir = Path(cfg.out_dir)
    result = _train_run(cfg, out_dir)
    last = result.epoch_metrics[-1]
    click.echo(
        f"trained {cfg.train.epochs} epochs ({len(result.step_metrics)} steps): "
        f"l_speaker={last.l_speaker:.4f} l_speech={last.l_speech:.4f} l_total={last.l_total:.4f}"
    )
    click.echo(f"checkpoint: {result.checkpoint_path}")
    click.echo(f"metrics: {out_dir / 'metrics.csv'}")


@main.command("extract-embeddings")
@click.option("--checkpoint", required=True, type=click.Path(exists=True))
@click.option("--manifest", required=True, type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path(), help="Output .npz path.")
@_friendly_errors
def cmd_extract_embeddings(checkpoint, manifest, out):
    """Extract full-utterance embeddings for a manifest into an .npz archive."""
    ckpt = load_checkpoint(checkpoint)
    model = ckpt.build_model()
    embs = extract_embeddings(model, read_manifest(manifest), ckpt.encoder_cfg.num_mels)
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    np.savez(out, **embs)
    click.echo(f"wrote {len(embs)} embeddings to {out}")


def _echo_metrics(metrics: dict):
    for scope in ("raw", "norm"):
        if scope not in metrics:
            continue
        m = metrics[scope]
        click.echo(
            f"{scope}: EER {100.0 * m['eer']:.2f}%  minDCF {m['min_dcf']:.4f}  "
            f"({m['n_target']} target / {m['n_nontarget']} nontarget)"
        )


def _write_metrics_csv(path: Path, metrics: dict):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["scores", "eer_percent", "min_dcf", "eer_threshold", "dcf_threshold",
             "n_target", "n_nontarget"]
        )
        for scope in ("raw", "norm"):
            if scope in metrics:
                m = metrics[scope]
                writer.writerow(
                    [scope, repr(100.0 * m["eer"]), repr(m["min_dcf"]), repr(m["eer_threshold"]),
                     repr(m["dcf_threshold"]), m["n_target"], m["n_nontarget"]]
                )


@main.command("score")
@click.option("--embeddings", "emb_path", required=True, type=click.Path(exists=True))
@click.option("--trials", "trials_path", required=True, type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path(), help="Output scores CSV.")
@click.option("--cohort", type=click.Path(exists=True), default=None, help="Cohort embeddings .npz.")
@click.option("--top-k", default=50, show_default=True)
@_friendly_errors
def cmd_score(emb_path, trials_path, out, cohort, top_k):
    """Score a trial list against extracted embeddings."""
    embs = dict(np.load(emb_path))
    cohort_embs = dict(np.load(cohort)) if cohort else None
    trials = read_trials(trials_path)
    scores, metrics = run_trials(trials, embs, cohort=cohort_embs, k=top_k)
    write_scores_csv(out, scores)
    _echo_metrics(metrics)
    click.echo(f"scores: {out}")


@main.command("evaluate")
@click.option("--checkpoint", required=True, type=click.Path(exists=True))
@click.option("--manifest", required=True, type=click.Path(exists=True))
@click.option("--trials", "trials_path", required=True, type=click.Path(exists=True))
@click.option("--cohort", type=click.Path(exists=True), default=None, help="Cohort manifest.")
@click.option("--out", required=True, type=click.Path(), help="Report directory.")
@click.option("--top-k", default=50, show_default=True)
@click.option("--p-target", default=0.01, show_default=True)
@_friendly_errors
def cmd_evaluate(checkpoint, manifest, trials_path, cohort, out, top_k, p_target):
    """Extract, score, and report EER / minDCF (optionally AS-normalized)."""
    ckpt = load_checkpoint(checkpoint)
    model = ckpt.build_model()
    embs = extract_embeddings(model, read_manifest(manifest), ckpt.encoder_cfg.num_mels)
    cohort_embs = None
    if cohort:
        cohort_embs = extract_embeddings(model, read_manifest(cohort), ckpt.encoder_cfg.num_mels)
    trials = read_trials(trials_path)
    scores, metrics = run_trials(trials, embs, cohort=cohort_embs, k=top_k, p_target=p_target)
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    write_scores_csv(out / "scores.csv", scores)
    _write_metrics_csv(out / "metrics.csv", metrics)
    figures.plot_score_distribution(
        scores.raw, scores.labels(), out / "figures" / "score_distribution.png",
        normalized=scores.normalized,
    )
    _echo_metrics(metrics)
    click.echo(f"report: {out}")


def _parse_sweep(sweep: str) -> tuple[str, list]:
    if "=" not in sweep:
        raise ValueError("sweep must look like 'tap_layer=0,1,2' or 'phonetic_weight=0,0.1'")
    axis, _, rest = sweep.partition("=")
    axis = axis.strip()
    if axis not in SWEEP_AXES:
        raise ValueError(f"unknown sweep axis {axis!r} (choose from {SWEEP_AXES})")
    raw_values = [v.strip() for v in rest.split(",") if v.strip()]
    if not raw_values:
        raise ValueError("empty sweep value list")
    values = [int(v) if axis == "tap_layer" else float(v) for v in raw_values]
    return axis, values


def _write_ablation_csv(path: Path, rows: list[dict]):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["setting", "condition", "eer", "min_dcf"])
        for r in sorted(rows, key=lambda r: (r["setting"], r["condition"])):
            writer.writerow([r["setting"], r["condition"], repr(r["eer"]), repr(r["min_dcf"])])


@main.command("ablate")
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--sweep", required=True, help="'tap_layer=0,1,2,3,4' or 'phonetic_weight=0,0.01,0.1'.")
@click.option("--out", type=click.Path(), default=None, help="Sweep output directory.")
@click.option("--seed", type=int, default=None, help="Shared seed override.")
@_friendly_errors
def cmd_ablate(config_path, sweep, out, seed):
    """Train + evaluate once per sweep setting; emits a CSV and a figure.

    A failed setting aborts the sweep but the partial CSV is preserved.
    """
    base = _apply_overrides(load_config(config_path), seed, out)
    axis, values = _parse_sweep(sweep)
    out_dir = Path(base.out_dir)
    csv_path = out_dir / "ablation.csv"
    rows: list[dict] = []
    try:
        for value in values:
            cfg = dataclasses.replace(base)
            if axis == "tap_layer":
                cfg.model = dataclasses.replace(base.model, tap_layer=value)
            else:
                cfg.train = dataclasses.replace(base.train, phonetic_weight=value)
            run_dir = out_dir / f"{axis}_{value}"
            click.echo(f"[{axis}={value}] training -> {run_dir}")
            result = _train_run(cfg, run_dir)
            model = result.model
            model.eval()
            embs = extract_embeddings(model, read_manifest(cfg.data.eval_manifest), cfg.model.num_mels)
            np.savez(run_dir / "embeddings.npz", **embs)
            for cond in sorted(cfg.data.trials):
                trials = read_trials(cfg.data.trials[cond])
                _, metrics = run_trials(
                    trials, embs, p_target=cfg.eval.p_target,
                    c_miss=cfg.eval.c_miss, c_fa=cfg.eval.c_fa,
                )
                m = metrics["raw"]
                rows.append(
                    {"setting": value, "condition": cond, "eer": m["eer"], "min_dcf": m["min_dcf"]}
                )
                click.echo(
                    f"[{axis}={value}] {cond}: EER {100.0 * m['eer']:.2f}% minDCF {m['min_dcf']:.4f}"
                )
    finally:
        if rows:
            _write_ablation_csv(csv_path, rows)
            figures.plot_ablation(rows, out_dir / "figures" / "ablation.png", axis_name=axis)
    click.echo(f"ablation report: {csv_path}")


@main.command("dump-config")
def cmd_dump_config():
    """Print the default configuration as YAML."""
    click.echo(dump_config(), nl=False)


if __name__ == "__main__":
    main()
