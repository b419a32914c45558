"""JSON-lines utterance manifests: one record per utterance with keys
utt_id, speaker_id, path, n_samples."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

_REQUIRED = ("utt_id", "speaker_id", "path", "n_samples")


@dataclass(frozen=True)
class UttRecord:
    utt_id: str
    speaker_id: str
    path: str
    n_samples: int


def read_manifest(path: str | Path) -> list[UttRecord]:
    """Read records; relative audio paths resolve against the manifest's directory."""
    path = Path(path)
    rows: list[UttRecord] = []
    seen: set[str] = set()
    with open(path) as fh:
        for line_no, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            missing = [k for k in _REQUIRED if k not in rec]
            if missing:
                raise ValueError(f"{path}:{line_no}: missing manifest keys {missing}")
            if rec["utt_id"] in seen:
                raise ValueError(f"{path}:{line_no}: duplicate utt_id {rec['utt_id']!r}")
            seen.add(rec["utt_id"])
            audio = Path(str(rec["path"]))
            if not audio.is_absolute():
                audio = path.parent / audio
            rows.append(
                UttRecord(
                    utt_id=str(rec["utt_id"]),
                    speaker_id=str(rec["speaker_id"]),
                    path=str(audio),
                    n_samples=int(rec["n_samples"]),
                )
            )
    if not rows:
        raise ValueError(f"{path}: empty manifest")
    return rows


def write_manifest(path: str | Path, rows: list[UttRecord], relative_to: str | Path | None = None) -> None:
    """Write records; with relative_to, audio paths are stored relative to it
    (keeps the corpus relocatable and its bytes independent of where it lives)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        for r in rows:
            audio = r.path
            if relative_to is not None:
                audio = str(Path(r.path).relative_to(Path(relative_to)))
            fh.write(
                json.dumps(
                    {
                        "utt_id": r.utt_id,
                        "speaker_id": r.speaker_id,
                        "path": audio,
                        "n_samples": r.n_samples,
                    }
                )
                + "\n"
            )


def speaker_label_map(rows: list[UttRecord]) -> dict[str, int]:
    """Dense labels 0..C-1 over the sorted distinct speaker ids."""
    return {spk: i for i, spk in enumerate(sorted({r.speaker_id for r in rows}))}
