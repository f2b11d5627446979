"""Utterance manifests: filtering and train/valid/test split construction."""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import InsufficientData, InsufficientSpeakers, MalformedRecord

SPLITS = ("train", "valid", "test", "excluded")
FIELDS = ("id", "speaker", "audio_path", "duration_sec", "has_pitch", "split")
MAX_DURATION = 20.0


@dataclass(frozen=True)
class UtteranceRecord:
    id: str
    speaker: str
    audio_path: str
    duration: float
    has_pitch: bool
    split: str = "train"

    def to_json(self) -> dict:
        return {
            "id": self.id,
            "speaker": self.speaker,
            "audio_path": self.audio_path,
            "duration_sec": self.duration,
            "has_pitch": self.has_pitch,
            "split": self.split,
        }


@dataclass
class Manifest:
    records: list

    @property
    def stats(self) -> dict:
        return dict(Counter(r.speaker for r in self.records))

    def split_counts(self) -> dict:
        c = Counter(r.split for r in self.records)
        return {s: c.get(s, 0) for s in SPLITS}

    def by_split(self, split: str) -> list:
        return [r for r in self.records if r.split == split]

    def __len__(self):
        return len(self.records)


def should_exclude(r: UtteranceRecord, max_duration: float = MAX_DURATION) -> bool:
    return r.duration > max_duration or not r.has_pitch


def filter_utterances(m: Manifest, max_duration: float = MAX_DURATION) -> Manifest:
    """Mark over-long or pitchless utterances as excluded; leave the rest alone."""
    return Manifest([replace(r, split="excluded") if should_exclude(r, max_duration) else r for r in m.records])


def exclusion_counts(m: Manifest, max_duration: float = MAX_DURATION) -> dict:
    return {
        "too_long": sum(r.duration > max_duration for r in m.records),
        "no_pitch": sum(not r.has_pitch for r in m.records),
        "excluded": sum(r.split == "excluded" for r in m.records),
    }


def make_splits(
    m: Manifest,
    test_speakers: int = 30,
    utts_per_test_speaker: int = 3,
    valid_size: int = 90,
    min_speaker_utts: int = 10,
    seed: int = 0,
) -> Manifest:
    """Assign train/valid/test to every non-excluded record.

    Test takes ``utts_per_test_speaker`` random utterances from each of
    ``test_speakers`` random speakers having at least ``min_speaker_utts``
    usable utterances. Validation is drawn uniformly from what remains and
    everything else is train.
    """
    rng = np.random.default_rng(seed)
    usable = [i for i, r in enumerate(m.records) if r.split != "excluded"]
    per_speaker = {}
    for i in usable:
        per_speaker.setdefault(m.records[i].speaker, []).append(i)
    eligible = sorted(s for s, idx in per_speaker.items() if len(idx) >= min_speaker_utts)
    if len(eligible) < test_speakers:
        raise InsufficientSpeakers(
            f"{len(eligible)} speakers have >= {min_speaker_utts} usable utterances, need {test_speakers}"
        )
    if utts_per_test_speaker > min_speaker_utts:
        raise InsufficientData("utts_per_test_speaker exceeds min_speaker_utts")

    chosen = rng.choice(len(eligible), size=test_speakers, replace=False)
    test = set()
    for s in sorted(eligible[c] for c in chosen):
        pool = per_speaker[s]
        test.update(pool[j] for j in rng.choice(len(pool), size=utts_per_test_speaker, replace=False))

    rest = [i for i in usable if i not in test]
    if len(rest) < valid_size:
        raise InsufficientData(f"{len(rest)} utterances left for a validation set of {valid_size}")
    valid = {rest[j] for j in rng.choice(len(rest), size=valid_size, replace=False)}

    out = []
    for i, r in enumerate(m.records):
        if r.split == "excluded":
            out.append(r)
        else:
            out.append(replace(r, split="test" if i in test else "valid" if i in valid else "train"))
    return Manifest(out)


# ------------------------------------------------------------------------- IO


def _parse_record(obj, lineno) -> UtteranceRecord:
    if not isinstance(obj, dict):
        raise MalformedRecord("record is not a JSON object", lineno)
    missing = [f for f in FIELDS if f not in obj]
    if missing:
        raise MalformedRecord(f"missing field(s): {', '.join(missing)}", lineno)
    for f in ("id", "speaker", "audio_path", "split"):
        if not isinstance(obj[f], str):
            raise MalformedRecord(f"field {f!r} must be a string", lineno)
    dur = obj["duration_sec"]
    if isinstance(dur, bool) or not isinstance(dur, (int, float)) or not dur > 0:
        raise MalformedRecord(f"duration_sec must be a positive number, got {dur!r}", lineno)
    if not isinstance(obj["has_pitch"], bool):
        raise MalformedRecord("has_pitch must be a boolean", lineno)
    if obj["split"] not in SPLITS:
        raise MalformedRecord(f"unknown split {obj['split']!r}", lineno)
    return UtteranceRecord(obj["id"], obj["speaker"], obj["audio_path"], float(dur), obj["has_pitch"], obj["split"])


def load_manifest(path) -> Manifest:
    records = []
    seen = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                raise MalformedRecord(f"invalid JSON: {e.msg}", lineno) from e
            r = _parse_record(obj, lineno)
            if r.id in seen:
                raise MalformedRecord(f"duplicate id {r.id!r}", lineno)
            seen.add(r.id)
            records.append(r)
    return Manifest(records)


def save_manifest(path, m: Manifest):
    with open(path, "w", encoding="utf-8") as fh:
        for r in m.records:
            fh.write(json.dumps(r.to_json(), ensure_ascii=False) + "\n")


def resolve_audio(m_path, r: UtteranceRecord) -> Path:
    """Audio paths in a manifest are relative to the manifest's directory."""
    p = Path(r.audio_path)
    return p if p.is_absolute() else Path(m_path).parent / p
