"""Synthetic test signals and a small on-disk corpus for smoke runs."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .corpus import Manifest, UtteranceRecord, save_manifest
from .dsp import SAMPLE_RATE, Waveform, write_wav


def sine(freq, duration, sample_rate=SAMPLE_RATE, amplitude=0.5, phase=0.0) -> Waveform:
    t = np.arange(int(round(duration * sample_rate))) / sample_rate
    return Waveform(amplitude * np.sin(2 * np.pi * freq * t + phase), sample_rate)


def tone_complex(f0, duration, sample_rate=SAMPLE_RATE, n_harmonics=8, amplitude=0.5, rolloff=1.0, rng=None,
                 noise=0.0) -> Waveform:
    """Harmonic complex with 1/h**rolloff partials, random phases and optional white noise."""
    rng = np.random.default_rng(rng)
    n = int(round(duration * sample_rate))
    t = np.arange(n) / sample_rate
    x = np.zeros(n)
    for h in range(1, n_harmonics + 1):
        if h * f0 >= sample_rate / 2:
            break
        x += np.sin(2 * np.pi * h * f0 * t + rng.uniform(0, 2 * np.pi)) / h**rolloff
    x *= amplitude / np.max(np.abs(x))
    if noise:
        x += noise * rng.standard_normal(n)
    return Waveform(np.clip(x, -1, 1), sample_rate)


DESK_FUNDAMENTALS = (110.0, 220.0, 440.0)


def make_desk_corpus(out_dir, per_class=20, fundamentals=DESK_FUNDAMENTALS, min_dur=1.0, max_dur=3.0, seed=0,
                     speakers=None):
    """Write tone-complex utterances plus ``manifest.jsonl``.

    Returns ``(manifest_path, {id: class index})``. Every record starts in
    the train split.
    """
    out = Path(out_dir)
    (out / "wav").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    records, labels = [], {}
    for c, f0 in enumerate(fundamentals):
        for j in range(per_class):
            utt = f"c{c}_{j:03d}"
            dur = float(rng.uniform(min_dur, max_dur))
            w = tone_complex(f0 * rng.uniform(0.97, 1.03), dur, amplitude=rng.uniform(0.3, 0.6), rng=rng,
                             noise=0.002)
            path = out / "wav" / f"{utt}.wav"
            write_wav(path, w)
            speaker = f"spk{(j if speakers is None else j % speakers):03d}"
            records.append(UtteranceRecord(utt, speaker, f"wav/{utt}.wav", w.duration, True, "train"))
            labels[utt] = c
    manifest_path = out / "manifest.jsonl"
    save_manifest(manifest_path, Manifest(records))
    return manifest_path, labels
