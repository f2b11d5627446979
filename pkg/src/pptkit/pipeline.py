"""Library-level pipeline steps shared by the command line and tests.

Every CLI subcommand is a thin wrapper around one function here, so running
a command and calling the function with the same config give identical
results.
"""

from __future__ import annotations

import dataclasses
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import dsp, metrics, tokenlm
from .corpus import Manifest, resolve_audio
from .errors import ConfigError, IdMismatch, MissingFeatures, NoVoicedOverlap, PPTError
from .quantizer import Codebook, fit_minibatch_kmeans
from .tokenizer import tokenize_utterance

logger = logging.getLogger(__name__)

FEATURE_SUFFIX = ".pptf"
REPORT_FIELDS = ("mcd_db", "f0_rmse_hz", "ppl", "self_bleu", "self_bleu_gt", "normalized_self_bleu")


@dataclass
class PipelineConfig:
    sample_rate: int = dsp.SAMPLE_RATE
    hop: int = dsp.HOP
    n_fft: int = 1024
    n_mels: int = 80
    n_coef: int = 20
    feature_kind: str = "mel_cepstra"
    fmin_f0: float = 50.0
    fmax_f0: float = 600.0
    k: int = 200
    kmeans_batch: int = 10000
    kmeans_max_iters: int = 300
    kmeans_tol: float = 1e-4
    lm_order: int = 5
    smoothing: str = tokenlm.KNESER_NEY
    smoothing_param: float | None = None
    temperature: float = 0.7
    gen_count: int = 90
    max_len: int = 500
    seed: int = 0

    def __post_init__(self):
        positive = ("sample_rate", "hop", "n_fft", "n_mels", "n_coef", "k", "kmeans_batch",
                    "kmeans_max_iters", "lm_order", "temperature", "gen_count", "max_len")
        for name in positive:
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)!r}")
        if self.feature_kind not in ("mel_cepstra", "mel_spectrogram"):
            raise ConfigError(f"feature_kind must be mel_cepstra or mel_spectrogram, got {self.feature_kind!r}")
        if self.seed < 0:
            raise ConfigError("seed must be non-negative")

    def updated(self, **overrides):
        known = {f.name for f in dataclasses.fields(self)}
        unknown = set(overrides) - known
        if unknown:
            raise ConfigError(f"unknown config key(s): {', '.join(sorted(unknown))}")
        return dataclasses.replace(self, **overrides)


def load_config(path=None, env=None) -> PipelineConfig:
    """Defaults, then the TOML file (top level or a ``[pipeline]`` table), then ``PPT_SEED`` if no seed was set."""
    env = os.environ if env is None else env
    values = {}
    if path is not None:
        try:
            with open(path, "rb") as fh:
                doc = tomllib.load(fh)
        except (OSError, tomllib.TOMLDecodeError) as e:
            raise ConfigError(f"cannot read config {path}: {e}") from e
        values = dict(doc.get("pipeline", doc))
    if "seed" not in values and env.get("PPT_SEED"):
        try:
            values["seed"] = int(env["PPT_SEED"])
        except ValueError as e:
            raise ConfigError(f"PPT_SEED is not an integer: {env['PPT_SEED']!r}") from e
    return PipelineConfig().updated(**values)


# -------------------------------------------------------------------- features


def compute_features(w: dsp.Waveform, cfg: PipelineConfig) -> dsp.FeatureMatrix:
    w = dsp.resample(w, cfg.sample_rate)
    mel = dsp.mel_spectrogram(w, n_fft=cfg.n_fft, hop=cfg.hop, win_length=cfg.n_fft, n_mels=cfg.n_mels,
                              fmax=cfg.sample_rate / 2)
    if cfg.feature_kind == "mel_spectrogram":
        return mel
    return dsp.mel_cepstra(mel, cfg.n_coef)


def analyze_audio(path, cfg: PipelineConfig):
    """Mel-cepstra and pitch track of one file, frame-aligned."""
    w = dsp.resample(dsp.load_wav(path), cfg.sample_rate)
    mel = dsp.mel_spectrogram(w, n_fft=cfg.n_fft, hop=cfg.hop, win_length=cfg.n_fft, n_mels=cfg.n_mels,
                              fmax=cfg.sample_rate / 2)
    cep = dsp.mel_cepstra(mel, cfg.n_coef)
    f0 = dsp.extract_f0(w, hop=cfg.hop, fmin=cfg.fmin_f0, fmax=cfg.fmax_f0)
    return cep, f0


def probe_audio(path, cfg: PipelineConfig):
    """(duration in seconds, has any voiced frame) for manifest filtering."""
    w = dsp.load_wav(path)
    pitch = dsp.extract_f0(dsp.resample(w, cfg.sample_rate), hop=cfg.hop, fmin=cfg.fmin_f0, fmax=cfg.fmax_f0)
    return w.duration, bool(pitch.voiced.any())


def _select(manifest: Manifest, split=None):
    if split is None:
        return [r for r in manifest.records if r.split != "excluded"]
    return manifest.by_split(split)


def extract_manifest(manifest: Manifest, manifest_path, out_dir, cfg: PipelineConfig, split=None, jobs=1):
    """Write ``<id>.pptf`` per utterance. Returns (written ids, {id: error message})."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    records = _select(manifest, split)

    def work(r):
        try:
            fm = compute_features(dsp.load_wav(resolve_audio(manifest_path, r)), cfg)
            dsp.write_features(out_dir / f"{r.id}{FEATURE_SUFFIX}", fm)
            return r.id, None
        except (OSError, PPTError, ValueError) as e:
            return r.id, f"{type(e).__name__}: {e}"

    written, failed = [], {}
    for utt_id, err in _map(work, records, jobs):
        if err is None:
            written.append(utt_id)
        else:
            logger.error("extract %s failed: %s", utt_id, err)
            failed[utt_id] = err
    return written, failed


def _map(fn, items, jobs):
    if jobs <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def feature_ids(feature_dir) -> list:
    d = Path(feature_dir)
    if not d.is_dir():
        raise MissingFeatures(f"{feature_dir}: not a directory")
    return sorted(p.name[: -len(FEATURE_SUFFIX)] for p in d.glob(f"*{FEATURE_SUFFIX}"))


def load_feature_set(feature_dir, ids=None) -> dict:
    """``{id: FeatureMatrix}`` for ``ids`` (all files when None), in id order."""
    available = feature_ids(feature_dir)
    if not available:
        raise MissingFeatures(f"{feature_dir}: no {FEATURE_SUFFIX} files")
    if ids is None:
        ids = available
    missing = sorted(set(ids) - set(available))
    if missing:
        raise MissingFeatures(f"{feature_dir}: missing features for {len(missing)} utterance(s), e.g. {missing[0]!r}")
    return {i: dsp.read_features(Path(feature_dir) / f"{i}{FEATURE_SUFFIX}") for i in ids}


def fit_codebook(features: dict, cfg: PipelineConfig) -> Codebook:
    mats = [features[i] for i in sorted(features)]
    kind = mats[0].kind if mats else dsp.FeatureKind.EXTERNAL
    return fit_minibatch_kmeans(mats, k=cfg.k, batch_size=cfg.kmeans_batch, max_iters=cfg.kmeans_max_iters,
                                tol=cfg.kmeans_tol, seed=cfg.seed, feature_kind=kind)


def tokenize_set(cb: Codebook, features: dict, jobs=1) -> dict:
    ids = sorted(features)
    seqs = _map(lambda i: tokenize_utterance(cb, features[i]), ids, jobs)
    return dict(zip(ids, seqs))


def train_lm(token_seqs, cfg: PipelineConfig, n_tokens=None) -> tokenlm.NGramModel:
    return tokenlm.train(list(token_seqs), order=cfg.lm_order, smoothing=cfg.smoothing,
                         param=cfg.smoothing_param, n_tokens=n_tokens, seed=cfg.seed)


def generate(model: tokenlm.NGramModel, cfg: PipelineConfig) -> list:
    return tokenlm.generate_batch(model, count=cfg.gen_count, temperature=cfg.temperature,
                                  seed=cfg.seed, max_len=cfg.max_len)


# ------------------------------------------------------------------ evaluation


def _ensure_same_ids(expected, got, what, allow_extra=False):
    expected, got = list(expected), set(got)
    for i in expected:
        if i not in got:
            raise IdMismatch(f"{what}: id {i!r} is missing")
    extra = sorted(got - set(expected))
    if extra and not allow_extra:
        raise IdMismatch(f"{what}: unexpected id {extra[0]!r}")


def paired_metrics(gt_items: dict, gen_items: dict) -> dict:
    """MCD and F0-RMSE averaged over utterance pairs.

    Items are ``{id: (cepstra, pitch)}``. Pairs without a mutually voiced
    aligned frame are skipped for F0-RMSE and counted. Generated ids with
    no ground-truth partner are ignored.
    """
    _ensure_same_ids(sorted(gt_items), gen_items, "generated audio", allow_extra=True)
    mcds, rmses, skipped = [], [], []
    for i in sorted(gt_items):
        (c1, p1), (c2, p2) = gt_items[i], gen_items[i]
        mcds.append(metrics.mcd(c1, c2))
        try:
            rmses.append(metrics.f0_rmse(p1, c1, p2, c2))
        except NoVoicedOverlap:
            skipped.append(i)
    return {
        "mcd_db": math.fsum(mcds) / len(mcds) if mcds else None,
        "f0_rmse_hz": math.fsum(rmses) / len(rmses) if rmses else None,
        "num_pairs": len(mcds),
        "skipped_pairs": len(skipped),
        "skipped_ids": skipped,
    }


def evaluate(cfg: PipelineConfig, gt_audio=None, gen_audio=None, gt_tokens=None, gen_tokens=None, model=None) -> dict:
    """Assemble the metrics report; fields whose inputs are absent are None.

    ``gt_audio``/``gen_audio`` map ids to audio paths, ``gt_tokens`` maps ids
    to token sequences, ``gen_tokens`` is any iterable of sequences.
    """
    report = {f: None for f in REPORT_FIELDS}
    report.update(num_pairs=0, skipped_pairs=0, skipped_ids=[])
    report["meta"] = {
        "mcd_excludes_c0": True,
        "f0_tracker": "yin",
        "f0_unit": "Hz",
        "bleu_max_n": 4,
        "bleu_smoothing": f"epsilon numerator {metrics.BLEU_EPSILON:g}",
    }
    if gt_audio is not None and gen_audio is not None:
        gt_items = {i: analyze_audio(p, cfg) for i, p in sorted(gt_audio.items())}
        _ensure_same_ids(sorted(gt_audio), gen_audio, "generated audio", allow_extra=True)
        gen_items = {i: analyze_audio(gen_audio[i], cfg) for i in sorted(gt_audio)}
        report.update(paired_metrics(gt_items, gen_items))
    gt_seqs = None
    if gt_tokens is not None:
        gt_seqs = [list(getattr(gt_tokens[i], "tokens", gt_tokens[i])) for i in sorted(gt_tokens)]
    if model is not None and gt_seqs is not None:
        report["ppl"] = tokenlm.perplexity(model, gt_seqs)
    if gen_tokens is not None and gt_seqs is not None:
        gen_seqs = [list(getattr(s, "tokens", s)) for s in gen_tokens]
        br = metrics.normalized_self_bleu(gen_seqs, gt_seqs)
        report.update(self_bleu=br.self_bleu, self_bleu_gt=br.self_bleu_gt, normalized_self_bleu=br.normalized)
        report["meta"]["normalized_self_bleu_exceeds_one"] = br.exceeds_one
    return report


def format_report(report: dict) -> str:
    """Flat ``key=value`` lines; missing values print as ``none``."""
    lines = []
    for key in REPORT_FIELDS + ("num_pairs", "skipped_pairs"):
        v = report.get(key)
        lines.append(f"{key}={'none' if v is None else repr(v) if isinstance(v, float) else v}")
    return "\n".join(lines) + "\n"


# ----------------------------------------------------------------------- sweep


def sweep_layer(feature_dir, manifest: Manifest, cfg: PipelineConfig) -> dict:
    """Codebook, tokens, LM and generation metrics for one feature directory."""
    train_ids = sorted(r.id for r in manifest.by_split("train"))
    test_ids = sorted(r.id for r in manifest.by_split("test"))
    if not train_ids or not test_ids:
        raise MissingFeatures("manifest needs non-empty train and test splits")
    feats = load_feature_set(feature_dir, train_ids + test_ids)
    cb = fit_codebook({i: feats[i] for i in train_ids}, cfg)
    tokens = tokenize_set(cb, feats)
    model = train_lm([tokens[i].tokens for i in train_ids], cfg, n_tokens=cb.k)
    test_seqs = [list(tokens[i].tokens) for i in test_ids]
    gen = generate(model, cfg)
    br = metrics.normalized_self_bleu(gen, test_seqs)
    return {
        "layer": Path(feature_dir).name,
        "k": cb.k,
        "kmeans_iterations": cb.trained_iterations,
        "n_train": len(train_ids),
        "n_test": len(test_ids),
        "ppl": tokenlm.perplexity(model, test_seqs),
        "self_bleu": br.self_bleu,
        "self_bleu_gt": br.self_bleu_gt,
        "normalized_self_bleu": br.normalized,
    }


def sweep(feature_dirs, manifest: Manifest, cfg: PipelineConfig) -> list:
    return [sweep_layer(d, manifest, cfg) for d in feature_dirs]


SWEEP_COLUMNS = ("layer", "k", "kmeans_iterations", "n_train", "n_test", "ppl", "self_bleu", "self_bleu_gt",
                 "normalized_self_bleu")


def format_sweep(rows) -> str:
    out = ["\t".join(SWEEP_COLUMNS)]
    for r in rows:
        out.append("\t".join(f"{r[c]:.6f}" if isinstance(r[c], float) else str(r[c]) for c in SWEEP_COLUMNS))
    return "\n".join(out) + "\n"


def finite(report: dict) -> bool:
    return all(report.get(f) is not None and np.isfinite(report[f]) for f in REPORT_FIELDS)
