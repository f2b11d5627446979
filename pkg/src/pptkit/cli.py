"""Command line entry point: ``pptkit <subcommand> ...``.

Exit codes: 0 success, 1 some per-file failures, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import corpus, pipeline, tokenlm
from .errors import PPTError
from .quantizer import load_codebook, save_codebook
from .tokenizer import read_token_file, write_token_file

logger = logging.getLogger("pptkit")

EXIT_OK, EXIT_PARTIAL, EXIT_USAGE = 0, 1, 2


def _config(args) -> pipeline.PipelineConfig:
    cfg = pipeline.load_config(args.config)
    overrides = {}
    for name in ("seed", "k", "kmeans_batch", "kmeans_max_iters", "kmeans_tol", "lm_order", "smoothing",
                 "smoothing_param", "temperature", "gen_count", "max_len", "n_coef", "n_mels", "feature_kind"):
        v = getattr(args, name, None)
        if v is not None:
            overrides[name] = v
    return cfg.updated(**overrides)


def _ids_for(args):
    if getattr(args, "manifest", None) is None:
        return None
    m = corpus.load_manifest(args.manifest)
    return sorted(r.id for r in pipeline._select(m, args.split))


def cmd_extract(args, cfg):
    m = corpus.load_manifest(args.manifest)
    written, failed = pipeline.extract_manifest(m, args.manifest, args.out_dir, cfg, split=args.split, jobs=args.jobs)
    print(f"extracted {len(written)} utterance(s), {len(failed)} failure(s)")
    return EXIT_PARTIAL if failed else EXIT_OK


def cmd_fit_kmeans(args, cfg):
    feats = pipeline.load_feature_set(args.features_dir, _ids_for(args))
    cb = pipeline.fit_codebook(feats, cfg)
    save_codebook(args.out, cb)
    print(f"codebook K={cb.k} D={cb.d} after {cb.trained_iterations} iteration(s) -> {args.out}")
    return EXIT_OK


def cmd_tokenize(args, cfg):
    cb = load_codebook(args.codebook)
    feats = pipeline.load_feature_set(args.features_dir, _ids_for(args))
    tokens = pipeline.tokenize_set(cb, feats, jobs=args.jobs)
    write_token_file(args.out, tokens, durations=not args.no_durations)
    print(f"tokenized {len(tokens)} utterance(s) -> {args.out}")
    return EXIT_OK


def _read_sequences(path, manifest=None, split=None):
    seqs = read_token_file(path)
    if manifest is not None:
        m = corpus.load_manifest(manifest)
        keep = {r.id for r in pipeline._select(m, split)}
        seqs = {i: s for i, s in seqs.items() if i in keep}
    return seqs


def cmd_train_lm(args, cfg):
    seqs = _read_sequences(args.tokens, args.manifest, args.split)
    n_tokens = args.n_tokens
    if n_tokens is None and args.codebook is not None:
        n_tokens = load_codebook(args.codebook).k
    model = pipeline.train_lm([seqs[i].tokens for i in sorted(seqs)], cfg, n_tokens=n_tokens)
    tokenlm.save_model(args.out, model)
    print(f"order-{model.order} {model.smoothing} model over {model.n_tokens} tokens -> {args.out}")
    return EXIT_OK


def cmd_ppl(args, cfg):
    model = tokenlm.load_model(args.model)
    seqs = _read_sequences(args.tokens, args.manifest, args.split)
    value = tokenlm.perplexity(model, [seqs[i].tokens for i in sorted(seqs)])
    print(f"ppl={value!r}")
    return EXIT_OK


def cmd_sample(args, cfg):
    model = tokenlm.load_model(args.model)
    gen = pipeline.generate(model, cfg)
    width = len(str(max(len(gen) - 1, 0)))
    write_token_file(args.out, {f"gen_{i:0{width}d}": s for i, s in enumerate(gen)}, durations=False)
    print(f"sampled {len(gen)} sequence(s) at T={cfg.temperature} -> {args.out}")
    return EXIT_OK


def cmd_eval(args, cfg):
    gt = corpus.load_manifest(args.gt_manifest)
    gt_records = pipeline._select(gt, args.split)
    gt_ids = sorted(r.id for r in gt_records)
    gt_audio = gen_audio = gt_tokens = gen_tokens = model = None
    if args.gen_manifest is not None:
        gen = corpus.load_manifest(args.gen_manifest)
        gt_audio = {r.id: corpus.resolve_audio(args.gt_manifest, r) for r in gt_records}
        gen_audio = {r.id: corpus.resolve_audio(args.gen_manifest, r) for r in gen.records if r.split != "excluded"}
    if args.gt_tokens is not None:
        all_gt = read_token_file(args.gt_tokens)
        pipeline._ensure_same_ids(gt_ids, [i for i in all_gt if i in set(gt_ids)], "ground-truth tokens")
        gt_tokens = {i: all_gt[i] for i in gt_ids}
    if args.gen_tokens is not None:
        gen = read_token_file(args.gen_tokens)
        gen_tokens = [gen[i].tokens for i in sorted(gen)]
    if args.model is not None:
        model = tokenlm.load_model(args.model)
    report = pipeline.evaluate(cfg, gt_audio, gen_audio, gt_tokens, gen_tokens, model)
    text = pipeline.format_report(report)
    if args.out_json:
        Path(args.out_json).write_text(json.dumps(report, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    if args.out_text:
        Path(args.out_text).write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    return EXIT_OK


def cmd_sweep(args, cfg):
    m = corpus.load_manifest(args.manifest)
    rows = pipeline.sweep(args.feature_dirs, m, cfg)
    table = pipeline.format_sweep(rows)
    if args.out:
        Path(args.out).write_text(table, encoding="utf-8")
    if args.out_json:
        Path(args.out_json).write_text(json.dumps(rows, indent=2) + "\n", encoding="utf-8")
    sys.stdout.write(table)
    return EXIT_OK


def cmd_make_splits(args, cfg):
    m = corpus.make_splits(
        corpus.load_manifest(args.manifest),
        test_speakers=args.test_speakers,
        utts_per_test_speaker=args.utts_per_test_speaker,
        valid_size=args.valid_size,
        min_speaker_utts=args.min_speaker_utts,
        seed=cfg.seed,
    )
    corpus.save_manifest(args.out, m)
    counts = m.split_counts()
    print(" ".join(f"{k}={v}" for k, v in counts.items()))
    return EXIT_OK


def cmd_filter(args, cfg):
    m = corpus.load_manifest(args.manifest)
    failed = 0
    if args.probe:
        records = []
        for r in m.records:
            try:
                dur, voiced = pipeline.probe_audio(corpus.resolve_audio(args.manifest, r), cfg)
                records.append(replace(r, duration=dur, has_pitch=voiced))
            except (OSError, PPTError) as e:
                logger.error("probe %s failed: %s", r.id, e)
                failed += 1
                records.append(replace(r, has_pitch=False))
        m = corpus.Manifest(records)
    m = corpus.filter_utterances(m, args.max_duration)
    corpus.save_manifest(args.out, m)
    ex = corpus.exclusion_counts(m, args.max_duration)
    print(" ".join(f"{k}={v}" for k, v in ex.items()) + f" kept={len(m) - ex['excluded']}")
    return EXIT_PARTIAL if failed else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pptkit", description="Pseudo phonetic token pipeline tools.")
    p.add_argument("--config", help="TOML file with pipeline settings (flags take precedence)")
    p.add_argument("--seed", type=int, help="random seed (falls back to config, then $PPT_SEED, then 0)")
    p.add_argument("--log-level", default="WARNING")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, fn, help_):
        sp = sub.add_parser(name, help=help_)
        sp.set_defaults(func=fn)
        return sp

    def selection(sp, default_split=None):
        sp.add_argument("--manifest", help="restrict to records of this JSONL manifest")
        sp.add_argument("--split", default=default_split, choices=corpus.SPLITS,
                        help="manifest split to use (default: all non-excluded)")

    sp = add("extract", cmd_extract, "compute PPTF feature files for a manifest")
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--out-dir", required=True)
    sp.add_argument("--split", choices=corpus.SPLITS)
    sp.add_argument("--feature-kind", choices=("mel_cepstra", "mel_spectrogram"))
    sp.add_argument("--n-coef", type=int)
    sp.add_argument("--n-mels", type=int)
    sp.add_argument("--jobs", type=int, default=1)

    sp = add("fit-kmeans", cmd_fit_kmeans, "train a k-means codebook on PPTF features")
    sp.add_argument("--features-dir", required=True)
    selection(sp)
    sp.add_argument("--k", type=int)
    sp.add_argument("--batch-size", dest="kmeans_batch", type=int)
    sp.add_argument("--max-iters", dest="kmeans_max_iters", type=int)
    sp.add_argument("--tol", dest="kmeans_tol", type=float)
    sp.add_argument("--out", required=True)

    sp = add("tokenize", cmd_tokenize, "convert PPTF features to token files")
    sp.add_argument("--codebook", required=True)
    sp.add_argument("--features-dir", required=True)
    selection(sp)
    sp.add_argument("--out", required=True)
    sp.add_argument("--no-durations", action="store_true")
    sp.add_argument("--jobs", type=int, default=1)

    sp = add("train-lm", cmd_train_lm, "train an n-gram token language model")
    sp.add_argument("--tokens", required=True)
    selection(sp)
    sp.add_argument("--out", required=True)
    sp.add_argument("--order", dest="lm_order", type=int)
    sp.add_argument("--smoothing", choices=(tokenlm.KNESER_NEY, tokenlm.ADD_K))
    sp.add_argument("--param", dest="smoothing_param", type=float, help="discount (Kneser-Ney) or k (add-k)")
    sp.add_argument("--n-tokens", type=int, help="token inventory size (default: codebook K or max id + 1)")
    sp.add_argument("--codebook")

    sp = add("ppl", cmd_ppl, "perplexity of a token file under a model")
    sp.add_argument("--model", required=True)
    sp.add_argument("--tokens", required=True)
    selection(sp)

    sp = add("sample", cmd_sample, "sample token sequences from a model")
    sp.add_argument("--model", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--count", dest="gen_count", type=int)
    sp.add_argument("--temperature", type=float)
    sp.add_argument("--max-len", type=int)

    sp = add("eval", cmd_eval, "objective metrics report")
    sp.add_argument("--gt-manifest", required=True)
    sp.add_argument("--split", default="test", choices=corpus.SPLITS)
    sp.add_argument("--gen-manifest", help="manifest of generated audio, ids matching the ground truth")
    sp.add_argument("--gt-tokens")
    sp.add_argument("--gen-tokens")
    sp.add_argument("--model")
    sp.add_argument("--out-json")
    sp.add_argument("--out-text")

    sp = add("sweep", cmd_sweep, "per-layer codebook/LM sweep over feature directories")
    sp.add_argument("--feature-dirs", nargs="+", required=True)
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--k", type=int)
    sp.add_argument("--order", dest="lm_order", type=int)
    sp.add_argument("--temperature", type=float)
    sp.add_argument("--count", dest="gen_count", type=int)
    sp.add_argument("--out")
    sp.add_argument("--out-json")

    sp = add("make-splits", cmd_make_splits, "assign train/valid/test splits")
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--test-speakers", type=int, default=30)
    sp.add_argument("--utts-per-test-speaker", type=int, default=3)
    sp.add_argument("--valid-size", type=int, default=90)
    sp.add_argument("--min-speaker-utts", type=int, default=10)

    sp = add("filter", cmd_filter, "exclude over-long or pitchless utterances")
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--max-duration", type=float, default=corpus.MAX_DURATION)
    sp.add_argument("--probe", action="store_true", help="measure duration and voicing from the audio files")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_USAGE if e.code else EXIT_OK
    logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _config(args)
        return args.func(args, cfg)
    except (PPTError, OSError) as e:
        print(f"pptkit {args.command}: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
