"""End-to-end acceptance checks, one test per criterion.

Each test prints ``[PASS]`` or ``[FAIL]`` with the measured numbers before
asserting, so the verdict line appears even when a check fails. Run with
``pytest tests/test_acceptance.py -v`` and the lines are repeated in the
terminal summary.
"""

import math
import time
from collections import Counter, defaultdict
from dataclasses import replace
from functools import lru_cache

import numpy as np

from pptkit import corpus, dsp, metrics, pipeline, tokenlm
from pptkit.cli import main as cli_main
from pptkit.corpus import Manifest, UtteranceRecord, make_splits
from pptkit.dsp import Waveform
from pptkit.quantizer import assign, fit_minibatch_kmeans, inertia
from pptkit.synth import make_desk_corpus
from pptkit.tokenizer import read_token_file, rle_encode, rle_expand
from pptkit.tokenlm import ADD_K, KNESER_NEY


def verdict(report_line, number, title, ok, detail):
    report_line(f"[{'PASS' if ok else 'FAIL'}] criterion {number} ({title}): {detail}")
    assert ok, detail


# ------------------------------------------------------------------ 1. RLE


def test_criterion_1_rle_fidelity(report_line):
    t0 = time.perf_counter()
    ts = rle_encode([21, 21, 34, 21])
    example = list(ts.tokens) == [21, 34, 21] and list(ts.durations) == [2, 1, 1]
    rng = np.random.default_rng(0)
    trips = 0
    for _ in range(1000):
        seq = rng.integers(0, 6, rng.integers(0, 60)).tolist()
        trips += rle_expand(rle_encode(seq)) == seq
    elapsed = time.perf_counter() - t0
    ok = example and trips == 1000 and elapsed < 1.0
    verdict(report_line, 1, "RLE fidelity", ok,
            f"worked example {'ok' if example else 'wrong'}, {trips}/1000 round trips, {elapsed:.3f}s (< 1s)")


# ------------------------------------------------------------------ 2. DTW


def _exhaustive_dtw(a, b):
    n, m = len(a), len(b)
    local = [[sum((int(x) - int(y)) ** 2 for x, y in zip(a[i], b[j])) for j in range(m)] for i in range(n)]

    @lru_cache(maxsize=None)
    def costs(i, j):
        # every path cost from (i, j) to the end, enumerated explicitly
        here = local[i][j]
        if (i, j) == (n - 1, m - 1):
            return (here,)
        out = []
        for di, dj in ((1, 1), (1, 0), (0, 1)):
            if i + di < n and j + dj < m:
                out.extend(here + c for c in costs(i + di, j + dj))
        return tuple(out)

    return min(costs(0, 0))


def test_criterion_2_dtw_oracle(report_line):
    t0 = time.perf_counter()
    rng = np.random.default_rng(1)
    matches = 0
    for _ in range(100):
        d = int(rng.integers(1, 4))
        a = rng.integers(-9, 10, (int(rng.integers(1, 7)), d))
        b = rng.integers(-9, 10, (int(rng.integers(1, 7)), d))
        matches += metrics.dtw(a, b, dist="squared").cost == _exhaustive_dtw(a, b)
    zeros = 0
    for _ in range(50):
        a = rng.normal(size=(int(rng.integers(1, 40)), int(rng.integers(1, 5))))
        zeros += metrics.dtw(a, a).cost == 0.0
    elapsed = time.perf_counter() - t0
    ok = matches == 100 and zeros == 50 and elapsed < 10.0
    verdict(report_line, 2, "DTW oracle", ok,
            f"{matches}/100 exact oracle matches, {zeros}/50 zero self-costs, {elapsed:.2f}s (< 10s)")


# --------------------------------------------------------------- 3. k-means


def test_criterion_3_kmeans(report_line):
    t0 = time.perf_counter()
    rng = np.random.default_rng(2)

    x = rng.normal(size=(1000, 5))
    cb = fit_minibatch_kmeans(x, k=1, batch_size=1000)
    mean_err = float(np.max(np.abs(cb.centroids[0] - x.mean(axis=0))))

    centers = np.array([[0.0, 0.0], [10.0, 0.0], [5.0, 10.0]])
    blobs = np.concatenate([c + 0.1 * rng.standard_normal((100, 2)) for c in centers])
    truth = np.repeat(np.arange(3), 100)
    lab = assign(fit_minibatch_kmeans(blobs, k=3, batch_size=300, seed=0), blobs)
    purity = sum(np.bincount(truth[lab == j]).max() for j in np.unique(lab)) / len(truth)

    y = rng.normal(size=(600, 4))
    hist = np.array(fit_minibatch_kmeans(y, k=10, batch_size=600, max_iters=200, tol=0.0, seed=3).inertia_history)
    monotone = bool(np.all(np.diff(hist) <= 0))

    z = rng.normal(size=(5000, 8))
    a = fit_minibatch_kmeans(z, k=16, batch_size=1000, max_iters=50, seed=4)
    b = fit_minibatch_kmeans(z, k=16, batch_size=1000, max_iters=50, seed=4)
    same = a.centroids.tobytes() == b.centroids.tobytes() and inertia(a, z) == inertia(b, z)

    elapsed = time.perf_counter() - t0
    ok = mean_err <= 1e-6 and purity >= 0.99 and monotone and same and elapsed < 30.0
    verdict(report_line, 3, "k-means", ok,
            f"K=1 mean error {mean_err:.1e} (<= 1e-6), blob purity {purity:.3f} (>= 0.99), "
            f"full-batch inertia non-increasing over {len(hist)} iterations: {monotone}, "
            f"same seed bit-identical: {same}, {elapsed:.2f}s (< 30s)")


# --------------------------------------------------------------- 4. metrics


def test_criterion_4_metrics_ground_truth(report_line):
    # Hand count for [1,2,3,4] vs [1,2,3,5]: unigrams 3/4, bigrams 2/3,
    # trigrams 1/2 ((1,2,3) hits, (2,3,4) misses), four-grams 0/1 -> epsilon.
    hand = math.exp((math.log(3 / 4) + math.log(2 / 3) + math.log(1 / 2) + math.log(1e-9)) / 4)
    b = metrics.bleu([1, 2, 3, 4], [[1, 2, 3, 5]])
    sb = metrics.self_bleu([[3, 1, 4, 1, 5, 9]] * 5)
    gt = [[1, 2, 3, 4], [1, 2, 5, 6, 7], [2, 3, 4, 8], [9, 1, 2, 3]]
    nsb = metrics.normalized_self_bleu(gt, gt).normalized
    m = metrics.mcd([[4.0, 1.0, 0.0, 0.0]], [[-2.0, 0.0, 0.0, 0.0]])
    cep = [[0.0, 0.0], [0.0, 4.0], [0.0, 8.0]]
    f1 = dsp.PitchTrack(np.array([120.0, 180.0, 240.0]), np.array([True, True, True]), 50.0)
    f2 = dsp.PitchTrack(np.array([123.0, 176.0, 240.0]), np.array([True, True, True]), 50.0)
    f = metrics.f0_rmse(f1, cep, f2, cep)

    checks = {
        "bleu": abs(b - hand) <= 1e-6,
        "self_bleu": sb == 1.0,
        "normalized": nsb == 1.0,
        "mcd": abs(m - 10 / math.log(10) * math.sqrt(2)) <= 1e-6,
        "f0_rmse": abs(f - math.sqrt(25 / 3)) <= 1e-6,
    }
    verdict(report_line, 4, "metrics ground truth", all(checks.values()),
            f"bleu {b:.9f} vs {hand:.9f}, self-BLEU {sb}, normalized {nsb}, MCD {m:.6f} dB, "
            f"F0-RMSE {f:.6f} Hz; failing: {[k for k, v in checks.items() if not v] or 'none'}")


# -------------------------------------------------------------------- 5. LM


def _chain_corpus(n, seed, n_tokens=10):
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        t = int(rng.integers(n_tokens))
        seq = [t]
        for _ in range(int(rng.integers(4, 16))):
            t = (t + 1) % n_tokens if rng.random() < 0.85 else (t + 4) % n_tokens
            seq.append(t)
        out.append(seq)
    return out


def test_criterion_5_language_model(report_line):
    seq = list(range(199))
    uniform = tokenlm.train([seq], order=1, smoothing=ADD_K, param=0)
    ppl_uniform = tokenlm.perplexity(uniform, [seq])
    uniform_ok = abs(ppl_uniform - (uniform.vocab_size - 1)) <= 1e-6

    big = tokenlm.train([[1, 2], [1, 3], [1, 2, 2]], order=2, smoothing=ADD_K, param=0, n_tokens=4)
    # counts: (1,2)x2 (1,3)x1 (2,EOS)x2 (2,2)x1 (3,EOS)x1 (BOS,1)x3
    hand = {(1, 2): 2 / 3, (1, 3): 1 / 3, (2, 2): 1 / 3, (2, big.eos): 2 / 3, (3, big.eos): 1.0}
    bigram_err = max(abs(big.distribution([v])[w] - p) for (v, w), p in hand.items())

    model = tokenlm.train(_chain_corpus(40, 5, n_tokens=6), order=2, n_tokens=6)
    p = model.distribution([])
    rng = np.random.default_rng(6)
    n = 10_000
    counts = Counter()
    for _ in range(n):
        s = tokenlm.sample(model, 1.0, 1, seed=rng)
        counts[s[0] if s else model.eos] += 1
    worst = 0.0
    for tok in range(model.vocab_size):
        if p[tok] > 0:
            worst = max(worst, abs(counts[tok] - n * p[tok]) / math.sqrt(n * p[tok] * (1 - p[tok])))
        elif counts[tok]:
            worst = math.inf

    lm = tokenlm.train(_chain_corpus(300, 7), order=3, n_tokens=10, smoothing=KNESER_NEY)
    held = _chain_corpus(60, 8)
    shuffled = [np.random.default_rng(9 + i).permutation(s).tolist() for i, s in enumerate(held)]
    ppl_in, ppl_sh = tokenlm.perplexity(lm, held), tokenlm.perplexity(lm, shuffled)

    ok = uniform_ok and bigram_err <= 1e-9 and worst <= 3.0 and ppl_in < ppl_sh
    verdict(report_line, 5, "language model", ok,
            f"uniform PPL {ppl_uniform:.9f} (V={uniform.vocab_size - 1}), bigram error {bigram_err:.1e} (<= 1e-9), "
            f"worst sampling deviation {worst:.2f} sigma (<= 3), PPL in-domain {ppl_in:.3f} < shuffled {ppl_sh:.3f}")


# --------------------------------------------------------- 6. desk pipeline


def _dominant(ts):
    frames = Counter()
    for t, d in zip(ts.tokens, ts.durations):
        frames[t] += d
    return min(frames, key=lambda t: (-frames[t], t))


def test_criterion_6_desk_pipeline(report_line, tmp_path):
    t0 = time.perf_counter()
    gt_dir, gen_dir = tmp_path / "gt", tmp_path / "gen"
    mpath, labels = make_desk_corpus(gt_dir, per_class=20, min_dur=1.0, max_dur=3.0, seed=0)
    m = corpus.load_manifest(mpath)
    m = Manifest([replace(r, split="test" if int(r.id[-3:]) % 4 == 0 else "train") for r in m.records])
    corpus.save_manifest(mpath, m)
    # stand-in "generated" audio: the same ids rendered again with a different seed
    gen_mpath, _ = make_desk_corpus(gen_dir, per_class=20, min_dur=1.0, max_dur=3.0, seed=1)

    cfg = pipeline.PipelineConfig(hop=320, k=8, lm_order=3, temperature=0.7, gen_count=90, seed=0)
    feats = tmp_path / "feats"
    rc_extract = cli_main(["extract", "--manifest", str(mpath), "--out-dir", str(feats)])
    fs = pipeline.load_feature_set(feats)
    train_ids = sorted(r.id for r in m.by_split("train"))
    test_ids = sorted(r.id for r in m.by_split("test"))
    cb = pipeline.fit_codebook({i: fs[i] for i in train_ids}, cfg)
    tokens = pipeline.tokenize_set(cb, fs)

    by_token = defaultdict(Counter)
    for i, ts in tokens.items():
        by_token[_dominant(ts)][labels[i]] += 1
    purity = sum(c.most_common(1)[0][1] for c in by_token.values()) / len(tokens)

    model = pipeline.train_lm([tokens[i].tokens for i in train_ids], cfg, n_tokens=cb.k)
    gen = pipeline.generate(model, cfg)
    gen_m = corpus.load_manifest(gen_mpath)
    report = pipeline.evaluate(
        cfg,
        gt_audio={r.id: corpus.resolve_audio(mpath, r) for r in m.by_split("test")},
        gen_audio={r.id: corpus.resolve_audio(gen_mpath, r) for r in gen_m.records},
        gt_tokens={i: tokens[i] for i in test_ids},
        gen_tokens=gen,
        model=model,
    )
    elapsed = time.perf_counter() - t0
    fields = ", ".join(f"{k}={report[k]:.4g}" if report[k] is not None else f"{k}=None" for k in pipeline.REPORT_FIELDS)
    ok = (rc_extract == 0 and len(fs) == 60 and purity >= 0.9 and len(gen) == 90
          and pipeline.finite(report) and elapsed < 120.0)
    verdict(report_line, 6, "desk pipeline", ok,
            f"60 utterances, K={cb.k}, dominant-token purity {purity:.3f} (>= 0.9), {len(gen)} generated, "
            f"{fields}, {elapsed:.1f}s (< 120s)")


# -------------------------------------------------------- 7. frame-rate law


def test_criterion_7_frame_rate(report_line, tmp_path):
    w = Waveform(np.random.default_rng(10).uniform(-0.3, 0.3, 16000), 16000)
    n_mel = dsp.mel_spectrogram(w).num_frames
    n_cep = dsp.mel_cepstra(dsp.mel_spectrogram(w)).num_frames
    n_f0 = len(dsp.extract_f0(w))
    dsp.write_wav(tmp_path / "one.wav", w)
    corpus.save_manifest(tmp_path / "m.jsonl", Manifest([UtteranceRecord("one", "s", "one.wav", 1.0, True)]))
    cli_main(["extract", "--manifest", str(tmp_path / "m.jsonl"), "--out-dir", str(tmp_path / "f")])
    n_file = dsp.read_features(tmp_path / "f" / "one.pptf").num_frames
    ok = n_mel == n_cep == n_f0 == n_file == 50
    verdict(report_line, 7, "frame-rate law", ok,
            f"1 s at 16 kHz -> mel {n_mel}, cepstra {n_cep}, pitch {n_f0}, PPTF file {n_file} frames (== 50)")


# ------------------------------------------------------- 8. split building


def test_criterion_8_splits(report_line):
    recs = [UtteranceRecord(f"s{s:02d}_{j:02d}", f"s{s:02d}", "x.wav", 2.0, True) for s in range(40) for j in range(12)]
    a = make_splits(Manifest(recs), seed=0)
    b = make_splits(Manifest(recs), seed=0)
    per = Counter(r.speaker for r in a.by_split("test"))
    ids = [{r.id for r in a.by_split(s)} for s in ("train", "valid", "test")]
    disjoint = sum(map(len, ids)) == len(set().union(*ids)) == len(recs)
    small_ok = len(per) == 30 and set(per.values()) == {3} and disjoint and a == b

    rng = np.random.default_rng(11)
    weights = rng.gamma(0.8, size=470)
    sizes = rng.multinomial(7290 - 470, weights / weights.sum()) + 1
    big = [UtteranceRecord(f"u{n:05d}", f"spk{s:03d}", "x.wav", 3.0, True)
           for n, s in enumerate(s for s, k in enumerate(sizes) for _ in range(k))]
    c = make_splits(Manifest(big), seed=0).split_counts()
    big_ok = (c["train"], c["valid"], c["test"]) == (7110, 90, 90)

    verdict(report_line, 8, "split construction", small_ok and big_ok,
            f"40x12 -> {len(per)} test speakers x {sorted(set(per.values()))} utterances, disjoint {disjoint}, "
            f"deterministic {a == b}; 7290 records -> {c['train']}/{c['valid']}/{c['test']}")
