"""Objective evaluation: DTW, mel-cepstral distortion, F0-RMSE, BLEU and Self-BLEU."""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .dsp import FeatureMatrix, PitchTrack
from .errors import (
    CorpusTooSmall,
    DegenerateGroundTruth,
    DimensionMismatch,
    EmptyInput,
    EmptyReferenceSet,
    NoVoicedOverlap,
)

MCD_CONST = 10.0 / math.log(10.0) * math.sqrt(2.0)
BLEU_EPSILON = 1e-9


@dataclass
class DtwAlignment:
    path: list
    cost: float

    def __len__(self):
        return len(self.path)


def _matrix(x) -> np.ndarray:
    a = x.data if isinstance(x, FeatureMatrix) else np.asarray(x, dtype=np.float64)
    if a.ndim == 1:
        a = a[:, None]
    return a


def local_distances(a, b, dist="euclidean") -> np.ndarray:
    a, b = _matrix(a), _matrix(b)
    d2 = np.empty((len(a), len(b)))
    for i in range(len(a)):
        d2[i] = np.sum((b - a[i]) ** 2, axis=1)
    if dist == "squared":
        return d2
    if dist == "euclidean":
        return np.sqrt(d2)
    raise ValueError(f"unknown distance {dist!r}")


def dtw(a, b, dist="euclidean") -> DtwAlignment:
    """Minimum-cost monotone alignment with steps (1,0), (0,1), (1,1).

    On backtrace ties the diagonal step wins, then (1,0), then (0,1).
    The returned cost is the sum of local distances along the path.
    """
    a, b = _matrix(a), _matrix(b)
    if len(a) == 0 or len(b) == 0:
        raise EmptyInput("DTW needs two non-empty sequences")
    if a.shape[1] != b.shape[1]:
        raise DimensionMismatch(f"feature dims differ: {a.shape[1]} vs {b.shape[1]}")
    local = local_distances(a, b, dist)
    n, m = local.shape

    # Row recurrence acc[i, j] = local[i, j] + min(best_above[j], acc[i, j - 1])
    # solved as a prefix minimum: acc = S + cummin(best_above - S_shifted).
    acc = np.empty((n, m))
    best_above = np.full(m, np.inf)
    best_above[0] = 0.0
    for i in range(n):
        s = np.cumsum(local[i])
        shifted = np.concatenate([[0.0], s[:-1]])
        acc[i] = s + np.minimum.accumulate(best_above - shifted)
        if i + 1 < n:
            prev = acc[i]
            best_above = np.minimum(prev, np.concatenate([[np.inf], prev[:-1]]))

    i, j = n - 1, m - 1
    path = [(i, j)]
    while i > 0 or j > 0:
        options = []
        if i > 0 and j > 0:
            options.append((acc[i - 1, j - 1], i - 1, j - 1))
        if i > 0:
            options.append((acc[i - 1, j], i - 1, j))
        if j > 0:
            options.append((acc[i, j - 1], i, j - 1))
        best = min(o[0] for o in options)
        _, i, j = next(o for o in options if o[0] == best)
        path.append((i, j))
    path.reverse()
    cost = math.fsum(local[p] for p in path)
    return DtwAlignment(path, cost)


def _cepstra_pair(c1, c2):
    x, y = _matrix(c1), _matrix(c2)
    if x.shape[1] != y.shape[1]:
        raise DimensionMismatch(f"cepstral orders differ: {x.shape[1]} vs {y.shape[1]}")
    if len(x) == 0 or len(y) == 0:
        raise EmptyInput("cepstral sequences must be non-empty")
    if x.shape[1] < 2:
        raise DimensionMismatch("need at least two cepstral coefficients (0th is excluded)")
    return x[:, 1:], y[:, 1:]


def mcd_alignment(c1, c2) -> DtwAlignment:
    """DTW over cepstral coefficients 1..n-1 (the energy term is excluded)."""
    return dtw(*_cepstra_pair(c1, c2), dist="euclidean")


def mcd(c1, c2) -> float:
    """Mel-cepstral distortion in dB, averaged over the DTW path."""
    x, y = _cepstra_pair(c1, c2)
    aln = dtw(x, y, dist="euclidean")
    per_pair = [MCD_CONST * math.sqrt(float(np.sum((x[i] - y[j]) ** 2))) for i, j in aln.path]
    return math.fsum(per_pair) / len(per_pair)


def f0_rmse(f1: PitchTrack, c1, f2: PitchTrack, c2) -> float:
    """RMSE in Hz over cepstral-DTW-aligned frame pairs that are voiced on both sides."""
    if len(f1) != len(_matrix(c1)) or len(f2) != len(_matrix(c2)):
        raise DimensionMismatch("pitch tracks must have one value per cepstral frame")
    aln = mcd_alignment(c1, c2)
    diffs = [
        float(f1.f0[i] - f2.f0[j]) ** 2
        for i, j in aln.path
        if f1.voiced[i] and f2.voiced[j]
    ]
    if not diffs:
        raise NoVoicedOverlap("no aligned frame pair is voiced in both utterances")
    return math.sqrt(math.fsum(diffs) / len(diffs))


# ------------------------------------------------------------------------ BLEU


def _ngrams(seq, n):
    return Counter(tuple(seq[i:i + n]) for i in range(len(seq) - n + 1))


def bleu(candidate, references, max_n=4, epsilon=BLEU_EPSILON) -> float:
    """Sentence BLEU with uniform weights and brevity penalty.

    Orders with matches but zero clipped hits get ``epsilon`` as numerator.
    Orders longer than the candidate have no n-grams at all and are left out
    of the geometric mean, so ``bleu(s, [s]) == 1`` for short ``s`` too.
    """
    cand = [int(t) for t in candidate]
    refs = [[int(t) for t in r] for r in references]
    if not refs:
        raise EmptyReferenceSet("BLEU needs at least one reference")
    if not cand:
        raise EmptyInput("candidate must be non-empty")

    logs = []
    for n in range(1, max_n + 1):
        counts = _ngrams(cand, n)
        total = sum(counts.values())
        if total == 0:
            break
        max_ref = Counter()
        for r in refs:
            for g, c in _ngrams(r, n).items():
                if c > max_ref[g]:
                    max_ref[g] = c
        clipped = sum(min(c, max_ref[g]) for g, c in counts.items())
        logs.append(math.log((clipped if clipped > 0 else epsilon) / total))

    c = len(cand)
    r = min((len(x) for x in refs), key=lambda rl: (abs(rl - c), rl))
    bp = 1.0 if c > r else math.exp(1.0 - r / c)
    return bp * math.exp(math.fsum(logs) / len(logs))


def sentence_self_bleus(corpus, max_n=4) -> list:
    seqs = [list(s.tokens) if hasattr(s, "tokens") else list(s) for s in corpus]
    seqs = [s for s in seqs if s]
    if len(seqs) < 2:
        raise CorpusTooSmall(f"Self-BLEU needs at least 2 non-empty sentences, got {len(seqs)}")
    return [bleu(s, seqs[:i] + seqs[i + 1:], max_n) for i, s in enumerate(seqs)]


def self_bleu(corpus, max_n=4) -> float:
    """Mean BLEU of each sentence against all the others (empty sentences dropped)."""
    scores = sentence_self_bleus(corpus, max_n)
    return math.fsum(scores) / len(scores)


@dataclass
class BleuReport:
    per_sentence_bleu: list
    self_bleu: float
    self_bleu_gt: float
    normalized: float
    exceeds_one: bool
    meta: dict = field(default_factory=lambda: {"max_n": 4, "smoothing": f"epsilon numerator {BLEU_EPSILON:g}"})


def normalized_self_bleu(generated, ground_truth, max_n=4) -> BleuReport:
    """Ratio of generated-corpus Self-BLEU to ground-truth Self-BLEU, reported unclamped."""
    per = sentence_self_bleus(generated, max_n)
    sb = math.fsum(per) / len(per)
    gt = self_bleu(ground_truth, max_n)
    if gt <= 0:
        raise DegenerateGroundTruth("ground-truth Self-BLEU is zero")
    ratio = sb / gt
    return BleuReport(per, sb, gt, ratio, ratio > 1.0)
