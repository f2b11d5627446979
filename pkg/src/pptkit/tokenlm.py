"""Smoothed n-gram language model over token sequences.

Token ids ``0 .. n_tokens - 1`` are the PPT inventory; ``n_tokens`` is BOS and
``n_tokens + 1`` is EOS. BOS only pads contexts, EOS is a predicted event, so
every conditional distribution has ``vocab_size - 1`` outcomes.
"""

from __future__ import annotations

import math
import struct
from collections import Counter, defaultdict
from pathlib import Path

import numpy as np

from .errors import ConfigError, EmptyCorpus, MalformedFile, UnknownToken, VersionMismatch

KNESER_NEY = "kneser_ney"
ADD_K = "add_k"
_SMOOTHING_CODES = {ADD_K: 0, KNESER_NEY: 1}
_DEFAULT_PARAM = {ADD_K: 1.0, KNESER_NEY: 0.75}
MIN_TEMPERATURE = 1e-6


def _tokens_of(seq):
    return list(seq.tokens) if hasattr(seq, "tokens") else [int(t) for t in seq]


class _Table:
    """Counts of outcomes following one context, as index/count arrays."""

    __slots__ = ("idx", "counts", "total", "types")

    def __init__(self, counter):
        items = sorted(counter.items())
        self.idx = np.array([w for w, _ in items], dtype=np.int64)
        self.counts = np.array([c for _, c in items], dtype=np.float64)
        self.total = float(self.counts.sum())
        self.types = len(items)


class NGramModel:
    def __init__(self, order, n_tokens, windows, smoothing=KNESER_NEY, param=None, seed=0):
        if order < 1:
            raise ConfigError(f"order must be >= 1, got {order}")
        if smoothing not in _SMOOTHING_CODES:
            raise ConfigError(f"unknown smoothing {smoothing!r}")
        if param is None:
            param = _DEFAULT_PARAM[smoothing]
        if smoothing == KNESER_NEY and not 0 < param <= 1:
            raise ConfigError(f"Kneser-Ney discount must be in (0, 1], got {param}")
        if smoothing == ADD_K and param < 0:
            raise ConfigError(f"add-k constant must be >= 0, got {param}")
        self.order = int(order)
        self.n_tokens = int(n_tokens)
        self.smoothing = smoothing
        self.param = float(param)
        self.seed = int(seed)
        self.windows = Counter({tuple(int(x) for x in w): int(c) for w, c in windows.items()})
        self._build()
        self._cache = {}

    @property
    def vocab_size(self) -> int:
        return self.n_tokens + 2

    @property
    def bos(self) -> int:
        return self.n_tokens

    @property
    def eos(self) -> int:
        return self.n_tokens + 1

    def _build(self):
        n = self.order
        raw = [None] + [defaultdict(Counter) for _ in range(n)]
        left = [None] + [defaultdict(set) for _ in range(n)]
        for w, c in self.windows.items():
            for m in range(1, n + 1):
                gram = w[n - m:]
                raw[m][gram[:-1]][gram[-1]] += c
                if m < n:
                    left[m][gram].add(w[n - m - 1])
        self._raw = [None] + [{h: _Table(ctr) for h, ctr in raw[m].items()} for m in range(1, n + 1)]
        cont = [None]
        for m in range(1, n):
            by_ctx = defaultdict(Counter)
            for gram, lefts in left[m].items():
                by_ctx[gram[:-1]][gram[-1]] = len(lefts)
            cont.append({h: _Table(ctr) for h, ctr in by_ctx.items()})
        self._cont = cont

    def _context(self, history):
        h = [self.bos] * (self.order - 1) + list(history)
        return tuple(h[len(h) - (self.order - 1):]) if self.order > 1 else ()

    def _support(self):
        v = np.ones(self.vocab_size)
        v[self.bos] = 0.0
        return v

    def _kn(self, h):
        m = len(h) + 1
        if m == 1:
            lower = self._support() / (self.vocab_size - 1)
        else:
            lower = self._kn(h[1:])
        tables = self._raw[m] if m == self.order else self._cont[m]
        t = tables.get(h)
        if t is None:
            return lower
        d = self.param
        p = lower * (d * t.types / t.total)
        p[t.idx] += np.maximum(t.counts - d, 0.0) / t.total
        return p

    def _add_k(self, h):
        k = self.param
        for m in range(self.order, 0, -1):
            t = self._raw[m].get(h[len(h) - (m - 1):] if m > 1 else ())
            if t is not None:
                p = self._support() * k
                p[t.idx] += t.counts
                return p / (t.total + k * (self.vocab_size - 1))
        return self._support() / (self.vocab_size - 1)

    def distribution(self, history=()) -> np.ndarray:
        """P(next | history) over all ``vocab_size`` ids (BOS entry is 0)."""
        h = self._context(history)
        p = self._cache.get(h)
        if p is None:
            p = self._kn(h) if self.smoothing == KNESER_NEY else self._add_k(h)
            p.setflags(write=False)
            self._cache[h] = p
        return p

    def _check(self, seq):
        toks = _tokens_of(seq)
        for t in toks:
            if not 0 <= t < self.n_tokens:
                raise UnknownToken(f"token {t} outside inventory [0, {self.n_tokens})")
        return toks


def train(corpus, order=5, smoothing=KNESER_NEY, param=None, n_tokens=None, seed=0) -> NGramModel:
    """Count BOS-padded, EOS-terminated n-gram windows and wrap them in a model.

    ``n_tokens`` defaults to one more than the largest id in the corpus.
    """
    seqs = [_tokens_of(s) for s in corpus]
    if not seqs:
        raise EmptyCorpus("training corpus is empty")
    if order < 1:
        raise ConfigError(f"order must be >= 1, got {order}")
    top = max((max(s) for s in seqs if s), default=-1)
    if n_tokens is None:
        n_tokens = top + 1
    if top >= n_tokens or any(t < 0 for s in seqs for t in s):
        raise UnknownToken(f"corpus token ids must lie in [0, {n_tokens})")
    bos, eos = n_tokens, n_tokens + 1
    windows = Counter()
    for s in seqs:
        padded = [bos] * (order - 1) + s + [eos]
        for i in range(order - 1, len(padded)):
            windows[tuple(padded[i - order + 1:i + 1])] += 1
    return NGramModel(order, n_tokens, windows, smoothing, param, seed)


def log_prob(m: NGramModel, seq) -> float:
    """Natural-log probability of ``seq`` followed by EOS (``-inf`` if any event is unseen and unsmoothed)."""
    toks = m._check(seq)
    total = 0.0
    for i, t in enumerate(toks + [m.eos]):
        p = m.distribution(toks[:i])[t]
        if p <= 0:
            return -math.inf
        total += math.log(p)
    return total


def perplexity(m: NGramModel, test) -> float:
    seqs = [m._check(s) for s in test]
    if not seqs:
        raise EmptyCorpus("test set is empty")
    events = sum(len(s) + 1 for s in seqs)
    return math.exp(-math.fsum(log_prob(m, s) for s in seqs) / events)


def temper(p: np.ndarray, temperature: float) -> np.ndarray:
    """Renormalized ``p ** (1 / temperature)``; zero entries stay zero."""
    temperature = max(float(temperature), MIN_TEMPERATURE)
    out = np.zeros_like(p, dtype=np.float64)
    nz = p > 0
    logits = np.log(p[nz]) / temperature
    e = np.exp(logits - logits.max())
    out[nz] = e / e.sum()
    return out


def sample(m: NGramModel, temperature=1.0, max_len=500, seed=None) -> list:
    """Ancestral sampling until EOS (not included) or ``max_len`` tokens.

    ``seed`` may be an int, a SeedSequence or a ``numpy.random.Generator``.
    """
    if temperature <= 0:
        raise ConfigError(f"temperature must be positive, got {temperature}")
    if max_len < 1:
        raise ConfigError(f"max_len must be >= 1, got {max_len}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(m.seed if seed is None else seed)
    out = []
    while len(out) < max_len:
        q = temper(m.distribution(out), temperature)
        cdf = np.cumsum(q)
        t = int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"))
        t = min(t, len(q) - 1)
        if t == m.eos:
            break
        out.append(t)
    return out


def generate_batch(m: NGramModel, count=90, temperature=0.7, seed=None, max_len=500) -> list:
    """``count`` independent samples, each driven by its own spawned sub-seed."""
    base = np.random.SeedSequence(m.seed if seed is None else seed)
    return [sample(m, temperature, max_len, np.random.default_rng(s)) for s in base.spawn(count)]


# ------------------------------------------------------------------------- IO

_PPTL_MAGIC = b"PPTL"
_PPTL_VERSION = 1
_PPTL_HEADER = struct.Struct("<4sIIIBdQI")


def save_model(path, m: NGramModel):
    rows = sorted(m.windows.items())
    table = np.array([list(w) + [c] for w, c in rows], dtype="<u4").reshape(len(rows), m.order + 1)
    header = _PPTL_HEADER.pack(
        _PPTL_MAGIC, _PPTL_VERSION, m.order, m.vocab_size, _SMOOTHING_CODES[m.smoothing], m.param, m.seed, len(rows)
    )
    Path(path).write_bytes(header + table.tobytes())


def load_model(path) -> NGramModel:
    raw = Path(path).read_bytes()
    if len(raw) < _PPTL_HEADER.size:
        raise MalformedFile(f"{path}: truncated header")
    magic, version, order, vocab, code, param, seed, rows = _PPTL_HEADER.unpack_from(raw)
    if magic != _PPTL_MAGIC:
        raise MalformedFile(f"{path}: bad magic {magic!r}")
    if version != _PPTL_VERSION:
        raise VersionMismatch(f"{path}: version {version}, expected {_PPTL_VERSION}")
    names = {v: k for k, v in _SMOOTHING_CODES.items()}
    if code not in names or order < 1 or vocab < 2:
        raise MalformedFile(f"{path}: bad header fields")
    payload = raw[_PPTL_HEADER.size:]
    if len(payload) != 4 * rows * (order + 1):
        raise MalformedFile(f"{path}: payload size does not match {rows} rows")
    table = np.frombuffer(payload, dtype="<u4").reshape(rows, order + 1)
    if np.any(table[:, :-1] >= vocab):
        raise MalformedFile(f"{path}: token id out of range")
    windows = {tuple(int(x) for x in r[:-1]): int(r[-1]) for r in table}
    return NGramModel(order, vocab - 2, windows, names[code], param, seed)
