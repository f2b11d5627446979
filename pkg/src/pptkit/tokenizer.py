"""Cluster-index sequences to deduplicated tokens with run-length durations."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import InvariantViolation, MalformedFile
from .quantizer import Codebook, assign


@dataclass(frozen=True)
class TokenSequence:
    tokens: tuple
    durations: tuple
    total_frames: int

    def __post_init__(self):
        object.__setattr__(self, "tokens", tuple(int(t) for t in self.tokens))
        object.__setattr__(self, "durations", tuple(int(d) for d in self.durations))

    def validate(self):
        if len(self.tokens) != len(self.durations):
            raise InvariantViolation(f"{len(self.tokens)} tokens but {len(self.durations)} durations")
        if any(d < 1 for d in self.durations):
            raise InvariantViolation("durations must be >= 1")
        if any(a == b for a, b in zip(self.tokens, self.tokens[1:])):
            raise InvariantViolation("consecutive duplicate tokens")
        if sum(self.durations) != self.total_frames:
            raise InvariantViolation(f"durations sum to {sum(self.durations)}, total_frames is {self.total_frames}")
        return self

    def __len__(self):
        return len(self.tokens)


def rle_encode(frames) -> TokenSequence:
    """Collapse maximal runs: ``[21, 21, 34, 21]`` becomes tokens ``[21, 34, 21]``, durations ``[2, 1, 1]``."""
    a = np.asarray(frames, dtype=np.int64).ravel()
    if a.size == 0:
        return TokenSequence((), (), 0)
    starts = np.concatenate([[0], np.nonzero(a[1:] != a[:-1])[0] + 1])
    durations = np.diff(np.concatenate([starts, [a.size]]))
    return TokenSequence(a[starts].tolist(), durations.tolist(), int(a.size))


def rle_expand(ts: TokenSequence) -> list:
    ts.validate()
    return np.repeat(np.asarray(ts.tokens, dtype=np.int64), ts.durations).tolist()


def tokenize_utterance(cb: Codebook, features) -> TokenSequence:
    return rle_encode(assign(cb, features))


# ------------------------------------------------------------------ token files


def write_token_file(path, utterances: dict, durations: bool = True):
    """One utterance per line: ``id<TAB>tok,dur tok,dur ...`` (or bare tokens)."""
    lines = []
    for utt_id, ts in utterances.items():
        if durations:
            body = " ".join(f"{t},{d}" for t, d in zip(ts.tokens, ts.durations))
        else:
            toks = ts.tokens if isinstance(ts, TokenSequence) else ts
            body = " ".join(str(int(t)) for t in toks)
        lines.append(f"{utt_id}\t{body}\n")
    Path(path).write_text("".join(lines), encoding="utf-8")


def read_token_file(path) -> dict:
    """Parse either token-file layout into ``{id: TokenSequence}``.

    Lines without durations get a duration of 1 per token.
    """
    out = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        utt_id, sep, body = line.partition("\t")
        if not sep or not utt_id:
            raise MalformedFile(f"{path}:{lineno}: expected '<id>\\t<tokens>'")
        if utt_id in out:
            raise MalformedFile(f"{path}:{lineno}: duplicate id {utt_id!r}")
        tokens, durs = [], []
        try:
            for item in body.split():
                tok, comma, dur = item.partition(",")
                tokens.append(int(tok))
                durs.append(int(dur) if comma else 1)
        except ValueError as e:
            raise MalformedFile(f"{path}:{lineno}: {e}") from e
        out[utt_id] = TokenSequence(tokens, durs, sum(durs))
    return out
