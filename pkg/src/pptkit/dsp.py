"""Audio ingestion and frame-level acoustic features at 50 frames per second.

All extractors use center-aligned framing: frame ``t`` is centered on sample
``t * hop`` so an ``n``-sample signal always yields ``ceil(n / hop)`` frames.
"""

from __future__ import annotations

import enum
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import fft as sp_fft
from scipy import signal

from .errors import ConfigError, MalformedFile, MalformedWav, UnsupportedEncoding, VersionMismatch

SAMPLE_RATE = 16000
HOP = 320

_WAVE_FORMAT_PCM = 0x0001
_WAVE_FORMAT_IEEE_FLOAT = 0x0003
_WAVE_FORMAT_EXTENSIBLE = 0xFFFE


class FeatureKind(enum.IntEnum):
    MEL_SPECTROGRAM = 0
    MEL_CEPSTRA = 1
    EXTERNAL = 2


@dataclass
class Waveform:
    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise ValueError("waveform must be mono (1-D)")
        self.sample_rate = int(self.sample_rate)

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate


@dataclass
class FeatureMatrix:
    data: np.ndarray
    frame_rate: float
    kind: FeatureKind
    hop: int = HOP

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 2:
            raise ValueError(f"feature matrix must be 2-D, got shape {self.data.shape}")
        self.kind = FeatureKind(self.kind)

    @property
    def num_frames(self) -> int:
        return self.data.shape[0]

    @property
    def dim(self) -> int:
        return self.data.shape[1]


@dataclass
class PitchTrack:
    f0: np.ndarray
    voiced: np.ndarray
    frame_rate: float
    tracker: str = "yin"
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.f0)


# --------------------------------------------------------------------------- WAV


def load_wav(path) -> Waveform:
    """Read a RIFF/WAVE file into a mono waveform scaled to [-1, 1].

    Supports 8/16/24/32-bit integer PCM and 32-bit float, mono or stereo.
    Stereo is averaged to mono; the original sample rate is kept.
    """
    raw = Path(path).read_bytes()
    if len(raw) < 12 or raw[:4] != b"RIFF" or raw[8:12] != b"WAVE":
        raise MalformedWav(f"{path}: not a RIFF/WAVE file")

    fmt = None
    data = None
    pos = 12
    while pos + 8 <= len(raw):
        chunk_id = raw[pos:pos + 4]
        (size,) = struct.unpack_from("<I", raw, pos + 4)
        body_start = pos + 8
        body_end = body_start + size
        if chunk_id == b"data":
            if body_end > len(raw):
                raise MalformedWav(f"{path}: data chunk truncated ({len(raw) - body_start} of {size} bytes)")
            data = raw[body_start:body_end]
        elif chunk_id == b"fmt ":
            if size < 16 or body_end > len(raw):
                raise MalformedWav(f"{path}: fmt chunk truncated")
            fmt = raw[body_start:body_end]
        pos = body_end + (size & 1)
    if fmt is None:
        raise MalformedWav(f"{path}: missing fmt chunk")
    if data is None:
        raise MalformedWav(f"{path}: missing data chunk")

    tag, channels, rate, _, block_align, bits = struct.unpack_from("<HHIIHH", fmt)
    if tag == _WAVE_FORMAT_EXTENSIBLE:
        if len(fmt) < 40:
            raise MalformedWav(f"{path}: extensible fmt chunk truncated")
        (tag,) = struct.unpack_from("<H", fmt, 24)
    if channels not in (1, 2):
        raise UnsupportedEncoding(f"{path}: {channels} channels")
    if rate <= 0:
        raise MalformedWav(f"{path}: sample rate {rate}")
    if block_align != channels * bits // 8 or block_align == 0:
        raise MalformedWav(f"{path}: inconsistent block align {block_align}")
    if len(data) % block_align:
        raise MalformedWav(f"{path}: data size {len(data)} is not a whole number of frames")

    if tag == _WAVE_FORMAT_PCM:
        if bits == 8:
            x = (np.frombuffer(data, dtype=np.uint8).astype(np.float64) - 128.0) / 128.0
        elif bits == 16:
            x = np.frombuffer(data, dtype="<i2").astype(np.float64) / 2.0**15
        elif bits == 24:
            b = np.frombuffer(data, dtype=np.uint8).reshape(-1, 3).astype(np.int32)
            v = b[:, 0] | (b[:, 1] << 8) | (b[:, 2] << 16)
            v = np.where(v >= 1 << 23, v - (1 << 24), v)
            x = v.astype(np.float64) / 2.0**23
        elif bits == 32:
            x = np.frombuffer(data, dtype="<i4").astype(np.float64) / 2.0**31
        else:
            raise UnsupportedEncoding(f"{path}: {bits}-bit PCM")
    elif tag == _WAVE_FORMAT_IEEE_FLOAT:
        if bits != 32:
            raise UnsupportedEncoding(f"{path}: {bits}-bit float")
        x = np.clip(np.frombuffer(data, dtype="<f4").astype(np.float64), -1.0, 1.0)
        if not np.all(np.isfinite(x)):
            raise MalformedWav(f"{path}: non-finite float samples")
    else:
        raise UnsupportedEncoding(f"{path}: format tag {tag:#06x}")

    if channels == 2:
        x = x.reshape(-1, 2).mean(axis=1)
    return Waveform(x, rate)


def write_wav(path, w: Waveform, encoding: str = "pcm16"):
    """Write a mono waveform as 16-bit PCM (``pcm16``) or 32-bit float (``float32``)."""
    x = np.clip(np.asarray(w.samples, dtype=np.float64), -1.0, 1.0)
    if encoding == "pcm16":
        payload = np.round(x * 32767.0).astype("<i2").tobytes()
        tag, bits = _WAVE_FORMAT_PCM, 16
    elif encoding == "float32":
        payload = x.astype("<f4").tobytes()
        tag, bits = _WAVE_FORMAT_IEEE_FLOAT, 32
    else:
        raise ConfigError(f"unknown encoding {encoding!r}")
    block = bits // 8
    fmt = struct.pack("<HHIIHH", tag, 1, w.sample_rate, w.sample_rate * block, block, bits)
    body = b"WAVE" + b"fmt " + struct.pack("<I", len(fmt)) + fmt + b"data" + struct.pack("<I", len(payload)) + payload
    Path(path).write_bytes(b"RIFF" + struct.pack("<I", len(body)) + body)


def resample(w: Waveform, target_rate: int) -> Waveform:
    """Band-limited polyphase resampling to ``target_rate`` Hz."""
    target_rate = int(target_rate)
    if target_rate <= 0:
        raise ConfigError(f"target rate must be positive, got {target_rate}")
    if target_rate == w.sample_rate:
        return Waveform(w.samples.copy(), w.sample_rate)
    g = math.gcd(target_rate, w.sample_rate)
    up, down = target_rate // g, w.sample_rate // g
    y = signal.resample_poly(w.samples, up, down)
    return Waveform(np.clip(y, -1.0, 1.0), target_rate)


# ----------------------------------------------------------------------- framing


def frame_count(num_samples: int, hop: int = HOP) -> int:
    return -(-num_samples // hop)


def _frames(x: np.ndarray, frame_length: int, hop: int) -> np.ndarray:
    """Center-aligned frames, shape (ceil(len/hop), frame_length)."""
    n = len(x)
    if n == 0:
        raise ValueError("cannot frame an empty signal")
    t = frame_count(n, hop)
    left = frame_length // 2
    right = (t - 1) * hop + frame_length - left - n
    mode = "reflect" if n > 1 else "constant"
    padded = np.pad(x, (left, max(right, 0)), mode=mode)
    return np.lib.stride_tricks.sliding_window_view(padded, frame_length)[::hop][:t]


# ------------------------------------------------------------------------ mel


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_band_edges(n_mels: int, fmin: float, fmax: float) -> np.ndarray:
    """Hz positions of the ``n_mels + 2`` triangle vertices (lower, center, upper)."""
    return mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2))


def mel_filterbank(sample_rate: int, n_fft: int, n_mels: int, fmin: float, fmax: float) -> np.ndarray:
    """Triangular filters on the HTK mel scale, shape (n_mels, n_fft // 2 + 1), unit peak."""
    freqs = np.arange(n_fft // 2 + 1) * sample_rate / n_fft
    edges = mel_band_edges(n_mels, fmin, fmax)
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (freqs[None, :] - lo) / (mid - lo)
    falling = (hi - freqs[None, :]) / (hi - mid)
    return np.maximum(0.0, np.minimum(rising, falling))


def mel_spectrogram(
    w: Waveform,
    n_fft: int = 1024,
    hop: int = HOP,
    win_length: int = 1024,
    n_mels: int = 80,
    fmin: float = 0.0,
    fmax: float = 8000.0,
    floor: float = 1e-10,
) -> FeatureMatrix:
    """Log mel magnitude spectrogram: ``log(max(mel, floor))`` per frame and band."""
    nyquist = w.sample_rate / 2
    if fmax > nyquist:
        raise ConfigError(f"fmax {fmax} exceeds Nyquist {nyquist}")
    if not 0 <= fmin < fmax:
        raise ConfigError(f"need 0 <= fmin < fmax, got {fmin}, {fmax}")
    if n_mels < 1 or n_mels > n_fft // 2 + 1:
        raise ConfigError(f"n_mels {n_mels} out of range for n_fft {n_fft}")
    if win_length > n_fft or hop < 1:
        raise ConfigError("need win_length <= n_fft and hop >= 1")

    window = np.zeros(n_fft)
    offset = (n_fft - win_length) // 2
    window[offset:offset + win_length] = signal.get_window("hann", win_length, fftbins=True)

    frames = _frames(w.samples, n_fft, hop)
    mag = np.abs(np.fft.rfft(frames * window, axis=1))
    mel = mag @ mel_filterbank(w.sample_rate, n_fft, n_mels, fmin, fmax).T
    return FeatureMatrix(np.log(np.maximum(mel, floor)), w.sample_rate / hop, FeatureKind.MEL_SPECTROGRAM, hop)


def mel_cepstra(m: FeatureMatrix, n_coef: int = 20) -> FeatureMatrix:
    """Orthonormal DCT-II of each log-mel frame, truncated to ``n_coef`` (index 0 is energy)."""
    if m.kind != FeatureKind.MEL_SPECTROGRAM:
        raise ConfigError(f"mel_cepstra needs a mel spectrogram, got {m.kind.name}")
    if not 1 <= n_coef <= m.dim:
        raise ConfigError(f"n_coef {n_coef} must be in [1, {m.dim}]")
    c = sp_fft.dct(m.data, type=2, norm="ortho", axis=1)[:, :n_coef]
    return FeatureMatrix(c, m.frame_rate, FeatureKind.MEL_CEPSTRA, m.hop)


def inverse_mel_cepstra(c: FeatureMatrix, n_mels: int) -> np.ndarray:
    """Log-mel frames reconstructed from (possibly truncated) cepstra."""
    padded = np.zeros((c.num_frames, n_mels))
    padded[:, :c.dim] = c.data
    return sp_fft.idct(padded, type=2, norm="ortho", axis=1)


# ------------------------------------------------------------------------ pitch


def extract_f0(
    w: Waveform,
    hop: int = HOP,
    fmin: float = 50.0,
    fmax: float = 600.0,
    voicing_threshold: float = 0.8,
    frame_length: int = 1024,
) -> PitchTrack:
    """YIN-style pitch tracker: one estimate per hop, 0 Hz on unvoiced frames.

    A frame is voiced when its periodicity, ``1 - cmnd(lag)`` at the chosen
    lag, reaches ``voicing_threshold`` and the estimate falls inside
    ``[fmin, fmax]``.
    """
    sr = w.sample_rate
    if not 0 < fmin < fmax <= sr / 2:
        raise ConfigError(f"need 0 < fmin < fmax <= Nyquist, got {fmin}, {fmax}")
    tau_lo = max(2, int(math.floor(sr / fmax)))
    tau_hi = int(math.ceil(sr / fmin)) + 1
    win = frame_length - tau_hi
    if win < tau_hi:
        raise ConfigError(f"frame_length {frame_length} too short for fmin {fmin}")

    frames = _frames(w.samples, frame_length, hop)
    t = frames.shape[0]

    # difference function d(tau) = e0 + e_tau - 2 r(tau) over a fixed window
    sq = np.concatenate([np.zeros((t, 1)), np.cumsum(frames**2, axis=1)], axis=1)
    lags = np.arange(tau_hi + 1)
    e0 = sq[:, win:win + 1]
    e_tau = sq[:, lags + win] - sq[:, lags]
    nfft = sp_fft.next_fast_len(frame_length + win)
    spec = sp_fft.rfft(frames, nfft, axis=1)
    head = sp_fft.rfft(frames[:, :win], nfft, axis=1)
    r = sp_fft.irfft(spec * np.conj(head), nfft, axis=1)[:, :tau_hi + 1]
    d = np.maximum(e0 + e_tau - 2.0 * r, 0.0)

    csum = np.cumsum(d[:, 1:], axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        cmnd = np.where(csum > 0, d[:, 1:] * lags[1:] / csum, 1.0)
    cmnd = np.concatenate([np.ones((t, 1)), cmnd], axis=1)

    aperiodic_max = 1.0 - voicing_threshold
    silent = e0[:, 0] <= 1e-10 * win
    f0 = np.zeros(t)
    voiced = np.zeros(t, dtype=bool)
    for i in range(t):
        if silent[i]:
            continue
        row = cmnd[i]
        below = np.nonzero(row[tau_lo:tau_hi] < aperiodic_max)[0]
        if below.size == 0:
            continue
        tau = tau_lo + below[0]
        while tau + 1 < tau_hi and row[tau + 1] < row[tau]:
            tau += 1
        a, b, c = d[i, tau - 1], d[i, tau], d[i, tau + 1]
        denom = a - 2 * b + c
        shift = 0.5 * (a - c) / denom if denom > 0 else 0.0
        freq = sr / (tau + float(np.clip(shift, -0.5, 0.5)))
        if fmin <= freq <= fmax:
            f0[i] = freq
            voiced[i] = True
    return PitchTrack(f0, voiced, sr / hop, "yin", {"voicing_threshold": voicing_threshold, "fmin": fmin, "fmax": fmax})


# ------------------------------------------------------------------------ PPTF

_PPTF_MAGIC = b"PPTF"
_PPTF_VERSION = 1
_PPTF_HEADER = struct.Struct("<4sIIIfB")


def write_features(path, fm: FeatureMatrix):
    """Serialize to the PPTF binary layout (little-endian, f32 row-major payload)."""
    t, d = fm.data.shape
    header = _PPTF_HEADER.pack(_PPTF_MAGIC, _PPTF_VERSION, t, d, fm.frame_rate, int(fm.kind))
    Path(path).write_bytes(header + np.ascontiguousarray(fm.data, dtype="<f4").tobytes())


def read_features(path, sample_rate: int = SAMPLE_RATE) -> FeatureMatrix:
    """Load a PPTF file. The hop is not stored and is inferred from ``sample_rate``."""
    raw = Path(path).read_bytes()
    if len(raw) < _PPTF_HEADER.size:
        raise MalformedFile(f"{path}: truncated header")
    magic, version, t, d, frame_rate, kind = _PPTF_HEADER.unpack_from(raw)
    if magic != _PPTF_MAGIC:
        raise MalformedFile(f"{path}: bad magic {magic!r}")
    if version != _PPTF_VERSION:
        raise VersionMismatch(f"{path}: version {version}, expected {_PPTF_VERSION}")
    if kind not in FeatureKind._value2member_map_:
        raise MalformedFile(f"{path}: unknown feature kind {kind}")
    payload = raw[_PPTF_HEADER.size:]
    if len(payload) != 4 * t * d:
        raise MalformedFile(f"{path}: payload has {len(payload)} bytes, header implies {4 * t * d}")
    if not frame_rate > 0:
        raise MalformedFile(f"{path}: frame rate {frame_rate}")
    data = np.frombuffer(payload, dtype="<f4").reshape(t, d).astype(np.float64)
    return FeatureMatrix(data, float(frame_rate), FeatureKind(kind), int(round(sample_rate / frame_rate)))
