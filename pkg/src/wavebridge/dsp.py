"""Degradation pipeline, STFT/iSTFT and WAV input/output."""
from __future__ import annotations

import csv
import enum
import math
import struct
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np
from scipy import signal

from .autodiff import frame_index
from .bridge import WaveformPair


class WavError(ValueError):
    pass


@dataclass
class AudioBuffer:
    samples: np.ndarray
    rate: int

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise ValueError("audio buffers are mono")
        if not self.rate > 0:
            raise ValueError(f"sample rate must be positive, got {self.rate}")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("audio samples must be finite")

    @property
    def duration(self) -> float:
        return self.samples.size / self.rate


# degradation

class FilterFamily(str, enum.Enum):
    BUTTERWORTH = "butterworth"
    CHEBYSHEV1 = "chebyshev1"
    BRICKWALL = "brickwall-fft"


CHEBY_RIPPLE_DB = 0.5
FILTER_ORDERS = (2, 4, 6, 8, 10)


@dataclass(frozen=True)
class DegradationSpec:
    family: FilterFamily
    order: int
    input_rate: int

    def __post_init__(self):
        object.__setattr__(self, "family", FilterFamily(self.family))
        if self.family is not FilterFamily.BRICKWALL and self.order not in FILTER_ORDERS:
            raise ValueError(f"filter order must be one of {FILTER_ORDERS}, got {self.order}")
        if not self.input_rate > 0:
            raise ValueError("input rate must be positive")

    @property
    def cutoff_hz(self) -> float:
        return self.input_rate / 2


def random_spec(rng: np.random.Generator, min_rate: float = 6000, max_rate: float = 48000,
                families: Sequence[FilterFamily] = tuple(FilterFamily)) -> DegradationSpec:
    """Training-time degradation: uniform input rate (on a 100 Hz lattice), family and even order."""
    rate = int(round(rng.uniform(min_rate, max_rate) / 100.0)) * 100
    family = FilterFamily(families[rng.integers(len(families))])
    order = int(rng.choice(FILTER_ORDERS))
    return DegradationSpec(family, order, rate)


def brickwall(x: np.ndarray, cutoff_hz: float, rate: float) -> np.ndarray:
    """Zero-phase ideal low-pass: zero every FFT bin at or above the cutoff."""
    spec = np.fft.rfft(x)
    freqs = np.fft.rfftfreq(x.size, 1.0 / rate)
    spec[freqs >= cutoff_hz] = 0
    return np.fft.irfft(spec, n=x.size)


def lowpass(x: np.ndarray, spec: DegradationSpec, rate: float) -> np.ndarray:
    if spec.cutoff_hz >= rate / 2:
        return np.array(x, dtype=float)
    if spec.family is FilterFamily.BRICKWALL:
        return brickwall(x, spec.cutoff_hz, rate)
    if spec.family is FilterFamily.BUTTERWORTH:
        sos = signal.butter(spec.order, spec.cutoff_hz, fs=rate, output="sos")
    else:
        sos = signal.cheby1(spec.order, CHEBY_RIPPLE_DB, spec.cutoff_hz, fs=rate, output="sos")
    # causal on purpose: the degradation should carry the filter's phase response
    return signal.sosfilt(sos, x)


def resample_round_trip(x: np.ndarray, input_rate: int, target_rate: int) -> np.ndarray:
    """Decimate to ``input_rate`` and come back with polyphase filters; keeps the length."""
    if input_rate == target_rate:
        return np.array(x, dtype=float)
    g = math.gcd(int(input_rate), int(target_rate))
    up, down = int(input_rate) // g, int(target_rate) // g
    low = signal.resample_poly(x, up, down)
    back = signal.resample_poly(low, down, up)
    out = np.zeros_like(x, dtype=float)
    n = min(back.size, x.size)
    out[:n] = back[:n]
    return out


def degrade(x_hr: AudioBuffer, spec: DegradationSpec) -> WaveformPair:
    """Low-pass at the input Nyquist, decimate and upsample back to the target rate."""
    if spec.input_rate > x_hr.rate:
        raise ValueError(f"input rate {spec.input_rate} exceeds target rate {x_hr.rate}")
    filtered = lowpass(x_hr.samples, spec, x_hr.rate)
    x_lr = resample_round_trip(filtered, spec.input_rate, x_hr.rate)
    if spec.family is FilterFamily.BRICKWALL and spec.cutoff_hz < x_hr.rate / 2:
        # the polyphase interpolator's transition band leaks just above the cutoff
        x_lr = brickwall(x_lr, spec.cutoff_hz, x_hr.rate)
    return WaveformPair(x_hr.samples, x_lr, target_rate=x_hr.rate, input_rate=spec.input_rate,
                        cutoff_hz=spec.cutoff_hz)


@dataclass
class DegradationRecord:
    path: str
    reference: str
    input_rate: int
    family: str
    order: int
    seed: int


MANIFEST_FIELDS = ("path", "reference", "input_rate", "family", "order", "seed")


def write_manifest(path, records: Sequence[DegradationRecord]):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=MANIFEST_FIELDS)
        w.writeheader()
        for r in records:
            w.writerow(asdict(r))


def read_manifest(path) -> List[DegradationRecord]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != MANIFEST_FIELDS:
            raise ValueError(f"manifest header must be {','.join(MANIFEST_FIELDS)}")
        return [DegradationRecord(r["path"], r["reference"], int(r["input_rate"]), r["family"], int(r["order"]),
                                  int(r["seed"])) for r in reader]


# short-time Fourier transform

@dataclass(frozen=True)
class STFTConfig:
    fft_size: int = 2048
    hop: Optional[int] = None

    def __post_init__(self):
        if self.hop is None:
            object.__setattr__(self, "hop", self.fft_size // 4)
        if self.fft_size < 2 or self.hop < 1 or self.fft_size % self.hop:
            raise ValueError(f"hop {self.hop} must divide fft size {self.fft_size}")

    @property
    def window(self) -> np.ndarray:
        return signal.get_window("hann", self.fft_size)

    @property
    def bins(self) -> int:
        return self.fft_size // 2 + 1


def stft(x, cfg: STFTConfig = STFTConfig()) -> np.ndarray:
    """Centered (reflect-padded) Hann STFT; returns complex (frames, bins)."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise ValueError("stft expects a 1-D signal")
    if x.size < cfg.fft_size:
        raise ValueError(f"signal of {x.size} samples is shorter than fft size {cfg.fft_size}")
    return np.fft.rfft(x[frame_index(x.size, cfg.fft_size, cfg.hop)] * cfg.window, axis=-1)


def istft(spec: np.ndarray, cfg: STFTConfig = STFTConfig(), length: Optional[int] = None) -> np.ndarray:
    """Weighted overlap-add inverse of ``stft``."""
    spec = np.asarray(spec)
    if spec.ndim != 2 or spec.shape[1] != cfg.bins:
        raise ValueError(f"expected (frames, {cfg.bins}) spectrogram, got {spec.shape}")
    n, hop, pad = cfg.fft_size, cfg.hop, cfg.fft_size // 2
    frames = np.fft.irfft(spec, n=n, axis=-1) * cfg.window
    total = n + hop * (spec.shape[0] - 1)
    out = np.zeros(total)
    norm = np.zeros(total)
    w2 = cfg.window**2
    for i, f in enumerate(frames):
        out[i * hop:i * hop + n] += f
        norm[i * hop:i * hop + n] += w2
    out = np.divide(out, norm, out=np.zeros_like(out), where=norm > 1e-10)
    if length is None:
        length = total - 2 * pad
    out = out[pad:pad + length]
    if out.size < length:
        out = np.pad(out, (0, length - out.size))
    return out


# WAV files

_FORMAT_PCM = 1
_FORMAT_FLOAT = 3
_FORMAT_EXTENSIBLE = 0xFFFE
ENCODINGS = {"pcm16": (_FORMAT_PCM, 16), "pcm24": (_FORMAT_PCM, 24), "float32": (_FORMAT_FLOAT, 32)}


def _decode(data: bytes, fmt: int, bits: int, channels: int) -> np.ndarray:
    if fmt == _FORMAT_FLOAT and bits == 32:
        arr = np.frombuffer(data, dtype="<f4").astype(np.float64)
    elif fmt == _FORMAT_PCM and bits == 16:
        arr = np.frombuffer(data, dtype="<i2") / 32768.0
    elif fmt == _FORMAT_PCM and bits == 24:
        raw = np.frombuffer(data, dtype=np.uint8).reshape(-1, 3).astype(np.int32)
        ints = raw[:, 0] | (raw[:, 1] << 8) | (raw[:, 2] << 16)
        ints = np.where(ints >= 1 << 23, ints - (1 << 24), ints)
        arr = ints / float(1 << 23)
    else:
        raise WavError(f"unsupported WAV encoding: format tag {fmt}, {bits} bits")
    if arr.size % channels:
        raise WavError("sample data does not divide into whole frames")
    return arr.reshape(-1, channels)[:, 0]


def read_wav(path) -> AudioBuffer:
    """Read a RIFF/WAVE file (PCM16, PCM24 or float32); multichannel input keeps channel 0."""
    raw = Path(path).read_bytes()
    if len(raw) < 12 or raw[:4] != b"RIFF" or raw[8:12] != b"WAVE":
        raise WavError(f"{path}: not a RIFF/WAVE file")
    pos, fmt_chunk, data = 12, None, None
    while pos + 8 <= len(raw):
        cid, size = raw[pos:pos + 4], struct.unpack("<I", raw[pos + 4:pos + 8])[0]
        body = raw[pos + 8:pos + 8 + size]
        if len(body) < size:
            raise WavError(f"{path}: chunk {cid!r} truncated ({len(body)} of {size} bytes)")
        if cid == b"fmt ":
            fmt_chunk = body
        elif cid == b"data":
            data = body
        pos += 8 + size + (size & 1)
    if fmt_chunk is None or len(fmt_chunk) < 16:
        raise WavError(f"{path}: missing or malformed fmt chunk")
    if data is None:
        raise WavError(f"{path}: missing data chunk")
    fmt, channels, rate, _, block, bits = struct.unpack("<HHIIHH", fmt_chunk[:16])
    if fmt == _FORMAT_EXTENSIBLE and len(fmt_chunk) >= 26:
        fmt = struct.unpack("<H", fmt_chunk[24:26])[0]
    if channels < 1 or block != channels * bits // 8:
        raise WavError(f"{path}: inconsistent fmt chunk (channels={channels}, block={block}, bits={bits})")
    return AudioBuffer(_decode(data, fmt, bits, channels), rate)


def write_wav(path, audio: AudioBuffer, encoding: str = "float32"):
    if encoding not in ENCODINGS:
        raise WavError(f"unknown encoding {encoding!r}; choose from {sorted(ENCODINGS)}")
    fmt, bits = ENCODINGS[encoding]
    x = audio.samples
    if fmt == _FORMAT_FLOAT:
        payload = x.astype("<f4").tobytes()
    else:
        full = 1 << (bits - 1)
        ints = np.clip(np.round(x * full), -full, full - 1).astype(np.int32)
        if bits == 16:
            payload = ints.astype("<i2").tobytes()
        else:
            u = ints & 0xFFFFFF
            payload = np.stack([u & 0xFF, (u >> 8) & 0xFF, (u >> 16) & 0xFF], axis=1).astype(np.uint8).tobytes()
    block = bits // 8
    fmt_chunk = struct.pack("<HHIIHH", fmt, 1, int(audio.rate), int(audio.rate) * block, block, bits)
    body = b"WAVE" + b"fmt " + struct.pack("<I", len(fmt_chunk)) + fmt_chunk
    body += b"data" + struct.pack("<I", len(payload)) + payload + (b"\x00" if len(payload) & 1 else b"")
    Path(path).write_bytes(b"RIFF" + struct.pack("<I", len(body)) + body)
