"""Core IQ types, the `.iq` file format, windowing, FFT features, and power/PSD measurement.

The `.iq` format is headerless interleaved little-endian float32 (I then Q);
sample rate and center frequency travel in a JSON sidecar manifest.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np

from .errors import (
    BufferTooShort,
    EmptyBuffer,
    InvalidParams,
    IoFailure,
    MalformedFile,
    NonFiniteSample,
    ZeroWindow,
)

WINDOW_SIZE = 1024
PSD_FLOOR_DB = -120.0


class Domain(Enum):
    TIME = "time"
    FREQUENCY = "frequency"


@dataclass(frozen=True)
class IQBuffer:
    """A stream of complex baseband samples with rate/frequency metadata."""

    samples: np.ndarray
    sample_rate_hz: float
    center_freq_hz: float = 0.0

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.complex64)
        object.__setattr__(self, "samples", samples)
        if not (math.isfinite(self.sample_rate_hz) and self.sample_rate_hz > 0):
            raise InvalidParams(f"sample_rate_hz must be finite and > 0, got {self.sample_rate_hz}")
        if self.center_freq_hz < 0 or not math.isfinite(self.center_freq_hz):
            raise InvalidParams(f"center_freq_hz must be finite and >= 0, got {self.center_freq_hz}")
        if samples.size and not np.isfinite(samples.view(np.float32)).all():
            raise NonFiniteSample("buffer contains NaN or Inf samples")

    def __len__(self) -> int:
        return int(self.samples.size)

    @property
    def duration_s(self) -> float:
        return len(self) / self.sample_rate_hz


@dataclass(frozen=True)
class Window1024:
    """Exactly 1024 complex samples, tagged with the domain they live in."""

    values: np.ndarray
    domain: Domain

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.complex64)
        object.__setattr__(self, "values", values)
        if values.shape != (WINDOW_SIZE,):
            raise InvalidParams(f"window must hold exactly {WINDOW_SIZE} samples, got {values.shape}")


def load_iq_file(path, sample_rate_hz: float, center_freq_hz: float = 0.0) -> IQBuffer:
    """Decode interleaved f32le I,Q from `path`; the rate comes from the caller, not the file."""
    try:
        raw = np.fromfile(path, dtype="<f4")
    except OSError as exc:
        raise MalformedFile(f"cannot read {path}: {exc}") from exc
    if raw.size % 2 != 0:
        raise MalformedFile(f"{path}: odd float count {raw.size}, not interleaved I,Q pairs")
    if raw.size and not np.isfinite(raw).all():
        raise NonFiniteSample(f"{path}: NaN or Inf in file")
    samples = raw[0::2].astype(np.float32) + 1j * raw[1::2].astype(np.float32)
    return IQBuffer(samples.astype(np.complex64), sample_rate_hz, center_freq_hz)


def save_iq_file(buf: IQBuffer, path) -> None:
    """Write interleaved f32le I,Q; 8 bytes per complex sample, no header."""
    interleaved = np.empty(2 * len(buf), dtype="<f4")
    interleaved[0::2] = buf.samples.real
    interleaved[1::2] = buf.samples.imag
    try:
        with open(path, "wb") as fh:
            interleaved.tofile(fh)
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def write_manifest(path, buf: IQBuffer, description: str = "") -> None:
    """Write the JSON sidecar carrying the metadata the `.iq` format omits."""
    meta = {
        "sample_rate_hz": buf.sample_rate_hz,
        "center_freq_hz": buf.center_freq_hz,
        "description": description,
    }
    Path(path).write_text(json.dumps(meta, indent=2) + "\n")


def read_manifest(path) -> dict:
    meta = json.loads(Path(path).read_text())
    for key in ("sample_rate_hz", "center_freq_hz", "description"):
        if key not in meta:
            raise MalformedFile(f"{path}: manifest missing field {key!r}")
    return meta


def segment_windows(buf: IQBuffer, stride: int) -> list[Window1024]:
    """Cut time-domain windows of 1024 at offsets 0, stride, 2*stride, ...; trailing partials drop."""
    if stride < 1:
        raise InvalidParams(f"stride must be >= 1, got {stride}")
    n = len(buf)
    if n < WINDOW_SIZE:
        return []
    count = (n - WINDOW_SIZE) // stride + 1
    return [
        Window1024(buf.samples[i * stride : i * stride + WINDOW_SIZE], Domain.TIME)
        for i in range(count)
    ]


def to_frequency(w: Window1024) -> Window1024:
    """1024-point DFT, DC-centered, scaled so the output window has mean power 1."""
    if w.domain is not Domain.TIME:
        raise InvalidParams("to_frequency expects a time-domain window")
    spectrum = np.fft.fftshift(np.fft.fft(w.values.astype(np.complex128)))
    mean_power = float(np.mean(np.abs(spectrum) ** 2))
    if mean_power == 0.0:
        raise ZeroWindow("all-zero window cannot be power-normalized")
    spectrum /= math.sqrt(mean_power)
    return Window1024(spectrum.astype(np.complex64), Domain.FREQUENCY)


def measure_power(buf: IQBuffer) -> float:
    """Mean |x|^2 over the buffer."""
    if len(buf) == 0:
        raise EmptyBuffer("cannot measure power of an empty buffer")
    samples = buf.samples.astype(np.complex128)
    return float(np.mean(samples.real**2 + samples.imag**2))


def psd_estimate(buf: IQBuffer, nfft: int) -> np.ndarray:
    """Welch-style averaged periodogram in dB relative to the max bin, DC-centered.

    Non-overlapping Hann-windowed segments; the floor is clamped at
    PSD_FLOOR_DB so a zero buffer yields a plottable flat floor.
    """
    if nfft < 1:
        raise InvalidParams(f"nfft must be >= 1, got {nfft}")
    n = len(buf)
    if n < nfft:
        raise BufferTooShort(f"buffer of {n} samples is shorter than nfft={nfft}")
    nseg = n // nfft
    x = buf.samples[: nseg * nfft].astype(np.complex128).reshape(nseg, nfft)
    window = np.hanning(nfft)
    spectra = np.fft.fftshift(np.fft.fft(x * window, axis=1), axes=1)
    pxx = np.mean(np.abs(spectra) ** 2, axis=0)
    peak = pxx.max()
    if peak == 0.0:
        return np.full(nfft, PSD_FLOOR_DB)
    with np.errstate(divide="ignore"):
        db = 10.0 * np.log10(pxx / peak)
    return np.maximum(db, PSD_FLOOR_DB)
