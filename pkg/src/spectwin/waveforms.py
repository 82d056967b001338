"""Waveform synthesis: first-quadrant pulsed radar, OFDM cellular proxy, calibrated noise, SNR/SINR mixing."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import EmptyBuffer, InfeasibleSINR, InvalidParams, LengthMismatch
from .iqcore import IQBuffer, measure_power


@dataclass(frozen=True)
class RadarParams:
    """Pulsed radar generator parameters.

    The waveform is a train of raised-cosine-edged pulses at a nominal
    repetition interval with per-pulse timing jitter. Inside a pulse each
    sample carries a chip drawn from {0, A, jA} on top of small constant
    I/Q offsets, so every sample satisfies Re >= i_offset and
    Im >= q_offset regardless of amplitude: the constellation never
    leaves the first quadrant.
    """

    sample_rate_hz: float = 6e6
    total_samples: int = 106657
    pri_s: float = 1e-3
    pulse_width_s: float = 600e-6
    edge_s: float = 5e-6
    jitter_s: float = 150e-6
    i_offset: float = 0.05
    q_offset: float = 0.05
    amplitude: float = 1.0

    def __post_init__(self):
        if self.sample_rate_hz <= 0 or self.total_samples < 0:
            raise InvalidParams("sample_rate_hz must be > 0 and total_samples >= 0")
        if not 0 < self.pulse_width_s < self.pri_s:
            raise InvalidParams("require 0 < pulse_width_s < pri_s")
        if self.edge_s < 0 or 2 * self.edge_s > self.pulse_width_s:
            raise InvalidParams("raised-cosine edges must fit inside the pulse")
        if self.jitter_s < 0 or 2 * self.jitter_s > self.pri_s - self.pulse_width_s:
            raise InvalidParams("jitter must keep consecutive pulses disjoint")
        if self.i_offset <= 0 or self.q_offset <= 0:
            raise InvalidParams("I/Q offsets must be > 0")
        if self.amplitude < 0:
            raise InvalidParams("amplitude must be >= 0")

    @property
    def duration_s(self) -> float:
        return self.total_samples / self.sample_rate_hz


@dataclass(frozen=True)
class CellularParams:
    """OFDM cellular proxy parameters.

    occupied_fraction is the fraction of the digital bandwidth
    (sample_rate_hz) covered by active subcarriers, centered on DC with
    the DC bin nulled. bandwidth_hz is the nominal RF channel bandwidth
    carried as metadata.
    """

    bandwidth_hz: float = 10e6
    num_subcarriers: int = 1024
    cp_len: int = 72
    occupied_fraction: float = 0.5
    sample_rate_hz: float = 20e6

    def __post_init__(self):
        if self.bandwidth_hz <= 0 or self.sample_rate_hz <= 0:
            raise InvalidParams("bandwidths must be > 0")
        if self.num_subcarriers < 8:
            raise InvalidParams("num_subcarriers must be >= 8")
        if self.cp_len < 0:
            raise InvalidParams("cp_len must be >= 0")
        if not 0 < self.occupied_fraction <= 1:
            raise InvalidParams("occupied_fraction must be in (0, 1]")

    @property
    def symbol_len(self) -> int:
        return self.num_subcarriers + self.cp_len


@dataclass(frozen=True)
class MixMetadata:
    signal_scale: float
    interferer_scale: float
    realized_snr_db: float
    realized_sinr_db: float


def _pulse_envelope(width: int, edge: int) -> np.ndarray:
    env = np.ones(width)
    if edge > 0:
        ramp = 0.5 * (1.0 - np.cos(np.pi * (np.arange(edge) + 0.5) / edge))
        env[:edge] = ramp
        env[width - edge :] = ramp[::-1]
    return env


def gen_radar(p: RadarParams, seed: int = 0) -> IQBuffer:
    """Synthesize the pulsed first-quadrant radar waveform; deterministic per seed."""
    rng = np.random.default_rng(seed)
    n = p.total_samples
    fs = p.sample_rate_hz

    env = np.zeros(n)
    width = max(int(round(p.pulse_width_s * fs)), 1)
    edge = int(round(p.edge_s * fs))
    shape = _pulse_envelope(width, min(edge, width // 2))
    num_pulses = int(p.duration_s / p.pri_s) + 2
    jitters = rng.uniform(-p.jitter_s, p.jitter_s, num_pulses)
    for k in range(num_pulses):
        start = int(round((k * p.pri_s + jitters[k]) * fs))
        lo, hi = max(start, 0), min(start + width, n)
        if hi > lo:
            env[lo:hi] = shape[lo - start : hi - start]

    draws = rng.random(n)
    chips = np.where(draws < 0.5, 0.0, np.where(draws < 0.75, 1.0, 1.0j)) * p.amplitude
    samples = (p.i_offset + 1j * p.q_offset) + env * chips
    return IQBuffer(samples.astype(np.complex64), fs)


# Raised-cosine taper applied to each OFDM symbol block edge to keep
# out-of-band leakage below the guard-band requirement.
_OFDM_TAPER = 32


def gen_cellular(p: CellularParams, num_symbols: int, seed: int = 0) -> IQBuffer:
    """Random-QPSK OFDM symbol stream with cyclic prefixes, normalized to mean power 1."""
    if num_symbols < 1:
        raise InvalidParams(f"num_symbols must be >= 1, got {num_symbols}")
    rng = np.random.default_rng(seed)
    n_sc = p.num_subcarriers
    occupied = max(int(round(p.occupied_fraction * n_sc)), 2)
    occupied = min(occupied, n_sc - 1)
    lower = occupied // 2
    upper = occupied - lower
    bins = np.array(list(range(-lower, 0)) + list(range(1, upper + 1))) % n_sc

    qpsk_alphabet = np.array([1 + 1j, 1 - 1j, -1 + 1j, -1 - 1j]) / math.sqrt(2)
    taper = min(_OFDM_TAPER, (n_sc + p.cp_len) // 4)
    ramp = 0.5 * (1.0 - np.cos(np.pi * (np.arange(taper) + 0.5) / taper)) if taper else None

    blocks = []
    for _ in range(num_symbols):
        grid = np.zeros(n_sc, dtype=np.complex128)
        grid[bins] = qpsk_alphabet[rng.integers(0, 4, occupied)]
        sym = np.fft.ifft(grid) * math.sqrt(n_sc)
        block = np.concatenate([sym[n_sc - p.cp_len :], sym]) if p.cp_len else sym
        if taper:
            block = block.copy()
            block[:taper] *= ramp
            block[-taper:] *= ramp[::-1]
        blocks.append(block)
    stream = np.concatenate(blocks)
    stream /= math.sqrt(float(np.mean(np.abs(stream) ** 2)))
    return IQBuffer(stream.astype(np.complex64), p.sample_rate_hz)


def gen_noise(n: int, power: float, seed: int = 0, sample_rate_hz: float = 6e6) -> IQBuffer:
    """Circularly-symmetric complex Gaussian noise with per-sample variance `power`."""
    if n < 1:
        raise InvalidParams(f"n must be >= 1, got {n}")
    if not (math.isfinite(power) and power > 0):
        raise InvalidParams(f"power must be finite and > 0, got {power}")
    rng = np.random.default_rng(seed)
    unit = (rng.standard_normal(n) + 1j * rng.standard_normal(n)) / math.sqrt(2)
    return IQBuffer((unit * math.sqrt(power)).astype(np.complex64), sample_rate_hz)


def _extend_cyclic(x: np.ndarray, n: int) -> np.ndarray:
    if x.size == 0:
        raise LengthMismatch("cannot cyclically extend an empty interferer")
    reps = -(-n // x.size)
    return np.tile(x, reps)[:n]


def mix_at_snr(
    signal: IQBuffer,
    interferer: IQBuffer | None,
    snr_db: float,
    sinr_db: float | None = None,
    seed: int = 0,
) -> tuple[IQBuffer, MixMetadata]:
    """Combine signal, optional interferer, and unit-power noise at requested SNR/SINR.

    Noise power is fixed at (measured) unit power; the signal is scaled by `a`
    so 10*log10(a^2*P_sig/P_noise) = snr_db, and the interferer by `b` so the
    requested SINR holds. With sinr_db=None the interferer enters at its own
    power (b=1) and the realized SINR is reported in the metadata.
    """
    if len(signal) == 0:
        raise EmptyBuffer("mix_at_snr needs a nonempty signal")
    if interferer is not None and interferer.sample_rate_hz != signal.sample_rate_hz:
        raise InvalidParams("signal and interferer must share sample_rate_hz")

    n = len(signal)
    noise = gen_noise(n, 1.0, seed, signal.sample_rate_hz).samples.astype(np.complex128)
    p_noise = float(np.mean(np.abs(noise) ** 2))
    sig = signal.samples.astype(np.complex128)
    p_sig = measure_power(signal)

    a = math.sqrt(p_noise * 10.0 ** (snr_db / 10.0) / p_sig)

    if interferer is None:
        if sinr_db is not None and not math.isclose(sinr_db, snr_db, abs_tol=1e-9):
            raise InfeasibleSINR("without an interferer the SINR equals the SNR")
        b = 0.0
        intf = np.zeros(n, dtype=np.complex128)
        p_int = 0.0
    else:
        intf = _extend_cyclic(interferer.samples.astype(np.complex128), n)
        p_int = float(np.mean(np.abs(intf) ** 2))
        if p_int == 0.0:
            raise LengthMismatch("interferer has zero power")
        if sinr_db is None:
            b = 1.0
        else:
            b_sq = p_noise * (10.0 ** ((snr_db - sinr_db) / 10.0) - 1.0) / p_int
            if b_sq < 0:
                raise InfeasibleSINR(
                    f"requested SINR {sinr_db} dB exceeds SNR {snr_db} dB"
                )
            b = math.sqrt(b_sq)

    out = a * sig + b * intf + noise
    realized_snr = 10.0 * math.log10(a * a * p_sig / p_noise)
    realized_sinr = 10.0 * math.log10(a * a * p_sig / (b * b * p_int + p_noise))
    meta = MixMetadata(a, b, realized_snr, realized_sinr)
    return IQBuffer(out.astype(np.complex64), signal.sample_rate_hz), meta
