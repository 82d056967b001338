"""FIR channel emulation, matched-filter correlation, and the streaming block pipe."""

from __future__ import annotations

import queue
import threading

import numpy as np
from scipy.signal import fftconvolve

from .errors import (
    DelayOverflow,
    InvalidParams,
    TemplateTooLong,
    TimelineTooShort,
)
from .iqcore import IQBuffer
from .scenario import TapSet
from .waveforms import gen_noise

STREAM_BLOCK_SIZE = 10240  # 10 windows per push


def fir_apply(buf: IQBuffer, taps: TapSet) -> IQBuffer:
    """Apply y[n] = sum_k g_k * x[n - round(d_k*fs)] with zero prefix; length preserved."""
    n = len(buf)
    if n == 0:
        return buf
    offsets = np.rint(taps.delays_s * buf.sample_rate_hz).astype(int)
    if (offsets >= n).any():
        raise DelayOverflow(
            f"rounded tap delay {offsets.max()} samples >= buffer length {n}"
        )
    x = buf.samples.astype(np.complex128)
    y = np.zeros(n, dtype=np.complex128)
    for off, gain in zip(offsets, taps.gains):
        if off == 0:
            y += gain * x
        else:
            y[off:] += gain * x[:-off]
    return IQBuffer(y.astype(np.complex64), buf.sample_rate_hz, buf.center_freq_hz)


def emulate_link(
    tx: IQBuffer,
    taps_timeline: list[TapSet],
    epoch_s: float,
    noise_power: float = 0.0,
    rx_gain_db: float = 0.0,
    seed: int = 0,
) -> IQBuffer:
    """Filter each epoch_s block with its epoch's taps, add AWGN, apply receive gain."""
    if epoch_s <= 0:
        raise InvalidParams(f"epoch_s must be > 0, got {epoch_s}")
    n = len(tx)
    block = max(int(round(epoch_s * tx.sample_rate_hz)), 1)
    n_epochs = -(-n // block)
    if len(taps_timeline) < n_epochs:
        raise TimelineTooShort(
            f"timeline of {len(taps_timeline)} tap sets covers fewer than {n_epochs} epochs"
        )
    out = np.empty(n, dtype=np.complex128)
    for e in range(n_epochs):
        lo, hi = e * block, min((e + 1) * block, n)
        chunk = IQBuffer(tx.samples[lo:hi], tx.sample_rate_hz)
        out[lo:hi] = fir_apply(chunk, taps_timeline[e]).samples
    if noise_power > 0:
        out += gen_noise(n, noise_power, seed, tx.sample_rate_hz).samples.astype(np.complex128)
    out *= 10.0 ** (rx_gain_db / 20.0)
    return IQBuffer(out.astype(np.complex64), tx.sample_rate_hz, tx.center_freq_hz)


def correlate_template(rx: IQBuffer, template: IQBuffer) -> np.ndarray:
    """Normalized cross-correlation magnitude per lag, in [0, 1].

    Each lag is |<template, rx[lag:lag+M]>| / sqrt(E_template * E_window),
    so a perfectly aligned copy scores 1 regardless of gain or phase.
    """
    n, m = len(rx), len(template)
    if m == 0:
        raise InvalidParams("template is empty")
    if m > n:
        raise TemplateTooLong(f"template of {m} samples exceeds rx of {n}")
    t = template.samples.astype(np.complex128)
    x = rx.samples.astype(np.complex128)
    e_t = float(np.sum(np.abs(t) ** 2))
    if e_t == 0.0:
        raise InvalidParams("template has zero energy")
    num = fftconvolve(x, np.conj(t[::-1]), mode="valid")
    csum = np.concatenate([[0.0], np.cumsum(np.abs(x) ** 2)])
    e_win = np.maximum(csum[m:] - csum[:-m], 0.0)
    denom = np.sqrt(e_t * e_win)
    out = np.zeros(num.size)
    np.divide(np.abs(num), denom, out=out, where=denom > 0)
    return out


def matched_filter_detect(rx: IQBuffer, template: IQBuffer, threshold: float) -> tuple[bool, float]:
    """True iff the peak normalized correlation reaches the threshold."""
    if not 0 < threshold < 1:
        raise InvalidParams(f"threshold must lie in (0, 1), got {threshold}")
    peak = float(correlate_template(rx, template).max())
    return peak >= threshold, peak


class BlockPipe:
    """Single-producer single-consumer stream of fixed-size IQ blocks with backpressure.

    push() blocks while the pipe holds `capacity` blocks; pull() blocks until a
    block or end-of-stream arrives and returns None once the producer has
    closed and the queue is drained. The final push before close() may be
    shorter than block_size.
    """

    _SENTINEL = object()

    def __init__(self, block_size: int = STREAM_BLOCK_SIZE, capacity: int = 4):
        if block_size < 1 or capacity < 1:
            raise InvalidParams("block_size and capacity must be >= 1")
        self.block_size = block_size
        self._queue: queue.Queue = queue.Queue(maxsize=capacity)
        self._closed = threading.Event()

    def push(self, block: np.ndarray) -> None:
        if self._closed.is_set():
            raise InvalidParams("push after close")
        block = np.asarray(block, dtype=np.complex64)
        if block.size > self.block_size:
            raise InvalidParams(
                f"block of {block.size} samples exceeds block_size {self.block_size}"
            )
        self._queue.put(block)

    def close(self) -> None:
        if not self._closed.is_set():
            self._closed.set()
            self._queue.put(self._SENTINEL)

    def pull(self):
        item = self._queue.get()
        if item is self._SENTINEL:
            return None
        return item

    def __iter__(self):
        while True:
            block = self.pull()
            if block is None:
                return
            yield block


def stream_blocks(samples: np.ndarray, pipe: BlockPipe) -> None:
    """Producer loop: push `samples` through the pipe in block_size chunks, then close."""
    try:
        for lo in range(0, samples.size, pipe.block_size):
            pipe.push(samples[lo : lo + pipe.block_size])
    finally:
        pipe.close()
