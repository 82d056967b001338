"""BS vacate/resume state machine, KPI proxy, and the end-to-end model-time experiment loop."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from .channel import fir_apply, matched_filter_detect
from .detector import (
    DetectionVerdict,
    ModelWeights,
    VoteState,
    forward,
    probs_to_bits,
    vote_step,
)
from .errors import IllegalTransition, InvalidParams
from .iqcore import WINDOW_SIZE, Domain, IQBuffer, Window1024, to_frequency
from .scenario import ScenarioSpec, build_scenario_taps, path_loss_db, sample_positions
from .waveforms import CellularParams, RadarParams, gen_cellular, gen_radar


class BSMode(Enum):
    TRANSMITTING = "Transmitting"
    VACATED = "Vacated"
    POWERING_UP = "PoweringUp"


@dataclass(frozen=True)
class BSState:
    mode: BSMode = BSMode.TRANSMITTING
    since_s: float = 0.0
    clear_count: int = 0


@dataclass(frozen=True)
class Event:
    t_s: float
    name: str
    payload: dict = field(default_factory=dict)


class EventLog:
    """Ordered event records with a nondecreasing-timestamp invariant."""

    def __init__(self):
        self.events: list[Event] = []

    def emit(self, t_s: float, name: str, **payload) -> None:
        if self.events and t_s < self.events[-1].t_s - 1e-9:
            raise IllegalTransition(
                f"event {name} at t={t_s} precedes last event at {self.events[-1].t_s}"
            )
        self.events.append(Event(t_s, name, payload))

    def first(self, name: str) -> Event | None:
        return next((e for e in self.events if e.name == name), None)

    def to_jsonl(self) -> str:
        return "".join(
            json.dumps({"t_s": e.t_s, "event": e.name, "payload": e.payload}) + "\n"
            for e in self.events
        )


@dataclass(frozen=True)
class ControlConfig:
    clear_streak: int = 5
    powerup_delay_s: float = 10.0
    ue_reconnect_delay_s: float = 10.0


def step_state(state: BSState, verdict: DetectionVerdict | None, t_s: float,
               config: ControlConfig = ControlConfig()) -> tuple[BSState, list[Event]]:
    """Advance the vacate/resume machine by one verdict; emits transition events.

    A warm-up verdict of None counts as "no radar". The power-up completion
    is stamped at exactly since_s + powerup_delay_s regardless of when it is
    observed.
    """
    events: list[Event] = []
    radar = verdict is not None and verdict.radar_present

    if state.mode is BSMode.TRANSMITTING:
        if radar:
            events.append(Event(t_s, "BSShutdown", {"vote_fraction": verdict.vote_fraction}))
            return BSState(BSMode.VACATED, t_s, 0), events
        return state, events

    if state.mode is BSMode.VACATED:
        if radar:
            return BSState(BSMode.VACATED, state.since_s, 0), events
        clear = state.clear_count + (1 if verdict is not None else 0)
        if clear >= config.clear_streak:
            events.append(Event(t_s, "BSPowerUpStart", {}))
            return BSState(BSMode.POWERING_UP, t_s, 0), events
        return BSState(BSMode.VACATED, state.since_s, clear), events

    if state.mode is BSMode.POWERING_UP:
        done_t = state.since_s + config.powerup_delay_s
        if t_s >= done_t:
            events.append(Event(done_t, "BSResumed", {}))
            return BSState(BSMode.TRANSMITTING, done_t, 0), events
        return state, events

    raise IllegalTransition(f"unknown state {state.mode}")


@dataclass(frozen=True)
class KpiSample:
    t_s: float
    ue_id: str
    sinr_db: float
    cqi: int
    throughput_mbps: float


# CQI thresholds: 15 steps evenly spaced from -6 dB to 20 dB, with the
# standard 4-bit spectral-efficiency ladder (bits/s/Hz).
CQI_THRESHOLDS_DB = tuple(-6.0 + i * 26.0 / 14.0 for i in range(15))
CQI_EFFICIENCY = (
    0.1523, 0.2344, 0.3770, 0.6016, 0.8770, 1.1758, 1.4766, 1.9141,
    2.4063, 2.7305, 3.3223, 3.9023, 4.5234, 5.1152, 5.5547,
)
CQI_BANDWIDTH_FACTOR_MHZ = 1.2


def kpi_proxy(sinr_db: float, bs_state: BSState, offered_mbps: float = 10.0,
              t_s: float = 0.0, ue_id: str = "ue") -> KpiSample:
    """Map SINR to CQI via the threshold table and to a throughput proxy."""
    if not math.isfinite(sinr_db):
        raise InvalidParams(f"sinr_db must be finite, got {sinr_db}")
    cqi = 1
    for i, thr in enumerate(CQI_THRESHOLDS_DB):
        if sinr_db >= thr:
            cqi = i + 1
    if bs_state.mode is BSMode.TRANSMITTING:
        throughput = min(offered_mbps, CQI_EFFICIENCY[cqi - 1] * CQI_BANDWIDTH_FACTOR_MHZ)
    else:
        throughput = 0.0
    return KpiSample(t_s, ue_id, sinr_db, cqi, throughput)


@dataclass(frozen=True)
class ExperimentConfig:
    radar_snr_db: float = 10.0
    cellular_snr_db: float = 10.0
    windows_per_second: int = 50
    batch_size: int = 10
    # Monte-Carlo calibrated for the per-window carrier-leak filter: noise and
    # OFDM windows stay below ~0.07, in-pulse radar windows sit near 0.18
    baseline_threshold: float = 0.1
    noise_floor_dbm: float = -95.0
    offered_mbps: float = 10.0
    duration_s: float | None = None
    control: ControlConfig = field(default_factory=ControlConfig)
    radar: RadarParams = field(default_factory=RadarParams)
    cellular: CellularParams = field(
        default_factory=lambda: CellularParams(sample_rate_hz=6e6)
    )


@dataclass
class ExperimentResult:
    events: EventLog
    kpi: list[KpiSample]
    occupancy: list[tuple[float, int]]
    detection_delay_s: float | None


def _unit_power(x: np.ndarray) -> np.ndarray:
    p = float(np.mean(np.abs(x) ** 2))
    return x if p == 0 else x / math.sqrt(p)


def _cyclic_slice(x: np.ndarray, start: int, length: int) -> np.ndarray:
    idx = (start + np.arange(length)) % x.size
    return x[idx]


def run_experiment(
    spec: ScenarioSpec,
    schedule: dict,
    weights: ModelWeights | None = None,
    config: ExperimentConfig = ExperimentConfig(),
    seed: int = 0,
) -> ExperimentResult:
    """Wire waveforms -> channel -> detector -> state machine in model time.

    schedule holds radar_on_s/radar_off_s (model seconds). With weights=None
    the per-window detector is the matched filter against the known radar
    waveform's window-long template; otherwise the CNN classifies normalized
    spectral windows. The scenario tap grid repeats cyclically when the
    experiment outlives it.
    """
    radar_on = float(schedule["radar_on_s"])
    radar_off = float(schedule["radar_off_s"])
    duration = config.duration_s if config.duration_s is not None else spec.duration_s
    if not (0 <= radar_on <= radar_off):
        raise InvalidParams("schedule must satisfy 0 <= radar_on_s <= radar_off_s")

    rng = np.random.default_rng(seed)
    fs = config.radar.sample_rate_hz
    radar_buf = gen_radar(config.radar, seed=int(rng.integers(2**63)))
    radar_wave = radar_buf.samples.astype(np.complex128)
    n_sym = -(-(config.windows_per_second * WINDOW_SIZE) // config.cellular.symbol_len)
    cell_wave = gen_cellular(config.cellular, n_sym + 1, seed=int(rng.integers(2**63)))
    cell_wave = cell_wave.samples.astype(np.complex128)
    # baseline per-window detector: matched filter against the radar's
    # always-on carrier leak (the first-quadrant I/Q offsets)
    leak = np.full(WINDOW_SIZE, config.radar.i_offset + 1j * config.radar.q_offset)
    template = IQBuffer(leak.astype(np.complex64), fs)

    taps_map = build_scenario_taps(spec, seed=int(rng.integers(2**63)))
    ship_link = None
    for link in spec.links():
        roles = {spec.node_by_id(link[0]).role.value, spec.node_by_id(link[1]).role.value}
        if roles == {"BS", "Ship"}:
            ship_link = link
            break

    bs_node = next(n for n in spec.nodes if n.role.value == "BS")
    ue_nodes = [n for n in spec.nodes if n.role.value == "UE"]
    ship_node = next((n for n in spec.nodes if n.role.value == "Ship"), None)

    events = EventLog()
    state = BSState()
    vote = VoteState(batch_size=config.batch_size)
    kpi_rows: list[KpiSample] = []
    occupancy: list[tuple[float, int]] = []
    chunk_len = config.windows_per_second * WINDOW_SIZE
    batches_per_sec = config.windows_per_second // config.batch_size
    radar_amp = 10.0 ** (config.radar_snr_db / 20.0)
    cell_amp = 10.0 ** (config.cellular_snr_db / 20.0)
    noise_mw = 10.0 ** (config.noise_floor_dbm / 10.0)
    radar_cursor = 0
    cell_cursor = 0
    onset_emitted = end_emitted = False
    last_radar_flag = None

    n_steps = int(round(duration / spec.sampling_time_s))
    for step in range(n_steps):
        t = step * spec.sampling_time_s
        radar_active = radar_on <= t < radar_off
        if radar_active and not onset_emitted:
            events.emit(max(t, radar_on), "RadarOnsetTruth")
            onset_emitted = True
        if onset_emitted and not end_emitted and t >= radar_off:
            events.emit(radar_off, "RadarEndTruth")
            end_emitted = True

        # KPI and occupancy reflect the state at the start of the second
        positions = sample_positions(spec, t % spec.duration_s)
        occupancy.append((t, 1 if state.mode is BSMode.TRANSMITTING else 0))
        for ue in ue_nodes:
            pl = path_loss_db(positions[bs_node.id], positions[ue.id], spec.carrier_hz,
                              spec.link_exponent(tuple(sorted((bs_node.id, ue.id)))))
            sig_dbm = bs_node.tx_power_dbm - pl
            interf_mw = 0.0
            if radar_active and ship_node is not None:
                pl_ship = path_loss_db(positions[ship_node.id], positions[ue.id],
                                       spec.carrier_hz,
                                       spec.link_exponent(tuple(sorted((ship_node.id, ue.id)))))
                interf_mw = 10.0 ** ((ship_node.tx_power_dbm - pl_ship) / 10.0)
            sinr = sig_dbm - 10.0 * math.log10(noise_mw + interf_mw)
            kpi_rows.append(kpi_proxy(sinr, state, config.offered_mbps, t, ue.id))

        # sensing chain for this second
        scenario_step = step % spec.num_timesteps
        rx = (rng.standard_normal(chunk_len) + 1j * rng.standard_normal(chunk_len)) / math.sqrt(2)
        if radar_active:
            chunk = _cyclic_slice(radar_wave, radar_cursor, chunk_len)
            radar_cursor = (radar_cursor + chunk_len) % radar_wave.size
            if ship_link is not None:
                faded = fir_apply(IQBuffer(chunk.astype(np.complex64), fs),
                                  taps_map[(ship_link, scenario_step)])
                chunk = faded.samples.astype(np.complex128)
            rx = rx + radar_amp * _unit_power(chunk)
        if state.mode is BSMode.TRANSMITTING:
            chunk = _cyclic_slice(cell_wave, cell_cursor, chunk_len)
            cell_cursor = (cell_cursor + chunk_len) % cell_wave.size
            rx = rx + cell_amp * _unit_power(chunk)

        bits = _window_bits(rx, fs, weights, template, config)
        for b in range(batches_per_sec):
            verdict_t = t + (b + 1) * spec.sampling_time_s / batches_per_sec
            batch = bits[b * config.batch_size : (b + 1) * config.batch_size]
            vote, verdict = vote_step(vote, batch)
            # state-machine events first: a completed power-up is stamped at
            # since + delay, which precedes this verdict's timestamp
            state, new_events = step_state(state, verdict, verdict_t, config.control)
            for ev in new_events:
                events.emit(ev.t_s, ev.name, **ev.payload)
            if verdict is not None and verdict.radar_present != last_radar_flag:
                events.emit(verdict_t, "VerdictChange",
                            radar_present=verdict.radar_present,
                            vote_fraction=verdict.vote_fraction)
                last_radar_flag = verdict.radar_present

    # UE reconnection trails the resume by a fixed delay
    resumed = events.first("BSResumed")
    if resumed is not None:
        reconnect_t = resumed.t_s + config.control.ue_reconnect_delay_s
        if reconnect_t <= duration:
            events.events.append(Event(reconnect_t, "UEReconnected", {}))
        events.events.sort(key=lambda e: e.t_s)

    shutdown = events.first("BSShutdown")
    onset = events.first("RadarOnsetTruth")
    delay = (shutdown.t_s - onset.t_s) if shutdown and onset else None
    return ExperimentResult(events, kpi_rows, occupancy, delay)


def _window_bits(rx: np.ndarray, fs: float, weights: ModelWeights | None,
                 template: IQBuffer, config: ExperimentConfig) -> np.ndarray:
    """Per-window radar bits for one second of sensing."""
    n_windows = rx.size // WINDOW_SIZE
    windows = rx[: n_windows * WINDOW_SIZE].reshape(n_windows, WINDOW_SIZE)
    if weights is None:
        bits = np.zeros(n_windows, dtype=np.uint8)
        for i in range(n_windows):
            hit, _ = matched_filter_detect(
                IQBuffer(windows[i].astype(np.complex64), fs), template,
                config.baseline_threshold)
            bits[i] = 1 if hit else 0
        return bits
    feats = np.empty((n_windows, WINDOW_SIZE, 2), dtype=np.float32)
    keep = np.ones(n_windows, dtype=bool)
    for i in range(n_windows):
        w = Window1024(windows[i].astype(np.complex64), Domain.TIME)
        spec_w = to_frequency(w).values
        feats[i, :, 0] = spec_w.real
        feats[i, :, 1] = spec_w.imag
    probs = forward(feats, weights)
    return probs_to_bits(probs)


def save_kpi_csv(rows: list[KpiSample], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t_s", "ue_id", "sinr_db", "cqi", "throughput_mbps"])
        for r in rows:
            writer.writerow([r.t_s, r.ue_id, f"{r.sinr_db:.3f}", r.cqi,
                             f"{r.throughput_mbps:.4f}"])


def save_occupancy_csv(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t_s", "band_active"])
        for t, active in rows:
            writer.writerow([t, active])


def save_events_jsonl(log: EventLog, path) -> None:
    Path(path).write_text(log.to_jsonl())
