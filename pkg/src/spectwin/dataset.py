"""Labeled IQ dataset generation: combo sweeps, 1024-point spectral features, record file format."""

from __future__ import annotations

import hashlib
import json
import logging
import math
import struct
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import IntEnum
from pathlib import Path

import numpy as np

from .channel import emulate_link
from .errors import (
    CellTooSmall,
    CorruptRecord,
    FormatVersionMismatch,
    InvalidParams,
    ZeroWindow,
)
from .iqcore import WINDOW_SIZE, IQBuffer, Window1024, segment_windows, to_frequency
from .scenario import build_scenario_taps, default_scenario
from .waveforms import CellularParams, RadarParams, gen_cellular, gen_noise, gen_radar, mix_at_snr

log = logging.getLogger(__name__)

RECORD_MAGIC = b"SPTW"
RECORD_VERSION = 1
_FEATURE_BYTES = WINDOW_SIZE * 2 * 4
RECORD_SIZE = _FEATURE_BYTES + 1 + 1 + 4 + 4 + 8 + 4
_HEADER = struct.Struct("<4sII")
_TRAILER = struct.Struct("<BBffQ")


class Combo(IntEnum):
    EMPTY = 0
    CELL_ONLY = 1
    RADAR_ONLY = 2
    BOTH = 3

    @property
    def radar_present(self) -> bool:
        return self in (Combo.RADAR_ONLY, Combo.BOTH)


@dataclass(frozen=True)
class DatasetRecord:
    """One 1024-point two-channel feature window with its binary label and sweep metadata."""

    features: np.ndarray
    label: int
    combo: Combo
    snr_db: float | None
    sinr_db: float | None
    seed: int

    def __post_init__(self):
        feats = np.asarray(self.features, dtype=np.float32)
        object.__setattr__(self, "features", feats)
        if feats.shape != (WINDOW_SIZE, 2):
            raise InvalidParams(f"features must be ({WINDOW_SIZE}, 2), got {feats.shape}")
        if not np.isfinite(feats).all():
            raise InvalidParams("features contain NaN or Inf")
        if self.label != int(self.combo.radar_present):
            raise InvalidParams(
                f"label {self.label} inconsistent with combo {self.combo.name}"
            )


def _nan_to_none(x: float) -> float | None:
    return None if math.isnan(x) else x


def write_records(path, records) -> int:
    """Write the header and packed records; returns the record count."""
    count = 0
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(RECORD_MAGIC, RECORD_VERSION, RECORD_SIZE))
        for rec in records:
            body = rec.features.astype("<f4").tobytes() + _TRAILER.pack(
                rec.label,
                int(rec.combo),
                math.nan if rec.snr_db is None else rec.snr_db,
                math.nan if rec.sinr_db is None else rec.sinr_db,
                rec.seed,
            )
            fh.write(body + struct.pack("<I", zlib.crc32(body)))
            count += 1
    return count


def read_records(path):
    """Stream records back, validating the checksum and label rule per record."""
    with open(path, "rb") as fh:
        header = fh.read(_HEADER.size)
        if len(header) < _HEADER.size:
            raise FormatVersionMismatch(f"{path}: truncated header")
        magic, version, rec_size = _HEADER.unpack(header)
        if magic != RECORD_MAGIC:
            raise FormatVersionMismatch(f"{path}: bad magic {magic!r}")
        if version != RECORD_VERSION or rec_size != RECORD_SIZE:
            raise FormatVersionMismatch(
                f"{path}: unsupported version {version} / record size {rec_size}"
            )
        index = 0
        while True:
            blob = fh.read(RECORD_SIZE)
            if not blob:
                return
            if len(blob) < RECORD_SIZE:
                raise CorruptRecord(f"{path}: record {index} truncated")
            body, (crc,) = blob[:-4], struct.unpack("<I", blob[-4:])
            if zlib.crc32(body) != crc:
                raise CorruptRecord(f"{path}: record {index} failed checksum")
            feats = np.frombuffer(body[:_FEATURE_BYTES], dtype="<f4").reshape(WINDOW_SIZE, 2)
            label, combo, snr, sinr, seed = _TRAILER.unpack(body[_FEATURE_BYTES:])
            yield DatasetRecord(
                feats.copy(), label, Combo(combo), _nan_to_none(snr), _nan_to_none(sinr), seed
            )
            index += 1


@dataclass(frozen=True)
class SweepConfig:
    """Sweep grids and generator parameters for one dataset build."""

    snr_grid_db: tuple = (-20.0, -15.0, -10.0, -5.0, 0.0, 5.0, 10.0, 15.0, 20.0)
    sinr_grid_db: tuple = (-30.0, -25.0, -20.0, -15.0, -10.0, -5.0, 0.0, 5.0, 10.0)
    records_per_cell: int = 24
    seed: int = 0
    stride: int = WINDOW_SIZE
    feature_domain: str = "spectrum"  # "spectrum" (default) or "time"
    radar: RadarParams = field(default_factory=RadarParams)
    cellular: CellularParams = field(
        default_factory=lambda: CellularParams(sample_rate_hz=6e6)
    )

    def __post_init__(self):
        if not self.snr_grid_db:
            raise InvalidParams("snr_grid_db must be nonempty")
        if self.records_per_cell < 1:
            raise InvalidParams("records_per_cell must be >= 1")
        if self.feature_domain not in ("spectrum", "time"):
            raise InvalidParams(f"unknown feature_domain {self.feature_domain!r}")
        if self.radar.sample_rate_hz != self.cellular.sample_rate_hz:
            raise InvalidParams("radar and cellular generators must share the sample rate")

    @property
    def grid_points(self) -> list[tuple[float, float | None]]:
        sinrs = self.sinr_grid_db if self.sinr_grid_db else (None,)
        return [(snr, sinr) for snr in self.snr_grid_db for sinr in sinrs]

    def canonical_json(self) -> str:
        doc = {
            "snr_grid_db": list(self.snr_grid_db),
            "sinr_grid_db": list(self.sinr_grid_db),
            "records_per_cell": self.records_per_cell,
            "seed": self.seed,
            "stride": self.stride,
            "feature_domain": self.feature_domain,
            "radar": vars(self.radar).copy(),
            "cellular": vars(self.cellular).copy(),
        }
        return json.dumps(doc, sort_keys=True)


@dataclass
class CellPlan:
    combo: Combo
    gen_snr_db: float
    gen_sinr_db: float | None
    count: int
    cell_index: int

    # metadata recorded per record: SNR/SINR describe the radar, so they are
    # None for combos without one
    @property
    def meta_snr_db(self) -> float | None:
        return self.gen_snr_db if self.combo.radar_present else None

    @property
    def meta_sinr_db(self) -> float | None:
        return self.gen_sinr_db if self.combo is Combo.BOTH else None


def plan_cells(cfg: SweepConfig) -> list[CellPlan]:
    """Expand the sweep into per-cell quotas; every combo gets the same record total.

    Infeasible BOTH points (sinr >= snr) are dropped and their quota spread
    over the remaining BOTH cells, keeping label prevalence at exactly 0.5.
    For CELL_ONLY the grid's snr value sets the cellular-to-noise level.
    """
    points = cfg.grid_points
    total = cfg.records_per_cell * len(points)
    plans: list[CellPlan] = []
    index = 0
    for combo in Combo:
        if combo is Combo.BOTH:
            cells = [(s, si) for (s, si) in points if si is None or si < s]
            if not cells:
                raise InvalidParams("no feasible (snr, sinr) pairs for the BOTH combo")
        else:
            cells = points
        base, rem = divmod(total, len(cells))
        for i, (snr, sinr) in enumerate(cells):
            count = base + (1 if i < rem else 0)
            plans.append(CellPlan(combo, snr, sinr, count, index))
            index += 1
    return plans


def _feature_window(w: Window1024, domain: str) -> np.ndarray:
    if domain == "spectrum":
        spec = to_frequency(w).values
    else:
        power = float(np.mean(np.abs(w.values.astype(np.complex128)) ** 2))
        if power == 0.0:
            raise ZeroWindow("all-zero time window")
        spec = (w.values.astype(np.complex128) / math.sqrt(power)).astype(np.complex64)
    return np.stack([spec.real, spec.imag], axis=1).astype(np.float32)


def _cell_mixture(cfg: SweepConfig, plan: CellPlan, n_windows: int, rng) -> IQBuffer:
    snr, sinr = plan.gen_snr_db, plan.gen_sinr_db
    fs = cfg.radar.sample_rate_hz
    if plan.combo in (Combo.RADAR_ONLY, Combo.BOTH):
        length = cfg.radar.total_samples
    else:
        length = n_windows * cfg.stride + WINDOW_SIZE

    if plan.combo is Combo.EMPTY:
        return gen_noise(length, 1.0, int(rng.integers(2**63)), fs)

    if plan.combo is Combo.CELL_ONLY:
        nsym = -(-length // cfg.cellular.symbol_len)
        cell = gen_cellular(cfg.cellular, nsym, int(rng.integers(2**63)))
        mixed, _ = mix_at_snr(cell, None, snr, None, int(rng.integers(2**63)))
        return mixed

    radar = gen_radar(cfg.radar, int(rng.integers(2**63)))
    if plan.combo is Combo.RADAR_ONLY:
        mixed, _ = mix_at_snr(radar, None, snr, None, int(rng.integers(2**63)))
        return mixed

    nsym = -(-length // cfg.cellular.symbol_len)
    cell = gen_cellular(cfg.cellular, nsym, int(rng.integers(2**63)))
    mixed, _ = mix_at_snr(radar, cell, snr, sinr, int(rng.integers(2**63)))
    return mixed


def _generate_cell(cfg: SweepConfig, plan: CellPlan, tap_pool) -> list[DatasetRecord]:
    ss = np.random.SeedSequence(entropy=cfg.seed, spawn_key=(int(plan.combo), plan.cell_index))
    rng = np.random.default_rng(ss)
    records: list[DatasetRecord] = []
    guard = 0
    while len(records) < plan.count:
        guard += 1
        if guard > 50:
            raise InvalidParams(f"cell {plan.cell_index}: unable to fill quota")
        need = plan.count - len(records)
        mixed = _cell_mixture(cfg, plan, min(need, 128), rng)
        taps = tap_pool[int(rng.integers(len(tap_pool)))]
        rx = emulate_link(
            mixed, [taps], epoch_s=mixed.duration_s + 1.0, noise_power=0.0,
            rx_gain_db=0.0, seed=0,
        )
        windows = segment_windows(rx, cfg.stride)
        picks = rng.permutation(len(windows))[:need]
        for pick in np.sort(picks):
            try:
                feats = _feature_window(windows[pick], cfg.feature_domain)
            except ZeroWindow:
                log.warning("discarding all-zero window in cell %d", plan.cell_index)
                continue
            rec_seed = (int(plan.combo) << 56) | (plan.cell_index << 32) | len(records)
            records.append(
                DatasetRecord(feats, int(plan.combo.radar_present), plan.combo,
                              plan.meta_snr_db, plan.meta_sinr_db, rec_seed)
            )
            if len(records) >= plan.count:
                break
    return records


@dataclass
class DatasetManifest:
    record_file: str
    format_version: int
    seed: int
    params_hash: str
    cells: list[dict]
    counts: dict
    fractions: dict | None = None
    split_seed: int | None = None
    splits: dict | None = None

    @property
    def record_count(self) -> int:
        return sum(c["count"] for c in self.cells)

    def cell_ranges(self) -> list[tuple[dict, range]]:
        """Record index range occupied by each cell, in file order."""
        out, start = [], 0
        for cell in self.cells:
            out.append((cell, range(start, start + cell["count"])))
            start += cell["count"]
        return out


def save_manifest(manifest: DatasetManifest, path) -> None:
    Path(path).write_text(json.dumps(vars(manifest), indent=2) + "\n")


def load_manifest(path) -> DatasetManifest:
    doc = json.loads(Path(path).read_text())
    return DatasetManifest(**doc)


def gen_dataset(cfg: SweepConfig, out_dir, workers: int = 1) -> DatasetManifest:
    """Generate the full sweep into `out_dir/records.sptw` plus a JSON manifest."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    plans = plan_cells(cfg)

    tap_seed = int(np.random.SeedSequence(entropy=cfg.seed, spawn_key=(999,)).generate_state(1)[0])
    taps_map = build_scenario_taps(default_scenario(), seed=tap_seed)
    tap_pool = [taps_map[key] for key in sorted(taps_map.keys())]

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            per_cell = list(pool.map(lambda p: _generate_cell(cfg, p, tap_pool), plans))
    else:
        per_cell = [_generate_cell(cfg, plan, tap_pool) for plan in plans]

    record_file = out_dir / "records.sptw"
    write_records(record_file, (rec for cell in per_cell for rec in cell))

    counts = {combo.name: 0 for combo in Combo}
    for plan, recs in zip(plans, per_cell):
        counts[plan.combo.name] += len(recs)
    manifest = DatasetManifest(
        record_file=record_file.name,
        format_version=RECORD_VERSION,
        seed=cfg.seed,
        params_hash=hashlib.sha256(cfg.canonical_json().encode()).hexdigest(),
        cells=[
            {"combo": plan.combo.name, "snr_db": plan.meta_snr_db,
             "sinr_db": plan.meta_sinr_db, "count": len(recs)}
            for plan, recs in zip(plans, per_cell)
        ],
        counts=counts,
    )
    save_manifest(manifest, out_dir / "manifest.json")
    return manifest


DEFAULT_FRACTIONS = {"train": 0.7, "val": 0.15, "test": 0.15}


def split_dataset(manifest: DatasetManifest, fractions: dict | None = None,
                  seed: int = 0) -> DatasetManifest:
    """Assign records to splits, stratified by (combo, snr bin); deterministic per seed."""
    fractions = dict(DEFAULT_FRACTIONS if fractions is None else fractions)
    if abs(sum(fractions.values()) - 1.0) > 1e-9:
        raise InvalidParams(f"fractions must sum to 1, got {fractions}")
    active = [name for name, frac in fractions.items() if frac > 0]

    groups: dict[tuple, list[int]] = {}
    for cell, indices in manifest.cell_ranges():
        key = (cell["combo"], cell["snr_db"])
        groups.setdefault(key, []).extend(indices)

    rng = np.random.default_rng(seed)
    splits: dict[str, list[int]] = {name: [] for name in fractions}
    for key in sorted(groups, key=str):
        members = np.array(groups[key])
        if members.size < len(active):
            raise CellTooSmall(
                f"cell {key} has {members.size} records, fewer than {len(active)} splits"
            )
        members = members[rng.permutation(members.size)]
        quotas = _largest_remainder(members.size, [fractions[name] for name in active])
        start = 0
        for name, quota in zip(active, quotas):
            splits[name].extend(int(i) for i in members[start : start + quota])
            start += quota
    for name in splits:
        splits[name].sort()
    out = DatasetManifest(**vars(manifest))
    out.fractions = fractions
    out.split_seed = seed
    out.splits = splits
    return out


def _largest_remainder(total: int, fracs: list[float]) -> list[int]:
    raw = [total * f for f in fracs]
    counts = [int(x) for x in raw]
    # every active split keeps at least one member
    for i in range(len(counts)):
        if counts[i] == 0:
            counts[i] = 1
    while sum(counts) > total:
        counts[counts.index(max(counts))] -= 1
    order = sorted(range(len(fracs)), key=lambda i: raw[i] - int(raw[i]), reverse=True)
    i = 0
    while sum(counts) < total:
        counts[order[i % len(order)]] += 1
        i += 1
    return counts
