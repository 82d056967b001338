"""Waikiki-style scenario: node geometry, ship trajectory, path loss, multipath tap synthesis,
and k-means tap approximation down to the 4-tap / 5.12 us emulator constraint."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy.constants import c as SPEED_OF_LIGHT

from .errors import CoincidentNodes, EmptyInput, InvalidParams, OutOfRange

MAX_EMULATOR_TAPS = 4
MAX_DELAY_SPREAD_S = 5.12e-6

_ROLE_HEIGHT_M = {"BS": 3.0, "UE": 1.0, "Ship": 3.0}
_ROLE_TX_DBM = {"BS": 30.0, "UE": 20.0, "Ship": 30.0}


class Role(Enum):
    BS = "BS"
    UE = "UE"
    SHIP = "Ship"


@dataclass(frozen=True)
class Node:
    id: str
    role: Role
    position_m: tuple[float, float, float]
    tx_power_dbm: float | None = None

    def __post_init__(self):
        x, y, z = self.position_m
        if z <= 0:
            raise InvalidParams(f"node {self.id}: height must be > 0, got {z}")
        if self.tx_power_dbm is None:
            object.__setattr__(self, "tx_power_dbm", _ROLE_TX_DBM[self.role.value])


def make_node(node_id: str, role: Role, x: float, y: float, z: float | None = None) -> Node:
    """Build a node with role-default antenna height and transmit power."""
    height = _ROLE_HEIGHT_M[role.value] if z is None else z
    return Node(node_id, role, (x, y, height))


@dataclass(frozen=True)
class Trajectory:
    waypoints: tuple[tuple[float, tuple[float, float, float]], ...]
    speed_mps: float = 10.0

    def __post_init__(self):
        if len(self.waypoints) < 2:
            raise InvalidParams("trajectory needs at least two waypoints")
        times = [t for t, _ in self.waypoints]
        if any(t1 <= t0 for t0, t1 in zip(times, times[1:])):
            raise InvalidParams("trajectory timestamps must be strictly increasing")
        for (t0, p0), (t1, p1) in zip(self.waypoints, self.waypoints[1:]):
            d = math.dist(p0, p1)
            v = d / (t1 - t0)
            if abs(v - self.speed_mps) > 1e-6:
                raise InvalidParams(
                    f"segment speed {v:.9f} m/s deviates from declared {self.speed_mps} m/s"
                )


def straight_trajectory(
    start: tuple[float, float, float],
    heading: tuple[float, float],
    speed_mps: float,
    duration_s: float,
) -> Trajectory:
    hx, hy = heading
    norm = math.hypot(hx, hy)
    end = (
        start[0] + hx / norm * speed_mps * duration_s,
        start[1] + hy / norm * speed_mps * duration_s,
        start[2],
    )
    return Trajectory(((0.0, start), (duration_s, end)), speed_mps)


@dataclass(frozen=True)
class ScenarioSpec:
    nodes: tuple[Node, ...]
    trajectories: dict[str, Trajectory]
    duration_s: float = 40.0
    sampling_time_s: float = 1.0
    area_m: tuple[float, float] = (700.0, 800.0)
    carrier_hz: float = 3.6e9
    pathloss_exponent_land: float = 2.7
    pathloss_exponent_water: float = 2.0

    def __post_init__(self):
        steps = self.duration_s / self.sampling_time_s
        if abs(steps - round(steps)) > 1e-9:
            raise InvalidParams("duration_s must be an integer multiple of sampling_time_s")
        ids = [n.id for n in self.nodes]
        if len(set(ids)) != len(ids):
            raise InvalidParams("duplicate node ids")
        for tid in self.trajectories:
            if tid not in ids:
                raise InvalidParams(f"trajectory for unknown node {tid!r}")
        for node in self.nodes:
            self._check_in_area(node.id, node.position_m)
        for tid, traj in self.trajectories.items():
            for _, pos in traj.waypoints:
                self._check_in_area(tid, pos)

    def _check_in_area(self, node_id: str, pos) -> None:
        w, h = self.area_m
        if not (0 <= pos[0] <= w and 0 <= pos[1] <= h):
            raise InvalidParams(f"node {node_id} position {pos} outside {w}x{h} m area")

    @property
    def num_timesteps(self) -> int:
        return int(round(self.duration_s / self.sampling_time_s))

    def node_by_id(self, node_id: str) -> Node:
        for node in self.nodes:
            if node.id == node_id:
                return node
        raise InvalidParams(f"unknown node {node_id!r}")

    def links(self) -> list[tuple[str, str]]:
        """All unordered node pairs, lexicographically ordered within a pair."""
        ids = sorted(n.id for n in self.nodes)
        return [(a, b) for i, a in enumerate(ids) for b in ids[i + 1 :]]

    def link_exponent(self, link: tuple[str, str]) -> float:
        roles = {self.node_by_id(link[0]).role, self.node_by_id(link[1]).role}
        return self.pathloss_exponent_water if Role.SHIP in roles else self.pathloss_exponent_land


@dataclass(frozen=True)
class TapSet:
    """A constrained set of FIR channel taps for one link at one timestep."""

    delays_s: np.ndarray
    gains: np.ndarray
    link: tuple[str, str] = ("", "")
    t_s: float = 0.0

    def __post_init__(self):
        delays = np.asarray(self.delays_s, dtype=np.float64)
        gains = np.asarray(self.gains, dtype=np.complex128)
        object.__setattr__(self, "delays_s", delays)
        object.__setattr__(self, "gains", gains)
        if delays.shape != gains.shape or delays.ndim != 1:
            raise InvalidParams("delays and gains must be matching 1-D arrays")
        nonzero = np.count_nonzero(gains)
        if nonzero == 0:
            raise InvalidParams("tap set must carry nonzero total power")
        if nonzero > MAX_EMULATOR_TAPS:
            raise InvalidParams(f"{nonzero} nonzero taps exceed the emulator limit of {MAX_EMULATOR_TAPS}")
        if delays.size and (delays < 0).any():
            raise InvalidParams("tap delays must be >= 0")
        if delays.size and delays.max() - delays.min() > MAX_DELAY_SPREAD_S * (1 + 1e-12):
            raise InvalidParams("delay spread exceeds the emulator limit")

    @property
    def total_power(self) -> float:
        return float(np.sum(np.abs(self.gains) ** 2))

    @property
    def spread_s(self) -> float:
        return float(self.delays_s.max() - self.delays_s.min()) if self.delays_s.size else 0.0


def sample_positions(spec: ScenarioSpec, t_s: float) -> dict[str, tuple[float, float, float]]:
    """Node positions at time t; static nodes stay put, trajectories interpolate linearly."""
    if not 0 <= t_s <= spec.duration_s:
        raise OutOfRange(f"t={t_s} outside [0, {spec.duration_s}]")
    out = {}
    for node in spec.nodes:
        traj = spec.trajectories.get(node.id)
        if traj is None:
            out[node.id] = node.position_m
            continue
        times = [t for t, _ in traj.waypoints]
        positions = [p for _, p in traj.waypoints]
        if t_s <= times[0]:
            out[node.id] = positions[0]
        elif t_s >= times[-1]:
            out[node.id] = positions[-1]
        else:
            i = next(j for j in range(len(times) - 1) if times[j] <= t_s <= times[j + 1])
            frac = (t_s - times[i]) / (times[i + 1] - times[i])
            p0, p1 = positions[i], positions[i + 1]
            out[node.id] = tuple(a + frac * (b - a) for a, b in zip(p0, p1))
    return out


def path_loss_db(a, b, carrier_hz: float, exponent: float = 2.7) -> float:
    """Log-distance path loss with 1 m reference: PL = 20log10(4*pi*f/c) + 10n*log10(d)."""
    d = math.dist(a, b)
    if d == 0.0:
        raise CoincidentNodes(f"nodes at identical position {a}")
    fspl_1m = 20.0 * math.log10(4.0 * math.pi * carrier_hz / SPEED_OF_LIGHT)
    return fspl_1m + 10.0 * exponent * math.log10(d)


def synth_tap_profile(
    pos_a,
    pos_b,
    carrier_hz: float,
    num_paths: int = 12,
    seed: int = 0,
    exponent: float = 2.7,
    decay_s: float = 2e-6,
    max_excess_s: float = 8e-6,
) -> tuple[np.ndarray, np.ndarray]:
    """Synthetic multipath profile: geometric LoS tap plus exponentially decaying reflections.

    The random draws depend only on the seed, so re-invoking with moved
    endpoints shifts the geometry while keeping the same reflection
    skeleton - which is what a slowly-varying physical channel does.
    Returns (delays_s, complex gains), unconstrained length.
    """
    if num_paths < 1:
        raise InvalidParams(f"num_paths must be >= 1, got {num_paths}")
    rng = np.random.default_rng(seed)
    excess = rng.uniform(0.0, max_excess_s, max(num_paths - 1, 0))
    rel_power = rng.uniform(0.05, 0.8, max(num_paths - 1, 0)) * np.exp(-excess / decay_s)
    phases = rng.uniform(0.0, 2.0 * math.pi, max(num_paths - 1, 0))

    d = math.dist(pos_a, pos_b)
    los_delay = d / SPEED_OF_LIGHT
    los_amp = 10.0 ** (-path_loss_db(pos_a, pos_b, carrier_hz, exponent) / 20.0)
    los_phase = -2.0 * math.pi * carrier_hz * los_delay

    delays = np.concatenate([[los_delay], los_delay + excess])
    amps = np.concatenate([[los_amp], los_amp * np.sqrt(rel_power)])
    angles = np.concatenate([[los_phase], phases])
    return delays, amps * np.exp(1j * angles)


def _weighted_kmeans_1d(values: np.ndarray, weights: np.ndarray, k: int, seed: int,
                        restarts: int = 8, max_iter: int = 100):
    """Weighted 1-D k-means with k-means++ init; returns (labels, centers, objective trace)."""
    n = values.size
    best = None
    for restart in range(restarts):
        rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(restart,)))
        centers = np.empty(k)
        centers[0] = values[rng.choice(n, p=weights / weights.sum())]
        for j in range(1, k):
            d2 = np.min((values[:, None] - centers[None, :j]) ** 2, axis=1)
            probs = weights * d2
            total = probs.sum()
            if total <= 0:
                centers[j] = values[rng.integers(n)]
            else:
                centers[j] = values[rng.choice(n, p=probs / total)]

        labels = np.zeros(n, dtype=int)
        trace = []
        for _ in range(max_iter):
            labels_new = np.argmin(np.abs(values[:, None] - centers[None, :]), axis=1)
            for j in range(k):
                mask = labels_new == j
                if mask.any():
                    centers[j] = np.average(values[mask], weights=weights[mask])
                else:
                    worst = np.argmax(weights * np.min(
                        (values[:, None] - centers[None, :]) ** 2, axis=1))
                    centers[j] = values[worst]
                    labels_new[worst] = j
            obj = float(np.sum(weights * (values - centers[labels_new]) ** 2))
            trace.append(obj)
            if np.array_equal(labels_new, labels) and len(trace) > 1:
                break
            labels = labels_new
        if best is None or trace[-1] < best[2][-1]:
            best = (labels.copy(), centers.copy(), list(trace))
    return best


@dataclass
class _Cluster:
    weight: float
    delay: float
    power: float
    peak_amp: float
    peak_gain: complex
    members: int

    @staticmethod
    def merge(a: "_Cluster", b: "_Cluster") -> "_Cluster":
        w = a.weight + b.weight
        delay = (a.weight * a.delay + b.weight * b.delay) / w
        peak = a if a.peak_amp >= b.peak_amp else b
        return _Cluster(w, delay, a.power + b.power, peak.peak_amp, peak.peak_gain,
                        a.members + b.members)


def approx_taps(
    delays_s: np.ndarray,
    gains: np.ndarray,
    k: int = MAX_EMULATOR_TAPS,
    max_spread_s: float = MAX_DELAY_SPREAD_S,
    seed: int = 0,
    link: tuple[str, str] = ("", ""),
    t_s: float = 0.0,
) -> TapSet:
    """Collapse a raw multipath profile to <= k taps within the emulator delay spread.

    Power-weighted 1-D k-means over delays groups nearby paths; each cluster
    becomes one tap whose delay is the power-weighted mean, magnitude the
    quadrature sum of member magnitudes (so total power is conserved
    exactly), and phase that of the strongest member. Clusters at the delay
    extremes are then merged greedily until the spread constraint holds.
    """
    delays = np.asarray(delays_s, dtype=np.float64)
    gains = np.asarray(gains, dtype=np.complex128)
    if delays.size == 0:
        raise EmptyInput("no taps to approximate")
    if k < 1:
        raise InvalidParams(f"k must be >= 1, got {k}")
    powers = np.abs(gains) ** 2
    keep = powers > 0
    if not keep.any():
        raise EmptyInput("all taps have zero power")
    delays, gains, powers = delays[keep], gains[keep], powers[keep]

    order = np.argsort(delays, kind="stable")
    delays, gains, powers = delays[order], gains[order], powers[order]

    if delays.size <= k:
        labels = np.arange(delays.size)
        n_clusters = delays.size
    else:
        labels, centers, _ = _weighted_kmeans_1d(delays, powers, k, seed)
        # relabel clusters in delay order so merging works on sorted neighbors
        used = np.unique(labels)
        center_order = np.argsort(centers[used])
        remap = {int(used[j]): rank for rank, j in enumerate(center_order)}
        labels = np.array([remap[int(l)] for l in labels])
        n_clusters = len(used)

    clusters = []
    for j in range(n_clusters):
        mask = labels == j
        w = powers[mask].sum()
        if mask.sum() == 1:
            delay = float(delays[mask][0])
        else:
            delay = float(np.average(delays[mask], weights=powers[mask]))
        peak = int(np.argmax(powers[mask]))
        peak_gain = gains[mask][peak]
        clusters.append(_Cluster(w, delay, float(w), abs(peak_gain), complex(peak_gain),
                                 int(mask.sum())))
    clusters.sort(key=lambda c: c.delay)

    while len(clusters) > 1 and clusters[-1].delay - clusters[0].delay > max_spread_s:
        gap_low = clusters[1].delay - clusters[0].delay
        gap_high = clusters[-1].delay - clusters[-2].delay
        if gap_low <= gap_high:
            clusters[0:2] = [_Cluster.merge(clusters[0], clusters[1])]
        else:
            clusters[-2:] = [_Cluster.merge(clusters[-2], clusters[-1])]

    out_delays = np.array([c.delay for c in clusters])
    out_gains = np.empty(len(clusters), dtype=np.complex128)
    for i, cl in enumerate(clusters):
        if cl.members == 1:
            out_gains[i] = cl.peak_gain
        else:
            out_gains[i] = math.sqrt(cl.power) * np.exp(1j * np.angle(cl.peak_gain))
    return TapSet(out_delays, out_gains, link=link, t_s=t_s)


def build_scenario_taps(spec: ScenarioSpec, seed: int = 0) -> dict[tuple[tuple[str, str], int], TapSet]:
    """Constrained TapSet for every unordered link at every sampling timestep."""
    out = {}
    links = spec.links()
    for li, link in enumerate(links):
        link_seed = int(np.random.SeedSequence(entropy=seed, spawn_key=(li,)).generate_state(1)[0])
        exponent = spec.link_exponent(link)
        for step in range(spec.num_timesteps):
            t = step * spec.sampling_time_s
            positions = sample_positions(spec, t)
            delays, gains = synth_tap_profile(
                positions[link[0]], positions[link[1]], spec.carrier_hz,
                seed=link_seed, exponent=exponent)
            out[(link, step)] = approx_taps(delays, gains, seed=link_seed, link=link, t_s=t)
    return out


def default_scenario() -> ScenarioSpec:
    """One coastline BS, six UEs around it, and a ship sailing 400 m north-to-south offshore."""
    nodes = [
        make_node("bs", Role.BS, 380.0, 240.0),
        make_node("ue1", Role.UE, 300.0, 180.0),
        make_node("ue2", Role.UE, 460.0, 160.0),
        make_node("ue3", Role.UE, 560.0, 300.0),
        make_node("ue4", Role.UE, 420.0, 330.0),
        make_node("ue5", Role.UE, 250.0, 300.0),
        make_node("ue6", Role.UE, 620.0, 140.0),
        make_node("ship", Role.SHIP, 120.0, 700.0),
    ]
    ship_traj = straight_trajectory((120.0, 700.0, 3.0), (0.0, -1.0), 10.0, 40.0)
    return ScenarioSpec(tuple(nodes), {"ship": ship_traj})


# --- serialization -------------------------------------------------------------

def scenario_to_json(spec: ScenarioSpec) -> str:
    doc = {
        "nodes": [
            {"id": n.id, "role": n.role.value, "position_m": list(n.position_m),
             "tx_power_dbm": n.tx_power_dbm}
            for n in spec.nodes
        ],
        "trajectories": {
            tid: {"speed_mps": tr.speed_mps,
                  "waypoints": [[t, list(p)] for t, p in tr.waypoints]}
            for tid, tr in spec.trajectories.items()
        },
        "duration_s": spec.duration_s,
        "sampling_time_s": spec.sampling_time_s,
        "area_m": list(spec.area_m),
        "carrier_hz": spec.carrier_hz,
        "pathloss_exponent_land": spec.pathloss_exponent_land,
        "pathloss_exponent_water": spec.pathloss_exponent_water,
    }
    return json.dumps(doc, indent=2)


def scenario_from_json(text: str) -> ScenarioSpec:
    doc = json.loads(text)
    nodes = tuple(
        Node(nd["id"], Role(nd["role"]), tuple(nd["position_m"]), nd.get("tx_power_dbm"))
        for nd in doc["nodes"]
    )
    trajectories = {
        tid: Trajectory(tuple((wp[0], tuple(wp[1])) for wp in tr["waypoints"]), tr["speed_mps"])
        for tid, tr in doc["trajectories"].items()
    }
    return ScenarioSpec(
        nodes, trajectories,
        duration_s=doc["duration_s"], sampling_time_s=doc["sampling_time_s"],
        area_m=tuple(doc["area_m"]), carrier_hz=doc["carrier_hz"],
        pathloss_exponent_land=doc.get("pathloss_exponent_land", 2.7),
        pathloss_exponent_water=doc.get("pathloss_exponent_water", 2.0),
    )


def save_taps_csv(taps: TapSet, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["delay_s", "gain_re", "gain_im"])
        for d, g in zip(taps.delays_s, taps.gains):
            writer.writerow([repr(float(d)), repr(float(g.real)), repr(float(g.imag))])


def load_taps_csv(path, link: tuple[str, str] = ("", ""), t_s: float = 0.0) -> tuple[np.ndarray, np.ndarray]:
    """Read an externally computed raw tap profile (delay_s, gain_re, gain_im)."""
    delays, gains = [], []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            delays.append(float(row["delay_s"]))
            gains.append(float(row["gain_re"]) + 1j * float(row["gain_im"]))
    if not delays:
        raise EmptyInput(f"{path}: no taps")
    return np.array(delays), np.array(gains)


def pathloss_heatmap(spec: ScenarioSpec, t_s: float = 0.0) -> tuple[list[str], np.ndarray]:
    """Pairwise path-loss matrix (dB) at time t; diagonal is zero-filled."""
    positions = sample_positions(spec, t_s)
    ids = sorted(positions)
    n = len(ids)
    grid = np.zeros((n, n))
    for i, a in enumerate(ids):
        for j, b in enumerate(ids):
            if i == j:
                continue
            link = tuple(sorted((a, b)))
            grid[i, j] = path_loss_db(positions[a], positions[b], spec.carrier_hz,
                                      spec.link_exponent(link))
    return ids, grid


def save_heatmap_csv(ids: list[str], grid: np.ndarray, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["node"] + ids)
        for i, name in enumerate(ids):
            writer.writerow([name] + [f"{grid[i, j]:.3f}" for j in range(len(ids))])
