"""Synthetic skirmish episodes and the fogged-triplet dataset pipeline.

Each episode places two bases on a square pixel map: static buildings
plus mobile units that wander between random waypoints.  Sampled frames
are reduced to grid states and emitted as (fogged frame, last-seen map,
ground truth) triplets, with the last-seen chain threaded through each
episode in order.  Everything is a deterministic function of the config,
including its seed; episodes use seed XOR episode-index streams so they
can be simulated in parallel without changing a single byte.
"""

from __future__ import annotations

import hashlib
import json
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterator

import numpy as np

from .errors import DataError
from .metrics import accumulated_predictor, confusion_counts, partial_predictor
from .schema import (ENEMY, FRIENDLY, ChannelSchema, GridState, Unit,
                     accumulate, apply_fog, concat_input, downsample,
                     visibility_mask)

MAGIC = b"FOGD1"
_CHECKSUM_BYTES = 8


@dataclass(frozen=True)
class SimConfig:
    schema: ChannelSchema
    map_extent: int = 4096
    grid_size: int = 32
    episodes: int = 10
    ticks: int = 240
    stride: int = 10
    combat_range: tuple[int, int] = (2, 4)      # mobile units per type per side
    building_range: tuple[int, int] = (1, 2)    # buildings per type per side
    waypoint_prob: float = 0.05                 # per-tick chance to repick a goal
    speed: float = 24.0                         # pixels per tick
    sight_radius: int = 1                       # cells, Chebyshev
    friendly_buildings: tuple[str, ...] | None = None
    seed: int = 0

    def __post_init__(self):
        if min(self.map_extent, self.grid_size, self.episodes, self.ticks) <= 0:
            raise DataError("sim config: extents, episodes and ticks must be positive")
        if self.stride < 1:
            raise DataError(f"sim config: stride {self.stride} must be >= 1")
        for lo, hi in (self.combat_range, self.building_range):
            if not (0 <= lo <= hi):
                raise DataError(f"sim config: bad count range ({lo}, {hi})")
        if self.speed < 0 or not (0.0 <= self.waypoint_prob <= 1.0):
            raise DataError("sim config: bad movement parameters")
        mobile, static = self.friendly_split()
        max_buildings = self.building_range[1] * max(
            len(static), self.schema.n_enemy_building)
        if max_buildings > self.grid_size * self.grid_size:
            raise DataError(f"sim config: up to {max_buildings} buildings per side "
                            f"cannot fit a {self.grid_size}x{self.grid_size} grid")

    def friendly_split(self) -> tuple[tuple[str, ...], tuple[str, ...]]:
        """(mobile, static) friendly types.  By default a friendly type is
        static when swapping its side prefix lands in the enemy building
        list (f_base <-> e_base); pass friendly_buildings to override."""
        if self.friendly_buildings is not None:
            static = tuple(self.friendly_buildings)
            for t in static:
                if t not in self.schema.friendly:
                    raise DataError(f"sim config: {t!r} is not a friendly type")
        else:
            static = tuple(t for t in self.schema.friendly
                           if ("e" + t[1:] if t.startswith("f") else t)
                           in self.schema.enemy_building)
        mobile = tuple(t for t in self.schema.friendly if t not in static)
        return mobile, static

    def to_dict(self) -> dict:
        d = {"schema": self.schema.to_dict(), "map_extent": self.map_extent,
             "grid_size": self.grid_size, "episodes": self.episodes,
             "ticks": self.ticks, "stride": self.stride,
             "combat_range": list(self.combat_range),
             "building_range": list(self.building_range),
             "waypoint_prob": self.waypoint_prob, "speed": self.speed,
             "sight_radius": self.sight_radius,
             "friendly_buildings": (list(self.friendly_buildings)
                                    if self.friendly_buildings is not None else None),
             "seed": self.seed}
        return d

    @staticmethod
    def from_dict(d: dict) -> "SimConfig":
        d = dict(d)
        try:
            schema = ChannelSchema.from_dict(d.pop("schema"))
        except KeyError as exc:
            raise DataError(f"sim config: missing key {exc}") from exc
        known = {f.name for f in SimConfig.__dataclass_fields__.values()} - {"schema"}
        unknown = set(d) - known
        if unknown:
            raise DataError(f"sim config: unknown keys {sorted(unknown)}")
        for key in ("combat_range", "building_range"):
            if key in d:
                d[key] = tuple(d[key])
        if d.get("friendly_buildings") is not None:
            d["friendly_buildings"] = tuple(d["friendly_buildings"])
        return SimConfig(schema=schema, **d)


@dataclass(frozen=True)
class Frame:
    tick: int
    units: tuple[Unit, ...]


@dataclass(frozen=True)
class Episode:
    index: int
    frames: tuple[Frame, ...]


@dataclass(frozen=True)
class FrameTriplet:
    xbar: GridState
    xtilde: GridState
    y: GridState
    episode: int
    tick: int


# ---------------------------------------------------------------------------
# simulation
# ---------------------------------------------------------------------------

def _spawn_counts(rng: np.random.Generator, types: tuple[str, ...],
                  count_range: tuple[int, int]) -> list[tuple[str, int]]:
    lo, hi = count_range
    return [(t, int(rng.integers(lo, hi + 1))) for t in types]


def simulate(cfg: SimConfig, episode_index: int = 0) -> Episode:
    """One deterministic episode; the rng stream is cfg.seed ^ episode_index."""
    rng = np.random.default_rng(cfg.seed ^ episode_index)
    extent = float(cfg.map_extent)
    anchors = {FRIENDLY: np.array([0.30, 0.30]) * extent,
               ENEMY: np.array([0.70, 0.70]) * extent}
    spread = 0.15 * extent

    f_mobile, f_static = cfg.friendly_split()
    sides = ((FRIENDLY, f_mobile, f_static),
             (ENEMY, tuple(cfg.schema.enemy_combat), tuple(cfg.schema.enemy_building)))

    types: list[str] = []
    owners: list[str] = []
    mobile_flags: list[bool] = []
    positions: list[np.ndarray] = []
    for owner, mobile_types, static_types in sides:
        anchor = anchors[owner]
        for t, n in _spawn_counts(rng, static_types, cfg.building_range):
            for _ in range(n):
                pos = anchor + rng.uniform(-spread, spread, 2)
                types.append(t); owners.append(owner)
                mobile_flags.append(False); positions.append(pos)
        for t, n in _spawn_counts(rng, mobile_types, cfg.combat_range):
            for _ in range(n):
                pos = anchor + rng.uniform(-spread, spread, 2)
                types.append(t); owners.append(owner)
                mobile_flags.append(True); positions.append(pos)

    n = len(types)
    pos = (np.array(positions).reshape(n, 2) if n else np.zeros((0, 2)))
    np.clip(pos, 0.0, extent - 1.0, out=pos)
    mobile = np.array(mobile_flags, dtype=bool)
    n_mobile = int(mobile.sum())
    goals = rng.uniform(0.0, extent - 1.0, (n_mobile, 2))

    frames: list[Frame] = []

    def snapshot(tick: int) -> Frame:
        units = tuple(Unit(types[i], owners[i], float(pos[i, 0]), float(pos[i, 1]))
                      for i in range(n))
        return Frame(tick, units)

    mob_idx = np.flatnonzero(mobile)
    for tick in range(cfg.ticks):
        if tick % cfg.stride == 0:
            frames.append(snapshot(tick))
        if n_mobile and cfg.speed > 0:
            repick = rng.random(n_mobile) < cfg.waypoint_prob
            if repick.any():
                goals[repick] = rng.uniform(0.0, extent - 1.0,
                                            (int(repick.sum()), 2))
            delta = goals - pos[mob_idx]
            dist = np.hypot(delta[:, 0], delta[:, 1])
            step = np.minimum(dist, cfg.speed)
            safe = np.where(dist > 0, dist, 1.0)
            pos[mob_idx] += delta / safe[:, None] * step[:, None]
            np.clip(pos, 0.0, extent - 1.0, out=pos)

    return Episode(episode_index, tuple(frames))


def simulate_all(cfg: SimConfig, threads: int = 1) -> list[Episode]:
    if threads <= 1:
        return [simulate(cfg, i) for i in range(cfg.episodes)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(lambda i: simulate(cfg, i), range(cfg.episodes)))


# ---------------------------------------------------------------------------
# dataset assembly
# ---------------------------------------------------------------------------

def split_episodes(n: int) -> dict[str, list[int]]:
    """Whole-episode 80/10/10 split; small sets keep everything in train."""
    if n < 3:
        return {"train": list(range(n)), "val": [], "test": []}
    n_val = max(1, round(n * 0.1))
    n_test = max(1, round(n * 0.1))
    n_train = n - n_val - n_test
    return {"train": list(range(n_train)),
            "val": list(range(n_train, n_train + n_val)),
            "test": list(range(n_train + n_val, n))}


@dataclass
class Dataset:
    """Frame triplets in episode order plus the split manifest."""

    schema: ChannelSchema
    grid_size: int
    xbar: np.ndarray     # [N, C_partial, H, W] float32
    xtilde: np.ndarray   # [N, C_accumulated, H, W]
    y: np.ndarray        # [N, C_truth, H, W]
    episode_of_frame: np.ndarray   # [N] int32
    tick_of_frame: np.ndarray      # [N] int32
    splits: dict[str, list[int]] = field(default_factory=dict)  # episode ids
    config_echo: dict = field(default_factory=dict)

    @property
    def n_frames(self) -> int:
        return self.xbar.shape[0]

    def split_indices(self, name: str) -> np.ndarray:
        if name not in self.splits:
            raise DataError(f"dataset: no split {name!r} "
                            f"(have {sorted(self.splits)})")
        eps = np.asarray(self.splits[name], dtype=np.int32)
        return np.flatnonzero(np.isin(self.episode_of_frame, eps))

    def split_arrays(self, name: str) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        idx = self.split_indices(name)
        return self.xbar[idx], self.xtilde[idx], self.y[idx]

    def triplet(self, i: int) -> FrameTriplet:
        if not 0 <= i < self.n_frames:
            raise DataError(f"dataset: frame {i} out of range [0, {self.n_frames})")
        return FrameTriplet(
            xbar=GridState(self.schema, "partial", self.xbar[i].copy()),
            xtilde=GridState(self.schema, "accumulated", self.xtilde[i].copy()),
            y=GridState(self.schema, "ground_truth", self.y[i].copy()),
            episode=int(self.episode_of_frame[i]),
            tick=int(self.tick_of_frame[i]))

    def triplets(self) -> Iterator[FrameTriplet]:
        for i in range(self.n_frames):
            yield self.triplet(i)


def make_dataset(episodes: list[Episode], cfg: SimConfig) -> Dataset:
    """Reduce episodes to grid-state triplets, threading the last-seen
    chain through each episode's sampled frames in order."""
    if not episodes:
        raise DataError("make_dataset: no episodes")
    schema, g = cfg.schema, cfg.grid_size
    xbars, xtildes, ys, ep_ids, ticks = [], [], [], [], []
    for ep in episodes:
        acc = None
        for frame in ep.frames:
            truth = downsample(frame.units, schema, cfg.map_extent, g)
            mask = visibility_mask(frame.units, schema, cfg.map_extent, g,
                                   cfg.sight_radius)
            xbar = apply_fog(truth, mask, schema)
            acc = accumulate(acc, truth, mask, schema)
            xbars.append(xbar.grid)
            xtildes.append(acc.grid)
            ys.append(truth.grid)
            ep_ids.append(ep.index)
            ticks.append(frame.tick)
    return Dataset(
        schema=schema, grid_size=g,
        xbar=np.stack(xbars), xtilde=np.stack(xtildes), y=np.stack(ys),
        episode_of_frame=np.asarray(ep_ids, dtype=np.int32),
        tick_of_frame=np.asarray(ticks, dtype=np.int32),
        splits=split_episodes(len(episodes)),
        config_echo=cfg.to_dict())


def generate_dataset(cfg: SimConfig, threads: int = 1) -> Dataset:
    return make_dataset(simulate_all(cfg, threads), cfg)


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

def write_dataset(ds: Dataset, path: str | Path) -> None:
    header = json.dumps({
        "schema": ds.schema.to_dict(),
        "grid_size": ds.grid_size,
        "frames": ds.n_frames,
        "episode_of_frame": ds.episode_of_frame.tolist(),
        "tick_of_frame": ds.tick_of_frame.tolist(),
        "splits": ds.splits,
        "sim_config": ds.config_echo,
        "dtype": "float32",
        "block_order": ["xbar", "xtilde", "y"],
    }, sort_keys=True).encode("utf-8")

    digest = hashlib.blake2b(digest_size=_CHECKSUM_BYTES)
    with open(path, "wb") as fh:
        for chunk in (MAGIC, struct.pack("<I", len(header)), header):
            fh.write(chunk)
            digest.update(chunk)
        for i in range(ds.n_frames):
            for block in (ds.xbar[i], ds.xtilde[i], ds.y[i]):
                raw = np.ascontiguousarray(block, dtype="<f4").tobytes()
                fh.write(raw)
                digest.update(raw)
        fh.write(digest.digest())


def read_dataset(path: str | Path) -> Dataset:
    raw = Path(path).read_bytes()
    if len(raw) < len(MAGIC) + 4 + _CHECKSUM_BYTES or raw[:len(MAGIC)] != MAGIC:
        raise DataError(f"{path}: not a {MAGIC.decode()} dataset")
    body, checksum = raw[:-_CHECKSUM_BYTES], raw[-_CHECKSUM_BYTES:]
    want = hashlib.blake2b(body, digest_size=_CHECKSUM_BYTES).digest()
    if checksum != want:
        raise DataError(f"{path}: checksum failure, file is corrupt")

    (hlen,) = struct.unpack("<I", body[5:9])
    if len(body) < 9 + hlen:
        raise DataError(f"{path}: truncated header")
    try:
        header = json.loads(body[9:9 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DataError(f"{path}: corrupt header ({exc})") from exc

    schema = ChannelSchema.from_dict(header["schema"])
    g = int(header["grid_size"])
    n = int(header["frames"])
    shapes = [(schema.c_partial, g, g), (schema.c_accumulated, g, g),
              (schema.c_truth, g, g)]
    frame_floats = sum(int(np.prod(s)) for s in shapes)
    payload = body[9 + hlen:]
    if len(payload) != n * frame_floats * 4:
        raise DataError(f"{path}: payload is {len(payload)} bytes, "
                        f"expected {n * frame_floats * 4}")
    flat = np.frombuffer(payload, dtype="<f4").reshape(n, frame_floats) \
        if n else np.zeros((0, frame_floats), dtype=np.float32)
    offsets = np.cumsum([0] + [int(np.prod(s)) for s in shapes])
    blocks = [flat[:, offsets[i]:offsets[i + 1]].reshape(n, *shapes[i]).copy()
              for i in range(3)]
    return Dataset(
        schema=schema, grid_size=g,
        xbar=blocks[0], xtilde=blocks[1], y=blocks[2],
        episode_of_frame=np.asarray(header["episode_of_frame"], dtype=np.int32),
        tick_of_frame=np.asarray(header["tick_of_frame"], dtype=np.int32),
        splits={k: list(v) for k, v in header["splits"].items()},
        config_echo=header.get("sim_config", {}))


# ---------------------------------------------------------------------------
# dataset statistics
# ---------------------------------------------------------------------------

def dataset_stats(ds: Dataset) -> dict:
    """Average per-frame existence confusion of the two reference
    predictors against ground truth, over all state channels."""
    if ds.n_frames == 0:
        raise DataError("dataset_stats: empty dataset")
    n = ds.n_frames
    out = {"frames": n,
           "cells_per_frame": ds.schema.c_truth * ds.grid_size * ds.grid_size}
    preds = {"partial": partial_predictor(ds.xbar, ds.schema),
             "accumulated": accumulated_predictor(ds.xbar, ds.xtilde, ds.schema)}
    for name, pred in preds.items():
        tp, fp, fn, tn = confusion_counts(pred, ds.y)
        out[name] = {"tp": tp / n, "fp": fp / n, "fn": fn / n, "tn": tn / n}
    return out


def format_stats(stats: dict) -> str:
    lines = [f"frames: {stats['frames']}   "
             f"cells per frame: {stats['cells_per_frame']}"]
    for name in ("partial", "accumulated"):
        c = stats[name]
        lines.append(f"{name} view vs truth (avg counts per frame)")
        lines.append(f"{'':>14}{'truth exist':>14}{'truth empty':>14}")
        lines.append(f"{'pred exist':>14}{c['tp']:>14.2f}{c['fp']:>14.2f}")
        lines.append(f"{'pred empty':>14}{c['fn']:>14.2f}{c['tn']:>14.2f}")
    return "\n".join(lines)
