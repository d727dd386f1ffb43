"""Channelized grid-state encoding and the transforms between views.

A :class:`ChannelSchema` maps unit-type names to tensor channels.  The
full state of a skirmish at one tick is a non-negative count tensor
[C,H,W]; different views of that state (ground truth, the fogged partial
observation, the accumulated last-seen enemy map, the concatenated
network input) differ only in which channel blocks they carry:

    ground truth  y      [friendly | enemy combat | enemy building]
    partial       xbar   [friendly | visible enemy combat]
    accumulated   xtilde [last-seen enemy combat | last-seen enemy building]
    input         x      [xbar | xtilde]
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Iterable, NamedTuple

import numpy as np

from .errors import DataError

FRIENDLY = "friendly"
ENEMY = "enemy"

KINDS = ("ground_truth", "partial", "accumulated", "input", "predicted")


class Unit(NamedTuple):
    type: str
    owner: str  # FRIENDLY or ENEMY
    x: float    # pixels, map coordinates
    y: float


@dataclass(frozen=True)
class ChannelSchema:
    """Ordered unit-type names per channel group, plus derived counts."""

    friendly: tuple[str, ...]
    enemy_combat: tuple[str, ...]
    enemy_building: tuple[str, ...]

    def __post_init__(self):
        names = list(self.friendly) + list(self.enemy_combat) + list(self.enemy_building)
        if not names:
            raise DataError("schema: no channels defined")
        dupes = {n for n in names if names.count(n) > 1}
        if dupes:
            raise DataError(f"schema: duplicate type names {sorted(dupes)}")

    # -- channel arithmetic -------------------------------------------------

    @property
    def n_friendly(self) -> int:
        return len(self.friendly)

    @property
    def n_enemy_combat(self) -> int:
        return len(self.enemy_combat)

    @property
    def n_enemy_building(self) -> int:
        return len(self.enemy_building)

    @property
    def n_enemy(self) -> int:
        return self.n_enemy_combat + self.n_enemy_building

    @property
    def c_truth(self) -> int:
        return self.n_friendly + self.n_enemy

    @property
    def c_partial(self) -> int:
        return self.n_friendly + self.n_enemy_combat

    @property
    def c_accumulated(self) -> int:
        return self.n_enemy

    @property
    def c_input(self) -> int:
        return self.c_partial + self.c_accumulated

    def channels_for_kind(self, kind: str) -> int:
        table = {"ground_truth": self.c_truth, "partial": self.c_partial,
                 "accumulated": self.c_accumulated, "input": self.c_input,
                 "predicted": self.c_truth}
        if kind not in table:
            raise DataError(f"schema: unknown state kind {kind!r}")
        return table[kind]

    def truth_channel(self, unit_type: str) -> int:
        """Channel of a type in ground-truth layout."""
        if unit_type in self._index:
            return self._index[unit_type]
        raise DataError(f"schema: unknown unit type {unit_type!r}")

    @property
    def _index(self) -> dict[str, int]:
        # tiny, rebuilt on demand; frozen dataclass keeps no mutable cache
        order = list(self.friendly) + list(self.enemy_combat) + list(self.enemy_building)
        return {n: i for i, n in enumerate(order)}

    def owner_of(self, unit_type: str) -> str:
        if unit_type in self.friendly:
            return FRIENDLY
        if unit_type in self.enemy_combat or unit_type in self.enemy_building:
            return ENEMY
        raise DataError(f"schema: unknown unit type {unit_type!r}")

    # -- serialization --------------------------------------------------------

    def to_dict(self) -> dict:
        return {"friendly": list(self.friendly),
                "enemy_combat": list(self.enemy_combat),
                "enemy_building": list(self.enemy_building)}

    @staticmethod
    def from_dict(d: dict) -> "ChannelSchema":
        try:
            return ChannelSchema(tuple(d["friendly"]), tuple(d["enemy_combat"]),
                                 tuple(d["enemy_building"]))
        except KeyError as exc:
            raise DataError(f"schema: missing group {exc}") from exc


def load_schema(spec: str | Path) -> ChannelSchema:
    """Load a schema from a JSON path or a shipped name (e.g. ``desk16``)."""
    path = Path(spec)
    if path.suffix == ".json" and path.exists():
        return ChannelSchema.from_dict(json.loads(path.read_text()))
    name = f"schema_{spec}.json"
    try:
        text = resources.files("defog.resources").joinpath(name).read_text()
    except (FileNotFoundError, ModuleNotFoundError) as exc:
        raise DataError(f"schema: no file {spec!r} and no shipped schema {name!r}") from exc
    return ChannelSchema.from_dict(json.loads(text))


@dataclass(frozen=True)
class GridState:
    """One view of the world at one tick: [C,H,W] non-negative counts."""

    schema: ChannelSchema
    kind: str
    grid: np.ndarray

    def __post_init__(self):
        want = self.schema.channels_for_kind(self.kind)
        if self.grid.ndim != 3 or self.grid.shape[0] != want:
            raise DataError(
                f"state: kind {self.kind!r} wants {want} channels, "
                f"got tensor shape {self.grid.shape}")
        if self.grid.min(initial=0.0) < 0:
            raise DataError(f"state: negative counts in {self.kind!r} tensor")
        self.grid.flags.writeable = False

    @property
    def size(self) -> int:
        return self.grid.shape[1]


def _as_grid(a: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(a, dtype=np.float32)


# ---------------------------------------------------------------------------
# view transforms
# ---------------------------------------------------------------------------

def downsample(units: Iterable[Unit], schema: ChannelSchema, map_extent: int,
               grid_size: int) -> GridState:
    """Count units per cell per type channel.

    A unit at pixel (x, y) lands in column x*grid/extent, row y*grid/extent;
    total count per type is preserved.
    """
    grid = np.zeros((schema.c_truth, grid_size, grid_size), dtype=np.float32)
    for u in units:
        ch = schema.truth_channel(u.type)
        if not (0 <= u.x < map_extent and 0 <= u.y < map_extent):
            raise DataError(f"state: unit {u.type!r} at ({u.x}, {u.y}) "
                            f"outside map extent {map_extent}")
        col = int(u.x * grid_size // map_extent)
        row = int(u.y * grid_size // map_extent)
        grid[ch, row, col] += 1.0
    return GridState(schema, "ground_truth", grid)


def visibility_mask(units: Iterable[Unit], schema: ChannelSchema, map_extent: int,
                    grid_size: int, sight_radius: dict[str, int] | int = 1) -> np.ndarray:
    """Cells seen by the friendly side: Chebyshev radius around each
    friendly unit (per-type radius, or one number for all types)."""
    mask = np.zeros((grid_size, grid_size), dtype=bool)
    for u in units:
        if u.owner != FRIENDLY:
            continue
        r = sight_radius if isinstance(sight_radius, int) else sight_radius.get(u.type, 1)
        col = int(u.x * grid_size // map_extent)
        row = int(u.y * grid_size // map_extent)
        mask[max(0, row - r):row + r + 1, max(0, col - r):col + r + 1] = True
    return mask


def apply_fog(y: GridState, mask: np.ndarray, schema: ChannelSchema) -> GridState:
    """Fogged current frame: friendly verbatim, enemy combat only where
    seen, enemy buildings dropped entirely."""
    _check_truth(y, mask, schema)
    f, ec = schema.n_friendly, schema.n_enemy_combat
    out = np.zeros((schema.c_partial, *mask.shape), dtype=np.float32)
    out[:f] = y.grid[:f]
    out[f:f + ec] = np.where(mask, y.grid[f:f + ec], 0.0)
    return GridState(schema, "partial", out)


def accumulate(prev: GridState | None, y: GridState, mask: np.ndarray,
               schema: ChannelSchema) -> GridState:
    """Fold the current frame into the last-seen enemy map.

    Seen cells take the current true count, zero included, so observing
    an empty cell erases a stale enemy recorded there.  Unseen cells keep
    their previous value.  Friendly channels are not part of this view.
    """
    _check_truth(y, mask, schema)
    f = schema.n_friendly
    current_enemy = y.grid[f:]
    if prev is None:
        previous = np.zeros_like(current_enemy)
    else:
        if prev.kind != "accumulated" or prev.schema != schema:
            raise DataError("state: accumulate needs a previous accumulated view "
                            "of the same schema")
        previous = prev.grid
    out = np.where(mask, current_enemy, previous).astype(np.float32)
    return GridState(schema, "accumulated", out)


def concat_input(xbar: GridState, xtilde: GridState) -> GridState:
    """Stack the fogged frame on top of the last-seen map, channel-wise."""
    if xbar.schema != xtilde.schema:
        raise DataError("state: concat across different schemas")
    if xbar.kind != "partial" or xtilde.kind != "accumulated":
        raise DataError(f"state: concat wants (partial, accumulated), "
                        f"got ({xbar.kind!r}, {xtilde.kind!r})")
    if xbar.grid.shape[1:] != xtilde.grid.shape[1:]:
        raise DataError(f"state: grid extents differ, {xbar.grid.shape[1:]} "
                        f"vs {xtilde.grid.shape[1:]}")
    return GridState(xbar.schema, "input",
                     np.concatenate([xbar.grid, xtilde.grid], axis=0))


def observation_prior(x: np.ndarray, schema: ChannelSchema) -> np.ndarray:
    """Deterministic last-known-state estimate in ground-truth layout.

    Friendly channels come from the fogged block (always fully observed),
    every enemy channel comes from the last-seen block.  Works on [C,H,W]
    or batched [N,C,H,W] input tensors.
    """
    cx, f = schema.c_input, schema.n_friendly
    if x.shape[-3] != cx:
        raise DataError(f"state: input tensor has {x.shape[-3]} channels, "
                        f"schema wants {cx}")
    friendly = x[..., :f, :, :]
    enemy = x[..., schema.c_partial:, :, :]
    return np.concatenate([friendly, enemy], axis=-3)


def split_input(x: np.ndarray, schema: ChannelSchema) -> tuple[np.ndarray, np.ndarray]:
    """Inverse of concat_input on the raw tensor: (partial, accumulated)."""
    return x[..., :schema.c_partial, :, :], x[..., schema.c_partial:, :, :]


def _check_truth(y: GridState, mask: np.ndarray, schema: ChannelSchema) -> None:
    if y.kind != "ground_truth" or y.schema != schema:
        raise DataError(f"state: expected ground truth of the given schema, "
                        f"got kind {y.kind!r}")
    if mask.shape != y.grid.shape[1:] or mask.dtype != bool:
        raise DataError(f"state: mask shape {mask.shape} does not cover "
                        f"grid {y.grid.shape[1:]}")
