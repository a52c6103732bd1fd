"""Synthetic ground-track strips and their on-disk format.

A strip is a tall thin grid of reward classes: one column per along-track
timestep, one row per cross-track pixel.  The generator lays down compact
regions of the rarest class at roughly even along-track spacing, wraps
each one in a shell of the middle class, and leaves the most prevalent
class as background.  That mimics how high-value targets actually
present: a core of the interesting stuff ringed by second-tier material,
with long quiet stretches between systems.  Class prevalence is met
exactly while keeping the spatial correlation that makes lookahead
planning worthwhile in the first place.

Binary layout (little-endian throughout):

    bytes 0..3    magic b"DTG1"
    bytes 4..7    u32 height
    bytes 8..11   u32 length
    bytes 12..15  f32 pixel size in km
    bytes 16..    one class byte per cell, column by column

An optional sidecar ``<path>.manifest`` holds UTF-8 ``key=value`` lines
describing how the strip was produced.  It is informational only; loading
never reads it.
"""
from __future__ import annotations

import hashlib
import math
import struct
from dataclasses import dataclass, field
from enum import IntEnum
from pathlib import Path
from typing import Mapping, Optional, Sequence, Tuple

import numpy as np

from .errors import FormatError, ParameterError

MAGIC = b"DTG1"
HEADER = struct.Struct("<4sIIf")

# Refuse files whose header claims an absurd cell count before touching
# the payload.  2^31 cells is ~2 GiB, far past anything we simulate.
MAX_CELLS = 1 << 31


class RewardClass(IntEnum):
    """Reward tier of a single ground pixel, lowest to highest value."""

    LOW = 0
    MID = 1
    HIGH = 2


N_CLASSES = 3


@dataclass(frozen=True)
class RewardModel:
    """Per-class sample rewards plus the scenario's display names.

    The off reward is pinned to zero and the tiers must increase
    strictly, so the class order is also the reward order everywhere.
    """

    reward_low: float = 1.0
    reward_mid: float = 10.0
    reward_high: float = 100.0
    scenario: str = "cloud_avoidance"

    reward_off: float = 0.0

    def __post_init__(self):
        if self.reward_off != 0.0:
            raise ParameterError("off reward is fixed at 0")
        if not (self.reward_low < self.reward_mid < self.reward_high):
            raise ParameterError(
                "rewards must increase strictly: "
                f"{self.reward_low}, {self.reward_mid}, {self.reward_high}"
            )

    def values(self) -> np.ndarray:
        """Rewards indexed by RewardClass, as float32."""
        return np.array(
            [self.reward_low, self.reward_mid, self.reward_high], dtype=np.float32
        )

    def value_of(self, cls: RewardClass) -> float:
        return float(self.values()[int(cls)])

    def class_names(self) -> Tuple[str, str, str]:
        """Human names for the three tiers under this scenario label."""
        if self.scenario == "storm_hunting":
            return ("no_storm", "rainy_anvil", "convective_core")
        return ("cloud", "mid_cloud", "clear")


@dataclass
class EnvStrip:
    """Immutable class grid of shape (height, length).

    ``cells[r, c]`` is the RewardClass value of cross-track row ``r`` at
    along-track column ``c`` (column ``c`` is timestep ``c + 1``).
    Height must be odd so the nadir row is exact.
    """

    cells: np.ndarray
    pixel_size_km: float = 7.0

    # per-geometry summaries attached lazily by the simulator
    _caches: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        cells = np.ascontiguousarray(self.cells, dtype=np.uint8)
        if cells.ndim != 2:
            raise ParameterError(f"cells must be 2-D, got shape {cells.shape}")
        h, t = cells.shape
        if h < 1 or t < 1:
            raise ParameterError(f"empty strip: shape {cells.shape}")
        if h % 2 == 0:
            raise ParameterError(f"height must be odd, got {h}")
        if cells.size and int(cells.max()) >= N_CLASSES:
            raise ParameterError("cell values must be 0, 1 or 2")
        if not (self.pixel_size_km > 0):
            raise ParameterError(f"pixel size must be positive, got {self.pixel_size_km}")
        cells.flags.writeable = False
        self.cells = cells
        # keep what a float32 header round-trips, so save/load is identity
        self.pixel_size_km = float(np.float32(self.pixel_size_km))

    @property
    def height(self) -> int:
        return self.cells.shape[0]

    @property
    def length(self) -> int:
        return self.cells.shape[1]

    @property
    def center_row(self) -> int:
        return self.cells.shape[0] // 2

    def digest(self) -> str:
        """Content hash used to key caches and cross-check artifacts."""
        h = hashlib.sha256()
        h.update(HEADER.pack(MAGIC, self.height, self.length, self.pixel_size_km))
        h.update(self.cells.tobytes(order="F"))
        return h.hexdigest()


@dataclass(frozen=True)
class GenParams:
    """Knobs for the synthetic generator.

    ``prevalence`` is the target fraction of each class; targets are met
    exactly up to integer rounding.  ``blob_radius`` sets the mean region
    radius in pixels per class: for the rarest class it fixes the core
    size (and through it the core count), for classes grown standalone it
    is the mean blob radius, and for the background class it is unused.
    The shell class takes no radius; its thickness follows from how much
    prevalence budget it has to spread around the cores.
    """

    height: int = 31
    length: int = 10000
    prevalence: Tuple[float, float, float] = (0.64, 0.26, 0.10)
    blob_radius: Tuple[float, float, float] = (3.0, 4.0, 14.0)
    pixel_size_km: float = 7.0
    seed: int = 0

    def __post_init__(self):
        if self.height < 1 or self.height % 2 == 0:
            raise ParameterError(f"height must be odd and positive, got {self.height}")
        if self.length < 1:
            raise ParameterError(f"length must be positive, got {self.length}")
        for p in self.prevalence:
            if not (0.0 <= p <= 1.0):
                raise ParameterError(f"prevalence entries must lie in [0, 1]: {self.prevalence}")
        if abs(sum(self.prevalence) - 1.0) > 1e-9:
            raise ParameterError(f"prevalence must sum to 1, got {sum(self.prevalence)}")
        for r in self.blob_radius:
            if not (r > 0):
                raise ParameterError(f"blob radii must be positive: {self.blob_radius}")


# ---------------------------------------------------------------------------
# generation
# ---------------------------------------------------------------------------

_NEIGH = ((-1, 0), (1, 0), (0, -1), (0, 1))


def _grow_region(grid, cls, budget, background, rng, frontier, placed=0) -> int:
    """Claim up to ``budget`` background cells reachable from ``frontier``.

    Frontier cells themselves are never claimed, only their background
    neighbours, so the same loop grows a blob from one seed or a shell
    from every boundary cell of an existing region.  Growth order is
    randomized for organic edges.  Returns the claimed-cell count.
    """
    h, w = grid.shape
    while placed < budget and frontier:
        i = int(rng.integers(len(frontier)))
        frontier[i], frontier[-1] = frontier[-1], frontier[i]
        r, c = frontier.pop()
        for dr, dc in _NEIGH:
            nr, nc = r + dr, c + dc
            if 0 <= nr < h and 0 <= nc < w and grid[nr, nc] == background:
                grid[nr, nc] = cls
                placed += 1
                frontier.append((nr, nc))
                if placed == budget:
                    break
    return placed


def _grow_blob(grid, cls, budget, background, rng) -> int:
    """Claim up to ``budget`` background cells as one connected region.

    Returns the number of cells actually claimed (0 if no background cell
    is left to seed from).
    """
    h, w = grid.shape
    # rejection-sample a seed; fall back to a full scan when the board is
    # nearly full so termination never depends on luck
    for _ in range(64):
        r = int(rng.integers(h))
        c = int(rng.integers(w))
        if grid[r, c] == background:
            seed = (r, c)
            break
    else:
        free = np.argwhere(grid == background)
        if len(free) == 0:
            return 0
        seed = tuple(free[int(rng.integers(len(free)))])

    grid[seed] = cls
    return _grow_region(grid, cls, budget, background, rng, [seed], placed=1)


def _fill_scattered(grid, cls, need, mean_radius, background, rng) -> None:
    """Place ``need`` cells of ``cls`` as standalone blobs of random size."""
    while need > 0:
        radius = max(1.0, rng.exponential(mean_radius))
        size = min(need, max(1, int(round(math.pi * radius * radius))))
        placed = _grow_blob(grid, cls, size, background, rng)
        if placed == 0:
            raise ParameterError("no background cells left while placing blobs")
        need -= placed


def _place_cores(grid, cls, count, radius, background, rng) -> None:
    """Grow ``count`` cells of ``cls`` as evenly spaced compact cores.

    Core size is set by ``radius``; the along-track pitch follows from
    the cell budget.  Spacing jitter stays under a quarter pitch so cores
    never crowd together, which keeps the stretches between them quiet.
    """
    h, w = grid.shape
    area = math.pi * radius * radius
    n = max(1, int(round(count / area)))
    pitch = w / n
    margin = min(h // 2, int(round(radius)))
    share, extra = divmod(count, n)
    carry = 0
    for i in range(n):
        budget = share + (1 if i < extra else 0) + carry
        if budget <= 0:
            continue
        cx = int((i + 0.5) * pitch + (rng.random() - 0.5) * 0.5 * pitch)
        cx = min(max(cx, 0), w - 1)
        cy = int(rng.integers(margin, h - margin)) if margin < h - margin else h // 2
        while grid[cy, cx] != background:
            cx = (cx + 1) % w
        grid[cy, cx] = cls
        placed = _grow_region(grid, cls, budget, background, rng, [(cy, cx)], placed=1)
        carry = budget - placed
    if carry > 0:
        _fill_scattered(grid, cls, carry, radius, background, rng)


def generate_synthetic(params: GenParams) -> EnvStrip:
    """Grow a strip matching ``params`` exactly in per-class cell counts.

    The most prevalent class becomes the background.  With two foreground
    classes, the rarer one is laid down as spaced cores and the other is
    grown outward from every core boundary at once, forming shells whose
    thickness comes out of its prevalence budget.  A lone foreground
    class is scattered as standalone blobs.  Deterministic in
    ``params.seed``.
    """
    h, w = params.height, params.length
    total = h * w
    counts = [int(round(p * total)) for p in params.prevalence]
    # rounding drift goes to the background class
    background = int(np.argmax(counts))
    counts[background] += total - sum(counts)
    if counts[background] < 0:
        raise ParameterError("prevalence rounding produced a negative count")

    rng = np.random.default_rng(params.seed)
    grid = np.full((h, w), background, dtype=np.uint8)

    others = [c for c in range(N_CLASSES) if c != background and counts[c] > 0]
    others.sort(key=lambda c: (counts[c], c))
    if len(others) == 2:
        core_cls, shell_cls = others
        _place_cores(grid, core_cls, counts[core_cls],
                     params.blob_radius[core_cls], background, rng)
        frontier = [tuple(rc) for rc in np.argwhere(grid == core_cls)]
        placed = _grow_region(grid, shell_cls, counts[shell_cls],
                              background, rng, frontier)
        if placed < counts[shell_cls]:
            _fill_scattered(grid, shell_cls, counts[shell_cls] - placed,
                            params.blob_radius[shell_cls], background, rng)
    elif len(others) == 1:
        cls = others[0]
        _fill_scattered(grid, cls, counts[cls],
                        params.blob_radius[cls], background, rng)

    return EnvStrip(grid, pixel_size_km=params.pixel_size_km)


def class_fractions(strip: EnvStrip) -> Tuple[float, float, float]:
    """Fraction of cells in each class; always sums to 1."""
    counts = np.bincount(strip.cells.ravel(), minlength=N_CLASSES)
    frac = counts / strip.cells.size
    return (float(frac[0]), float(frac[1]), float(frac[2]))


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

def save_dataset(strip: EnvStrip, path, manifest: Optional[Mapping[str, object]] = None) -> None:
    """Write ``strip`` to ``path``; optionally write a manifest sidecar."""
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(HEADER.pack(MAGIC, strip.height, strip.length, strip.pixel_size_km))
        fh.write(strip.cells.tobytes(order="F"))
    if manifest is not None:
        lines = [f"{k}={v}\n" for k, v in manifest.items()]
        Path(str(path) + ".manifest").write_text("".join(lines), encoding="utf-8")


def load_dataset(path) -> EnvStrip:
    """Read a strip written by :func:`save_dataset`.

    Raises FormatError naming the byte offset on a bad magic, truncated
    header or payload, trailing bytes, nonsense dimensions, or an invalid
    class byte.
    """
    data = Path(path).read_bytes()
    if len(data) < 4 or data[:4] != MAGIC:
        raise FormatError(f"bad magic, expected {MAGIC!r}", offset=0)
    if len(data) < HEADER.size:
        raise FormatError("truncated header", offset=len(data))
    _, h, w, px = HEADER.unpack_from(data, 0)
    if h == 0 or w == 0 or h * w > MAX_CELLS:
        raise FormatError(f"unreasonable dimensions {h}x{w}", offset=4)
    expected = HEADER.size + h * w
    if len(data) < expected:
        raise FormatError("truncated payload", offset=len(data))
    if len(data) > expected:
        raise FormatError("trailing bytes after payload", offset=expected)
    flat = np.frombuffer(data, dtype=np.uint8, count=h * w, offset=HEADER.size)
    bad = np.nonzero(flat >= N_CLASSES)[0]
    if bad.size:
        raise FormatError(
            f"invalid class byte {flat[bad[0]]}", offset=HEADER.size + int(bad[0])
        )
    cells = flat.reshape((w, h)).T
    return EnvStrip(cells, pixel_size_km=float(px))
