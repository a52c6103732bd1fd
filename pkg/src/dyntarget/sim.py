"""Satellite along-track simulator.

One timestep is one along-track column.  The platform either idles (Off,
recharging) or takes one sample (Sample, net discharge) placed by a fixed
rule inside the instrument footprint.  State is just (timestep, charge),
which is what makes exact dynamic programming tractable downstream.

Geometry is a nadir-centered pointing cone over a flat pixel grid: the
instrument can reach any pixel within ``radar_radius_px`` of nadir, and a
forward imager previews the next ``lookahead_len_px`` columns.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from enum import IntEnum
from functools import lru_cache
from pathlib import Path
from typing import List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from .errors import EpisodeError, InfeasibleActionError, ParameterError
from .world import EnvStrip, N_CLASSES, RewardClass, RewardModel

SOC_MAX = 100
N_SOC = SOC_MAX + 1


class Action(IntEnum):
    OFF = 0
    SAMPLE = 1


class Placement(IntEnum):
    """Where a policy is allowed to place its sample.

    Simple heuristics are deliberately restricted: pointing straight down
    (NADIR), anywhere on the current cross-track line (LATERAL), or
    anywhere in the full reachable disc (DISC).
    """

    NADIR = 0
    LATERAL = 1
    DISC = 2


@dataclass(frozen=True)
class SensorGeometry:
    """Viewing geometry; pixel reach is derived from angles and altitude."""

    altitude_km: float = 400.0
    radar_half_angle_deg: float = 15.0
    lookahead_half_angle_deg: float = 45.0
    pixel_size_km: float = 7.0

    def __post_init__(self):
        if not (self.altitude_km > 0):
            raise ParameterError(f"altitude must be positive, got {self.altitude_km}")
        if not (self.pixel_size_km > 0):
            raise ParameterError(f"pixel size must be positive, got {self.pixel_size_km}")
        if not (0.0 < self.radar_half_angle_deg < 90.0):
            raise ParameterError(f"radar half-angle out of (0, 90): {self.radar_half_angle_deg}")
        if not (self.radar_half_angle_deg < self.lookahead_half_angle_deg < 90.0):
            raise ParameterError(
                "lookahead half-angle must exceed the radar half-angle and stay below 90"
            )

    @property
    def radar_radius_px(self) -> int:
        """Reach of the instrument from nadir, in whole pixels."""
        reach = self.altitude_km * math.tan(math.radians(self.radar_half_angle_deg))
        return int(round(reach / self.pixel_size_km))

    @property
    def lookahead_len_px(self) -> int:
        """How many upcoming columns the forward imager previews."""
        reach = self.altitude_km * math.tan(math.radians(self.lookahead_half_angle_deg))
        return int(round(reach / self.pixel_size_km))

    @classmethod
    def from_pixels(
        cls,
        radar_radius_px: int,
        lookahead_len_px: int,
        altitude_km: float = 400.0,
        pixel_size_km: float = 7.0,
    ) -> "SensorGeometry":
        """Build a geometry whose derived pixel reach equals the arguments."""
        if radar_radius_px < 1:
            raise ParameterError(f"radar radius must be >= 1, got {radar_radius_px}")
        if lookahead_len_px <= radar_radius_px:
            raise ParameterError("lookahead length must exceed the radar radius")
        radar = math.degrees(math.atan(radar_radius_px * pixel_size_km / altitude_km))
        look = math.degrees(math.atan(lookahead_len_px * pixel_size_km / altitude_km))
        geom = cls(altitude_km, radar, look, pixel_size_km)
        assert geom.radar_radius_px == radar_radius_px
        assert geom.lookahead_len_px == lookahead_len_px
        return geom

    def cache_key(self) -> tuple:
        return (
            self.altitude_km,
            self.radar_half_angle_deg,
            self.lookahead_half_angle_deg,
            self.pixel_size_km,
        )


@dataclass(frozen=True)
class EnergyModel:
    """Charge bookkeeping in integer percent of capacity.

    Every step adds ``recharge_per_step``; a sample first costs
    ``sample_discharge``.  A sample is feasible only when the current
    charge covers its full cost.
    """

    sample_discharge: int = 5
    recharge_per_step: int = 1

    def __post_init__(self):
        if not (0 < self.recharge_per_step < self.sample_discharge <= SOC_MAX):
            raise ParameterError(
                f"need 0 < recharge < discharge <= {SOC_MAX}, got "
                f"{self.recharge_per_step}, {self.sample_discharge}"
            )

    def feasible(self, soc: int, action: Action) -> bool:
        return action == Action.OFF or soc >= self.sample_discharge


@dataclass(frozen=True)
class SatState:
    """Platform state entering timestep ``t`` (1-based)."""

    t: int
    soc: int

    def __post_init__(self):
        if self.t < 1:
            raise ParameterError(f"timestep must be >= 1, got {self.t}")
        if not (0 <= self.soc <= SOC_MAX):
            raise ParameterError(f"soc out of [0, {SOC_MAX}]: {self.soc}")


def soc_transition(energy: EnergyModel, soc: int, action: Action) -> int:
    """Charge after one step; raises on an unaffordable sample."""
    if not (0 <= soc <= SOC_MAX):
        raise ParameterError(f"soc out of [0, {SOC_MAX}]: {soc}")
    if action == Action.OFF:
        return min(soc + energy.recharge_per_step, SOC_MAX)
    if soc < energy.sample_discharge:
        raise InfeasibleActionError(
            f"sample needs {energy.sample_discharge}% charge, have {soc}%"
        )
    return min(max(soc - energy.sample_discharge + energy.recharge_per_step, 0), SOC_MAX)


@lru_cache(maxsize=32)
def disc_offsets(radius: int) -> Tuple[Tuple[int, int, int], ...]:
    """Footprint offsets (dist2, drow, dcol) sorted by the placement rule:
    distance first, then smaller row, then smaller column."""
    out = []
    for dr in range(-radius, radius + 1):
        for dc in range(-radius, radius + 1):
            d2 = dr * dr + dc * dc
            if d2 <= radius * radius:
                out.append((d2, dr, dc))
    out.sort()
    return tuple(out)


# ---------------------------------------------------------------------------
# per-strip summaries
# ---------------------------------------------------------------------------

class StripIndex:
    """Column-wise views of one strip under one geometry.

    Everything a per-step decision needs is precomputed here as flat
    arrays indexed by 0-based column, so episode loops stay O(1) per
    step.  Instances are cached on the strip keyed by geometry.
    """

    def __init__(self, strip: EnvStrip, geom: SensorGeometry):
        self.strip = strip
        self.geom = geom
        h, t = strip.height, strip.length
        center = strip.center_row
        r = geom.radar_radius_px
        look = geom.lookahead_len_px
        cells = strip.cells

        eq = np.stack([cells == c for c in range(N_CLASSES)])  # (3, H, T)
        colcnt = eq.sum(axis=1, dtype=np.int32)  # (3, T)

        rowcum = np.zeros((N_CLASSES, h + 1, t), dtype=np.int32)
        np.cumsum(eq, axis=1, dtype=np.int32, out=rowcum[:, 1:, :])

        def band(k: int) -> np.ndarray:
            a = max(0, center - k)
            b = min(h - 1, center + k)
            return rowcum[:, b + 1, :] - rowcum[:, a, :]

        def band_height(k: int) -> int:
            return min(h - 1, center + k) - max(0, center - k) + 1

        radar_cnt = np.zeros((N_CLASSES, t), dtype=np.int32)
        fp_size = np.zeros(t, dtype=np.int32)
        for dx in range(-r, r + 1):
            if abs(dx) >= t:  # whole shifted band falls off a short strip
                continue
            k = math.isqrt(r * r - dx * dx)
            bc = band(k)
            if dx >= 0:
                radar_cnt[:, : t - dx] += bc[:, dx:]
                fp_size[: t - dx] += band_height(k)
            else:
                radar_cnt[:, -dx:] += bc[:, : t + dx]
                fp_size[-dx:] += band_height(k)

        self.radar_count = radar_cnt
        self.footprint_size = fp_size
        self.radar_presence = radar_cnt > 0
        self.radar_fraction = radar_cnt / fp_size
        self.radar_best = np.where(
            self.radar_presence[2], 2, np.where(self.radar_presence[1], 1, 0)
        ).astype(np.uint8)

        lat_cnt = band(r)
        self.lateral_best = np.where(
            lat_cnt[2] > 0, 2, np.where(lat_cnt[1] > 0, 1, 0)
        ).astype(np.uint8)
        self.nadir_class = cells[center, :].copy()

        # lookahead windows: columns t0+1 .. min(t0 + look, T-1) inclusive
        ccum = np.zeros((N_CLASSES, t + 1), dtype=np.int64)
        np.cumsum(colcnt, axis=1, out=ccum[:, 1:])
        idx = np.arange(t)
        self.win_lo = np.minimum(idx + 1, t)
        self.win_hi1 = np.minimum(idx + look + 1, t)
        self.win_cols = self.win_hi1 - self.win_lo
        look_cnt = ccum[:, self.win_hi1] - ccum[:, self.win_lo]
        self.look_presence = look_cnt > 0
        win_cells = (self.win_cols * h).astype(np.float64)
        self.look_fraction = np.divide(
            look_cnt, win_cells, out=np.zeros((N_CLASSES, t)), where=win_cells > 0
        )

        bits = self.radar_presence.astype(np.uint8)
        lbits = self.look_presence.astype(np.uint8)
        self.qflag = (
            bits[0] + 2 * bits[1] + 4 * bits[2] + 8 * lbits[0] + 16 * lbits[1] + 32 * lbits[2]
        ).astype(np.uint8)

        col_any = colcnt > 0
        self.column_best = np.where(col_any[2], 2, np.where(col_any[1], 1, 0)).astype(np.uint8)
        iscls = np.stack([self.column_best == c for c in range(N_CLASSES)])
        self.win_best_cum = np.zeros((N_CLASSES, t + 1), dtype=np.int64)
        np.cumsum(iscls, axis=1, out=self.win_best_cum[:, 1:])

        self._col_any = col_any
        self._bc_extra = None

    # -- queries used by behavioral-cloning features ----------------------

    def bc_extras(self) -> Tuple[np.ndarray, np.ndarray]:
        """(nearest_norm, earliest_norm), both (3, T) in [0, 1].

        nearest_norm: distance from nadir to the closest footprint pixel
        of each class, over the radar radius; 1.0 when the class is
        absent from the footprint.  earliest_norm: offset of the first
        lookahead column containing each class, over the lookahead
        length; 1.0 when absent from the window.  Built lazily, only the
        cloning path pays for it.
        """
        if self._bc_extra is not None:
            return self._bc_extra
        strip, geom = self.strip, self.geom
        h, t = strip.height, strip.length
        center = strip.center_row
        r = geom.radar_radius_px
        look = geom.lookahead_len_px
        eq = np.stack([strip.cells == c for c in range(N_CLASSES)])

        near = np.ones((N_CLASSES, t))
        found = np.zeros((N_CLASSES, t), dtype=bool)
        norm = max(r, 1)
        ring_d2 = None
        ring_any = np.zeros((N_CLASSES, t), dtype=bool)
        offsets = list(disc_offsets(r)) + [(None, 0, 0)]  # sentinel flushes last ring
        for d2, dr, dc in offsets:
            if d2 != ring_d2:
                if ring_d2 is not None:
                    newly = ring_any & ~found
                    near[newly] = math.sqrt(ring_d2) / norm
                    found |= ring_any
                ring_any = np.zeros((N_CLASSES, t), dtype=bool)
                ring_d2 = d2
            if d2 is None:
                break
            row = center + dr
            if not (0 <= row < h) or abs(dc) >= t:
                continue
            if dc >= 0:
                ring_any[:, : t - dc] |= eq[:, row, dc:]
            else:
                ring_any[:, -dc:] |= eq[:, row, : t + dc]

        sentinel = t  # "no occurrence" marker past the last column
        pos = np.where(self._col_any, np.arange(t)[None, :], sentinel)
        nxt = np.full((N_CLASSES, t + 1), sentinel, dtype=np.int64)
        nxt[:, :t] = np.minimum.accumulate(pos[:, ::-1], axis=1)[:, ::-1]
        first = nxt[:, self.win_lo]  # (3, T)
        present = first < self.win_hi1[None, :]
        earliest = np.where(present, (first - self.win_lo[None, :]) / look, 1.0)

        self._bc_extra = (near, earliest)
        return self._bc_extra


def strip_index(strip: EnvStrip, geom: SensorGeometry) -> StripIndex:
    """Summaries for (strip, geom), built once and cached on the strip."""
    key = geom.cache_key()
    idx = strip._caches.get(key)
    if idx is None:
        idx = StripIndex(strip, geom)
        strip._caches[key] = idx
    return idx


# ---------------------------------------------------------------------------
# observations and stepping
# ---------------------------------------------------------------------------

@dataclass
class Observation:
    """What a policy sees entering timestep ``t``: both sensor views plus
    its own charge.  Heavy views are materialized only on access."""

    strip: EnvStrip
    geom: SensorGeometry
    t: int
    soc: int
    index: StripIndex = field(repr=False, default=None)

    def __post_init__(self):
        if not (1 <= self.t <= self.strip.length):
            raise IndexError(f"timestep {self.t} outside 1..{self.strip.length}")
        if not (0 <= self.soc <= SOC_MAX):
            raise ParameterError(f"soc out of [0, {SOC_MAX}]: {self.soc}")
        if self.index is None:
            self.index = strip_index(self.strip, self.geom)

    @property
    def radar_cells(self) -> List[Tuple[Tuple[int, int], RewardClass]]:
        """In-bounds footprint cells as ((drow, dcol), class), placement order."""
        h, w = self.strip.height, self.strip.length
        center = self.strip.center_row
        t0 = self.t - 1
        cells = self.strip.cells
        out = []
        for _, dr, dc in disc_offsets(self.geom.radar_radius_px):
            row, col = center + dr, t0 + dc
            if 0 <= row < h and 0 <= col < w:
                out.append(((dr, dc), RewardClass(cells[row, col])))
        return out

    @property
    def lookahead_cells(self) -> np.ndarray:
        """Upcoming columns, all rows; shape (H, window), empty at the end."""
        t0 = self.t - 1
        return self.strip.cells[:, self.index.win_lo[t0]: self.index.win_hi1[t0]]

    # cheap scalar queries backed by the index
    def nadir_class(self) -> RewardClass:
        return RewardClass(self.index.nadir_class[self.t - 1])

    def lateral_best_class(self) -> RewardClass:
        return RewardClass(self.index.lateral_best[self.t - 1])

    def radar_best_class(self) -> RewardClass:
        return RewardClass(self.index.radar_best[self.t - 1])

    def radar_class_presence(self) -> Tuple[bool, bool, bool]:
        p = self.index.radar_presence[:, self.t - 1]
        return (bool(p[0]), bool(p[1]), bool(p[2]))

    def lookahead_class_presence(self) -> Tuple[bool, bool, bool]:
        p = self.index.look_presence[:, self.t - 1]
        return (bool(p[0]), bool(p[1]), bool(p[2]))


def observe(
    strip: EnvStrip,
    geom: SensorGeometry,
    state: SatState,
    index: Optional[StripIndex] = None,
) -> Observation:
    """Observation for ``state``; raises IndexError past the horizon."""
    return Observation(strip, geom, state.t, state.soc, index)


class Policy:
    """Base interface: ``decide`` maps an Observation to an Action.

    ``placement`` tells the simulator where this policy's samples land;
    ``reset`` restores any internal randomness to its seeded start so
    repeated episodes are identical.
    """

    name = "policy"
    placement = Placement.DISC

    def decide(self, obs: Observation) -> Action:
        raise NotImplementedError

    def reset(self) -> None:
        pass


def best_target(
    strip: EnvStrip,
    geom: SensorGeometry,
    t: int,
    index: Optional[StripIndex] = None,
    placement: Placement = Placement.DISC,
) -> Tuple[Tuple[int, int], RewardClass]:
    """Pixel the sampler would hit at timestep ``t``.

    Highest class present wins; ties go to the pixel nearest nadir, then
    the smaller row, then the smaller column.  ``placement`` narrows the
    search to the nadir pixel or the current cross-track line.
    """
    if not (1 <= t <= strip.length):
        raise IndexError(f"timestep {t} outside 1..{strip.length}")
    if index is None:
        index = strip_index(strip, geom)
    h, w = strip.height, strip.length
    center = strip.center_row
    t0 = t - 1
    if placement == Placement.NADIR:
        return ((center, t0), RewardClass(strip.cells[center, t0]))
    if placement == Placement.LATERAL:
        cls = int(index.lateral_best[t0])
        for _, dr, dc in disc_offsets(geom.radar_radius_px):
            if dc != 0:
                continue
            row = center + dr
            if 0 <= row < h and strip.cells[row, t0] == cls:
                return ((row, t0), RewardClass(cls))
    cls = int(index.radar_best[t0])
    for _, dr, dc in disc_offsets(geom.radar_radius_px):
        row, col = center + dr, t0 + dc
        if 0 <= row < h and 0 <= col < w and strip.cells[row, col] == cls:
            return ((row, col), RewardClass(cls))
    raise AssertionError("footprint scan missed its own best class")


def sampled_class(index: StripIndex, t: int, placement: Placement) -> RewardClass:
    """Class actually sampled at timestep ``t`` under ``placement``."""
    t0 = t - 1
    if placement == Placement.NADIR:
        return RewardClass(index.nadir_class[t0])
    if placement == Placement.LATERAL:
        return RewardClass(index.lateral_best[t0])
    return RewardClass(index.radar_best[t0])


def step(
    strip: EnvStrip,
    geom: SensorGeometry,
    energy: EnergyModel,
    rewards: RewardModel,
    state: SatState,
    action: Action,
    placement: Placement = Placement.DISC,
    index: Optional[StripIndex] = None,
) -> Tuple[SatState, float, Optional[RewardClass]]:
    """Advance one timestep; returns (next state, reward, sampled class).

    Raises InfeasibleActionError on an unaffordable sample and IndexError
    past the horizon.  The next state's ``t`` may be ``length + 1``,
    which marks the episode as finished.
    """
    if not (1 <= state.t <= strip.length):
        raise IndexError(f"timestep {state.t} outside 1..{strip.length}")
    if index is None:
        index = strip_index(strip, geom)
    if action == Action.SAMPLE:
        if state.soc < energy.sample_discharge:
            raise InfeasibleActionError(
                f"sample needs {energy.sample_discharge}% charge, have {state.soc}%"
            )
        cls = sampled_class(index, state.t, placement)
        reward = rewards.value_of(cls)
    else:
        cls = None
        reward = 0.0
    next_soc = soc_transition(energy, state.soc, action)
    return SatState(state.t + 1, next_soc), reward, cls


# ---------------------------------------------------------------------------
# episodes
# ---------------------------------------------------------------------------

class StepRecord(NamedTuple):
    t: int
    soc: int            # charge entering the step
    action: Action
    sampled: Optional[RewardClass]
    reward: float


@dataclass
class EpisodeLog:
    """Full trace of one episode plus derived totals."""

    steps: List[StepRecord]
    soc0: int
    total_reward: float
    class_counts: Tuple[int, int, int]
    off_count: int
    violations: int
    mean_decide_us: float

    @property
    def n_steps(self) -> int:
        return len(self.steps)

    @property
    def off_fraction(self) -> float:
        return self.off_count / max(self.n_steps, 1)

    @property
    def sample_fraction(self) -> float:
        return 1.0 - self.off_fraction

    def class_fraction(self, cls: RewardClass) -> float:
        """Fraction of steps spent sampling the given class."""
        return self.class_counts[int(cls)] / max(self.n_steps, 1)

    def to_csv(self, path) -> None:
        lines = ["t,soc,action,class,reward\n"]
        names = ("low", "mid", "high")
        for rec in self.steps:
            cname = names[int(rec.sampled)] if rec.sampled is not None else ""
            act = "sample" if rec.action == Action.SAMPLE else "off"
            lines.append(f"{rec.t},{rec.soc},{act},{cname},{rec.reward!r}\n")
        Path(path).write_text("".join(lines), encoding="utf-8")


def run_episode(
    strip: EnvStrip,
    geom: SensorGeometry,
    energy: EnergyModel,
    rewards: RewardModel,
    policy,
    soc0: int = SOC_MAX,
    index: Optional[StripIndex] = None,
) -> EpisodeLog:
    """Run ``policy`` over the whole strip from charge ``soc0``.

    Infeasible sample requests are executed as Off and counted as
    violations, so the trace always respects the energy model.  Policies
    with a ``reset()`` are reset first; with seeded policies this makes
    repeat runs identical.  A policy exception is re-raised as
    EpisodeError naming the step.
    """
    if not (0 <= soc0 <= SOC_MAX):
        raise ParameterError(f"soc0 out of [0, {SOC_MAX}]: {soc0}")
    if index is None:
        index = strip_index(strip, geom)
    reset = getattr(policy, "reset", None)
    if reset is not None:
        reset()
    placement = getattr(policy, "placement", Placement.DISC)
    discharge = energy.sample_discharge

    steps: List[StepRecord] = []
    soc = soc0
    total = 0.0
    counts = [0, 0, 0]
    off_count = 0
    violations = 0
    decide_ns = 0
    perf = time.perf_counter_ns
    for t in range(1, strip.length + 1):
        obs = Observation(strip, geom, t, soc, index)
        t0 = perf()
        try:
            action = policy.decide(obs)
        except Exception as exc:
            raise EpisodeError(f"policy failed at step {t}: {exc}", step=t) from exc
        decide_ns += perf() - t0
        if action == Action.SAMPLE and soc < discharge:
            action = Action.OFF
            violations += 1
        if action == Action.SAMPLE:
            cls = sampled_class(index, t, placement)
            reward = rewards.value_of(cls)
            counts[int(cls)] += 1
            total += reward
        else:
            cls = None
            reward = 0.0
            off_count += 1
        steps.append(StepRecord(t, soc, Action(action), cls, reward))
        soc = soc_transition(energy, soc, action)

    return EpisodeLog(
        steps=steps,
        soc0=soc0,
        total_reward=total,
        class_counts=(counts[0], counts[1], counts[2]),
        off_count=off_count,
        violations=violations,
        mean_decide_us=decide_ns / max(strip.length, 1) / 1000.0,
    )
