"""Tabular Q-learning over a compact (charge, visibility) state.

The state keeps the integer charge plus six presence bits: one per class
for the instrument footprint and one per class for the lookahead window.
That is 101 * 2^6 = 6464 rows of two actions, small enough to sweep
exhaustively.

Two trainers are provided.  The epsilon-greedy one runs ordinary forward
episodes and is kept as a baseline; it explores the charge/visibility
space far too slowly to be practical.  The sweep trainer instead walks
the horizon backward and updates every (timestep, charge, action) cell
each pass, which reaches the planner's quality in a handful of sweeps.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence, Tuple

import numpy as np

from .errors import FormatError, ParameterError
from .sim import (
    Action,
    EnergyModel,
    N_SOC,
    Observation,
    Placement,
    Policy,
    SensorGeometry,
    SOC_MAX,
    strip_index,
)
from .world import EnvStrip, RewardModel

N_FLAGS = 6
N_FLAG_COMBOS = 1 << N_FLAGS  # 64
N_Q_STATES = N_SOC * N_FLAG_COMBOS  # 6464

Q_MAGIC = b"DTQ1"

try:
    from numba import njit

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    _HAVE_NUMBA = False


@dataclass(frozen=True)
class QLearnParams:
    """Update hyperparameters; ``epsilon`` only matters to the
    epsilon-greedy trainer, ``sweeps`` only to the sweep trainer."""

    alpha: float = 0.4
    gamma: float = 0.99
    epsilon: float = 0.1
    sweeps: int = 5
    seed: int = 0

    def __post_init__(self):
        if not (0.0 < self.alpha <= 1.0):
            raise ParameterError(f"alpha out of (0, 1]: {self.alpha}")
        if not (0.0 <= self.gamma <= 1.0):
            raise ParameterError(f"gamma out of [0, 1]: {self.gamma}")
        if not (0.0 <= self.epsilon <= 1.0):
            raise ParameterError(f"epsilon out of [0, 1]: {self.epsilon}")
        if self.sweeps < 0:
            raise ParameterError(f"sweeps must be >= 0, got {self.sweeps}")


@dataclass(frozen=True)
class QState:
    """Charge plus the six visibility bits, in fixed bit order:
    footprint Low/Mid/High are bits 0..2, lookahead Low/Mid/High 3..5."""

    soc: int
    flags: Tuple[bool, bool, bool, bool, bool, bool]

    def __post_init__(self):
        if not (0 <= self.soc <= SOC_MAX):
            raise ParameterError(f"soc out of [0, {SOC_MAX}]: {self.soc}")
        if len(self.flags) != N_FLAGS:
            raise ParameterError(f"expected {N_FLAGS} flags, got {len(self.flags)}")


def q_state_index(state: QState) -> int:
    bits = 0
    for i, flag in enumerate(state.flags):
        bits |= int(bool(flag)) << i
    return state.soc * N_FLAG_COMBOS + bits


def q_state_from_index(idx: int) -> QState:
    if not (0 <= idx < N_Q_STATES):
        raise ParameterError(f"state index out of [0, {N_Q_STATES}): {idx}")
    soc, bits = divmod(idx, N_FLAG_COMBOS)
    flags = tuple(bool((bits >> i) & 1) for i in range(N_FLAGS))
    return QState(soc=soc, flags=flags)


def featurize_q(obs: Observation) -> QState:
    """Collapse an observation to its tabular state."""
    return QState(soc=obs.soc, flags=obs.radar_class_presence() + obs.lookahead_class_presence())


class QTable:
    """Action values plus per-cell visit counts, both zero-initialized."""

    def __init__(self):
        self.q = np.zeros((N_Q_STATES, 2), dtype=np.float64)
        self.visits = np.zeros((N_Q_STATES, 2), dtype=np.int64)


def q_update(
    table: QTable,
    s: int,
    a: Action,
    reward: float,
    s_next: Optional[int],
    params: QLearnParams,
) -> None:
    """One temporal-difference backup; ``s_next`` None means terminal."""
    if not (0 <= s < N_Q_STATES):
        raise ParameterError(f"state index out of [0, {N_Q_STATES}): {s}")
    follow = 0.0
    if s_next is not None:
        if not (0 <= s_next < N_Q_STATES):
            raise ParameterError(f"state index out of [0, {N_Q_STATES}): {s_next}")
        follow = max(table.q[s_next, 0], table.q[s_next, 1])
    table.q[s, a] += params.alpha * (reward + params.gamma * follow - table.q[s, a])
    table.visits[s, a] += 1


# ---------------------------------------------------------------------------
# sweep trainer
# ---------------------------------------------------------------------------

def _sweep_python(q, visits, flags, r_sample, alpha, gamma, discharge, recharge):
    """Reference sweep: timestep backward, charge 0..100, Off then Sample.

    ``flags`` and ``r_sample`` are per-column state bits and sample
    rewards; updates beyond the horizon bootstrap from zero.
    """
    horizon = flags.shape[0]
    for t0 in range(horizon - 1, -1, -1):
        ft = flags[t0]
        terminal = t0 == horizon - 1
        ft1 = 0 if terminal else flags[t0 + 1]
        r_t = r_sample[t0]
        for soc in range(N_SOC):
            s = soc * N_FLAG_COMBOS + ft
            if terminal:
                follow_off = 0.0
            else:
                ns = min(soc + recharge, SOC_MAX) * N_FLAG_COMBOS + ft1
                follow_off = max(q[ns, 0], q[ns, 1])
            q[s, 0] += alpha * (gamma * follow_off - q[s, 0])
            visits[s, 0] += 1
            if soc >= discharge:
                if terminal:
                    follow_smp = 0.0
                else:
                    nsoc = min(max(soc - discharge + recharge, 0), SOC_MAX)
                    ns = nsoc * N_FLAG_COMBOS + ft1
                    follow_smp = max(q[ns, 0], q[ns, 1])
                q[s, 1] += alpha * (r_t + gamma * follow_smp - q[s, 1])
                visits[s, 1] += 1


if _HAVE_NUMBA:
    _sweep_numba = njit(cache=True)(_sweep_python)


def _run_sweep(table: QTable, flags, r_sample, params: QLearnParams, energy: EnergyModel):
    kernel = _sweep_numba if _HAVE_NUMBA else _sweep_python
    kernel(
        table.q,
        table.visits,
        flags,
        r_sample,
        params.alpha,
        params.gamma,
        energy.sample_discharge,
        energy.recharge_per_step,
    )


def train_dp_sweep(
    strips: Sequence[EnvStrip],
    params: QLearnParams = QLearnParams(),
    geom: SensorGeometry = SensorGeometry(),
    energy: EnergyModel = EnergyModel(),
    rewards: RewardModel = RewardModel(),
) -> QTable:
    """Exhaustive backward sweeps over every (timestep, charge, action).

    Each sweep visits each training strip in the given order.  Zero
    sweeps returns the zero table.  Deterministic: no randomness is
    involved at all.
    """
    strips = list(strips)
    if not strips:
        raise ParameterError("need at least one training strip")
    table = QTable()
    prepared = []
    for strip in strips:
        idx = strip_index(strip, geom)
        flags = np.ascontiguousarray(idx.qflag, dtype=np.int64)
        r_sample = rewards.values()[idx.radar_best].astype(np.float64)
        prepared.append((flags, r_sample))
    for _ in range(params.sweeps):
        for flags, r_sample in prepared:
            _run_sweep(table, flags, r_sample, params, energy)
    return table


def train_epsilon_greedy(
    strip: EnvStrip,
    params: QLearnParams = QLearnParams(),
    episodes: int = 10,
    geom: SensorGeometry = SensorGeometry(),
    energy: EnergyModel = EnergyModel(),
    rewards: RewardModel = RewardModel(),
    soc0: int = SOC_MAX,
) -> QTable:
    """Forward-episode trainer, one strip, epsilon-greedy exploration.

    Per step it draws one uniform ``p``; when ``p <= epsilon`` a second
    draw picks Off or Sample with equal odds, otherwise the greedy
    action is taken.  Either way an unaffordable Sample is executed as
    Off.  Kept as the baseline the sweep trainer is measured against.
    """
    if episodes < 0:
        raise ParameterError(f"episodes must be >= 0, got {episodes}")
    table = QTable()
    idx = strip_index(strip, geom)
    flags = idx.qflag.astype(np.int64)
    r_sample = rewards.values()[idx.radar_best].astype(np.float64)
    horizon = strip.length
    d, re = energy.sample_discharge, energy.recharge_per_step
    rng = np.random.default_rng(params.seed)
    q = table.q
    for _ in range(episodes):
        soc = soc0
        for t0 in range(horizon):
            s = soc * N_FLAG_COMBOS + flags[t0]
            if rng.random() <= params.epsilon:
                action = Action.OFF if rng.random() < 0.5 else Action.SAMPLE
            else:
                action = Action.SAMPLE if q[s, 1] > q[s, 0] else Action.OFF
            if action == Action.SAMPLE and soc < d:
                action = Action.OFF
            if action == Action.SAMPLE:
                reward = float(r_sample[t0])
                nsoc = min(max(soc - d + re, 0), SOC_MAX)
            else:
                reward = 0.0
                nsoc = min(soc + re, SOC_MAX)
            s_next = None if t0 == horizon - 1 else int(nsoc * N_FLAG_COMBOS + flags[t0 + 1])
            q_update(table, int(s), action, reward, s_next, params)
            soc = nsoc
    return table


# ---------------------------------------------------------------------------
# policy and serialization
# ---------------------------------------------------------------------------

class _QPolicy(Policy):
    name = "qlearn"
    placement = Placement.DISC

    def __init__(self, table: QTable, energy: EnergyModel):
        self.table = table
        self.energy = energy

    def decide(self, obs: Observation) -> Action:
        idx = obs.index
        s = obs.soc * N_FLAG_COMBOS + int(idx.qflag[obs.t - 1])
        if obs.soc < self.energy.sample_discharge:
            return Action.OFF
        q = self.table.q
        return Action.SAMPLE if q[s, 1] > q[s, 0] else Action.OFF


def q_policy(table: QTable, energy: EnergyModel = EnergyModel()) -> Policy:
    """Greedy feasibility-masked readout; exact ties stay Off."""
    return _QPolicy(table, energy)


def save_qtable(table: QTable, path, manifest: Optional[dict] = None) -> None:
    with open(path, "wb") as fh:
        fh.write(Q_MAGIC)
        fh.write(struct.pack("<II", N_Q_STATES, 2))
        fh.write(table.q.astype("<f4").tobytes())
    if manifest is not None:
        lines = [f"{k}={v}\n" for k, v in manifest.items()]
        Path(str(path) + ".manifest").write_text("".join(lines), encoding="utf-8")


def load_qtable(path) -> QTable:
    data = Path(path).read_bytes()
    if len(data) < 4 or data[:4] != Q_MAGIC:
        raise FormatError(f"bad magic, expected {Q_MAGIC!r}", offset=0)
    if len(data) < 12:
        raise FormatError("truncated header", offset=len(data))
    n_states, n_actions = struct.unpack_from("<II", data, 4)
    if n_states != N_Q_STATES or n_actions != 2:
        raise FormatError(f"unsupported table shape {n_states}x{n_actions}", offset=4)
    expected = 12 + n_states * n_actions * 4
    if len(data) < expected:
        raise FormatError("truncated payload", offset=len(data))
    if len(data) > expected:
        raise FormatError("trailing bytes after payload", offset=expected)
    values = np.frombuffer(data, dtype="<f4", count=n_states * n_actions, offset=12)
    table = QTable()
    table.q = values.reshape((n_states, n_actions)).astype(np.float64)
    return table
