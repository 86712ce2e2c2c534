"""Episode lifecycle for the land-use allocation MDP.

An action is a flat index into ``(M, M, K, K)`` naming a cell, a source
and a target modifiable class.  Executing it moves up to ``delta_pixels``
pixels from source to target inside the cell.
"""

from __future__ import annotations

import enum
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Iterable, NamedTuple

import numpy as np

from .esv import EsvTable
from .grid import BUILT_K, CROP_K, K, MOD_IDX, N_CLASSES, GridState, LandClass, water_adjacent
from .manifest import atomic_write_text, sha256_text
from .reward import RewardConfig, ValueBreakdown, dump_flat, total_value

ET_RATES = {
    LandClass.WATER: 616.93,
    LandClass.TREES: 933.57,
    LandClass.FLOODED: 767.62,
    LandClass.CROPS: 675.66,
    LandClass.BUILT_AREA: 648.95,
    LandClass.BARE_GROUND: 591.53,
    LandClass.SNOW_ICE: 0.0,  # no MODIS value for this class
    LandClass.CLOUDS: 845.87,
    LandClass.RANGELAND: 745.94,
}
ET_RATE_VECTOR = np.array([ET_RATES[LandClass(i)] for i in range(N_CLASSES)])

HIGH_IMPACT_TARGETS = (CROP_K, BUILT_K)


@dataclass(frozen=True)
class DecodedAction:
    i: int
    j: int
    c_src: int
    c_tgt: int

    def encode(self, m: int) -> int:
        return encode_action(self.i, self.j, self.c_src, self.c_tgt, m)

    @classmethod
    def decode(cls, flat: int, m: int) -> "DecodedAction":
        return decode_action(flat, m)


def encode_action(i: int, j: int, c_src: int, c_tgt: int, m: int) -> int:
    return int(np.ravel_multi_index((i, j, c_src, c_tgt), (m, m, K, K)))


def decode_action(flat: int, m: int) -> DecodedAction:
    flat = int(flat)
    if not 0 <= flat < m * m * K * K:
        raise ValueError(f"action {flat} out of range [0, {m * m * K * K})")
    return DecodedAction(*(int(x) for x in np.unravel_index(flat, (m, m, K, K))))


@dataclass(frozen=True)
class EpisodeConfig:
    t_max: int = 500
    delta_pixels: int = 5
    et_tolerance: float = 1.0
    noop_limit: int = 10
    min_modifiable_fraction: float = 0.10
    min_initial_value: float = 1.0
    water_threshold: int = 0

    def __post_init__(self):
        if self.t_max <= 0 or self.delta_pixels <= 0 or self.noop_limit <= 0:
            raise ValueError("t_max, delta_pixels and noop_limit must be positive")
        if self.et_tolerance < 0 or self.min_modifiable_fraction < 0 or self.water_threshold < 0:
            raise ValueError("tolerances and thresholds must be non-negative")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "EpisodeConfig":
        kwargs = {}
        for f in fields(cls):
            if f.name in data:
                kwargs[f.name] = float(data[f.name]) if f.type == "float" else int(data[f.name])
        return cls(**kwargs)


class TerminationCause(enum.Enum):
    STEP_LIMIT = "StepLimit"
    ET_VIOLATION = "EtViolation"
    STAGNATION = "Stagnation"
    SATURATION = "Saturation"
    EXTERNAL_STOP = "ExternalStop"


def grid_et(state: GridState) -> float:
    """Total ET in pixel-rate units; the per-pixel area cancels in ratios."""
    return float(np.sum(state.counts * ET_RATE_VECTOR))


def riparian_cells(state: GridState, water_threshold: int = 0) -> np.ndarray:
    return water_adjacent(state, water_threshold)


def action_mask_4d(state: GridState, water_threshold: int = 0) -> np.ndarray:
    cnt = state.modifiable_counts()
    has_src = cnt > 0
    has_room = cnt < state.n_pixels
    mask = has_src[..., :, None] & has_room[..., None, :]
    mask &= ~np.eye(K, dtype=bool)
    riparian = riparian_cells(state, water_threshold)
    blocked = np.zeros(K, dtype=bool)
    blocked[list(HIGH_IMPACT_TARGETS)] = True
    mask &= ~(riparian[..., None, None] & blocked[None, None, None, :])
    return mask


def action_mask(state: GridState, water_threshold: int = 0) -> np.ndarray:
    """Flat boolean mask of length ``M*M*K*K``."""
    return action_mask_4d(state, water_threshold).reshape(-1)


def apply_action(state: GridState, action: DecodedAction, delta_pixels: int = 5) -> tuple[GridState, int]:
    """Move ``min(delta_pixels, source count)`` pixels; same-class moves are no-ops."""
    m = state.m
    if not (0 <= action.i < m and 0 <= action.j < m and 0 <= action.c_src < K and 0 <= action.c_tgt < K):
        raise ValueError(f"action {action} out of range for M={m}")
    if action.c_src == action.c_tgt:
        return state, 0
    src = MOD_IDX[action.c_src]
    tgt = MOD_IDX[action.c_tgt]
    moved = min(delta_pixels, int(state.counts[action.i, action.j, src]))
    if moved == 0:
        return state, 0
    counts = state.counts.copy()
    counts[action.i, action.j, src] -= moved
    counts[action.i, action.j, tgt] += moved
    return state.with_counts(counts), moved


@dataclass(frozen=True)
class Rejection:
    """Outcome of an episode-initialisation filter refusing a patch."""

    filter: str
    value: float
    threshold: float

    @property
    def message(self) -> str:
        if self.filter == "modifiable":
            return f"modifiable fraction {self.value:.4f} below {self.threshold}"
        if self.filter == "effective":
            return f"initial value {self.value:.4f} not above {self.threshold} (trivial grid)"
        return f"initial value {self.value:.4f} below {self.threshold}"


class StepResult(NamedTuple):
    observation: np.ndarray
    reward: float
    done: bool
    cause: TerminationCause | None
    info: ValueBreakdown


@dataclass(frozen=True)
class StepLog:
    t: int
    action: int
    transferred: int
    reward: float


class EpisodeFinished(RuntimeError):
    pass


@dataclass
class Episode:
    state: GridState
    config: EpisodeConfig
    esv: EsvTable
    reward_config: RewardConfig
    progress: float = 1.0
    initial_state: GridState = field(init=False)
    v0: ValueBreakdown = field(init=False)
    et0: float = field(init=False)
    breakdown: ValueBreakdown = field(init=False)
    t: int = 0
    noop_streak: int = 0
    done: bool = False
    cause: TerminationCause | None = None
    log: list[StepLog] = field(default_factory=list)

    def __post_init__(self):
        self.initial_state = self.state
        self.v0 = total_value(self.state, self.esv, self.reward_config, self.progress)
        self.breakdown = self.v0
        self.et0 = grid_et(self.state)
        if not self.mask().any():
            self.done, self.cause = True, TerminationCause.SATURATION

    @property
    def m(self) -> int:
        return self.state.m

    def observation(self) -> np.ndarray:
        return self.state.observation()

    def mask(self) -> np.ndarray:
        return action_mask(self.state, self.config.water_threshold)

    def et_decrease(self) -> float:
        if self.et0 <= 0:
            return 0.0
        return (self.et0 - grid_et(self.state)) / self.et0

    def step(self, flat_action: int) -> StepResult:
        if self.done:
            raise EpisodeFinished(f"episode already finished ({self.cause.value})")
        action = decode_action(flat_action, self.m)
        self.state, moved = apply_action(self.state, action, self.config.delta_pixels)
        after = total_value(self.state, self.esv, self.reward_config, self.progress)
        reward = after.v_total - self.breakdown.v_total
        self.breakdown = after
        self.log.append(StepLog(self.t, int(flat_action), moved, reward))
        self.t += 1
        self.noop_streak = self.noop_streak + 1 if moved == 0 else 0

        if self.t >= self.config.t_max:
            self.cause = TerminationCause.STEP_LIMIT
        elif self.et_decrease() > self.config.et_tolerance:
            self.cause = TerminationCause.ET_VIOLATION
        elif self.noop_streak >= self.config.noop_limit:
            self.cause = TerminationCause.STAGNATION
        elif not self.mask().any():
            self.cause = TerminationCause.SATURATION
        self.done = self.cause is not None
        return StepResult(self.observation(), reward, self.done, self.cause, after)

    def stop(self) -> None:
        if not self.done:
            self.done, self.cause = True, TerminationCause.EXTERNAL_STOP


def init_episode(patch: GridState, config: EpisodeConfig, esv: EsvTable, reward_config: RewardConfig,
                 filters: Iterable[str] = ("modifiable", "value"),
                 progress: float = 1.0) -> Episode | Rejection:
    """Start an episode, or return the first filter that rejects ``patch``.

    ``filters`` may contain ``"modifiable"`` (fraction below the minimum),
    ``"value"`` (V0 below the minimum, the training filter) and
    ``"effective"`` (V0 not strictly above the minimum, the evaluation filter).
    """
    filters = tuple(filters)
    unknown = set(filters) - {"modifiable", "value", "effective"}
    if unknown:
        raise ValueError(f"unknown filters: {sorted(unknown)}")
    if "modifiable" in filters:
        frac = patch.modifiable_fraction()
        if frac < config.min_modifiable_fraction:
            return Rejection("modifiable", frac, config.min_modifiable_fraction)
    if "value" in filters or "effective" in filters:
        v0 = total_value(patch, esv, reward_config, progress).v_total
        if "value" in filters and v0 < config.min_initial_value:
            return Rejection("value", v0, config.min_initial_value)
        if "effective" in filters and v0 <= config.min_initial_value:
            return Rejection("effective", v0, config.min_initial_value)
    return Episode(patch, config, esv, reward_config, progress)


# -- action log -----------------------------------------------------------------

ACTION_LOG_HEADER = "# actionlog v1"


def write_action_log(path, log: Iterable[StepLog], grid_hash: str, config_hash: str) -> None:
    lines = [f"{ACTION_LOG_HEADER} grid_sha256={grid_hash} config_sha256={config_hash}",
             "# t flat_action transferred reward"]
    lines += [f"{e.t} {e.action} {e.transferred} {e.reward!r}" for e in log]
    atomic_write_text(path, "\n".join(lines) + "\n")


def read_action_log(path) -> tuple[dict[str, str], list[StepLog]]:
    lines = Path(path).read_text().splitlines()
    if not lines or not lines[0].startswith(ACTION_LOG_HEADER):
        raise ValueError(f"{path}: not an action log")
    header = dict(tok.split("=", 1) for tok in lines[0][len(ACTION_LOG_HEADER):].split())
    entries = []
    for line in lines[1:]:
        if not line.strip() or line.startswith("#"):
            continue
        t, a, moved, reward = line.split()
        entries.append(StepLog(int(t), int(a), int(moved), float(reward)))
    return header, entries


def run_config_text(esv: EsvTable, reward_config: RewardConfig, config: EpisodeConfig,
                    progress: float = 1.0, extra: dict | None = None) -> str:
    """Flat key-value text of everything that determines episode dynamics."""
    data = {f"reward.{k}": v for k, v in reward_config.to_dict().items()}
    data.update({f"episode.{k}": v for k, v in config.to_dict().items()})
    data["esv.regen_uplift"] = esv.regen_uplift
    for i, v in enumerate(esv.raw_usd_per_ha_yr):
        data[f"esv.raw.{LandClass(i).label}"] = float(v)
    data["progress"] = float(progress)
    data.update(extra or {})
    return dump_flat(data)


def config_digest(text: str) -> str:
    return sha256_text(text)
