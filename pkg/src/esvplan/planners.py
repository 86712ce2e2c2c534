"""Non-learning policies sharing the environment's mask and value function."""

from __future__ import annotations

import enum
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .env import (EpisodeConfig, Rejection, StepLog, TerminationCause, action_mask, apply_action,
                  decode_action, init_episode)
from .esv import EsvTable
from .grid import GridState
from .reward import RewardConfig, ValueBreakdown, all_deltas

TIE_TOL = 1e-12


class PlannerKind(str, enum.Enum):
    RANDOM = "random"
    GREEDY = "greedy"
    BEAM = "beam"


class TieBreak(str, enum.Enum):
    LOWEST_INDEX = "lowest-index"
    RANDOM_AMONG_TIES = "random-among-ties"


@dataclass(frozen=True)
class PlannerSpec:
    kind: PlannerKind
    seed: int = 0
    beam_width: int = 1
    horizon: int = 1
    tie_break: TieBreak = TieBreak.LOWEST_INDEX

    def __post_init__(self):
        object.__setattr__(self, "kind", PlannerKind(self.kind))
        object.__setattr__(self, "tie_break", TieBreak(self.tie_break))
        if self.beam_width < 1 or self.horizon < 1:
            raise ValueError("beam_width and horizon must be >= 1")

    @property
    def name(self) -> str:
        if self.kind is PlannerKind.BEAM:
            return f"beam-w{self.beam_width}-h{self.horizon}"
        return self.kind.value

    def to_dict(self) -> dict:
        return {"kind": self.kind.value, "seed": self.seed, "beam_width": self.beam_width,
                "horizon": self.horizon, "tie_break": self.tie_break.value}

    @classmethod
    def from_dict(cls, data: dict) -> "PlannerSpec":
        return cls(PlannerKind(data["kind"]), int(data.get("seed", 0)), int(data.get("beam_width", 1)),
                   int(data.get("horizon", 1)), TieBreak(data.get("tie_break", TieBreak.LOWEST_INDEX.value)))


class EmptyMaskError(ValueError):
    """A policy was asked to act on a state with no valid action."""


def _valid_indices(mask: np.ndarray) -> np.ndarray:
    idx = np.flatnonzero(mask)
    if idx.size == 0:
        raise EmptyMaskError("mask has no valid action")
    return idx


def random_policy(state: GridState, mask: np.ndarray, rng: np.random.Generator) -> int:
    idx = _valid_indices(mask)
    return int(idx[rng.integers(idx.size)])


def _argmax(values: np.ndarray, idx: np.ndarray, tie_break: TieBreak, rng) -> int:
    vals = values[idx]
    best = vals.max()
    if tie_break is TieBreak.RANDOM_AMONG_TIES:
        tied = idx[vals >= best - TIE_TOL]
        return int(tied[rng.integers(tied.size)])
    return int(idx[np.argmax(vals)])


def greedy_policy(state: GridState, mask: np.ndarray, esv: EsvTable, reward_config: RewardConfig,
                  delta_pixels: int = 5, progress: float = 1.0,
                  tie_break: TieBreak = TieBreak.LOWEST_INDEX, rng=None) -> int:
    """Valid action with the largest one-step value change."""
    idx = _valid_indices(mask)
    deltas = all_deltas(state, esv, reward_config, progress, delta_pixels).reshape(-1)
    return _argmax(deltas, idx, TieBreak(tie_break), rng)


def beam_policy(state: GridState, esv: EsvTable, reward_config: RewardConfig,
                episode_config: EpisodeConfig, width: int = 2, horizon: int = 2,
                progress: float = 1.0) -> int:
    """First action of the best ``horizon``-step sequence found by beam search.

    Ties are broken by the lowest first action, so width 1 matches Greedy.
    """
    m = state.m
    # (cumulative value, first action, state)
    beams = [(0.0, -1, state)]
    for _ in range(horizon):
        candidates = []
        for value, first, st in beams:
            mask = action_mask(st, episode_config.water_threshold)
            idx = np.flatnonzero(mask)
            if idx.size == 0:
                candidates.append((value, first, st, None))
                continue
            deltas = all_deltas(st, esv, reward_config, progress, episode_config.delta_pixels).reshape(-1)
            top = idx[np.lexsort((idx, -deltas[idx]))][:width]
            candidates += [(value + deltas[a], a if first < 0 else first, st, int(a)) for a in top]
        if not candidates or all(c[3] is None for c in candidates):
            break
        candidates.sort(key=lambda c: (-c[0], c[1], -1 if c[3] is None else c[3]))
        beams = []
        for value, first, st, a in candidates[:width]:
            nxt = st if a is None else apply_action(st, decode_action(a, m), episode_config.delta_pixels)[0]
            beams.append((value, first, nxt))
    first = beams[0][1]
    if first < 0:
        raise EmptyMaskError("mask has no valid action")
    return int(first)


@dataclass
class EpisodeRecord:
    grid_id: str
    planner: dict
    reward_config: dict
    episode_config: dict
    regen_uplift: float
    progress: float
    initial: ValueBreakdown
    final: ValueBreakdown
    cause: str
    steps: list[StepLog] = field(default_factory=list)
    breakdowns: list[ValueBreakdown] = field(default_factory=list)
    grid_hash: str = ""
    config_hash: str = ""

    @property
    def delta_v(self) -> float:
        return self.final.v_total - self.initial.v_total

    @property
    def n_steps(self) -> int:
        return len(self.steps)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["delta_v"] = self.delta_v
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "EpisodeRecord":
        d = dict(d)
        d.pop("delta_v", None)
        d["initial"] = ValueBreakdown(**d["initial"])
        d["final"] = ValueBreakdown(**d["final"])
        d["steps"] = [StepLog(**s) for s in d["steps"]]
        d["breakdowns"] = [ValueBreakdown(**b) for b in d["breakdowns"]]
        return cls(**d)


class PatchRejected(Exception):
    def __init__(self, rejection: Rejection):
        super().__init__(rejection.message)
        self.rejection = rejection


def choose_action(planner: PlannerSpec, state: GridState, mask: np.ndarray, esv: EsvTable,
                  reward_config: RewardConfig, episode_config: EpisodeConfig, rng, progress: float = 1.0) -> int:
    if planner.kind is PlannerKind.RANDOM:
        return random_policy(state, mask, rng)
    if planner.kind is PlannerKind.GREEDY:
        return greedy_policy(state, mask, esv, reward_config, episode_config.delta_pixels, progress,
                             planner.tie_break, rng)
    return beam_policy(state, esv, reward_config, episode_config, planner.beam_width, planner.horizon, progress)


def run_episode(patch: GridState, planner: PlannerSpec, episode_config: EpisodeConfig, esv: EsvTable,
                reward_config: RewardConfig, filters=("effective",), grid_id: str = "",
                progress: float = 1.0, grid_hash: str = "", config_hash: str = "") -> EpisodeRecord:
    """Roll a planner through one episode; raises PatchRejected if a filter refuses the patch."""
    episode = init_episode(patch, episode_config, esv, reward_config, filters, progress)
    if isinstance(episode, Rejection):
        raise PatchRejected(episode)
    rng = np.random.default_rng(planner.seed)
    breakdowns = []
    while not episode.done:
        a = choose_action(planner, episode.state, episode.mask(), esv, reward_config, episode_config,
                          rng, progress)
        breakdowns.append(episode.step(a).info)
    return EpisodeRecord(
        grid_id=grid_id,
        planner=planner.to_dict(),
        reward_config=reward_config.to_dict(),
        episode_config=episode_config.to_dict(),
        regen_uplift=esv.regen_uplift,
        progress=progress,
        initial=episode.v0,
        final=episode.breakdown,
        cause=episode.cause.value if episode.cause else TerminationCause.EXTERNAL_STOP.value,
        steps=list(episode.log),
        breakdowns=breakdowns,
        grid_hash=grid_hash or patch.digest(),
        config_hash=config_hash,
    )
