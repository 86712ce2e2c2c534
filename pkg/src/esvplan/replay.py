"""Re-execute an action log and compare it with what was recorded."""

from __future__ import annotations

from dataclasses import dataclass

from .env import Episode, EpisodeConfig, StepLog, config_digest
from .esv import build_esv_table
from .grid import GridState, LandClass
from .reward import RewardConfig, load_flat

REWARD_TOL = 1e-9


class HashMismatch(Exception):
    pass


@dataclass(frozen=True)
class Verdict:
    passed: bool
    n_steps: int
    failed_step: int | None = None
    reason: str = ""

    def __str__(self):
        if self.passed:
            return f"PASS ({self.n_steps} steps)"
        return f"FAIL at step {self.failed_step}: {self.reason}"


def parse_run_config(text: str):
    """Inverse of ``run_config_text``: (esv, reward config, episode config, progress)."""
    data = load_flat(text)
    reward = RewardConfig.from_dict({k[len("reward."):]: v for k, v in data.items() if k.startswith("reward.")})
    episode = EpisodeConfig.from_dict({k[len("episode."):]: v for k, v in data.items() if k.startswith("episode.")})
    raw = {LandClass.parse(k[len("esv.raw."):]): float(v) for k, v in data.items() if k.startswith("esv.raw.")}
    esv = build_esv_table(float(data.get("esv.regen_uplift", 1.35)), raw or None)
    progress = float(data.get("progress", 1.0))
    return esv, reward, episode, progress


def check_hashes(header: dict, grid: GridState, config_text: str) -> None:
    if header.get("grid_sha256") != grid.digest():
        raise HashMismatch("grid file hash does not match the action log")
    if header.get("config_sha256") != config_digest(config_text):
        raise HashMismatch("config hash does not match the action log")


def replay(grid: GridState, entries: list[StepLog], config_text: str) -> Verdict:
    esv, reward, episode_config, progress = parse_run_config(config_text)
    episode = Episode(grid, episode_config, esv, reward, progress)
    for n, entry in enumerate(entries):
        if entry.t != n:
            return Verdict(False, n, n, f"log step index {entry.t} out of sequence")
        if episode.done:
            return Verdict(False, n, n, f"episode already terminated ({episode.cause.value})")
        result = episode.step(entry.action)
        got = episode.log[-1]
        if got.transferred != entry.transferred:
            return Verdict(False, n, n, f"transferred {got.transferred} != logged {entry.transferred}")
        if abs(result.reward - entry.reward) > REWARD_TOL:
            return Verdict(False, n, n, f"reward {result.reward!r} != logged {entry.reward!r}")
    return Verdict(True, len(entries))
