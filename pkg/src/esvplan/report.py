"""Method comparison over a set of evaluation grids.

Output files (all comma-separated, one header row):

``report.csv``
    grid_id, v0, method, seed, delta_v, v_eco, c_tree, c_crop, c_built,
    p_water, b_riparian, v_final, cause, n_steps.  Component columns are the
    final-state values.
``summary.csv``
    method, n, mean_delta_v, std_delta_v (population), min_delta_v,
    max_delta_v, success_rate (share of episodes with delta_v > 0), and the
    mean final component columns.
``dominance.csv``
    method_a, method_b, wins, ties, losses, n: per-grid comparison of
    delta_v for every ordered pair of methods.
``plot_data.csv``
    grid_id, v0, then one delta_v column per method; one row per grid.
"""

from __future__ import annotations

import csv
import io
import itertools
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .env import EpisodeConfig, Rejection, init_episode
from .esv import EsvTable
from .grid import GridState
from .manifest import atomic_write_text
from .planners import EpisodeRecord, PlannerSpec, run_episode
from .reward import COMPONENTS, RewardConfig, component_weights

# Reference learned-policy results, kept for context only.
REFERENCE_RESULTS = {
    "ppo_mean_delta_v": 8.50,
    "ppo_std_delta_v": 4.56,
    "ppo_success_rate": 1.0,
    "greedy_mean_delta_v": 12.95,
    "greedy_std_delta_v": 8.76,
    "random_mean_delta_v": -4.82,
    "random_std_delta_v": 2.49,
    "random_success_rate": 0.04,
    "n_effective_grids": 24,
}

ROW_FIELDS = ("grid_id", "v0", "method", "seed", "delta_v", *COMPONENTS, "v_final", "cause", "n_steps")


@dataclass(frozen=True)
class ReportRow:
    grid_id: str
    v0: float
    method: str
    seed: int
    delta_v: float
    v_eco: float
    c_tree: float
    c_crop: float
    c_built: float
    p_water: float
    b_riparian: float
    v_final: float
    cause: str
    n_steps: int

    @classmethod
    def from_record(cls, record: EpisodeRecord, method: str) -> "ReportRow":
        f = record.final
        return cls(record.grid_id, record.initial.v_total, method, int(record.planner["seed"]),
                   record.delta_v, f.v_eco, f.c_tree, f.c_crop, f.c_built, f.p_water, f.b_riparian,
                   f.v_total, record.cause, record.n_steps)


@dataclass
class ComparisonReport:
    rows: list[ReportRow]
    methods: list[str]
    skipped: list[tuple[str, str]] = field(default_factory=list)
    records: list[EpisodeRecord] = field(default_factory=list)
    reference: dict = field(default_factory=lambda: dict(REFERENCE_RESULTS))

    @property
    def empty(self) -> bool:
        return not self.rows

    @property
    def grid_ids(self) -> list[str]:
        return list(dict.fromkeys(r.grid_id for r in self.rows))

    def delta_v(self, method: str) -> dict[str, float]:
        return {r.grid_id: r.delta_v for r in self.rows if r.method == method}

    def summary(self) -> list[dict]:
        return summarize(self.rows, self.methods)

    def dominance(self) -> list[dict]:
        return dominance_table(self.rows, self.methods)


def summarize(rows: list[ReportRow], methods: list[str]) -> list[dict]:
    out = []
    for method in methods:
        mine = [r for r in rows if r.method == method]
        if not mine:
            continue
        dv = np.array([r.delta_v for r in mine])
        entry = {"method": method, "n": len(mine), "mean_delta_v": float(dv.mean()),
                 "std_delta_v": float(dv.std()), "min_delta_v": float(dv.min()),
                 "max_delta_v": float(dv.max()), "success_rate": float(np.mean(dv > 0))}
        for comp in COMPONENTS:
            entry[f"mean_{comp}"] = float(np.mean([getattr(r, comp) for r in mine]))
        out.append(entry)
    return out


def dominance_table(rows: list[ReportRow], methods: list[str]) -> list[dict]:
    by = {m: {r.grid_id: r.delta_v for r in rows if r.method == m} for m in methods}
    out = []
    for a, b in itertools.permutations(methods, 2):
        shared = sorted(set(by[a]) & set(by[b]))
        wins = sum(by[a][g] > by[b][g] for g in shared)
        losses = sum(by[a][g] < by[b][g] for g in shared)
        out.append({"method_a": a, "method_b": b, "wins": wins, "ties": len(shared) - wins - losses,
                    "losses": losses, "n": len(shared)})
    return out


@dataclass(frozen=True)
class Decomposition:
    initial: dict[str, float]
    final: dict[str, float]
    deltas: dict[str, float]
    weighted: dict[str, float]
    delta_v: float

    @property
    def residual(self) -> float:
        return self.delta_v - sum(self.weighted.values())


def decompose(record: EpisodeRecord) -> Decomposition:
    """Per-component change between the first and last state of an episode."""
    config = RewardConfig.from_dict(record.reward_config)
    weights = component_weights(config, record.progress)
    initial = {c: getattr(record.initial, c) for c in COMPONENTS}
    final = {c: getattr(record.final, c) for c in COMPONENTS}
    deltas = {c: final[c] - initial[c] for c in COMPONENTS}
    weighted = {c: weights[c] * deltas[c] for c in COMPONENTS}
    return Decomposition(initial, final, deltas, weighted, record.delta_v)


def _run_one(args) -> EpisodeRecord:
    grid_id, grid, spec, episode_config, esv, reward_config, progress, config_hash = args
    return run_episode(grid, spec, episode_config, esv, reward_config, filters=(), grid_id=grid_id,
                       progress=progress, config_hash=config_hash)


def compare(grids, methods: list[PlannerSpec], episode_config: EpisodeConfig, esv: EsvTable,
            reward_config: RewardConfig, progress: float = 1.0, jobs: int = 1,
            filters=("effective",), config_hash: str = "") -> ComparisonReport:
    """Run every method on every grid that passes ``filters``.

    ``grids`` is an iterable of ``(grid_id, GridState)``.  Grids refused by a
    filter are listed in ``report.skipped`` rather than raising.
    """
    names = [m.name for m in methods]
    if len(set(names)) != len(names):
        raise ValueError(f"method names must be distinct: {names}")
    kept, skipped = [], []
    for grid_id, grid in grids:
        outcome = init_episode(grid, episode_config, esv, reward_config, filters, progress)
        if isinstance(outcome, Rejection):
            skipped.append((grid_id, outcome.message))
        else:
            kept.append((grid_id, grid))

    tasks = [(gid, g, spec, episode_config, esv, reward_config, progress, config_hash)
             for gid, g in kept for spec in methods]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            records = list(pool.map(_run_one, tasks))
    else:
        records = [_run_one(t) for t in tasks]

    rows = [ReportRow.from_record(rec, t[2].name) for rec, t in zip(records, tasks)]
    return ComparisonReport(rows, names, skipped, records)


def _csv_text(dicts: list[dict], columns) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=list(columns), lineterminator="\n")
    writer.writeheader()
    for d in dicts:
        writer.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in d.items()})
    return buf.getvalue()


SUMMARY_FIELDS = ("method", "n", "mean_delta_v", "std_delta_v", "min_delta_v", "max_delta_v",
                  "success_rate", *(f"mean_{c}" for c in COMPONENTS))
DOMINANCE_FIELDS = ("method_a", "method_b", "wins", "ties", "losses", "n")


def plot_data(report: ComparisonReport) -> list[dict]:
    v0 = {r.grid_id: r.v0 for r in report.rows}
    out = []
    for gid in report.grid_ids:
        row = {"grid_id": gid, "v0": v0[gid]}
        for m in report.methods:
            row[f"delta_v_{m}"] = report.delta_v(m).get(gid, "")
        out.append(row)
    return out


def write_report(report: ComparisonReport, out_dir) -> dict[str, Path]:
    out_dir = Path(out_dir)
    paths = {name: out_dir / f"{name}.csv" for name in ("report", "summary", "dominance", "plot_data")}
    atomic_write_text(paths["report"], _csv_text([asdict(r) for r in report.rows], ROW_FIELDS))
    atomic_write_text(paths["summary"], _csv_text(report.summary(), SUMMARY_FIELDS))
    atomic_write_text(paths["dominance"], _csv_text(report.dominance(), DOMINANCE_FIELDS))
    atomic_write_text(paths["plot_data"], _csv_text(
        plot_data(report), ("grid_id", "v0", *(f"delta_v_{m}" for m in report.methods))))
    return paths


def read_rows(path) -> list[ReportRow]:
    rows = []
    with open(path, newline="") as fh:
        for d in csv.DictReader(fh):
            rows.append(ReportRow(
                d["grid_id"], float(d["v0"]), d["method"], int(d["seed"]), float(d["delta_v"]),
                *(float(d[c]) for c in COMPONENTS), float(d["v_final"]), d["cause"], int(d["n_steps"])))
    return rows
