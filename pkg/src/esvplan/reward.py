"""Total value of a grid state and per-step reward.

``V = V_eco + w_T*C_T + w_C*C_C + w_B*C_B - w_W*P_W + w_R*B_R`` where every
spatial term is ``ln(1 + sum)`` over a product of a class-fraction field and
the 4-neighbour sum of another field.  The reward for a transition is the
difference in ``V`` at a fixed anneal progress.

Two evaluation routes exist: the naive one recomputes every term from
scratch, the incremental one keeps the pre-log sums of a state and updates
them from the modified cell's 4-neighbourhood only.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields, replace

import numpy as np

from .esv import BASE_UPLIFT, HEADLINE_UPLIFT, EsvTable
from .grid import BUILT_K, CROP_K, K, TREE_K, GridState, LandClass, neighbor_convolve
from .manifest import sha256_text


@dataclass(frozen=True)
class RewardConfig:
    w_T: float = 1.0
    w_C: float = 4.0
    w_B: float = 2.0
    w_R: float = 5.0
    w_W_start: float = 1.0
    w_W_end: float = 6.0
    w_W_ramp_fraction: float = 0.6
    preset: str = "headline"

    def __post_init__(self):
        for name in ("w_T", "w_C", "w_B", "w_R", "w_W_start", "w_W_end"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if not 0 < self.w_W_ramp_fraction <= 1:
            raise ValueError("w_W_ramp_fraction must lie in (0, 1]")

    @classmethod
    def fixed(cls, w_T=0.0, w_C=0.0, w_B=0.0, w_W=0.0, w_R=0.0, preset="custom") -> "RewardConfig":
        return cls(w_T, w_C, w_B, w_R, w_W, w_W, 1.0, preset)

    def w_W(self, progress: float = 1.0) -> float:
        """Buffer-penalty weight after a linear ramp over ``w_W_ramp_fraction`` of progress."""
        p = min(max(progress, 0.0), 1.0)
        ramp = min(p / self.w_W_ramp_fraction, 1.0)
        return self.w_W_start + (self.w_W_end - self.w_W_start) * ramp

    @property
    def is_eco_only(self) -> bool:
        return not any((self.w_T, self.w_C, self.w_B, self.w_R, self.w_W_start, self.w_W_end))

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "RewardConfig":
        kwargs = {}
        for f in fields(cls):
            if f.name in data:
                kwargs[f.name] = str(data[f.name]) if f.name == "preset" else float(data[f.name])
        return cls(**kwargs)

    def to_text(self) -> str:
        return dump_flat(self.to_dict())

    def digest(self) -> str:
        return sha256_text(self.to_text())


@dataclass(frozen=True)
class Scenario:
    name: str
    reward: RewardConfig
    regen_uplift: float
    description: str


HEADLINE = RewardConfig()
SPATIAL_NO_REGEN = replace(HEADLINE, preset="spatial-no-regen")
ECO_ONLY = RewardConfig(0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, "eco-only")

SCENARIOS = {
    "eco-only": Scenario("eco-only", ECO_ONLY, BASE_UPLIFT,
                         "spatial value zeroed; reward is the eco term alone"),
    "spatial-no-regen": Scenario("spatial-no-regen", SPATIAL_NO_REGEN, BASE_UPLIFT,
                                 "headline spatial weights, crops at the un-uplifted coefficient"),
    "headline": Scenario("headline", HEADLINE, HEADLINE_UPLIFT,
                         "headline spatial weights with the 1.35x regenerative crop uplift"),
}


def get_scenario(name: str) -> Scenario:
    try:
        return SCENARIOS[name]
    except KeyError:
        raise KeyError(f"unknown preset {name!r}; choose from {', '.join(SCENARIOS)}") from None


def dump_flat(data: dict) -> str:
    """``key = value`` lines in sorted key order."""
    return "".join(f"{k} = {_fmt(v)}\n" for k, v in sorted(data.items()))


def load_flat(text: str) -> dict[str, str]:
    out = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'key = value'")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


@dataclass(frozen=True)
class ValueBreakdown:
    v_eco: float
    c_tree: float
    c_crop: float
    c_built: float
    p_water: float
    b_riparian: float
    v_total: float

    def to_dict(self) -> dict[str, float]:
        return asdict(self)


COMPONENTS = ("v_eco", "c_tree", "c_crop", "c_built", "p_water", "b_riparian")


def component_weights(config: RewardConfig, progress: float = 1.0) -> dict[str, float]:
    """Signed weight of each component in ``v_total``."""
    return {"v_eco": 1.0, "c_tree": config.w_T, "c_crop": config.w_C, "c_built": config.w_B,
            "p_water": -config.w_W(progress), "b_riparian": config.w_R}


# -- naive route ---------------------------------------------------------------


def eco_value(state: GridState, esv: EsvTable) -> float:
    return float(np.sum(state.observation() * esv.modifiable))


def _contiguity_sum(frac: np.ndarray) -> float:
    return float(np.sum(frac * neighbor_convolve(frac)))


def contiguity(state: GridState, land_class: LandClass) -> float:
    k = land_class.modifiable_index
    if k not in (TREE_K, CROP_K, BUILT_K):
        raise ValueError(f"contiguity is defined for Trees, Crops and BuiltArea, not {land_class.label}")
    return float(np.log1p(_contiguity_sum(state.observation()[..., k])))


def buffer_penalty(state: GridState, water: np.ndarray | None = None) -> float:
    water = state.water_map() if water is None else water
    s = state.observation()
    return float(np.log1p(np.sum((s[..., CROP_K] + s[..., BUILT_K]) * neighbor_convolve(water))))


def riparian_bonus(state: GridState, water: np.ndarray | None = None) -> float:
    water = state.water_map() if water is None else water
    s = state.observation()
    return float(np.log1p(np.sum(s[..., TREE_K] * neighbor_convolve(water))))


def total_value(state: GridState, esv: EsvTable, config: RewardConfig,
                progress: float = 1.0) -> ValueBreakdown:
    water = state.water_map()
    v_eco = eco_value(state, esv)
    c_tree = contiguity(state, LandClass.TREES)
    c_crop = contiguity(state, LandClass.CROPS)
    c_built = contiguity(state, LandClass.BUILT_AREA)
    p_water = buffer_penalty(state, water)
    b_riparian = riparian_bonus(state, water)
    v_total = (v_eco + config.w_T * c_tree + config.w_C * c_crop + config.w_B * c_built
               - config.w_W(progress) * p_water + config.w_R * b_riparian)
    return ValueBreakdown(v_eco, c_tree, c_crop, c_built, p_water, b_riparian, v_total)


def step_reward(before: GridState, after: GridState, esv: EsvTable, config: RewardConfig,
                progress: float = 1.0) -> float:
    return (total_value(after, esv, config, progress).v_total
            - total_value(before, esv, config, progress).v_total)


# -- incremental route ---------------------------------------------------------


class StateCache:
    """Pre-log accumulators and neighbour fields of one state snapshot."""

    def __init__(self, state: GridState):
        self.state = state
        self.frac = state.observation()
        self.nbr = neighbor_convolve(self.frac)           # (M, M, K)
        self.water_nbr = neighbor_convolve(state.water_map())
        self.sum_tree = float(np.sum(self.frac[..., TREE_K] * self.nbr[..., TREE_K]))
        self.sum_crop = float(np.sum(self.frac[..., CROP_K] * self.nbr[..., CROP_K]))
        self.sum_built = float(np.sum(self.frac[..., BUILT_K] * self.nbr[..., BUILT_K]))
        high_impact = self.frac[..., CROP_K] + self.frac[..., BUILT_K]
        self.sum_buffer = float(np.sum(high_impact * self.water_nbr))
        self.sum_riparian = float(np.sum(self.frac[..., TREE_K] * self.water_nbr))


def _transfer_amounts(state: GridState, delta_pixels: int) -> np.ndarray:
    """Pixels each (i, j, src, tgt) tuple would move; zero on the diagonal."""
    moved = np.minimum(state.modifiable_counts(), delta_pixels)
    out = np.broadcast_to(moved[..., :, None], moved.shape + (K,)).astype(np.float64)
    out[..., np.arange(K), np.arange(K)] = 0.0
    return out


def _indicator(channel_set) -> np.ndarray:
    """(K, K) matrix [tgt in set] - [src in set], indexed [src, tgt]."""
    v = np.zeros(K)
    v[list(channel_set)] = 1.0
    return v[None, :] - v[:, None]


_TREE_IND = _indicator([TREE_K])
_CROP_IND = _indicator([CROP_K])
_BUILT_IND = _indicator([BUILT_K])
_HIGH_IMPACT_IND = _indicator([CROP_K, BUILT_K])


def all_deltas(state: GridState, esv: EsvTable, config: RewardConfig, progress: float = 1.0,
               delta_pixels: int = 5, cache: StateCache | None = None) -> np.ndarray:
    """Value change of every (i, j, src, tgt) transfer, shape ``(M, M, K, K)``.

    Entries are defined for infeasible tuples too; the caller applies the mask.
    """
    c = cache if cache is not None and cache.state is state else StateCache(state)
    d = _transfer_amounts(state, delta_pixels) / state.n_pixels
    e = esv.modifiable
    out = d * (e[None, :] - e[:, None])

    def log_gain(total: float, local: np.ndarray) -> np.ndarray:
        return np.log1p(total + local) - np.log1p(total)

    nb = c.nbr[..., None, None]
    wn = c.water_nbr[..., None, None]
    if config.w_T:
        out += config.w_T * log_gain(c.sum_tree, 2.0 * d * nb[:, :, TREE_K] * _TREE_IND)
    if config.w_C:
        out += config.w_C * log_gain(c.sum_crop, 2.0 * d * nb[:, :, CROP_K] * _CROP_IND)
    if config.w_B:
        out += config.w_B * log_gain(c.sum_built, 2.0 * d * nb[:, :, BUILT_K] * _BUILT_IND)
    w_w = config.w_W(progress)
    if w_w:
        out -= w_w * log_gain(c.sum_buffer, d * wn * _HIGH_IMPACT_IND)
    if config.w_R:
        out += config.w_R * log_gain(c.sum_riparian, d * wn * _TREE_IND)
    return out


def incremental_delta(before: GridState, action, esv: EsvTable, config: RewardConfig,
                      progress: float = 1.0, delta_pixels: int = 5,
                      cache: StateCache | None = None) -> float:
    """Value change of one transfer, touching only the affected cell.

    ``action`` needs ``i``, ``j``, ``c_src`` and ``c_tgt`` attributes.
    """
    i, j, src, tgt = action.i, action.j, action.c_src, action.c_tgt
    m = before.m
    if not (0 <= i < m and 0 <= j < m and 0 <= src < K and 0 <= tgt < K):
        raise ValueError(f"action {(i, j, src, tgt)} out of range for M={m}, K={K}")
    if src == tgt:
        return 0.0
    moved = min(int(before.modifiable_counts()[i, j, src]), delta_pixels)
    if moved == 0:
        return 0.0
    c = cache if cache is not None and cache.state is before else StateCache(before)
    d = moved / before.n_pixels
    e = esv.modifiable
    delta = d * (e[tgt] - e[src])

    def log_gain(total: float, local: float) -> float:
        return float(np.log1p(total + local) - np.log1p(total))

    def sign(channels) -> int:
        return (tgt in channels) - (src in channels)

    nb = c.nbr[i, j]
    wn = c.water_nbr[i, j]
    delta += config.w_T * log_gain(c.sum_tree, 2.0 * d * nb[TREE_K] * sign((TREE_K,)))
    delta += config.w_C * log_gain(c.sum_crop, 2.0 * d * nb[CROP_K] * sign((CROP_K,)))
    delta += config.w_B * log_gain(c.sum_built, 2.0 * d * nb[BUILT_K] * sign((BUILT_K,)))
    delta -= config.w_W(progress) * log_gain(c.sum_buffer, d * wn * sign((CROP_K, BUILT_K)))
    delta += config.w_R * log_gain(c.sum_riparian, d * wn * sign((TREE_K,)))
    return float(delta)
