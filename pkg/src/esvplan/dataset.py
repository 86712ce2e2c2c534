"""Patch extraction, augmentation, seeded split and synthetic study regions."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .grid import DEFAULT_N_PIXELS, N_CLASSES, GridState, LandClass

# Reference study-region shares; they total 100.1% and are renormalised.
REFERENCE_COMPOSITION = {
    LandClass.WATER: 0.452,
    LandClass.TREES: 0.003,
    LandClass.FLOODED: 0.024,
    LandClass.CROPS: 0.245,
    LandClass.BUILT_AREA: 0.079,
    LandClass.BARE_GROUND: 0.001,
    LandClass.RANGELAND: 0.197,
}
_total = sum(REFERENCE_COMPOSITION.values())
DEFAULT_COMPOSITION = {c: v / _total for c, v in REFERENCE_COMPOSITION.items()}


@dataclass(frozen=True)
class SplitSpec:
    seed: int = 0
    train_fraction: float = 0.7
    n_aug: int = 5
    shift_range: int = 2

    def __post_init__(self):
        if not 0 < self.train_fraction < 1:
            raise ValueError("train_fraction must lie in (0, 1)")
        if self.n_aug < 0 or self.shift_range < 0:
            raise ValueError("n_aug and shift_range must be non-negative")


@dataclass(frozen=True)
class Patch:
    index: int
    origin: tuple[int, int]
    shift: tuple[int, int]
    grid: GridState = field(compare=False)

    @property
    def patch_id(self) -> str:
        return f"p{self.index:02d}_o{self.origin[0]}-{self.origin[1]}_s{self.shift[0]:+d}{self.shift[1]:+d}"


def patch_origins(m: int, patch_size: int = 10) -> list[tuple[int, int]]:
    if patch_size <= 0 or m % patch_size:
        raise ValueError(f"region size {m} is not divisible by patch size {patch_size}")
    return [(r, c) for r in range(0, m, patch_size) for c in range(0, m, patch_size)]


def crop(region: GridState, origin: tuple[int, int], size: int) -> GridState:
    r, c = origin
    return region.with_counts(region.counts[r:r + size, c:c + size])


def extract_patches(region: GridState, patch_size: int = 10) -> list[GridState]:
    """Non-overlapping row-major tiles."""
    return [crop(region, o, patch_size) for o in patch_origins(region.m, patch_size)]


def reassemble(patches: list[GridState], m: int) -> GridState:
    size = patches[0].m
    counts = np.zeros((m, m, N_CLASSES), dtype=np.int64)
    for (r, c), p in zip(patch_origins(m, size), patches):
        counts[r:r + size, c:c + size] = p.counts
    return GridState(counts, patches[0].n_pixels)


def split(patches, spec: SplitSpec) -> tuple[list[int], list[int]]:
    n = patches if isinstance(patches, int) else len(patches)
    if n < 2:
        raise ValueError("need at least two patches to split")
    order = np.random.default_rng(spec.seed).permutation(n)
    n_train = math.floor(spec.train_fraction * n + 1e-9)
    return sorted(int(i) for i in order[:n_train]), sorted(int(i) for i in order[n_train:])


def augment(region: GridState, patch_origin: tuple[int, int], spec: SplitSpec, patch_size: int = 10,
            index: int = 0) -> list[Patch]:
    """The original patch plus ``n_aug`` copies shifted by up to ``shift_range`` cells.

    Shifted windows that would leave the region are clamped to its edge.
    """
    r0, c0 = patch_origin
    hi = region.m - patch_size
    rng = np.random.default_rng([spec.seed, r0, c0])
    out = [Patch(index, (r0, c0), (0, 0), crop(region, (r0, c0), patch_size))]
    for _ in range(spec.n_aug):
        dr, dc = (int(x) for x in rng.integers(-spec.shift_range, spec.shift_range + 1, size=2))
        r = min(max(r0 + dr, 0), hi)
        c = min(max(c0 + dc, 0), hi)
        out.append(Patch(index, (r0, c0), (r - r0, c - c0), crop(region, (r, c), patch_size)))
    return out


@dataclass
class Dataset:
    train_indices: list[int]
    test_indices: list[int]
    train: list[Patch]
    test: list[Patch]
    originals: list[Patch]


def build_dataset(region: GridState, spec: SplitSpec, patch_size: int = 10) -> Dataset:
    origins = patch_origins(region.m, patch_size)
    train_idx, test_idx = split(len(origins), spec)
    train = [p for i in train_idx for p in augment(region, origins[i], spec, patch_size, i)]
    test = [p for i in test_idx for p in augment(region, origins[i], spec, patch_size, i)]
    originals = [Patch(i, o, (0, 0), crop(region, o, patch_size)) for i, o in enumerate(origins)]
    return Dataset(train_idx, test_idx, train, test, originals)


# -- synthetic regions ------------------------------------------------------------------


def validate_composition(composition: dict) -> dict[LandClass, float]:
    comp = {LandClass(k) if not isinstance(k, str) else LandClass.parse(k): float(v)
            for k, v in composition.items()}
    if any(v < 0 for v in comp.values()):
        raise ValueError("composition fractions must be non-negative")
    total = sum(comp.values())
    if abs(total - 1.0) > 1e-6:
        raise ValueError(f"composition fractions sum to {total}, expected 1")
    return comp


def _cell_targets(comp: dict[LandClass, float], n_cells: int) -> dict[LandClass, int]:
    """Largest-remainder apportionment of cells to classes."""
    raw = {c: v * n_cells for c, v in comp.items() if v > 0}
    out = {c: int(math.floor(v)) for c, v in raw.items()}
    left = n_cells - sum(out.values())
    for c in sorted(raw, key=lambda c: (-(raw[c] - out[c]), int(c)))[:left]:
        out[c] += 1
    return out


def _lake(m: int, n_cells: int, rng: np.random.Generator) -> np.ndarray:
    """One shore-attached water body of exactly ``n_cells`` cells with a wobbly shoreline."""
    steps = rng.normal(0.0, 0.8, size=m)
    shore = np.cumsum(steps)
    shore = np.convolve(np.pad(shore, 2, mode="edge"), np.ones(5) / 5, mode="valid")
    score = np.arange(m)[None, :] - shore[:, None] + rng.uniform(0, 0.5, size=(m, m))
    order = np.argsort(score, axis=None, kind="stable")
    lake = np.zeros(m * m, dtype=bool)
    lake[order[:n_cells]] = True
    lake = lake.reshape(m, m)
    return np.rot90(lake, k=int(rng.integers(4)))


_NEIGHBORS = ((-1, 0), (1, 0), (0, -1), (0, 1))


def _grow(labels: np.ndarray, cls: int, target: int, n_blobs: int, rng: np.random.Generator,
          seed_pool: np.ndarray | None = None) -> None:
    """Eden growth of ``n_blobs`` blobs of ``cls`` into unlabeled (-1) cells."""
    m = labels.shape[0]
    frontiers: list[list[tuple[int, int]]] = []

    def seed_blob():
        free = np.argwhere(labels < 0)
        if seed_pool is not None:
            pool = free[seed_pool[free[:, 0], free[:, 1]]]
            free = pool if len(pool) else free
        r, c = free[rng.integers(len(free))]
        return [(int(r), int(c))]

    placed = 0
    for _ in range(n_blobs):
        frontiers.append(seed_blob())
    b = 0
    while placed < target:
        front = frontiers[b % len(frontiers)]
        while front:
            r, c = front.pop(int(rng.integers(len(front))))
            if labels[r, c] < 0:
                break
        else:
            frontiers[b % len(frontiers)] = seed_blob()
            continue
        labels[r, c] = cls
        placed += 1
        front.extend((r + dr, c + dc) for dr, dc in _NEIGHBORS
                     if 0 <= r + dr < m and 0 <= c + dc < m and labels[r + dr, c + dc] < 0)
        b += 1


def _mix_boundaries(counts: np.ndarray, labels: np.ndarray, rng: np.random.Generator,
                    n_pixels: int, mix_prob: float) -> None:
    """Swap equal pixel amounts across class boundaries; class totals are unchanged."""
    m = labels.shape[0]
    pairs = [((r, c), (r + dr, c + dc)) for r in range(m) for c in range(m)
             for dr, dc in ((1, 0), (0, 1)) if r + dr < m and c + dc < m]
    for k in rng.permutation(len(pairs)):
        a, b = pairs[k]
        la, lb = labels[a], labels[b]
        if la == lb or rng.random() >= mix_prob:
            continue
        cap = min(counts[a][la], counts[b][lb], n_pixels // 3)
        if cap < 1:
            continue
        x = int(rng.integers(1, cap + 1))
        counts[a][la] -= x
        counts[a][lb] += x
        counts[b][lb] -= x
        counts[b][la] += x


def synth_region(m: int = 50, composition: dict | None = None, seed: int = 0,
                 n_pixels: int = DEFAULT_N_PIXELS, mix_prob: float = 0.5) -> GridState:
    """Seeded region of spatially clustered land-cover blobs.

    Water forms one shore-attached body, Flooded is seeded along the shore,
    the most common remaining class fills the gaps, and the rest grow as
    blobs.  Pixel shares match ``composition`` to within one cell's worth.
    """
    comp = validate_composition(DEFAULT_COMPOSITION if composition is None else composition)
    rng = np.random.default_rng(seed)
    targets = _cell_targets(comp, m * m)
    labels = np.full((m, m), -1, dtype=np.int64)

    water = targets.pop(LandClass.WATER, 0)
    if water:
        labels[_lake(m, water, rng)] = int(LandClass.WATER)
    if targets:
        fill = max(targets, key=lambda c: (targets[c], -int(c)))
        for cls in sorted((c for c in targets if c != fill), key=lambda c: (-targets[c], int(c))):
            pool = None
            if cls == LandClass.FLOODED and water:
                is_water = (labels == int(LandClass.WATER)).astype(float)
                near = np.zeros_like(is_water)
                near[1:] += is_water[:-1]
                near[:-1] += is_water[1:]
                near[:, 1:] += is_water[:, :-1]
                near[:, :-1] += is_water[:, 1:]
                pool = near > 0
            n_blobs = max(1, round(targets[cls] / 40))
            _grow(labels, int(cls), targets[cls], n_blobs, rng, pool)
        labels[labels < 0] = int(fill)

    counts = np.zeros((m, m, N_CLASSES), dtype=np.int64)
    np.put_along_axis(counts, labels[..., None], n_pixels, axis=2)
    _mix_boundaries(counts, labels, rng, n_pixels, mix_prob)
    return GridState(counts, n_pixels)
