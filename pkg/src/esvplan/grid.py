"""Land-cover grid representation.

A grid is an ``M x M`` array of cells; each cell holds integer pixel counts
over the nine land-cover classes and always sums to ``n_pixels``.  Fractions
(observations, the water map) are derived views over the integer counts.
"""

from __future__ import annotations

import enum
import hashlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .manifest import atomic_write_text

N_CLASSES = 9
DEFAULT_N_PIXELS = 25
EPISODE_M = 10
REGION_M = 50


class Kind(enum.Enum):
    PROTECTED = "Protected"
    MODIFIABLE = "Modifiable"


class LandClass(enum.IntEnum):
    WATER = 0
    TREES = 1
    FLOODED = 2
    CROPS = 3
    BUILT_AREA = 4
    BARE_GROUND = 5
    SNOW_ICE = 6
    CLOUDS = 7
    RANGELAND = 8

    @property
    def label(self) -> str:
        return CLASS_NAMES[self]

    @property
    def kind(self) -> Kind:
        return Kind.MODIFIABLE if self in MODIFIABLE else Kind.PROTECTED

    @property
    def modifiable_index(self) -> int | None:
        """Position in the K-channel observation, or None for protected classes."""
        try:
            return MODIFIABLE.index(self)
        except ValueError:
            return None

    @classmethod
    def parse(cls, name: str) -> "LandClass":
        key = name.strip().lower().replace("_", "").replace(" ", "").replace("/", "")
        for c in cls:
            if key in (CLASS_NAMES[c].lower(), c.name.lower().replace("_", "")):
                return c
        aliases = {"built": cls.BUILT_AREA, "bare": cls.BARE_GROUND, "snow": cls.SNOW_ICE,
                   "tree": cls.TREES, "crop": cls.CROPS, "wetland": cls.FLOODED,
                   "wetlands": cls.FLOODED, "range": cls.RANGELAND}
        if key in aliases:
            return aliases[key]
        raise ValueError(f"unknown land-cover class {name!r}")


CLASS_NAMES = {
    LandClass.WATER: "Water",
    LandClass.TREES: "Trees",
    LandClass.FLOODED: "Flooded",
    LandClass.CROPS: "Crops",
    LandClass.BUILT_AREA: "BuiltArea",
    LandClass.BARE_GROUND: "BareGround",
    LandClass.SNOW_ICE: "SnowIce",
    LandClass.CLOUDS: "Clouds",
    LandClass.RANGELAND: "Rangeland",
}

PROTECTED = (LandClass.WATER, LandClass.FLOODED, LandClass.SNOW_ICE, LandClass.CLOUDS)
# Order defines the observation/action channel index 0..K-1.
MODIFIABLE = (LandClass.TREES, LandClass.CROPS, LandClass.BUILT_AREA,
              LandClass.BARE_GROUND, LandClass.RANGELAND)
K = len(MODIFIABLE)
MOD_IDX = np.array([int(c) for c in MODIFIABLE])
PROT_IDX = np.array([int(c) for c in PROTECTED])

# Modifiable channel indices used by the spatial reward terms.
TREE_K = MODIFIABLE.index(LandClass.TREES)
CROP_K = MODIFIABLE.index(LandClass.CROPS)
BUILT_K = MODIFIABLE.index(LandClass.BUILT_AREA)


class GridFormatError(ValueError):
    pass


def neighbor_convolve(field: np.ndarray) -> np.ndarray:
    """Sum of each entry's 4-connected neighbours, zero-padded at the boundary.

    Equivalent to 2D convolution with ``[[0,1,0],[1,0,1],[0,1,0]]``.
    Works on ``(M, M)`` fields and on stacks ``(M, M, C)`` channel-wise.
    """
    field = np.asarray(field, dtype=np.float64)
    out = np.zeros_like(field)
    out[1:] += field[:-1]
    out[:-1] += field[1:]
    out[:, 1:] += field[:, :-1]
    out[:, :-1] += field[:, 1:]
    return out


@dataclass(frozen=True, eq=False)
class GridState:
    """Immutable ``(M, M, 9)`` integer pixel-count grid."""

    counts: np.ndarray
    n_pixels: int = DEFAULT_N_PIXELS

    def __post_init__(self):
        counts = np.array(self.counts, dtype=np.int64)
        if counts.ndim != 3 or counts.shape[0] != counts.shape[1] or counts.shape[2] != N_CLASSES:
            raise ValueError(f"counts must have shape (M, M, {N_CLASSES}), got {counts.shape}")
        if self.n_pixels <= 0:
            raise ValueError("n_pixels must be positive")
        if (counts < 0).any():
            raise ValueError("pixel counts must be non-negative")
        sums = counts.sum(axis=2)
        if (sums != self.n_pixels).any():
            i, j = np.argwhere(sums != self.n_pixels)[0]
            raise ValueError(f"cell ({i}, {j}) sums to {sums[i, j]}, expected {self.n_pixels}")
        counts.setflags(write=False)
        object.__setattr__(self, "counts", counts)

    @property
    def m(self) -> int:
        return self.counts.shape[0]

    def __eq__(self, other):
        if not isinstance(other, GridState):
            return NotImplemented
        return self.n_pixels == other.n_pixels and np.array_equal(self.counts, other.counts)

    def __hash__(self):
        return hash((self.n_pixels, self.counts.tobytes()))

    @classmethod
    def uniform(cls, m: int, land_class: LandClass, n_pixels: int = DEFAULT_N_PIXELS) -> "GridState":
        counts = np.zeros((m, m, N_CLASSES), dtype=np.int64)
        counts[..., int(land_class)] = n_pixels
        return cls(counts, n_pixels)

    def with_counts(self, counts: np.ndarray) -> "GridState":
        return GridState(counts, self.n_pixels)

    def modifiable_counts(self) -> np.ndarray:
        return self.counts[..., MOD_IDX]

    def observation(self) -> np.ndarray:
        """``(M, M, K)`` modifiable-class fractions in [0, 1]."""
        return self.modifiable_counts() / float(self.n_pixels)

    def water_map(self) -> np.ndarray:
        return self.counts[..., int(LandClass.WATER)] / float(self.n_pixels)

    def modifiable_fraction(self) -> float:
        return float(self.modifiable_counts().sum()) / float(self.counts.sum())

    def class_shares(self) -> np.ndarray:
        totals = self.counts.sum(axis=(0, 1))
        return totals / totals.sum()

    def to_text(self) -> str:
        lines = [f"gridfile v1 M={self.m} NP={self.n_pixels}"]
        for i in range(self.m):
            for j in range(self.m):
                lines.append(f"{i} {j} " + " ".join(str(int(c)) for c in self.counts[i, j]))
        return "\n".join(lines) + "\n"

    def digest(self) -> str:
        return hashlib.sha256(self.to_text().encode()).hexdigest()


def water_adjacent(state: GridState, threshold: int = 0) -> np.ndarray:
    """Cells with a 4-neighbour whose Water count exceeds ``threshold``."""
    is_water = (state.counts[..., int(LandClass.WATER)] > threshold).astype(np.float64)
    return neighbor_convolve(is_water) > 0


def parse_grid(text: str) -> GridState:
    lines = [ln for ln in text.splitlines() if ln.strip() and not ln.lstrip().startswith("#")]
    if not lines:
        raise GridFormatError("empty grid file")
    header = lines[0].split()
    if len(header) != 4 or header[:2] != ["gridfile", "v1"]:
        raise GridFormatError(f"bad header: {lines[0]!r}")
    try:
        fields = dict(tok.split("=", 1) for tok in header[2:])
        m, n_pixels = int(fields["M"]), int(fields["NP"])
    except (KeyError, ValueError) as exc:
        raise GridFormatError(f"bad header: {lines[0]!r}") from exc
    if m <= 0 or n_pixels <= 0:
        raise GridFormatError("M and NP must be positive")

    counts = np.zeros((m, m, N_CLASSES), dtype=np.int64)
    seen = np.zeros((m, m), dtype=bool)
    for lineno, line in enumerate(lines[1:], start=2):
        parts = line.split()
        if len(parts) != 2 + N_CLASSES:
            raise GridFormatError(f"line {lineno}: expected {2 + N_CLASSES} fields")
        try:
            i, j, *row = (int(p) for p in parts)
        except ValueError as exc:
            raise GridFormatError(f"line {lineno}: non-integer field") from exc
        if not (0 <= i < m and 0 <= j < m):
            raise GridFormatError(f"line {lineno}: cell ({i}, {j}) out of range")
        if seen[i, j]:
            raise GridFormatError(f"line {lineno}: duplicate cell ({i}, {j})")
        if min(row) < 0:
            raise GridFormatError(f"line {lineno}: negative count")
        if sum(row) != n_pixels:
            raise GridFormatError(f"line {lineno}: counts sum to {sum(row)}, expected NP={n_pixels}")
        counts[i, j] = row
        seen[i, j] = True
    if not seen.all():
        i, j = np.argwhere(~seen)[0]
        raise GridFormatError(f"missing cell ({i}, {j})")
    return GridState(counts, n_pixels)


def read_grid(path) -> GridState:
    return parse_grid(Path(path).read_text())


def write_grid(state: GridState, path) -> None:
    atomic_write_text(path, state.to_text())
