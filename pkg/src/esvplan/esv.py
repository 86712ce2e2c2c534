"""Benefit-transfer ESV coefficients with regenerative-crop uplift.

Raw values are USD/ha/yr per land-cover class.  Normalisation is min-max
over all nine classes; BareGround/SnowIce/Clouds sit at zero, so with the
default table this is a division by the largest value (Flooded, 1136).
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .grid import CLASS_NAMES, MOD_IDX, N_CLASSES, LandClass

RAW_ESV = {
    LandClass.WATER: 554.0,
    LandClass.TREES: 238.0,
    LandClass.FLOODED: 1136.0,
    LandClass.CROPS: 246.0,
    LandClass.BUILT_AREA: 295.0,
    LandClass.BARE_GROUND: 0.0,
    LandClass.SNOW_ICE: 0.0,
    LandClass.CLOUDS: 0.0,
    LandClass.RANGELAND: 184.0,
}

HEADLINE_UPLIFT = 1.35
BASE_UPLIFT = 1.0


@dataclass(frozen=True, eq=False)
class EsvTable:
    raw_usd_per_ha_yr: np.ndarray
    regen_uplift: float
    raw_effective: np.ndarray
    normalized: np.ndarray
    warnings: tuple[str, ...] = field(default=())

    def __getitem__(self, land_class: LandClass) -> float:
        return float(self.normalized[int(land_class)])

    @property
    def modifiable(self) -> np.ndarray:
        """Normalised coefficients in observation-channel order."""
        return self.normalized[MOD_IDX]

    def as_dict(self) -> dict[str, float]:
        return {CLASS_NAMES[LandClass(i)]: float(v) for i, v in enumerate(self.normalized)}


def build_esv_table(regen_uplift: float = HEADLINE_UPLIFT, raw: dict | None = None) -> EsvTable:
    if not regen_uplift > 0:
        raise ValueError(f"regen_uplift must be positive, got {regen_uplift}")
    values = dict(RAW_ESV)
    if raw:
        values.update({LandClass(k): float(v) for k, v in raw.items()})
    raw_arr = np.array([values[LandClass(i)] for i in range(N_CLASSES)], dtype=np.float64)
    if (raw_arr < 0).any():
        raise ValueError("raw ESV values must be non-negative")

    eff = raw_arr.copy()
    eff[LandClass.CROPS] *= regen_uplift
    lo, hi = eff.min(), eff.max()
    if hi <= lo:
        raise ValueError("ESV table is constant; cannot normalise")
    normalized = (eff - lo) / (hi - lo)

    notes = []
    others = np.delete(eff, int(LandClass.CROPS))
    if eff[LandClass.CROPS] > others.max():
        notes.append(
            f"uplift {regen_uplift} makes Crops the normalisation maximum "
            f"({eff[LandClass.CROPS]:.1f}); all other coefficients shrink accordingly"
        )
    for arr in (raw_arr, eff, normalized):
        arr.setflags(write=False)
    return EsvTable(raw_arr, float(regen_uplift), eff, normalized, tuple(notes))


def parse_esv_overrides(text: str) -> dict[LandClass, float]:
    """Parse ``class_name,raw_value`` rows; a header row is optional."""
    out = {}
    for row in csv.reader(io.StringIO(text)):
        if not row or not "".join(row).strip() or row[0].lstrip().startswith("#"):
            continue
        if len(row) != 2:
            raise ValueError(f"expected 'class_name,raw_value', got {row!r}")
        name, value = row[0].strip(), row[1].strip()
        if name.lower() == "class_name":
            continue
        out[LandClass.parse(name)] = float(value)
    return out


def read_esv_overrides(path) -> dict[LandClass, float]:
    return parse_esv_overrides(Path(path).read_text())
