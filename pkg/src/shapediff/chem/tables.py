"""Chemistry lookup tables: allowed valencies, bond length intervals, vdW radii.

Both tables ship as versioned key-value text files ("shapediff-chemtable v1")
and can be reloaded from user-supplied files with the same header.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from importlib import resources

from .mol import AROMATIC_ELEMENTS, PLAIN_ELEMENTS, BondOrder, MoleculeError

TABLE_HEADER = "shapediff-chemtable v1"

# van der Waals radii in Angstrom, used for molecular surface construction
# and Gaussian-volume shape similarity.
VDW_RADII = {
    "H": 1.2, "C": 1.7, "N": 1.55, "O": 1.52, "F": 1.47,
    "P": 1.8, "S": 1.8, "Cl": 1.75, "Br": 1.85, "I": 1.98,
}

_ORDER_NAMES = {"single": BondOrder.SINGLE, "double": BondOrder.DOUBLE, "aromatic": BondOrder.AROMATIC}


def _read_table_lines(text: str, source: str) -> list[list[str]]:
    lines = text.splitlines()
    if not lines or lines[0].strip() != TABLE_HEADER:
        raise MoleculeError(f"{source}: missing header {TABLE_HEADER!r}")
    rows = []
    for raw in lines[1:]:
        stripped = raw.strip()
        if not stripped or stripped.startswith("#"):
            continue
        rows.append(stripped.split())
    return rows


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


class ValencyTable:
    """Allowed total valencies per atom class; aromatic bonds count 1.5."""

    def __init__(self, allowed: dict[tuple[str, bool], frozenset[int]]):
        for el in PLAIN_ELEMENTS:
            if (el, False) not in allowed:
                raise MoleculeError(f"valency table misses class ({el}, plain)")
        for el in AROMATIC_ELEMENTS:
            if (el, True) not in allowed:
                raise MoleculeError(f"valency table misses class ({el}, aromatic)")
        self._allowed = dict(allowed)

    def allowed(self, element: str, aromatic: bool) -> frozenset[int]:
        try:
            return self._allowed[(element, bool(aromatic))]
        except KeyError:
            raise MoleculeError(f"no valency entry for ({element}, aromatic={aromatic})") from None

    def max_valency(self, element: str) -> int:
        vals = [max(v) for (el, _), v in self._allowed.items() if el == element]
        if not vals:
            raise MoleculeError(f"no valency entry for element {element}")
        return max(vals)

    def is_stable(self, element: str, aromatic: bool, valence_sum: float) -> bool:
        return round_half_up(valence_sum) in self.allowed(element, aromatic)

    @classmethod
    def from_text(cls, text: str, source: str = "<valency table>") -> "ValencyTable":
        allowed: dict[tuple[str, bool], frozenset[int]] = {}
        for row in _read_table_lines(text, source):
            if len(row) < 3:
                raise MoleculeError(f"{source}: bad valency row {row}")
            element, flag, values = row[0], row[1], row[2:]
            allowed[(element, flag == "1")] = frozenset(int(v) for v in values)
        return cls(allowed)

    def to_text(self) -> str:
        lines = [TABLE_HEADER]
        for (el, aromatic), values in sorted(self._allowed.items()):
            vals = " ".join(str(v) for v in sorted(values))
            lines.append(f"{el} {1 if aromatic else 0} {vals}")
        return "\n".join(lines) + "\n"


class BondLengthTable:
    """Distance intervals [lo, hi] in Angstrom per (element, element, order)."""

    def __init__(self, intervals: dict[tuple[str, str, BondOrder], tuple[float, float]]):
        self._intervals: dict[tuple[str, str, BondOrder], tuple[float, float]] = {}
        for (a, b, order), (lo, hi) in intervals.items():
            if not lo < hi:
                raise MoleculeError(f"bond interval for {a}-{b} {order.name} has lo >= hi")
            self._intervals[(a, b, order)] = (lo, hi)
            self._intervals[(b, a, order)] = (lo, hi)

    def interval(self, a: str, b: str, order: BondOrder) -> tuple[float, float] | None:
        return self._intervals.get((a, b, order))

    def candidates(self, a: str, b: str) -> list[tuple[BondOrder, float, float]]:
        """All bond orders whose interval could apply to the element pair."""
        out = []
        for order in (BondOrder.SINGLE, BondOrder.DOUBLE, BondOrder.AROMATIC):
            iv = self.interval(a, b, order)
            if iv is not None:
                out.append((order, iv[0], iv[1]))
        return out

    @classmethod
    def from_text(cls, text: str, source: str = "<bond length table>") -> "BondLengthTable":
        intervals = {}
        for row in _read_table_lines(text, source):
            if len(row) != 5:
                raise MoleculeError(f"{source}: bad bond-length row {row}")
            a, b, order_name, lo, hi = row
            if order_name not in _ORDER_NAMES:
                raise MoleculeError(f"{source}: unknown bond order {order_name!r}")
            intervals[(a, b, _ORDER_NAMES[order_name])] = (float(lo), float(hi))
        return cls(intervals)

    def to_text(self) -> str:
        lines = [TABLE_HEADER]
        seen = set()
        for (a, b, order), (lo, hi) in sorted(
            self._intervals.items(), key=lambda kv: (kv[0][0], kv[0][1], int(kv[0][2]))
        ):
            key = frozenset((a, b)), order
            if key in seen:
                continue
            seen.add(key)
            lines.append(f"{a} {b} {order.name.lower()} {lo:.3f} {hi:.3f}")
        return "\n".join(lines) + "\n"


def _load_data(name: str) -> str:
    return resources.files("shapediff.chem").joinpath("data").joinpath(name).read_text()


@dataclass(frozen=True)
class _Defaults:
    valencies: ValencyTable
    bond_lengths: BondLengthTable


_defaults: _Defaults | None = None


def default_tables() -> _Defaults:
    global _defaults
    if _defaults is None:
        _defaults = _Defaults(
            valencies=ValencyTable.from_text(_load_data("valencies.txt"), "valencies.txt"),
            bond_lengths=BondLengthTable.from_text(_load_data("bond_lengths.txt"), "bond_lengths.txt"),
        )
    return _defaults


def default_valencies() -> ValencyTable:
    return default_tables().valencies


def default_bond_lengths() -> BondLengthTable:
    return default_tables().bond_lengths
