"""Molecular data model: atoms with 3D positions, one-hot features, typed bonds."""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np


class MoleculeError(ValueError):
    pass


class UnsupportedElementError(MoleculeError):
    pass


# Atom classes: 10 plain elements followed by the 5 elements that may carry
# an aromatic flag. Index into this list == one-hot feature index.
PLAIN_ELEMENTS = ("H", "C", "N", "O", "F", "P", "S", "Cl", "Br", "I")
AROMATIC_ELEMENTS = ("C", "N", "O", "P", "S")
FEATURE_CLASSES: tuple[tuple[str, bool], ...] = tuple(
    [(el, False) for el in PLAIN_ELEMENTS] + [(el, True) for el in AROMATIC_ELEMENTS]
)
NUM_ATOM_CLASSES = len(FEATURE_CLASSES)  # 15

_CLASS_INDEX = {cls: i for i, cls in enumerate(FEATURE_CLASSES)}


def feature_index(element: str, aromatic: bool) -> int:
    """Map (element, aromatic) to its one-hot index; rejects unknown classes."""
    try:
        return _CLASS_INDEX[(element, bool(aromatic))]
    except KeyError:
        raise UnsupportedElementError(
            f"unsupported atom class: element={element!r} aromatic={aromatic}"
        ) from None


def feature_class(index: int) -> tuple[str, bool]:
    """Inverse of feature_index."""
    if not 0 <= index < NUM_ATOM_CLASSES:
        raise MoleculeError(f"feature index {index} out of range 0..{NUM_ATOM_CLASSES - 1}")
    return FEATURE_CLASSES[index]


class BondOrder(IntEnum):
    NONE = 0
    SINGLE = 1
    DOUBLE = 2
    AROMATIC = 3

    @property
    def valence(self) -> float:
        return {0: 0.0, 1: 1.0, 2: 2.0, 3: 1.5}[int(self)]


NUM_BOND_CLASSES = 4


@dataclass(frozen=True)
class Atom:
    position: np.ndarray  # (3,) float64, Angstrom
    element: str
    aromatic: bool = False

    def __post_init__(self):
        pos = np.asarray(self.position, dtype=np.float64).reshape(3)
        if not np.all(np.isfinite(pos)):
            raise MoleculeError(f"non-finite atom position {pos}")
        object.__setattr__(self, "position", pos)
        feature_index(self.element, self.aromatic)  # validates the class

    @property
    def feature_index(self) -> int:
        return feature_index(self.element, self.aromatic)

    @property
    def feature(self) -> np.ndarray:
        one_hot = np.zeros(NUM_ATOM_CLASSES, dtype=np.float64)
        one_hot[self.feature_index] = 1.0
        return one_hot

    @classmethod
    def from_class(cls, position, index: int) -> "Atom":
        element, aromatic = feature_class(index)
        return cls(position=np.asarray(position, dtype=np.float64), element=element, aromatic=aromatic)


@dataclass(frozen=True)
class Bond:
    i: int
    j: int
    order: BondOrder

    def __post_init__(self):
        if self.i == self.j:
            raise MoleculeError(f"bond connects atom {self.i} to itself")
        object.__setattr__(self, "order", BondOrder(self.order))
        if self.order == BondOrder.NONE:
            raise MoleculeError("a stored bond cannot have order NONE")

    @property
    def pair(self) -> tuple[int, int]:
        return (self.i, self.j) if self.i < self.j else (self.j, self.i)

    @property
    def one_hot(self) -> np.ndarray:
        vec = np.zeros(NUM_BOND_CLASSES, dtype=np.float64)
        vec[int(self.order)] = 1.0
        return vec


@dataclass
class Molecule:
    atoms: list[Atom]
    bonds: list[Bond] = field(default_factory=list)
    name: str = ""

    def __post_init__(self):
        if len(self.atoms) < 1:
            raise MoleculeError("molecule needs at least one atom")
        n = len(self.atoms)
        seen: set[tuple[int, int]] = set()
        for b in self.bonds:
            if not (0 <= b.i < n and 0 <= b.j < n):
                raise MoleculeError(f"bond ({b.i},{b.j}) references a missing atom (n={n})")
            if b.pair in seen:
                raise MoleculeError(f"duplicate bond for atom pair {b.pair}")
            seen.add(b.pair)

    def __len__(self) -> int:
        return len(self.atoms)

    @property
    def positions(self) -> np.ndarray:
        return np.stack([a.position for a in self.atoms])

    @property
    def elements(self) -> list[str]:
        return [a.element for a in self.atoms]

    @property
    def features(self) -> np.ndarray:
        return np.stack([a.feature for a in self.atoms])

    def bond_lookup(self) -> dict[tuple[int, int], BondOrder]:
        """Unordered-pair -> order map; absent pairs mean BondOrder.NONE."""
        return {b.pair: b.order for b in self.bonds}

    def neighbors(self, i: int) -> list[int]:
        out = []
        for b in self.bonds:
            if b.i == i:
                out.append(b.j)
            elif b.j == i:
                out.append(b.i)
        return sorted(out)

    def translated(self, shift) -> "Molecule":
        shift = np.asarray(shift, dtype=np.float64).reshape(3)
        atoms = [Atom(a.position + shift, a.element, a.aromatic) for a in self.atoms]
        return Molecule(atoms=atoms, bonds=list(self.bonds), name=self.name)
