"""V2000 SDF / XYZ text I/O for the supported 15-class atom model."""
from __future__ import annotations

import numpy as np

from .graph import cyclic_edges
from .mol import (
    AROMATIC_ELEMENTS,
    PLAIN_ELEMENTS,
    Atom,
    Bond,
    BondOrder,
    Molecule,
    MoleculeError,
    UnsupportedElementError,
)


class SdfParseError(MoleculeError):
    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


_BOND_CODE_TO_ORDER = {1: BondOrder.SINGLE, 2: BondOrder.DOUBLE, 4: BondOrder.AROMATIC}
_ORDER_TO_BOND_CODE = {v: k for k, v in _BOND_CODE_TO_ORDER.items()}


def _normalize_element(symbol: str, line: int) -> str:
    el = symbol.strip().capitalize()
    if el not in PLAIN_ELEMENTS:
        raise UnsupportedElementError(f"line {line}: unsupported element {symbol.strip()!r}")
    return el


def _parse_record(lines: list[str], offset: int) -> Molecule:
    if len(lines) < 4:
        raise SdfParseError("record too short for a V2000 header", offset + len(lines))
    name = lines[0].strip()
    counts = lines[3]
    counts_line_no = offset + 4
    try:
        n_atoms = int(counts[0:3])
        n_bonds = int(counts[3:6])
    except (ValueError, IndexError):
        raise SdfParseError(f"malformed counts line {counts!r}", counts_line_no) from None
    if "V2000" not in counts:
        raise SdfParseError("only V2000 records are supported", counts_line_no)
    if n_atoms < 1:
        raise SdfParseError("record declares zero atoms", counts_line_no)
    if len(lines) < 4 + n_atoms + n_bonds:
        raise SdfParseError("record shorter than its declared atom/bond blocks", counts_line_no)

    raw_atoms: list[tuple[np.ndarray, str]] = []
    for k in range(n_atoms):
        line_no = counts_line_no + 1 + k
        raw = lines[4 + k]
        try:
            pos = np.array([float(raw[0:10]), float(raw[10:20]), float(raw[20:30])])
            symbol = raw[31:34]
        except (ValueError, IndexError):
            raise SdfParseError(f"malformed atom line {raw!r}", line_no) from None
        raw_atoms.append((pos, _normalize_element(symbol, line_no)))

    bonds: list[tuple[int, int, BondOrder]] = []
    for k in range(n_bonds):
        line_no = counts_line_no + 1 + n_atoms + k
        raw = lines[4 + n_atoms + k]
        try:
            i = int(raw[0:3]) - 1
            j = int(raw[3:6]) - 1
            code = int(raw[6:9])
        except (ValueError, IndexError):
            raise SdfParseError(f"malformed bond line {raw!r}", line_no) from None
        if code not in _BOND_CODE_TO_ORDER:
            raise SdfParseError(f"unsupported bond order code {code}", line_no)
        if not (0 <= i < n_atoms and 0 <= j < n_atoms):
            raise SdfParseError(f"bond references missing atom {i + 1} or {j + 1}", line_no)
        bonds.append((i, j, _BOND_CODE_TO_ORDER[code]))

    # Aromatic atom flags come from order-4 bonds confirmed by ring perception;
    # stray acyclic order-4 bonds keep their order but flag no atoms.
    aromatic_pairs = [(i, j) for i, j, order in bonds if order == BondOrder.AROMATIC]
    aromatic_atoms: set[int] = set()
    if aromatic_pairs:
        in_ring = cyclic_edges(n_atoms, [(i, j) for i, j, _ in bonds])
        for i, j in aromatic_pairs:
            if tuple(sorted((i, j))) in in_ring:
                aromatic_atoms.update((i, j))

    atoms = []
    for idx, (pos, el) in enumerate(raw_atoms):
        aromatic = idx in aromatic_atoms
        if aromatic and el not in AROMATIC_ELEMENTS:
            raise UnsupportedElementError(
                f"line {counts_line_no}: element {el} cannot be aromatic in the 15-class model"
            )
        atoms.append(Atom(position=pos, element=el, aromatic=aromatic))
    return Molecule(atoms=atoms, bonds=[Bond(i, j, o) for i, j, o in bonds], name=name)


def parse_sdf(text: str) -> list[Molecule]:
    """Parse a V2000 SDF string into molecules; empty input yields an empty list."""
    lines = text.split("\n")
    molecules: list[Molecule] = []
    record: list[str] = []
    record_start = 0
    for line_no, line in enumerate(lines):
        if line.strip() == "$$$$":
            if any(l.strip() for l in record):
                molecules.append(_parse_record(record, record_start))
            record = []
            record_start = line_no + 1
        else:
            record.append(line)
    if any(l.strip() for l in record):
        molecules.append(_parse_record(record, record_start))
    return molecules


def read_sdf(path) -> list[Molecule]:
    with open(path, encoding="utf-8") as handle:
        return parse_sdf(handle.read())


def serialize_molecule(m: Molecule, format: str = "sdf") -> str:
    if format == "sdf":
        return _to_sdf(m)
    if format == "xyz":
        return _to_xyz(m)
    raise MoleculeError(f"unknown serialization format {format!r}")


def _to_sdf(m: Molecule) -> str:
    lines = [m.name, "  shapediff          3D", ""]
    lines.append(f"{len(m.atoms):3d}{len(m.bonds):3d}  0  0  0  0  0  0  0  0999 V2000")
    for atom in m.atoms:
        x, y, z = atom.position
        lines.append(f"{x:10.4f}{y:10.4f}{z:10.4f} {atom.element:<3s} 0  0  0  0  0  0  0  0  0  0  0  0")
    for bond in m.bonds:
        code = _ORDER_TO_BOND_CODE[bond.order]
        lines.append(f"{bond.i + 1:3d}{bond.j + 1:3d}{code:3d}  0")
    lines.append("M  END")
    lines.append("$$$$")
    return "\n".join(lines) + "\n"


def _to_xyz(m: Molecule) -> str:
    lines = [str(len(m.atoms)), m.name]
    for atom in m.atoms:
        x, y, z = atom.position
        lines.append(f"{atom.element} {x:.4f} {y:.4f} {z:.4f}")
    return "\n".join(lines) + "\n"


def write_sdf(path, molecules: list[Molecule]) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        for m in molecules:
            handle.write(serialize_molecule(m, "sdf"))
