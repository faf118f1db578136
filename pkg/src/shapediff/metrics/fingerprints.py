"""Circular substructure fingerprints over the heavy-atom graph.

Atom seeds hash (element, heavy degree, aromaticity, attached-H count); two
neighborhood expansion rounds follow, every identifier folded into a fixed
width bitset with a deterministic 64-bit mixer.
"""
from __future__ import annotations

from ..chem.mol import Molecule

FP_BITS = 2048
FP_RADIUS = 2

_MASK = (1 << 64) - 1


def mix64(x: int) -> int:
    """splitmix64 finalizer; deterministic across platforms and runs."""
    x = (x + 0x9E3779B97F4A7C15) & _MASK
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK
    return (x ^ (x >> 31)) & _MASK


def _combine(*values: int) -> int:
    acc = 0x51_7C_C1_B7_27_22_0A_95
    for v in values:
        acc = mix64(acc ^ (v & _MASK))
    return acc


def _heavy_graph(m: Molecule):
    heavy = [i for i, a in enumerate(m.atoms) if a.element != "H"]
    index = {atom: row for row, atom in enumerate(heavy)}
    h_counts = [0] * len(heavy)
    nbrs: list[list[tuple[int, int]]] = [[] for _ in heavy]  # (neighbor row, bond order)
    for b in m.bonds:
        ei, ej = m.atoms[b.i].element, m.atoms[b.j].element
        if ei == "H" and ej != "H":
            h_counts[index[b.j]] += 1
        elif ej == "H" and ei != "H":
            h_counts[index[b.i]] += 1
        elif ei != "H" and ej != "H":
            nbrs[index[b.i]].append((index[b.j], int(b.order)))
            nbrs[index[b.j]].append((index[b.i], int(b.order)))
    return heavy, h_counts, nbrs


def fingerprint_identifiers(m: Molecule, radius: int = FP_RADIUS) -> set[int]:
    """All circular environment identifiers up to the given radius."""
    heavy, h_counts, nbrs = _heavy_graph(m)
    colors = []
    for row, atom_idx in enumerate(heavy):
        atom = m.atoms[atom_idx]
        colors.append(
            _combine(
                _combine(*[ord(c) for c in atom.element]),
                len(nbrs[row]),
                int(atom.aromatic),
                h_counts[row],
            )
        )
    identifiers = set(colors)
    for _ in range(radius):
        new_colors = []
        for row, color in enumerate(colors):
            if not nbrs[row]:
                new_colors.append(color)
                continue
            env = sorted((order, colors[other]) for other, order in nbrs[row])
            flattened = [color] + [v for pair in env for v in pair]
            new_colors.append(_combine(*flattened))
        colors = new_colors
        identifiers.update(colors)
    return identifiers


def fingerprint_bits(m: Molecule, bits: int = FP_BITS, radius: int = FP_RADIUS) -> frozenset[int]:
    return frozenset(ident % bits for ident in fingerprint_identifiers(m, radius))


def graph_similarity(a: Molecule, b: Molecule, bits: int = FP_BITS) -> float:
    """Tanimoto over fingerprint bitsets; two empty fingerprints count as 1."""
    fa, fb = fingerprint_bits(a, bits), fingerprint_bits(b, bits)
    union = fa | fb
    if not union:
        return 1.0
    return len(fa & fb) / len(union)


def canonical_graph_hash(m: Molecule, rounds: int | None = None) -> int:
    """Order-independent hash of the heavy-atom molecular graph."""
    heavy, h_counts, nbrs = _heavy_graph(m)
    if not heavy:
        return _combine(len(m.atoms))  # hydrogens only
    colors = []
    for row, atom_idx in enumerate(heavy):
        atom = m.atoms[atom_idx]
        colors.append(
            _combine(_combine(*[ord(c) for c in atom.element]), len(nbrs[row]),
                     int(atom.aromatic), h_counts[row])
        )
    for _ in range(rounds if rounds is not None else min(len(heavy), 16)):
        new_colors = []
        for row, color in enumerate(colors):
            env = sorted((order, colors[other]) for other, order in nbrs[row])
            new_colors.append(_combine(color, *[v for pair in env for v in pair]))
        if sorted(new_colors) == sorted(colors):
            break
        colors = new_colors
    return _combine(len(heavy), *sorted(colors))
