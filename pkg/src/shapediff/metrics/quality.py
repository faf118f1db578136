"""Stability and 2D/3D realism statistics: valency checks, binned geometry
histograms, and base-2 Jensen-Shannon divergences."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..chem.graph import rings
from ..chem.mol import BondOrder, Molecule, MoleculeError
from ..chem.tables import ValencyTable, default_valencies

BOND_LENGTH_BINS = np.linspace(0.0, 3.0, 61)
BOND_ANGLE_BINS = np.linspace(0.0, 180.0, 37)
DIHEDRAL_BINS = np.linspace(-180.0, 180.0, 37)
BONDS_PER_ATOM_MAX = 8
RING_SIZE_RANGE = (3, 10)
RING_COUNT_MAX = 8


def stability(m: Molecule, valencies: ValencyTable | None = None) -> tuple[float, bool]:
    """(fraction of atoms with an allowed valency, all-atoms-stable flag)."""
    valencies = valencies or default_valencies()
    sums = [0.0] * len(m.atoms)
    for b in m.bonds:
        sums[b.i] += b.order.valence
        sums[b.j] += b.order.valence
    stable = [
        valencies.is_stable(atom.element, atom.aromatic, sums[idx])
        for idx, atom in enumerate(m.atoms)
    ]
    frac = sum(stable) / len(stable)
    return frac, all(stable)


def js_divergence(p, q) -> float:
    """Base-2 Jensen-Shannon divergence of two aligned normalized histograms."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise MoleculeError(f"histogram binning mismatch: {p.shape} vs {q.shape}")
    if np.array_equal(p, q):
        return 0.0
    m = 0.5 * (p + q)

    def kl(a, b):
        mask = a > 0
        return float((a[mask] * np.log2(a[mask] / b[mask])).sum())

    return 0.5 * kl(p, m) + 0.5 * kl(q, m)


def _normalize(counts: np.ndarray) -> np.ndarray:
    total = counts.sum()
    return counts / total if total > 0 else counts


def _angle(a, b, c) -> float:
    u = a - b
    v = c - b
    cosang = np.dot(u, v) / (np.linalg.norm(u) * np.linalg.norm(v))
    return math.degrees(math.acos(np.clip(cosang, -1.0, 1.0)))


def _dihedral(p0, p1, p2, p3) -> float:
    b0 = p1 - p0
    b1 = p2 - p1
    b2 = p3 - p2
    n1 = np.cross(b0, b1)
    n2 = np.cross(b1, b2)
    m1 = np.cross(n1, b1 / np.linalg.norm(b1))
    x = np.dot(n1, n2)
    y = np.dot(m1, n2)
    return math.degrees(math.atan2(y, x))


def ring_key(m: Molecule, ring: list[int]) -> tuple:
    """Canonical ring type: (size, sorted element tuple, fully-aromatic flag)."""
    elements = tuple(sorted(m.atoms[i].element for i in ring))
    lookup = m.bond_lookup()
    orders = []
    for a in range(len(ring)):
        pair = tuple(sorted((ring[a], ring[(a + 1) % len(ring)])))
        orders.append(lookup.get(pair, BondOrder.NONE))
    aromatic = all(o == BondOrder.AROMATIC for o in orders)
    return (len(ring), elements, aromatic)


@dataclass
class GeometryHistograms:
    bond_lengths: np.ndarray
    bond_angles: np.ndarray
    dihedrals: np.ndarray
    bonds_per_atom: np.ndarray
    bond_types: np.ndarray          # single, double, aromatic
    ring_counts: np.ndarray         # rings per molecule
    ring_sizes: np.ndarray
    top_rings: list[tuple] = field(default_factory=list)
    ring_frequencies: dict = field(default_factory=dict)
    empty: bool = False

    def as_dict(self) -> dict:
        return {
            "bond_lengths": self.bond_lengths.tolist(),
            "bond_angles": self.bond_angles.tolist(),
            "dihedrals": self.dihedrals.tolist(),
            "bonds_per_atom": self.bonds_per_atom.tolist(),
            "bond_types": self.bond_types.tolist(),
            "ring_counts": self.ring_counts.tolist(),
            "ring_sizes": self.ring_sizes.tolist(),
            "top_rings": [list(map(str, key)) for key in self.top_rings],
            "empty": self.empty,
        }


def geometry_stats(corpus: list[Molecule]) -> GeometryHistograms:
    """Normalized geometry histograms plus the top-10 ring-type multiset."""
    lengths: list[float] = []
    angles: list[float] = []
    dihedrals: list[float] = []
    bonds_per_atom = np.zeros(BONDS_PER_ATOM_MAX + 1)
    bond_types = np.zeros(3)
    ring_counts = np.zeros(RING_COUNT_MAX + 1)
    ring_sizes = np.zeros(RING_SIZE_RANGE[1] - RING_SIZE_RANGE[0] + 1)
    ring_freq: dict[tuple, int] = {}

    for m in corpus:
        pos = m.positions
        adj: list[list[int]] = [[] for _ in m.atoms]
        for b in m.bonds:
            adj[b.i].append(b.j)
            adj[b.j].append(b.i)
            lengths.append(float(np.linalg.norm(pos[b.i] - pos[b.j])))
            bond_types[{BondOrder.SINGLE: 0, BondOrder.DOUBLE: 1, BondOrder.AROMATIC: 2}[b.order]] += 1
        for i, nbrs in enumerate(adj):
            bonds_per_atom[min(len(nbrs), BONDS_PER_ATOM_MAX)] += 1
            for a in range(len(nbrs)):
                for b_ in range(a + 1, len(nbrs)):
                    angles.append(_angle(pos[nbrs[a]], pos[i], pos[nbrs[b_]]))
        for b in m.bonds:
            j, k = b.i, b.j
            for i in adj[j]:
                if i == k:
                    continue
                for l in adj[k]:
                    if l == j or l == i:
                        continue
                    dihedrals.append(_dihedral(pos[i], pos[j], pos[k], pos[l]))
        mol_rings = rings(len(m.atoms), [b.pair for b in m.bonds])
        ring_counts[min(len(mol_rings), RING_COUNT_MAX)] += 1
        for ring in mol_rings:
            size = len(ring)
            if RING_SIZE_RANGE[0] <= size <= RING_SIZE_RANGE[1]:
                ring_sizes[size - RING_SIZE_RANGE[0]] += 1
            key = ring_key(m, ring)
            ring_freq[key] = ring_freq.get(key, 0) + 1

    top = sorted(ring_freq.items(), key=lambda kv: (-kv[1], repr(kv[0])))[:10]
    return GeometryHistograms(
        bond_lengths=_normalize(np.histogram(lengths, bins=BOND_LENGTH_BINS)[0].astype(float)),
        bond_angles=_normalize(np.histogram(angles, bins=BOND_ANGLE_BINS)[0].astype(float)),
        dihedrals=_normalize(np.histogram(dihedrals, bins=DIHEDRAL_BINS)[0].astype(float)),
        bonds_per_atom=_normalize(bonds_per_atom),
        bond_types=_normalize(bond_types),
        ring_counts=_normalize(ring_counts),
        ring_sizes=_normalize(ring_sizes),
        top_rings=[key for key, _ in top],
        ring_frequencies=ring_freq,
        empty=len(corpus) == 0,
    )


def intersecting_ring_count(a: GeometryHistograms, b: GeometryHistograms) -> int:
    """Ring types shared between two corpora's top-10 lists."""
    return len(set(a.top_rings) & set(b.top_rings))


def geometry_divergences(generated: GeometryHistograms, reference: GeometryHistograms) -> dict[str, float]:
    if generated.empty or reference.empty:
        raise MoleculeError("cannot compare empty geometry histograms")
    return {
        "bond_lengths": js_divergence(generated.bond_lengths, reference.bond_lengths),
        "bond_angles": js_divergence(generated.bond_angles, reference.bond_angles),
        "dihedrals": js_divergence(generated.dihedrals, reference.dihedrals),
        "bonds_per_atom": js_divergence(generated.bonds_per_atom, reference.bonds_per_atom),
        "bond_types": js_divergence(generated.bond_types, reference.bond_types),
        "ring_counts": js_divergence(generated.ring_counts, reference.ring_counts),
        "ring_sizes": js_divergence(generated.ring_sizes, reference.ring_sizes),
    }
