#!/usr/bin/env python3
"""Builds the bundled fixture data deterministically:

- tests/fixtures/corpus50/: 50 small molecules (<= 15 heavy atoms) with
  explicit 3D geometry whose bonds are exactly recovered by distance-based
  assignment and whose atoms all satisfy the valency tables.
- src/shapediff/data/complexes/: two synthetic mini protein-ligand complexes
  used to derive default clash thresholds.

Run from the repository root:  python3 tools/make_fixtures.py
"""
from __future__ import annotations

import math
import sys
from pathlib import Path

import numpy as np

ROOT = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(ROOT / "src"))

from shapediff.chem import (  # noqa: E402
    Atom,
    Bond,
    BondOrder,
    Molecule,
    assign_bonds,
    parse_sdf,
    serialize_molecule,
)
from shapediff.metrics import stability  # noqa: E402

CC = 1.54
CH = 1.09
CO = 1.42
CO_DOUBLE = 1.24
OH = 0.97
CN = 1.47
NH = 1.02
CS = 1.81
SH = 1.36
CCL = 1.78
CF = 1.35
RING = 1.40
RING_SUB = 1.50

TET = math.radians(109.4712206)
HALF_TET = math.radians(54.7356103)


def unit(v):
    return v / np.linalg.norm(v)


class Builder:
    def __init__(self, name):
        self.name = name
        self.atoms: list[tuple[np.ndarray, str, bool]] = []
        self.bonds: list[tuple[int, int, BondOrder]] = []

    def add(self, pos, element, aromatic=False) -> int:
        self.atoms.append((np.asarray(pos, dtype=float), element, aromatic))
        return len(self.atoms) - 1

    def bond(self, i, j, order=BondOrder.SINGLE):
        self.bonds.append((i, j, order))

    def pos(self, idx):
        return self.atoms[idx][0]

    def neighbors(self, idx):
        out = []
        for i, j, _ in self.bonds:
            if i == idx:
                out.append(j)
            elif j == idx:
                out.append(i)
        return out

    def molecule(self) -> Molecule:
        atoms = [Atom(p, el, ar) for p, el, ar in self.atoms]
        return Molecule(atoms=atoms, bonds=[Bond(i, j, o) for i, j, o in self.bonds],
                        name=self.name)

    # -- hydrogen placement -------------------------------------------------

    def saturate(self, idx, n_h, length=CH, element="H"):
        """Attach n_h substituents at tetrahedral directions around atom idx."""
        center = self.pos(idx)
        nbrs = [unit(self.pos(j) - center) for j in self.neighbors(idx)]
        dirs = _tetrahedral_slots(nbrs, n_h)
        for d in dirs[:n_h]:
            h = self.add(center + length * d, element)
            self.bond(idx, h)


def _tetrahedral_slots(occupied: list[np.ndarray], needed: int) -> list[np.ndarray]:
    if len(occupied) == 0:
        base = np.array(
            [[1, 1, 1], [1, -1, -1], [-1, 1, -1], [-1, -1, 1]], dtype=float
        ) / math.sqrt(3.0)
        return list(base)
    if len(occupied) == 1:
        u = occupied[0]
        p1 = unit(np.cross(u, [0.0, 0.0, 1.0]) if abs(u[2]) < 0.9 else np.cross(u, [1.0, 0.0, 0.0]))
        p2 = np.cross(u, p1)
        out = []
        for k in range(3):
            ang = 2.0 * math.pi * k / 3.0
            out.append(unit(-u / 3.0 + math.sqrt(8.0) / 3.0 * (math.cos(ang) * p1 + math.sin(ang) * p2)))
        return out
    if len(occupied) == 2:
        u1, u2 = occupied
        b = unit(-(u1 + u2))
        p = unit(np.cross(u1, u2))
        return [
            unit(math.cos(HALF_TET) * b + math.sin(HALF_TET) * p),
            unit(math.cos(HALF_TET) * b - math.sin(HALF_TET) * p),
        ]
    u1, u2, u3 = occupied[:3]
    return [unit(-(u1 + u2 + u3))]


def backbone(n, length=CC) -> list[np.ndarray]:
    """Zigzag sp3 chain in the xy-plane."""
    dx = length * math.sin(TET / 2.0)
    dy = length * math.cos(TET / 2.0)
    return [np.array([i * dx, (i % 2) * dy, 0.0]) for i in range(n)]


def alkane(n, name) -> Builder:
    b = Builder(name)
    chain = [b.add(p, "C") for p in backbone(n)]
    for i, j in zip(chain, chain[1:]):
        b.bond(i, j)
    for idx in chain:
        b.saturate(idx, 4 - len(b.neighbors(idx)))
    return b


def chain_with_terminal(n, name, element, bond_len, h_on_tail, h_len) -> Builder:
    """Alkyl chain with one terminal heteroatom carrying h_on_tail hydrogens."""
    b = Builder(name)
    chain = [b.add(p, "C") for p in backbone(n)]
    for i, j in zip(chain, chain[1:]):
        b.bond(i, j)
    center = b.pos(chain[-1])
    nbrs = [unit(b.pos(j) - center) for j in b.neighbors(chain[-1])]
    direction = _tetrahedral_slots(nbrs, 1)[0]
    tail = b.add(center + bond_len * direction, element)
    b.bond(chain[-1], tail)
    b.saturate(tail, h_on_tail, length=h_len)
    for idx in chain:
        b.saturate(idx, 4 - len(b.neighbors(idx)))
    return b


def ether(n_left, n_right, name) -> Builder:
    b = Builder(name)
    left = [b.add(p, "C") for p in backbone(n_left)]
    for i, j in zip(left, left[1:]):
        b.bond(i, j)
    center = b.pos(left[-1])
    nbrs = [unit(b.pos(j) - center) for j in b.neighbors(left[-1])]
    d1 = _tetrahedral_slots(nbrs, 1)[0]
    oxygen = b.add(center + CO * d1, "O")
    b.bond(left[-1], oxygen)
    d2 = _tetrahedral_slots([unit(center - b.pos(oxygen))], 3)[0]
    right_start = b.add(b.pos(oxygen) + CO * d2, "C")
    b.bond(oxygen, right_start)
    prev = right_start
    for _ in range(n_right - 1):
        center = b.pos(prev)
        nbrs = [unit(b.pos(j) - center) for j in b.neighbors(prev)]
        d = _tetrahedral_slots(nbrs, 1)[0]
        nxt = b.add(center + CC * d, "C")
        b.bond(prev, nxt)
        prev = nxt
    for idx in range(len(b.atoms)):
        if b.atoms[idx][1] == "C":
            b.saturate(idx, 4 - len(b.neighbors(idx)))
    return b


def carbonyl(n_left, n_right, name) -> Builder:
    """Ketone (n_right >= 1) or aldehyde (n_right == 0) with an sp2 carbon."""
    b = Builder(name)
    c = b.add([0.0, 0.0, 0.0], "C")
    o = b.add([0.0, CO_DOUBLE, 0.0], "O")
    b.bond(c, o, BondOrder.DOUBLE)
    left_dir = np.array([math.cos(math.radians(210.0)), math.sin(math.radians(210.0)), 0.0])
    right_dir = np.array([math.cos(math.radians(-30.0)), math.sin(math.radians(-30.0)), 0.0])
    prev = c
    d = left_dir
    for k in range(n_left):
        nxt = b.add(b.pos(prev) + CC * d, "C")
        b.bond(prev, nxt)
        prev = nxt
        center = b.pos(prev)
        nbrs = [unit(b.pos(j) - center) for j in b.neighbors(prev)]
        d = _tetrahedral_slots(nbrs, 1)[0] if k < n_left - 1 else None
    if n_right:
        prev = c
        d = right_dir
        for k in range(n_right):
            nxt = b.add(b.pos(prev) + CC * d, "C")
            b.bond(prev, nxt)
            prev = nxt
            center = b.pos(prev)
            nbrs = [unit(b.pos(j) - center) for j in b.neighbors(prev)]
            d = _tetrahedral_slots(nbrs, 1)[0] if k < n_right - 1 else None
    else:
        h = b.add(b.pos(c) + CH * right_dir, "H")
        b.bond(c, h)
    for idx in range(len(b.atoms)):
        if b.atoms[idx][1] == "C" and idx != c:
            b.saturate(idx, 4 - len(b.neighbors(idx)))
    return b


def aromatic_ring(name, hetero_at: dict[int, str] | None = None) -> Builder:
    b = Builder(name)
    hetero_at = hetero_at or {}
    ring = []
    for k in range(6):
        ang = math.pi / 3.0 * k
        el = hetero_at.get(k, "C")
        ring.append(b.add([RING * math.cos(ang), RING * math.sin(ang), 0.0], el, aromatic=True))
    for k in range(6):
        b.bond(ring[k], ring[(k + 1) % 6], BondOrder.AROMATIC)
    return b, ring


def substituted_benzene(name, substituents: dict[int, str]) -> Builder:
    """Benzene with radial substituents; 'Me'/'Et' grow alkyl chains."""
    b, ring = aromatic_ring(name)
    for k in range(6):
        ang = math.pi / 3.0 * k
        radial = np.array([math.cos(ang), math.sin(ang), 0.0])
        base = b.pos(ring[k])
        sub = substituents.get(k)
        if sub is None:
            h = b.add(base + CH * radial, "H")
            b.bond(ring[k], h)
        elif sub in ("Me", "Et"):
            c1 = b.add(base + RING_SUB * radial, "C")
            b.bond(ring[k], c1)
            if sub == "Et":
                d = _tetrahedral_slots([unit(base - b.pos(c1))], 3)[0]
                c2 = b.add(b.pos(c1) + CC * d, "C")
                b.bond(c1, c2)
                b.saturate(c2, 3)
            b.saturate(c1, 4 - len(b.neighbors(c1)))
        elif sub == "OH":
            o = b.add(base + CO * radial, "O")
            b.bond(ring[k], o)
            b.saturate(o, 1, length=OH)
        elif sub == "NH2":
            nitrogen = b.add(base + CN * radial, "N")
            b.bond(ring[k], nitrogen)
            b.saturate(nitrogen, 2, length=NH)
        elif sub == "F":
            f = b.add(base + CF * radial, "F")
            b.bond(ring[k], f)
        elif sub == "Cl":
            cl = b.add(base + CCL * radial, "Cl")
            b.bond(ring[k], cl)
        else:
            raise ValueError(sub)
    return b


def pyridine(name, methyl=False) -> Builder:
    b, ring = aromatic_ring(name, hetero_at={0: "N"})
    for k in range(1, 6):
        ang = math.pi / 3.0 * k
        radial = np.array([math.cos(ang), math.sin(ang), 0.0])
        base = b.pos(ring[k])
        if methyl and k == 3:
            c1 = b.add(base + RING_SUB * radial, "C")
            b.bond(ring[k], c1)
            b.saturate(c1, 3)
        else:
            h = b.add(base + CH * radial, "H")
            b.bond(ring[k], h)
    return b


def biphenyl(name) -> Builder:
    b, ring_a = aromatic_ring(name)
    offset = np.array([2 * RING + 1.48, 0.0, 0.0])
    ring_b = []
    for k in range(6):
        ang = math.pi / 3.0 * k + math.pi
        ring_b.append(
            b.add(offset + np.array([RING * math.cos(ang), RING * math.sin(ang), 0.0]),
                  "C", aromatic=True)
        )
    for k in range(6):
        b.bond(ring_b[k], ring_b[(k + 1) % 6], BondOrder.AROMATIC)
    b.bond(ring_a[0], ring_b[0])  # 1.48 A inter-ring single bond
    for ring, center in ((ring_a, np.zeros(3)), (ring_b, offset)):
        for idx in ring:
            if len(b.neighbors(idx)) == 2:
                radial = unit(b.pos(idx) - center)
                h = b.add(b.pos(idx) + CH * radial, "H")
                b.bond(idx, h)
    return b


def branched(name, kind) -> Builder:
    b = Builder(name)
    c0 = b.add([0.0, 0.0, 0.0], "C")
    dirs = _tetrahedral_slots([], 4)
    if kind == "isobutane":
        for d in dirs[:3]:
            c = b.add(CC * d, "C")
            b.bond(c0, c)
            b.saturate(c, 3)
        b.saturate(c0, 1)
    elif kind == "neopentane":
        for d in dirs:
            c = b.add(CC * d, "C")
            b.bond(c0, c)
            b.saturate(c, 3)
    elif kind == "isopropanol":
        for d in dirs[:2]:
            c = b.add(CC * d, "C")
            b.bond(c0, c)
            b.saturate(c, 3)
        o = b.add(CO * dirs[2], "O")
        b.bond(c0, o)
        b.saturate(o, 1, length=OH)
        b.saturate(c0, 1)
    return b


def build_corpus() -> list[Molecule]:
    molecules: list[Molecule] = []
    for n in range(1, 8):
        molecules.append(alkane(n, f"alkane-{n}").molecule())
    for n in range(1, 7):
        molecules.append(chain_with_terminal(n, f"alcohol-{n}", "O", CO, 1, OH).molecule())
    for n in range(1, 6):
        molecules.append(chain_with_terminal(n, f"amine-{n}", "N", CN, 2, NH).molecule())
    for n in range(2, 5):
        molecules.append(chain_with_terminal(n, f"thiol-{n}", "S", CS, 1, SH).molecule())
    for n in range(1, 4):
        molecules.append(chain_with_terminal(n, f"chloride-{n}", "Cl", CCL, 0, CH).molecule())
    for n in range(1, 5):
        molecules.append(chain_with_terminal(n, f"fluoride-{n}", "F", CF, 0, CH).molecule())
    molecules.append(ether(1, 1, "ether-1-1").molecule())
    molecules.append(ether(2, 1, "ether-2-1").molecule())
    molecules.append(ether(2, 2, "ether-2-2").molecule())
    molecules.append(carbonyl(1, 1, "ketone-acetone").molecule())
    molecules.append(carbonyl(2, 1, "ketone-butanone").molecule())
    for n in range(1, 4):
        molecules.append(carbonyl(n, 0, f"aldehyde-{n}").molecule())
    molecules.append(substituted_benzene("benzene", {}).molecule())
    molecules.append(substituted_benzene("toluene", {0: "Me"}).molecule())
    molecules.append(substituted_benzene("ethylbenzene", {0: "Et"}).molecule())
    molecules.append(substituted_benzene("phenol", {0: "OH"}).molecule())
    molecules.append(substituted_benzene("fluorobenzene", {0: "F"}).molecule())
    molecules.append(substituted_benzene("chlorobenzene", {0: "Cl"}).molecule())
    molecules.append(substituted_benzene("aniline", {0: "NH2"}).molecule())
    molecules.append(substituted_benzene("xylene", {0: "Me", 3: "Me"}).molecule())
    molecules.append(pyridine("pyridine").molecule())
    molecules.append(pyridine("picoline", methyl=True).molecule())
    molecules.append(biphenyl("biphenyl").molecule())
    molecules.append(branched("isobutane", "isobutane").molecule())
    molecules.append(branched("neopentane", "neopentane").molecule())
    molecules.append(branched("isopropanol", "isopropanol").molecule())
    return molecules


def check(m: Molecule) -> None:
    heavy = sum(1 for a in m.atoms if a.element != "H")
    assert heavy <= 15, f"{m.name}: {heavy} heavy atoms"
    frac, ok = stability(m)
    assert ok, f"{m.name}: unstable (atom stability {frac:.2f})"
    recovered = assign_bonds(m.positions, m.elements)
    declared = sorted((b.pair, b.order) for b in m.bonds)
    got = sorted((b.pair, b.order) for b in recovered)
    assert declared == got, f"{m.name}: bond assignment mismatch\n{declared}\nvs\n{got}"
    reparsed = parse_sdf(serialize_molecule(m, "sdf"))[0]
    frac, ok = stability(reparsed)
    assert ok, f"{m.name}: unstable after round trip"
    got = sorted((b.pair, b.order) for b in assign_bonds(reparsed.positions, reparsed.elements))
    assert declared == got, f"{m.name}: bond assignment mismatch after round trip"


PDB_LINE = (
    "ATOM  {serial:>5d} {name:<4s}{res:>4s} A{seq:>4d}    "
    "{x:8.3f}{y:8.3f}{z:8.3f}  1.00  0.00          {el:>2s}\n"
)


def write_complexes(out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    ligand1 = chain_with_terminal(1, "ligand-methanol", "O", CO, 1, OH).molecule()
    pocket1 = [
        ([3.4, 0.0, 0.0], "C"), ([-3.3, 0.5, 0.0], "C"), ([0.0, 3.5, 0.3], "N"),
        ([0.2, -3.2, 0.0], "O"), ([0.0, 0.4, 3.6], "C"), ([0.1, 0.0, -3.4], "N"),
    ]
    ligand2 = alkane(2, "ligand-ethane").molecule()
    pocket2 = [
        ([4.0, 0.2, 0.0], "S"), ([-3.1, 0.0, 0.4], "C"), ([0.6, 3.3, 0.0], "O"),
        ([0.6, -3.4, 0.2], "C"), ([0.7, 0.0, 3.3], "C"),
    ]
    for idx, (ligand, pocket) in enumerate([(ligand1, pocket1), (ligand2, pocket2)], start=1):
        (out_dir / f"ligand{idx}.sdf").write_text(serialize_molecule(ligand, "sdf"))
        lines = [f"HEADER    synthetic mini complex {idx}\n"]
        for serial, (pos, el) in enumerate(pocket, start=1):
            lines.append(PDB_LINE.format(
                serial=serial, name=f"{el}{serial}", res="POC", seq=serial,
                x=pos[0], y=pos[1], z=pos[2], el=el,
            ))
        lines.append("END\n")
        (out_dir / f"pocket{idx}.pdb").write_text("".join(lines))


def main() -> None:
    corpus_dir = ROOT / "tests" / "fixtures" / "corpus50"
    corpus_dir.mkdir(parents=True, exist_ok=True)
    molecules = build_corpus()
    assert len(molecules) == 50, f"expected 50 molecules, built {len(molecules)}"
    for m in molecules:
        check(m)
        (corpus_dir / f"{m.name}.sdf").write_text(serialize_molecule(m, "sdf"))
    write_complexes(ROOT / "src" / "shapediff" / "data" / "complexes")
    heavies = sorted(sum(1 for a in m.atoms if a.element != "H") for m in molecules)
    print(f"wrote {len(molecules)} corpus molecules (heavy atoms {heavies[0]}..{heavies[-1]})")
    print(f"wrote 2 mini complexes")


if __name__ == "__main__":
    main()
