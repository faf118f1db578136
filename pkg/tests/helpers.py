"""Shared test fixtures: small molecules with hand-checked geometry."""
from __future__ import annotations

import math

import numpy as np

from shapediff.chem import Atom, Bond, BondOrder, Molecule

CH = 1.09
CC = 1.54
RING = 1.395  # aromatic C-C


def methane() -> Molecule:
    h = CH / math.sqrt(3.0)
    atoms = [Atom(np.zeros(3), "C")]
    for sx, sy, sz in [(1, 1, 1), (1, -1, -1), (-1, 1, -1), (-1, -1, 1)]:
        atoms.append(Atom(np.array([sx * h, sy * h, sz * h]), "H"))
    bonds = [Bond(0, k, BondOrder.SINGLE) for k in range(1, 5)]
    return Molecule(atoms=atoms, bonds=bonds, name="methane")


def benzene_ring() -> Molecule:
    """Bare aromatic C6 ring, no hydrogens."""
    atoms = []
    for k in range(6):
        ang = math.pi / 3.0 * k
        atoms.append(Atom(np.array([RING * math.cos(ang), RING * math.sin(ang), 0.0]), "C", aromatic=True))
    bonds = [Bond(k, (k + 1) % 6, BondOrder.AROMATIC) for k in range(6)]
    return Molecule(atoms=atoms, bonds=bonds, name="benzene_ring")


def benzene() -> Molecule:
    """Full C6H6."""
    ring = benzene_ring()
    atoms = [Atom(a.position, "C", aromatic=True) for a in ring.atoms]
    bonds = list(ring.bonds)
    r_h = RING + CH
    for k in range(6):
        ang = math.pi / 3.0 * k
        atoms.append(Atom(np.array([r_h * math.cos(ang), r_h * math.sin(ang), 0.0]), "H"))
        bonds.append(Bond(k, 6 + k, BondOrder.SINGLE))
    return Molecule(atoms=atoms, bonds=bonds, name="benzene")


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    """Uniform-ish proper rotation via QR of a Gaussian matrix."""
    m = rng.standard_normal((3, 3))
    q, r = np.linalg.qr(m)
    q *= np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q
