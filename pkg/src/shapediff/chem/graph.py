"""Geometry-level graph operations: centering, kNN edges, rings, bond assignment."""
from __future__ import annotations

from collections import deque

import numpy as np

from .mol import Bond, BondOrder, MoleculeError
from .tables import BondLengthTable, ValencyTable, default_bond_lengths, default_valencies, round_half_up


def center_positions(points, origin) -> np.ndarray:
    """Shift points by -origin; with origin at the centroid the result is centered."""
    pts = np.asarray(points, dtype=np.float64)
    if pts.size == 0:
        raise MoleculeError("cannot center an empty point list")
    pts = pts.reshape(-1, 3)
    origin = np.asarray(origin, dtype=np.float64).reshape(3)
    return pts - origin


def centroid(points) -> np.ndarray:
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if pts.shape[0] == 0:
        raise MoleculeError("centroid of empty point list")
    return pts.mean(axis=0)


def knn_edges(points, k: int) -> list[tuple[int, int]]:
    """Directed edges (j -> i) from each node's k nearest others.

    Ties are broken by the lower source index so results are reproducible.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    n = pts.shape[0]
    if k < 1:
        raise MoleculeError(f"k must be positive, got {k}")
    if k >= n:
        raise MoleculeError(f"k={k} must be smaller than the number of points n={n}")
    diff = pts[:, None, :] - pts[None, :, :]
    dist = np.sqrt((diff * diff).sum(-1))
    np.fill_diagonal(dist, np.inf)
    edges: list[tuple[int, int]] = []
    idx = np.arange(n)
    for i in range(n):
        order = np.lexsort((idx, dist[i]))  # distance first, then index
        for j in order[:k]:
            edges.append((int(j), i))
    return edges


def _adjacency(n: int, pairs) -> list[list[int]]:
    adj: list[list[int]] = [[] for _ in range(n)]
    for i, j in pairs:
        adj[i].append(j)
        adj[j].append(i)
    return adj


def _shortest_path_avoiding(adj, start: int, goal: int, banned: tuple[int, int]) -> list[int] | None:
    """BFS path start..goal that never walks the banned edge; lowest-index ties."""
    prev = {start: -1}
    queue = deque([start])
    while queue:
        u = queue.popleft()
        if u == goal:
            path = [u]
            while prev[path[-1]] != -1:
                path.append(prev[path[-1]])
            return path[::-1]
        for v in sorted(adj[u]):
            if {u, v} == set(banned) or v in prev:
                continue
            prev[v] = u
            queue.append(v)
    return None


def rings(n_atoms: int, bond_pairs) -> list[list[int]]:
    """Smallest ring through each cyclic edge, deduplicated.

    Each ring is an ordered atom-index cycle starting from its smallest member.
    """
    pairs = [tuple(sorted(p)) for p in bond_pairs]
    adj = _adjacency(n_atoms, pairs)
    seen: set[frozenset[tuple[int, int]]] = set()
    out: list[list[int]] = []
    for i, j in sorted(set(pairs)):
        path = _shortest_path_avoiding(adj, i, j, (i, j))
        if path is None:
            continue
        ring = path  # closing edge (j, i) implied
        edge_set = frozenset(
            tuple(sorted((ring[a], ring[(a + 1) % len(ring)]))) for a in range(len(ring))
        )
        if edge_set in seen:
            continue
        seen.add(edge_set)
        start = ring.index(min(ring))
        ring = ring[start:] + ring[:start]
        if len(ring) > 2 and ring[1] > ring[-1]:
            ring = [ring[0]] + ring[1:][::-1]
        out.append(ring)
    return out


def cyclic_edges(n_atoms: int, bond_pairs) -> set[tuple[int, int]]:
    """Unordered bond pairs that lie on at least one cycle (i.e. non-bridges)."""
    edges = set()
    for ring in rings(n_atoms, bond_pairs):
        for a in range(len(ring)):
            edges.add(tuple(sorted((ring[a], ring[(a + 1) % len(ring)]))))
    return edges


def assign_bonds(
    positions,
    elements: list[str],
    table: BondLengthTable | None = None,
    valencies: ValencyTable | None = None,
) -> list[Bond]:
    """Distance-based bond typing.

    Every atom pair whose distance falls inside a table interval gets the bond
    whose interval midpoint is closest (ties to the higher order). Atoms pushed
    over their maximum valency lose their least confident bonds first.
    """
    table = table or default_bond_lengths()
    valencies = valencies or default_valencies()
    pts = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
    if not np.all(np.isfinite(pts)):
        raise MoleculeError("non-finite positions in assign_bonds")
    n = pts.shape[0]
    if n != len(elements):
        raise MoleculeError("positions/elements length mismatch")

    chosen: list[tuple[float, int, int, BondOrder]] = []  # (midpoint deviation, i, j, order)
    for i in range(n):
        for j in range(i + 1, n):
            d = float(np.linalg.norm(pts[i] - pts[j]))
            best: tuple[float, int, BondOrder] | None = None
            for order, lo, hi in table.candidates(elements[i], elements[j]):
                if lo <= d <= hi:
                    dev = abs(d - (lo + hi) / 2.0)
                    key = (dev, -int(order))
                    if best is None or key < (best[0], best[1]):
                        best = (dev, -int(order), order)
            if best is not None:
                chosen.append((best[0], i, j, best[2]))

    # Prune over-valent atoms, dropping the bond farthest from its interval midpoint.
    def valence_sum(atom: int) -> float:
        return sum(o.valence for _, i, j, o in chosen if atom in (i, j))

    while True:
        offenders = [
            a for a in range(n)
            if round_half_up(valence_sum(a)) > valencies.max_valency(elements[a])
        ]
        if not offenders:
            break
        atom = offenders[0]
        worst = max(
            (entry for entry in chosen if atom in (entry[1], entry[2])),
            key=lambda e: (e[0], e[1], e[2]),
        )
        chosen.remove(worst)

    return [Bond(i, j, order) for _, i, j, order in sorted(chosen, key=lambda e: (e[1], e[2]))]
