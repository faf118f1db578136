"""Inference-time guidance: pulling predictions toward a target shape and
pushing sampled atoms out of protein clashes."""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import torch

from .chem.mol import Molecule, MoleculeError


def sample_guidance_points(
    atom_positions: np.ndarray,
    per_atom: int = 20,
    variance: float = 0.049,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """Gaussian clouds of `per_atom` points around each condition atom."""
    rng = rng or np.random.default_rng(0)
    centers = np.asarray(atom_positions, dtype=np.float64).reshape(-1, 3)
    if centers.shape[0] == 0:
        raise MoleculeError("guidance points need at least one condition atom")
    noise = rng.normal(scale=np.sqrt(variance), size=(centers.shape[0], per_atom, 3))
    return (centers[:, None, :] + noise).reshape(-1, 3)


def shape_guide(
    x0_pred: torch.Tensor,
    points: torch.Tensor,
    gamma: float,
    k: int,
    sigma,
) -> tuple[torch.Tensor, torch.Tensor]:
    """Convex pull of far-off predictions toward their k nearest shape points.

    An atom moves to (1 - sigma) x + sigma * mean(kNN points) only when its
    mean kNN distance exceeds gamma; all other rows are returned bit-identical.
    Returns (adjusted positions, boolean mask of adjusted atoms).
    """
    if points.shape[0] < k:
        raise MoleculeError(f"need at least k={k} guidance points, got {points.shape[0]}")
    d = torch.cdist(x0_pred, points)
    dist, idx = torch.topk(d, k, dim=1, largest=False)
    mean_dist = dist.mean(dim=1)
    triggered = mean_dist > gamma
    if not torch.any(triggered):
        return x0_pred, triggered
    sigma_t = torch.as_tensor(sigma, dtype=x0_pred.dtype)
    if sigma_t.ndim == 0:
        sigma_t = sigma_t.expand(x0_pred.shape[0])
    nn_mean = points[idx].mean(dim=1)
    pulled = (1.0 - sigma_t).unsqueeze(-1) * x0_pred + sigma_t.unsqueeze(-1) * nn_mean
    return torch.where(triggered.unsqueeze(-1), pulled, x0_pred), triggered


@dataclass
class PocketModel:
    """Protein atoms plus clash thresholds for guidance."""

    positions: np.ndarray
    elements: list[str]
    thresholds: dict[tuple[str, str], float] = field(default_factory=dict)
    fallback: float = 2.0
    epsilon_range: tuple[float, float] = (0.0, 0.5)

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=np.float64).reshape(-1, 3)
        if self.positions.shape[0] != len(self.elements):
            raise MoleculeError("pocket positions/elements length mismatch")
        if self.fallback <= 0 or any(v <= 0 for v in self.thresholds.values()):
            raise MoleculeError("clash thresholds must be positive")

    def threshold(self, pocket_element: str, ligand_element: str | None) -> float:
        if ligand_element is None:
            return self.fallback
        return self.thresholds.get((pocket_element, ligand_element), self.fallback)

    def translated(self, shift) -> "PocketModel":
        return PocketModel(
            positions=self.positions + np.asarray(shift, dtype=np.float64).reshape(3),
            elements=list(self.elements),
            thresholds=dict(self.thresholds),
            fallback=self.fallback,
            epsilon_range=self.epsilon_range,
        )


def pocket_guide(
    x_t: torch.Tensor,
    pocket: PocketModel,
    k: int,
    elements: list[str] | None = None,
    epsilon=None,
    generator: torch.Generator | None = None,
) -> tuple[torch.Tensor, torch.Tensor]:
    """Push atoms that sit closer than their clash threshold to a pocket atom.

    For each atom, only the nearest violating pocket atom z is corrected, once:
    x* = x + (x - z)/d * (rho - d + eps), leaving the new distance exactly
    rho + eps. Returns (adjusted positions, mask of adjusted atoms).
    """
    n = x_t.shape[0]
    pocket_pos = torch.as_tensor(pocket.positions, dtype=x_t.dtype)
    k_eff = min(k, pocket_pos.shape[0])
    d = torch.cdist(x_t, pocket_pos)
    dist, idx = torch.topk(d, k_eff, dim=1, largest=False)

    rho = torch.zeros(n, k_eff, dtype=x_t.dtype)
    for row in range(n):
        lig_el = elements[row] if elements is not None else None
        for col in range(k_eff):
            rho[row, col] = pocket.threshold(pocket.elements[int(idx[row, col])], lig_el)

    violating = dist < rho
    adjusted = x_t.clone()
    mask = violating.any(dim=1)
    if not torch.any(mask):
        return adjusted, mask

    if epsilon is None:
        lo, hi = pocket.epsilon_range
        eps_draw = lo + (hi - lo) * torch.rand(n, generator=generator, dtype=x_t.dtype)
    else:
        eps_draw = torch.as_tensor(epsilon, dtype=x_t.dtype)
        if eps_draw.ndim == 0:
            eps_draw = eps_draw.expand(n)

    for row in torch.nonzero(mask, as_tuple=True)[0].tolist():
        cols = torch.nonzero(violating[row], as_tuple=True)[0]
        nearest = cols[torch.argmin(dist[row, cols])]
        z = pocket_pos[idx[row, nearest]]
        d_rz = dist[row, nearest]
        margin = rho[row, nearest] - d_rz + eps_draw[row]
        if d_rz.item() == 0.0:
            warnings.warn("atom coincides with a pocket atom; displacing along a random direction")
            direction = torch.randn(3, generator=generator, dtype=x_t.dtype)
            direction = direction / direction.norm()
            adjusted[row] = x_t[row] + direction * (rho[row, nearest] + eps_draw[row])
        else:
            adjusted[row] = x_t[row] + (x_t[row] - z) / d_rz * margin
    return adjusted, mask


def count_clashes(
    positions: np.ndarray, elements: list[str] | None, pocket: PocketModel, k: int
) -> int:
    """Post-hoc scan: atoms violating their threshold against k nearest pocket atoms."""
    x = torch.as_tensor(np.asarray(positions, dtype=np.float64))
    pocket_pos = torch.as_tensor(pocket.positions)
    k_eff = min(k, pocket_pos.shape[0])
    dist, idx = torch.topk(torch.cdist(x, pocket_pos), k_eff, dim=1, largest=False)
    violations = 0
    for row in range(x.shape[0]):
        lig_el = elements[row] if elements is not None else None
        for col in range(k_eff):
            rho = pocket.threshold(pocket.elements[int(idx[row, col])], lig_el)
            if dist[row, col].item() < rho:
                violations += 1
                break
    return violations


# ---------------------------------------------------------------------------
# pocket input: minimal PDB subset (ATOM/HETATM coordinates + element)


def parse_pdb_lite(text: str) -> tuple[np.ndarray, list[str]]:
    positions = []
    elements = []
    for line_no, line in enumerate(text.splitlines(), start=1):
        if not line.startswith(("ATOM", "HETATM")):
            continue
        try:
            xyz = [float(line[30:38]), float(line[38:46]), float(line[46:54])]
        except (ValueError, IndexError):
            raise MoleculeError(f"pdb line {line_no}: malformed coordinates") from None
        element = line[76:78].strip() if len(line) >= 78 else ""
        if not element:
            name = line[12:16].strip()
            element = "".join(c for c in name if c.isalpha())[:1]
        if not element:
            raise MoleculeError(f"pdb line {line_no}: cannot determine element")
        positions.append(xyz)
        elements.append(element.capitalize())
    if not positions:
        raise MoleculeError("no ATOM/HETATM records found")
    return np.asarray(positions, dtype=np.float64), elements


def read_pocket(path, thresholds: dict[tuple[str, str], float] | None = None,
                fallback: float = 2.0) -> PocketModel:
    with open(path, encoding="utf-8") as handle:
        positions, elements = parse_pdb_lite(handle.read())
    return PocketModel(positions=positions, elements=elements,
                       thresholds=thresholds or {}, fallback=fallback)


_default_clash_table: dict[tuple[str, str], float] | None = None


def default_clash_table() -> dict[tuple[str, str], float]:
    """Clash thresholds derived from the bundled mini protein-ligand complexes."""
    global _default_clash_table
    if _default_clash_table is None:
        from importlib import resources

        from .chem.sdf import parse_sdf

        root = resources.files("shapediff").joinpath("data").joinpath("complexes")
        complexes = []
        for idx in (1, 2):
            pocket_text = root.joinpath(f"pocket{idx}.pdb").read_text()
            ligand_text = root.joinpath(f"ligand{idx}.sdf").read_text()
            positions, elements = parse_pdb_lite(pocket_text)
            complexes.append((positions, elements, parse_sdf(ligand_text)[0]))
        _default_clash_table = build_clash_table(complexes)
    return dict(_default_clash_table)


def build_clash_table(
    complexes: list[tuple[np.ndarray, list[str], Molecule]]
) -> dict[tuple[str, str], float]:
    """Per-(pocket element, ligand element) minimum observed contact distance."""
    table: dict[tuple[str, str], float] = {}
    for pocket_pos, pocket_elements, ligand in complexes:
        d = np.linalg.norm(
            pocket_pos[:, None, :] - ligand.positions[None, :, :], axis=-1
        )
        for p_idx, p_el in enumerate(pocket_elements):
            for l_idx, l_el in enumerate(ligand.elements):
                key = (p_el, l_el)
                dist = float(d[p_idx, l_idx])
                if key not in table or dist < table[key]:
                    table[key] = dist
    return table
