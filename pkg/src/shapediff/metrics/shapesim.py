"""Gaussian-volume shape similarity with deterministic multi-start alignment.

Atoms are modeled as Gaussians whose widths derive from vdW radii so that each
Gaussian integrates to its hard-sphere volume. Similarity is the volume
Tanimoto after rigid alignment (centroid match, principal axes, 24 proper
axis-permutation starts, local refinement).
"""
from __future__ import annotations

import itertools
import math

import numpy as np
from scipy.optimize import minimize
from scipy.spatial.transform import Rotation

from ..chem.mol import Molecule
from ..chem.tables import VDW_RADII

_PREFACTOR = 2.7


def _alphas(elements: list[str]) -> np.ndarray:
    radii = np.array([VDW_RADII[el] for el in elements])
    kappa = math.pi * (3.0 * _PREFACTOR / (4.0 * math.pi)) ** (2.0 / 3.0)
    return kappa / radii**2


def overlap_volume(pos_a, alphas_a, pos_b, alphas_b) -> float:
    """Total pairwise Gaussian overlap volume between two atom sets."""
    pos_a = np.asarray(pos_a, dtype=np.float64)
    pos_b = np.asarray(pos_b, dtype=np.float64)
    d2 = ((pos_a[:, None, :] - pos_b[None, :, :]) ** 2).sum(-1)
    a_sum = alphas_a[:, None] + alphas_b[None, :]
    a_prod = alphas_a[:, None] * alphas_b[None, :]
    terms = _PREFACTOR**2 * np.exp(-a_prod / a_sum * d2) * (math.pi / a_sum) ** 1.5
    return float(terms.sum())


def _principal_frame(points: np.ndarray) -> np.ndarray:
    centered = points - points.mean(axis=0)
    cov = centered.T @ centered
    _, vecs = np.linalg.eigh(cov)
    if np.linalg.det(vecs) < 0:
        vecs = vecs.copy()
        vecs[:, 0] = -vecs[:, 0]
    return vecs


def _proper_axis_rotations() -> list[np.ndarray]:
    mats = []
    for perm in itertools.permutations(range(3)):
        p = np.zeros((3, 3))
        for row, col in enumerate(perm):
            p[row, col] = 1.0
        for signs in itertools.product((1.0, -1.0), repeat=3):
            s = p * np.array(signs)[:, None]
            if np.linalg.det(s) > 0:
                mats.append(s)
    return mats


_AXIS_STARTS = _proper_axis_rotations()


def shape_similarity(a: Molecule, b: Molecule, align: bool = True, refine: bool = True) -> float:
    """Volume Tanimoto in [0, 1]; with align=False the given poses are scored."""
    pos_a, pos_b = a.positions, b.positions
    alphas_a, alphas_b = _alphas(a.elements), _alphas(b.elements)
    v_aa = overlap_volume(pos_a, alphas_a, pos_a, alphas_a)
    v_bb = overlap_volume(pos_b, alphas_b, pos_b, alphas_b)

    def tanimoto(v_ab: float) -> float:
        return v_ab / (v_aa + v_bb - v_ab)

    if not align:
        return tanimoto(overlap_volume(pos_a, alphas_a, pos_b, alphas_b))

    center_a = pos_a.mean(axis=0)
    center_b = pos_b.mean(axis=0)
    ca = pos_a - center_a
    cb = pos_b - center_b
    frame_a = _principal_frame(pos_a)
    frame_b = _principal_frame(pos_b)

    starts = []
    for axis_rot in _AXIS_STARTS:
        rot0 = frame_a @ axis_rot @ frame_b.T
        v = overlap_volume(ca, alphas_a, cb @ rot0.T, alphas_b)
        starts.append((v, rot0))
    starts.sort(key=lambda sv: -sv[0])
    best = starts[0][0]
    if refine:
        def objective(params):
            rot = Rotation.from_rotvec(params[:3]).as_matrix()
            shifted = cb @ rot.T + params[3:]
            return -overlap_volume(ca, alphas_a, shifted, alphas_b)

        for v0, rot0 in starts[:4]:  # local refinement from the strongest starts
            rotvec0 = Rotation.from_matrix(rot0).as_rotvec()
            res = minimize(objective, np.concatenate([rotvec0, np.zeros(3)]),
                           method="Powell", options={"maxiter": 4, "xtol": 1e-3, "ftol": 1e-6})
            best = max(best, -float(res.fun))
    best = min(best, min(v_aa, v_bb))  # overlap cannot exceed either self-volume
    return tanimoto(best)
