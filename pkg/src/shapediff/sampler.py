"""Molecule generation: atom-count sampling and the guided denoising loop."""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import torch

from .chem.graph import assign_bonds
from .chem.mol import Atom, Molecule, feature_class
from .diffusion import Schedule, posterior_features, posterior_positions, sample_categorical
from .guidance import PocketModel, pocket_guide, shape_guide
from .predictor import MoleculePredictor
from .shape import ShapeEmbedding


@dataclass
class SamplerConfig:
    gamma: float = 0.2               # shape-guidance trigger distance
    stop_step: int = 300             # guidance active for t >= stop_step
    sigma_range: tuple[float, float] = (0.2, 0.8)
    guidance_k: int = 2              # nearest shape points per atom
    pocket_k: int = 8                # nearest pocket atoms scanned per atom
    guidance_points_per_atom: int = 20
    guidance_variance: float = 0.049

    def validate(self, T: int) -> None:
        if not 1 < self.stop_step < T:
            raise ValueError(f"stop_step must satisfy 1 < S < T, got S={self.stop_step} T={T}")
        if self.gamma <= 0:
            raise ValueError("gamma must be positive")
        lo, hi = self.sigma_range
        if not (0.0 < lo <= hi < 1.0):
            raise ValueError("sigma range must sit strictly inside (0, 1)")


@dataclass
class AtomCountHistogram:
    """Atom-count distributions binned by surface bounding-box volume."""

    bin_edges: list[float]                    # len n_bins - 1 interior edges
    bin_counts: list[dict[int, int]]
    global_counts: dict[int, int]

    @classmethod
    def build(cls, volumes: list[float], atom_counts: list[int], n_bins: int = 10) -> "AtomCountHistogram":
        if len(volumes) != len(atom_counts) or not volumes:
            raise ValueError("need matching, nonempty volume/count lists")
        n_bins = min(n_bins, len(volumes))
        order = np.argsort(volumes, kind="stable")
        splits = np.array_split(order, n_bins)
        edges: list[float] = []
        bins: list[dict[int, int]] = []
        for part in splits:
            counts: dict[int, int] = {}
            for i in part:
                counts[atom_counts[i]] = counts.get(atom_counts[i], 0) + 1
            bins.append(counts)
        for left, right in zip(splits, splits[1:]):
            edges.append((volumes[left[-1]] + volumes[right[0]]) / 2.0)
        global_counts: dict[int, int] = {}
        for c in atom_counts:
            global_counts[c] = global_counts.get(c, 0) + 1
        return cls(bin_edges=edges, bin_counts=bins, global_counts=global_counts)

    def bin_index(self, volume: float) -> int:
        # out-of-range volumes clamp to the nearest bin
        return int(np.searchsorted(self.bin_edges, volume))

    def to_json(self) -> dict:
        return {
            "bin_edges": self.bin_edges,
            "bin_counts": [{str(k): v for k, v in b.items()} for b in self.bin_counts],
            "global_counts": {str(k): v for k, v in self.global_counts.items()},
        }

    @classmethod
    def from_json(cls, data: dict) -> "AtomCountHistogram":
        return cls(
            bin_edges=list(data["bin_edges"]),
            bin_counts=[{int(k): v for k, v in b.items()} for b in data["bin_counts"]],
            global_counts={int(k): v for k, v in data["global_counts"].items()},
        )


def sample_atom_count(
    volume: float, histogram: AtomCountHistogram, rng: np.random.Generator
) -> int:
    counts = histogram.bin_counts[histogram.bin_index(volume)]
    if not counts:
        warnings.warn("empty atom-count bin; falling back to the global histogram")
        counts = histogram.global_counts
    values = sorted(counts)
    weights = np.array([counts[v] for v in values], dtype=np.float64)
    n = int(rng.choice(values, p=weights / weights.sum()))
    return max(1, n)


@dataclass
class GenerationTrace:
    steps: list[dict] = field(default_factory=list)

    def record(self, **event) -> None:
        self.steps.append(event)


class GenerationDiverged(RuntimeError):
    def __init__(self, step: int, state_summary: str):
        super().__init__(f"non-finite state at step t={step}: {state_summary}")
        self.step = step


def _per_sample_seed(base_seed: int, index: int) -> int:
    return (base_seed * 1_000_003 + index * 7_919 + 1) % (2**63 - 1)


def generate_batch(
    predictor: MoleculePredictor,
    sched: Schedule,
    embedding: ShapeEmbedding,
    atom_counts: list[int],
    config: SamplerConfig | None = None,
    base_seed: int = 0,
    shape_points: np.ndarray | None = None,
    pocket: PocketModel | None = None,
    output_shift: np.ndarray | None = None,
    trace: bool = False,
    name_prefix: str = "sample",
) -> tuple[list[Molecule], list[GenerationTrace] | None]:
    """Denoise a batch of molecules against one shape condition.

    Every sample owns its RNG stream (seeded from base_seed and its index) so
    membership in a batch does not change which noise it consumes. Network
    forwards run jointly over the concatenated batch.
    """
    config = config or SamplerConfig()
    T = sched.T
    config.validate(T)
    dtype = next(predictor.parameters()).dtype
    K = predictor.cfg.n_atom_classes
    H = embedding.H.to(dtype)
    inv = embedding.inv.to(dtype)

    gens = [torch.Generator().manual_seed(_per_sample_seed(base_seed, i)) for i in range(len(atom_counts))]
    xs = [torch.randn(n, 3, generator=g, dtype=dtype) for n, g in zip(atom_counts, gens)]
    vs = [
        sample_categorical(torch.full((n, K), 1.0 / K, dtype=dtype), g)
        for n, g in zip(atom_counts, gens)
    ]
    segment_ids = torch.cat(
        [torch.full((n,), i, dtype=torch.long) for i, n in enumerate(atom_counts)]
    )
    slices = []
    start = 0
    for n in atom_counts:
        slices.append(slice(start, start + n))
        start += n

    points_t = None
    if shape_points is not None:
        points_t = torch.as_tensor(np.asarray(shape_points), dtype=dtype)
    traces = [GenerationTrace() for _ in atom_counts] if trace else None

    for t in range(T, 0, -1):
        x_flat = torch.cat(xs)
        v_flat = torch.cat(vs)
        if not (torch.isfinite(x_flat).all() and torch.isfinite(v_flat).all()):
            raise GenerationDiverged(t, f"positions finite={torch.isfinite(x_flat).all().item()}")
        with torch.no_grad():
            out = predictor(x_flat, v_flat, H, inv, t, segment_ids=segment_ids)

        for i, sl in enumerate(slices):
            g = gens[i]
            x0_pred = out.positions[sl]
            v0_pred = out.feature_probs[sl]
            guided = 0
            if points_t is not None and t >= config.stop_step:
                lo, hi = config.sigma_range
                sigma = lo + (hi - lo) * torch.rand(x0_pred.shape[0], generator=g, dtype=dtype)
                x0_pred, mask = shape_guide(x0_pred, points_t, config.gamma, config.guidance_k, sigma)
                guided = int(mask.sum().item())

            mean, var = posterior_positions(xs[i], x0_pred, t, sched)
            noise = torch.randn(mean.shape, generator=g, dtype=dtype)
            x_next = mean + float(np.sqrt(var)) * noise
            v_next = sample_categorical(posterior_features(vs[i], v0_pred, t, sched), g)

            pocket_hits = 0
            if pocket is not None:
                elements = [feature_class(int(k))[0] for k in v_next.argmax(dim=-1).tolist()]
                x_next, pmask = pocket_guide(
                    x_next, pocket, config.pocket_k, elements=elements, generator=g
                )
                pocket_hits = int(pmask.sum().item())

            xs[i] = x_next
            vs[i] = v_next
            if traces is not None:
                event = {"t": t, "shape_guided": guided, "pocket_guided": pocket_hits}
                if points_t is not None:
                    event["mean_dist_to_points"] = float(
                        torch.cdist(x_next, points_t).min(dim=1).values.mean().item()
                    )
                traces[i].record(**event)

    molecules = []
    shift = np.zeros(3) if output_shift is None else np.asarray(output_shift, dtype=np.float64)
    for i, (x, v) in enumerate(zip(xs, vs)):
        pos = x.numpy().astype(np.float64) + shift
        classes = v.argmax(dim=-1).tolist()
        atoms = [Atom.from_class(pos[row], int(cls)) for row, cls in enumerate(classes)]
        elements = [a.element for a in atoms]
        bonds = assign_bonds(pos, elements)
        molecules.append(Molecule(atoms=atoms, bonds=bonds, name=f"{name_prefix}-{i:03d}"))
    return molecules, traces


def generate(
    predictor: MoleculePredictor,
    sched: Schedule,
    embedding: ShapeEmbedding,
    n_atoms: int,
    config: SamplerConfig | None = None,
    seed: int = 0,
    shape_points: np.ndarray | None = None,
    pocket: PocketModel | None = None,
    output_shift: np.ndarray | None = None,
    trace: bool = False,
) -> tuple[Molecule, GenerationTrace | None]:
    molecules, traces = generate_batch(
        predictor, sched, embedding, [n_atoms], config, seed,
        shape_points, pocket, output_shift, trace,
    )
    return molecules[0], (traces[0] if traces else None)
