"""Shape embedding module: surface point clouds, signed-distance queries,
an equivariant point-cloud encoder, and the distance-decoding pre-training loss.

The molecular surface is the boundary of the union of vdW spheres; signed
distances are measured against the sampled surface points, positive inside.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .chem.mol import Molecule, MoleculeError
from .chem.tables import VDW_RADII
from .nets import VNInvariant, VNLinear, VNLinearLeakyReLU, mlp


@dataclass
class PointCloud:
    points: np.ndarray  # (n, 3), centered

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        if np.linalg.norm(self.points.mean(axis=0)) > 1e-6:
            raise MoleculeError("point cloud is not centered")

    def __len__(self) -> int:
        return len(self.points)

    def bbox_volume(self) -> float:
        extent = self.points.max(axis=0) - self.points.min(axis=0)
        return float(np.prod(extent))


@dataclass
class SurfaceModel:
    """Union-of-spheres surface in the centered frame, plus the sampled cloud."""

    centers: np.ndarray
    radii: np.ndarray
    cloud: np.ndarray
    shift: np.ndarray  # original frame -> centered frame: x_centered = x - shift

    def contains(self, points: np.ndarray) -> np.ndarray:
        pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        d2 = ((pts[:, None, :] - self.centers[None, :, :]) ** 2).sum(-1)
        return (d2 < (self.radii[None, :] ** 2)).any(axis=1)

    def signed_distance(self, points: np.ndarray) -> np.ndarray:
        pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        d = np.sqrt(((pts[:, None, :] - self.cloud[None, :, :]) ** 2).sum(-1)).min(axis=1)
        return np.where(self.contains(pts), d, -d)


@dataclass
class QuerySet:
    queries: np.ndarray       # (k, 3)
    distances: np.ndarray     # (k,), positive inside

    def __post_init__(self):
        self.queries = np.asarray(self.queries, dtype=np.float64).reshape(-1, 3)
        self.distances = np.asarray(self.distances, dtype=np.float64).reshape(-1)
        if not np.all(np.isfinite(self.distances)):
            raise MoleculeError("non-finite signed distances")


def build_surface_point_cloud(
    m: Molecule, n: int = 512, rng: np.random.Generator | None = None
) -> tuple[PointCloud, SurfaceModel]:
    """Sample n points uniformly by area on the exposed union-of-spheres surface."""
    rng = rng or np.random.default_rng(0)
    centers = m.positions
    radii = np.array([VDW_RADII[el] for el in m.elements])
    weights = radii**2
    weights = weights / weights.sum()

    collected: list[np.ndarray] = []
    attempts = 0
    while sum(len(c) for c in collected) < n:
        attempts += 1
        if attempts > 200:
            raise MoleculeError("rejection sampling failed; degenerate molecular surface")
        batch = max(4 * n, 256)
        sphere_idx = rng.choice(len(centers), size=batch, p=weights)
        direction = rng.normal(size=(batch, 3))
        direction /= np.linalg.norm(direction, axis=1, keepdims=True)
        candidates = centers[sphere_idx] + radii[sphere_idx, None] * direction
        d2 = ((candidates[:, None, :] - centers[None, :, :]) ** 2).sum(-1)
        inside_other = (d2 < (radii[None, :] - 1e-9) ** 2).any(axis=1)
        kept = candidates[~inside_other]
        if kept.size:
            collected.append(kept)
    points = np.concatenate(collected)[:n]
    shift = points.mean(axis=0)
    points = points - shift
    surface = SurfaceModel(centers=centers - shift, radii=radii, cloud=points, shift=shift)
    return PointCloud(points=points), surface


def sample_query_points(
    surface: SurfaceModel, k: int = 1024, rng: np.random.Generator | None = None
) -> QuerySet:
    """Sample k query points, at most half inside, with signed distances.

    Candidates come uniformly from the cloud bounding box extended by 1 A;
    3k are drawn so enough land inside despite irregular shapes.
    """
    rng = rng or np.random.default_rng(0)
    lo = surface.cloud.min(axis=0) - 1.0
    hi = surface.cloud.max(axis=0) + 1.0

    inside_pool: list[np.ndarray] = []
    outside_pool: list[np.ndarray] = []
    for _ in range(50):
        candidates = rng.uniform(lo, hi, size=(3 * k, 3))
        mask = surface.contains(candidates)
        inside_pool.append(candidates[mask])
        outside_pool.append(candidates[~mask])
        n_inside = sum(len(p) for p in inside_pool)
        n_outside = sum(len(p) for p in outside_pool)
        n_take = min(n_inside, k // 2)
        if n_outside >= k - n_take:
            break
    inside = np.concatenate(inside_pool) if inside_pool else np.zeros((0, 3))
    outside = np.concatenate(outside_pool)
    n_take = min(len(inside), k // 2)
    if len(outside) < k - n_take:
        raise MoleculeError("could not sample enough outside query points")
    chosen_in = inside[rng.choice(len(inside), size=n_take, replace=False)] if n_take else np.zeros((0, 3))
    chosen_out = outside[rng.choice(len(outside), size=k - n_take, replace=False)]
    queries = np.concatenate([chosen_in, chosen_out])
    return QuerySet(queries=queries, distances=surface.signed_distance(queries))


# ---------------------------------------------------------------------------
# encoder / decoder


@dataclass
class ShapeEmbedding:
    H: torch.Tensor    # (d_p, 3) equivariant
    inv: torch.Tensor  # (d_p,) rotation-invariant readout

    @property
    def dim(self) -> int:
        return self.H.shape[0]

    def detached(self) -> "ShapeEmbedding":
        return ShapeEmbedding(H=self.H.detach(), inv=self.inv.detach())


def _feature_knn(features: torch.Tensor, k: int) -> torch.Tensor:
    """(..., n, C, 3) features -> (..., n, k) neighbor indices by flattened distance."""
    n = features.shape[-3]
    flat = features.reshape(*features.shape[:-2], -1)
    dist = torch.cdist(flat, flat)
    eye = torch.eye(n, dtype=torch.bool, device=features.device)
    dist = dist.masked_fill(eye, float("inf"))
    order = torch.argsort(dist, dim=-1, stable=True)
    return order[..., :k]


class _EdgeConv(nn.Module):
    def __init__(self, in_channels: int, out_channels: int):
        super().__init__()
        self.conv = VNLinearLeakyReLU(2 * in_channels, out_channels)

    def forward(self, x: torch.Tensor, neighbor_idx: torch.Tensor) -> torch.Tensor:
        # x: (..., n, C, 3); neighbor_idx: (..., n, k)
        k = neighbor_idx.shape[-1]
        idx = neighbor_idx.unsqueeze(-1).unsqueeze(-1)          # (..., n, k, 1, 1)
        idx = idx.expand(*neighbor_idx.shape, x.shape[-2], 3)
        source = x.unsqueeze(-4).expand(*x.shape[:-3], x.shape[-3], *x.shape[-3:])
        gathered = torch.gather(source, -3, idx)                 # (..., n, k, C, 3)
        center = x.unsqueeze(-3).expand_as(gathered)
        edge = torch.cat([center, gathered - center], dim=-2)
        return self.conv(edge).mean(dim=-3)


class ShapeEncoder(nn.Module):
    """VN-based dynamic edge-conv encoder; graphs rebuilt in feature space.

    Accepts a single cloud (n, 3) or a batch (B, n, 3) of equal-size clouds.
    """

    def __init__(self, embed_dim: int = 128, hidden_channels: int = 64, n_layers: int = 4, knn: int = 20):
        super().__init__()
        if n_layers < 2:
            raise ValueError("encoder needs at least two edge-conv layers")
        self.knn = knn
        self.embed_dim = embed_dim
        dims = [1] + [hidden_channels] * (n_layers - 1) + [embed_dim]
        self.layers = nn.ModuleList(_EdgeConv(a, b) for a, b in zip(dims, dims[1:]))

    def forward(self, points: torch.Tensor) -> torch.Tensor:
        if points.shape[-2] < self.knn + 1:
            raise MoleculeError(
                f"need more than {self.knn} points to build the encoder graph, got {points.shape[-2]}"
            )
        x = points.unsqueeze(-2)  # (..., n, 1, 3)
        for layer in self.layers:
            idx = _feature_knn(x.detach(), self.knn)
            x = layer(x, idx)
        return x.mean(dim=-3)  # (..., d_p, 3)


class SignedDistanceDecoder(nn.Module):
    """Predicts signed distances from rotation-invariant functions of (query, H)."""

    def __init__(self, embed_dim: int = 128, hidden_dim: int = 256, n_layers: int = 2):
        super().__init__()
        self.invariant = VNInvariant(embed_dim)
        dims = [2 * embed_dim + 1] + [hidden_dim] * (n_layers - 1) + [1]
        self.net = mlp(dims)

    def forward(self, H: torch.Tensor, queries: torch.Tensor, inv: torch.Tensor | None = None) -> torch.Tensor:
        # supports (d_p, 3) + (m, 3) as well as batched (B, d_p, 3) + (B, m, 3)
        queries = torch.atleast_2d(queries)
        if inv is None:
            inv = self.invariant(H)
        dots = queries @ H.transpose(-1, -2)       # (..., m, d_p)
        norms = (queries * queries).sum(-1, keepdim=True)
        inv_rep = inv.unsqueeze(-2).expand(*queries.shape[:-1], inv.shape[-1])
        return self.net(torch.cat([dots, norms, inv_rep], dim=-1)).squeeze(-1)


class ShapeModel(nn.Module):
    """Encoder + decoder pair trained to reproduce signed distances."""

    def __init__(self, embed_dim: int = 128, hidden_channels: int = 64, n_layers: int = 4,
                 knn: int = 20, decoder_hidden: int = 256, decoder_layers: int = 2):
        super().__init__()
        self.encoder = ShapeEncoder(embed_dim, hidden_channels, n_layers, knn)
        self.decoder = SignedDistanceDecoder(embed_dim, decoder_hidden, decoder_layers)

    def encode(self, points) -> ShapeEmbedding:
        pts = torch.as_tensor(np.asarray(points), dtype=torch.get_default_dtype())
        H = self.encoder(pts)
        return ShapeEmbedding(H=H, inv=self.decoder.invariant(H))

    def decode(self, embedding: ShapeEmbedding, queries) -> torch.Tensor:
        q = torch.as_tensor(np.asarray(queries), dtype=torch.get_default_dtype())
        return self.decoder(embedding.H, q, embedding.inv)


def signed_distance_loss(predicted: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """Sum of squared errors over the query batch."""
    if predicted.shape != target.shape:
        raise ValueError("prediction/target shape mismatch")
    return (predicted - target).pow(2).sum()


# ---------------------------------------------------------------------------
# binary cache: magic SDPC, version u16, little-endian f32 payloads

SDPC_MAGIC = b"SDPC"
SDPC_VERSION = 1


def save_shape_cache(path, cloud: np.ndarray, queries: np.ndarray, distances: np.ndarray, shift: np.ndarray) -> None:
    cloud = np.asarray(cloud, dtype="<f4").reshape(-1, 3)
    queries = np.asarray(queries, dtype="<f4").reshape(-1, 3)
    distances = np.asarray(distances, dtype="<f4").reshape(-1)
    shift = np.asarray(shift, dtype="<f4").reshape(3)
    if len(queries) != len(distances):
        raise ValueError("queries/distances length mismatch")
    with open(path, "wb") as handle:
        handle.write(SDPC_MAGIC)
        handle.write(struct.pack("<HII", SDPC_VERSION, len(cloud), len(queries)))
        handle.write(cloud.tobytes())
        handle.write(queries.tobytes())
        handle.write(distances.tobytes())
        handle.write(shift.tobytes())


def load_shape_cache(path) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    with open(path, "rb") as handle:
        magic = handle.read(4)
        if magic != SDPC_MAGIC:
            raise MoleculeError(f"{path}: not a shape cache file (magic {magic!r})")
        version, n_cloud, n_q = struct.unpack("<HII", handle.read(10))
        if version != SDPC_VERSION:
            raise MoleculeError(f"{path}: unsupported shape cache version {version}")
        cloud = np.frombuffer(handle.read(n_cloud * 12), dtype="<f4").reshape(n_cloud, 3)
        queries = np.frombuffer(handle.read(n_q * 12), dtype="<f4").reshape(n_q, 3)
        distances = np.frombuffer(handle.read(n_q * 4), dtype="<f4")
        shift = np.frombuffer(handle.read(12), dtype="<f4")
    return (
        cloud.astype(np.float64),
        queries.astype(np.float64),
        distances.astype(np.float64),
        shift.astype(np.float64),
    )
