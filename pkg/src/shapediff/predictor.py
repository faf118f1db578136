"""Shape-conditioned denoising network.

Predicts clean atom positions and feature distributions from a noisy molecule
and a frozen equivariant shape embedding. Scalar channels stay rotation
invariant, vector channels rotation equivariant; per-edge bond-type logits are
symmetric under swapping the edge endpoints by construction.

All inputs live in the shape-centered frame. Several disjoint molecules can be
processed in one call via `segment_ids` (they must share one shape embedding).
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import torch
from torch import nn

from .chem.mol import NUM_ATOM_CLASSES, NUM_BOND_CLASSES
from .nets import GVPStack, VNLinear, VNLinearLeakyReLU, mlp


def sinusoidal_time_embedding(t: torch.Tensor, dim: int = 16) -> torch.Tensor:
    """Classic fixed-frequency embedding of integer steps; (n,) -> (n, dim)."""
    half = dim // 2
    freqs = torch.exp(
        -math.log(10000.0) * torch.arange(half, dtype=torch.get_default_dtype()) / max(half - 1, 1)
    )
    angles = t.to(freqs.dtype).unsqueeze(-1) * freqs
    return torch.cat([torch.sin(angles), torch.cos(angles)], dim=-1)


@dataclass
class PredictorConfig:
    n_atom_classes: int = NUM_ATOM_CLASSES
    n_bond_classes: int = NUM_BOND_CLASSES
    n_layers: int = 8
    n_neighbors: int = 8
    scalar_dim: int = 128
    vector_dim: int = 32
    shape_dim: int = 128
    time_dim: int = 16
    attention_dim: int = 16
    attention_heads: int = 1
    gvp_layers: int = 3

    def __post_init__(self):
        if self.n_layers < 2:
            raise ValueError("predictor needs at least two layers")
        if self.scalar_dim % self.attention_heads or self.vector_dim % self.attention_heads:
            raise ValueError("channel dims must divide the attention head count")


@dataclass
class Prediction:
    positions: torch.Tensor            # (n, 3) denoised position estimate
    feature_probs: torch.Tensor        # (n, K) rows sum to 1
    bond_logits: list[torch.Tensor]    # layer 0..L logits per directed edge, (E, 4)
    edges: torch.Tensor                # (E, 2) as (source j, target i)
    edge_segments: list[tuple[int, int]] = field(default_factory=list)  # edge row range per segment


def segment_knn(
    x: torch.Tensor, segment_ids: torch.Tensor, k: int
) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor, list[tuple[int, int]]]:
    """Per-segment k-nearest-neighbor edges with lower-index tie breaking.

    Returns (edges (E,2) as (j, i), nbr (n, k_max) edge-row indices, mask
    (n, k_max), per-segment edge row ranges). Segments smaller than k+1 use
    k' = size - 1; singleton segments produce no edges.
    """
    n = x.shape[0]
    device = x.device
    edge_src: list[torch.Tensor] = []
    edge_dst: list[torch.Tensor] = []
    ranges: list[tuple[int, int]] = []
    seg_info: list[tuple[torch.Tensor, int, int]] = []  # (node indices, k_eff, edge row start)
    total = 0
    warned = False
    for seg in torch.unique_consecutive(segment_ids).tolist():
        sel = (segment_ids == seg).nonzero(as_tuple=True)[0]
        size = sel.numel()
        k_eff = min(k, size - 1)
        if k_eff < k and size > 1 and not warned:
            warnings.warn(f"segment of {size} atoms: reducing neighbor count to {k_eff}")
            warned = True
        start = total
        if k_eff > 0:
            pts = x[sel]
            diff = pts.unsqueeze(1) - pts.unsqueeze(0)
            d2 = (diff * diff).sum(-1)
            d2.fill_diagonal_(float("inf"))
            order = torch.argsort(d2, dim=1, stable=True)[:, :k_eff]  # (size, k_eff)
            edge_src.append(sel[order.reshape(-1)])
            edge_dst.append(sel.repeat_interleave(k_eff))
            total += size * k_eff
        ranges.append((start, total))
        seg_info.append((sel, k_eff, start))

    if total == 0:
        return (
            torch.zeros(0, 2, dtype=torch.long, device=device),
            torch.zeros(n, 1, dtype=torch.long, device=device),
            torch.zeros(n, 1, dtype=torch.bool, device=device),
            ranges,
        )

    edges = torch.stack([torch.cat(edge_src), torch.cat(edge_dst)], dim=1)
    k_max = max(info[1] for info in seg_info)
    nbr = torch.zeros(n, k_max, dtype=torch.long, device=device)
    mask = torch.zeros(n, k_max, dtype=torch.bool, device=device)
    for sel, k_eff, start in seg_info:
        if k_eff == 0:
            continue
        rows = torch.arange(sel.numel(), device=device)
        base = start + rows * k_eff
        idx = base.unsqueeze(1) + torch.arange(k_eff, device=device).unsqueeze(0)
        nbr[sel, :k_eff] = idx
        mask[sel, :k_eff] = True
    return edges, nbr, mask, ranges


def attention_aggregate(
    q: torch.Tensor,
    kfeat: torch.Tensor,
    m_a: torch.Tensor,
    m_r: torch.Tensor,
    target: torch.Tensor,
    nbr: torch.Tensor,
    mask: torch.Tensor,
    heads: int,
) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """Softmax-weighted neighborhood sums of scalar and vector messages.

    q: (n, heads*d) per-node queries; kfeat: (E, heads*d) per-edge keys;
    target: (E,) target node of each edge. Returns (agg_a (n, d_m),
    agg_r (n, d_n, 3), weights (n, k_max, heads)); weights sum to 1 per head
    over each node's real neighbors.
    """
    n = q.shape[0]
    q = q.reshape(n, heads, -1)
    kfeat = kfeat.reshape(-1, heads, q.shape[-1])
    logits = (q[target] * kfeat).sum(-1)                  # (E, heads)
    per_node = logits[nbr]                                # (n, k_max, heads)
    # large finite fill keeps all-masked rows NaN-free
    per_node = per_node.masked_fill(~mask.unsqueeze(-1), -1e9)
    weights = torch.softmax(per_node, dim=1)
    weights = torch.where(mask.unsqueeze(-1), weights, torch.zeros_like(weights))
    m_a_heads = m_a[nbr].reshape(n, nbr.shape[1], heads, -1)
    agg_a = (weights.unsqueeze(-1) * m_a_heads).sum(1).reshape(n, -1)
    m_r_heads = m_r[nbr].reshape(n, nbr.shape[1], heads, -1, 3)
    agg_r = (weights.unsqueeze(-1).unsqueeze(-1) * m_r_heads).sum(1).reshape(n, -1, 3)
    return agg_a, agg_r, weights


class ShapeConditioner(nn.Module):
    """Mixes the shape embedding into per-atom scalar and vector channels."""

    def __init__(self, cfg: PredictorConfig):
        super().__init__()
        d = cfg.scalar_dim
        interaction_in = d + cfg.vector_dim * cfg.shape_dim + cfg.vector_dim + cfg.shape_dim
        self.interaction = mlp([interaction_in, d, d])
        self.scalar_mix = mlp([2 * d, d, d])
        self.vector_mix = VNLinearLeakyReLU(cfg.vector_dim + cfg.shape_dim, cfg.vector_dim)

    def forward(self, h, r, H, inv):
        # H may be shared (d_p, 3) or per-node (n, d_p, 3); likewise inv
        n = h.shape[0]
        if H.dim() == 2:
            H = H.unsqueeze(0).expand(n, -1, -1)
            inv = inv.unsqueeze(0).expand(n, -1)
        gram = torch.einsum("nci,npi->ncp", r, H).reshape(n, -1)
        norms = (r * r).sum(-1)
        o = self.interaction(torch.cat([h, gram, norms, inv], dim=-1))
        h_hat = self.scalar_mix(torch.cat([h, o], dim=-1))
        r_hat = self.vector_mix(torch.cat([r, H], dim=1))
        return h_hat, r_hat, o


class BondTypeHead(nn.Module):
    """Permutation-symmetric per-edge bond-type logits.

    Layer 0 sees the raw interatomic distance; later layers use sums and
    absolute differences of the vector-channel norms instead.
    """

    def __init__(self, cfg: PredictorConfig, initial: bool):
        super().__init__()
        d = cfg.scalar_dim
        extra = 1 if initial else 2 * cfg.vector_dim
        self.initial = initial
        self.net = mlp([2 * d + extra, d, cfg.n_bond_classes])

    def forward(self, h, r, edges, dist):
        j, i = edges[:, 0], edges[:, 1]
        feats = [h[i] + h[j], (h[i] - h[j]).abs()]
        if self.initial:
            feats.append(dist.unsqueeze(-1))
        else:
            ni = (r[i] * r[i]).sum(-1)
            nj = (r[j] * r[j]).sum(-1)
            feats.extend([ni + nj, (ni - nj).abs()])
        return self.net(torch.cat(feats, dim=-1))


class PredictorLayer(nn.Module):
    def __init__(self, cfg: PredictorConfig):
        super().__init__()
        d, dv = cfg.scalar_dim, cfg.vector_dim
        self.cfg = cfg
        self.conditioner = ShapeConditioner(cfg)
        self.message_net = GVPStack(
            (d + 1 + cfg.n_bond_classes, dv + 1), (d, dv), n_layers=cfg.gvp_layers
        )
        self.query = mlp([d + dv, d, cfg.attention_dim * cfg.attention_heads])
        self.key = mlp([d + dv, d, cfg.attention_dim * cfg.attention_heads])
        self.node_net = GVPStack(
            (cfg.n_atom_classes + d + d + cfg.time_dim, 1 + dv + dv), (d, dv),
            n_layers=cfg.gvp_layers,
        )

    def forward(self, x, v, h, r, H, inv, t_emb, edges, nbr, mask, bond_logits_prev):
        heads = self.cfg.attention_heads
        h_hat, r_hat, _ = self.conditioner(h, r, H, inv)
        n = h.shape[0]

        if edges.shape[0] > 0:
            j, i = edges[:, 0], edges[:, 1]
            rel = x[j] - x[i]
            dist = rel.norm(dim=-1)
            m_scalar_in = torch.cat([h_hat[j], dist.unsqueeze(-1), bond_logits_prev], dim=-1)
            m_vector_in = torch.cat([r_hat[j], rel.unsqueeze(1)], dim=1)
            m_a, m_r = self.message_net(m_scalar_in, m_vector_in)

            q = self.query(torch.cat([h_hat, (r_hat * r_hat).sum(-1)], dim=-1))
            kfeat = self.key(torch.cat([m_a, (m_r * m_r).sum(-1)], dim=-1))
            agg_a, agg_r, _ = attention_aggregate(q, kfeat, m_a, m_r, i, nbr, mask, heads)
        else:
            agg_a = torch.zeros_like(h)
            agg_r = torch.zeros_like(r)

        node_scalar = torch.cat([v, h_hat, agg_a, t_emb], dim=-1)
        node_vector = torch.cat([x.unsqueeze(1), r_hat, agg_r], dim=1)
        return self.node_net(node_scalar, node_vector)


class MoleculePredictor(nn.Module):
    def __init__(self, cfg: PredictorConfig | None = None, **overrides):
        super().__init__()
        self.cfg = cfg or PredictorConfig(**overrides)
        c = self.cfg
        self.initial_scalar = mlp([c.n_atom_classes + c.time_dim, c.scalar_dim, c.scalar_dim])
        self.layers = nn.ModuleList(PredictorLayer(c) for _ in range(c.n_layers))
        self.bond_heads = nn.ModuleList(
            [BondTypeHead(c, initial=True)] + [BondTypeHead(c, initial=False) for _ in range(c.n_layers)]
        )
        self.position_head = VNLinear(c.vector_dim, 1)
        self.feature_head = mlp([c.scalar_dim, c.scalar_dim, c.n_atom_classes])

    def forward(
        self,
        x: torch.Tensor,
        v: torch.Tensor,
        H: torch.Tensor,
        inv: torch.Tensor,
        t,
        segment_ids: torch.Tensor | None = None,
    ) -> Prediction:
        """Denoise one molecule, or several disjoint ones via segment_ids.

        H/inv may be a single shared embedding ((d_p, 3) and (d_p,)) or
        per-node embeddings ((n, d_p, 3) and (n, d_p)); t is a scalar step or
        a per-node tensor.
        """
        cfg = self.cfg
        n = x.shape[0]
        if v.shape != (n, cfg.n_atom_classes):
            raise ValueError(f"feature matrix must be (n, {cfg.n_atom_classes}), got {tuple(v.shape)}")
        if segment_ids is None:
            segment_ids = torch.zeros(n, dtype=torch.long)
        t_nodes = torch.as_tensor(t)
        if t_nodes.ndim == 0:
            t_nodes = t_nodes.expand(n)
        t_emb = sinusoidal_time_embedding(t_nodes, cfg.time_dim)

        edges, nbr, mask, ranges = segment_knn(x, segment_ids, cfg.n_neighbors)
        dist = (x[edges[:, 0]] - x[edges[:, 1]]).norm(dim=-1) if edges.shape[0] else x.new_zeros(0)

        h = self.initial_scalar(torch.cat([v, t_emb], dim=-1))
        r = x.new_zeros(n, cfg.vector_dim, 3)
        bond_logits = [self.bond_heads[0](h, r, edges, dist)]
        for layer_index, layer in enumerate(self.layers):
            h, r = layer(x, v, h, r, H, inv, t_emb, edges, nbr, mask, bond_logits[-1])
            bond_logits.append(self.bond_heads[layer_index + 1](h, r, edges, dist))

        positions = x + self.position_head(r).squeeze(1)
        feature_probs = torch.softmax(self.feature_head(h), dim=-1)
        return Prediction(
            positions=positions,
            feature_probs=feature_probs,
            bond_logits=bond_logits,
            edges=edges,
            edge_segments=ranges,
        )
