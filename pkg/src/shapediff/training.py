"""Optimization loops for shape-embedding pre-training and diffusion training."""
from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field

import numpy as np
import torch

from .diffusion import (
    ClampCounter,
    Schedule,
    loss_bonds,
    loss_features,
    loss_positions,
    q_sample_features,
    q_sample_positions,
    total_loss,
)
from .shape import ShapeModel, signed_distance_loss


class TrainingDiverged(RuntimeError):
    def __init__(self, message: str, step: int, last_good_state: dict | None = None):
        super().__init__(f"step {step}: {message}")
        self.step = step
        self.last_good_state = last_good_state


@dataclass
class TrainResult:
    best_state: dict
    best_val: float
    best_step: int
    history: list[tuple[int, float]] = field(default_factory=list)  # (step, train loss)
    val_history: list[tuple[int, float]] = field(default_factory=list)
    clamp_count: int = 0


def _plateau(optimizer, decay: float, patience: int, min_lr: float):
    return torch.optim.lr_scheduler.ReduceLROnPlateau(
        optimizer, mode="min", factor=decay, patience=patience, min_lr=min_lr
    )


def _snapshot(model: torch.nn.Module) -> dict:
    return copy.deepcopy({k: v.detach().clone() for k, v in model.state_dict().items()})


@dataclass
class ShapeTrainItem:
    points: np.ndarray      # centered surface cloud
    queries: np.ndarray
    distances: np.ndarray


def pretrain_shape_model(
    model: ShapeModel,
    train_items: list[ShapeTrainItem],
    val_items: list[ShapeTrainItem],
    steps: int,
    batch_size: int = 16,
    lr: float = 1e-3,
    betas: tuple[float, float] = (0.95, 0.999),
    decay: float = 0.6,
    min_lr: float = 1e-6,
    patience: int = 5,
    eval_interval: int = 2000,
    seed: int = 0,
    log=None,
) -> TrainResult:
    """Adam training of the signed-distance objective; keeps the best-validation state."""
    if not train_items:
        raise ValueError("empty training corpus")
    optimizer = torch.optim.Adam(model.parameters(), lr=lr, betas=betas)
    scheduler = _plateau(optimizer, decay, patience, min_lr)
    g = torch.Generator().manual_seed(seed)
    dtype = next(model.parameters()).dtype

    def stacked(items):
        pts = torch.as_tensor(np.stack([it.points for it in items]), dtype=dtype)
        queries = torch.as_tensor(np.stack([it.queries for it in items]), dtype=dtype)
        targets = torch.as_tensor(np.stack([it.distances for it in items]), dtype=dtype)
        return pts, queries, targets

    def batch_loss(items) -> torch.Tensor:
        pts, queries, targets = stacked(items)
        H = model.encoder(pts)
        pred = model.decoder(H, queries)
        return signed_distance_loss(pred, targets)

    def evaluate() -> float:
        model.eval()
        with torch.no_grad():
            total = batch_loss(val_items).item()
        model.train()
        return total / max(1, len(val_items))

    result = TrainResult(best_state=_snapshot(model), best_val=evaluate(), best_step=0)
    result.val_history.append((0, result.best_val))

    for step in range(1, steps + 1):
        idx = torch.randint(0, len(train_items), (batch_size,), generator=g)
        optimizer.zero_grad()
        loss = batch_loss([train_items[i] for i in idx.tolist()])
        batch_loss_value = loss.item()
        if not math.isfinite(batch_loss_value):
            raise TrainingDiverged(
                f"non-finite shape loss {batch_loss_value}", step, result.best_state
            )
        loss.backward()
        optimizer.step()
        result.history.append((step, batch_loss_value / batch_size))
        if step % eval_interval == 0 or step == steps:
            val = evaluate()
            result.val_history.append((step, val))
            scheduler.step(val)
            if val < result.best_val:
                result.best_val = val
                result.best_step = step
                result.best_state = _snapshot(model)
            if log:
                log(f"shape step {step}: train {batch_loss_value / batch_size:.4f} val {val:.4f} "
                    f"lr {optimizer.param_groups[0]['lr']:.2e}")
    return result


@dataclass
class DiffusionTrainItem:
    """One molecule prepared in the shape-centered frame with a frozen embedding."""

    positions: np.ndarray          # (n, 3) centered on the condition frame
    features: np.ndarray           # (n, K) one-hot
    bond_orders: dict[tuple[int, int], int]
    embedding_H: torch.Tensor      # (d_p, 3)
    embedding_inv: torch.Tensor    # (d_p,)


def _bond_targets(
    item: DiffusionTrainItem, edges: torch.Tensor, n_bond_classes: int, offset: int = 0
) -> torch.Tensor:
    targets = torch.zeros(edges.shape[0], n_bond_classes)
    for row, (j, i) in enumerate(edges.tolist()):
        j, i = j - offset, i - offset
        order = item.bond_orders.get((min(i, j), max(i, j)), 0)
        targets[row, order] = 1.0
    return targets


def diffusion_step_loss(
    predictor,
    item: DiffusionTrainItem,
    t: int,
    sched: Schedule,
    generator: torch.Generator,
    xi: float = 100.0,
    zeta: float = 100.0,
    delta: float = 10.0,
    counter: ClampCounter | None = None,
) -> torch.Tensor:
    """Noising + prediction + weighted loss for a single molecule at step t."""
    dtype = next(predictor.parameters()).dtype
    x0 = torch.as_tensor(item.positions, dtype=dtype)
    v0 = torch.as_tensor(item.features, dtype=dtype)
    x_t, _ = q_sample_positions(x0, t, sched, generator=generator)
    v_t = q_sample_features(v0, t, sched, generator=generator)
    out = predictor(x_t, v_t, item.embedding_H.to(dtype), item.embedding_inv.to(dtype), t)
    l_pos = loss_positions(out.positions, x0, t, sched, delta)
    l_feat = loss_features(v_t, v0, out.feature_probs, t, sched, counter=counter)
    targets = _bond_targets(item, out.edges, out.bond_logits[0].shape[-1])
    l_bond = loss_bonds(out.bond_logits[1:], targets, t, sched, delta)
    return total_loss(l_pos, l_feat, l_bond, xi, zeta)


def diffusion_batch_loss(
    predictor,
    batch_items: list[DiffusionTrainItem],
    ts: list[int],
    sched: Schedule,
    generator: torch.Generator,
    xi: float = 100.0,
    zeta: float = 100.0,
    delta: float = 10.0,
    counter: ClampCounter | None = None,
    feature_ce_weight: float = 0.0,
) -> torch.Tensor:
    """Joint forward over a molecule batch; losses summed per molecule.

    feature_ce_weight > 0 adds an auxiliary cross-entropy between the clean
    features and their prediction; the posterior-KL term alone carries very
    little gradient early in short training runs, so small corpora use this
    to make desk-scale overfitting tractable. Zero keeps the plain objective.
    """
    dtype = next(predictor.parameters()).dtype
    x0s, v0s, x_ts, v_ts = [], [], [], []
    h_nodes, inv_nodes, seg_ids, t_nodes, slices = [], [], [], [], []
    start = 0
    for i, (item, t) in enumerate(zip(batch_items, ts)):
        x0 = torch.as_tensor(item.positions, dtype=dtype)
        v0 = torch.as_tensor(item.features, dtype=dtype)
        x_t, _ = q_sample_positions(x0, t, sched, generator=generator)
        v_t = q_sample_features(v0, t, sched, generator=generator)
        n = x0.shape[0]
        x0s.append(x0); v0s.append(v0); x_ts.append(x_t); v_ts.append(v_t)
        h_nodes.append(item.embedding_H.to(dtype).unsqueeze(0).expand(n, -1, -1))
        inv_nodes.append(item.embedding_inv.to(dtype).unsqueeze(0).expand(n, -1))
        seg_ids.append(torch.full((n,), i, dtype=torch.long))
        t_nodes.append(torch.full((n,), t, dtype=torch.long))
        slices.append(slice(start, start + n))
        start += n

    out = predictor(
        torch.cat(x_ts), torch.cat(v_ts), torch.cat(h_nodes), torch.cat(inv_nodes),
        torch.cat(t_nodes), segment_ids=torch.cat(seg_ids),
    )
    total = None
    n_bond_classes = out.bond_logits[0].shape[-1]
    for i, (item, t) in enumerate(zip(batch_items, ts)):
        sl = slices[i]
        e_lo, e_hi = out.edge_segments[i]
        l_pos = loss_positions(out.positions[sl], x0s[i], t, sched, delta)
        l_feat = loss_features(v_ts[i], v0s[i], out.feature_probs[sl], t, sched, counter=counter)
        targets = _bond_targets(item, out.edges[e_lo:e_hi], n_bond_classes, offset=sl.start)
        l_bond = loss_bonds(
            [lg[e_lo:e_hi] for lg in out.bond_logits[1:]], targets, t, sched, delta
        )
        loss = total_loss(l_pos, l_feat, l_bond, xi, zeta)
        if feature_ce_weight > 0.0:
            ce = -(v0s[i] * torch.log(out.feature_probs[sl] + 1e-12)).sum()
            loss = loss + feature_ce_weight * ce
        total = loss if total is None else total + loss
    return total


def train_diffusion_model(
    predictor,
    sched: Schedule,
    train_items: list[DiffusionTrainItem],
    val_items: list[DiffusionTrainItem],
    steps: int,
    batch_size: int = 32,
    lr: float = 1e-3,
    betas: tuple[float, float] = (0.95, 0.999),
    decay: float = 0.6,
    min_lr: float = 1e-5,
    patience: int = 10,
    eval_interval: int = 2000,
    xi: float = 100.0,
    zeta: float = 100.0,
    delta: float = 10.0,
    feature_ce_weight: float = 0.0,
    seed: int = 0,
    start_step: int = 0,
    optimizer_state: dict | None = None,
    generator_state: torch.Tensor | None = None,
    log=None,
) -> TrainResult:
    """Denoising training with uniform step sampling and a plateau LR schedule.

    Shape embeddings are frozen inputs; a NaN loss aborts with the last good
    state preserved on the raised exception.
    """
    if not train_items:
        raise ValueError("empty training corpus")
    optimizer = torch.optim.Adam(predictor.parameters(), lr=lr, betas=betas)
    if optimizer_state is not None:
        optimizer.load_state_dict(optimizer_state)
    scheduler = _plateau(optimizer, decay, patience, min_lr)
    g = torch.Generator().manual_seed(seed)
    if generator_state is not None:
        g.set_state(generator_state)
    counter = ClampCounter()

    def evaluate() -> float:
        val_g = torch.Generator().manual_seed(seed + 1)
        with torch.no_grad():
            total = 0.0
            for item in val_items:
                t = int(torch.randint(1, sched.T + 1, (1,), generator=val_g).item())
                total += diffusion_step_loss(
                    predictor, item, t, sched, val_g, xi, zeta, delta
                ).item()
        return total / max(1, len(val_items))

    result = TrainResult(best_state=_snapshot(predictor), best_val=evaluate(), best_step=start_step)
    result.val_history.append((start_step, result.best_val))

    for step in range(start_step + 1, steps + 1):
        idx = torch.randint(0, len(train_items), (batch_size,), generator=g)
        ts = torch.randint(1, sched.T + 1, (batch_size,), generator=g)
        optimizer.zero_grad()
        loss = diffusion_batch_loss(
            predictor, [train_items[i] for i in idx.tolist()], ts.tolist(),
            sched, g, xi, zeta, delta, counter, feature_ce_weight,
        )
        batch_loss = loss.item()
        if not math.isfinite(batch_loss):
            raise TrainingDiverged(f"non-finite diffusion loss {batch_loss}", step, result.best_state)
        (loss / batch_size).backward()
        optimizer.step()
        result.history.append((step, batch_loss / batch_size))
        if step % eval_interval == 0 or step == steps:
            val = evaluate()
            result.val_history.append((step, val))
            scheduler.step(val)
            if val < result.best_val:
                result.best_val = val
                result.best_step = step
                result.best_state = _snapshot(predictor)
            if log:
                log(f"diff step {step}: train {batch_loss / batch_size:.4f} val {val:.4f} "
                    f"lr {optimizer.param_groups[0]['lr']:.2e}")
    result.clamp_count = counter.count
    result.optimizer_state = optimizer.state_dict()  # type: ignore[attr-defined]
    result.generator_state = g.get_state()  # type: ignore[attr-defined]
    return result
