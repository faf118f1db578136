#!/usr/bin/env python3
"""Quick hyperparameter probes for the toy end-to-end setup."""
from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(ROOT / "src"))

import numpy as np
import torch

torch.set_num_threads(2)
torch.set_default_dtype(torch.float32)

from shapediff.chem import read_sdf
from shapediff.config import RunConfig, validate
from shapediff.dataset import Manifest, diffusion_items, ingest, shape_items
from shapediff.diffusion import q_sample_features, q_sample_positions
from shapediff.guidance import sample_guidance_points
from shapediff.metrics import shape_similarity, stability
from shapediff.predictor import MoleculePredictor
from shapediff.sampler import generate_batch, sample_atom_count
from shapediff.shape import load_shape_cache
from shapediff.training import pretrain_shape_model, train_diffusion_model

FIXTURES = ROOT / "tests" / "fixtures" / "corpus50"


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--T", type=int, default=300)
    ap.add_argument("--xi", type=float, default=100.0)
    ap.add_argument("--zeta", type=float, default=100.0)
    ap.add_argument("--steps", type=int, default=1500)
    ap.add_argument("--layers", type=int, default=2)
    ap.add_argument("--scalar", type=int, default=48)
    ap.add_argument("--vector", type=int, default=12)
    ap.add_argument("--lr", type=float, default=1e-3)
    ap.add_argument("--ce", type=float, default=0.0)
    ap.add_argument("--w3", type=float, default=0.01)
    ap.add_argument("--w2", type=float, default=None)
    ap.add_argument("--seed", type=int, default=7)
    ap.add_argument("--workdir", default="/tmp/sweep-shared")
    args = ap.parse_args()

    cfg = validate(RunConfig(
        seed=args.seed,
        shape_points=64, shape_queries=128, shape_knn=8, shape_layers=3,
        shape_hidden_channels=16, shape_embed_dim=48, shape_decoder_hidden=96,
        steps=args.T, stop_step=max(2, int(args.T * 0.3)),
        sigmoid_w3=args.w3, sigmoid_w2=(args.w2 if args.w2 is not None else args.w3 * 1e-5),
        layers=args.layers, neighbors=6, scalar_dim=args.scalar, vector_dim=args.vector,
        time_dim=16, attention_dim=8, gvp_layers=2,
        se_steps=800, se_batch=8, se_eval_interval=200,
        diff_steps=args.steps, diff_batch=24, diff_eval_interval=500,
        xi=args.xi, zeta=args.zeta, diff_lr=args.lr, feature_ce_weight=args.ce,
    ))
    work = Path(args.workdir)

    if not (work / "manifest.json").exists():
        ingest(FIXTURES, work, cfg)
    manifest = Manifest.load(work / "manifest.json")

    shape_path = work / "shape_model.pt"
    torch.manual_seed(cfg.seed)
    shape_model = cfg.shape_model()
    if shape_path.exists():
        shape_model.load_state_dict(torch.load(shape_path, weights_only=True))
    else:
        t0 = time.time()
        result = pretrain_shape_model(
            shape_model, shape_items(manifest, work, "train"),
            shape_items(manifest, work, "val"),
            steps=cfg.se_steps, batch_size=cfg.se_batch, eval_interval=cfg.se_eval_interval,
            seed=cfg.seed,
        )
        shape_model.load_state_dict(result.best_state)
        torch.save(shape_model.state_dict(), shape_path)
        print(f"SE trained in {time.time()-t0:.0f}s, best val {result.best_val:.3f}")
    shape_model.eval()

    sched = cfg.schedule()
    train = diffusion_items(manifest, work, "train", shape_model)
    val = diffusion_items(manifest, work, "val", shape_model)

    torch.manual_seed(cfg.seed)
    predictor = MoleculePredictor(cfg.predictor_config())
    t0 = time.time()
    result = train_diffusion_model(
        predictor, sched, train, val, steps=cfg.diff_steps, batch_size=cfg.diff_batch,
        lr=cfg.diff_lr, eval_interval=cfg.diff_eval_interval, xi=cfg.xi, zeta=cfg.zeta,
        feature_ce_weight=cfg.feature_ce_weight, seed=cfg.seed,
    )
    dt = time.time() - t0
    predictor.load_state_dict(result.best_state)
    predictor.eval()
    print(f"diff trained {cfg.diff_steps} steps in {dt:.0f}s "
          f"({dt/max(1,cfg.diff_steps)*1000:.0f} ms/step), best val {result.best_val:.1f}")

    # reconstruction probes
    g = torch.Generator().manual_seed(0)
    for t in (1, args.T // 4, args.T // 2, args.T):
        errs, accs = [], []
        for it in train[:12]:
            x0 = torch.tensor(it.positions, dtype=torch.float32)
            v0 = torch.tensor(it.features, dtype=torch.float32)
            x_t, _ = q_sample_positions(x0, t, sched, generator=g)
            v_t = q_sample_features(v0, t, sched, generator=g)
            with torch.no_grad():
                out = predictor(x_t, v_t, it.embedding_H, it.embedding_inv, t)
            errs.append((out.positions - x0).norm(dim=-1).mean().item())
            accs.append((out.feature_probs.argmax(-1) == v0.argmax(-1)).float().mean().item())
        print(f"  t={t:4d}: pos err {np.mean(errs):.3f} A, class acc {np.mean(accs):.2f}")

    # generation probe: 2 conditions x 10, guided and unguided, trained vs untrained
    torch.manual_seed(cfg.seed)
    untrained = MoleculePredictor(cfg.predictor_config())
    untrained.eval()
    records = sorted(manifest.split_records("train"), key=lambda r: r.record_id)
    conditions = [records[5], records[25]]
    rng = np.random.default_rng(cfg.seed)
    for guided in (True, False):
        for tag, model in (("trained", predictor), ("init", untrained)):
            sims, stab = [], []
            for ci, rec in enumerate(conditions):
                cloud, _, _, shift = load_shape_cache(work / rec.cache)
                condition = read_sdf(FIXTURES / rec.file)[rec.index]
                with torch.no_grad():
                    emb = shape_model.encode(cloud)
                counts = [sample_atom_count(float(np.prod(cloud.max(0) - cloud.min(0))),
                                            manifest.histogram, rng) for _ in range(10)]
                pts = None
                if guided:
                    pts = sample_guidance_points(condition.positions - shift, 20, 0.049,
                                                 np.random.default_rng(cfg.seed + ci))
                mols, _ = generate_batch(
                    model, sched, emb, counts, cfg.sampler_config(),
                    base_seed=cfg.seed + 100 * ci, shape_points=pts, output_shift=shift,
                )
                for m in mols:
                    sims.append(shape_similarity(m, condition))
                    stab.append(stability(m)[1])
            print(f"  guided={guided} {tag}: shape_sim {np.mean(sims):.3f}, "
                  f"stable {100*np.mean(stab):.0f}%")


if __name__ == "__main__":
    main()
