#!/usr/bin/env python3
"""Pilot run for the toy end-to-end check: trains on the 50-molecule fixture
corpus, generates samples from the trained and the untrained model, and
records stability and shape-similarity numbers plus wall-clock times.

Usage: python3 tools/pilot.py --out /tmp/pilot [--diff-steps 5000]
"""
from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(ROOT / "src"))

import numpy as np  # noqa: E402

from shapediff.chem import read_sdf  # noqa: E402
from shapediff.cli import main as cli  # noqa: E402
from shapediff.config import RunConfig, dump_config, validate  # noqa: E402
from shapediff.dataset import Manifest  # noqa: E402
from shapediff.metrics import shape_similarity, stability  # noqa: E402

FIXTURES = ROOT / "tests" / "fixtures" / "corpus50"


def toy_config(diff_steps: int, seed: int) -> RunConfig:
    return validate(RunConfig(
        seed=seed,
        shape_points=64, shape_queries=128, shape_knn=8, shape_layers=3,
        shape_hidden_channels=16, shape_embed_dim=48, shape_decoder_hidden=96,
        shape_decoder_layers=2,
        steps=600, stop_step=180,
        layers=2, neighbors=6, scalar_dim=48, vector_dim=12, time_dim=16,
        attention_dim=8, gvp_layers=2,
        se_steps=800, se_batch=8, se_eval_interval=200,
        diff_steps=diff_steps, diff_batch=24, diff_eval_interval=1000,
        volume_bins=10,
    ))


def pick_conditions(manifest: Manifest, n: int) -> list:
    train = sorted(manifest.split_records("train"), key=lambda r: r.record_id)
    step = max(1, len(train) // n)
    return [train[i * step] for i in range(n)]


def run(cmd: list[str]) -> None:
    code = cli(cmd)
    if code != 0:
        raise SystemExit(f"command failed ({code}): {' '.join(cmd)}")


def score(samples_paths: list[Path], conditions: list) -> dict:
    sims, stable = [], []
    for path, record in zip(samples_paths, conditions):
        condition = read_sdf(FIXTURES / record.file)[record.index]
        for mol in read_sdf(path):
            sims.append(shape_similarity(mol, condition))
            stable.append(stability(mol)[1])
    return {
        "n": len(sims),
        "mean_shape_similarity": float(np.mean(sims)),
        "stability_rate": float(np.mean(stable)),
    }


def main() -> None:
    parser = argparse.ArgumentParser()
    parser.add_argument("--out", required=True)
    parser.add_argument("--diff-steps", type=int, default=5000)
    parser.add_argument("--conditions", type=int, default=5)
    parser.add_argument("--per-condition", type=int, default=20)
    parser.add_argument("--seed", type=int, default=7)
    parser.add_argument("--no-guidance", action="store_true")
    args = parser.parse_args()

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cfg = toy_config(args.diff_steps, args.seed)
    cfg_path = out / "toy.cfg"
    cfg_path.write_text(dump_config(cfg))

    times: dict[str, float] = {}

    def timed(name, fn):
        t0 = time.time()
        result = fn()
        times[name] = round(time.time() - t0, 1)
        print(f"[pilot] {name}: {times[name]}s", flush=True)
        return result

    dataset = out / "dataset"
    timed("ingest", lambda: run(["ingest", "--data", str(FIXTURES), "--out", str(dataset),
                                 "--config", str(cfg_path)]))
    shape_ckpt = out / "shape.sdck"
    timed("train_shape", lambda: run(["train-shape", "--manifest", str(dataset),
                                      "--out", str(shape_ckpt), "--config", str(cfg_path)]))
    diff_ckpt = out / "diff.sdck"
    timed("train_diff", lambda: run(["train-diff", "--manifest", str(dataset),
                                     "--shape-checkpoint", str(shape_ckpt),
                                     "--out", str(diff_ckpt), "--config", str(cfg_path)]))
    init_ckpt = out / "init.sdck"
    timed("init_ckpt", lambda: run(["train-diff", "--manifest", str(dataset),
                                    "--shape-checkpoint", str(shape_ckpt),
                                    "--out", str(init_ckpt), "--config", str(cfg_path),
                                    "--steps", "0"]))

    manifest = Manifest.load(dataset / "manifest.json")
    conditions = pick_conditions(manifest, args.conditions)
    print("[pilot] conditions:", [r.record_id for r in conditions], flush=True)

    def generate_all(ckpt: Path, tag: str) -> list[Path]:
        paths = []
        for i, record in enumerate(conditions):
            gen_dir = out / f"gen-{tag}-{i}"
            cmd = ["generate", "--checkpoint", str(ckpt),
                   "--condition", str(FIXTURES / record.file),
                   "--out", str(gen_dir), "--n", str(args.per_condition),
                   "--seed", str(args.seed + 100 * i)]
            if not args.no_guidance:
                cmd.append("--shape-guidance")
            run(cmd)
            paths.append(gen_dir / "samples.sdf")
        return paths

    trained_paths = timed("generate_trained", lambda: generate_all(diff_ckpt, "trained"))
    baseline_paths = timed("generate_baseline", lambda: generate_all(init_ckpt, "init"))

    trained = timed("score_trained", lambda: score(trained_paths, conditions))
    baseline = timed("score_baseline", lambda: score(baseline_paths, conditions))

    report = {
        "seed": args.seed,
        "diff_steps": args.diff_steps,
        "guidance": not args.no_guidance,
        "conditions": [r.record_id for r in conditions],
        "trained": trained,
        "baseline": baseline,
        "shape_sim_gain": round(trained["mean_shape_similarity"] - baseline["mean_shape_similarity"], 4),
        "times_s": times,
        "total_time_s": round(sum(times.values()), 1),
    }
    (out / "pilot.json").write_text(json.dumps(report, indent=1) + "\n")
    print(json.dumps(report, indent=1), flush=True)


if __name__ == "__main__":
    main()
