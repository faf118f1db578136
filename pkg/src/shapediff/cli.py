"""Command-line pipeline: ingest, train-shape, train-diff, generate, evaluate,
inspect-schedule. Exit codes: 0 success, 2 config error, 3 data error,
4 diverged run."""
from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np
import torch

from .chem.mol import MoleculeError
from .chem.sdf import read_sdf, serialize_molecule
from .checkpoint import Checkpoint, CheckpointError
from .config import ConfigError, RunConfig, dump_config, load_config, parse_config
from .dataset import DataError, Manifest, diffusion_items, ingest, shape_items
from .diffusion import Schedule, make_schedule
from .guidance import PocketModel, default_clash_table, read_pocket, sample_guidance_points
from .metrics import NoveltyIndex, format_report_table, full_report
from .predictor import MoleculePredictor
from .sampler import AtomCountHistogram, GenerationDiverged, generate_batch, sample_atom_count
from .shape import build_surface_point_cloud
from .training import TrainingDiverged, pretrain_shape_model, train_diffusion_model

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_DIVERGED = 4


def _log(message: str) -> None:
    print(message, flush=True)


def _apply_thread_cap() -> None:
    cap = os.environ.get("SHAPEDIFF_THREADS")
    if cap:
        torch.set_num_threads(max(1, int(cap)))


def cmd_ingest(args) -> int:
    config = load_config(args.config)
    manifest = ingest(args.data, args.out, config, log=_log if args.verbose else None)
    _log(f"manifest: {len(manifest.records)} records "
         f"({len(manifest.split_records('train'))} train / "
         f"{len(manifest.split_records('val'))} val), {len(manifest.skipped)} skipped")
    for entry in manifest.skipped:
        _log(f"skipped {entry['file']}: {entry['reason']}")
    return EXIT_OK


def cmd_train_shape(args) -> int:
    config = load_config(args.config)
    if args.steps is not None:
        config.se_steps = args.steps
    manifest = Manifest.load(Path(args.manifest) / "manifest.json")
    train = shape_items(manifest, args.manifest, "train")
    val = shape_items(manifest, args.manifest, "val") or train
    torch.manual_seed(config.seed)
    model = config.shape_model()
    result = pretrain_shape_model(
        model, train, val,
        steps=config.se_steps, batch_size=config.se_batch, lr=config.se_lr,
        decay=config.se_decay, min_lr=config.se_min_lr, patience=config.se_patience,
        eval_interval=config.se_eval_interval, seed=config.seed, log=_log,
    )
    ckpt = Checkpoint(
        kind="shape", config_text=dump_config(config), step=result.best_step,
        extra={"best_val": result.best_val,
               "val_history": [[s, v] for s, v in result.val_history]},
    )
    ckpt.put_state_dict("shape", result.best_state)
    ckpt.save(args.out)
    _log(f"shape checkpoint: best val {result.best_val:.5f} at step {result.best_step} -> {args.out}")
    return EXIT_OK


def _load_shape_model(ckpt: Checkpoint):
    config = parse_config(ckpt.config_text)
    model = config.shape_model()
    model.load_state_dict(ckpt.state_dict("shape", dtype=torch.get_default_dtype()))
    model.eval()
    return model, config


def cmd_train_diff(args) -> int:
    config = load_config(args.config)
    if args.steps is not None:
        config.diff_steps = args.steps
    manifest = Manifest.load(Path(args.manifest) / "manifest.json")
    shape_ckpt = Checkpoint.load(args.shape_checkpoint)
    shape_model, shape_config = _load_shape_model(shape_ckpt)
    if shape_config.shape_embed_dim != config.shape_embed_dim:
        raise ConfigError(
            f"shape_embed_dim mismatch: checkpoint {shape_config.shape_embed_dim} "
            f"vs config {config.shape_embed_dim}"
        )
    dtype = torch.get_default_dtype()
    train = diffusion_items(manifest, args.manifest, "train", shape_model, dtype)
    val = diffusion_items(manifest, args.manifest, "val", shape_model, dtype) or train
    sched = config.schedule()

    torch.manual_seed(config.seed)
    predictor = MoleculePredictor(config.predictor_config())
    start_step = 0
    optimizer_state = None
    generator_state = None
    if args.resume:
        previous = Checkpoint.load(args.resume)
        predictor.load_state_dict(previous.state_dict("predictor", dtype=dtype))
        start_step = previous.step
        optimizer_state = _optimizer_state_from(previous)
        if previous.rng_state is not None:
            generator_state = torch.tensor(
                np.frombuffer(previous.rng_state, dtype=np.uint8).copy()
            )
    result = train_diffusion_model(
        predictor, sched, train, val,
        steps=config.diff_steps, batch_size=config.diff_batch, lr=config.diff_lr,
        decay=config.diff_decay, min_lr=config.diff_min_lr, patience=config.diff_patience,
        eval_interval=config.diff_eval_interval, xi=config.xi, zeta=config.zeta,
        delta=config.delta, feature_ce_weight=config.feature_ce_weight,
        seed=config.seed, start_step=start_step,
        optimizer_state=optimizer_state, generator_state=generator_state, log=_log,
    )
    ckpt = Checkpoint(
        kind="diffusion", config_text=dump_config(config), step=config.diff_steps,
        extra={
            "best_val": result.best_val,
            "best_step": result.best_step,
            "histogram": manifest.histogram.to_json(),
            "kl_clamp_count": result.clamp_count,
            "loss_history": [[s, v] for s, v in result.history],
        },
        rng_state=bytes(result.generator_state.numpy().tobytes()),
    )
    ckpt.put_state_dict("predictor", {k: v for k, v in predictor.state_dict().items()})
    ckpt.put_state_dict("best", result.best_state)
    ckpt.put_state_dict("shape", {k: v for k, v in shape_model.state_dict().items()})
    _store_optimizer_state(ckpt, result.optimizer_state)
    ckpt.put_schedule(sched)
    ckpt.save(args.out)
    _log(f"diffusion checkpoint: best val {result.best_val:.5f} at step {result.best_step} -> {args.out}")
    return EXIT_OK


def _store_optimizer_state(ckpt: Checkpoint, state: dict) -> None:
    groups = json.loads(json.dumps(state["param_groups"]))
    ckpt.extra["optimizer_groups"] = groups
    for pid, slots in state["state"].items():
        for slot, value in slots.items():
            if isinstance(value, torch.Tensor):
                ckpt.tensors[f"opt.{pid}.{slot}"] = value.detach().cpu().numpy()
            else:
                ckpt.extra.setdefault("optimizer_scalars", {})[f"{pid}.{slot}"] = value


def _optimizer_state_from(ckpt: Checkpoint) -> dict | None:
    if "optimizer_groups" not in ckpt.extra:
        return None
    state: dict = {}
    for name, arr in ckpt.tensors.items():
        if not name.startswith("opt."):
            continue
        _, pid, slot = name.split(".", 2)
        state.setdefault(int(pid), {})[slot] = torch.from_numpy(np.array(arr))
    for key, value in ckpt.extra.get("optimizer_scalars", {}).items():
        pid, slot = key.split(".", 1)
        state.setdefault(int(pid), {})[slot] = value
    return {"state": state, "param_groups": ckpt.extra["optimizer_groups"]}


def _load_generation_stack(checkpoint_path: str):
    ckpt = Checkpoint.load(checkpoint_path)
    if ckpt.kind != "diffusion":
        raise CheckpointError(f"{checkpoint_path}: expected a diffusion checkpoint, got {ckpt.kind!r}")
    config = parse_config(ckpt.config_text)
    dtype = torch.get_default_dtype()
    predictor = MoleculePredictor(config.predictor_config())
    prefix = "best" if any(k.startswith("best.") for k in ckpt.tensors) else "predictor"
    predictor.load_state_dict(ckpt.state_dict(prefix, dtype=dtype))
    predictor.eval()
    shape_model = config.shape_model()
    shape_model.load_state_dict(ckpt.state_dict("shape", dtype=dtype))
    shape_model.eval()
    sched = ckpt.schedule()
    histogram = (
        AtomCountHistogram.from_json(ckpt.extra["histogram"])
        if "histogram" in ckpt.extra else None
    )
    return ckpt, config, predictor, shape_model, sched, histogram


def cmd_generate(args) -> int:
    ckpt, config, predictor, shape_model, sched, histogram = _load_generation_stack(args.checkpoint)
    condition_path = Path(args.condition)
    if not condition_path.exists():
        raise DataError(f"condition file not found: {condition_path}")
    molecules = read_sdf(condition_path)
    if not molecules:
        raise DataError(f"{condition_path}: no molecules")
    condition = molecules[0]

    seed = args.seed if args.seed is not None else config.seed
    rng = np.random.default_rng(seed)
    cloud, surface = build_surface_point_cloud(condition, config.shape_points, rng)
    with torch.no_grad():
        embedding = shape_model.encode(cloud.points)

    if args.atoms is not None:
        atom_counts = [args.atoms] * args.n
    else:
        if histogram is None:
            raise DataError("checkpoint lacks an atom-count histogram; pass --atoms")
        atom_counts = [sample_atom_count(cloud.bbox_volume(), histogram, rng) for _ in range(args.n)]

    shape_points = None
    if args.shape_guidance:
        centered = condition.positions - surface.shift
        shape_points = sample_guidance_points(
            centered, config.guidance_points_per_atom, config.guidance_variance, rng
        )

    pocket = None
    if args.pocket:
        thresholds = {} if args.no_clash_table else default_clash_table()
        pocket = read_pocket(args.pocket, thresholds=thresholds, fallback=config.pocket_fallback)
        pocket.epsilon_range = (config.epsilon_lo, config.epsilon_hi)
        pocket = pocket.translated(-surface.shift)
        if not args.pocket_guidance:
            _log("note: --pocket given without --pocket-guidance; enabling pocket guidance")

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    sampler_config = config.sampler_config()
    molecules, traces = generate_batch(
        predictor, sched, embedding, atom_counts, sampler_config, base_seed=seed,
        shape_points=shape_points, pocket=pocket, output_shift=surface.shift,
        trace=args.trace,
    )
    sdf_path = out_dir / "samples.sdf"
    with open(sdf_path, "w", encoding="utf-8") as handle:
        for mol in molecules:
            handle.write(serialize_molecule(mol, "sdf"))
    if traces is not None:
        for i, trace in enumerate(traces):
            with open(out_dir / f"sample-{i:03d}.trace.jsonl", "w", encoding="utf-8") as handle:
                for event in trace.steps:
                    handle.write(json.dumps(event, sort_keys=True) + "\n")
    _log(f"wrote {len(molecules)} molecules -> {sdf_path}")
    return EXIT_OK


def _read_molecule_set(path_str: str):
    path = Path(path_str)
    if path.is_dir():
        molecules = []
        for sdf in sorted(path.glob("*.sdf")):
            molecules.extend(read_sdf(sdf))
        if not molecules:
            raise DataError(f"no molecules under {path}")
        return molecules
    if not path.exists():
        raise DataError(f"molecule set not found: {path}")
    molecules = read_sdf(path)
    if not molecules:
        raise DataError(f"{path}: no molecules")
    return molecules


def cmd_evaluate(args) -> int:
    generated = _read_molecule_set(args.generated)
    conditions = _read_molecule_set(args.condition)
    condition = conditions[0]
    reference = _read_molecule_set(args.reference) if args.reference else None
    index = NoveltyIndex.from_corpus(reference) if reference else None
    report = full_report([(condition, generated)], args.delta_g, reference, index)
    text = format_report_table(report)
    print(text, end="")
    if args.out:
        with open(args.out, "w", encoding="utf-8") as handle:
            json.dump(report, handle, sort_keys=True, indent=1)
            handle.write("\n")
        _log(f"report -> {args.out}")
    return EXIT_OK


def cmd_inspect_schedule(args) -> int:
    config = load_config(args.config)
    T = args.steps or config.steps
    if args.kind == "both":
        csv = config.schedule().to_csv() if T == config.steps else Schedule.default(T).to_csv()
    else:
        kind = "sigmoid_x" if args.kind == "sigmoid" else "cosine_v"
        params = (
            {"w1": config.sigmoid_w1, "w2": config.sigmoid_w2, "w3": config.sigmoid_w3}
            if kind == "sigmoid_x" else {"s": config.cosine_s}
        )
        table = make_schedule(kind, params, T)
        lines = ["t,beta,alpha,alpha_bar,beta_tilde"]
        for t in range(T + 1):
            bt = table.beta_tilde(t) if t >= 1 else 0.0
            lines.append(
                f"{t},{table.beta[t]:.10g},{table.alpha[t]:.10g},"
                f"{table.alpha_bar[t]:.10g},{bt:.10g}"
            )
        csv = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(csv, encoding="utf-8")
        _log(f"schedule csv -> {args.out}")
    else:
        print(csv, end="")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="shapediff",
                                     description="shape-conditioned molecule generation")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="scan an SDF directory into a manifest")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.add_argument("--verbose", action="store_true")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("train-shape", help="pre-train the shape embedding model")
    p.add_argument("--manifest", required=True, help="ingest output directory")
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.add_argument("--steps", type=int)
    p.set_defaults(func=cmd_train_shape)

    p = sub.add_parser("train-diff", help="train the denoising model")
    p.add_argument("--manifest", required=True)
    p.add_argument("--shape-checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.add_argument("--steps", type=int)
    p.add_argument("--resume")
    p.set_defaults(func=cmd_train_diff)

    p = sub.add_parser("generate", help="sample molecules for a condition shape")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--condition", required=True, help="condition molecule SDF")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--n", type=int, default=1)
    p.add_argument("--seed", type=int)
    p.add_argument("--atoms", type=int, help="fixed atom count (otherwise sampled)")
    p.add_argument("--shape-guidance", action="store_true")
    p.add_argument("--pocket", help="pocket PDB(-subset) file")
    p.add_argument("--pocket-guidance", action="store_true")
    p.add_argument("--no-clash-table", action="store_true",
                   help="use only the scalar clash fallback")
    p.add_argument("--trace", action="store_true")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("evaluate", help="score generated molecules against a condition")
    p.add_argument("--generated", required=True)
    p.add_argument("--condition", required=True)
    p.add_argument("--reference", help="reference corpus for novelty and geometry JS")
    p.add_argument("--delta-g", type=float, default=0.3)
    p.add_argument("--out", help="write the JSON report here")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("inspect-schedule", help="dump schedule tables as CSV")
    p.add_argument("--kind", choices=["sigmoid", "cosine", "both"], default="both")
    p.add_argument("--steps", type=int)
    p.add_argument("--config")
    p.add_argument("--out")
    p.set_defaults(func=cmd_inspect_schedule)
    return parser


def main(argv=None) -> int:
    _apply_thread_cap()
    parser = build_parser()
    args = parser.parse_args(argv)
    previous_dtype = torch.get_default_dtype()
    torch.set_default_dtype(torch.float32)
    try:
        return args.func(args)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, MoleculeError, CheckpointError, FileNotFoundError) as err:
        print(f"data error: {err}", file=sys.stderr)
        return EXIT_DATA
    except (TrainingDiverged, GenerationDiverged) as err:
        print(f"diverged: {err}", file=sys.stderr)
        return EXIT_DIVERGED
    finally:
        torch.set_default_dtype(previous_dtype)


if __name__ == "__main__":
    sys.exit(main())
