"""Dataset ingestion: deterministic manifests, hash splits, shape caches."""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .chem.mol import Molecule, MoleculeError
from .chem.sdf import parse_sdf
from .config import RunConfig
from .sampler import AtomCountHistogram
from .shape import build_surface_point_cloud, load_shape_cache, sample_query_points, save_shape_cache
from .training import DiffusionTrainItem, ShapeTrainItem

MANIFEST_VERSION = 1


class DataError(RuntimeError):
    pass


@dataclass
class ManifestRecord:
    record_id: str
    file: str
    sha256: str
    index: int              # record index inside the file
    split: str              # "train" or "val"
    n_atoms: int
    volume: float
    cache: str

    def as_dict(self) -> dict:
        return {
            "id": self.record_id, "file": self.file, "sha256": self.sha256,
            "index": self.index, "split": self.split, "n_atoms": self.n_atoms,
            "volume": self.volume, "cache": self.cache,
        }


@dataclass
class Manifest:
    root: str
    records: list[ManifestRecord]
    histogram: AtomCountHistogram
    skipped: list[dict] = field(default_factory=list)

    def as_dict(self) -> dict:
        return {
            "version": MANIFEST_VERSION,
            "root": self.root,
            "records": [r.as_dict() for r in self.records],
            "histogram": self.histogram.to_json(),
            "skipped": self.skipped,
        }

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as handle:
            json.dump(self.as_dict(), handle, sort_keys=True, indent=1)
            handle.write("\n")

    @classmethod
    def load(cls, path) -> "Manifest":
        try:
            with open(path, encoding="utf-8") as handle:
                data = json.load(handle)
        except FileNotFoundError:
            raise DataError(f"manifest not found: {path}") from None
        if data.get("version") != MANIFEST_VERSION:
            raise DataError(f"unsupported manifest version {data.get('version')}")
        records = [
            ManifestRecord(
                record_id=r["id"], file=r["file"], sha256=r["sha256"], index=r["index"],
                split=r["split"], n_atoms=r["n_atoms"], volume=r["volume"], cache=r["cache"],
            )
            for r in data["records"]
        ]
        return cls(
            root=data["root"], records=records,
            histogram=AtomCountHistogram.from_json(data["histogram"]),
            skipped=data.get("skipped", []),
        )

    def split_records(self, split: str) -> list[ManifestRecord]:
        return [r for r in self.records if r.split == split]


def _record_seed(sha256: str, index: int) -> int:
    return int(sha256[:12], 16) * 1000 + index


def ingest(
    data_dir, out_dir, config: RunConfig, log=None
) -> Manifest:
    """Scan a directory of SDF files into a manifest with shape caches.

    Files are split train/val by content-hash order; every record gets a
    cached surface cloud and query set seeded from the file hash so repeated
    ingestion reproduces the manifest byte for byte.
    """
    data_dir = Path(data_dir)
    out_dir = Path(out_dir)
    if not data_dir.is_dir():
        raise DataError(f"data directory not found: {data_dir}")
    files = sorted(p for p in data_dir.iterdir() if p.suffix.lower() == ".sdf")
    if not files:
        raise DataError(f"no .sdf files in {data_dir}")
    cache_dir = out_dir / "cache"
    cache_dir.mkdir(parents=True, exist_ok=True)

    parsed: list[tuple[str, Path, list[Molecule]]] = []
    skipped: list[dict] = []
    for path in files:
        text = path.read_text(encoding="utf-8")
        digest = hashlib.sha256(text.encode()).hexdigest()
        try:
            molecules = parse_sdf(text)
            if not molecules:
                raise MoleculeError("file contains no records")
        except MoleculeError as err:
            skipped.append({"file": path.name, "reason": str(err)})
            continue
        parsed.append((digest, path, molecules))

    if not parsed:
        raise DataError(f"no parseable molecules in {data_dir}")

    # deterministic split: order by content hash, earliest fraction trains
    parsed.sort(key=lambda item: item[0])
    n_train = round(config.train_fraction * len(parsed))
    n_train = min(max(n_train, 1), len(parsed) - 1) if len(parsed) > 1 else 1

    records: list[ManifestRecord] = []
    volumes: list[float] = []
    counts: list[int] = []
    for file_rank, (digest, path, molecules) in enumerate(parsed):
        split = "train" if file_rank < n_train else "val"
        for index, mol in enumerate(molecules):
            rng = np.random.default_rng(_record_seed(digest, index))
            cloud, surface = build_surface_point_cloud(mol, config.shape_points, rng)
            queries = sample_query_points(surface, config.shape_queries, rng)
            record_id = f"{path.stem}#{index}"
            cache_name = f"{digest[:16]}_{index}.sdpc"
            save_shape_cache(
                cache_dir / cache_name, cloud.points, queries.queries,
                queries.distances, surface.shift,
            )
            volume = cloud.bbox_volume()
            records.append(
                ManifestRecord(
                    record_id=record_id, file=path.name, sha256=digest, index=index,
                    split=split, n_atoms=len(mol), volume=volume,
                    cache=f"cache/{cache_name}",
                )
            )
            if split == "train":
                volumes.append(volume)
                counts.append(len(mol))
            if log:
                log(f"ingested {record_id} ({split}, {len(mol)} atoms)")

    histogram = AtomCountHistogram.build(volumes, counts, config.volume_bins)
    manifest = Manifest(root=str(data_dir), records=records, histogram=histogram, skipped=skipped)
    manifest.save(out_dir / "manifest.json")
    return manifest


def _load_molecules(manifest: Manifest, record: ManifestRecord) -> Molecule:
    path = Path(manifest.root) / record.file
    molecules = parse_sdf(path.read_text(encoding="utf-8"))
    return molecules[record.index]


def shape_items(manifest: Manifest, out_dir, split: str) -> list[ShapeTrainItem]:
    items = []
    for record in manifest.split_records(split):
        cloud, queries, distances, _ = load_shape_cache(Path(out_dir) / record.cache)
        items.append(ShapeTrainItem(points=cloud, queries=queries, distances=distances))
    return items


def diffusion_items(
    manifest: Manifest, out_dir, split: str, shape_model, dtype=torch.float32
) -> list[DiffusionTrainItem]:
    """Molecules in the shape-centered frame with frozen embeddings attached."""
    items = []
    for record in manifest.split_records(split):
        cloud, _, _, shift = load_shape_cache(Path(out_dir) / record.cache)
        mol = _load_molecules(manifest, record)
        with torch.no_grad():
            embedding = shape_model.encode(cloud)
        bond_orders = {b.pair: int(b.order) for b in mol.bonds}
        items.append(
            DiffusionTrainItem(
                positions=mol.positions - shift,
                features=mol.features,
                bond_orders=bond_orders,
                embedding_H=embedding.H.to(dtype),
                embedding_inv=embedding.inv.to(dtype),
            )
        )
    return items
