"""Per-condition desirable-rate scoring, novelty index, and report assembly."""
from __future__ import annotations

from dataclasses import dataclass

from ..chem.mol import Molecule, MoleculeError
from .fingerprints import canonical_graph_hash, graph_similarity
from .quality import geometry_divergences, geometry_stats, intersecting_ring_count, stability
from .shapesim import shape_similarity

SIM_S_THRESHOLD = 0.8

NOVELTY_INDEX_HEADER = "SDNX v1"


class NoveltyIndex:
    """Sorted canonical-graph-hash set for membership checks."""

    def __init__(self, hashes: set[int] | None = None):
        self.hashes = set(hashes or ())

    @classmethod
    def from_corpus(cls, corpus: list[Molecule]) -> "NoveltyIndex":
        return cls({canonical_graph_hash(m) for m in corpus})

    def __contains__(self, m: Molecule) -> bool:
        return canonical_graph_hash(m) in self.hashes

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as handle:
            handle.write(NOVELTY_INDEX_HEADER + "\n")
            for h in sorted(self.hashes):
                handle.write(f"{h:016x}\n")

    @classmethod
    def load(cls, path) -> "NoveltyIndex":
        with open(path, encoding="utf-8") as handle:
            header = handle.readline().strip()
            if header != NOVELTY_INDEX_HEADER:
                raise MoleculeError(f"{path}: bad novelty index header {header!r}")
            return cls({int(line, 16) for line in handle if line.strip()})


@dataclass
class ConditionReport:
    n_generated: int
    desirable_pct: float
    diversity: float | None           # None marks "undefined" (fewer than 2 desirable)
    novelty: float | None
    mean_shape_similarity: float
    mean_graph_similarity: float
    atom_stability: float
    molecule_stability: float

    def as_dict(self) -> dict:
        return {
            "n_generated": self.n_generated,
            "desirable_pct": self.desirable_pct,
            "diversity": self.diversity,
            "novelty": self.novelty,
            "mean_shape_similarity": self.mean_shape_similarity,
            "mean_graph_similarity": self.mean_graph_similarity,
            "atom_stability": self.atom_stability,
            "molecule_stability": self.molecule_stability,
        }


def desirable_rate(
    generated: list[Molecule],
    condition: Molecule,
    delta_g: float,
    index: NoveltyIndex | None = None,
    sim_s_threshold: float = SIM_S_THRESHOLD,
) -> ConditionReport:
    """Desirable percentage (Sim_s above threshold, Sim_g within delta_g),
    with diversity over the desirable subset and novelty against an index."""
    if not generated:
        raise MoleculeError("empty generated set")
    sims_s = [shape_similarity(g, condition) for g in generated]
    sims_g = [graph_similarity(g, condition) for g in generated]
    desirable = [
        g for g, ss, sg in zip(generated, sims_s, sims_g)
        if ss > sim_s_threshold and sg <= delta_g
    ]
    diversity = None
    if len(desirable) >= 2:
        pair_sims = [
            graph_similarity(desirable[i], desirable[j])
            for i in range(len(desirable))
            for j in range(i + 1, len(desirable))
        ]
        diversity = 1.0 - sum(pair_sims) / len(pair_sims)
    novelty = None
    if index is not None and desirable:
        novelty = sum(1 for g in desirable if g not in index) / len(desirable)
    stabilities = [stability(g) for g in generated]
    return ConditionReport(
        n_generated=len(generated),
        desirable_pct=100.0 * len(desirable) / len(generated),
        diversity=diversity,
        novelty=novelty,
        mean_shape_similarity=sum(sims_s) / len(sims_s),
        mean_graph_similarity=sum(sims_g) / len(sims_g),
        atom_stability=sum(s[0] for s in stabilities) / len(stabilities),
        molecule_stability=sum(1.0 for s in stabilities if s[1]) / len(stabilities),
    )


def full_report(
    condition_sets: list[tuple[Molecule, list[Molecule]]],
    delta_g: float,
    reference_corpus: list[Molecule] | None = None,
    index: NoveltyIndex | None = None,
) -> dict:
    """Aggregate metrics across condition/generated-set pairs."""
    per_condition = []
    all_generated: list[Molecule] = []
    for condition, generated in condition_sets:
        report = desirable_rate(generated, condition, delta_g, index)
        per_condition.append({"condition": condition.name, **report.as_dict()})
        all_generated.extend(generated)

    def _mean(key):
        vals = [row[key] for row in per_condition if row[key] is not None]
        return sum(vals) / len(vals) if vals else None

    out = {
        "delta_g": delta_g,
        "per_condition": per_condition,
        "summary": {
            key: _mean(key)
            for key in (
                "desirable_pct", "diversity", "novelty", "mean_shape_similarity",
                "mean_graph_similarity", "atom_stability", "molecule_stability",
            )
        },
    }
    if reference_corpus:
        gen_stats = geometry_stats(all_generated)
        ref_stats = geometry_stats(reference_corpus)
        out["geometry_js"] = geometry_divergences(gen_stats, ref_stats)
        out["intersecting_top10_rings"] = intersecting_ring_count(gen_stats, ref_stats)
    return out


def format_report_table(report: dict) -> str:
    """Plain-text rendering of a full_report dict."""
    lines = []
    summary = report["summary"]
    lines.append(f"{'metric':<28}{'value':>12}")
    lines.append("-" * 40)
    for key, value in summary.items():
        shown = "undefined" if value is None else f"{value:.4f}"
        lines.append(f"{key:<28}{shown:>12}")
    if "geometry_js" in report:
        lines.append("-" * 40)
        for key, value in report["geometry_js"].items():
            lines.append(f"js/{key:<25}{value:>12.4f}")
        lines.append(f"{'intersecting_top10_rings':<28}{report['intersecting_top10_rings']:>12d}")
    return "\n".join(lines) + "\n"
