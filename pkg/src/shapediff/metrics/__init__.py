from .fingerprints import (
    FP_BITS,
    FP_RADIUS,
    canonical_graph_hash,
    fingerprint_bits,
    fingerprint_identifiers,
    graph_similarity,
    mix64,
)
from .quality import (
    GeometryHistograms,
    geometry_divergences,
    geometry_stats,
    intersecting_ring_count,
    js_divergence,
    ring_key,
    stability,
)
from .report import (
    ConditionReport,
    NoveltyIndex,
    desirable_rate,
    format_report_table,
    full_report,
)
from .shapesim import overlap_volume, shape_similarity

__all__ = [
    "FP_BITS", "FP_RADIUS", "canonical_graph_hash", "fingerprint_bits",
    "fingerprint_identifiers", "graph_similarity", "mix64",
    "GeometryHistograms", "geometry_divergences", "geometry_stats",
    "intersecting_ring_count", "js_divergence", "ring_key", "stability",
    "ConditionReport", "NoveltyIndex", "desirable_rate", "format_report_table",
    "full_report", "overlap_volume", "shape_similarity",
]
