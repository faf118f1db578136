from .graph import assign_bonds, center_positions, centroid, cyclic_edges, knn_edges, rings
from .mol import (
    AROMATIC_ELEMENTS,
    FEATURE_CLASSES,
    NUM_ATOM_CLASSES,
    NUM_BOND_CLASSES,
    PLAIN_ELEMENTS,
    Atom,
    Bond,
    BondOrder,
    Molecule,
    MoleculeError,
    UnsupportedElementError,
    feature_class,
    feature_index,
)
from .sdf import SdfParseError, parse_sdf, read_sdf, serialize_molecule, write_sdf
from .tables import (
    TABLE_HEADER,
    VDW_RADII,
    BondLengthTable,
    ValencyTable,
    default_bond_lengths,
    default_valencies,
    round_half_up,
)

__all__ = [
    "AROMATIC_ELEMENTS", "FEATURE_CLASSES", "NUM_ATOM_CLASSES", "NUM_BOND_CLASSES",
    "PLAIN_ELEMENTS", "Atom", "Bond", "BondOrder", "Molecule", "MoleculeError",
    "UnsupportedElementError", "feature_class", "feature_index",
    "assign_bonds", "center_positions", "centroid", "cyclic_edges", "knn_edges", "rings",
    "SdfParseError", "parse_sdf", "read_sdf", "serialize_molecule", "write_sdf",
    "TABLE_HEADER", "VDW_RADII", "BondLengthTable", "ValencyTable",
    "default_bond_lengths", "default_valencies", "round_half_up",
]
