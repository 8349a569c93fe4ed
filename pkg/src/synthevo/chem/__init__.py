"""Self-contained molecule graph toolkit: SMILES/SMARTS, rewrites, fingerprints."""

from .fingerprint import (
    CountFingerprint,
    TanimotoIndex,
    fingerprint_matrix,
    fold,
    morgan_count_fp,
    tanimoto,
    tanimoto_matrix,
)
from .molecule import Molecule, MoleculeError, molecular_weight
from .reaction import ReactionError, ReactionTemplate, apply_reaction, load_templates, parse_reaction
from .scaffold import murcko_scaffold
from .smarts import Pattern, SmartsError, match_pattern, parse_smarts
from .smiles import SmilesError, parse_smiles, write_smiles


def canonical_key(mol: Molecule) -> str:
    return mol.key


__all__ = [
    "CountFingerprint", "Molecule", "MoleculeError", "Pattern", "ReactionError",
    "ReactionTemplate", "SmartsError", "SmilesError", "TanimotoIndex", "apply_reaction", "canonical_key",
    "fingerprint_matrix", "fold", "load_templates", "match_pattern", "molecular_weight",
    "morgan_count_fp", "murcko_scaffold", "parse_reaction", "parse_smarts", "parse_smiles",
    "tanimoto", "tanimoto_matrix", "write_smiles",
]
