import numpy as np
import pytest

from synthevo.chem import SmartsError, match_pattern, parse_smarts, parse_smiles

from helpers import brute_force, ring_atoms

PATTERNS = [
    "C", "[#7]", "C=O", "[C;H1]=O", "[OH]", "c:c", "[N;H2,H1&R;+0]", "[c][Br,I]", "C(=O)[OH]",
    "[!#6]", "[R]", "[R0;C]", "[D3]", "[a]~[A]", "CC", "c1ccccc1", "[N+]", "[O-]", "C#N",
    "[C,c]O", "[#6][#7][#6]", "[!C;!c]", "*~*~*", "[CH3]", "S(=O)(=O)",
]

MOLECULES = [
    "CCO", "CC(=O)O", "c1ccccc1Br", "NCc1ccccc1", "C1CCNCC1", "CC(C)(C)OC(=O)N", "O=Cc1ccco1",
    "C[N+](C)(C)C", "CC(=O)[O-]", "N#CCC", "OB(O)c1ccc(I)cc1", "CS(=O)(=O)Cl", "C#Cc1ccccc1",
    "c1ccc2[nH]ccc2c1", "CC1CCCC1N", "OCCN", "Ic1ccncc1", "CNC(=O)C", "C=CCBr", "CCCCCCCCCCCC",
]


@pytest.mark.parametrize("smarts", PATTERNS)
def test_matches_agree_with_exhaustive_mapping(smarts):
    pat = parse_smarts(smarts)
    for smi in MOLECULES:
        mol = parse_smiles(smi)
        assert match_pattern(pat, mol) == brute_force(pat, mol), (smarts, smi)


def test_ring_membership_agrees_with_graph_bridges():
    for smi in MOLECULES:
        mol = parse_smiles(smi)
        assert set(mol.ring_atoms) == ring_atoms(mol)


def test_limit_stops_early():
    pat = parse_smarts("[#6]")
    mol = parse_smiles("CCCCCC")
    assert len(match_pattern(pat, mol)) == 6
    assert match_pattern(pat, mol, limit=2) == match_pattern(pat, mol)[:2]


def test_map_numbers():
    pat = parse_smarts("[C:1](=O)[N:2]")
    assert pat.map_numbers() == {1: 0, 2: 2}


def test_precedence_of_and_or():
    # "&" binds tighter than ",", which binds tighter than ";"
    pat = parse_smarts("[N;H2,H1&R]")
    assert match_pattern(pat, parse_smiles("CN"))          # primary amine: H2
    assert match_pattern(pat, parse_smiles("C1CCNCC1"))    # ring NH
    assert not match_pattern(pat, parse_smiles("CNC"))     # acyclic NH


@pytest.mark.parametrize("bad", ["[C", "C(", "[Xx]", "C1CC", "[R2]", "[#999]", "C=", ""])
def test_malformed_patterns_raise(bad):
    with pytest.raises(SmartsError):
        parse_smarts(bad)


def test_no_match_when_pattern_is_larger():
    assert match_pattern(parse_smarts("CCCC"), parse_smiles("CC")) == []


def test_results_are_injective():
    pat = parse_smarts("*~*~*")
    for mapping in match_pattern(pat, parse_smiles("c1ccccc1")):
        assert len(set(mapping)) == 3
    assert len(match_pattern(pat, parse_smiles("c1ccccc1"))) == 12
    np.testing.assert_equal(len(match_pattern(parse_smarts("C~C"), parse_smiles("CC"))), 2)
