import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from synthevo.chem import Molecule, MoleculeError, SmilesError, molecular_weight, parse_smiles, write_smiles

CORPUS = [
    "C", "CCO", "CC(=O)O", "c1ccccc1", "c1ccncc1", "Cc1ccc(Br)cc1", "O=C(O)c1ccc(N)cc1",
    "C1CCNCC1", "c1ccc2ccccc2c1", "CC(C)(C)OC(=O)N1CCCC1", "[NH4+]", "C[N+](C)(C)C",
    "CC(=O)[O-]", "N#Cc1ccccc1", "c1cc[nH]c1", "C1CC2CCC1C2", "OB(O)c1ccccc1",
    "CS(=O)(=O)Cl", "C#CCO", "FC(F)(F)c1ccc(I)cc1", "c1ccc2[nH]ccc2c1", "O=C1CCCN1",
]


def test_atom_counts_and_hydrogens():
    m = parse_smiles("CC(=O)O")
    assert m.elements == ("C", "C", "O", "O")
    assert m.hcounts == (3, 0, 0, 1)
    assert m.formula() == {"C": 2, "H": 4, "O": 2}


def test_aromatic_pyrrole_hydrogen():
    m = parse_smiles("c1cc[nH]c1")
    assert all(m.aromatic)
    assert m.formula() == {"C": 4, "H": 5, "N": 1}


def test_charged_bracket_atoms():
    m = parse_smiles("C[N+](C)(C)C")
    assert m.charges[1] == 1 and m.hcounts[1] == 0


@pytest.mark.parametrize("bad", ["C1CC", "C(C", "CC)", "Xx", "C==C", "[C", "c1cccc1", "", "C.C"])
def test_malformed_input_raises(bad):
    with pytest.raises((SmilesError, MoleculeError)):
        parse_smiles(bad)


def test_hypervalent_carbon_rejected():
    with pytest.raises((SmilesError, MoleculeError)):
        parse_smiles("C(C)(C)(C)(C)C")


def test_error_reports_position():
    with pytest.raises(SmilesError) as info:
        parse_smiles("CC(C")
    assert "CC(C" in str(info.value)


@pytest.mark.parametrize("smi", CORPUS)
def test_written_smiles_reparses_to_same_graph(smi):
    m = parse_smiles(smi)
    text, _ = write_smiles(m)
    assert parse_smiles(text).key == m.key


@pytest.mark.parametrize("smi", CORPUS)
def test_key_is_a_fixed_point(smi):
    key = parse_smiles(smi).key
    assert parse_smiles(key).key == key


@pytest.mark.parametrize("a,b", [
    ("OCC", "CCO"), ("C(=O)(O)C", "CC(=O)O"), ("c1ccccc1C", "Cc1ccccc1"),
    ("Brc1ccc(C)cc1", "Cc1ccc(Br)cc1"), ("c1ccc2ccccc2c1", "c12ccccc1cccc2"),
])
def test_equivalent_spellings_share_a_key(a, b):
    assert parse_smiles(a).key == parse_smiles(b).key


@pytest.mark.parametrize("a,b", [("CCO", "COC"), ("Cc1ccccc1Br", "Cc1ccc(Br)cc1"), ("CC=O", "C=CO")])
def test_different_molecules_have_different_keys(a, b):
    assert parse_smiles(a).key != parse_smiles(b).key


@settings(max_examples=60, deadline=None)
@given(st.sampled_from(CORPUS), st.randoms(use_true_random=False))
def test_key_invariant_under_atom_relabelling(smi, rnd):
    m = parse_smiles(smi)
    order = list(range(m.n_atoms))
    rnd.shuffle(order)
    assert m.permute(order).key == m.key


def test_molecular_weight_of_water():
    assert molecular_weight(parse_smiles("O")) == pytest.approx(18.015, abs=0.01)


def test_molecule_equality_follows_key():
    assert parse_smiles("OCC") == parse_smiles("CCO")
    assert len({parse_smiles("OCC"), parse_smiles("CCO")}) == 1


def test_subgraph_caps_cut_bonds_with_hydrogen():
    m = parse_smiles("CCO")
    sub = m.subgraph([0, 1])
    assert sub.key == parse_smiles("CC").key


def test_direct_construction_validates():
    with pytest.raises(MoleculeError):
        Molecule(["C", "C"], [0, 0], [False, False], [3, 3], [])  # disconnected


def test_ring_perception():
    m = parse_smiles("CC1CCCC1")
    assert m.ring_atoms == frozenset(range(1, 6))
    assert not m.in_ring(0)
    np.testing.assert_equal(sorted(m.ring_bonds), sorted((i, j) for i, j, _ in m.bonds if i > 0))
