import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from synthevo.chem import (
    CountFingerprint,
    TanimotoIndex,
    fingerprint_matrix,
    fold,
    morgan_count_fp,
    murcko_scaffold,
    parse_smiles,
    tanimoto,
    tanimoto_matrix,
)

SMILES = ["CCO", "CCN", "c1ccccc1", "Cc1ccccc1", "CC(=O)Nc1ccc(O)cc1", "C1CCNCC1", "OB(O)c1ccccc1"]


def brute_tanimoto(x, y):
    num = np.minimum(x, y).sum()
    den = np.maximum(x, y).sum()
    return 0.0 if den == 0 else num / den


def test_count_total_is_atoms_times_layers():
    m = parse_smiles("CC(=O)Nc1ccc(O)cc1")
    assert morgan_count_fp(m, 2, 2048).counts.sum() == 3 * m.n_atoms
    assert morgan_count_fp(m, 0, 2048).counts.sum() == m.n_atoms


def test_identical_molecules_score_one():
    a = morgan_count_fp(parse_smiles("OCC"))
    b = morgan_count_fp(parse_smiles("CCO"))
    assert a == b and tanimoto(a, b) == 1.0


def test_ethanol_vs_ethylamine():
    # the terminal methyl is the only environment the two share at radius 0
    a = morgan_count_fp(parse_smiles("CCO"))
    b = morgan_count_fp(parse_smiles("CCN"))
    assert tanimoto(a, b) == pytest.approx(brute_tanimoto(a.to_dense(), b.to_dense()))
    assert 0 < tanimoto(a, b) < 1


def test_hashing_is_stable():
    fp = morgan_count_fp(parse_smiles("c1ccccc1"), 2, 2048)
    # benzene: one environment per radius, six copies each
    assert list(fp.counts) == [6, 6, 6]
    assert fp == morgan_count_fp(parse_smiles("c1ccccc1"), 2, 2048)


def test_empty_and_mismatched():
    empty = CountFingerprint.from_dict(16, {})
    assert tanimoto(empty, empty) == 0.0
    with pytest.raises(ValueError):
        tanimoto(empty, CountFingerprint.from_dict(8, {}))
    with pytest.raises(ValueError):
        CountFingerprint.from_dict(4, {7: 1})


@pytest.mark.parametrize("smi", SMILES)
def test_fold_equals_direct_fingerprint(smi):
    m = parse_smiles(smi)
    assert fold(morgan_count_fp(m, 2, 2048), 512) == morgan_count_fp(m, 2, 512)
    with pytest.raises(ValueError):
        fold(morgan_count_fp(m, 2, 2048), 300)


def test_dict_round_trip():
    fp = morgan_count_fp(parse_smiles("CC(=O)O"))
    assert CountFingerprint.from_dict(fp.dim, fp.to_dict()) == fp
    assert hash(CountFingerprint.from_dict(fp.dim, fp.to_dict())) == hash(fp)


counts = arrays(np.int64, (6, 12), elements=st.integers(0, 4))


@settings(max_examples=50, deadline=None)
@given(counts, counts)
def test_matrix_matches_pairwise_definition(a, b):
    expected = np.array([[brute_tanimoto(x, y) for y in b] for x in a])
    np.testing.assert_allclose(tanimoto_matrix(a, b), expected, atol=1e-12)
    np.testing.assert_allclose(TanimotoIndex(b).query(a), expected, atol=1e-12)


@settings(max_examples=50, deadline=None)
@given(counts)
def test_similarity_properties(a):
    s = tanimoto_matrix(a, a)
    np.testing.assert_allclose(s, s.T)
    assert np.all((s >= 0) & (s <= 1))
    nonzero = a.sum(axis=1) > 0
    np.testing.assert_allclose(np.diag(s)[nonzero], 1.0)


def test_index_clips_large_query_counts():
    ref = np.array([[1, 0, 2], [0, 1, 0]])
    q = np.array([[9, 9, 9]])
    np.testing.assert_allclose(TanimotoIndex(ref).query(q), [[3 / 27, 1 / 27]])


def test_fractional_inputs_fall_back_to_direct_minima():
    a = np.array([[0.5, 1.0]])
    assert tanimoto_matrix(a, a)[0, 0] == pytest.approx(1.0)


def test_fingerprint_matrix_layout():
    fps = [morgan_count_fp(parse_smiles(s), 2, 64) for s in SMILES]
    X = fingerprint_matrix(fps)
    assert X.shape == (len(SMILES), 64)
    for row, fp in zip(X, fps):
        np.testing.assert_array_equal(row, fp.to_dense())


@pytest.mark.parametrize("smi,scaffold", [
    ("CCc1ccccc1", "c1ccccc1"),
    ("CCO", None),
    ("Cc1ccc(CC2CCNCC2)cc1", "c1ccc(CC2CCNCC2)cc1"),
    ("OC(=O)C1CCCC1", "C1CCCC1"),
    ("c1ccc(-c2ccccc2)cc1", "c1ccc(-c2ccccc2)cc1"),
])
def test_murcko_scaffold(smi, scaffold):
    got = murcko_scaffold(parse_smiles(smi))
    if scaffold is None:
        assert got is None
    else:
        assert got.key == parse_smiles(scaffold).key
