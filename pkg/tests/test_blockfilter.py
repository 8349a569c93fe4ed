import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from synthevo.blockfilter import (
    BlockClassifier,
    BlockFilter,
    ClassifierConfig,
    RouteDataset,
    _draw_block,
    auroc,
    average_precision,
    classifier_filter,
    containment,
    epsilon_sample,
    evaluate_classifier,
    generate_route_dataset,
    mine_neighbors,
    nam_top_k_filter,
    sim_filter,
    train_block_classifier,
)
from synthevo.chem import morgan_count_fp, parse_smiles, tanimoto_matrix
from synthevo.neural import DenseNet, NamModel
from synthevo.synthesis import Context, sample_route


@pytest.fixture(scope="module")
def dataset(index):
    return generate_route_dataset(300, np.random.default_rng(0), Context(index), heldout_fraction=0.2)


def test_epsilon_fallback_frequency():
    rng = np.random.default_rng(0)
    filt = BlockFilter(range(10), epsilon=0.1)
    space = list(range(100))
    flags = [epsilon_sample(space, filt, rng)[1] for _ in range(20_000)]
    assert np.mean(flags) == pytest.approx(0.1, abs=0.01)


def test_epsilon_extremes():
    rng = np.random.default_rng(1)
    space = list(range(50))
    never = BlockFilter([3, 7], epsilon=0.0)
    draws = [epsilon_sample(space, never, rng) for _ in range(2000)]
    assert all(not fb and b in (3, 7) for b, fb in draws)
    always = BlockFilter([3, 7], epsilon=1.0)
    draws = [epsilon_sample(space, always, rng) for _ in range(2000)]
    assert all(fb for _, fb in draws)
    assert len({b for b, _ in draws}) > 40


def test_empty_intersection_falls_back():
    rng = np.random.default_rng(2)
    filt = BlockFilter([99], epsilon=0.0)
    b, fb = epsilon_sample([1, 2, 3], filt, rng)
    assert fb and b in (1, 2, 3)
    with pytest.raises(ValueError):
        epsilon_sample([], filt, rng)
    with pytest.raises(ValueError):
        BlockFilter([1], epsilon=1.5)


def test_filter_as_sampler_restricts_routes(index):
    filt = BlockFilter(range(20), epsilon=0.0, tag="nam")
    ctx = Context(index, sampler=filt)
    rng = np.random.default_rng(3)
    for _ in range(30):
        t = sample_route(rng, ctx)
        # the starting block is drawn from the whole catalog, so it always meets the filter
        assert t.leaves()[0] in filt.ids


def test_containment_exact():
    q = np.array([2, 0, 1, 3])
    blocks = np.array([[1, 1, 0, 0], [2, 0, 1, 3], [0, 4, 0, 0], [0, 0, 0, 0]])
    np.testing.assert_array_equal(containment(q, blocks), [0.5, 1.0, 0.0, 0.0])


def test_sim_filter_threshold_is_strict(index):
    blocks = index.blocks
    q = morgan_count_fp(parse_smiles("CC(=O)Nc1ccc(Br)cc1"), 2, blocks.fp_dim)
    ratio = containment(q.to_dense(), blocks.fp_matrix())
    target = sorted(set(ratio[ratio > 0]))[len(set(ratio[ratio > 0])) // 2]
    at = sim_filter(q, blocks, threshold=target)
    assert at == {int(i) for i in np.flatnonzero(ratio > target)}
    assert not any(ratio[i] == target for i in at)
    assert sim_filter(q, blocks, threshold=np.nextafter(target, 0)) >= at | {int(np.flatnonzero(ratio == target)[0])}


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_neighbors_match_brute_force(seed):
    rng = np.random.default_rng(seed)
    fps = rng.integers(0, 3, size=(25, 10))
    fps[5] = fps[6] = fps[7]  # three identical rows
    got = mine_neighbors(fps, k=6)
    sim = tanimoto_matrix(fps, fps)
    for i in range(len(fps)):
        ranked = sorted((j for j in range(len(fps)) if j != i), key=lambda j: (-sim[i, j], j))
        assert list(got[i]) == ranked[:6]
    assert set(got[5][:2]) == {6, 7}


def test_nam_top_k_matches_sort():
    X = np.array([[3.0], [1.0], [3.0], [2.0], [0.0]])
    net = DenseNet((1, 1), zero=True)
    net.params[0][0, 0] = 1.0
    nam = NamModel(net)
    assert nam_top_k_filter(nam, X, k=2) == {0, 2}
    assert nam_top_k_filter(nam, X, k=3) == {0, 2, 3}
    assert nam_top_k_filter(nam, X, k=10) == set(range(5))


def test_classifier_filter_thresholds(index):
    cfg = ClassifierConfig(hidden=(8,), fp_dim=256)
    model = BlockClassifier.init(cfg, np.random.default_rng(0))
    q = morgan_count_fp(parse_smiles("CC(=O)Nc1ccc(Br)cc1"), 2, 2048)
    assert classifier_filter(model, q, index.blocks, mu=1.0) == set()
    assert classifier_filter(model, q, index.blocks, mu=0.0) == set(range(len(index.blocks)))
    sizes = [len(classifier_filter(model, q, index.blocks, mu=m)) for m in np.linspace(0, 1, 11)]
    assert sizes == sorted(sizes, reverse=True)


def test_metrics_on_hand_cases():
    labels = np.array([1, 0, 1, 0], dtype=bool)
    assert auroc(np.array([0.9, 0.1, 0.8, 0.2]), labels) == 1.0
    assert auroc(np.array([0.1, 0.9, 0.2, 0.8]), labels) == 0.0
    assert auroc(np.zeros(4), labels) == 0.5
    assert average_precision(np.array([0.9, 0.1, 0.8, 0.2]), labels) == 1.0
    # ranking: pos, neg, pos -> (1/2)(1) + (1/2)(2/3)
    assert average_precision(np.array([3.0, 2.0, 1.0]), np.array([1, 0, 1], bool)) == pytest.approx(5 / 6)
    with pytest.raises(ValueError):
        auroc(np.zeros(2), np.ones(2, bool))


def test_dataset_shape(dataset, index):
    assert len(dataset) == 300 and len(dataset.heldout) == 60
    assert all(1 <= len(b) <= 6 for b in dataset.blocks)
    assert all(0 <= i < len(index.blocks) for b in dataset.blocks for i in b)
    assert set(dataset.train).isdisjoint(dataset.heldout)


def test_dataset_round_trip(dataset, tmp_path):
    path = tmp_path / "ds.jsonl"
    dataset.save(path)
    again = RouteDataset.load(path)
    assert again.keys == dataset.keys and again.blocks == dataset.blocks
    assert again.heldout == dataset.heldout
    with pytest.raises(ValueError):
        RouteDataset(["C", "C"], [(0,), (1,)])


def test_hard_negatives_avoid_positives(index):
    rng = np.random.default_rng(0)
    neighbors = mine_neighbors(index.blocks.fp_matrix()[:40], k=10)
    positives = (0, 1, 2)
    for _ in range(500):
        b = _draw_block(positives, set(positives), False, 40, neighbors, 1.0, rng)
        assert b not in positives
    assert _draw_block(positives, set(positives), True, 40, neighbors, 1.0, rng) in positives


def test_untrained_constant_model_is_chance(dataset, index):
    net = DenseNet((3 * 256, 4, 1), zero=True)
    roc, _, n = evaluate_classifier(BlockClassifier(net, 256), dataset, index.blocks)
    assert n > 0 and roc == 0.5


def test_training_reduces_loss(dataset, index):
    cfg = ClassifierConfig(hidden=(32,), fp_dim=256, steps=300, lr=2e-3, hard_negatives=True, n_neighbors=20)
    model, report = train_block_classifier(dataset, index.blocks, cfg)
    assert np.mean(report.losses[-50:]) < np.mean(report.losses[:50])
    assert report.auroc > 0.7


def test_classifier_save_load(tmp_path, index):
    model = BlockClassifier.init(ClassifierConfig(hidden=(4,), fp_dim=64), np.random.default_rng(0))
    path = tmp_path / "clf.npz"
    model.save(path)
    again = BlockClassifier.load(path)
    q = np.ones(64)
    B = np.eye(64)[:5]
    np.testing.assert_array_equal(again.logits(q, B), model.logits(q, B))
