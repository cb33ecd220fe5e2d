import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pase.data import Dataset, find_duplicates, gen_blobs
from pase.errors import ConfigurationError, InputError
from pase.nn import TrainConfig, evaluate, forward, init_mlp
from pase.rng import SplitMix64
from pase.switch import (SwitchEnsemble, SwitchIndex, assign_folds, load_ensemble, nearest, pase_predict,
                         read_matrix, save_ensemble, select_model, train_pase, write_matrix)

from conftest import make_dataset
from oracles import naive_nearest

FAST = TrainConfig(epochs=15, batch_size=8, learning_rate=0.05)


def random_index_case(seed, integer=False):
    rng = SplitMix64(seed)
    n = 1 + int(rng.below([80])[0])
    d = 1 + int(rng.below([16])[0])
    if integer:
        x = rng.below([4] * (n * d)).reshape(n, d).astype(float)
    else:
        x = rng.normal(n * d).reshape(n, d) * 10
    ids = rng.shuffle(np.arange(1000, 1000 + n, dtype=np.uint64))
    return x, ids, rng


# -- folds ----------------------------------------------------------------

def test_folds_balanced():
    d = gen_blobs(2, 5, 3, 1.0, 0)
    f = assign_folds(d, 5, seed=1)
    assert f.sizes() == [2] * 5 and set(f.fold_of) == set(range(10))


def test_folds_keep_duplicates_together():
    d = gen_blobs(2, 5, 3, 1.0, 0)
    x = d.features.copy()
    x[5] = x[0]
    d = make_dataset(x, d.labels, 2)
    for seed in range(20):
        f = assign_folds(d, 3, seed)
        assert f.fold_of[0] == f.fold_of[5]


def test_four_folds_train_on_three_quarters():
    d = gen_blobs(2, 20, 2, 1.0, 0)
    ens = train_pase(d, assign_folds(d, 4, 0), TrainConfig(epochs=1))
    assert len(ens.models) == 4
    assert all(len(t) == 30 for t in ens.trained_ids)


def test_too_many_folds():
    d = gen_blobs(2, 3, 2, 0.0, 0)  # two distinct feature vectors
    with pytest.raises(ConfigurationError):
        assign_folds(d, 3, 0)
    with pytest.raises(ConfigurationError):
        assign_folds(gen_blobs(2, 3, 2, 1.0, 0), 1, 0)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.integers(0, 15), min_size=4, max_size=60), st.integers(2, 4), st.integers(0, 2**32))
def test_fold_invariants_with_duplicates(values, k, seed):
    x = np.asarray(values, dtype=float)[:, None]
    d = make_dataset(x, [0] * len(values), 1)
    dups = find_duplicates(d)
    if k > dups.group_count:
        return
    f = assign_folds(d, k, seed, dups)
    largest = max(len(g) for g in dups.groups().values())
    sizes = f.sizes()
    assert min(sizes) > 0 and max(sizes) - min(sizes) <= largest
    for members in dups.groups().values():
        assert len({f.fold_of[m] for m in members}) == 1


# -- index ----------------------------------------------------------------

def test_nearest_self_match():
    x, ids, _ = random_index_case(1)
    x = np.vstack([x, np.arange(x.shape[1])])
    ids = np.arange(len(x), dtype=np.uint64)
    index = SwitchIndex(x, ids)
    assert nearest(index, x[-1]) == (len(x) - 1, 0.0)
    assert nearest(index, x[0]) == (0, 0.0)


def test_nearest_tie_goes_to_lowest_id():
    x = np.array([[1.0, 0.0], [0.0, 5.0], [-1.0, 0.0]])
    index = SwitchIndex(x, np.array([9, 4, 3], dtype=np.uint64))
    assert nearest(index, [0.0, 0.0]) == (3, 1.0)


@pytest.mark.parametrize("integer", [False, True])
def test_nearest_matches_naive_scan(integer):
    for seed in range(10):
        x, ids, rng = random_index_case(seed, integer)
        index = SwitchIndex(x, ids)
        for _ in range(20):
            if integer:
                q = rng.below([4] * x.shape[1]).astype(float)
            else:
                q = rng.normal(x.shape[1]) * 10
            assert nearest(index, q) == naive_nearest(x, ids.tolist(), q.tolist())


def test_batch_search_equals_single():
    x, ids, rng = random_index_case(3)
    index = SwitchIndex(x, ids, chunk_size=7)
    q = rng.normal(30 * x.shape[1]).reshape(30, x.shape[1]) * 10
    bid, bd = index.search(q)
    for i in range(30):
        assert (int(bid[i]), float(bd[i])) == nearest(index, q[i])


def test_large_offset_cancellation_still_exact():
    # norms ~1e12 make the expanded formula lose all precision; refinement must recover it
    x = 1e6 + np.array([[0.0, 0.0], [0.5, 0.0], [0.0, 0.25]])
    index = SwitchIndex(x, np.arange(3, dtype=np.uint64))
    assert nearest(index, 1e6 + np.array([0.3, 0.0])) == naive_nearest(x, [0, 1, 2], (1e6 + np.array([0.3, 0.0])).tolist())


def test_nearest_dim_mismatch():
    index = SwitchIndex(np.zeros((2, 3)), np.arange(2))
    with pytest.raises(InputError):
        nearest(index, np.zeros(4))


# -- ensemble ---------------------------------------------------------------

@pytest.fixture(scope="module")
def small_ensemble():
    d = gen_blobs(3, 30, 4, 1.0, seed=2)
    return train_pase(d, assign_folds(d, 3, seed=5), FAST, hidden=(16,))


def test_models_trained_on_complement_of_fold(small_ensemble):
    ens = small_ensemble
    all_ids = set(ens.train_ref.ids.tolist())
    for j in range(ens.k):
        fold = set(ens.folds.members(j).tolist())
        assert set(ens.trained_ids[j].tolist()) == all_ids - fold


def test_select_model_on_training_point(small_ensemble):
    ens = small_ensemble
    for row, sid in zip(ens.train_ref.features, ens.train_ref.ids.tolist()):
        j = select_model(ens, row)
        assert j == ens.folds.fold_of[sid]
        assert sid not in set(ens.trained_ids[j].tolist())


def test_select_model_range_and_region_coherence(small_ensemble):
    ens = small_ensemble
    rng = SplitMix64(0)
    q = rng.normal(200 * 4).reshape(200, 4) * 2
    near, _ = ens.index.search(q)
    chosen = [select_model(ens, v) for v in q]
    assert all(0 <= j < ens.k for j in chosen)
    by_nn = {}
    for sid, j in zip(near.tolist(), chosen):
        assert by_nn.setdefault(sid, j) == j
    assert np.array_equal(ens.select_batch(q), chosen)


def test_pase_predict_matches_switched_model(small_ensemble):
    ens = small_ensemble
    q = SplitMix64(1).normal(10 * 4).reshape(10, 4)
    batch = ens.predict_proba(q)
    for i, v in enumerate(q):
        p = pase_predict(ens, v)
        assert np.array_equal(p, forward(ens.models[select_model(ens, v)], v))
        np.testing.assert_allclose(batch[i], p, rtol=1e-12)
        assert abs(p.sum() - 1) < 1e-9


def test_degenerate_ensemble_equals_single_model():
    d = gen_blobs(2, 10, 3, 1.0, 0)
    m = init_mlp([3, 5, 2], 4)
    folds = assign_folds(d, 2, 0)
    ens = SwitchEnsemble([m, m.copy()], folds, SwitchIndex.build(d), d)
    for v in SwitchIndex.build(d).features[:5] + 0.1:
        assert np.array_equal(pase_predict(ens, v), forward(m, v))


def test_k2_models_fit_their_subsets(blobs2):
    ens = train_pase(blobs2, assign_folds(blobs2, 2, 0), TrainConfig(epochs=30, batch_size=8), hidden=(8,))
    for j, m in enumerate(ens.models):
        assert evaluate(m, blobs2.select_ids(ens.trained_ids[j])) >= 0.95


def test_per_model_seeds_differ(small_ensemble):
    a, b = small_ensemble.models[:2]
    assert not np.array_equal(a.weights[0], b.weights[0])


def test_train_pase_rejects_mismatched_folds():
    d = gen_blobs(2, 10, 2, 1.0, 0)
    f = assign_folds(d.take(range(10)), 2, 0)
    with pytest.raises(InputError):
        train_pase(d, f, FAST)


def test_ensemble_persistence_round_trip(small_ensemble, tmp_path):
    save_ensemble(small_ensemble, tmp_path / "ens")
    back = load_ensemble(tmp_path / "ens")
    assert back.k == small_ensemble.k and back.folds.fold_of == small_ensemble.folds.fold_of
    assert np.array_equal(back.train_ref.features, small_ensemble.train_ref.features)
    q = SplitMix64(2).normal(40).reshape(10, 4)
    assert np.array_equal(back.predict_proba(q), small_ensemble.predict_proba(q))
    for a, b in zip(back.trained_ids, small_ensemble.trained_ids):
        assert np.array_equal(a, b)


def test_matrix_file_header(tmp_path):
    a = SplitMix64(0).normal(12).reshape(3, 4)
    write_matrix(a, tmp_path / "m")
    raw = (tmp_path / "m").read_bytes()
    assert raw[:4] == b"F64M" and len(raw) == 20 + 12 * 8
    assert np.array_equal(read_matrix(tmp_path / "m"), a)
