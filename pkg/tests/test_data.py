import os

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from omicsurv.data import (DatasetError, OmicsLayer, SurvivalLabels, concat_selected,
                           load_dataset, variance_topk, write_dataset, zscore_apply, zscore_fit)

from helpers import make_dataset


def _write(path, header, rows):
    with open(path, "w") as fh:
        fh.write("\t".join(header) + "\n")
        for row in rows:
            fh.write("\t".join(str(c) for c in row) + "\n")


@pytest.fixture
def dataset_dir(tmp_path):
    _write(tmp_path / "gex.tsv", ["sample_id", "g1", "g2", "g3", "g4"],
           [["s2", 1, 2, 3, 4], ["s1", 5, 6, 7, 8], ["s3", 0, 0, 1, 1]])
    _write(tmp_path / "cnv.tsv", ["sample_id", "c1", "c2"],
           [["s1", 0.5, 1], ["s2", 2, -1], ["s3", 3, 3]])
    _write(tmp_path / "survival.tsv", ["sample_id", "time", "event"],
           [["s1", 10, 1], ["s2", 20, 0], ["s3", 5, 1]])
    return tmp_path


class TestLoadDataset:
    def test_shapes_and_order(self, dataset_dir):
        ds = load_dataset(str(dataset_dir))
        assert ds.n_samples == 3
        assert ds.layer_names == ["cnv", "gex"]
        assert ds.layer("gex").n_features == 4
        assert ds.layer("cnv").n_features == 2
        assert ds.sample_ids == ("s1", "s2", "s3")
        np.testing.assert_array_equal(ds.layer("gex").values[0], [5, 6, 7, 8])
        np.testing.assert_array_equal(ds.survival.time, [10, 20, 5])
        np.testing.assert_array_equal(ds.survival.event, [True, False, True])

    def test_missing_survival(self, dataset_dir):
        os.remove(dataset_dir / "survival.tsv")
        with pytest.raises(DatasetError, match="missing survival file"):
            load_dataset(str(dataset_dir))

    def test_intersection(self, dataset_dir):
        _write(dataset_dir / "cnv.tsv", ["sample_id", "c1"], [["s1", 1], ["s3", 2], ["s9", 0]])
        ds = load_dataset(str(dataset_dir))
        assert ds.sample_ids == ("s1", "s3")

    def test_empty_intersection(self, dataset_dir):
        _write(dataset_dir / "cnv.tsv", ["sample_id", "c1"], [["x1", 1]])
        with pytest.raises(DatasetError, match="empty sample intersection"):
            load_dataset(str(dataset_dir))

    def test_non_numeric(self, dataset_dir):
        _write(dataset_dir / "cnv.tsv", ["sample_id", "c1"], [["s1", "abc"], ["s2", 1], ["s3", 2]])
        with pytest.raises(DatasetError, match="non-numeric"):
            load_dataset(str(dataset_dir))

    def test_duplicate_sample(self, dataset_dir):
        _write(dataset_dir / "cnv.tsv", ["sample_id", "c1"], [["s1", 1], ["s1", 2], ["s3", 2]])
        with pytest.raises(DatasetError, match="duplicate sample id"):
            load_dataset(str(dataset_dir))

    def test_missing_value_rejected(self, dataset_dir):
        _write(dataset_dir / "cnv.tsv", ["sample_id", "c1"], [["s1", ""], ["s2", 1], ["s3", 2]])
        with pytest.raises(DatasetError):
            load_dataset(str(dataset_dir))

    def test_write_round_trip(self, dataset_dir, tmp_path_factory):
        ds = load_dataset(str(dataset_dir))
        out = tmp_path_factory.mktemp("copy")
        write_dataset(ds, str(out))
        again = load_dataset(str(out))
        assert again.sample_ids == ds.sample_ids
        for a, b in zip(ds.layers, again.layers):
            assert a.feature_names == b.feature_names
            np.testing.assert_array_equal(a.values, b.values)
        np.testing.assert_array_equal(again.survival.time, ds.survival.time)


class TestContainers:
    def test_negative_time_rejected(self):
        with pytest.raises(DatasetError):
            SurvivalLabels([1.0, -1.0], [1, 0])

    def test_duplicate_feature_names_rejected(self):
        with pytest.raises(DatasetError, match="duplicate"):
            OmicsLayer("x", ("a", "a"), np.zeros((2, 2)))

    def test_nonfinite_rejected(self):
        with pytest.raises(DatasetError):
            OmicsLayer("x", ("a",), np.array([[np.nan]]))


class TestVarianceTopk:
    def test_hand_example(self):
        x = np.array([[1.0, 0.0], [2.0, 0.0], [3.0, 0.0]])
        np.testing.assert_array_equal(variance_topk(x, 1), [0])

    def test_k_exceeds_width(self):
        x = np.random.default_rng(0).normal(size=(5, 3))
        np.testing.assert_array_equal(variance_topk(x, 10), [0, 1, 2])

    def test_tie_goes_to_lower_index(self):
        x = np.array([[1.0, 1.0, 0.0], [-1.0, -1.0, 0.0]])
        np.testing.assert_array_equal(variance_topk(x, 1), [0])

    def test_empty_layer(self):
        assert variance_topk(np.zeros((4, 0)), 3).size == 0

    def test_bad_k(self):
        with pytest.raises(ValueError):
            variance_topk(np.zeros((2, 2)), 0)

    @settings(max_examples=40, deadline=None)
    @given(arrays(np.float64, st.tuples(st.integers(2, 8), st.integers(1, 8)),
                  elements=st.floats(-100, 100)),
           st.integers(1, 10), st.randoms(use_true_random=False))
    def test_row_permutation_invariant(self, x, k, rnd):
        perm = list(range(x.shape[0]))
        rnd.shuffle(perm)
        a = variance_topk(x, k)
        b = variance_topk(x[perm], k)
        # row permutation can perturb the last bits of the variance, so compare via the variances
        var = x.var(axis=0)
        assert len(a) == len(b) == min(k, x.shape[1])
        np.testing.assert_allclose(np.sort(var[a]), np.sort(var[b]), rtol=1e-9, atol=1e-9)


class TestConcatSelected:
    def test_refs_round_trip(self):
        rng = np.random.default_rng(1)
        ds = make_dataset({"a": rng.normal(size=(4, 3)), "b": rng.normal(size=(4, 5))},
                          [1, 2, 3, 4], [1, 1, 0, 1])
        x, refs = concat_selected(ds, [np.array([2, 0]), np.array([4, 1])])
        assert x.shape == (4, 4)
        assert [(r.layer_name, r.feature_name) for r in refs] == [
            ("a", "a_0"), ("a", "a_2"), ("b", "b_1"), ("b", "b_4")]
        for r in refs:
            layer = ds.layer(r.layer_name)
            j = layer.feature_names.index(r.feature_name)
            np.testing.assert_array_equal(x[:, r.global_index], layer.values[:, j])

    def test_empty_selection_for_one_layer(self):
        ds = make_dataset({"a": np.ones((3, 2)), "b": np.zeros((3, 4))}, [1, 2, 3], [1, 0, 1])
        x, refs = concat_selected(ds, [np.array([], dtype=int), np.array([0, 1])])
        assert x.shape == (3, 2)
        assert all(r.layer_name == "b" for r in refs)

    def test_out_of_range(self):
        ds = make_dataset({"a": np.ones((3, 2))}, [1, 2, 3], [1, 0, 1])
        with pytest.raises(IndexError):
            concat_selected(ds, [np.array([2])])

    @settings(max_examples=30, deadline=None)
    @given(st.lists(st.integers(0, 12), min_size=1, max_size=5), st.integers(1, 15))
    def test_width_is_sum_of_min(self, widths, k):
        rng = np.random.default_rng(0)
        ds = make_dataset({f"l{i}": rng.normal(size=(3, w)) for i, w in enumerate(widths)},
                          [1, 2, 3], [1, 1, 1])
        x, refs = concat_selected(ds, [variance_topk(l, k) for l in ds.layers])
        assert x.shape[1] == len(refs) == sum(min(k, w) for w in widths)


class TestZscore:
    def test_hand_values(self):
        s = zscore_fit(np.array([[0.0], [2.0]]))
        np.testing.assert_allclose(s.mean, [1.0])
        np.testing.assert_allclose(s.std, [1.0])
        np.testing.assert_allclose(zscore_apply(s, np.array([[4.0]])), [[3.0]])

    def test_constant_column_clamped(self):
        s = zscore_fit(np.array([[5.0], [5.0], [5.0]]))
        assert s.std[0] == 1.0
        np.testing.assert_array_equal(zscore_apply(s, np.array([[5.0]])), [[0.0]])

    def test_columns_independent(self):
        x = np.array([[0.0, 10.0], [2.0, 30.0]])
        s = zscore_fit(x)
        np.testing.assert_allclose(s.mean, [1.0, 20.0])
        np.testing.assert_allclose(s.std, [1.0, 10.0])

    def test_far_test_row(self):
        s = zscore_fit(np.array([[0.0], [2.0]]))
        np.testing.assert_allclose(zscore_apply(s, np.array([[1e6]])), [[1e6 - 1]])

    def test_errors(self):
        with pytest.raises(ValueError):
            zscore_fit(np.zeros((1, 3)))
        with pytest.raises(ValueError, match="width mismatch"):
            zscore_apply(zscore_fit(np.eye(3)), np.zeros((1, 2)))

    @settings(max_examples=40, deadline=None)
    @given(arrays(np.float64, st.tuples(st.integers(2, 10), st.integers(1, 5)),
                  elements=st.floats(-1e3, 1e3)))
    def test_standardises(self, x):
        z = zscore_apply(zscore_fit(x), x)
        np.testing.assert_allclose(z.mean(axis=0), 0.0, atol=1e-9)
        spread = x.std(axis=0) > 1e-6
        np.testing.assert_allclose(z.std(axis=0)[spread], 1.0, atol=1e-9)

    def test_train_scaler_ignores_test_rows(self):
        rng = np.random.default_rng(3)
        x = rng.normal(size=(10, 4))
        train = np.arange(7)
        before = zscore_fit(x[train])
        x[7:] = rng.normal(size=(3, 4)) * 100
        after = zscore_fit(x[train])
        np.testing.assert_array_equal(before.mean, after.mean)
        np.testing.assert_array_equal(before.std, after.std)
