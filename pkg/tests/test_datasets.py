
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ppikit.datasets import (
    LabeledDataset,
    RowParseError,
    SchemaError,
    SynthParams,
    UnlabeledDataset,
    gen_synthetic,
    gen_synthetic_rssi,
    load_rssi_csv,
    make_folds,
    rssi_features,
    rssi_from_positions,
    write_rssi_csv,
)

FIXTURE = __import__("pathlib").Path(__file__).parent / "data" / "rssi_fixture.csv"


class TestContainers:
    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            LabeledDataset(np.zeros((3, 2)), np.zeros(2))

    def test_class_label_range(self):
        with pytest.raises(ValueError):
            LabeledDataset(np.zeros((2, 1)), np.array([0, 3]), n_classes=3)

    def test_read_only(self):
        d = LabeledDataset(np.zeros((2, 1)), np.zeros(2))
        with pytest.raises(ValueError):
            d.inputs[0, 0] = 1.0

    def test_unlabeled_nonempty(self):
        with pytest.raises(ValueError):
            UnlabeledDataset(np.zeros((0, 2)))

    def test_subset_carries_side(self):
        d = LabeledDataset(np.arange(6.0).reshape(3, 2), np.arange(3.0), side=np.eye(3))
        s = d.subset([2, 0])
        np.testing.assert_array_equal(s.side, np.eye(3)[[2, 0]])
        np.testing.assert_array_equal(s.labels, [2.0, 0.0])


class TestFolds:
    def test_two_folds_of_four(self):
        f = make_folds(4, 2, 0)
        assert sorted(np.concatenate(f.members).tolist()) == [0, 1, 2, 3]
        assert [m.size for m in f.members] == [2, 2]

    def test_remainder_goes_first(self):
        f = make_folds(5, 2, 0)
        assert [m.size for m in f.members] == [3, 2]

    def test_sixty_each(self):
        assert [m.size for m in make_folds(300, 5, 1).members] == [60] * 5

    @pytest.mark.parametrize("n,K", [(3, 4), (5, 1)])
    def test_invalid(self, n, K):
        with pytest.raises(ValueError):
            make_folds(n, K, 0)

    @given(st.integers(2, 200), st.integers(2, 12), st.integers(0, 2 ** 32 - 1))
    def test_partition_property(self, n, K, seed):
        if K > n:
            return
        f = make_folds(n, K, seed)
        sizes = [m.size for m in f.members]
        assert max(sizes) - min(sizes) <= 1
        np.testing.assert_array_equal(np.sort(np.concatenate(f.members)), np.arange(n))
        for k, m in enumerate(f.members):
            assert np.all(f.fold_of[m] == k)
            assert np.intersect1d(m, f.complement(k)).size == 0

    def test_deterministic(self):
        a, b = make_folds(50, 5, 9), make_folds(50, 5, 9)
        np.testing.assert_array_equal(a.fold_of, b.fold_of)


class TestSynthetic:
    def test_deterministic(self):
        p = SynthParams(seed=3)
        (l1, u1), (l2, u2) = gen_synthetic(p, 10, 20), gen_synthetic(p, 10, 20)
        np.testing.assert_array_equal(l1.inputs, l2.inputs)
        np.testing.assert_array_equal(l1.labels, l2.labels)
        np.testing.assert_array_equal(u1.inputs, u2.inputs)

    def test_moments(self):
        p = SynthParams(d=2, mu=4.0, sigma=2.0, R=0.5, seed=0)
        lab, _ = gen_synthetic(p, 1_000_000, 1)
        y = lab.labels
        assert abs(y.mean() - 4.0) < 5 * 2.0 / 1000
        assert abs(y.var() / 4.0 - 1.0) < 0.02
        explained = (lab.inputs @ p.beta).var() / y.var()
        assert abs(explained - 0.25) < 0.01

    def test_r_zero_uncorrelated(self):
        lab, _ = gen_synthetic(SynthParams(R=0.0, seed=1), 200_000, 1)
        for j in range(2):
            assert abs(np.corrcoef(lab.inputs[:, j], lab.labels)[0, 1]) < 0.01
        assert abs(lab.labels.var() / 4.0 - 1.0) < 0.02

    def test_beta_literal_for_d3(self):
        p = SynthParams(d=3, sigma=2.0, R=0.5)
        np.testing.assert_allclose(p.beta, np.full(3, 0.5 * 2.0 / np.sqrt(2)))

    def test_invalid_params(self):
        with pytest.raises(ValueError):
            SynthParams(R=1.5)
        with pytest.raises(ValueError):
            SynthParams(sigma=0.0)


class TestRssiCsv:
    def test_filter_floor(self):
        recs = load_rssi_csv(FIXTURE, floor=1)
        assert len(recs) == 2
        assert recs[0].rssi.shape == (4,)

    def test_sentinel_kept(self):
        recs = load_rssi_csv(FIXTURE)
        assert recs[0].rssi[1] == 100.0
        assert rssi_features([recs[0].rssi])[0, 1] == -110.0

    def test_missing_column(self, tmp_path):
        bad = tmp_path / "bad.csv"
        bad.write_text("WAP001,LATITUDE,FLOOR,BUILDINGID\n-40,1.0,0,0\n")
        with pytest.raises(SchemaError):
            load_rssi_csv(bad)

    def test_row_error_line_number(self, tmp_path):
        bad = tmp_path / "bad.csv"
        bad.write_text("WAP001,LONGITUDE,LATITUDE,FLOOR,BUILDINGID\n-40,1,2,0,0\nx,1,2,0,0\n")
        with pytest.raises(RowParseError) as info:
            load_rssi_csv(bad)
        assert info.value.line == 3

    def test_round_trip_bit_exact(self, tmp_path):
        out = tmp_path / "copy.csv"
        write_rssi_csv(load_rssi_csv(FIXTURE), out)
        assert out.read_bytes() == FIXTURE.read_bytes()

    def test_round_trip_synthetic(self, tmp_path):
        from ppikit.datasets import RssiRecord
        rng = np.random.default_rng(0)
        recs = [RssiRecord(rng.normal(-70, 10, 5), tuple(rng.normal(size=2)), 1, 2)
                for _ in range(4)]
        p1, p2 = tmp_path / "a.csv", tmp_path / "b.csv"
        write_rssi_csv(recs, p1)
        back = load_rssi_csv(p1)
        for a, b in zip(recs, back):
            np.testing.assert_array_equal(a.rssi, b.rssi)
            assert a.position == b.position
        write_rssi_csv(back, p2)
        assert p1.read_bytes() == p2.read_bytes()


class TestSyntheticRssi:
    def test_reference_distance_formula(self):
        aps = np.array([[0.0, 0.0]])
        r = rssi_from_positions(np.array([[10.0, 0.0]]), aps, (40.0, 2.0, 0.0))
        assert r[0, 0] == pytest.approx(-40.0 - 20.0)

    def test_min_distance_clamp(self):
        aps = np.array([[0.0, 0.0]])
        r = rssi_from_positions(np.array([[0.0, 0.0]]), aps, (40.0, 2.0, 0.0))
        assert r[0, 0] == pytest.approx(-40.0 - 20.0 * np.log10(0.1))

    def test_deterministic(self):
        a = gen_synthetic_rssi(4, (0, 10, 0, 10), (40, 2, 4), 5, 6, seed=1)
        b = gen_synthetic_rssi(4, (0, 10, 0, 10), (40, 2, 4), 5, 6, seed=1)
        np.testing.assert_array_equal(a[0].inputs, b[0].inputs)
        np.testing.assert_array_equal(a[1].inputs, b[1].inputs)

    def test_noiseless_trilateration(self):
        lab, _, aps = gen_synthetic_rssi(3, (0, 20, 0, 20), (40.0, 2.0, 0.0), 5, 1, seed=4,
                                         return_access_points=True)
        d = 10 ** ((-40.0 - lab.inputs) / 20.0)
        # subtracting the first circle equation linearizes the system
        A = 2 * (aps[1:] - aps[0])
        for row, pos in zip(d, lab.labels):
            b = row[0] ** 2 - row[1:] ** 2 + np.sum(aps[1:] ** 2, 1) - np.sum(aps[0] ** 2)
            est = np.linalg.solve(A, b)
            assert np.abs(est - pos).max() < 1e-6

    def test_needs_three_aps(self):
        with pytest.raises(ValueError):
            gen_synthetic_rssi(2, (0, 1, 0, 1), (40, 2, 0), 1, 1)
