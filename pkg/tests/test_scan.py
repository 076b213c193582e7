import numpy as np
import pytest

from oracles import polar_scan
from polarosm.polar import PolarGrid
from polarosm.scan import (
    LABEL,
    LabeledScan,
    ScanFormatError,
    attach_labels,
    load_scan,
    mlp_inputs,
    range_filter,
    save_labels,
    save_scan,
    splat_max,
)

GRID = PolarGrid(48, 36, 50.0)


class TestLoadScan:
    def test_two_points(self, tmp_path):
        path = tmp_path / "a.bin"
        path.write_bytes(np.arange(8, dtype="<f4").tobytes())
        rec = load_scan(path)
        assert rec.shape == (2, 4) and rec.dtype == np.float32
        np.testing.assert_array_equal(rec[1], [4, 5, 6, 7])

    def test_truncated(self, tmp_path):
        path = tmp_path / "a.bin"
        path.write_bytes(bytes(17))
        with pytest.raises(ScanFormatError):
            load_scan(path)

    def test_empty(self, tmp_path):
        path = tmp_path / "a.bin"
        path.write_bytes(b"")
        assert load_scan(path).shape == (0, 4)

    def test_save_round_trip(self, tmp_path):
        pts = np.array([[1.5, -2.0, 0.25], [3.0, 4.0, 5.0]])
        save_scan(tmp_path / "s.bin", pts)
        np.testing.assert_array_equal(load_scan(tmp_path / "s.bin")[:, :3], pts)


class TestAttachLabels:
    def test_three(self):
        scan = attach_labels(np.zeros((3, 4)), np.array([9, 13, 15]))
        assert len(scan) == 3 and scan.labels.tolist() == [9, 13, 15]

    def test_count_mismatch_names_both(self):
        with pytest.raises(ScanFormatError, match="2.*3"):
            attach_labels(np.zeros((3, 3)), np.array([1, 2]))

    def test_upper_bits_masked(self):
        assert attach_labels(np.zeros((1, 3)), np.array([0x00030009], dtype=np.uint32)).labels[0] == 9

    def test_label_file(self, tmp_path):
        save_labels(tmp_path / "a.label", np.array([0x00010028, 50], dtype=np.uint32))
        scan = attach_labels(np.zeros((2, 3)), tmp_path / "a.label", remap=True)
        assert scan.labels.tolist() == [LABEL["road"], LABEL["building"]]

    def test_out_of_vocabulary_rejected_without_remap(self):
        with pytest.raises(ScanFormatError):
            attach_labels(np.zeros((1, 3)), np.array([50]))


class TestRangeFilter:
    def scan(self):
        pts = np.array([[2.0, 0, 0], [0, 25.0, 1], [6.0, 8.0, 0], [50.0, 0, 0], [0, -3.0, 0]])
        return LabeledScan(pts, [LABEL["road"], LABEL["building"], LABEL["car"], LABEL["road"], LABEL["pole"]])

    def test_default_window(self):
        out = range_filter(self.scan())
        assert out.labels.tolist() == [LABEL["building"], LABEL["car"], LABEL["pole"]]

    def test_drop_classes(self):
        out = range_filter(self.scan(), drop_classes={LABEL["car"]})
        assert LABEL["car"] not in out.labels
        assert len(out) == 2

    def test_planar_norm(self):
        # 2 m planar radius with a tall z is still too close
        assert len(range_filter(LabeledScan([[2.0, 0, 10.0]], [9]))) == 0


class TestSplatMax:
    def test_single_point(self):
        scan = LabeledScan([[10.0, 0.1, 0]], [9])
        out = splat_max(np.ones((1, 3)), scan, GRID).values
        u, v = int(10.0 // GRID.ring_width), 0
        np.testing.assert_array_equal(out[u, v], [1, 1, 1])
        assert np.count_nonzero(out) == 3

    def test_elementwise_max(self):
        scan = LabeledScan([[10.0, 0.1, 0], [10.1, 0.12, 0]], [9, 9])
        out = splat_max(np.array([[1.0, 0.0], [0.0, 1.0]]), scan, GRID).values
        np.testing.assert_array_equal(out[9, 0], [1, 1])

    def test_negative_features_survive(self):
        scan = LabeledScan([[10.0, 0.1, 0]], [9])
        assert splat_max(np.array([[-2.0]]), scan, GRID).values[9, 0, 0] == -2.0

    def test_out_of_grid_ignored(self):
        scan = LabeledScan([[60.0, 0, 0]], [9])
        assert not splat_max(np.ones((1, 2)), scan, GRID).values.any()

    @pytest.mark.parametrize("seed", range(5))
    def test_matches_grouping_oracle(self, seed):
        rng = np.random.default_rng(seed)
        scan, r, phi = polar_scan(rng, 100, PolarGrid(4, 6, 8.0))
        feats = rng.normal(size=(100, 5))
        grid = PolarGrid(4, 6, 8.0)
        out = splat_max(feats, scan, grid).values
        u = np.floor(r / grid.ring_width).astype(int)
        v = np.floor(phi / grid.sector_width).astype(int)
        expected = np.zeros((4, 6, 5))
        for cu in range(4):
            for cv in range(6):
                rows = [feats[k] for k in range(100) if u[k] == cu and v[k] == cv]
                if rows:
                    expected[cu, cv] = np.max(rows, axis=0)
        np.testing.assert_array_equal(out, expected)

    def test_permutation_and_duplication(self):
        rng = np.random.default_rng(1)
        scan, _, _ = polar_scan(rng, 500, GRID)
        feats = rng.normal(size=(500, 4))
        base = splat_max(feats, scan, GRID).values
        perm = rng.permutation(500)
        np.testing.assert_array_equal(splat_max(feats[perm], scan.subset(perm), GRID).values, base)
        dup = np.concatenate([np.arange(500), rng.integers(0, 500, 100)])
        np.testing.assert_array_equal(splat_max(feats[dup], scan.subset(dup), GRID).values, base)

    @pytest.mark.parametrize("k", [1, 5, 35])
    def test_rotation_by_whole_sectors_shifts(self, k):
        rng = np.random.default_rng(k)
        scan, _, _ = polar_scan(rng, 400, GRID)
        feats = rng.normal(size=(400, 3))
        base = splat_max(feats, scan, GRID).values
        rotated = splat_max(feats, scan.rotated(k * GRID.sector_width), GRID).values
        np.testing.assert_array_equal(rotated, np.roll(base, k, axis=1))


class TestMlpInputs:
    def test_columns(self):
        scan = LabeledScan([[10.0, 0.0, 2.0]], [19])
        row = mlp_inputs(scan, PolarGrid(10, 4, 50.0))[0]
        # sector 0 bisector is at 45 degrees
        np.testing.assert_allclose(row, [np.cos(np.pi / 4), -np.sin(np.pi / 4), 0.2, 1.0])

    def test_invariant_to_whole_sector_rotation(self):
        rng = np.random.default_rng(0)
        scan, _, _ = polar_scan(rng, 300, GRID)
        a = mlp_inputs(scan, GRID)
        b = mlp_inputs(scan.rotated(7 * GRID.sector_width), GRID)
        np.testing.assert_allclose(a, b, atol=1e-12)
