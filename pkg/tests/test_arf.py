import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import dense_attention
from polarosm.arf import (
    ARFHead,
    DescriptorDatabase,
    angular_average_pool,
    attention_weights,
    fuse_descriptor,
    proposal_self_attention,
    radial_cross_attention,
    read_descriptor,
    ring_position_encoding,
    write_descriptor,
)
from polarosm.nn import finite_difference_check


class TestPositionEncoding:
    def test_first_row(self):
        e = ring_position_encoding(4, 8)
        assert not e[0, 0::2].any()
        assert torch.equal(e[0, 1::2], torch.ones(4))

    def test_sin_one(self):
        assert ring_position_encoding(3, 6)[1, 0].item() == pytest.approx(0.841471, abs=1e-6)

    def test_frequencies(self):
        e = ring_position_encoding(5, 4, torch.float64)
        assert e[3, 2].item() == pytest.approx(math.sin(3 / 100.0), abs=1e-15)
        assert e[3, 3].item() == pytest.approx(math.cos(3 / 100.0), abs=1e-15)

    def test_odd_channels(self):
        with pytest.raises(ValueError):
            ring_position_encoding(4, 5)


def naive_pool(f):
    z, t, c = f.shape
    out = np.zeros((z, c))
    for i in range(z):
        for k in range(c):
            out[i, k] = sum(f[i, j, k] for j in range(t)) / t
    return out


class TestAngularPool:
    def test_constant_map(self):
        f = torch.full((3, 5, 4), 2.5, dtype=torch.float64)
        out = angular_average_pool(f)
        torch.testing.assert_close(out, 2.5 + ring_position_encoding(3, 4, torch.float64))

    def test_matches_loop_oracle(self):
        f = np.random.default_rng(0).normal(size=(4, 3, 2))
        out = angular_average_pool(torch.from_numpy(f), torch.zeros(4, 2, dtype=torch.float64))
        np.testing.assert_allclose(out.numpy(), naive_pool(f), atol=1e-12)

    def test_zero_sectors(self):
        with pytest.raises(ValueError):
            angular_average_pool(torch.zeros(3, 0, 4))

    def test_batched(self):
        f = torch.randn(2, 3, 5, 4)
        out = angular_average_pool(f)
        torch.testing.assert_close(out[1], angular_average_pool(f[1]))

    @settings(max_examples=40, deadline=None)
    @given(st.integers(1, 6), st.integers(1, 12), st.integers(1, 4), st.integers(0, 11), st.integers(0, 2**31 - 1))
    def test_shift_invariance(self, z, t, half_c, shift, seed):
        g = torch.Generator().manual_seed(seed)
        f = torch.randn(z, t, 2 * half_c, generator=g) * 10
        rolled = torch.roll(f, shift % t, dims=1)
        assert (angular_average_pool(rolled) - angular_average_pool(f)).abs().max() <= 1e-6


class TestAttention:
    def test_single_proposal(self):
        q = torch.randn(1, 6)
        torch.testing.assert_close(proposal_self_attention(q), q)

    def test_identical_rows(self):
        q = torch.randn(1, 6).repeat(4, 1)
        torch.testing.assert_close(proposal_self_attention(q), q)

    def test_self_attention_oracle(self):
        q = np.random.default_rng(1).normal(size=(3, 4))
        out = proposal_self_attention(torch.from_numpy(q)).numpy()
        np.testing.assert_allclose(out, dense_attention(q, q, math.sqrt(4)), atol=1e-6)

    def test_cross_attention_single_ring(self):
        q, fr = torch.randn(1, 4), torch.randn(1, 4)
        torch.testing.assert_close(radial_cross_attention(q, fr), fr)

    def test_cross_attention_identical_rows(self):
        fr = torch.randn(1, 5).repeat(3, 1)
        torch.testing.assert_close(radial_cross_attention(torch.randn(3, 5) * 5, fr), fr)

    def test_cross_attention_oracle(self):
        rng = np.random.default_rng(2)
        q, fr = rng.normal(size=(3, 4)), rng.normal(size=(3, 4))
        out = radial_cross_attention(torch.from_numpy(q), torch.from_numpy(fr)).numpy()
        np.testing.assert_allclose(out, dense_attention(q, fr, 2.0), atol=1e-6)

    def test_cross_attention_shape_mismatch(self):
        with pytest.raises(ValueError):
            radial_cross_attention(torch.zeros(3, 4), torch.zeros(2, 4))

    @settings(max_examples=30, deadline=None)
    @given(st.integers(1, 9), st.integers(1, 16), st.floats(0.01, 30.0), st.integers(0, 2**31 - 1))
    def test_rows_sum_to_one(self, z, c, scale, seed):
        g = torch.Generator().manual_seed(seed)
        w = attention_weights(torch.randn(z, c, generator=g) * scale, torch.randn(z, c, generator=g) * scale)
        assert (w.sum(-1) - 1).abs().max() <= 1e-6
        assert (w >= 0).all()


class TestFuse:
    def test_zero_weight(self):
        assert not fuse_descriptor(torch.randn(4, 8), torch.randn(4, 8), torch.zeros(2048, 32)).any()

    def test_identity(self):
        fr, frp = torch.randn(16, 128), torch.randn(16, 128)
        d = fuse_descriptor(fr, frp, torch.eye(2048))
        torch.testing.assert_close(d, (fr + frp).reshape(-1), atol=0, rtol=0)

    def test_matmul_oracle(self):
        rng = np.random.default_rng(3)
        fr, frp, w = rng.normal(size=(3, 4)), rng.normal(size=(3, 4)), rng.normal(size=(5, 12))
        d = fuse_descriptor(*(torch.from_numpy(a) for a in (fr, frp, w))).numpy()
        x = [fr[i, k] + frp[i, k] for i in range(3) for k in range(4)]
        expected = [sum(w[r, j] * x[j] for j in range(12)) for r in range(5)]
        np.testing.assert_allclose(d, expected, atol=1e-5)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            fuse_descriptor(torch.zeros(3, 4), torch.zeros(4, 3), torch.zeros(2, 12))


class TestHead:
    @pytest.mark.parametrize("rings,channels", [(60, 128), (8, 4), (1, 2)])
    def test_output_dim(self, rings, channels):
        head = ARFHead(rings, channels)
        assert head(torch.randn(2, channels, rings, 5)).shape == (2, 2048)

    def test_wrong_input(self):
        with pytest.raises(ValueError):
            ARFHead(8, 4)(torch.randn(1, 4, 7, 5))

    def test_sector_shift_invariance(self):
        head = ARFHead(6, 8, dim=32, generator=torch.Generator().manual_seed(0))
        f = torch.randn(3, 8, 6, 10)
        base = head(f)
        for k in range(1, 10):
            assert (head(torch.roll(f, k, dims=3)) - base).abs().max() < 1e-5

    def test_gradients_32bit(self):
        head = ARFHead(3, 4, dim=6, generator=torch.Generator().manual_seed(1))
        f = torch.randn(2, 4, 3, 5, requires_grad=True)
        assert finite_difference_check(head, (f,), eps=1e-3, samples=64) < 1e-4

    def test_gradients_64bit(self):
        head = ARFHead(3, 4, dim=6, generator=torch.Generator().manual_seed(1)).double()
        f = torch.randn(2, 4, 3, 5, dtype=torch.float64, requires_grad=True)
        assert finite_difference_check(head, (f,), samples=64) < 1e-6

    def test_encoding_not_persisted(self):
        head = ARFHead(4, 6)
        assert set(head.state_dict()) == {"proposals", "weight"}


class TestDescriptorFiles:
    def test_database_round_trip(self, tmp_path):
        rng = np.random.default_rng(4)
        db = DescriptorDatabase(rng.normal(size=(5, 2048)).astype(np.float32), rng.normal(size=(5, 2)) * 1e5)
        db.save(tmp_path / "db.opdb")
        back = DescriptorDatabase.load(tmp_path / "db.opdb")
        assert back.to_bytes() == db.to_bytes()
        np.testing.assert_array_equal(back.positions, db.positions)

    def test_database_truncated(self):
        data = DescriptorDatabase(np.zeros((2, 2048), np.float32), np.zeros((2, 2))).to_bytes()
        with pytest.raises(ValueError):
            DescriptorDatabase.from_bytes(data[:-1])

    def test_database_mismatch(self):
        with pytest.raises(ValueError):
            DescriptorDatabase(np.zeros((2, 2048), np.float32), np.zeros((3, 2)))

    def test_descriptor_file(self, tmp_path):
        d = np.random.default_rng(5).normal(size=2048).astype(np.float32)
        write_descriptor(tmp_path / "q.bin", d)
        np.testing.assert_array_equal(read_descriptor(tmp_path / "q.bin"), d)
