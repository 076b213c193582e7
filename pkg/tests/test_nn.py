import struct

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from polarosm.nn import (
    CheckpointError,
    EncoderConfig,
    OsmEmbedding,
    PointMLP,
    PolarEncoder,
    decode_checkpoint,
    encode_checkpoint,
    finite_difference_check,
)


def zero_(module):
    with torch.no_grad():
        for p in module.parameters():
            p.zero_()
    return module


class TestPointMLP:
    def test_zero_weights(self):
        mlp = zero_(PointMLP())
        assert not mlp(torch.randn(7, 4)).any()

    def test_empty_input(self):
        assert PointMLP()(torch.zeros(0, 4)).shape == (0, 64)

    def test_matches_matmul_oracle(self):
        mlp = PointMLP(generator=torch.Generator().manual_seed(3))
        with torch.no_grad():
            mlp.fc1.bias.normal_()
            mlp.fc2.bias.normal_()
        x = np.random.default_rng(0).normal(size=(50, 4)).astype(np.float32)
        w1, b1 = mlp.fc1.weight.detach().numpy(), mlp.fc1.bias.detach().numpy()
        w2, b2 = mlp.fc2.weight.detach().numpy(), mlp.fc2.bias.detach().numpy()
        hidden = np.zeros((50, 64))
        for n in range(50):
            for j in range(64):
                hidden[n, j] = max(0.0, sum(w1[j, i] * x[n, i] for i in range(4)) + b1[j])
        expected = hidden @ w2.T.astype(np.float64) + b2
        np.testing.assert_allclose(mlp(torch.from_numpy(x)).detach().numpy(), expected, atol=1e-5)

    def test_non_finite_rejected(self):
        with pytest.raises(ValueError):
            PointMLP()(torch.tensor([[0.0, np.nan, 0.0, 0.0]]))

    def test_seeded_init(self):
        a = PointMLP(generator=torch.Generator().manual_seed(5))
        b = PointMLP(generator=torch.Generator().manual_seed(5))
        assert torch.equal(a.fc1.weight, b.fc1.weight)
        assert not a.fc1.bias.any()


class TestOsmEmbedding:
    def test_empty_tile_embeds_to_zero(self):
        out = OsmEmbedding()(torch.zeros(20, 20, 3, dtype=torch.long))
        assert out.shape == (20, 20, 48) and not out.any()

    def test_single_building_pixel(self):
        emb = OsmEmbedding(generator=torch.Generator().manual_seed(0))
        ids = torch.zeros(10, 10, 3, dtype=torch.long)
        ids[4, 7, 0] = 1
        out = emb(ids).detach()
        assert torch.equal(out[4, 7, :16], emb.tables[0].weight[1].detach())
        assert torch.count_nonzero(out.abs().sum(-1)) == 1

    def test_matches_lookup_oracle(self):
        emb = OsmEmbedding(generator=torch.Generator().manual_seed(1))
        rng = np.random.default_rng(0)
        ids = np.stack([rng.integers(0, n, (6, 5)) for n in emb.sizes], axis=-1)
        out = emb(torch.from_numpy(ids)).detach().numpy()
        tables = [t.weight.detach().numpy() for t in emb.tables]
        for i in range(6):
            for j in range(5):
                row = np.concatenate([tables[c][ids[i, j, c]] for c in range(3)])
                np.testing.assert_array_equal(out[i, j], row)

    @pytest.mark.parametrize("channel,bad", [(0, 8), (1, 11), (2, 34), (0, -1)])
    def test_unknown_id(self, channel, bad):
        ids = torch.zeros(2, 2, 3, dtype=torch.long)
        ids[0, 0, channel] = bad
        with pytest.raises(ValueError):
            OsmEmbedding()(ids)

    def test_empty_row_gets_no_gradient(self):
        emb = OsmEmbedding(generator=torch.Generator().manual_seed(0))
        ids = torch.zeros(4, 4, 3, dtype=torch.long)
        ids[1, 1] = torch.tensor([2, 3, 4])
        (emb(ids) ** 2).sum().backward()
        for c, table in enumerate(emb.tables):
            assert not table.weight.grad[0].any()
            touched = {0: 2, 1: 3, 2: 4}[c]
            untouched = [k for k in range(table.num_embeddings) if k != touched]
            assert not table.weight.grad[untouched].any()
            assert table.weight.grad[touched].any()


def random_encoder(config, seed=0, dtype=torch.float32):
    enc = PolarEncoder(config, generator=torch.Generator().manual_seed(seed)).to(dtype)
    with torch.no_grad():
        for conv in enc.convs:
            conv.bias.uniform_(-0.1, 0.1, generator=torch.Generator().manual_seed(seed + 1))
    return enc


class TestPolarEncoder:
    def test_defaults_zero_weights(self):
        enc = zero_(PolarEncoder())
        out = enc(torch.randn(1, 65, 480, 360))
        assert out.shape == (1, 128, 60, 45) and not out.any()

    def test_output_shape_from_config(self):
        assert EncoderConfig().output_shape(480, 360) == (60, 45)
        assert EncoderConfig().total_stride == (8, 8)

    @pytest.mark.parametrize("shape", [(1, 65, 480, 364), (1, 65, 482, 360), (1, 64, 480, 360)])
    def test_shape_mismatch(self, shape):
        with pytest.raises(ValueError):
            PolarEncoder()(torch.zeros(shape))

    @pytest.mark.parametrize("config", [
        EncoderConfig(input_channels=5, widths=(4, 6, 8)),
        EncoderConfig(input_channels=3, widths=(4, 8), strides=((2, 2), (1, 2)), convs_per_stage=2),
        EncoderConfig(input_channels=2, widths=(4, 4, 4), kernel_size=5),
    ])
    def test_shift_equivariance(self, config):
        enc = random_encoder(config)
        x = torch.randn(2, config.input_channels, 16, 64, generator=torch.Generator().manual_seed(2))
        sa = config.total_stride[1]
        base = enc(x)
        for k in (1, 3):
            shifted = enc(torch.roll(x, k * sa, dims=3))
            torch.testing.assert_close(shifted, torch.roll(base, k, dims=3), atol=1e-5, rtol=0)

    def test_identity_single_stage(self):
        config = EncoderConfig(input_channels=3, widths=(3,), strides=((2, 2),), kernel_size=1)
        enc = PolarEncoder(config)
        with torch.no_grad():
            enc.convs[0].weight.copy_(torch.eye(3)[:, :, None, None])
            enc.convs[0].bias.zero_()
        x = torch.rand(1, 3, 8, 12)
        torch.testing.assert_close(enc(x), x[:, :, ::2, ::2], atol=0, rtol=0)

    def test_prewrapped_input_matches(self):
        config = EncoderConfig(input_channels=3, widths=(4, 4), strides=((2, 2), (2, 2)))
        enc = random_encoder(config)
        x = torch.randn(1, 3, 8, 16)
        wrapped = torch.cat([x[..., -1:], x, x[..., :1]], dim=-1)
        torch.testing.assert_close(enc(wrapped, wrapped=True), enc(x), atol=0, rtol=0)

    def test_deterministic(self):
        enc = random_encoder(EncoderConfig(input_channels=4, widths=(8, 8, 8)))
        x = torch.randn(1, 4, 32, 32)
        assert torch.equal(enc(x), enc(x))


class TestFiniteDifferences:
    def test_affine_64bit(self):
        layer = torch.nn.Linear(5, 3).double()
        x = torch.randn(4, 5, generator=torch.Generator().manual_seed(0), dtype=torch.float64, requires_grad=True)
        assert finite_difference_check(layer, (x,)) < 1e-6

    def test_point_mlp_64bit(self):
        mlp = PointMLP(hidden=8, out_dim=6, generator=torch.Generator().manual_seed(0)).double()
        x = torch.randn(10, 4, generator=torch.Generator().manual_seed(0), dtype=torch.float64)
        assert finite_difference_check(mlp, (x,)) < 1e-6

    def test_embedding_touched_rows(self):
        emb = OsmEmbedding(dim=4, generator=torch.Generator().manual_seed(0)).double()
        ids = torch.tensor([[[1, 2, 0], [3, 0, 5]]])
        assert finite_difference_check(emb, (ids,), samples=10_000) < 1e-6
        grad = emb.tables[0].weight.grad
        assert not grad[[0, 2, 4, 5, 6, 7]].any()
        assert grad[[1, 3]].abs().sum(1).all()

    def test_encoder_toy_grid_64bit(self):
        enc = random_encoder(EncoderConfig(input_channels=2, widths=(3, 4, 4)), dtype=torch.float64)
        x = torch.randn(1, 2, 8, 8, generator=torch.Generator().manual_seed(0), dtype=torch.float64,
                        requires_grad=True)
        assert finite_difference_check(enc, (x,)) < 1e-6

    def test_encoder_toy_grid_32bit(self):
        enc = random_encoder(EncoderConfig(input_channels=2, widths=(3, 4, 4)))
        # a fixed input keeps every ReLU pre-activation clear of its kink
        x = torch.randn(1, 2, 8, 8, generator=torch.Generator().manual_seed(0), requires_grad=True)
        assert finite_difference_check(enc, (x,)) < 1e-4

    def test_detects_wrong_gradient(self):
        class Broken(torch.autograd.Function):
            @staticmethod
            def forward(ctx, x):
                return x ** 2

            @staticmethod
            def backward(ctx, g):
                return g  # should be 2 x g

        x = torch.randn(6, dtype=torch.float64, requires_grad=True)
        assert finite_difference_check(Broken.apply, (x,)) > 0.1


class TestCheckpoint:
    def test_round_trip(self):
        tensors = {"a": np.arange(6, dtype=np.float32).reshape(2, 3), "b/c": np.float32([1.5]),
                   "scalar": np.float32(2.0)}
        out = decode_checkpoint(encode_checkpoint(tensors))
        assert list(out) == list(tensors)
        for k in tensors:
            np.testing.assert_array_equal(out[k], tensors[k])

    def test_layout(self):
        data = encode_checkpoint({"w": np.float32([[1, 2]])})
        assert data[:4] == b"OPWT"
        assert struct.unpack_from("<II", data, 4) == (1, 1)
        assert struct.unpack_from("<I", data, 12) == (1,) and data[16:17] == b"w"
        assert data[17] == 2 and struct.unpack_from("<II", data, 18) == (1, 2)
        assert struct.unpack_from("<2f", data, 26) == (1.0, 2.0) and len(data) == 34

    def test_truncated(self):
        data = encode_checkpoint({"w": np.ones((4, 4), np.float32)})
        with pytest.raises(CheckpointError):
            decode_checkpoint(data[:-3])

    def test_bad_magic(self):
        with pytest.raises(CheckpointError):
            decode_checkpoint(b"NOPE" + bytes(8))

    @settings(max_examples=25, deadline=None)
    @given(st.lists(st.integers(1, 4), min_size=0, max_size=3), st.integers(0, 2**31 - 1))
    def test_round_trip_bit_exact(self, shape, seed):
        arr = np.random.default_rng(seed).normal(size=shape).astype(np.float32)
        data = encode_checkpoint({"t": arr})
        assert encode_checkpoint(decode_checkpoint(data)) == data
