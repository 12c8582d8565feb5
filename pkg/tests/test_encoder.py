import numpy as np
import pytest

from hsunmix.encoder import (ChannelAttention, Encoder, EncoderConfig, Fusion, SpatialBranch, SpectralBranch,
                             default_stage_count)
from hsunmix.nn import zero_
from hsunmix.tensor import Tensor, no_grad, tsum


def T(a):
    return Tensor(np.asarray(a, dtype=np.float32))


SMALL = EncoderConfig(C=6, spectral_channels=4, spectral_stage_count=2)


class TestConfig:
    def test_defaults(self):
        cfg = EncoderConfig()
        assert (cfg.C, cfg.gamma, cfg.spectral_channels, cfg.ca_reduction) == (108, 1.0, 16, 4)
        assert cfg.stages(224) == 4 and default_stage_count(64) == 3

    @pytest.mark.parametrize("kw", [dict(C=10), dict(gamma=0.5), dict(spectral_stage_count=-1)])
    def test_rejections(self, kw):
        with pytest.raises(ValueError):
            EncoderConfig(**kw)


class TestChannelAttention:
    def test_zero_mlp_halves_input(self, rng):
        ca = zero_(ChannelAttention(8, 4, rng))
        x = T(rng.normal(size=(3, 4, 8)))
        np.testing.assert_allclose(ca(x).numpy(), x.numpy() / 2, rtol=1e-6)

    def test_weights_in_open_unit_interval_for_volumes(self, rng):
        ca = ChannelAttention(4, 2, rng)
        w = ca.weights(T(rng.normal(size=(5, 3, 3, 4)))).numpy()
        assert w.shape == (4,) and ((w > 0) & (w < 1)).all()

    def test_too_few_channels(self, rng):
        with pytest.raises(ValueError):
            ChannelAttention(2, 4, rng)


class TestSpatialBranch:
    def test_stage_extents_follow_the_pyramid(self, rng):
        br = SpatialBranch(8, 3, SMALL, rng)
        with no_grad():
            feats = br.features(T(rng.uniform(size=(25, 20, 8))))
        assert [f.shape for f in feats] == [(25, 20, 6), (13, 10, 12), (7, 5, 24), (4, 3, 48)]
        with no_grad():
            assert br(T(rng.uniform(size=(25, 20, 8)))).shape == (25, 20, 3)

    def test_head_counts(self, rng):
        br = SpatialBranch(8, 3, SMALL, rng)
        assert [b.cfg.heads for b in br.stage1 + br.stage2] == [3, 3, 6]
        assert [b.heads for b in br.stage3 + br.stage4] == [12, 12, 24]

    def test_head_starts_at_zero(self, rng):
        br = SpatialBranch(4, 2, SMALL, rng)
        with no_grad():
            assert not br(T(rng.uniform(size=(16, 16, 4)))).numpy().any()

    def test_gradient_reaches_tokenizer(self, rng):
        br = SpatialBranch(4, 2, SMALL, rng)
        br.head.weight.data = rng.normal(size=br.head.weight.shape).astype(np.float32)
        tsum(br(T(rng.uniform(size=(16, 16, 4))))).backward()
        assert np.abs(br.tokenizer.conv1.weight.grad).max() > 0

    def test_too_small(self, rng):
        with pytest.raises(ValueError):
            SpatialBranch(4, 2, SMALL, rng)(T(np.ones((15, 16, 4))))


class TestSpectralBranch:
    def test_residual_depth(self, rng):
        br = SpectralBranch(224, 3, EncoderConfig(C=6, spectral_channels=2), rng)
        assert br.n_stages == 4 and br.depth_out == 14

    def test_output_shape_and_ca_range(self, rng):
        br = SpectralBranch(16, 3, SMALL, rng)
        Y = T(rng.uniform(size=(5, 4, 16)))
        assert br(Y).shape == (5, 4, 3)
        for ca in [br.stem_ca] + br.cas:
            w = ca.weights(T(rng.normal(size=(4, 5, 4, 4)))).numpy()
            assert ((w > 0) & (w < 1)).all()

    def test_too_few_bands(self, rng):
        with pytest.raises(ValueError):
            SpectralBranch(3, 2, SMALL, rng)


class TestFusionAndEncoder:
    def test_fusion_on_simplex(self, rng):
        fu = Fusion(4, SMALL, rng)
        A = fu(T(rng.normal(size=(6, 5, 4)) * 10), T(rng.normal(size=(6, 5, 4)) * 10)).numpy()
        assert (A >= 0).all() and np.abs(A.sum(-1) - 1).max() <= 1e-6
        with pytest.raises(ValueError):
            fu(T(np.ones((2, 2, 4))), T(np.ones((2, 3, 4))))

    @pytest.mark.parametrize("ablate", [None, "spatial", "spectral"])
    def test_encoder_outputs_valid_abundances(self, rng, ablate):
        enc = Encoder(16, 3, SMALL, rng, ablate=ablate)
        with no_grad():
            A = enc(T(rng.uniform(size=(16, 16, 16)))).numpy()
        assert A.shape == (16, 16, 3)
        assert A.min() >= -1e-7 and np.abs(A.sum(-1) - 1).max() <= 1e-6

    def test_ablated_branch_receives_no_gradient(self, rng):
        enc = Encoder(16, 3, SMALL, rng, ablate="spatial")
        tsum(enc(T(rng.uniform(size=(16, 16, 16)))) ** 2).backward()
        assert enc.spatial.tokenizer.conv1.weight.grad is None
        assert enc.spectral.stem.weight.grad is not None

    def test_unknown_ablation(self, rng):
        with pytest.raises(ValueError):
            Encoder(16, 3, SMALL, rng, ablate="both")
