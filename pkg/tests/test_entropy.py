"""Context models, likelihoods, temporal priors, and coding-loop consistency."""

import math

import numpy as np
import pytest
import torch

from _gradcheck import central_difference_agrees
from nvclab.entropy import (
    ConvLSTMCell,
    FactorizedGaussianPrior,
    GaussianParams,
    LatentEntropyModel,
    PriorAggregator,
    SpatialContext,
    TemporalState,
    code_factorized,
    estimate_rate,
    symbol_likelihood,
    update_temporal,
)
from nvclab.rangecoder import RangeDecoder, RangeEncoder, SIGMA_MIN, P_MIN
from nvclab.vae import dither_from_seed


def scan_index(c, y, x, h, w):
    return c * h * w + y * w + x


@pytest.fixture(scope="module")
def ctx():
    torch.manual_seed(10)
    return SpatialContext(out_channels=6)


class TestSpatialContext:

    def test_causality_under_perturbation(self, ctx):
        torch.manual_seed(11)
        vol = torch.randn(4, 6, 6)
        base = ctx(vol)
        rng = np.random.default_rng(12)
        for _ in range(20):
            c = int(rng.integers(4))
            y = int(rng.integers(6))
            x = int(rng.integers(6))
            vol2 = vol.clone()
            vol2[c, y, x] += 3.7
            out2 = ctx(vol2)
            j = scan_index(c, y, x, 6, 6)
            flat_base = base.reshape(base.shape[0], -1)
            flat_new = out2.reshape(out2.shape[0], -1)
            assert torch.equal(flat_base[:, :j], flat_new[:, :j])

    def test_first_position_sees_nothing(self, ctx):
        a = ctx(torch.randn(4, 6, 6))[:, 0, 0, 0]
        b = ctx(torch.randn(4, 6, 6))[:, 0, 0, 0]
        assert torch.equal(a, b)
        assert torch.allclose(a, ctx.conv.bias)

    def test_zero_volume_gives_constant_bias_response(self, ctx):
        out = ctx(torch.zeros(4, 6, 6))
        bias = ctx.conv.bias[:, None, None, None].expand_as(out)
        assert torch.equal(out, bias)

    def test_center_tap_masked(self, ctx):
        k = ctx.kernel
        center = ctx.masked_weight()[:, :, k // 2, k // 2, k // 2]
        assert torch.equal(center, torch.zeros_like(center))

    def test_batched_matches_unbatched(self, ctx):
        vol = torch.randn(2, 4, 6, 6)
        batched = ctx(vol)
        assert torch.equal(batched[0], ctx(vol[0]))
        assert torch.equal(batched[1], ctx(vol[1]))


class TestPriorAggregator:
    def test_no_temporal_path_defined(self):
        torch.manual_seed(13)
        agg = PriorAggregator(spatial_channels=6, hyper_channels=8)
        params = agg(torch.randn(6, 4, 5, 5), torch.randn(8, 5, 5))
        assert params.mu.shape == (4, 5, 5)
        assert params.sigma.shape == (4, 5, 5)

    def test_sigma_floored_everywhere(self):
        torch.manual_seed(14)
        agg = PriorAggregator(spatial_channels=6, hyper_channels=8)
        # drive the sigma head strongly negative; floor must hold
        with torch.no_grad():
            agg.fuse[-1].bias.fill_(-50.0)
        with torch.no_grad():
            params = agg(torch.randn(6, 4, 5, 5), torch.randn(8, 5, 5))
        # the floor is exact up to float32 representation of the constant
        assert float(params.sigma.min()) >= np.float32(SIGMA_MIN)

    def test_temporal_none_means_zeros_when_expected(self):
        torch.manual_seed(15)
        agg = PriorAggregator(spatial_channels=4, hyper_channels=4, temporal_channels=3)
        spatial = torch.randn(4, 2, 4, 4)
        hyper = torch.randn(4, 4, 4)
        a = agg(spatial, hyper, None)
        b = agg(spatial, hyper, torch.zeros(3, 4, 4))
        assert torch.equal(a.mu, b.mu)

    def test_rejects_unexpected_temporal(self):
        agg = PriorAggregator(spatial_channels=4, hyper_channels=4)
        with pytest.raises(ValueError):
            agg(torch.randn(4, 2, 4, 4), torch.randn(4, 4, 4), torch.randn(2, 4, 4))

    def test_misaligned_hyper_rejected(self):
        agg = PriorAggregator(spatial_channels=4, hyper_channels=4)
        with pytest.raises(ValueError):
            agg(torch.randn(4, 2, 4, 4), torch.randn(4, 8, 8))


class TestSymbolLikelihood:
    def test_unit_gaussian_at_zero(self):
        # Phi(0.5) - Phi(-0.5)
        expected = math.erf(0.5 / math.sqrt(2))
        p = float(symbol_likelihood(0.0, 0.0, 1.0))
        assert p == pytest.approx(expected, abs=1e-10)
        assert round(p, 5) == 0.38292

    @pytest.mark.parametrize("sigma", [0.11, 1.0, 8.0, 64.0])
    @pytest.mark.parametrize("mu", [0.0, 0.3, -5.0])
    def test_lattice_normalization(self, sigma, mu):
        span = int(math.ceil(40 * sigma))
        lattice = torch.arange(-span, span + 1, dtype=torch.float64) + round(mu)
        p = symbol_likelihood(lattice, float(mu), float(sigma))
        assert float(p.sum()) == pytest.approx(1.0, abs=1e-6)

    def test_symmetry_about_mean(self):
        mu = 1.5
        for k in range(-5, 6):
            a = float(symbol_likelihood(float(k), mu, 2.0))
            b = float(symbol_likelihood(2 * mu - k, mu, 2.0))
            assert a == pytest.approx(b, rel=1e-12)

    def test_floor_applies_when_requested(self):
        p = float(symbol_likelihood(500.0, 0.0, 0.11, p_min=P_MIN))
        assert p == P_MIN


class TestTemporalUpdate:
    def test_shapes_and_bounds(self):
        torch.manual_seed(16)
        cell = ConvLSTMCell(in_channels=8, hidden_channels=4)
        state = TemporalState.zeros(4, 6, 6)
        out = update_temporal(cell, torch.randn(8, 6, 6) * 5, state)
        assert out.h.shape == (4, 6, 6)
        assert out.c.shape == (4, 6, 6)
        assert float(out.h.abs().max()) < 1.0

    def test_zero_everything_stays_zero(self):
        cell = ConvLSTMCell(in_channels=4, hidden_channels=3)
        with torch.no_grad():
            cell.gates.weight.zero_()
            cell.gates.bias.zero_()
        state = TemporalState.zeros(3, 5, 5)
        out = cell(torch.zeros(4, 5, 5), state)
        assert torch.equal(out.h, torch.zeros(3, 5, 5))
        assert torch.equal(out.c, torch.zeros(3, 5, 5))

    def test_misaligned_state_rejected(self):
        cell = ConvLSTMCell(in_channels=4, hidden_channels=3)
        with pytest.raises(ValueError):
            cell(torch.zeros(4, 5, 5), TemporalState.zeros(3, 7, 7))


class TestEstimateRate:
    def test_degenerate_distribution_costs_nothing(self):
        values = torch.zeros(4, 4, 4)
        params = GaussianParams(mu=torch.zeros(4, 4, 4),
                                sigma=torch.full((4, 4, 4), SIGMA_MIN))
        bits = float(estimate_rate(values, params))
        assert bits < 0.01

    def test_matches_actual_coder_bits_on_model_typical_latents(self):
        """Two-sided bound; latents are sampled from the model itself by
        decoding random bytes, which is exact sampling from the coding
        distribution."""
        torch.manual_seed(17)
        model = LatentEntropyModel(context_channels=6, hyper_feature_channels=4)
        rng = np.random.default_rng(18)
        for trial in range(10):
            shape = (3, 4, 4)
            seed = int(rng.integers(1 << 31))
            u = dither_from_seed(seed)
            hyper = torch.from_numpy(
                rng.normal(0, 1, (4,) + shape[1:]).astype(np.float32))
            noise = bytes(rng.integers(0, 256, 4096, dtype=np.uint8))
            values = model.serial_decode(RangeDecoder(noise), shape, u, hyper)
            symbols = torch.round(values + u).to(torch.int64)
            enc = RangeEncoder()
            model.serial_encode(enc, symbols, u, hyper)
            actual = len(enc.finish()) * 8
            ideal = float(model.rate(values, hyper))
            assert ideal <= actual <= ideal * 1.02 + 64

    def test_upper_bound_holds_for_arbitrary_symbols(self):
        torch.manual_seed(27)
        model = LatentEntropyModel(context_channels=6, hyper_feature_channels=4)
        rng = np.random.default_rng(28)
        shape = (3, 4, 4)
        u = dither_from_seed(55)
        symbols = torch.from_numpy(rng.integers(-4, 5, shape)).to(torch.int64)
        hyper = torch.from_numpy(rng.normal(0, 1, (4, 4, 4)).astype(np.float32))
        enc = RangeEncoder()
        model.serial_encode(enc, symbols, u, hyper)
        actual = len(enc.finish()) * 8
        ideal = float(model.rate(symbols.to(torch.float32) - u, hyper))
        assert actual <= ideal * 1.02 + 64

    def test_gradient_against_central_differences(self):
        torch.manual_seed(19)
        mu = torch.randn(3, 3, dtype=torch.float64)
        sigma = torch.rand(3, 3, dtype=torch.float64) + 0.2

        def rate_of_values(v):
            return estimate_rate(v, GaussianParams(mu=mu, sigma=sigma))

        central_difference_agrees(rate_of_values,
                                  torch.randn(3, 3, dtype=torch.float64))

        values = torch.randn(3, 3, dtype=torch.float64)

        def rate_of_mu(m):
            return estimate_rate(values, GaussianParams(mu=m, sigma=sigma))

        central_difference_agrees(rate_of_mu, mu.clone())


class TestDualExecution:
    def test_context_sequences_bitwise_equal(self):
        """Encoder- and decoder-side reconstructed context must match exactly."""
        torch.manual_seed(20)
        model = LatentEntropyModel(context_channels=6, hyper_feature_channels=4)
        rng = np.random.default_rng(21)
        shape = (3, 5, 5)
        seed = 914
        u = dither_from_seed(seed)
        symbols = torch.from_numpy(rng.integers(-6, 7, shape)).to(torch.int64)
        hyper = torch.from_numpy(rng.normal(0, 1, (4, 5, 5)).astype(np.float32))

        enc_trace: list = []
        enc = RangeEncoder()
        values_enc = model.serial_encode(enc, symbols, u, hyper, trace=enc_trace)
        payload = enc.finish()

        dec_trace: list = []
        values_dec = model.serial_decode(RangeDecoder(payload), shape, u, hyper,
                                         trace=dec_trace)
        assert torch.equal(values_enc, values_dec)
        assert len(enc_trace) == len(dec_trace) == int(np.prod(shape))
        for a, b in zip(enc_trace, dec_trace):
            assert torch.equal(a, b)

    def test_temporal_priors_respected_in_coding(self):
        torch.manual_seed(22)
        model = LatentEntropyModel(context_channels=4, hyper_feature_channels=4,
                                   temporal_channels=3)
        rng = np.random.default_rng(23)
        shape = (2, 4, 4)
        u = dither_from_seed(7)
        symbols = torch.from_numpy(rng.integers(-3, 4, shape)).to(torch.int64)
        hyper = torch.from_numpy(rng.normal(0, 1, (4, 4, 4)).astype(np.float32))
        temporal = torch.from_numpy(rng.normal(0, 0.5, (3, 4, 4)).astype(np.float32))
        enc = RangeEncoder()
        model.serial_encode(enc, symbols, u, hyper, temporal_feats=temporal)
        payload = enc.finish()
        out = model.serial_decode(RangeDecoder(payload), shape, u, hyper,
                                  temporal_feats=temporal)
        assert torch.equal(out, symbols.to(torch.float32) - u)
        # decoding under a different temporal prior must not reproduce the input
        other = model.serial_decode(RangeDecoder(payload), shape, u, hyper,
                                    temporal_feats=temporal + 1.0)
        assert not torch.equal(other, symbols.to(torch.float32) - u)


class TestFactorizedPrior:
    def test_round_trip(self):
        torch.manual_seed(24)
        prior = FactorizedGaussianPrior(5)
        rng = np.random.default_rng(25)
        symbols = torch.from_numpy(rng.integers(-5, 6, (5, 3, 3))).to(torch.int64)
        u = dither_from_seed(99)
        enc = RangeEncoder()
        code_factorized(prior, u, (5, 3, 3), symbols=symbols, encoder=enc)
        payload = enc.finish()
        out = code_factorized(prior, u, (5, 3, 3), decoder=RangeDecoder(payload))
        assert torch.equal(out, symbols.to(torch.float32) - u)
