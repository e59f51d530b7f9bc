import numpy as np
import pytest
import torch

from flashsplit.codec import (Codec, CodecConfig, CrossDecoder, cross_latent_decode, decode, encode, to_tensor)
from flashsplit.denoiser import DenoiserConfig, DualDenoiser
from flashsplit.errors import ShapeError

from _support import gradient_check, randomize

MINI_DENOISER = DenoiserConfig(latent_channels=2, width=4, mult=(1, 2))
MINI_CODEC = CodecConfig(channels=3, latent_channels=2, widths=(4, 8, 8))


def _latents(B=2, c=2, h=8, seed=0, dtype=torch.float64):
    g = torch.Generator().manual_seed(seed)
    return [torch.randn(B, c, h, h, generator=g, dtype=dtype) for _ in range(4)]


# -- denoiser ---------------------------------------------------------------

def test_fresh_denoiser_cross_attention_is_inert():
    torch.manual_seed(0)
    m = DualDenoiser(DenoiserConfig())
    # a fresh model has zero output convs; randomize everything except the cross-attention
    with torch.no_grad():
        for name, p in m.named_parameters():
            if not name.startswith("cross_"):
                p.add_(0.2 * torch.randn_like(p))
    nt, nr, zf, zn = _latents(c=4, h=16, dtype=torch.float32)
    t = torch.tensor([10, 900])
    a = m(nt, nr, zf, zn, t)
    b = m(nt, nr, zf, zn, t, cross_attention=False)
    assert torch.equal(a[0], b[0]) and torch.equal(a[1], b[1])
    assert a[0].abs().max() > 0


def test_fresh_denoiser_outputs_equal_without_randomization():
    m = DualDenoiser(DenoiserConfig())
    nt, nr, zf, zn = _latents(c=4, h=16, dtype=torch.float32)
    a = m(nt, nr, zf, zn, 5)
    b = m(nt, nr, zf, zn, 5, cross_attention=False)
    assert torch.equal(a[0], b[0]) and torch.equal(a[1], b[1])


def test_denoiser_shapes_and_errors():
    m = DualDenoiser(MINI_DENOISER).double()
    nt, nr, zf, zn = _latents()
    et, er = m(nt, nr, zf, zn, torch.tensor([3, 7]))
    assert et.shape == nt.shape and er.shape == nr.shape
    with pytest.raises(ShapeError):
        m(nt, nr[:, :, :4, :4], zf, zn, 3)
    with pytest.raises(ShapeError):
        m(*[torch.zeros(1, 3, 8, 8, dtype=torch.float64)] * 4, 3)


def test_denoiser_batch_equivariance():
    m = randomize(DualDenoiser(MINI_DENOISER).double(), 1)
    lat = _latents(B=4)
    t = torch.tensor([1, 50, 500, 1000])
    perm = torch.tensor([2, 0, 3, 1])
    et, er = m(*lat, t)
    pt, pr = m(*[x[perm] for x in lat], t[perm])
    assert torch.allclose(pt, et[perm], atol=1e-12) and torch.allclose(pr, er[perm], atol=1e-12)


def test_cross_attention_couples_branches_after_training_step():
    m = randomize(DualDenoiser(MINI_DENOISER).double(), 2)
    nt, nr, zf, zn = _latents()
    a, _ = m(nt, nr, zf, zn, 10)
    b, _ = m(nt, nr + 1.0, zf, zn, 10)
    assert not torch.allclose(a, b)


def test_denoiser_gradient_check():
    m = randomize(DualDenoiser(MINI_DENOISER), 3)
    nt, nr, zf, zn = _latents()
    t = torch.tensor([20, 700])

    def loss():
        et, er = m(nt, nr, zf, zn, t)
        return et.pow(2).mean() + er.pow(2).mean()

    assert gradient_check(m, loss) < 1e-3


# -- codec ------------------------------------------------------------------

def test_codec_shape_contract():
    c = Codec(CodecConfig())
    img = np.random.default_rng(0).random((64, 64, 3))
    z = encode(img, c)
    assert z.shape == (16, 16, 4)
    assert decode(z, c).shape == (64, 64, 3)
    assert np.array_equal(encode(img, c), z)
    with pytest.raises(ShapeError):
        encode(np.zeros((62, 64, 3)), c)
    with pytest.raises(ShapeError):
        decode(np.zeros((16, 16, 3)), c)


def test_decode_value_range():
    c = randomize(Codec(CodecConfig()), 4, scale=1.0)
    out = decode(np.random.default_rng(0).normal(0, 5, (16, 16, 4)), c)
    assert out.min() >= 0 and out.max() <= c.cfg.max_scale
    c.cfg.mode = "tonemapped"
    out = decode(np.random.default_rng(0).normal(0, 5, (16, 16, 4)), c)
    assert out.max() <= 1.0
    z0 = np.zeros((16, 16, 4))
    assert np.array_equal(decode(z0, c), decode(z0, c))


def test_codec_gradient_check():
    c = randomize(Codec(MINI_CODEC), 5)
    x = torch.rand(2, 3, 16, 16, dtype=torch.float64, generator=torch.Generator().manual_seed(0))

    def loss():
        return c.decode_t(c.encode_t(x), clamp=False).pow(2).mean()

    assert gradient_check(c, loss) < 1e-3


# -- cross-latent decoder -----------------------------------------------------

def test_cross_decoder_zero_init_bit_exact():
    codec = randomize(Codec(CodecConfig()), 6, scale=0.1)
    codec.lat_mean.copy_(torch.tensor([0.1, -0.2, 0.3, 0.0]))
    codec.lat_std.copy_(torch.tensor([1.5, 0.7, 1.0, 2.0]))
    st = CrossDecoder(codec)
    rng = np.random.default_rng(0)
    lat = rng.normal(size=(16, 16, 4))
    for comp in (rng.random((64, 64, 3)) * 3, np.zeros((64, 64, 3))):
        assert np.array_equal(cross_latent_decode(lat, comp, st), decode(lat, codec))


def test_cross_decoder_is_independent_copy():
    codec = Codec(MINI_CODEC)
    st = CrossDecoder(codec)
    with torch.no_grad():
        next(st.decoder.parameters()).add_(1.0)
    assert not torch.equal(next(st.decoder.parameters()), next(codec.decoder.parameters()))
    # no skip from the bottleneck: one projection per level above it
    assert len(st.zero_convs) == len(MINI_CODEC.widths) - 1


def test_cross_decoder_shape_errors():
    st = CrossDecoder(Codec(CodecConfig()))
    with pytest.raises(ShapeError):
        cross_latent_decode(np.zeros((16, 16, 4)), np.zeros((60, 64, 3)), st)
    with pytest.raises(ShapeError):
        cross_latent_decode(np.zeros((16, 16, 3)), np.zeros((64, 64, 3)), st)


def test_cross_decoder_composite_reaches_output_only_through_skips():
    codec = randomize(Codec(MINI_CODEC), 7)
    st = randomize(CrossDecoder(codec), 8)
    z = torch.randn(1, 2, 4, 4)
    a = st(z, torch.rand(1, 3, 16, 16))
    b = st(z, torch.rand(1, 3, 16, 16))
    assert not torch.allclose(a, b)
    with torch.no_grad():
        for zc in st.zero_convs:
            zc.weight.zero_()
            zc.bias.zero_()
    assert torch.equal(st(z, torch.rand(1, 3, 16, 16)), st(z, torch.zeros(1, 3, 16, 16)))


def test_cross_decoder_gradient_check():
    codec = randomize(Codec(MINI_CODEC), 9)
    st = randomize(CrossDecoder(codec), 10)
    g = torch.Generator().manual_seed(1)
    z = torch.randn(2, 2, 4, 4, dtype=torch.float64, generator=g)
    comp = torch.rand(2, 3, 16, 16, dtype=torch.float64, generator=g)

    def loss():
        return st(z, comp, clamp=False).pow(2).mean()

    assert gradient_check(st, loss) < 1e-3


def test_output_skip_parametrization():
    from flashsplit.diffusion import build_schedule

    s = build_schedule()
    m = DualDenoiser(DenoiserConfig(), s)  # zero output convs: F == 0
    nt, nr, zf, zn = _latents(c=4, h=16, dtype=torch.float32)
    t = torch.tensor([1, 999])
    et, er = m(nt, nr, zf, zn, t)
    for i, ti in enumerate(t.tolist()):
        b = float(np.sqrt(1 - s.abar(ti)))
        assert torch.allclose(et[i], b * nt[i], atol=1e-6) and torch.allclose(er[i], b * nr[i], atol=1e-6)
    plain = DualDenoiser(DenoiserConfig(output_skip=False))
    assert torch.equal(plain(nt, nr, zf, zn, t)[0], torch.zeros_like(nt))
