import zlib

import numpy as np
import pytest
import torch

from distortionless.dsp import istft, stft
from distortionless.nn.cldnn import CldnnConfig, CldnnLite
from distortionless.nn.ctc import batch_ctc_loss
from distortionless.nn.gradcheck import directional_error
from distortionless.nn.layers import GroupedLayerNorm, GlobalLayerNorm, IstftConv, StftConv
from distortionless.nn.tcn import Enhancer, TcnConfig, TcnMaskNet

from gradcases import END_TO_END, PRIMITIVES

D = torch.float64


def test_stft_conv_matches_dsp():
    x = np.random.default_rng(0).standard_normal(4000)
    re, im = StftConv()(torch.from_numpy(x)[None])
    ref = stft(x).bins
    np.testing.assert_allclose(re[0].numpy(), ref.real, atol=1e-9)
    np.testing.assert_allclose(im[0].numpy(), ref.imag, atol=1e-9)


def test_istft_conv_matches_dsp():
    x = np.random.default_rng(1).standard_normal(4000)
    spec = stft(x)
    t = torch.from_numpy(spec.bins)
    out = IstftConv()(t.real[None].contiguous(), t.imag[None].contiguous(), len(x))[0].numpy()
    np.testing.assert_allclose(out, istft(spec, len(x)), atol=1e-9)
    inner = slice(512, -512)
    assert np.max(np.abs(out[inner] - x[inner])) < 1e-9
    with pytest.raises(ValueError):
        IstftConv()(t.real[None], t.imag[None], len(x) + 1000)


def test_tcn_shapes_and_frames():
    for kind in ("irm", "cirm"):
        net = TcnMaskNet(TcnConfig(mask_kind=kind))
        out = net(torch.randn(2, 2056, 7))
        if kind == "irm":
            assert out.shape == (2, 257, 7) and torch.all(out >= 0)
        else:
            assert out[0].shape == out[1].shape == (2, 257, 7)
    with pytest.raises(ValueError):
        TcnMaskNet()(torch.randn(1, 2000, 5))
    with pytest.raises(ValueError):
        TcnConfig(mask_kind="ibm")


def test_zero_irm_head_gives_zero_mask():
    net = TcnMaskNet(TcnConfig(mask_kind="irm"))
    with torch.no_grad():
        net.head.weight.zero_()
        net.head.bias.zero_()
    assert torch.all(net(torch.randn(1, 2056, 4)) == 0)


def test_identity_head():
    torch.manual_seed(0)
    net = TcnMaskNet(TcnConfig(mask_kind="cirm")).identity_head_()
    mr, mi = net(torch.randn(1, 2056, 6))
    assert torch.all(mr == 1) and torch.all(mi == 0)


def test_enhancer_identity_reconstructs_reference():
    x = np.random.default_rng(2).standard_normal(4000)
    spec = torch.from_numpy(stft(x).bins)
    enh = Enhancer(TcnConfig(mask_kind="cirm")).to(D)
    enh.mask_net.identity_head_()
    frames = spec.shape[1]
    with torch.no_grad():
        out = enh(torch.randn(1, 2056, frames, dtype=D), spec.real[None].contiguous(),
                  spec.imag[None].contiguous(), len(x))[0]
    inner = slice(512, -512)
    assert out.shape == (4000,)
    assert float((out[inner] - torch.from_numpy(x[inner])).abs().max()) < 1e-9


def test_grouped_norm_normalises_each_group():
    norm = GroupedLayerNorm((3, 5, 2))
    x = torch.randn(2, 10, 7) * torch.tensor([1.0] * 3 + [100.0] * 5 + [0.01] * 2)[None, :, None]
    y = norm(x)
    for part in torch.split(y, (3, 5, 2), dim=1):
        assert torch.allclose(part.mean(dim=(1, 2)), torch.zeros(2), atol=1e-5)
        assert torch.allclose(part.std(dim=(1, 2), unbiased=False), torch.ones(2), atol=1e-3)
    g = GlobalLayerNorm(4)(torch.randn(3, 4, 5) * 7 + 2)
    assert torch.allclose(g.mean(dim=(1, 2)), torch.zeros(3), atol=1e-5)


def test_cldnn_outputs_simplex():
    torch.manual_seed(0)
    am = CldnnLite()
    lp = am(torch.randn(2, 16000) * 0.1)
    assert lp.shape[0] == 2 and lp.shape[2] == 33
    np.testing.assert_allclose(lp.exp().sum(-1).detach().numpy(), 1.0, atol=1e-6)
    with pytest.raises(ValueError):
        am(torch.randn(1, 300))


def test_cldnn_waveform_gradient_is_connected():
    torch.manual_seed(1)
    am = CldnnLite()
    wave = (0.1 * torch.randn(1, 8000)).requires_grad_(True)
    batch_ctc_loss(am(wave), [[1, 2, 3]]).backward()
    assert torch.isfinite(wave.grad).all() and float(wave.grad.norm()) > 0


def test_cldnn_waveform_gradient_matches_finite_differences():
    torch.manual_seed(2)
    am = CldnnLite(CldnnConfig(num_phonemes=4, lstm_layers=1, lstm_units=8, conv_channels=4)).to(D)
    wave = 0.1 * torch.randn(1, 1600, dtype=D)  # 0.1 s
    g = torch.Generator().manual_seed(2)
    err = directional_error(lambda t: batch_ctc_loss(am(t[0]), [[0, 1]]), [wave], generator=g)
    assert err < 1e-3


@pytest.mark.parametrize("name", sorted(PRIMITIVES))
def test_primitive_gradients(name):
    g = torch.Generator().manual_seed(zlib.crc32(name.encode()))
    errs = [PRIMITIVES[name](g) for _ in range(5)]
    assert max(errs) < 1e-4, errs


@pytest.mark.parametrize("name", sorted(END_TO_END))
def test_end_to_end_gradients(name):
    g = torch.Generator().manual_seed(7)
    errs = [END_TO_END[name](g) for _ in range(3)]
    assert max(errs) < 1e-4, errs
