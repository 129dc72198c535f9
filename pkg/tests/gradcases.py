"""Random small instances for the finite-difference gradient suite.

Each case maps a ``torch.Generator`` to a relative error from
:func:`directional_error` / :func:`module_error` in float64.
"""

import torch
from torch import nn

from distortionless.features import LfbLayer
from distortionless.dsp import FrameSpec
from distortionless.losses import multitask_loss, si_snr_torch
from distortionless.nn.cldnn import CldnnConfig, CldnnLite
from distortionless.nn.ctc import batch_ctc_loss, ctc_loss
from distortionless.nn.gradcheck import directional_error, module_error
from distortionless.nn.layers import GlobalLayerNorm, IstftConv, complex_mask_multiply
from distortionless.nn.tcn import Enhancer, TcnConfig

D = torch.float64
SMALL_SPEC = FrameSpec(kernel_size=16, hop=8)


def _randn(g, *shape):
    return torch.randn(*shape, dtype=D, generator=g)


def _weights_like(g, t):
    return _randn(g, *t.shape)


def _module_case(module, forward, inputs, g):
    module = module.to(D)
    w = None

    def loss(m, xs):
        nonlocal w
        out = forward(m, xs)
        if w is None:
            w = _weights_like(g, out)
        return (out * w).sum()

    loss(module, inputs)  # fixes the projection weights
    return module_error(module, loss, inputs, generator=g)


def conv_pointwise(g):
    return _module_case(nn.Conv1d(3, 4, 1), lambda m, x: m(x[0]), [_randn(g, 2, 3, 6)], g)


def conv_dilated(g):
    return _module_case(
        nn.Conv1d(3, 3, 3, dilation=2, padding=2), lambda m, x: m(x[0]), [_randn(g, 2, 3, 9)], g
    )


def conv_depthwise(g):
    return _module_case(
        nn.Conv1d(4, 4, 3, dilation=4, padding=4, groups=4), lambda m, x: m(x[0]),
        [_randn(g, 1, 4, 12)], g,
    )


def conv2d(g):
    return _module_case(
        nn.Conv2d(1, 2, 3, stride=(2, 1), padding=1), lambda m, x: m(x[0]), [_randn(g, 1, 1, 6, 5)], g
    )


def global_layer_norm(g):
    m = GlobalLayerNorm(3)
    with torch.no_grad():
        m.gamma.copy_(1 + 0.1 * _randn(g, 1, 3, 1))
        m.beta.copy_(0.1 * _randn(g, 1, 3, 1))
    return _module_case(m, lambda m, x: m(x[0]), [_randn(g, 2, 3, 5)], g)


def prelu(g):
    return _module_case(nn.PReLU(), lambda m, x: m(x[0]), [_randn(g, 2, 7)], g)


def relu(g):
    x = _randn(g, 12)
    x = torch.where(x.abs() < 1e-3, x + 0.01, x)  # keep off the kink
    w = _randn(g, 12)
    return directional_error(lambda t: (torch.relu(t[0]) * w).sum(), [x], generator=g)


def lstm(g):
    return _module_case(nn.LSTM(3, 4, 1, batch_first=True), lambda m, x: m(x[0])[0],
                        [_randn(g, 2, 4, 3)], g)


def linear(g):
    return _module_case(nn.Linear(5, 3), lambda m, x: m(x[0]), [_randn(g, 4, 5)], g)


def log_softmax(g):
    w = _randn(g, 3, 6)
    return directional_error(lambda t: (torch.log_softmax(t[0], -1) * w).sum(), [_randn(g, 3, 6)],
                             generator=g)


def complex_mask(g):
    ins = [_randn(g, 5, 4) for _ in range(4)]
    w1, w2 = _randn(g, 5, 4), _randn(g, 5, 4)

    def f(t):
        re, im = complex_mask_multiply(*t)
        return (re * w1 + im * w2).sum()

    return directional_error(f, ins, generator=g)


def istft_overlap_add(g):
    layer = IstftConv(SMALL_SPEC)
    re, im = _randn(g, 1, 9, 5), _randn(g, 1, 9, 5)
    w = _randn(g, 1, SMALL_SPEC.span(5))
    return directional_error(lambda t: (layer(t[0], t[1]) * w).sum(), [re, im], generator=g)


def lfb(g):
    layer = LfbLayer()
    x = _randn(g, 720)
    w = _randn(g, 40, 3)
    return directional_error(lambda t: (layer(t[0]) * w).sum(), [x], generator=g)


def si_snr(g):
    s = _randn(g, 64)
    return directional_error(lambda t: si_snr_torch(t[0], s), [s + 0.5 * _randn(g, 64)], generator=g)


def ctc(g):
    labels = [int(v) for v in torch.randint(0, 3, (2,), generator=g)]
    logits = _randn(g, 5, 4)
    return directional_error(lambda t: ctc_loss(torch.log_softmax(t[0], -1), labels), [logits],
                             generator=g)


def _tiny_enhancer(kind):
    cfg = TcnConfig(mask_kind=kind, in_channels=4 * 9, num_bins=9, bottleneck=4, hidden=8,
                    blocks=1, repeats=1)
    return Enhancer(cfg, SMALL_SPEC).to(D)


def end_to_end_enhancement(g, kind="cirm", alpha=0.0):
    """features -> TCN -> mask -> iSTFT -> SI-SNR (plus LFB-MSE when alpha > 0)."""
    model = _tiny_enhancer(kind)
    frames = 3
    n = SMALL_SPEC.span(frames)
    if alpha:
        frames = (800 - SMALL_SPEC.kernel_size) // SMALL_SPEC.hop + 1
        n = SMALL_SPEC.span(frames)
    feats = _randn(g, 1, 36, frames)
    re, im = _randn(g, 1, 9, frames), _randn(g, 1, 9, frames)
    target = _randn(g, 1, n)

    def loss(m, xs):
        est = m(xs[0], re, im, n)
        if alpha:
            return multitask_loss(est, target, alpha)
        return -si_snr_torch(est, target).mean()

    return module_error(model, loss, [feats], generator=g)


def end_to_end_recognition(g):
    """waveform -> LFB -> CLDNN-lite -> CTC."""
    torch.manual_seed(int(torch.randint(0, 2**31, (1,), generator=g)))
    model = CldnnLite(CldnnConfig(num_phonemes=3, lstm_layers=1, lstm_units=4, conv_channels=2,
                                  num_filters=8)).to(D)
    wave = 0.1 * _randn(g, 1, 400 + 160 * 4)
    labels = [[int(v) for v in torch.randint(0, 3, (2,), generator=g)]]
    return module_error(model, lambda m, xs: batch_ctc_loss(m(xs[0]), labels), [wave], generator=g)


PRIMITIVES = {
    "conv1d_pointwise": conv_pointwise,
    "conv1d_dilated": conv_dilated,
    "conv1d_depthwise": conv_depthwise,
    "conv2d": conv2d,
    "global_layer_norm": global_layer_norm,
    "prelu": prelu,
    "relu": relu,
    "lstm": lstm,
    "linear": linear,
    "log_softmax": log_softmax,
    "complex_mask_multiply": complex_mask,
    "istft_overlap_add": istft_overlap_add,
    "lfb": lfb,
    "si_snr": si_snr,
    "ctc": ctc,
}

END_TO_END = {
    "features_tcn_cirm_istft_sisnr": end_to_end_enhancement,
    "features_tcn_irm_istft_sisnr": lambda g: end_to_end_enhancement(g, "irm"),
    "features_tcn_cirm_istft_multitask": lambda g: end_to_end_enhancement(g, "cirm", 1.0),
    "waveform_lfb_cldnn_ctc": end_to_end_recognition,
}
