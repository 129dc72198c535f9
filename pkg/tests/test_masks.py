import numpy as np
import pytest

from distortionless.dsp import ComplexSpectrogram, spectrogram_energy, stft
from distortionless.losses import si_snr
from distortionless.masks import (
    Mask,
    apply_cirm,
    apply_irm,
    apply_mask,
    compose_panels,
    hole_fraction,
    oracle_cirm,
    oracle_irm,
    read_pgm,
    spectrogram_image,
    write_pgm,
)

INNER = slice(512, -512)


@pytest.fixture
def mixture():
    rng = np.random.default_rng(0)
    target = rng.standard_normal(8000)
    interf = np.convolve(rng.standard_normal(8000), [1, 0.5, -0.3])[:8000]
    return target, target + interf


def test_mask_contract():
    with pytest.raises(ValueError):
        Mask("irm", -np.ones((257, 2)))
    with pytest.raises(ValueError):
        Mask("cirm", np.full((257, 2), np.nan))
    with pytest.raises(ValueError):
        Mask("other", np.ones((257, 2)))
    Mask("cirm", -np.ones((257, 2)))  # unbounded, any sign


def test_identity_masks(mixture):
    _, y = mixture
    spec = stft(y)
    for out in (
        apply_irm(Mask("irm", np.ones(spec.shape)), spec, len(y)),
        apply_cirm(Mask("cirm", np.ones(spec.shape)), spec, len(y)),
    ):
        assert np.max(np.abs(out[INNER] - y[INNER])) < 1e-6 * np.max(np.abs(y))
    assert np.all(apply_irm(Mask("irm", np.zeros(spec.shape)), spec, len(y)) == 0)


def test_cirm_rotation_preserves_energy(mixture):
    _, y = mixture
    spec = stft(y)
    mask = Mask("cirm", np.full(spec.shape, 1j))
    rotated = ComplexSpectrogram(mask.values * spec.bins)
    assert spectrogram_energy(rotated) == pytest.approx(spectrogram_energy(spec), rel=1e-6)
    out = apply_cirm(mask, spec, len(y))
    # the waveform loses only the (now imaginary) DC and Nyquist bins
    assert np.sum(out[INNER] ** 2) == pytest.approx(np.sum(y[INNER] ** 2), rel=0.02)
    assert abs(np.dot(out[INNER], y[INNER])) < 0.05 * np.sum(y[INNER] ** 2)


def test_irm_keeps_mixture_phase(mixture):
    _, y = mixture
    spec = stft(y)
    m = np.random.default_rng(1).uniform(0.1, 2.0, spec.shape)
    masked = m * np.abs(spec.bins) * np.exp(1j * np.angle(spec.bins))
    np.testing.assert_allclose(np.angle(masked), np.angle(spec.bins), atol=1e-12)
    out = apply_irm(Mask("irm", m), spec)
    assert out.shape == (spec.frame_spec.span(spec.num_frames),)


def test_shape_mismatch(mixture):
    spec = stft(mixture[1])
    with pytest.raises(ValueError):
        apply_mask(Mask("irm", np.ones((257, 3))), spec)
    with pytest.raises(ValueError):
        apply_irm(Mask("cirm", np.ones(spec.shape)), spec)


def test_oracle_masks_improve(mixture):
    s, y = mixture
    S, Y = stft(s), stft(y)
    base = si_snr(y, s)
    irm = si_snr(apply_irm(oracle_irm(S, Y), Y, len(y)), s)
    cirm = si_snr(apply_cirm(oracle_cirm(S, Y), Y, len(y)), s)
    assert irm > base and cirm >= irm


def test_unclipped_oracle_cirm_is_exact(mixture):
    s, y = mixture
    out = apply_cirm(oracle_cirm(stft(s), stft(y), clip=None), stft(y), len(y))
    assert np.max(np.abs(out[INNER] - s[INNER])) < 1e-5 * np.max(np.abs(s))


def test_oracle_cirm_clip():
    s = ComplexSpectrogram(np.full((257, 2), 100.0 + 0j))
    y = ComplexSpectrogram(np.full((257, 2), 1.0 + 0j))
    m = oracle_cirm(s, y)
    np.testing.assert_allclose(np.abs(m.values), 10.0)


def test_hole_fraction_values():
    rng = np.random.default_rng(2)
    ref = rng.uniform(0.5, 1.0, (257, 40))
    assert hole_fraction(ref, ref) == 0
    assert hole_fraction(np.zeros_like(ref), ref) == 1
    enh = ref.copy()
    flat = enh.reshape(-1)
    n = flat.size // 10
    flat[100 : 100 + n] = 0
    assert hole_fraction(enh, ref) == pytest.approx(n / ref.size, abs=1e-9)
    with pytest.raises(ValueError, match="no active bins"):
        hole_fraction(ref, np.zeros_like(ref))
    with pytest.raises(ValueError):
        hole_fraction(ref[:3], ref)


def test_hole_fraction_ignores_inactive_bins():
    ref = np.ones((10, 10))
    ref[:5] = 1e-3  # -60 dB: inactive
    assert hole_fraction(np.zeros_like(ref), ref) == 1.0
    enh = np.zeros_like(ref)
    enh[5:] = 1.0
    assert hole_fraction(enh, ref) == 0.0


def test_hole_fraction_monotone():
    rng = np.random.default_rng(3)
    ref = rng.uniform(0, 1, (50, 50))
    enh = rng.uniform(0, 0.2, (50, 50))
    prev = hole_fraction(enh, ref)
    for _ in range(5):
        enh = enh + rng.uniform(0, 0.05, enh.shape)
        cur = hole_fraction(enh, ref)
        assert cur <= prev
        prev = cur


def test_pgm_round_trip(tmp_path):
    mag = np.abs(stft(np.random.default_rng(4).standard_normal(4000)).bins)
    img = spectrogram_image(mag)
    assert img.shape == mag.shape and img.dtype == np.uint8
    panel = compose_panels([img, img, img])
    assert panel.shape == (257 + 8, 3 * img.shape[1] + 2 * 8 + 8)
    write_pgm(tmp_path / "p.pgm", panel)
    np.testing.assert_array_equal(read_pgm(tmp_path / "p.pgm"), panel)


def test_silent_image_is_uniform():
    img = spectrogram_image(np.zeros((257, 5)))
    assert np.all(img == 0)
