import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from birdevo.errors import DataError, ShapeError
from birdevo.spectrogram import (
    AudioClip,
    SpectrogramConfig,
    clip_to_image,
    linear_ridge_row,
    log_ridge_row,
    read_wav,
    render_stack,
    stft,
    write_png,
    write_wav,
)


def tone(freq, rate=16000, seconds=1.0, amp=0.5):
    t = np.arange(int(rate * seconds)) / rate
    return AudioClip(amp * np.sin(2 * np.pi * freq * t), rate)


def test_stft_bin_of_440hz():
    mag = stft(tone(440.0, rate=44100), 1024, 512)
    assert mag.shape[1] == 513
    assert set(mag.argmax(axis=1).tolist()) == {round(440 * 1024 / 44100)} == {10}


def test_stft_dc_and_zeros():
    dc = stft(AudioClip(np.full(4096, 0.3), 16000))
    assert np.all(dc.argmax(axis=1) == 0)
    # a periodic Hann window leaks DC into bin 1 at exactly half strength and nowhere else
    np.testing.assert_allclose(dc[:, 1] / dc[:, 0], 0.5, rtol=1e-9)
    assert np.all(dc[:, 2:] < 1e-9 * dc[:, 0:1])
    assert not stft(AudioClip(np.zeros(4096), 16000)).any()


def test_stft_rejects_short_clip():
    with pytest.raises(DataError, match="shorter"):
        stft(AudioClip(np.zeros(1000), 16000))


def test_height_must_divide_by_four():
    with pytest.raises(ShapeError):
        SpectrogramConfig(height=30)
    with pytest.raises(ShapeError):
        render_stack(np.ones((10, 513)), 16, 30)


@pytest.mark.parametrize("height", [32, 64, 224])
@pytest.mark.parametrize("freq", [150.0, 440.0, 1000.0, 3000.0, 3800.0, 4600.0, 6500.0, 7800.0])
def test_tone_ridge_rows(height, freq):
    cfg = SpectrogramConfig(width=32, height=height)
    img = clip_to_image(tone(freq), cfg)
    bh = img.band_height
    n_bins = cfg.window_len // 2 + 1
    expect_lin = linear_ridge_row(freq, bh, 8000.0, n_bins)
    expect_log = log_ridge_row(freq, bh, cfg.f_min, 8000.0, n_bins)
    for b, expect in enumerate([expect_lin, expect_lin, expect_log, expect_log]):
        profile = img.band(b).mean(axis=1)
        ridge = int(profile.argmax())
        assert abs(ridge - expect) <= 1, (b, ridge, expect)
        # one ridge: rows well away from it are clearly darker
        far = np.abs(np.arange(bh) - expect) > max(3, bh // 8)
        assert profile[far].max() < 0.9 * profile.max()


def test_analytic_rows_orientation():
    # high frequencies sit near the top of each band
    assert linear_ridge_row(7900, 16, 8000, 513) < linear_ridge_row(100, 16, 8000, 513)
    assert log_ridge_row(7900, 16, 50, 8000, 513) < 1
    assert log_ridge_row(50, 16, 50, 8000, 513) == pytest.approx(15.5 - 0.5 * 16 / 513, abs=1e-9)


def test_silence_is_zero_image():
    img = clip_to_image(AudioClip(np.zeros(32000), 16000), SpectrogramConfig(width=16, height=16))
    assert img.pixels.shape == (16, 16, 3)
    assert not img.pixels.any()


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_bands_span_unit_interval_and_replicate(seed):
    rng = np.random.default_rng(seed)
    mag = np.abs(rng.normal(size=(40, 513))) * rng.uniform(0.01, 10)
    img = render_stack(mag, 24, 32)
    assert img.pixels.shape == (32, 24, 3)
    assert img.pixels.dtype == np.float32
    for b in range(4):
        band = img.band(b)
        assert band.min() == 0.0 and band.max() == 1.0
    assert np.array_equal(img.pixels[..., 0], img.pixels[..., 1])
    assert np.array_equal(img.pixels[..., 0], img.pixels[..., 2])


def test_constant_band_is_zero():
    img = render_stack(np.full((30, 513), 2.0), 16, 16)
    assert not img.band(0).any()


def test_rendering_is_deterministic():
    rng = np.random.default_rng(0)
    clip = AudioClip(rng.normal(scale=0.1, size=32000), 16000)
    a = clip_to_image(clip).pixels
    b = clip_to_image(AudioClip(clip.samples.copy(), 16000)).pixels
    assert a.tobytes() == b.tobytes()


def test_bands_are_invariant_to_magnitude_scale():
    rng = np.random.default_rng(1)
    mag = np.abs(rng.normal(size=(30, 513)))
    scaled = render_stack(mag * 7.5, 16, 16).pixels
    np.testing.assert_allclose(render_stack(mag, 16, 16).pixels, scaled, atol=1e-6)


def test_wav_roundtrip(tmp_path):
    clip = tone(1000.0, seconds=0.25)
    path = tmp_path / "t.wav"
    write_wav(path, clip)
    back = read_wav(path)
    assert back.sample_rate == 16000
    assert np.abs(back.samples - clip.samples).max() <= 1 / 32768


def test_wav_rejects_stereo(tmp_path):
    from scipy.io import wavfile

    path = tmp_path / "s.wav"
    wavfile.write(path, 8000, np.zeros((100, 2), dtype=np.int16))
    with pytest.raises(DataError, match="mono"):
        read_wav(path)


def test_png_written(tmp_path):
    from PIL import Image

    img = clip_to_image(tone(3000.0), SpectrogramConfig(width=16, height=16))
    write_png(tmp_path / "x.png", img)
    arr = np.asarray(Image.open(tmp_path / "x.png"))
    assert arr.shape == (16, 16, 3)
    assert arr.max() == 255
