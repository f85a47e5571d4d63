"""Audio clips to four-band stacked spectrogram images.

Bands, top to bottom: linear frequency / linear amplitude, linear frequency /
log amplitude, log frequency / linear amplitude, log frequency / log
amplitude.  Within each band the highest frequency is the top row.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.io import wavfile

from .errors import DataError, ShapeError

N_BANDS = 4


@dataclass(frozen=True)
class SpectrogramConfig:
    window_len: int = 1024
    hop: int = 512
    f_min: float = 50.0
    ref_floor: float = 1e-4  # log-amplitude reference as a fraction of the peak magnitude
    width: int = 64
    height: int = 64

    def __post_init__(self):
        if self.height % N_BANDS:
            raise ShapeError(f"image height {self.height} is not divisible by {N_BANDS}")
        if self.window_len < 2 or self.window_len & (self.window_len - 1):
            raise ShapeError(f"window length {self.window_len} is not a power of two")
        if self.hop < 1 or self.width < 1:
            raise ShapeError("hop and width must be positive")


@dataclass
class AudioClip:
    samples: np.ndarray
    sample_rate: int

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate


@dataclass
class SpectrogramImage:
    pixels: np.ndarray  # (H, W, 3) in [0, 1]

    @property
    def band_height(self) -> int:
        return self.pixels.shape[0] // N_BANDS

    def band(self, i: int) -> np.ndarray:
        h = self.band_height
        return self.pixels[i * h : (i + 1) * h, :, 0]


def hann(n: int) -> np.ndarray:
    """Periodic Hann window."""
    return 0.5 - 0.5 * np.cos(2 * np.pi * np.arange(n) / n)


def stft(clip: AudioClip, window_len: int = 1024, hop: int = 512) -> np.ndarray:
    """Hann-windowed magnitude spectrogram, shape ``(frames, window_len // 2 + 1)``."""
    x = np.asarray(clip.samples, dtype=np.float64)
    if window_len < 2 or window_len & (window_len - 1):
        raise ShapeError(f"window length {window_len} is not a power of two")
    if hop < 1:
        raise ShapeError("hop must be >= 1")
    if len(x) < window_len:
        raise DataError(f"clip of {len(x)} samples is shorter than one {window_len}-sample window")
    frames = np.lib.stride_tricks.sliding_window_view(x, window_len)[::hop]
    return np.abs(np.fft.rfft(frames * hann(window_len), axis=1))


def _triangle_matrix(n_in: int, centres: np.ndarray, support: np.ndarray) -> np.ndarray:
    """Rows of normalized triangle weights over ``n_in`` samples.

    ``support`` widens each triangle to the local output spacing so that
    shrinking averages narrow ridges in instead of skipping them.
    """
    support = np.maximum(support, 1.0)
    dist = np.abs(np.arange(n_in)[None, :] - centres[:, None]) / support[:, None]
    w = np.maximum(0.0, 1.0 - dist)
    empty = w.sum(axis=1) == 0
    if empty.any():
        w[empty, np.clip(np.round(centres[empty]).astype(int), 0, n_in - 1)] = 1.0
    return w / w.sum(axis=1, keepdims=True)


def _linear_weights(n_in: int, n_out: int) -> np.ndarray:
    """PIL-style bilinear resampling matrix, pixel-centre aligned."""
    scale = n_in / n_out
    centres = (np.arange(n_out) + 0.5) * scale - 0.5
    return _triangle_matrix(n_in, centres, np.full(n_out, scale))


def _resize(a: np.ndarray, rows: int, cols: int) -> np.ndarray:
    return _linear_weights(a.shape[0], rows) @ a @ _linear_weights(a.shape[1], cols).T


def _log_weights(n_bins: int, f_min: float, nyquist: float) -> np.ndarray:
    # fractional bin index of each log-spaced row
    pos = log_frequency_rows(n_bins, f_min, nyquist) / nyquist * (n_bins - 1)
    return _triangle_matrix(n_bins, pos, np.gradient(pos))


def _normalize(a: np.ndarray) -> np.ndarray:
    lo, hi = a.min(), a.max()
    # resampling a constant leaves roundoff-level ripple; keep such bands flat
    if hi - lo <= 1e-9 * max(abs(hi), abs(lo)):
        return np.zeros_like(a)
    return (a - lo) / (hi - lo)


def log_frequency_rows(n_rows: int, f_min: float, nyquist: float) -> np.ndarray:
    """Centre frequency of each log-spaced row, lowest first."""
    return f_min * (nyquist / f_min) ** (np.arange(n_rows) / max(n_rows - 1, 1))


def _row_from_top(bin_pos: float, n_bins: int, band_height: int) -> float:
    from_bottom = (bin_pos + 0.5) * band_height / n_bins - 0.5
    return band_height - 1 - from_bottom


def linear_ridge_row(freq: float, band_height: int, nyquist: float, n_bins: int) -> float:
    """Row (from the band top) at which a tone lands in the linear-frequency bands."""
    return _row_from_top(freq / nyquist * (n_bins - 1), n_bins, band_height)


def log_ridge_row(freq: float, band_height: int, f_min: float, nyquist: float, n_bins: int) -> float:
    """Row (from the band top) at which a tone lands in the log-frequency bands."""
    pos = (n_bins - 1) * np.log(freq / f_min) / np.log(nyquist / f_min)
    return _row_from_top(pos, n_bins, band_height)


def render_stack(
    magnitudes: np.ndarray,
    out_width: int = 64,
    out_height: int = 64,
    sample_rate: int = 16000,
    f_min: float = 50.0,
    ref_floor: float = 1e-4,
) -> SpectrogramImage:
    """Build, normalize, resize and stack the four spectrogram variants."""
    if out_height % N_BANDS:
        raise ShapeError(f"image height {out_height} is not divisible by {N_BANDS}")
    mag = np.asarray(magnitudes, dtype=np.float64).T  # (bins, frames), row 0 = 0 Hz
    n_bins = mag.shape[0]
    nyquist = sample_rate / 2
    peak = mag.max(initial=0.0)
    ref = peak * ref_floor
    log_amp = np.log1p(mag / ref) if ref > 0 else np.zeros_like(mag)

    to_log = _log_weights(n_bins, f_min, nyquist)

    band_h = out_height // N_BANDS
    variants = [mag, log_amp, to_log @ mag, to_log @ log_amp]
    bands = [_normalize(_resize(v, band_h, out_width))[::-1] for v in variants]
    gray = np.concatenate(bands, axis=0).astype(np.float32)
    return SpectrogramImage(np.repeat(gray[:, :, None], 3, axis=2))


def clip_to_image(clip: AudioClip, config: SpectrogramConfig = SpectrogramConfig()) -> SpectrogramImage:
    mag = stft(clip, config.window_len, config.hop)
    return render_stack(mag, config.width, config.height, clip.sample_rate, config.f_min, config.ref_floor)


def read_wav(path: str | Path) -> AudioClip:
    """Read mono 16-bit PCM; samples are scaled to [-1, 1)."""
    try:
        rate, data = wavfile.read(path)
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot read WAV {path}: {exc}") from None
    if data.dtype != np.int16 or data.ndim != 1:
        raise DataError(f"{path}: expected mono 16-bit PCM, got {data.dtype} with shape {data.shape}")
    return AudioClip(data.astype(np.float64) / 32768.0, int(rate))


def quantize(samples: np.ndarray) -> np.ndarray:
    return np.clip(np.round(np.asarray(samples) * 32768.0), -32768, 32767).astype(np.int16)


def write_wav(path: str | Path, clip: AudioClip) -> None:
    wavfile.write(path, clip.sample_rate, quantize(clip.samples))


def write_png(path: str | Path, image: SpectrogramImage) -> None:
    from PIL import Image

    Image.fromarray(np.round(image.pixels * 255).astype(np.uint8)).save(path)
