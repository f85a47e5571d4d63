"""Audio clips to four-band spectrogram images.

Writes demos/out/tone.png and demos/out/clip.png.
"""
from pathlib import Path

import numpy as np

from birdevo.spectrogram import (
    AudioClip,
    SpectrogramConfig,
    clip_to_image,
    linear_ridge_row,
    log_ridge_row,
    stft,
    write_png,
)
from birdevo.synthesis import ABSENT_SUITABLE, PRESENT, SynthParams, synthesize_clip

out = Path(__file__).parent / "out"
out.mkdir(exist_ok=True)

# %% a pure tone shows up as one horizontal ridge per band
rate = 16000
t = np.arange(2 * rate) / rate
tone = AudioClip(0.5 * np.sin(2 * np.pi * 1000.0 * t), rate)
mag = stft(tone)
print("stft frames x bins:", mag.shape, "peak bin:", mag.mean(0).argmax(), "expected", round(1000 / 8000 * 512))

cfg = SpectrogramConfig(width=64, height=64)
img = clip_to_image(tone, cfg)
bh = img.band_height
names = ["linear f, linear amp", "linear f, log amp", "log f, linear amp", "log f, log amp"]
expect = [linear_ridge_row(1000, bh, 8000, 513)] * 2 + [log_ridge_row(1000, bh, cfg.f_min, 8000, 513)] * 2
for b, (name, e) in enumerate(zip(names, expect)):
    ridge = img.band(b).mean(axis=1).argmax()
    print(f"band {b} ({name}): ridge row {ridge}, analytic {e:.2f}")
write_png(out / "tone.png", img)

# %% a synthetic song clip, loud enough to see; the corpus default is much fainter
p = SynthParams(song_amplitude=0.5)
_, song = synthesize_clip(p, 0, PRESENT)
_, quiet = synthesize_clip(p, 0, ABSENT_SUITABLE)
rows = sorted({int(round(linear_ridge_row(f, bh, 8000, 513))) for f in p.song_frequencies})
for label, clip in (("song", song), ("no song", quiet)):
    band = clip_to_image(clip, cfg).band(0)
    lit = np.flatnonzero(band[rows].max(axis=0) > 0.6)
    print(f"{label:8s} {lit.size} of {band.shape[1]} columns bright in song rows {rows}: {lit.tolist()}")
# without song, per-band min-max normalization stretches the noise floor to full range
write_png(out / "clip.png", clip_to_image(song, cfg))

# setting everything to silence yields the zero image
print("silence ->", clip_to_image(AudioClip(np.zeros(2 * rate), rate), cfg).pixels.max())
