"""Synthetic corpus, habitat strata, the accuracy ceiling and the splits."""
from collections import Counter

from birdevo.synthesis import BayesCeiling, SynthParams, generate_corpus, make_splits

params = SynthParams(clip_count=400, seed=0)
corpus = generate_corpus(params, spectrogram=None)  # conditions only, audio regenerates on demand

# %% three strata: present, absent in suitable habitat, absent elsewhere
print(Counter(r.stratum for r in corpus.records))
rec = corpus.records[0]
print("first clip:", rec.stratum, {k: rec.conditions[k] for k in list(rec.conditions)[:5]}, "...")

# conditions cannot separate present from absent-in-suitable-habitat clips, which caps accuracy
ceiling = BayesCeiling(params.suitable_negative_fraction)
print(f"best achievable conditions-only accuracy: {ceiling.value:.3f}")

# %% balanced, stratified splits; the encoding schema is fit on the training part only
splits = make_splits(corpus, with_images=False)
for name, s in [("train", splits.train), ("validation", splits.validation), ("test", splits.test)]:
    print(f"{name:10s} {len(s):4d} clips, {s.labels.mean():.2f} positive, {s.conditions.shape[1]} encoded columns")
print(splits.schema.to_text().splitlines()[:6])
