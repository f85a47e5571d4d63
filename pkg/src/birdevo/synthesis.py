"""Synthetic labelled corpus with a known conditions-only accuracy ceiling.

Positives are white noise plus a three-step rising tone ladder, recorded
under suitable-habitat conditions.  Negatives are noise only; a fraction
``h`` of them share the suitable-habitat condition distribution and the
rest come from a disjoint non-habitat distribution.  Because conditions say
nothing about the label inside suitable habitat and everything outside it,
the best any conditions-only classifier can do is ``(2 - h) / 2``.

The 41 condition variables are stand-ins: four drive habitat suitability,
two are cyclic time variables, the rest are nuisance covariates.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .conditions import CATEGORICAL, CYCLIC, NUMERIC, N_CONDITION_VARIABLES, ConditionSchema, encode_many, fit_schema
from .errors import DataError
from .spectrogram import AudioClip, SpectrogramConfig, SpectrogramImage, clip_to_image, quantize
from .training import ClipSet

PRESENT = "present"
ABSENT_SUITABLE = "absent-suitable-habitat"
ABSENT_NON_HABITAT = "absent-non-habitat"
STRATA = (PRESENT, ABSENT_SUITABLE, ABSENT_NON_HABITAT)

OVENBIRD = "ovenbird"
NO_OVENBIRD = "no-ovenbird"

SUITABLE_VEGETATION = ("deciduous", "mixedwood")
NON_HABITAT_VEGETATION = ("grassland", "wetland")

_N_NUISANCE = N_CONDITION_VARIABLES - 9

VARIABLE_KINDS: dict[str, str] = {
    "time_of_day": CYCLIC,
    "day_of_year": CYCLIC,
    "vegetation_type": CATEGORICAL,
    "disturbance_type": CATEGORICAL,
    "soil_class": CATEGORICAL,
    "canopy_cover": NUMERIC,
    "stand_age": NUMERIC,
    "human_footprint": NUMERIC,
    "years_since_disturbance": NUMERIC,
    **{f"covariate_{i:02d}": NUMERIC for i in range(_N_NUISANCE)},
}
assert len(VARIABLE_KINDS) == N_CONDITION_VARIABLES


@dataclass(frozen=True)
class SynthParams:
    clip_count: int = 2000
    suitable_negative_fraction: float = 0.47
    overlap: float = 0.0  # chance a non-habitat negative is drawn from the suitable distribution
    sample_rate: int = 16000
    clip_duration: float = 2.0
    song_frequencies: tuple[float, ...] = (3000.0, 3800.0, 4600.0)
    song_duration: float = 0.6
    song_amplitude: float = 0.05
    noise_level: float = 0.1
    seed: int = 0

    def validate(self) -> "SynthParams":
        if not 0 < self.suitable_negative_fraction < 1:
            raise DataError("suitable_negative_fraction must lie strictly between 0 and 1")
        if not 0 <= self.overlap < 1:
            raise DataError("overlap must lie in [0, 1)")
        if self.clip_count < 2 or self.clip_count % 2:
            raise DataError("clip_count must be an even number >= 2")
        if self.song_duration >= self.clip_duration:
            raise DataError("song must fit inside the clip")
        if max(self.song_frequencies) >= self.sample_rate / 2:
            raise DataError("song frequencies must stay below the Nyquist frequency")
        if self.noise_level < 0 or self.song_amplitude < 0:
            raise DataError("amplitudes must be non-negative")
        return self


@dataclass(frozen=True)
class BayesCeiling:
    suitable_negative_fraction: float
    overlap: float = 0.0

    @property
    def effective_fraction(self) -> float:
        h = self.suitable_negative_fraction
        return h + (1 - h) * self.overlap

    @property
    def value(self) -> float:
        return (2 - self.effective_fraction) / 2


@dataclass
class ClipRecord:
    clip_id: str
    label: str
    stratum: str
    conditions: dict[str, object]
    spectrogram: SpectrogramImage | None = None
    index: int = 0

    @property
    def is_positive(self) -> bool:
        return self.label == OVENBIRD


@dataclass
class Corpus:
    params: SynthParams
    records: list[ClipRecord]
    ceiling: BayesCeiling
    spectrogram_config: SpectrogramConfig | None = None

    def __len__(self) -> int:
        return len(self.records)

    def audio(self, i: int) -> AudioClip:
        rec = self.records[i]
        return synthesize_clip(self.params, rec.index, rec.stratum)[1]


def _conditions(rng: np.random.Generator, suitable: bool) -> dict[str, object]:
    rec: dict[str, object] = {
        "time_of_day": float(rng.normal(6.0, 2.0) % 24.0),
        "day_of_year": float(rng.uniform(130.0, 200.0)),
    }
    if suitable:
        rec["vegetation_type"] = SUITABLE_VEGETATION[rng.integers(len(SUITABLE_VEGETATION))]
        rec["canopy_cover"] = float(rng.normal(0.7, 0.1))
        rec["stand_age"] = float(rng.normal(80.0, 20.0))
        rec["human_footprint"] = float(rng.normal(5.0, 3.0))
    else:
        rec["vegetation_type"] = NON_HABITAT_VEGETATION[rng.integers(len(NON_HABITAT_VEGETATION))]
        rec["canopy_cover"] = float(rng.normal(0.3, 0.15))
        rec["stand_age"] = float(rng.normal(30.0, 20.0))
        rec["human_footprint"] = float(rng.normal(25.0, 10.0))
    rec["disturbance_type"] = ("none", "harvest", "fire", "linear")[rng.integers(4)]
    rec["soil_class"] = ("a", "b", "c")[rng.integers(3)]
    rec["years_since_disturbance"] = float(rng.exponential(20.0))
    for i in range(_N_NUISANCE):
        rec[f"covariate_{i:02d}"] = float(rng.normal())
    return {name: rec[name] for name in VARIABLE_KINDS}


def _song(params: SynthParams, rng: np.random.Generator, n: int) -> np.ndarray:
    sr = params.sample_rate
    step = int(round(params.song_duration * sr / len(params.song_frequencies)))
    total = step * len(params.song_frequencies)
    onset = int(rng.integers(0, n - total + 1))
    t = np.arange(step) / sr
    ramp = min(step // 8, int(0.005 * sr))
    env = np.ones(step)
    if ramp > 0:
        fade = 0.5 - 0.5 * np.cos(np.pi * np.arange(ramp) / ramp)
        env[:ramp] = fade
        env[-ramp:] = fade[::-1]
    out = np.zeros(n)
    for j, f in enumerate(params.song_frequencies):
        start = onset + j * step
        out[start : start + step] = params.song_amplitude * env * np.sin(2 * np.pi * f * t)
    return out


def synthesize_clip(params: SynthParams, index: int, stratum: str) -> tuple[dict[str, object], AudioClip]:
    """Conditions and 16-bit-quantized audio for one clip, from its own seed."""
    rng = np.random.default_rng([params.seed, index])
    if stratum == ABSENT_NON_HABITAT:
        suitable = params.overlap > 0 and rng.random() < params.overlap
    else:
        suitable = True
    cond = _conditions(rng, suitable)
    n = int(round(params.clip_duration * params.sample_rate))
    x = rng.normal(0.0, params.noise_level, n)
    if stratum == PRESENT:
        x = x + _song(params, rng, n)
    q = quantize(x).astype(np.float64) / 32768.0
    return cond, AudioClip(q, params.sample_rate)


def generate_corpus(params: SynthParams, spectrogram: SpectrogramConfig | None = SpectrogramConfig()) -> Corpus:
    """Balanced corpus; pass ``spectrogram=None`` to skip image rendering."""
    params.validate()
    half = params.clip_count // 2
    n_suitable = int(round(params.suitable_negative_fraction * half))
    strata = [PRESENT] * half + [ABSENT_SUITABLE] * n_suitable + [ABSENT_NON_HABITAT] * (half - n_suitable)
    order = np.random.default_rng([params.seed, 0xC0FFEE]).permutation(params.clip_count)
    records = []
    for index, pos in enumerate(order):
        stratum = strata[pos]
        cond, clip = synthesize_clip(params, index, stratum)
        image = clip_to_image(clip, spectrogram) if spectrogram is not None else None
        records.append(
            ClipRecord(
                clip_id=f"clip_{index:05d}",
                label=OVENBIRD if stratum == PRESENT else NO_OVENBIRD,
                stratum=stratum,
                conditions=cond,
                spectrogram=image,
                index=index,
            )
        )
    return Corpus(params, records, BayesCeiling(params.suitable_negative_fraction, params.overlap), spectrogram)


@dataclass(frozen=True)
class SplitSpec:
    test_fraction: float = 0.25
    validation_fraction: float = 0.25
    seed: int = 0


def _allocate(counts: Sequence[int], fraction: float) -> list[int]:
    """Per-stratum quotas summing to floor(fraction * total), largest remainder first."""
    target = math.floor(fraction * sum(counts))
    exact = [c * fraction for c in counts]
    quota = [math.floor(e) for e in exact]
    order = sorted(range(len(counts)), key=lambda i: (-(exact[i] - quota[i]), i))
    for i in order[: target - sum(quota)]:
        quota[i] += 1
    return quota


def _stratified_take(rng, pools: list[np.ndarray], fraction: float) -> tuple[list[np.ndarray], list[np.ndarray]]:
    quota = _allocate([len(p) for p in pools], fraction)
    taken, rest = [], []
    for pool, q in zip(pools, quota):
        perm = rng.permutation(len(pool))
        taken.append(np.sort(pool[perm[:q]]))
        rest.append(np.sort(pool[perm[q:]]))
    return taken, rest


def split_indices(labels: Sequence[bool], strata: Sequence[str], spec: SplitSpec = SplitSpec()):
    """Balance classes by down-sampling, then stratified test and validation splits.

    Returns sorted ``(train, validation, test)`` index arrays.
    """
    labels = np.asarray(labels, dtype=bool)
    strata = np.asarray(strata)
    pos = np.flatnonzero(labels)
    neg = np.flatnonzero(~labels)
    if len(pos) == 0 or len(neg) == 0:
        raise DataError("both classes must be present to balance and split")
    rng = np.random.default_rng([spec.seed, 1])
    m = min(len(pos), len(neg))
    if len(pos) > m:
        pos = np.sort(rng.choice(pos, m, replace=False))
    if len(neg) > m:
        neg = np.sort(rng.choice(neg, m, replace=False))
    kept = np.concatenate([pos, neg])
    keys = sorted(set(strata[kept].tolist()), key=lambda s: (STRATA.index(s) if s in STRATA else len(STRATA), s))
    pools = [np.sort(kept[strata[kept] == s]) for s in keys]
    test, rest = _stratified_take(np.random.default_rng([spec.seed, 2]), pools, spec.test_fraction)
    val, train = _stratified_take(np.random.default_rng([spec.seed, 3]), rest, spec.validation_fraction)
    cat = lambda parts: np.sort(np.concatenate(parts))
    return cat(train), cat(val), cat(test)


def balance_and_split(records: Sequence[ClipRecord], spec: SplitSpec = SplitSpec()):
    tr, va, te = split_indices([r.is_positive for r in records], [r.stratum for r in records], spec)
    return [records[i] for i in tr], [records[i] for i in va], [records[i] for i in te]


@dataclass
class Splits:
    train: ClipSet
    validation: ClipSet
    test: ClipSet
    schema: ConditionSchema
    indices: tuple[np.ndarray, np.ndarray, np.ndarray] = field(default=None, repr=False)


def records_to_clipset(records: Sequence[ClipRecord], schema: ConditionSchema, with_images: bool = True) -> ClipSet:
    images = None
    if with_images and records and records[0].spectrogram is not None:
        images = np.stack([r.spectrogram.pixels for r in records]).astype(np.float32)
    return ClipSet(
        labels=np.array([int(r.is_positive) for r in records]),
        images=images,
        conditions=encode_many([r.conditions for r in records], schema),
        strata=np.array([r.stratum for r in records]),
        ids=np.array([r.clip_id for r in records]),
    )


def make_splits(corpus: Corpus, spec: SplitSpec = SplitSpec(), with_images: bool = True) -> Splits:
    """Split the corpus and encode conditions with a schema fit on the training part only."""
    recs = corpus.records
    tr, va, te = split_indices([r.is_positive for r in recs], [r.stratum for r in recs], spec)
    schema = fit_schema([recs[i].conditions for i in tr], VARIABLE_KINDS).require_count()
    sets = [records_to_clipset([recs[i] for i in idx], schema, with_images) for idx in (tr, va, te)]
    return Splits(*sets, schema=schema, indices=(tr, va, te))
