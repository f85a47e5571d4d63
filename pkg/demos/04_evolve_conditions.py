"""Evolve conditions-only networks and bucket the archive by size."""
from pathlib import Path

from birdevo.evaluation import archive_points, bucket_report
from birdevo.evolution import EvolutionConfig, TrainingEvaluator, evolve
from birdevo.genome import CONDITIONS
from birdevo.network import InputSpec
from birdevo.synthesis import SynthParams, generate_corpus, make_splits
from birdevo.training import TrainConfig

out = Path(__file__).parent / "out" / "evolve_conditions"

corpus = generate_corpus(SynthParams(clip_count=600, seed=1), spectrogram=None)
sp = make_splits(corpus, with_images=False)
spec = InputSpec(None, sp.train.conditions.shape[1])

# %% each genome is trained `repeats` times, fitness trades accuracy against log-size
evaluator = TrainingEvaluator(sp.train, sp.validation, sp.test, spec, TrainConfig(max_epochs=20, patience=3))
cfg = EvolutionConfig(seed=1)
archive = evolve(cfg, evaluator, CONDITIONS, spec, log=print)
best = archive.best()
print(f"\n{archive.generations} generations; best fitness trace {[round(f, 4) for f in archive.best_trace]}")
print("best genome:\n" + best.genome.to_text())
print(f"{best.params} params, mean test accuracy {best.mean_accuracy:.3f}")

# %% archive on disk, then a size-bucketed summary
archive.save(out)
report = bucket_report({CONDITIONS: archive_points(archive.records)})
print(report.to_text())
