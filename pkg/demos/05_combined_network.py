"""Spectrogram, conditions and combined networks at a matched size.

Song is kept faint so neither input is enough on its own.  Takes about a
minute.
"""
from birdevo.evaluation import confusion
from birdevo.genome import CONDITIONS, SPECTROGRAM, CombinedGenome, Genome, LayerGene
from birdevo.network import InputSpec, build_network
from birdevo.spectrogram import SpectrogramConfig
from birdevo.synthesis import ABSENT_NON_HABITAT, ABSENT_SUITABLE, PRESENT, SynthParams, generate_corpus, make_splits
from birdevo.training import TrainConfig, train

corpus = generate_corpus(SynthParams(clip_count=2000, song_amplitude=0.03), SpectrogramConfig(width=32, height=32))
sp = make_splits(corpus)
spec = InputSpec(sp.train.images.shape[1:], sp.train.conditions.shape[1])

spec_col = Genome(SPECTROGRAM, [LayerGene.conv(5, 2), LayerGene.dense(10)])
models = {
    "spectrogram": spec_col,
    "conditions": Genome(CONDITIONS, [LayerGene.dense(100)] * 3),
    "combined": CombinedGenome(spec_col, Genome(CONDITIONS, [LayerGene.dense(10)]), [LayerGene.dense(10)]),
}

# %% train each with three seeds and read the test confusion by stratum
print(f"{'model':12s} {'seed':>4s} {'params':>7s} {'acc':>6s} {'present':>8s} {'suitable':>9s} {'non-hab':>8s}")
for name, genome in models.items():
    for seed in range(3):
        net = build_network(genome, spec, seed=seed)
        train(net, sp.train, sp.validation, TrainConfig(seed=seed))
        imgs = sp.test.images if SPECTROGRAM in net.inputs else None
        conds = sp.test.conditions if CONDITIONS in net.inputs else None
        c = confusion(net.predict(imgs, conds), sp.test.labels, sp.test.strata)
        rates = [c.returns_ovenbird_rate(s) for s in (PRESENT, ABSENT_SUITABLE, ABSENT_NON_HABITAT)]
        print(f"{name:12s} {seed:4d} {net.parameter_count():7d} {c.accuracy:6.3f} " + " ".join(f"{r:8.3f}" for r in rates))
# columns: fraction of each stratum labelled as containing the bird
