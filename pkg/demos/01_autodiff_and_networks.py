"""Tape autodiff, genomes and the networks they materialize.

Run: python demos/01_autodiff_and_networks.py
"""
import numpy as np

from birdevo import autodiff as ad
from birdevo.genome import CONDITIONS, SPECTROGRAM, Genome, LayerGene, parse_genome
from birdevo.network import InputSpec, build_network, count_params

# %% a tiny graph, recorded on a tape and differentiated in reverse
x = ad.Tensor(np.array([[1.0, -2.0, 3.0]]), requires_grad=True)
w = ad.Tensor(np.array([[0.5, -1.0], [0.25, 0.0], [1.0, 1.0]]), requires_grad=True)
b = ad.Tensor(np.zeros(2), requires_grad=True)
y = np.array([[0.0, 1.0]])
with ad.Tape() as tape:
    loss = ad.softmax_cross_entropy(ad.relu(ad.dense(x, w, b)), y)
tape.backward(loss)
print("loss", float(loss.data))
print("dL/dw\n", w.grad)

# outside a tape nothing is recorded
z = ad.dense(x, w, b)
print("recorded without tape:", z.requires_grad)

# %% central differences agree with the tape (float64)
err = ad.grad_check(lambda x, w, b: ad.softmax_cross_entropy(ad.relu(ad.dense(x, w, b)), y), [x, w, b])
print(f"worst relative error vs finite differences: {err:.2e}")

# %% genomes are lists of layer genes, the 2-way head is implicit
g = Genome(SPECTROGRAM, [LayerGene.conv(3, 16), LayerGene.conv(5, 32, dropout=0.1), LayerGene.dense(50)])
print(g.to_text())
assert parse_genome(g.to_text()) == g

spec = InputSpec((32, 32, 3), 41)
net = build_network(g, spec, seed=0)
print("params:", count_params(g, spec), "materialized:", sum(p.size for p in net.parameters()))
for name, p in net.named_parameters():
    print(f"  {name:24s} {p.shape}")

# %% forward pass on random images gives class probabilities
imgs = np.random.default_rng(1).random((4, 32, 32, 3), dtype=np.float32)
print(net.predict_proba(images=imgs).round(3))

cond = build_network(Genome(CONDITIONS, [LayerGene.dense(10)]), spec, seed=0)
print("conditions net params:", cond.parameter_count())
