"""Materialize genomes as executable classifiers.

Every conv and hidden dense layer is followed by relu and then (inverted)
dropout.  A single flatten sits in front of the first dense layer, and a
2-way linear layer feeding softmax closes every network.
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import DataError, GenomeError, ShapeError
from .genome import (
    COMBINED,
    CONDITIONS,
    SPECTROGRAM,
    AnyGenome,
    CombinedGenome,
    Genome,
    LayerGene,
)

N_CLASSES = 2
WEIGHT_MAGIC = b"ENW1"


@dataclass(frozen=True)
class InputSpec:
    image_shape: tuple[int, int, int] | None = None  # (H, W, C)
    condition_length: int | None = None

    def require(self, kind: str) -> None:
        if kind == SPECTROGRAM:
            if self.image_shape is None or min(self.image_shape) < 1:
                raise ShapeError(f"spectrogram column needs positive image extents, got {self.image_shape}")
        elif kind == CONDITIONS:
            if self.condition_length is None or self.condition_length < 1:
                raise ShapeError(f"conditions column needs a positive vector length, got {self.condition_length}")


class _Layer:
    def __init__(self, name: str, weights: Tensor, bias: Tensor, dropout: float, activate: bool):
        self.name = name
        self.weights = weights
        self.bias = bias
        self.dropout = dropout
        self.activate = activate

    def parameters(self) -> list[Tensor]:
        return [self.weights, self.bias]

    def _post(self, y: Tensor, training: bool, rng) -> Tensor:
        if self.activate:
            y = ad.relu(y)
        return ad.dropout(y, self.dropout, rng, training)


class ConvLayer(_Layer):
    def __call__(self, x, training=False, rng=None):
        return self._post(ad.conv2d(x, self.weights, self.bias), training, rng)


class DenseLayer(_Layer):
    def __call__(self, x, training=False, rng=None):
        return self._post(ad.dense(x, self.weights, self.bias), training, rng)


class Column:
    """Layer stack for one input; returns the activation feeding a classifier."""

    def __init__(self, kind: str, layers: list[_Layer], flatten_at: int | None):
        self.kind = kind
        self.layers = layers
        self.flatten_at = flatten_at  # index of first dense layer, None if flatten comes last

    def parameters(self) -> list[Tensor]:
        return [p for layer in self.layers for p in layer.parameters()]

    def __call__(self, x, training=False, rng=None) -> Tensor:
        x = ad._as_tensor(x)
        for i, layer in enumerate(self.layers):
            if i == self.flatten_at and x.data.ndim > 2:
                x = ad.flatten(x)
            x = layer(x, training, rng)
        if x.data.ndim > 2:
            x = ad.flatten(x)
        return x


def _init(rng: np.random.Generator, shape, fan_in: int, dtype) -> Tensor:
    bound = math.sqrt(6.0 / fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape).astype(dtype), requires_grad=True)


def _zeros(n: int, dtype) -> Tensor:
    return Tensor(np.zeros(n, dtype=dtype), requires_grad=True)


def _column_shapes(genome: Genome, spec: InputSpec):
    """(name, weight shape, bias shape, fan_in) per gene, plus the output width."""
    spec.require(genome.column_kind)
    out = []
    if genome.column_kind == SPECTROGRAM:
        h, w, c = spec.image_shape
        width = None
    else:
        width = spec.condition_length
    n_conv = 0
    n_dense = 0
    for gene in genome.layers:
        if gene.kind == "conv":
            k, f = gene.filter_size, gene.filter_count
            out.append((f"conv{n_conv}", (k, k, c, f), (f,), k * k * c))
            c = f
            n_conv += 1
        else:
            if width is None:
                width = h * w * c
            out.append((f"dense{n_dense}", (width, gene.width), (gene.width,), width))
            width = gene.width
            n_dense += 1
    if width is None:
        width = h * w * c
    return out, width


def _build_column(genome: Genome, spec: InputSpec, rng, dtype) -> tuple[Column, int]:
    shapes, width = _column_shapes(genome, spec)
    layers: list[_Layer] = []
    flatten_at = None
    for idx, ((name, wshape, bshape, fan_in), gene) in enumerate(zip(shapes, genome.layers)):
        cls = ConvLayer if gene.kind == "conv" else DenseLayer
        if gene.kind == "dense" and flatten_at is None:
            flatten_at = idx
        layers.append(
            cls(f"{genome.column_kind}.{name}", _init(rng, wshape, fan_in, dtype), _zeros(bshape[0], dtype), gene.dropout, True)
        )
    return Column(genome.column_kind, layers, flatten_at), width


def _dense_stack(prefix: str, genes: Sequence[LayerGene], fan_in: int, rng, dtype) -> tuple[list[DenseLayer], int]:
    layers = []
    for i, gene in enumerate(genes):
        layers.append(
            DenseLayer(f"{prefix}.dense{i}", _init(rng, (fan_in, gene.width), fan_in, dtype), _zeros(gene.width, dtype), gene.dropout, True)
        )
        fan_in = gene.width
    return layers, fan_in


class Network:
    """Executable classifier for a column or combined genome."""

    def __init__(self, genome: AnyGenome, spec: InputSpec, columns: dict[str, Column], head: list[DenseLayer]):
        self.genome = genome
        self.spec = spec
        self.columns = columns
        self.head = head  # hidden head layers then the final 2-way layer
        self.frozen_columns = False

    @property
    def kind(self) -> str:
        return self.genome.column_kind

    @property
    def inputs(self) -> tuple[str, ...]:
        return tuple(self.columns)

    def layers(self) -> Iterator[_Layer]:
        for col in self.columns.values():
            yield from col.layers
        yield from self.head

    def parameters(self) -> list[Tensor]:
        return [p for layer in self.layers() for p in layer.parameters()]

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        out = []
        for layer in self.layers():
            out.append((f"{layer.name}.weights", layer.weights))
            out.append((f"{layer.name}.bias", layer.bias))
        return out

    def trainable_parameters(self) -> list[Tensor]:
        return [p for p in self.parameters() if p.requires_grad]

    def parameter_count(self) -> int:
        return sum(p.size for p in self.parameters())

    def freeze_columns(self, frozen: bool = True) -> None:
        """Exclude column weights from training (combined networks only)."""
        if self.kind != COMBINED:
            raise GenomeError("only combined networks have columns to freeze")
        for col in self.columns.values():
            for p in col.parameters():
                p.requires_grad = not frozen
        self.frozen_columns = frozen

    def load_columns_from(self, spectrogram_net: "Network", conditions_net: "Network") -> None:
        """Copy column weights from trained single-column networks."""
        for name, src in ((SPECTROGRAM, spectrogram_net), (CONDITIONS, conditions_net)):
            dst = self.columns[name].parameters()
            srcp = src.columns[name].parameters()
            if [p.shape for p in dst] != [p.shape for p in srcp]:
                raise ShapeError(f"{name} column of source network does not match the combined genome")
            for d, s in zip(dst, srcp):
                d.data = s.data.astype(d.data.dtype, copy=True)

    def forward(self, images=None, conditions=None, training: bool = False, rng=None) -> Tensor:
        """Logits for a batch; only the inputs this network uses are read."""
        feats = []
        for name, col in self.columns.items():
            x = images if name == SPECTROGRAM else conditions
            if x is None:
                raise ShapeError(f"{self.kind} network needs {name} input")
            feats.append(col(x, training, rng))
        h = feats[0] if len(feats) == 1 else ad.concat(feats, axis=-1)
        for layer in self.head:
            h = layer(h, training, rng)
        return h

    def predict_proba(self, images=None, conditions=None, chunk: int = 256) -> np.ndarray:
        n = len(images) if images is not None else len(conditions)
        out = []
        for start in range(0, n, chunk):
            sl = slice(start, start + chunk)
            logits = self.forward(
                None if images is None else images[sl],
                None if conditions is None else conditions[sl],
            )
            out.append(ad.softmax(logits))
        return np.concatenate(out, axis=0) if out else np.zeros((0, N_CLASSES))

    def predict(self, images=None, conditions=None) -> np.ndarray:
        return self.predict_proba(images, conditions).argmax(axis=1)

    def state(self) -> list[np.ndarray]:
        return [p.data.copy() for p in self.parameters()]

    def set_state(self, arrays: Sequence[np.ndarray]) -> None:
        params = self.parameters()
        if len(arrays) != len(params):
            raise ShapeError(f"expected {len(params)} tensors, got {len(arrays)}")
        for (name, p), a in zip(self.named_parameters(), arrays):
            if a.shape != p.shape:
                raise ShapeError(f"tensor {name}: shape {a.shape} does not match {p.shape}")
            p.data = np.array(a, dtype=p.data.dtype)


def build_network(genome: AnyGenome, spec: InputSpec, seed: int = 0, dtype=np.float32) -> Network:
    """Build a network with fan-in scaled uniform weights drawn from ``seed``."""
    genome.validate()
    rng = np.random.default_rng(seed)
    if isinstance(genome, CombinedGenome):
        scol, sw = _build_column(genome.spectrogram_column, spec, rng, dtype)
        ccol, cw = _build_column(genome.conditions_column, spec, rng, dtype)
        hidden, width = _dense_stack("head", genome.head, sw + cw, rng, dtype)
        columns = {SPECTROGRAM: scol, CONDITIONS: ccol}
    else:
        col, width = _build_column(genome, spec, rng, dtype)
        hidden = []
        columns = {genome.column_kind: col}
    final = DenseLayer(
        "head.out", _init(rng, (width, N_CLASSES), width, dtype), _zeros(N_CLASSES, dtype), 0.0, False
    )
    return Network(genome, spec, columns, hidden + [final])


def count_params(genome: AnyGenome, spec: InputSpec) -> int:
    """Learnable parameter count, including the appended 2-way classifier."""
    genome.validate()

    def column(g: Genome) -> tuple[int, int]:
        shapes, width = _column_shapes(g, spec)
        return sum(math.prod(ws) + bs[0] for _, ws, bs, _ in shapes), width

    if isinstance(genome, CombinedGenome):
        n1, w1 = column(genome.spectrogram_column)
        n2, w2 = column(genome.conditions_column)
        total, width = n1 + n2, w1 + w2
        for gene in genome.head:
            total += (width + 1) * gene.width
            width = gene.width
    else:
        total, width = column(genome)
    return total + (width + 1) * N_CLASSES


def save_weights(network: Network, path: str | Path) -> None:
    chunks = [WEIGHT_MAGIC]
    for p in network.parameters():
        arr = np.ascontiguousarray(p.data, dtype="<f4")
        chunks.append(struct.pack("<I", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(arr.tobytes())
    Path(path).write_bytes(b"".join(chunks))


def read_weight_file(path: str | Path) -> list[np.ndarray]:
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read weights file {path}: {exc.strerror}") from None
    if raw[:4] != WEIGHT_MAGIC:
        raise DataError(f"{path}: bad magic bytes {raw[:4]!r}, expected {WEIGHT_MAGIC!r}")
    pos = 4
    arrays = []
    while pos < len(raw):
        idx = len(arrays)
        if pos + 4 > len(raw):
            raise DataError(f"{path}: truncated header for tensor {idx}")
        (rank,) = struct.unpack_from("<I", raw, pos)
        pos += 4
        if rank > 8 or pos + 4 * rank > len(raw):
            raise DataError(f"{path}: truncated or corrupt extents for tensor {idx}")
        shape = struct.unpack_from(f"<{rank}I", raw, pos)
        pos += 4 * rank
        nbytes = 4 * math.prod(shape)
        if pos + nbytes > len(raw):
            raise DataError(f"{path}: truncated data for tensor {idx} with shape {shape}")
        arrays.append(np.frombuffer(raw, dtype="<f4", count=math.prod(shape), offset=pos).reshape(shape).copy())
        pos += nbytes
    return arrays


def load_weights(network: Network, path: str | Path) -> Network:
    """Fill ``network`` from a weights file; nothing is modified on failure."""
    arrays = read_weight_file(path)
    named = network.named_parameters()
    if len(arrays) != len(named):
        raise DataError(f"{path}: holds {len(arrays)} tensors but the network has {len(named)}")
    for (name, p), a in zip(named, arrays):
        if a.shape != p.shape:
            raise DataError(f"{path}: tensor {name} has shape {a.shape}, network expects {p.shape}")
    network.set_state(arrays)
    return network
