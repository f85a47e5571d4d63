"""Architecture genomes and their line-oriented text format.

A column genome is an ordered list of layer genes, conv genes first.  The
search space is small and fixed:

* conv filter size 3, 5 or 7 with 2, 16 or 32 filters
* dense widths 10, 50 or 100
* dropout 0, 0.05, 0.1, 0.15 or 0.2 after any layer
* at most four conv and four dense genes per column

Text format, one gene per line after a ``column=`` header::

    column=spectrogram
    conv k=3 f=16 drop=0.1
    dense w=50 drop=0

Combined genomes add ``part=`` markers for the two columns and the head.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Union

from .errors import GenomeError

FILTER_SIZES = (3, 5, 7)
FILTER_COUNTS = (2, 16, 32)
DENSE_WIDTHS = (10, 50, 100)
DROPOUTS = (0.0, 0.05, 0.1, 0.15, 0.2)
MAX_CONV = 4
MAX_DENSE = 4

SPECTROGRAM = "spectrogram"
CONDITIONS = "conditions"
COMBINED = "combined"
COLUMN_KINDS = (SPECTROGRAM, CONDITIONS)

_DROP_TEXT = {0.0: "0", 0.05: "0.05", 0.1: "0.1", 0.15: "0.15", 0.2: "0.2"}
_TEXT_DROP = {v: k for k, v in _DROP_TEXT.items()}


@dataclass(frozen=True)
class LayerGene:
    kind: str  # "conv" or "dense"
    filter_size: int | None = None
    filter_count: int | None = None
    width: int | None = None
    dropout: float = 0.0

    @classmethod
    def conv(cls, k: int, f: int, dropout: float = 0.0) -> "LayerGene":
        return cls("conv", filter_size=k, filter_count=f, dropout=dropout)

    @classmethod
    def dense(cls, w: int, dropout: float = 0.0) -> "LayerGene":
        return cls("dense", width=w, dropout=dropout)

    def validate(self) -> None:
        if self.dropout not in DROPOUTS:
            raise GenomeError(f"dropout {self.dropout!r} not in {DROPOUTS}")
        if self.kind == "conv":
            if self.filter_size not in FILTER_SIZES:
                raise GenomeError(f"conv filter size {self.filter_size!r} not in {FILTER_SIZES}")
            if self.filter_count not in FILTER_COUNTS:
                raise GenomeError(f"conv filter count {self.filter_count!r} not in {FILTER_COUNTS}")
            if self.width is not None:
                raise GenomeError("conv gene must not carry a dense width")
        elif self.kind == "dense":
            if self.width not in DENSE_WIDTHS:
                raise GenomeError(f"dense width {self.width!r} not in {DENSE_WIDTHS}")
            if self.filter_size is not None or self.filter_count is not None:
                raise GenomeError("dense gene must not carry conv fields")
        else:
            raise GenomeError(f"unknown gene kind {self.kind!r}")

    def to_text(self) -> str:
        drop = _DROP_TEXT.get(self.dropout)
        if drop is None:
            raise GenomeError(f"dropout {self.dropout!r} not in {DROPOUTS}")
        if self.kind == "conv":
            return f"conv k={self.filter_size} f={self.filter_count} drop={drop}"
        return f"dense w={self.width} drop={drop}"

    @classmethod
    def from_text(cls, line: str) -> "LayerGene":
        parts = line.split()
        if not parts:
            raise GenomeError("empty gene line")
        try:
            fields = dict(p.split("=", 1) for p in parts[1:])
        except ValueError:
            raise GenomeError(f"malformed gene line {line!r}") from None
        try:
            if fields.get("drop") not in _TEXT_DROP:
                raise GenomeError(f"bad dropout in {line!r}")
            drop = _TEXT_DROP[fields.pop("drop")]
            if parts[0] == "conv" and set(fields) == {"k", "f"}:
                gene = cls.conv(int(fields["k"]), int(fields["f"]), drop)
            elif parts[0] == "dense" and set(fields) == {"w"}:
                gene = cls.dense(int(fields["w"]), drop)
            else:
                raise GenomeError(f"malformed gene line {line!r}")
        except ValueError as exc:
            if isinstance(exc, GenomeError):
                raise
            raise GenomeError(f"malformed gene line {line!r}") from None
        gene.validate()
        return gene


@dataclass(frozen=True)
class Genome:
    column_kind: str
    layers: tuple[LayerGene, ...] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))

    @property
    def conv_genes(self) -> tuple[LayerGene, ...]:
        return tuple(g for g in self.layers if g.kind == "conv")

    @property
    def dense_genes(self) -> tuple[LayerGene, ...]:
        return tuple(g for g in self.layers if g.kind == "dense")

    def validate(self) -> "Genome":
        if self.column_kind not in COLUMN_KINDS:
            raise GenomeError(f"unknown column kind {self.column_kind!r}")
        if not self.layers:
            raise GenomeError("genome needs at least one layer gene")
        for g in self.layers:
            g.validate()
        n_conv = len(self.conv_genes)
        if n_conv > MAX_CONV:
            raise GenomeError(f"{n_conv} conv genes exceed the maximum of {MAX_CONV}")
        if len(self.dense_genes) > MAX_DENSE:
            raise GenomeError(f"{len(self.dense_genes)} dense genes exceed the maximum of {MAX_DENSE}")
        if any(g.kind == "conv" for g in self.layers[n_conv:]):
            raise GenomeError("conv genes must precede all dense genes")
        if self.column_kind == CONDITIONS and n_conv:
            raise GenomeError("a conditions column cannot contain conv genes")
        return self

    def to_text(self) -> str:
        lines = [f"column={self.column_kind}"] + [g.to_text() for g in self.layers]
        return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class CombinedGenome:
    """Two columns whose penultimate activations are concatenated into a head.

    ``head`` lists the dense genes between the concatenation and the final
    2-way classifier, which is always appended and never listed.
    """

    spectrogram_column: Genome
    conditions_column: Genome
    head: tuple[LayerGene, ...] = ()

    column_kind = COMBINED

    def __post_init__(self):
        object.__setattr__(self, "head", tuple(self.head))

    def validate(self) -> "CombinedGenome":
        if self.spectrogram_column.column_kind != SPECTROGRAM:
            raise GenomeError("first column of a combined genome must be a spectrogram column")
        if self.conditions_column.column_kind != CONDITIONS:
            raise GenomeError("second column of a combined genome must be a conditions column")
        self.spectrogram_column.validate()
        self.conditions_column.validate()
        if len(self.head) > MAX_DENSE:
            raise GenomeError(f"head has {len(self.head)} genes, more than {MAX_DENSE}")
        for g in self.head:
            g.validate()
            if g.kind != "dense":
                raise GenomeError("head genes must be dense")
        return self

    def to_text(self) -> str:
        lines = [f"column={COMBINED}", f"part={SPECTROGRAM}"]
        lines += [g.to_text() for g in self.spectrogram_column.layers]
        lines.append(f"part={CONDITIONS}")
        lines += [g.to_text() for g in self.conditions_column.layers]
        lines.append("part=head")
        lines += [g.to_text() for g in self.head]
        return "\n".join(lines) + "\n"


AnyGenome = Union[Genome, CombinedGenome]


def parse_genome(text: str) -> AnyGenome:
    lines = [ln.strip() for ln in text.splitlines() if ln.strip()]
    if not lines or not lines[0].startswith("column="):
        raise GenomeError("genome text must start with a column= header")
    kind = lines[0].split("=", 1)[1]
    if kind in COLUMN_KINDS:
        return Genome(kind, [LayerGene.from_text(ln) for ln in lines[1:]]).validate()
    if kind != COMBINED:
        raise GenomeError(f"unknown column kind {kind!r}")
    parts: dict[str, list[LayerGene]] = {}
    current = None
    for ln in lines[1:]:
        if ln.startswith("part="):
            current = ln.split("=", 1)[1]
            if current not in (SPECTROGRAM, CONDITIONS, "head") or current in parts:
                raise GenomeError(f"bad or repeated part marker {ln!r}")
            parts[current] = []
        elif current is None:
            raise GenomeError("gene line before any part= marker")
        else:
            parts[current].append(LayerGene.from_text(ln))
    if set(parts) != {SPECTROGRAM, CONDITIONS, "head"}:
        raise GenomeError("combined genome needs spectrogram, conditions and head parts")
    return CombinedGenome(
        Genome(SPECTROGRAM, parts[SPECTROGRAM]),
        Genome(CONDITIONS, parts[CONDITIONS]),
        parts["head"],
    ).validate()


def read_genome(path: str | Path) -> AnyGenome:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise GenomeError(f"cannot read genome file {path}: {exc.strerror}") from None
    return parse_genome(text)


def write_genome(genome: AnyGenome, path: str | Path) -> None:
    Path(path).write_text(genome.to_text())
