"""Mutation-only evolutionary search over column architectures.

Each generation is ranked by fitness; the top quarter survives unchanged
and the rest of the population is refilled with single mutations of
uniformly chosen survivors.  Every random draw comes from a generator keyed
on ``(seed, generation, ...)``, so an archive depends only on config, data
and seed, never on how many worker processes trained the individuals.
"""
from __future__ import annotations

import csv
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .errors import DataError, NumericalError
from .genome import (
    CONDITIONS,
    DENSE_WIDTHS,
    DROPOUTS,
    FILTER_COUNTS,
    FILTER_SIZES,
    MAX_CONV,
    MAX_DENSE,
    SPECTROGRAM,
    Genome,
    LayerGene,
    parse_genome,
    read_genome,
)
from .network import InputSpec, build_network, count_params
from .training import ClipSet, TrainConfig, accuracy, train

_INIT_STREAM = 11
_OFFSPRING_STREAM = 12

FITNESS_PRESETS = {
    "accuracy": (1.0, 0.0),
    "size": (0.0, 0.01),
    "combined": (1.0, 0.01),
}


@dataclass(frozen=True)
class EvolutionConfig:
    population_size: int = 8
    max_generations: int = 10
    parent_fraction: float = 0.25
    stall_limit: int = 2
    repeats: int = 4
    w_acc: float = 1.0
    w_size: float = 0.01
    seed: int = 0

    def __post_init__(self):
        if self.population_size < 2:
            raise ValueError("population_size must be >= 2")
        if not 0 < self.parent_fraction < 1:
            raise ValueError("parent_fraction must lie strictly between 0 and 1")
        if self.repeats < 1 or self.max_generations < 1 or self.stall_limit < 1:
            raise ValueError("repeats, max_generations and stall_limit must be >= 1")

    @property
    def survivors(self) -> int:
        return min(math.ceil(self.parent_fraction * self.population_size), self.population_size - 1)

    @classmethod
    def preset(cls, name: str, **kw) -> "EvolutionConfig":
        w_acc, w_size = FITNESS_PRESETS[name]
        return cls(w_acc=w_acc, w_size=w_size, **kw)

    def fitness(self, mean_accuracy: float, params: int) -> float:
        return self.w_acc * mean_accuracy - self.w_size * math.log10(1 + params)


@dataclass
class FitnessRecord:
    genome: Genome
    params: int
    accuracies: list[float]
    val_accuracies: list[float]
    fitness: float
    generation: int = 0
    individual: int = 0
    carried: bool = False  # survivor copied from the previous generation

    @property
    def mean_accuracy(self) -> float:
        return float(np.mean(self.accuracies))

    @property
    def mean_val_accuracy(self) -> float:
        return float(np.mean(self.val_accuracies))

    def rank_key(self):
        return (-self.fitness, self.params, self.genome.to_text())


@dataclass
class Archive:
    column_kind: str
    config: EvolutionConfig
    records: list[FitnessRecord] = field(default_factory=list)
    best_trace: list[float] = field(default_factory=list)

    @property
    def generations(self) -> int:
        return len(self.best_trace)

    def generation(self, g: int) -> list[FitnessRecord]:
        return [r for r in self.records if r.generation == g]

    def best(self) -> FitnessRecord:
        return min(self.records, key=FitnessRecord.rank_key)

    def unique(self) -> list[FitnessRecord]:
        """One record per distinct individual (survivor copies dropped)."""
        return [r for r in self.records if not r.carried]

    def to_csv(self, path: str | Path) -> None:
        repeats = self.config.repeats
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(
                ["generation", "individual", "params"]
                + [f"acc_r{i + 1}" for i in range(repeats)]
                + ["mean_acc", "fitness", "mean_val_acc"]
            )
            for r in self.records:
                w.writerow(
                    [r.generation, r.individual, r.params]
                    + [repr(a) for a in r.accuracies]
                    + [repr(r.mean_accuracy), repr(r.fitness), repr(r.mean_val_accuracy)]
                )

    def save(self, directory: str | Path) -> None:
        """``archive.csv``, one genome file per record and ``best.genome``."""
        directory = Path(directory)
        gdir = directory / "genomes"
        gdir.mkdir(parents=True, exist_ok=True)
        self.to_csv(directory / "archive.csv")
        for r in self.records:
            (gdir / genome_filename(r.generation, r.individual)).write_text(r.genome.to_text())
        (directory / "best.genome").write_text(self.best().genome.to_text())


def genome_filename(generation: int, individual: int) -> str:
    return f"g{generation:02d}_i{individual:02d}.genome"


def load_archive(directory: str | Path) -> list[FitnessRecord]:
    """Records from a saved archive directory (fitness config is not restored)."""
    directory = Path(directory)
    try:
        with open(directory / "archive.csv", newline="") as fh:
            rows = list(csv.DictReader(fh))
    except OSError as exc:
        raise DataError(f"cannot read archive in {directory}: {exc.strerror}") from None
    out = []
    seen: set[tuple[str, str]] = set()
    for row in rows:
        try:
            g, i = int(row["generation"]), int(row["individual"])
            accs = [float(row[k]) for k in sorted((k for k in row if k.startswith("acc_r")), key=lambda k: int(k[5:]))]
            genome = read_genome(directory / "genomes" / genome_filename(g, i))
            key = (genome.to_text(), row["mean_acc"])
            out.append(
                FitnessRecord(
                    genome,
                    int(row["params"]),
                    accs,
                    [float(row.get("mean_val_acc", "nan"))],
                    float(row["fitness"]),
                    g,
                    i,
                    carried=key in seen,
                )
            )
            seen.add(key)
        except (KeyError, ValueError) as exc:
            raise DataError(f"{directory}/archive.csv: malformed row {row}: {exc}") from None
    return out


# --- genome operators -------------------------------------------------------


def _choice(rng: np.random.Generator, options: Sequence):
    return options[int(rng.integers(len(options)))]


def random_gene(kind: str, rng: np.random.Generator) -> LayerGene:
    if kind == "conv":
        return LayerGene.conv(_choice(rng, FILTER_SIZES), _choice(rng, FILTER_COUNTS), _choice(rng, DROPOUTS))
    return LayerGene.dense(_choice(rng, DENSE_WIDTHS), _choice(rng, DROPOUTS))


def random_genome(column_kind: str, rng: np.random.Generator) -> Genome:
    n_conv = int(rng.integers(0, MAX_CONV + 1)) if column_kind == SPECTROGRAM else 0
    n_dense = int(rng.integers(1, MAX_DENSE + 1))
    layers = [random_gene("conv", rng) for _ in range(n_conv)] + [random_gene("dense", rng) for _ in range(n_dense)]
    return Genome(column_kind, layers).validate()


def _addable(genome: Genome) -> list[str]:
    kinds = []
    if genome.column_kind == SPECTROGRAM and len(genome.conv_genes) < MAX_CONV:
        kinds.append("conv")
    if len(genome.dense_genes) < MAX_DENSE:
        kinds.append("dense")
    return kinds


def applicable_moves(genome: Genome) -> list[str]:
    moves = []
    if _addable(genome):
        moves.append("add")
    if len(genome.layers) > 1:
        moves.append("remove")
    moves.append("modify")
    return moves


_MUTABLE_FIELDS = {
    "conv": {"filter_size": FILTER_SIZES, "filter_count": FILTER_COUNTS, "dropout": DROPOUTS},
    "dense": {"width": DENSE_WIDTHS, "dropout": DROPOUTS},
}


def mutate(genome: Genome, rng: np.random.Generator) -> Genome:
    """Apply exactly one add, remove or single-field modification."""
    layers = list(genome.layers)
    move = _choice(rng, applicable_moves(genome))
    if move == "add":
        kind = _choice(rng, _addable(genome))
        n_conv = len(genome.conv_genes)
        lo, hi = (0, n_conv) if kind == "conv" else (n_conv, len(layers))
        layers.insert(int(rng.integers(lo, hi + 1)), random_gene(kind, rng))
    elif move == "remove":
        del layers[int(rng.integers(len(layers)))]
    else:
        idx = int(rng.integers(len(layers)))
        gene = layers[idx]
        fields = _MUTABLE_FIELDS[gene.kind]
        name = _choice(rng, sorted(fields))
        options = [v for v in fields[name] if v != getattr(gene, name)]
        layers[idx] = replace(gene, **{name: _choice(rng, options)})
    return Genome(genome.column_kind, layers).validate()


# --- evaluation --------------------------------------------------------------


def derive_seed(master: int, generation: int, individual: int, repeat: int) -> int:
    seq = np.random.SeedSequence([master, generation, individual, repeat])
    return int(seq.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))


Evaluator = Callable[[Genome, Sequence[int]], tuple[list[float], list[float]]]


class TrainingEvaluator:
    """Trains a genome once per seed; returns test and validation accuracies.

    A repeat whose training diverges scores 0 on both.
    """

    def __init__(self, train_set: ClipSet, val_set: ClipSet, test_set: ClipSet, spec: InputSpec, config: TrainConfig):
        self.train_set = train_set
        self.val_set = val_set
        self.test_set = test_set
        self.spec = spec
        self.config = config

    def __call__(self, genome: Genome, seeds: Sequence[int]) -> tuple[list[float], list[float]]:
        test_acc, val_acc = [], []
        for s in seeds:
            net = build_network(genome, self.spec, seed=s)
            try:
                train(net, self.train_set, self.val_set, replace(self.config, seed=s))
            except NumericalError:
                test_acc.append(0.0)
                val_acc.append(0.0)
                continue
            test_acc.append(accuracy(net, self.test_set))
            val_acc.append(accuracy(net, self.val_set))
        return test_acc, val_acc


_worker_evaluator: Evaluator | None = None


def _init_worker(evaluator: Evaluator) -> None:
    global _worker_evaluator
    os.environ.setdefault("OPENBLAS_NUM_THREADS", "1")
    _worker_evaluator = evaluator


def _run_task(args):
    genome_text, seeds = args
    return _worker_evaluator(parse_genome(genome_text), seeds)


def evolve(
    config: EvolutionConfig,
    evaluator: Evaluator,
    column_kind: str,
    spec: InputSpec,
    workers: int = 1,
    log: Callable[[str], None] | None = None,
) -> Archive:
    """Run the search; ``evaluator`` maps (genome, repeat seeds) to accuracies."""
    if column_kind not in (SPECTROGRAM, CONDITIONS):
        raise ValueError(f"cannot evolve a {column_kind!r} column")
    archive = Archive(column_kind, config)
    init_rng = np.random.default_rng([config.seed, 0, _INIT_STREAM])
    genomes = [random_genome(column_kind, init_rng) for _ in range(config.population_size)]
    carried: list[FitnessRecord] = []
    pool = ProcessPoolExecutor(workers, initializer=_init_worker, initargs=(evaluator,)) if workers > 1 else None
    try:
        stall = 0
        best_so_far = -math.inf
        for gen in range(config.max_generations):
            offset = len(carried)
            tasks = [
                (g.to_text(), [derive_seed(config.seed, gen, offset + i, r) for r in range(config.repeats)])
                for i, g in enumerate(genomes)
            ]
            if pool is None:
                results = [evaluator(g, seeds) for g, (_, seeds) in zip(genomes, tasks)]
            else:
                results = list(pool.map(_run_task, tasks))
            fresh = []
            for i, (g, (test_acc, val_acc)) in enumerate(zip(genomes, results)):
                params = count_params(g, spec)
                fresh.append(
                    FitnessRecord(g, params, list(test_acc), list(val_acc), config.fitness(float(np.mean(test_acc)), params), gen, offset + i)
                )
            population = carried + fresh
            archive.records.extend(population)
            ranked = sorted(population, key=FitnessRecord.rank_key)
            best = ranked[0].fitness
            archive.best_trace.append(best)
            if log:
                log(f"generation {gen}: best fitness {best:.4f} ({ranked[0].params} params)")
            if best > best_so_far:
                best_so_far = best
                stall = 0
            else:
                stall += 1
            if stall >= config.stall_limit:
                break
            survivors = ranked[: config.survivors]
            child_rng = np.random.default_rng([config.seed, gen + 1, _OFFSPRING_STREAM])
            genomes = [
                mutate(survivors[int(child_rng.integers(len(survivors)))].genome, child_rng)
                for _ in range(config.population_size - len(survivors))
            ]
            carried = [replace(r, generation=gen + 1, individual=i, carried=True) for i, r in enumerate(survivors)]
    finally:
        if pool is not None:
            pool.shutdown()
    return archive
