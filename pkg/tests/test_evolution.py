import dataclasses
import math
import zlib

import numpy as np
import pytest

from birdevo.evolution import (
    FitnessRecord,
    EvolutionConfig,
    applicable_moves,
    derive_seed,
    evolve,
    genome_filename,
    load_archive,
    mutate,
    random_genome,
)
from birdevo.genome import (
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
)
from birdevo.network import InputSpec

SPEC = InputSpec((8, 8, 3), 41)


def in_space(g: Genome) -> bool:
    n_conv = 0
    seen_dense = False
    for gene in g.layers:
        if gene.dropout not in DROPOUTS:
            return False
        if gene.kind == "conv":
            if seen_dense or g.column_kind == CONDITIONS:
                return False
            if gene.filter_size not in FILTER_SIZES or gene.filter_count not in FILTER_COUNTS:
                return False
            n_conv += 1
        else:
            seen_dense = True
            if gene.width not in DENSE_WIDTHS:
                return False
    n_dense = len(g.layers) - n_conv
    return 1 <= len(g.layers) and n_conv <= MAX_CONV and n_dense <= MAX_DENSE


class HashEvaluator:
    """Deterministic stand-in for training: accuracy drawn from (genome, seed)."""

    def __call__(self, genome, seeds):
        accs = []
        for s in seeds:
            h = zlib.crc32(genome.to_text().encode() + str(s).encode())
            accs.append(0.5 + (h % 1000) / 2000)
        return accs, [a - 0.01 for a in accs]


class ConstantEvaluator:
    def __call__(self, genome, seeds):
        return [0.6] * len(seeds), [0.6] * len(seeds)


def test_conditions_genomes_never_contain_conv():
    rng = np.random.default_rng(0)
    for _ in range(2000):
        assert not random_genome(CONDITIONS, rng).conv_genes


def test_random_genomes_validate_10k():
    rng = np.random.default_rng(1)
    kinds = set()
    for i in range(10_000):
        g = random_genome(SPECTROGRAM if i % 2 else CONDITIONS, rng)
        assert in_space(g)
        kinds.add((len(g.conv_genes), len(g.dense_genes)))
    assert kinds >= {(4, 4), (0, 1)}


def test_random_genome_is_seed_deterministic():
    a = random_genome(SPECTROGRAM, np.random.default_rng(42))
    b = random_genome(SPECTROGRAM, np.random.default_rng(42))
    assert a == b


def test_move_applicability():
    full = Genome(SPECTROGRAM, [LayerGene.conv(3, 2)] * 4 + [LayerGene.dense(10)] * 4)
    assert applicable_moves(full) == ["remove", "modify"]
    single = Genome(CONDITIONS, [LayerGene.dense(10)])
    assert applicable_moves(single) == ["add", "modify"]
    cond_full = Genome(CONDITIONS, [LayerGene.dense(10)] * 4)
    assert "add" not in applicable_moves(cond_full)
    rng = np.random.default_rng(3)
    for _ in range(200):
        assert len(mutate(full, rng).layers) <= 8
        assert len(mutate(single, rng).layers) >= 1


def _one_step_apart(a: Genome, b: Genome) -> bool:
    la, lb = list(a.layers), list(b.layers)
    if len(lb) == len(la) + 1:
        return any(lb[:i] + lb[i + 1 :] == la for i in range(len(lb)))
    if len(lb) == len(la) - 1:
        return any(la[:i] + la[i + 1 :] == lb for i in range(len(la)))
    if len(la) != len(lb):
        return False
    diff = [i for i in range(len(la)) if la[i] != lb[i]]
    if len(diff) != 1:
        return False
    ga, gb = la[diff[0]], lb[diff[0]]
    changed = [f.name for f in dataclasses.fields(ga) if getattr(ga, f.name) != getattr(gb, f.name)]
    return ga.kind == gb.kind and len(changed) == 1


def test_mutations_valid_and_single_step_10k():
    rng = np.random.default_rng(7)
    for i in range(10_000):
        g = random_genome(SPECTROGRAM if i % 2 else CONDITIONS, rng)
        child = mutate(g, rng)
        assert in_space(child)
        assert child.column_kind == g.column_kind
        assert _one_step_apart(g, child)


def test_constant_fitness_stops_after_three_generations():
    # accuracy-only fitness with a constant evaluator makes fitness itself constant
    cfg = EvolutionConfig.preset("accuracy", seed=0, stall_limit=2)
    arch = evolve(cfg, ConstantEvaluator(), SPECTROGRAM, SPEC)
    assert arch.best_trace == [0.6, 0.6, 0.6]
    assert arch.generations == 3
    assert len(arch.records) == 3 * 8


def test_survivors_plus_offspring():
    cfg = EvolutionConfig(seed=4, stall_limit=10)
    assert cfg.survivors == math.ceil(0.25 * 8) == 2
    arch = evolve(cfg, HashEvaluator(), SPECTROGRAM, SPEC)
    assert arch.generations == 10
    for g in range(1, arch.generations):
        gen = arch.generation(g)
        assert len(gen) == 8
        assert sum(r.carried for r in gen) == 2
        prev = sorted(arch.generation(g - 1), key=FitnessRecord.rank_key)[:2]
        carried = [r for r in gen if r.carried]
        assert [r.genome for r in carried] == [r.genome for r in prev]
        assert [r.accuracies for r in carried] == [r.accuracies for r in prev]


@pytest.mark.parametrize("seed", range(5))
def test_trace_non_decreasing_and_genomes_valid(seed):
    arch = evolve(EvolutionConfig(seed=seed), HashEvaluator(), SPECTROGRAM, SPEC)
    assert all(b >= a for a, b in zip(arch.best_trace, arch.best_trace[1:]))
    assert arch.generations <= 10
    assert all(in_space(r.genome) for r in arch.records)
    assert all(len(r.accuracies) == 4 for r in arch.records)


def test_fitness_presets():
    assert EvolutionConfig.preset("accuracy").fitness(0.8, 10**6) == 0.8
    assert EvolutionConfig.preset("size").fitness(0.8, 999) == pytest.approx(-0.03)
    assert EvolutionConfig().fitness(0.8, 99) == pytest.approx(0.78)


def test_repeat_seeds_are_distinct_and_stable():
    seeds = {derive_seed(3, g, i, r) for g in range(10) for i in range(8) for r in range(4)}
    assert len(seeds) == 320
    assert derive_seed(3, 1, 2, 3) == derive_seed(3, 1, 2, 3)


def test_workers_give_identical_archive(tmp_path):
    cfg = EvolutionConfig(seed=11)
    a = evolve(cfg, HashEvaluator(), SPECTROGRAM, SPEC, workers=1)
    b = evolve(cfg, HashEvaluator(), SPECTROGRAM, SPEC, workers=4)
    a.to_csv(tmp_path / "a.csv")
    b.to_csv(tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    assert [r.genome for r in a.records] == [r.genome for r in b.records]


def test_archive_save_and_load(tmp_path):
    arch = evolve(EvolutionConfig(seed=2), HashEvaluator(), CONDITIONS, SPEC)
    arch.save(tmp_path)
    header = (tmp_path / "archive.csv").read_text().splitlines()[0]
    assert header.startswith("generation,individual,params,acc_r1,acc_r2,acc_r3,acc_r4,mean_acc,fitness")
    assert (tmp_path / "genomes" / genome_filename(0, 7)).exists()
    back = load_archive(tmp_path)
    assert [r.genome for r in back] == [r.genome for r in arch.records]
    assert [r.carried for r in back] == [r.carried for r in arch.records]
    assert [r.accuracies for r in back] == [r.accuracies for r in arch.records]


def test_cannot_evolve_combined():
    with pytest.raises(ValueError):
        evolve(EvolutionConfig(), ConstantEvaluator(), "combined", SPEC)
