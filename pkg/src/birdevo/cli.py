"""Command-line pipeline: synth, spectrogram, evolve, train, combine, eval, report.

Each command writes into a temporary sibling directory and renames it into
place only after it succeeds.  Exit codes: 0 success, 1 usage or config
error, 2 data error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import os
import shutil
import sys
import tempfile
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from . import __version__
from .conditions import encode_many, fit_schema, read_table, write_table
from .config import RunConfig, _parse_head, dump_config, load_config
from .errors import BirdevoError, DataError, GenomeError
from .evaluation import SERIES, archive_points, bucket_report, confusion
from .evolution import FITNESS_PRESETS, Archive, EvolutionConfig, FitnessRecord, TrainingEvaluator, evolve, load_archive
from .genome import COMBINED, CONDITIONS, SPECTROGRAM, CombinedGenome, read_genome
from .network import InputSpec, build_network, count_params, load_weights, save_weights
from .spectrogram import clip_to_image, read_wav, write_png, write_wav
from .synthesis import NO_OVENBIRD, OVENBIRD, STRATA, VARIABLE_KINDS, generate_corpus, split_indices, synthesize_clip
from .training import ClipSet, accuracy, train

MANIFEST_FIELDS = ["clip_id", "label", "stratum", "wav_path", "conditions_row"]


class UsageError(BirdevoError):
    exit_code = 1


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


@contextmanager
def staged_dir(target: Path):
    """Yield a scratch directory that replaces ``target`` on success."""
    target = Path(target)
    target.parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=f".{target.name}.tmp-", dir=target.parent))
    try:
        yield tmp
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    old = None
    if target.exists():
        old = target.with_name(f".{target.name}.old-{os.getpid()}")
        os.rename(target, old)
    os.rename(tmp, target)
    if old is not None:
        shutil.rmtree(old, ignore_errors=True)


# --- data access ------------------------------------------------------------


def read_manifest(data_dir: Path) -> list[dict[str, str]]:
    path = data_dir / "manifest.csv"
    try:
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames != MANIFEST_FIELDS:
                raise DataError(f"{path}: header must be {','.join(MANIFEST_FIELDS)}")
            rows = list(reader)
    except OSError as exc:
        raise DataError(f"cannot read manifest {path}: {exc.strerror}") from None
    if not rows:
        raise DataError(f"{path}: manifest lists no clips")
    return rows


def load_splits(cfg: RunConfig, need_images: bool):
    """Train/validation/test ClipSets plus the training-split schema."""
    data_dir = Path(cfg.paths.data_dir)
    rows = read_manifest(data_dir)
    table = read_table(data_dir / "conditions.csv", VARIABLE_KINDS)
    try:
        records = [table[int(r["conditions_row"])] for r in rows]
    except (IndexError, ValueError):
        raise DataError("manifest conditions_row points outside the condition table") from None
    labels = np.array([r["label"] == OVENBIRD for r in rows])
    if any(r["label"] not in (OVENBIRD, NO_OVENBIRD) for r in rows):
        raise DataError("manifest labels must be 'ovenbird' or 'no-ovenbird'")
    strata = np.array([r["stratum"] for r in rows])
    if set(strata.tolist()) - set(STRATA):
        raise DataError(f"manifest strata must be among {STRATA}")
    ids = np.array([r["clip_id"] for r in rows])
    images = None
    if need_images:
        npz = data_dir / "spectrograms" / "images.npz"
        if not npz.exists():
            raise DataError(f"{npz} not found; run the spectrogram command first")
        with np.load(npz) as z:
            if list(z["clip_ids"]) != list(ids):
                raise DataError(f"{npz} does not match the manifest clip order")
            images = z["images"].astype(np.float32)
    tr, va, te = split_indices(labels, strata, cfg.split)
    schema = fit_schema([records[i] for i in tr], VARIABLE_KINDS).require_count()
    full = ClipSet(labels.astype(int), images, encode_many(records, schema), strata, ids)
    return full.subset(tr), full.subset(va), full.subset(te), schema


def input_spec(sets: ClipSet) -> InputSpec:
    image_shape = None if sets.images is None else tuple(sets.images.shape[1:])
    return InputSpec(image_shape, sets.conditions.shape[1])


def _needs_images(genome) -> bool:
    return genome.column_kind in (SPECTROGRAM, COMBINED)


# --- commands ---------------------------------------------------------------


def cmd_synth(cfg: RunConfig, args) -> None:
    params = cfg.synthesis.validate()
    corpus = generate_corpus(params, spectrogram=None)
    with staged_dir(Path(cfg.paths.data_dir)) as out:
        (out / "wav").mkdir()
        with open(out / "manifest.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(MANIFEST_FIELDS)
            for row, rec in enumerate(corpus.records):
                wav = f"wav/{rec.clip_id}.wav"
                write_wav(out / wav, synthesize_clip(params, rec.index, rec.stratum)[1])
                w.writerow([rec.clip_id, rec.label, rec.stratum, wav, row])
        write_table(out / "conditions.csv", [{"clip_id": r.clip_id, **r.conditions} for r in corpus.records], ["clip_id", *VARIABLE_KINDS])
        (out / "config.txt").write_text(dump_config(cfg))
        (out / "ceiling.txt").write_text(f"conditions_only_ceiling = {corpus.ceiling.value!r}\n")
    print(f"wrote {len(corpus)} clips to {cfg.paths.data_dir} (conditions-only ceiling {corpus.ceiling.value:.4f})")


def cmd_spectrogram(cfg: RunConfig, args) -> None:
    data_dir = Path(cfg.paths.data_dir)
    rows = read_manifest(data_dir)
    images = []
    with staged_dir(data_dir / "spectrograms") as out:
        if args.png:
            (out / "png").mkdir()
        for r in rows:
            img = clip_to_image(read_wav(data_dir / r["wav_path"]), cfg.spectrogram)
            images.append(img.pixels)
            if args.png:
                write_png(out / "png" / f"{r['clip_id']}.png", img)
        np.savez(out / "images.npz", images=np.stack(images), clip_ids=np.array([r["clip_id"] for r in rows]))
    print(f"rendered {len(rows)} spectrograms of shape {images[0].shape}")


def cmd_evolve(cfg: RunConfig, args) -> None:
    column = args.column
    evo = cfg.evolution
    if args.fitness:
        w_acc, w_size = FITNESS_PRESETS[args.fitness]
        evo = dataclasses.replace(evo, w_acc=w_acc, w_size=w_size)
    train_set, val_set, test_set, schema = load_splits(cfg, need_images=column == SPECTROGRAM)
    spec = input_spec(train_set)
    evaluator = TrainingEvaluator(train_set, val_set, test_set, spec, cfg.train)
    workers = args.workers or cfg.workers
    archive = evolve(evo, evaluator, column, spec, workers=workers, log=print if args.verbose else None)
    with staged_dir(Path(cfg.paths.run_dir) / f"evolve_{column}") as out:
        archive.save(out)
        schema.save(out / "schema.txt")
    best = archive.best()
    print(
        f"{archive.generations} generations, best fitness {best.fitness:.4f}: "
        f"{best.params} params, mean test accuracy {best.mean_accuracy:.4f}"
    )


def _train_and_save(cfg: RunConfig, genome, out_name: str, network_hook=None) -> None:
    train_set, val_set, test_set, schema = load_splits(cfg, need_images=_needs_images(genome))
    spec = input_spec(train_set)
    net = build_network(genome, spec, seed=cfg.train.seed)
    if network_hook:
        network_hook(net)
    net, history = train(net, train_set, val_set, cfg.train)
    test_acc = accuracy(net, test_set)
    val_acc = accuracy(net, val_set)
    with staged_dir(Path(cfg.paths.run_dir) / out_name) as out:
        (out / "model.genome").write_text(genome.to_text())
        save_weights(net, out / "weights.enw")
        history.to_csv(out / "history.csv")
        schema.save(out / "schema.txt")
        archive = Archive(genome.column_kind, EvolutionConfig(repeats=1, seed=cfg.seed))
        archive.records.append(
            FitnessRecord(genome, count_params(genome, spec), [test_acc], [val_acc], cfg.evolution.fitness(test_acc, count_params(genome, spec)))
        )
        archive.to_csv(out / "archive.csv")
        (out / "genomes").mkdir()
        (out / "genomes" / "g00_i00.genome").write_text(genome.to_text())
    print(f"{out_name}: {net.parameter_count()} params, {len(history)} epochs ({history.stop_reason}), test accuracy {test_acc:.4f}")


def cmd_train(cfg: RunConfig, args) -> None:
    genome = read_genome(args.genome)
    name = args.name or f"train_{Path(args.genome).stem}"
    _train_and_save(cfg, genome, name)


def cmd_combine(cfg: RunConfig, args) -> None:
    spec_g = read_genome(args.spec)
    cond_g = read_genome(args.cond)
    if spec_g.column_kind != SPECTROGRAM or cond_g.column_kind != CONDITIONS:
        raise GenomeError("--spec needs a spectrogram genome and --cond a conditions genome")
    head = _parse_head(args.head) if args.head is not None else cfg.combine.head
    genome = CombinedGenome(spec_g, cond_g, head).validate()
    freeze = args.freeze_columns or cfg.combine.freeze_columns
    hook = None
    if freeze:
        if not (args.spec_weights and args.cond_weights):
            raise UsageError("--freeze-columns needs --spec-weights and --cond-weights")

        def hook(net):
            s_net = load_weights(build_network(spec_g, net.spec), args.spec_weights)
            c_net = load_weights(build_network(cond_g, net.spec), args.cond_weights)
            net.load_columns_from(s_net, c_net)
            net.freeze_columns()

    _train_and_save(cfg, genome, args.name or "combined", hook)


def cmd_eval(cfg: RunConfig, args) -> None:
    if args.baseline:
        _, _, test_set, _ = load_splits(cfg, need_images=False)
        preds = np.ones(len(test_set), dtype=int)
        name = args.name or "eval_majority"
    else:
        if not args.model:
            raise UsageError("eval needs --model DIR or --baseline majority")
        model_dir = Path(args.model)
        genome = read_genome(model_dir / "model.genome")
        _, _, test_set, _ = load_splits(cfg, need_images=_needs_images(genome))
        net = load_weights(build_network(genome, input_spec(test_set)), model_dir / "weights.enw")
        images = test_set.images if SPECTROGRAM in net.inputs else None
        conditions = test_set.conditions if CONDITIONS in net.inputs else None
        preds = net.predict(images, conditions)
        name = args.name or f"eval_{model_dir.name}"
    conf = confusion(preds, test_set.labels, test_set.strata)
    with staged_dir(Path(cfg.paths.run_dir) / name) as out:
        conf.to_csv(out)
    print(f"{name}: overall accuracy {conf.accuracy:.4f} on {conf.total} test clips")


def cmd_report(cfg: RunConfig, args) -> None:
    run_dir = Path(cfg.paths.run_dir)
    series: dict[str, list] = {s: [] for s in SERIES}
    if run_dir.is_dir():
        for d in sorted(p for p in run_dir.iterdir() if p.is_dir() and not p.name.startswith(".")):
            if not (d / "archive.csv").exists():
                continue
            records = load_archive(d)
            if not records:
                continue
            series[records[0].genome.column_kind].extend(archive_points(records))
    if not any(series.values()):
        raise DataError(f"no archives found under {run_dir}")
    report = bucket_report(series)
    with staged_dir(run_dir / "report") as out:
        report.to_csv(out / "buckets.csv")
        report.to_plot_csv(out / "figure_data.csv")
        (out / "report.txt").write_text(report.to_text())
    print(report.to_text(), end="")


COMMANDS = {
    "synth": cmd_synth,
    "spectrogram": cmd_spectrogram,
    "evolve": cmd_evolve,
    "train": cmd_train,
    "combine": cmd_combine,
    "eval": cmd_eval,
    "report": cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", default="default", help="config file, or 'default'")
    common.add_argument("--seed", type=int, help="master seed (overrides [run] seed)")
    common.add_argument("--data-dir", help="override [paths] data_dir")
    common.add_argument("--run-dir", help="override [paths] run_dir")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = _Parser(prog="birdevo", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("synth", parents=[common], help="generate the synthetic corpus")
    p = sub.add_parser("spectrogram", parents=[common], help="render spectrogram images for the manifest")
    p.add_argument("--png", action="store_true", help="also write PNGs for inspection")
    p = sub.add_parser("evolve", parents=[common], help="evolve one column architecture")
    p.add_argument("--column", required=True, choices=[SPECTROGRAM, CONDITIONS])
    p.add_argument("--workers", type=int)
    p.add_argument("--fitness", choices=["accuracy", "size", "combined"])
    p = sub.add_parser("train", parents=[common], help="train one genome")
    p.add_argument("--genome", required=True)
    p.add_argument("--name")
    p = sub.add_parser("combine", parents=[common], help="build and train a two-column network")
    p.add_argument("--spec", required=True, help="spectrogram column genome")
    p.add_argument("--cond", required=True, help="conditions column genome")
    p.add_argument("--head", help="head genes separated by ';' (overrides [combine] head)")
    p.add_argument("--freeze-columns", action="store_true")
    p.add_argument("--spec-weights")
    p.add_argument("--cond-weights")
    p.add_argument("--name")
    p = sub.add_parser("eval", parents=[common], help="write confusion tables for a trained model")
    p.add_argument("--model", help="directory with model.genome and weights.enw")
    p.add_argument("--baseline", choices=["majority"])
    p.add_argument("--name")
    sub.add_parser("report", parents=[common], help="write accuracy-versus-size bucket tables")
    return parser


def run(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg = dataclasses.replace(cfg, seed=args.seed)
        paths = dataclasses.replace(
            cfg.paths,
            data_dir=args.data_dir or cfg.paths.data_dir,
            run_dir=args.run_dir or cfg.paths.run_dir,
        )
        cfg = dataclasses.replace(cfg, paths=paths).seeded()
        COMMANDS[args.command](cfg, args)
    except BirdevoError as exc:
        print(f"birdevo: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except ValueError as exc:
        print(f"birdevo: error: {exc}", file=sys.stderr)
        return 2
    return 0


def main() -> None:
    sys.exit(run())
