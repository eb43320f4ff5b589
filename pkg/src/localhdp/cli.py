"""Command-line surface: dictionary building, encoding, training, evaluation.

Option precedence is command line > ``--config`` YAML file > built-in
defaults. Set ``LOCALHDP_LOG`` (e.g. ``debug``, ``info``) to control log
verbosity. Every command exits 0 on success and prints a single-line
diagnostic to stderr on failure.
"""

from __future__ import annotations

import concurrent.futures
import dataclasses
import functools
import logging
import os
import sys
from pathlib import Path

import click
import yaml

from . import features, protocol, snapshot
from .corpus import LabeledCorpus, corpus_from_pairs, load_corpus, save_corpus
from .errors import ConfigurationError, LocalHdpError, ParameterError
from .features import FeatureParams
from .hdp import Hyperparams
from .protocol import TeacherConfig
from .registry import Registry, derive_seed

logger = logging.getLogger(__name__)

HYPER_KEYS = ("max_topics", "max_tables", "gamma_top", "alpha0", "eta", "tau0", "kappa")
FEATURE_KEYS = ("voxel_size", "image_width", "support_length")
TEACHER_KEYS = ("tau", "window_factor", "teach_views", "patience")

_CLOUD_SUFFIXES = (".ply", ".xyz", ".txt", ".pts")


def _setup_logging() -> None:
    level_name = os.environ.get("LOCALHDP_LOG", "warning").upper()
    level = getattr(logging, level_name, None)
    if not isinstance(level, int):
        level = logging.WARNING
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


def _fail(message: str) -> "SystemExit":
    print(f"error: {message}", file=sys.stderr)
    return SystemExit(2)


def handle_errors(func):
    @functools.wraps(func)
    def wrapper(*args, **kwargs):
        try:
            return func(*args, **kwargs)
        except LocalHdpError as exc:
            raise _fail(str(exc)) from exc
        except OSError as exc:
            raise _fail(str(exc)) from exc

    return wrapper


def _load_config(path: str | None) -> dict:
    if path is None:
        return {}
    try:
        raw = yaml.safe_load(Path(path).read_text(encoding="utf-8"))
    except yaml.YAMLError as exc:
        raise ConfigurationError(f"config file {path}: {exc}") from exc
    if raw is None:
        return {}
    if not isinstance(raw, dict):
        raise ConfigurationError(f"config file {path} must hold a flat mapping")
    return raw


def _resolve(ctx: click.Context, config: dict, name: str, default):
    """Command line beats config file beats default."""
    source = ctx.get_parameter_source(name)
    if source is not None and source.name == "COMMANDLINE":
        return ctx.params[name]
    if name in config:
        return config[name]
    value = ctx.params.get(name)
    if value is not None:
        return value
    return default


def _build(ctx: click.Context, config: dict, cls, keys) -> object:
    defaults = cls()
    chosen = {key: _resolve(ctx, config, key, getattr(defaults, key)) for key in keys}
    return cls(**chosen)


def _hyper(ctx: click.Context, config: dict) -> Hyperparams:
    defaults = Hyperparams()
    chosen = {key: _resolve(ctx, config, key, getattr(defaults, key)) for key in HYPER_KEYS}
    # an explicit table truncation must hold; the default one follows the
    # topic truncation down so --max-topics alone stays valid
    if "max_tables" not in config and ctx.get_parameter_source("max_tables") is None:
        chosen["max_tables"] = min(defaults.max_tables, chosen["max_topics"])
    return Hyperparams(**chosen)


def _feature_params(ctx: click.Context, config: dict) -> FeatureParams:
    return _build(ctx, config, FeatureParams, FEATURE_KEYS)


def hyper_options(func):
    func = click.option("--max-topics", type=int, help="Topic truncation per category.")(func)
    func = click.option("--eta", type=float, help="Topic Dirichlet prior.")(func)
    func = click.option("--tau0", type=float, help="Learning-rate offset.")(func)
    func = click.option("--kappa", type=float, help="Learning-rate exponent in (0.5, 1].")(func)
    return func


def common_options(func):
    func = click.option("--seed", type=int, default=0, show_default=True)(func)
    func = click.option(
        "--config", "config_path", type=click.Path(exists=True, dir_okay=False),
        help="YAML file with flat option defaults.",
    )(func)
    return func


@click.group()
def main() -> None:
    """Train and evaluate per-category topic models of 3D object views."""
    _setup_logging()


def _iter_cloud_files(root: Path):
    if root.is_file():
        yield root
        return
    for path in sorted(root.rglob("*")):
        if path.is_file() and path.suffix.lower() in _CLOUD_SUFFIXES:
            yield path


@main.command("build-dict")
@click.argument("clouds_dir", type=click.Path(exists=True))
@click.option("--dict", "dict_path", required=True, type=click.Path(), help="Output file.")
@click.option("--dict-size", type=int, required=True, help="Vocabulary size V.")
@click.option("--voxel-size", type=float)
@click.option("--image-width", type=int)
@click.option("--support-length", type=float)
@common_options
@click.pass_context
@handle_errors
def cmd_build_dict(ctx, clouds_dir, dict_path, dict_size, voxel_size, image_width,
                   support_length, seed, config_path):
    """Pool spin images from all clouds and cluster them into a vocabulary."""
    config = _load_config(config_path)
    params = _feature_params(ctx, config)
    seed = _resolve(ctx, config, "seed", 0)
    if dict_size < 1:
        raise ParameterError(f"dict-size must be >= 1, got {dict_size}")

    descriptors = []
    for path in _iter_cloud_files(Path(clouds_dir)):
        try:
            cloud = features.load_point_cloud(path)
        except LocalHdpError as exc:
            logger.warning("skipping %s: %s", path, exc)
            continue
        descriptors.extend(features.extract_descriptors(cloud, params))
    if not descriptors:
        raise ConfigurationError(f"no descriptors could be computed under {clouds_dir}")
    dictionary = features.build_dictionary(descriptors, dict_size, seed, params=params)
    features.save_dictionary(dictionary, dict_path)
    click.echo(
        f"descriptors {len(descriptors)} words {dictionary.size} "
        f"sse {dictionary.sse_history[-1]!r}"
    )


def _label_for_cloud(path: Path, root: Path) -> str | None:
    sidecar = path.with_suffix(".label")
    if sidecar.exists():
        return sidecar.read_text(encoding="utf-8").strip()
    relative = path.relative_to(root)
    if len(relative.parts) > 1:
        return relative.parts[0]
    return None


@main.command("encode")
@click.argument("clouds", type=click.Path(exists=True))
@click.option("--dict", "dict_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "out_path", required=True, type=click.Path())
@handle_errors
def cmd_encode(clouds, dict_path, out_path):
    """Encode point clouds as bag-of-words lines.

    Labels come from the first subdirectory under CLOUDS or from a
    ``<name>.label`` sidecar file.
    """
    dictionary = features.load_dictionary(dict_path)
    root = Path(clouds)
    base = root if root.is_dir() else root.parent
    pairs = []
    for path in _iter_cloud_files(root):
        label = _label_for_cloud(path, base)
        if label is None:
            logger.warning("skipping %s: no subdirectory label or .label sidecar", path)
            continue
        try:
            cloud = features.load_point_cloud(path)
        except LocalHdpError as exc:
            logger.warning("skipping %s: %s", path, exc)
            continue
        descriptors = features.extract_descriptors(cloud, dictionary.params)
        doc = features.encode_bow(
            descriptors, dictionary, source_id=str(path.relative_to(base))
        )
        pairs.append((doc, label))
    if not pairs:
        logger.warning("no clouds encoded under %s", clouds)
        Path(out_path).write_text("", encoding="utf-8")
        return
    corpus = corpus_from_pairs(pairs, dictionary.size)
    save_corpus(corpus, out_path, "bow-text")
    click.echo(f"encoded {len(pairs)} documents over {dictionary.size} words")


def _read_bow(bow: str, dict_size: int | None, dict_path: str | None) -> LabeledCorpus:
    if dict_path is not None:
        dict_size = features.load_dictionary(dict_path).size
    fmt = "bow-binary" if Path(bow).suffix == ".bin" else "bow-text"
    return load_corpus(bow, fmt, dictionary_size=dict_size)


@main.command("train")
@click.option("--bow", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--snapshot", "snapshot_path", required=True, type=click.Path())
@click.option("--dict", "dict_path", type=click.Path(exists=True, dir_okay=False),
              help="Dictionary to embed in the snapshot (also fixes V).")
@click.option("--dict-size", type=int, help="Vocabulary size when no dictionary is given.")
@hyper_options
@common_options
@click.pass_context
@handle_errors
def cmd_train(ctx, bow, snapshot_path, dict_path, dict_size, max_topics, eta, tau0,
              kappa, seed, config_path):
    """Teach every document in the corpus, then write a snapshot."""
    config = _load_config(config_path)
    hyper = _hyper(ctx, config)
    seed = _resolve(ctx, config, "seed", 0)
    corpus = _read_bow(bow, dict_size, dict_path)
    dictionary = features.load_dictionary(dict_path) if dict_path else None

    registry = Registry(corpus.dictionary_size, hyper, seed=seed)
    for doc, label in corpus.documents:
        registry.teach(label, doc)
    snapshot.save_snapshot(registry, snapshot_path, dictionary=dictionary)
    click.echo(
        f"trained {len(registry.labels())} categories on {len(corpus)} documents"
    )


@main.command("classify")
@click.option("--snapshot", "snapshot_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--bow", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "out_path", type=click.Path(), help="Write predictions as TSV.")
@handle_errors
def cmd_classify(snapshot_path, bow, out_path):
    """Predict a category for every document in a bag-of-words file."""
    registry, _ = snapshot.load_snapshot(snapshot_path)
    corpus = _read_bow(bow, registry.dictionary_size, None)
    lines = []
    hits = labeled = 0
    for doc, label in corpus.documents:
        predicted, _ = registry.ask(doc)
        lines.append(f"{doc.source_id}\t{predicted}")
        if label:
            labeled += 1
            hits += int(predicted == label)
    text = "".join(line + "\n" for line in lines)
    if out_path:
        Path(out_path).write_text(text, encoding="utf-8")
    else:
        click.echo(text, nl=False)
    if labeled:
        click.echo(f"accuracy {hits / labeled!r} over {labeled} labeled documents")


@main.command("eval-offline")
@click.option("--bow", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--dict", "dict_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--dict-size", type=int)
@click.option("--folds", type=int, default=10, show_default=True)
@click.option("--permutations", type=int, default=10, show_default=True)
@click.option("--report", "report_path", type=click.Path())
@hyper_options
@common_options
@click.pass_context
@handle_errors
def cmd_eval_offline(ctx, bow, dict_path, dict_size, folds, permutations, report_path,
                     max_topics, eta, tau0, kappa, seed, config_path):
    """Permuted stratified k-fold accuracy over the corpus."""
    config = _load_config(config_path)
    hyper = _hyper(ctx, config)
    seed = _resolve(ctx, config, "seed", 0)
    folds = _resolve(ctx, config, "folds", 10)
    permutations = _resolve(ctx, config, "permutations", 10)
    corpus = _read_bow(bow, dict_size, dict_path)
    mean_acc, per_fold = protocol.run_offline(
        corpus, folds=folds, permutations=permutations, hyper=hyper, seed=seed
    )
    if report_path:
        lines = [f"mean_accuracy {mean_acc!r}", f"folds {folds}", f"permutations {permutations}"]
        lines += [f"fold_{i} {acc!r}" for i, acc in enumerate(per_fold)]
        Path(report_path).write_text("".join(l + "\n" for l in lines), encoding="utf-8")
    click.echo(f"mean accuracy {mean_acc!r} over {len(per_fold)} folds")


def _one_round(args: tuple[LabeledCorpus, TeacherConfig, Hyperparams]):
    corpus, cfg, hyper = args
    return protocol.run_open_ended(corpus, cfg, hyper)


@main.command("eval-openended")
@click.option("--bow", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--dict", "dict_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--dict-size", type=int)
@click.option("--tau", type=float, help="Window-accuracy threshold.")
@click.option("--patience", type=int, help="Asks allowed below threshold before stalling.")
@click.option("--teach-views", type=int, help="Views taught per new category.")
@click.option("--rounds", type=int, default=1, show_default=True)
@click.option("--out", "out_dir", type=click.Path(), help="Directory for reports.")
@hyper_options
@common_options
@click.pass_context
@handle_errors
def cmd_eval_openended(ctx, bow, dict_path, dict_size, tau, patience, teach_views,
                       rounds, out_dir, max_topics, eta, tau0, kappa, seed, config_path):
    """Run the simulated teacher, once or for several independent rounds."""
    config = _load_config(config_path)
    hyper = _hyper(ctx, config)
    seed = _resolve(ctx, config, "seed", 0)
    rounds = _resolve(ctx, config, "rounds", 1)
    if rounds < 1:
        raise ParameterError(f"rounds must be >= 1, got {rounds}")
    base = _build(ctx, config, TeacherConfig, TEACHER_KEYS)
    corpus = _read_bow(bow, dict_size, dict_path)

    configs = [
        dataclasses.replace(base, seed=derive_seed(seed, "round", r) if rounds > 1 else seed)
        for r in range(rounds)
    ]
    jobs = [(corpus, cfg, hyper) for cfg in configs]
    if rounds == 1:
        results = [_one_round(jobs[0])]
    else:
        workers = min(rounds, os.cpu_count() or 1)
        with concurrent.futures.ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_one_round, jobs))

    if out_dir:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        for i, (metrics, trace) in enumerate(results):
            protocol.write_metrics(metrics, out / f"metrics_round{i}.txt")
            protocol.write_trace(trace, out / f"trace_round{i}.tsv")
            protocol.write_curves(trace, out / f"curves_round{i}")
    summary = protocol.summarize_rounds([m for m, _ in results])
    for name, (mean, sd) in summary.items():
        click.echo(f"{name} {mean:.4f} +- {sd:.4f}")


@main.command("export-snapshot")
@click.option("--snapshot", "snapshot_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "out_path", type=click.Path())
@handle_errors
def cmd_export_snapshot(snapshot_path, out_path):
    """Dump a snapshot as lossless text (floats in hex) for debugging."""
    if out_path:
        with Path(out_path).open("w", encoding="utf-8") as handle:
            snapshot.export_snapshot_text(snapshot_path, handle)
    else:
        snapshot.export_snapshot_text(snapshot_path, sys.stdout)


if __name__ == "__main__":
    main()
