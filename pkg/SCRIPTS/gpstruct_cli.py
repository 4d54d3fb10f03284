#!/usr/bin/env python3
"""
GPstruct CLI: train, predict and evaluate GP-prior chain labellers.

Usage:
    gpstruct_cli.py synth --out data --labels 3 --n-train 20 --n-test 20
    gpstruct_cli.py train --data data/train.txt --out runs/a --iterations 2000 --thin 100
    gpstruct_cli.py predict --data data/train.txt --test data/test.txt --out runs/a
    gpstruct_cli.py evaluate --pred runs/a/predictions.txt --gold data/test.txt --out runs/a
    gpstruct_cli.py experiment --data corpus.txt --splits 5 --train-size 50 --test-size 100 --out runs/exp
    gpstruct_cli.py help --section sampling

Every command accepts --config <file.json> (flat dotted keys); flags override
file values and the effective config is written to <out>/effective_config.json.

Exit status: 0 ok, 2 config, 3 data, 4 numerical, 5 sample store, 1 other.
"""

import functools
import json
import logging
import sys
import time
from pathlib import Path
from typing import Optional, Sequence

import click

# Absolute path resolution
SCRIPT_DIR = Path(__file__).resolve().parent
sys.path.insert(0, str(SCRIPT_DIR))

from gpstruct.checkpoint import load_store, save_store
from gpstruct.config import PREDICT_CONFIG, RunConfig, load_run_config
from gpstruct.corpus import (
    Corpus,
    load_corpus,
    read_labels,
    serialize_corpus,
    split_experiments,
    write_labels,
)
from gpstruct.errors import CheckpointError, ConfigError, CorpusFormatError, GPStructError
from gpstruct.predict import PredictionResult, error_rate, predict_bma
from gpstruct.report import MetricsReport, SplitMetrics, history_frame, marginals_frame, trace_frame
from gpstruct.sampler import SampleStore, burn_in_filter, run_chain
from gpstruct.synth import FEATURE_MODES, SyntheticChainGenerator, sticky_transitions, transition_counts

STORE_FILE = "store.npz"
TRACE_FILE = "trace.csv"
PREDICTIONS_FILE = "predictions.txt"
MARGINALS_FILE = "marginals.csv"
HISTORY_FILE = "error_history.csv"

KERNEL_NAMES = {"linear": "linear", "se": "squared_exponential"}


def fail(code: str, message: str, status: int = 1):
    click.echo(f"❌ Error [{code}]: {message}", err=True)
    sys.exit(status)


def handle_errors(func):
    """Turn library failures into one stderr line and the matching exit status."""

    @functools.wraps(func)
    def wrapper(*args, **kwargs):
        try:
            return func(*args, **kwargs)
        except GPStructError as e:
            fail(e.code, str(e), e.exit_status)
        except ValueError as e:
            fail("invalid-argument", str(e))
        except OSError as e:
            fail("io", str(e))

    return wrapper


# ==================== OPTIONS AND CONFIG ====================


def _apply(options, func):
    for option in reversed(options):
        func = option(func)
    return func


def chain_options(func):
    return _apply([
        click.option("--config", "config_path", type=click.Path(), help="Config JSON with dotted keys"),
        click.option("--seed", type=int, help="Seed for every random draw"),
        click.option("--data", "train_path", help="Training data file"),
        click.option("--out", "out_dir", help="Output directory"),
        click.option("--kernel", "input_kernel", type=click.Choice(sorted(KERNEL_NAMES)), help="Input kernel"),
        click.option("--gamma", help="SE bandwidth: a number or 'median'"),
        click.option("--hp", "h_p", type=float, help="Pairwise kernel scale h_p"),
        click.option("--jitter", type=float, help="Diagonal jitter on the input Gram matrix"),
        click.option("--iterations", type=int, help="ESS steps"),
        click.option("--thin", type=int, help="Record every N-th f sample"),
        click.option("--hyper-every", type=int, help="Hyperparameter move every N steps"),
        click.option("--burn-in", "burn_in_fraction", type=float, help="Fraction of samples dropped"),
        click.option("--sample-hypers", "hyper_sampling", type=click.Choice(["off", "prior-whitening"])),
        click.option("--debug-loglik", "debug", is_flag=True, help="Recompute the cached log-likelihood every step"),
    ], func)


def predict_options(func):
    return _apply([
        click.option("--scheme", type=click.Choice(["fstar-map", "fstar-sample"]), help="Test latent scheme"),
        click.option("--n-fstar", type=int, help="f* draws per f sample (fstar-sample)"),
        click.option("--loss", type=click.Choice(["hamming", "zero-one"]), help="Decoding loss"),
        click.option("--predict-thin", type=int, help="Use every k-th retained f sample"),
        click.option("--marginals", "write_marginals", is_flag=True, help="Write marginals.csv"),
    ], func)


def build_config(config_path: Optional[str] = None, **flags) -> RunConfig:
    """Config file values overridden by the flags that were given."""
    config = load_run_config(config_path)
    for name in ("hyper_sampling", "scheme", "loss"):
        if flags.get(name) is not None:
            flags[name] = flags[name].replace("-", "_")
    if flags.get("input_kernel") is not None:
        flags["input_kernel"] = KERNEL_NAMES[flags["input_kernel"]]
    gamma = flags.get("gamma")
    if gamma is not None and gamma != "median":
        try:
            flags["gamma"] = float(gamma)
        except ValueError:
            raise ConfigError(f"--gamma must be a number or 'median', got '{gamma}'")
    # Flags only override when set
    for name in ("debug", "write_marginals"):
        if name in flags and not flags[name]:
            flags[name] = None
    if flags.pop("unlabeled_test", False):
        flags["test_labeled"] = False
    return config.override(**flags)


def _require_path(path: Optional[str], what: str) -> Path:
    if path is None:
        raise ConfigError(f"no {what} given")
    path = Path(path)
    if not path.exists():
        raise CorpusFormatError(f"{what} not found: {path}", code="missing-path")
    return path


def load_training(config: RunConfig) -> Corpus:
    return load_corpus(_require_path(config.train_path, "training data"))


def load_test(config: RunConfig, train: Corpus) -> Corpus:
    return load_corpus(
        _require_path(config.test_path, "test data"),
        label_alphabet=train.label_alphabet,
        labeled=config.test_labeled,
        feature_dim=train.feature_dim,
    )


def _corpus_summary(corpus: Corpus) -> str:
    return (
        f"{len(corpus)} sequences, {corpus.n_positions} positions, "
        f"{corpus.n_labels} labels, dim {corpus.feature_dim}"
    )


def corpus_metadata(corpus: Corpus) -> dict:
    return {
        "label_alphabet": list(corpus.label_alphabet),
        "feature_dim": corpus.feature_dim,
        "n_labels": corpus.n_labels,
        "n_positions": corpus.n_positions,
        "n_sequences": len(corpus),
    }


def check_store_matches(store: SampleStore, train: Corpus) -> None:
    expected = corpus_metadata(train)
    for key, value in expected.items():
        if key in store.metadata and store.metadata[key] != value:
            raise CheckpointError(
                f"sample store {key} = {store.metadata[key]!r}, training data has {value!r}",
                code="store-mismatch",
            )


# ==================== WORKFLOW STEPS ====================


def train_chain(config: RunConfig, train: Corpus, out_dir: Path, resume: bool = False) -> SampleStore:
    """Run the sampler, checkpointing <out_dir>/store.npz at every recorded sample."""
    kcfg = config.kernel_config(train)
    ccfg = config.chain_config()
    store_path = out_dir / STORE_FILE

    previous = None
    if resume and store_path.exists():
        previous = load_store(store_path)
        check_store_matches(previous, train)
        click.echo(f"   Resuming from iteration {previous.final_state.iteration}")

    click.echo(f"   Kernel: {kcfg.input_kernel.value}  gamma {kcfg.gamma:.4g}  h_p {kcfg.h_p:.4g}")
    click.echo(
        f"   Chain: {ccfg.n_iterations} iterations, thin {ccfg.thin}, "
        f"hypers {ccfg.hyper_sampling.value}"
    )

    def on_record(store: SampleStore):
        store.metadata.update(corpus_metadata(train))
        save_store(store, store_path)
        state = store.final_state
        click.echo(
            f"   iter {state.iteration:>8}  log_lik {state.log_lik:>12.4f}  "
            f"h_p {state.config.h_p:.4g}  gamma {state.config.gamma:.4g}"
        )

    store = run_chain(train, kcfg, ccfg, resume=previous, on_record=on_record)
    store.metadata.update(corpus_metadata(train))
    save_store(store, store_path)
    trace_frame(store).to_csv(out_dir / TRACE_FILE, index=False, float_format="%.10g")

    state = store.final_state
    if state.hyper_attempts:
        click.echo(
            f"   Hyper moves: {state.hyper_accepts}/{state.hyper_attempts} accepted "
            f"({state.hyper_accepts / state.hyper_attempts:.1%})"
        )
    return store


def predict_split(
    config: RunConfig, store: SampleStore, train: Corpus, test: Corpus, out_dir: Path
) -> PredictionResult:
    """Burn-in filter, BMA prediction, prediction files under out_dir."""
    if len(store) == 0:
        raise CheckpointError(
            "sample store holds no samples (iterations < thin?)", code="empty-store"
        )
    retained = burn_in_filter(store, config.burn_in_fraction)
    click.echo(f"   Burn-in: dropped {len(store) - len(retained)} of {len(store)} samples")

    result = predict_bma(
        retained, train, test,
        scheme=config.scheme,
        n_fstar=config.n_fstar,
        loss=config.loss,
        seed=config.seed,
        predict_thin=config.predict_thin,
    )
    click.echo(f"   BMA: {result.n_f_samples} f samples x {result.n_fstar_samples} f* draws")

    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / PREDICTIONS_FILE).write_text(write_labels(result.labels, train.label_alphabet))
    if config.write_marginals:
        marginals_frame(result, train.label_alphabet).to_csv(
            out_dir / MARGINALS_FILE, index=False, float_format="%.10g"
        )
    if result.history:
        history_frame(result.history).to_csv(
            out_dir / HISTORY_FILE, index=False, float_format="%.10g"
        )
    return result


def evaluate_files(
    pred_paths: Sequence[str], gold_paths: Sequence[str], task: str = "gpstruct"
) -> MetricsReport:
    """One metrics row per (prediction file, gold file) pair."""
    if len(pred_paths) != len(gold_paths):
        raise ConfigError(f"{len(pred_paths)} prediction files vs {len(gold_paths)} gold files")
    report = MetricsReport()
    for split_id, (pred_path, gold_path) in enumerate(zip(pred_paths, gold_paths)):
        with open(_require_path(pred_path, "prediction file"), encoding="utf-8") as f:
            predicted = read_labels(f)
        with open(_require_path(gold_path, "gold file"), encoding="utf-8") as f:
            gold = read_labels(f)
        hamming, zero_one = error_rate(predicted, gold)
        report.splits.append(SplitMetrics(task, split_id, hamming, zero_one))
    return report


# ==================== COMMANDS ====================


@click.group()
@click.option("--verbose", "-v", is_flag=True, help="Debug logging from the library")
def cli(verbose: bool):
    """GPstruct: GP-prior structured prediction for linear chains.

    Elliptical slice sampling of clique latents, prior-whitened
    hyperparameter moves, Bayesian-model-averaged decoding.
    """
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.WARNING,
        format="%(asctime)s %(name)s %(levelname)s: %(message)s",
    )


@cli.command()
@chain_options
@click.option("--resume", is_flag=True, help="Continue from <out>/store.npz if present")
@handle_errors
def train(config_path, resume, **flags):
    """Train: run the sampler and write the sample store."""
    config = build_config(config_path, **flags)
    out_dir = Path(config.out_dir)

    click.echo("🔬 GPstruct Training")
    click.echo("=" * 60)
    train_corpus = load_training(config)
    click.echo(f"📊 Data: {_corpus_summary(train_corpus)}")
    config.write(out_dir)

    store = train_chain(config, train_corpus, out_dir, resume=resume)

    click.echo(f"\n✅ Recorded {len(store)} f samples")
    click.echo(f"💾 Store: {out_dir / STORE_FILE}")
    click.echo(f"💾 Trace: {out_dir / TRACE_FILE}")


@cli.command()
@chain_options
@predict_options
@click.option("--test", "test_path", help="Test data file")
@click.option("--store", "store_path", type=click.Path(), help="Sample store (default <out>/store.npz)")
@click.option("--unlabeled-test", is_flag=True, help="Test file has no label field")
@handle_errors
def predict(config_path, store_path, **flags):
    """Predict: BMA labels for the test file from a trained sample store."""
    config = build_config(config_path, **flags)
    out_dir = Path(config.out_dir)

    click.echo("🔬 GPstruct Prediction")
    click.echo("=" * 60)
    train_corpus = load_training(config)
    test_corpus = load_test(config, train_corpus)
    click.echo(f"📊 Train: {_corpus_summary(train_corpus)}")
    click.echo(f"📊 Test:  {_corpus_summary(test_corpus)}")

    store = load_store(store_path or out_dir / STORE_FILE)
    check_store_matches(store, train_corpus)
    config.write(out_dir, PREDICT_CONFIG)

    start = time.perf_counter()
    result = predict_split(config, store, train_corpus, test_corpus, out_dir)
    runtime = time.perf_counter() - start if config.record_timing else None
    click.echo(f"💾 Predictions: {out_dir / PREDICTIONS_FILE}")

    if test_corpus.is_labeled:
        hamming, zero_one = error_rate(result, test_corpus)
        report = MetricsReport([
            SplitMetrics(config.task, 0, hamming, zero_one, result.n_f_samples, runtime)
        ])
        report.write(out_dir)
        click.echo(f"\n✅ Hamming error: {hamming:.2%}   0/1 error: {zero_one:.2%}")


@cli.command()
@click.option("--pred", "pred_paths", multiple=True, required=True, help="Prediction file (repeatable)")
@click.option("--gold", "gold_paths", multiple=True, required=True, help="Gold data or label file (repeatable)")
@click.option("--task", default="gpstruct", help="Task name in the metrics table")
@click.option("--out", "out_dir", type=click.Path(), help="Write metrics.json / metrics.csv here")
@handle_errors
def evaluate(pred_paths, gold_paths, task, out_dir):
    """Evaluate: hamming and 0/1 error of prediction files against gold labels."""
    report = evaluate_files(pred_paths, gold_paths, task)

    click.echo("📊 GPstruct Evaluation")
    click.echo("=" * 60)
    click.echo(report.render())
    if out_dir:
        for path in report.write(out_dir):
            click.echo(f"💾 {path}")


@cli.command()
@chain_options
@predict_options
@click.option("--splits", "n_splits", type=int, help="Number of splits")
@click.option("--train-size", type=int, help="Training sequences per split")
@click.option("--test-size", type=int, help="Test sequences per split")
@handle_errors
def experiment(config_path, **flags):
    """Experiment: split, train, predict and evaluate on every split."""
    config = build_config(config_path, **flags)
    out_dir = Path(config.out_dir)

    click.echo("🔬 GPstruct Experiment")
    click.echo("=" * 60)
    corpus = load_training(config)
    click.echo(f"📊 Corpus: {_corpus_summary(corpus)}")
    config.write(out_dir)

    splits = split_experiments(
        corpus, config.n_splits, config.train_size, config.test_size, config.seed
    )
    report = MetricsReport()
    for split in splits:
        split_dir = out_dir / f"split_{split.split_id}"
        split_config = config.override(seed=split.seed, out_dir=str(split_dir))
        click.echo(f"\n🔄 Split {split.split_id} (seed {split.seed}): "
                   f"{len(split.train)} train / {len(split.test)} test sequences")

        split_dir.mkdir(parents=True, exist_ok=True)
        (split_dir / "train.txt").write_text(serialize_corpus(split.train))
        (split_dir / "test.txt").write_text(serialize_corpus(split.test))
        split_config.write(split_dir)

        start = time.perf_counter()
        store = train_chain(split_config, split.train, split_dir)
        result = predict_split(split_config, store, split.train, split.test, split_dir)
        runtime = time.perf_counter() - start if config.record_timing else None

        hamming, zero_one = error_rate(result, split.test)
        metrics = SplitMetrics(
            config.task, split.split_id, hamming, zero_one, result.n_f_samples, runtime
        )
        MetricsReport([metrics]).write(split_dir)
        report.splits.append(metrics)
        click.echo(f"   ✓ Hamming {hamming:.2%}   0/1 {zero_one:.2%}")

    click.echo(f"\n📊 Results over {len(splits)} splits")
    click.echo(report.render())
    for path in report.write(out_dir):
        click.echo(f"💾 {path}")


@cli.command()
@click.option("--out", "out_dir", required=True, type=click.Path(), help="Output directory")
@click.option("--labels", "n_labels", default=2, type=int, help="Number of labels")
@click.option("--t-min", default=10, type=int, help="Shortest sequence")
@click.option("--t-max", default=10, type=int, help="Longest sequence")
@click.option("--n-train", default=20, type=int, help="Training sequences")
@click.option("--n-test", default=20, type=int, help="Test sequences")
@click.option("--features", "feature_mode", default="onehot", type=click.Choice(FEATURE_MODES))
@click.option("--noise", default=0.2, type=float, help="Feature noise sigma")
@click.option("--extra-features", default=0, type=int, help="Extra feature dims beyond the labels")
@click.option("--stay", type=float, help="Sticky transitions: probability of keeping the label")
@click.option("--transitions", "transitions_path", type=click.Path(), help="JSON file with the transition matrix")
@click.option("--seed", default=0, type=int, help="Generator seed")
@handle_errors
def synth(out_dir, n_labels, t_min, t_max, n_train, n_test, feature_mode, noise,
          extra_features, stay, transitions_path, seed):
    """Synth: write a synthetic train/test pair from a Markov chain."""
    if stay is not None and transitions_path:
        raise ConfigError("give --stay or --transitions, not both")
    transitions = None
    if stay is not None:
        transitions = sticky_transitions(n_labels, stay)
    elif transitions_path:
        try:
            with open(_require_path(transitions_path, "transition file")) as f:
                transitions = json.load(f)
        except json.JSONDecodeError as e:
            raise ConfigError(f"invalid JSON in {transitions_path}: {e}")

    generator = SyntheticChainGenerator(
        n_labels=n_labels, t_min=t_min, t_max=t_max, transitions=transitions,
        feature_mode=feature_mode, noise=noise, n_extra_features=extra_features, seed=seed,
    )
    train_corpus = generator.generate(n_train)
    test_corpus = generator.generate(n_test)

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "train.txt").write_text(serialize_corpus(train_corpus))
    (out_dir / "test.txt").write_text(serialize_corpus(test_corpus))
    params = {
        "n_labels": n_labels,
        "t_min": t_min,
        "t_max": t_max,
        "feature_mode": feature_mode,
        "noise": noise,
        "n_extra_features": extra_features,
        "seed": seed,
        "transitions": generator.transitions.tolist(),
    }
    with open(out_dir / "synth_params.json", "w") as f:
        json.dump(params, f, indent=2)
        f.write("\n")

    click.echo("🧪 Synthetic chain data")
    click.echo("=" * 60)
    click.echo(f"📊 Train: {_corpus_summary(train_corpus)}")
    click.echo(f"📊 Test:  {_corpus_summary(test_corpus)}")
    click.echo(f"   Transition counts (train): {transition_counts(train_corpus).tolist()}")
    click.echo(f"💾 {out_dir / 'train.txt'}, {out_dir / 'test.txt'}, {out_dir / 'synth_params.json'}")


@cli.command()
@click.option("--section", help="Show specific section by ID")
@click.option("--search", help="Search help content")
@click.option("--list-sections", is_flag=True, help="List all available sections")
def help(section, search, list_sections):
    """Show reference documentation (data format, sampling, kernels, ...)."""
    from gpstruct.help_docs import format_help, format_section, get_section, load_help, search_help

    try:
        help_data = load_help("gpstruct")
    except (FileNotFoundError, json.JSONDecodeError) as e:
        fail("help", f"cannot load help: {e}")

    if list_sections:
        click.echo("Available sections:")
        for sec in sorted(help_data["sections"], key=lambda s: s.get("priority", 3)):
            priority_marker = "⭐" if sec.get("priority") == 1 else "  "
            click.echo(f"  {priority_marker} {sec['id']}: {sec['title']}")
        return

    if section:
        sec = get_section(help_data, section)
        if sec is None:
            click.echo(f"❌ Section not found: {section}", err=True)
            click.echo("\nUse --list-sections to see all available sections")
            sys.exit(1)
        click.echo(format_section(sec))
        return

    if search:
        results = search_help(help_data, search)
        if not results:
            click.echo(f"❌ No results found for '{search}'", err=True)
            sys.exit(1)
        click.echo(f"\n🔍 Found {len(results)} results for '{search}':\n")
        for i, result in enumerate(results, 1):
            click.echo(f"{i}. [{result['id']}] {result['title']}")
        return

    click.echo(format_help(help_data))


if __name__ == "__main__":
    cli()
