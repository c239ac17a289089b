"""Command-line entry point for the sdc-sentinel experiment pipeline.

Exit codes: 0 success, 2 invalid manifest or arguments, 3 no viable detector,
1 anything else.
"""

from __future__ import annotations

import logging
import sys
from pathlib import Path

import click

from . import commands
from .perf import NoViableDetector
from .persistence import ManifestError, atomic_write_text, default_manifest, fmt_float, load_manifest
from .tasks import kind_names

EXIT_VALIDATION = 2
EXIT_NO_VIABLE = 3


class ValidationFailure(click.ClickException):
    exit_code = EXIT_VALIDATION


class NoViableFailure(click.ClickException):
    exit_code = EXIT_NO_VIABLE


def _manifest(path, seed=None, fault_rate=None, batch_size=None, epsilon=None, policy=None):
    try:
        return load_manifest(path).with_overrides(seed, fault_rate, batch_size, epsilon, policy)
    except ManifestError as exc:
        raise ValidationFailure(f"invalid manifest {path}: {exc}") from None


def _run(fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except ManifestError as exc:
        raise ValidationFailure(str(exc)) from None
    except NoViableDetector as exc:
        raise NoViableFailure(str(exc)) from None
    except (FileNotFoundError, ValueError, KeyError) as exc:
        raise click.ClickException(str(exc)) from None


manifest_opt = click.option("--manifest", "manifest_path", required=True,
                            type=click.Path(dir_okay=False), help="Experiment manifest (JSON).")
out_opt = click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False),
                       help="Output directory.")
seed_opt = click.option("--seed", type=int, default=None, help="Override the manifest's master seed.")
rate_opt = click.option("--fault-rate", type=float, default=None,
                        help="Override the fault rate per cycle.")
batch_opt = click.option("--batch-size", type=int, default=None,
                         help="Override the detection batch size.")
eps_opt = click.option("--epsilon", type=float, default=None,
                       help="Override the overhead tolerance used by EEOP.")


@click.group()
@click.option("-v", "--verbose", is_flag=True, help="Log progress to stderr.")
def main(verbose):
    """Train and evaluate neural SDC detectors for task-based benchmarks."""
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")


@main.command("init-manifest")
@click.argument("benchmark")
@click.option("--output", "-o", required=True, type=click.Path(dir_okay=False),
              help="Where to write the manifest.")
@seed_opt
def init_manifest(benchmark, output, seed):
    """Write a default manifest for BENCHMARK."""
    if benchmark not in kind_names():
        raise ValidationFailure(f"unknown benchmark {benchmark!r}; expected one of {kind_names()}")
    m = default_manifest(benchmark, seed or 0)
    atomic_write_text(output, m.dumps())
    click.echo(output)


@main.command()
@manifest_opt
@out_opt
@seed_opt
def profile(manifest_path, out_dir, seed):
    """Run the training inputs reliably and write the feature profile."""
    m = _manifest(manifest_path, seed)
    path = _run(commands.cmd_profile, m, out_dir)
    click.echo(path)


@main.command()
@manifest_opt
@out_opt
@click.option("--profile", "profile_path", type=click.Path(dir_okay=False), default=None,
              help="Profile CSV (default: OUT/profile.csv).")
@seed_opt
def train(manifest_path, out_dir, profile_path, seed):
    """Train the seven candidate detectors on a profile."""
    m = _manifest(manifest_path, seed)
    profile_path = profile_path or Path(out_dir) / commands.PROFILE_FILE
    results = _run(commands.cmd_train, profile_path, m, out_dir)
    failed = [r for r in results if isinstance(r, Exception)]
    for r in results:
        if not isinstance(r, Exception):
            click.echo(f"{r.model.name}\tepochs={len(r.log)}\t"
                       f"best_test_loss={fmt_float(r.model.metadata['best_test_loss'])}")
    if failed:
        raise click.ClickException(f"{len(failed)} architecture(s) failed to train")


@main.command()
@manifest_opt
@out_opt
@click.option("--models", "models_dir", type=click.Path(file_okay=False), default=None,
              help="Directory of detector_*.json files (default: OUT/models).")
@seed_opt
@rate_opt
@batch_opt
@eps_opt
def evaluate(manifest_path, out_dir, models_dir, seed, fault_rate, batch_size, epsilon):
    """Score every detector plus oracle, none and baseline on the validation run."""
    m = _manifest(manifest_path, seed, fault_rate, batch_size, epsilon)
    models_dir = models_dir or Path(out_dir) / commands.MODELS_DIR
    try:
        result = _run(commands.cmd_evaluate, models_dir, m, out_dir)
    finally:
        summary = Path(out_dir) / commands.SUMMARY_FILE
        if summary.exists():
            click.echo(summary.read_text(encoding="utf-8"), nl=False)
    click.echo(f"fittest: {result.fittest.detector}")


@main.command()
@manifest_opt
@out_opt
@click.option("--models", "models_dir", type=click.Path(file_okay=False), default=None,
              help="Directory of detector_*.json files, needed for ann:NAME and fittest.")
@click.option("--policy", default=None,
              help="ann:NAME, oracle, none, baseline or fittest (default: the manifest's).")
@click.option("--no-outputs", is_flag=True, help="Leave output vectors out of the trace.")
@seed_opt
@rate_opt
@batch_opt
@eps_opt
def simulate(manifest_path, out_dir, models_dir, policy, no_outputs, seed, fault_rate,
             batch_size, epsilon):
    """Run one policy over the validation workload and write its full trace."""
    m = _manifest(manifest_path, seed, fault_rate, batch_size, epsilon, policy)
    if models_dir is None and (Path(out_dir) / commands.MODELS_DIR).is_dir():
        models_dir = Path(out_dir) / commands.MODELS_DIR
    summary = _run(commands.cmd_simulate, m, out_dir, models_dir, None, not no_outputs)
    click.echo(f"detector={summary['detector']} tasks={summary['tasks']} "
               f"faulted={summary['faulted_tasks']} overhead={fmt_float(summary['overhead'])} "
               f"speedup={fmt_float(summary['speedup'])}")


@main.command()
@click.argument("reports", nargs=-1, type=click.Path(dir_okay=False))
@out_opt
def report(reports, out_dir):
    """Render evaluation reports as Markdown and CSV tables sorted by EEOP."""
    if not reports:
        raise ValidationFailure("no report files given")
    md, _ = _run(commands.cmd_report, reports, out_dir)
    click.echo(md.read_text(encoding="utf-8"), nl=False)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
