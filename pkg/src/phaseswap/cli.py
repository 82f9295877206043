"""Command-line entry point: ``phaseswap {synth,ingest,run,report}``.

Exit codes: 0 success, 1 user error (bad config, bad input data), 2
internal error. ``PHASESWAP_OUT`` sets the output root when ``--out`` is not
given; it has no other effect.
"""

from __future__ import annotations

import json
import logging
import os
import sys
import traceback
from dataclasses import fields

import click
import yaml

from . import __version__
from .errors import ConfigError, PhaseSwapError
from .evaluation import format_table, write_report
from .store import TARGET_RATE, ingest_directory, load_store, preprocess
from .synth import SynthSpec, generate, generate_white_noise, write_corpus
from .train import TrainConfig, run_experiment

OUT_ENV = "PHASESWAP_OUT"
DEFAULT_OUT = "phaseswap-out"
RUN_KEYS = {"name", "data", "train"}
DATA_KEYS = {"store", "synth", "white_noise"}


def output_root(out: str | None) -> str:
    return out or os.environ.get(OUT_ENV) or DEFAULT_OUT


def read_yaml(path) -> dict:
    with open(path) as fh:
        try:
            content = yaml.safe_load(fh)
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: invalid YAML ({exc})") from None
    if content is None:
        return {}
    if not isinstance(content, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return content


def synth_spec(d: dict | None, seed: int | None = None) -> SynthSpec:
    d = dict(d or {})
    known = {f.name for f in fields(SynthSpec)}
    unknown = set(d) - known
    if unknown:
        raise ConfigError(f"unknown synth keys: {sorted(unknown)}")
    if seed is not None:
        d["seed"] = seed
    spec = SynthSpec(**d)
    spec.validate()
    return spec


def parse_run_config(raw: dict, seed: int | None = None) -> tuple:
    """Validate a run config completely; returns ``(name, data, TrainConfig)``."""
    unknown = set(raw) - RUN_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    data = dict(raw.get("data") or {})
    unknown = set(data) - DATA_KEYS
    if unknown:
        raise ConfigError(f"unknown data keys: {sorted(unknown)}")
    if ("store" in data) == ("synth" in data):
        raise ConfigError("data needs exactly one of 'store' or 'synth'")
    if "synth" in data:
        synth_spec(data["synth"])
    train = dict(raw.get("train") or {})
    if seed is not None:
        train["seed"] = seed
    config = TrainConfig.from_dict(train)
    name = raw.get("name") or f"{config.variant}_r{config.r_train:g}_w{config.w_self:g}_seed{config.seed}"
    return str(name), data, config


def load_run_data(data: dict, base_dir: str = "."):
    """Preprocessed recordings and ``(subject, session) -> segments``."""
    if "store" in data:
        path = data["store"]
        if not os.path.isabs(path):
            path = os.path.join(base_dir, path)
        return load_store(path)
    spec = synth_spec(data["synth"])
    corpus = generate_white_noise(spec) if data.get("white_noise") else generate(spec)
    recordings = [preprocess(r, TARGET_RATE) for r in corpus.recordings]
    segments = {(r.subject_id, r.session_id): corpus.segments_for(r) for r in corpus.recordings}
    return recordings, segments


@click.group()
@click.version_option(__version__)
@click.option("-v", "--verbose", is_flag=True, help="Log progress to stderr.")
def cli(verbose):
    """Phase-swap pretraining for multichannel bio-signals."""
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")


@cli.command()
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False),
              help="YAML file with SynthSpec fields.")
@click.option("--seed", type=int, help="Corpus seed (overrides the config).")
@click.option("--out", help="Output directory for the EDF corpus.")
@click.option("--white-noise", is_flag=True, help="Emit i.i.d. Gaussian noise instead of coupled signals.")
def synth(config_path, seed, out, white_noise):
    """Write a synthetic EDF corpus with labels and an identity map."""
    spec = synth_spec(read_yaml(config_path) if config_path else {}, seed)
    out_dir = out or os.path.join(output_root(None), "synth")
    corpus = generate_white_noise(spec) if white_noise else generate(spec)
    paths = write_corpus(corpus, out_dir)
    click.echo(f"wrote {len(paths['edf'])} recordings to {out_dir}")


@cli.command()
@click.argument("data_dir", type=click.Path(exists=True, file_okay=False))
@click.option("--mapping", type=click.Path(exists=True, dir_okay=False),
              help="Identity map (default: DATA_DIR/identity.json).")
@click.option("--labels", type=click.Path(exists=True, dir_okay=False),
              help="Label CSV (default: DATA_DIR/labels.csv when present).")
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False),
              help="YAML with an optional label_map and target_rate.")
@click.option("--out", help="Store directory.")
def ingest(data_dir, mapping, labels, config_path, out):
    """Resample, normalize and store every EDF file in DATA_DIR."""
    options = read_yaml(config_path) if config_path else {}
    unknown = set(options) - {"label_map", "target_rate"}
    if unknown:
        raise ConfigError(f"unknown ingest keys: {sorted(unknown)}")
    mapping = mapping or os.path.join(data_dir, "identity.json")
    if not os.path.exists(mapping):
        raise ConfigError(f"identity map {mapping} not found")
    if labels is None and os.path.exists(os.path.join(data_dir, "labels.csv")):
        labels = os.path.join(data_dir, "labels.csv")
    label_map = options.get("label_map")
    if label_map is not None:
        label_map = {int(k): int(v) for k, v in label_map.items()}
    out_dir = out or os.path.join(output_root(None), "store")
    report = ingest_directory(data_dir, mapping, out_dir, labels, label_map,
                              float(options.get("target_rate", TARGET_RATE)))
    for name, reason in report.failed.items():
        click.echo(f"skipped {name}: {reason}", err=True)
    click.echo(f"ingested {len(report.ingested)} of {len(report.ingested) + len(report.failed)} files into {out_dir}")
    return 1 if not report.ingested else 0


@cli.command()
@click.option("--config", "config_path", required=True, type=click.Path(exists=True, dir_okay=False),
              help="YAML run config with 'data' and 'train' sections.")
@click.option("--seed", type=int, help="Training seed (overrides train.seed).")
@click.option("--out", help="Output root; the run directory is created inside it.")
def run(config_path, seed, out):
    """Pretrain (when needed), fine-tune and evaluate one configuration."""
    name, data, config = parse_run_config(read_yaml(config_path), seed)
    recordings, segments = load_run_data(data, os.path.dirname(os.path.abspath(config_path)))
    run_dir = os.path.join(output_root(out), name)
    os.makedirs(run_dir, exist_ok=True)
    with open(os.path.join(run_dir, "data.json"), "w") as fh:
        json.dump(data, fh, indent=2, sort_keys=True)
    result = run_experiment(config, recordings, segments, run_dir)
    for split, acc in result.balanced_accuracies().items():
        click.echo(f"{split:<10} balanced accuracy {100 * acc:.1f}%")
    click.echo(f"run directory: {run_dir}")


def report_rows(run_dirs) -> list[dict]:
    """Rows for :func:`format_table`; an unreadable run directory becomes a failed row."""
    rows = []
    for run_dir in run_dirs:
        try:
            with open(os.path.join(run_dir, "report.json")) as fh:
                rep = json.load(fh)
            key = {k: rep[k] for k in ("variant", "r_train", "w_self", "seed")}
            splits = rep["splits"]
            if not splits:
                raise ValueError("no evaluated splits")
            for split, m in sorted(splits.items()):
                rows.append({**key, "split": split, "balanced_accuracy": float(m["balanced_accuracy"]),
                             "status": "ok"})
        except (OSError, ValueError, KeyError, TypeError) as exc:
            rows.append({"variant": os.path.basename(os.path.normpath(run_dir)), "r_train": None,
                         "w_self": None, "seed": None, "split": None, "balanced_accuracy": None,
                         "status": "failed", "error": f"{type(exc).__name__}: {exc}"})
    return rows


@cli.command()
@click.argument("run_dirs", nargs=-1, required=True, type=click.Path(file_okay=False))
@click.option("--out", help="Write <out>.txt and <out>.json next to printing the table.")
def report(run_dirs, out):
    """Merge completed runs into one table (mean and range across seeds)."""
    rows = report_rows(run_dirs)
    click.echo(format_table(rows))
    if out:
        write_report(out, rows)
    failed = [r for r in rows if r["status"] == "failed"]
    for r in failed:
        click.echo(f"corrupt run {r['variant']}: {r['error']}", err=True)
    return 1 if failed else 0


def main(argv=None) -> int:
    try:
        code = cli.main(args=argv, prog_name="phaseswap", standalone_mode=False)
    except click.exceptions.Abort:
        click.echo("aborted", err=True)
        return 1
    except click.ClickException as exc:
        exc.show()
        return 1
    except (PhaseSwapError, OSError) as exc:
        click.echo(f"error: {exc}", err=True)
        return 1
    except Exception:
        traceback.print_exc()
        return 2
    return code if isinstance(code, int) else 0


if __name__ == "__main__":
    sys.exit(main())
