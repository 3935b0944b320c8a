"""``ids`` command line.

Exit codes: 0 success, 1 configuration error, 2 data error, 3 numeric
failure, 4 gradient check above tolerance.
"""
from __future__ import annotations

import functools
import json
import logging
import os
import sys
import time
from pathlib import Path

import click

from . import __version__
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .config import RunConfig, RunConfigError
from .correlation import CorrelationConfig, CorrelationError, load_alerts, sweep_thresholds
from .gradcheck import tiny_network_check
from .metrics import evaluate, format_table
from .model import ConfigError, ModelConfig, build_network
from .pipeline import DataError, FeatureSchema, fit_schema, ingest_csv, load_split, normalize_content, transform
from .tensor import NonFiniteError
from .train import TrainConfig, TrainingError, predict, train

logger = logging.getLogger("dresnet_ids")

EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC, EXIT_GRADCHECK = 1, 2, 3, 4
GRADCHECK_TOLERANCE = 1e-4
_LEVELS = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}


def _setup_logging() -> None:
    level = os.environ.get("IDS_LOG_LEVEL", "info").lower()
    if level not in _LEVELS:
        raise click.UsageError(f"IDS_LOG_LEVEL must be one of {sorted(_LEVELS)}")
    logging.basicConfig(level=_LEVELS[level], format="%(levelname)s %(name)s: %(message)s",
                        stream=sys.stderr, force=True)


def _fail(code: int, msg: str):
    click.echo(f"error: {msg}", err=True)
    sys.exit(code)


def guarded(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        _setup_logging()
        try:
            return fn(*args, **kwargs)
        except (RunConfigError, ConfigError) as exc:
            _fail(EXIT_CONFIG, str(exc))
        except (DataError, CheckpointError, CorrelationError, FileNotFoundError) as exc:
            _fail(EXIT_DATA, str(exc))
        except (TrainingError, NonFiniteError) as exc:
            _fail(EXIT_NUMERIC, str(exc))

    return wrapper


def _parse_thresholds(text):
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise RunConfigError(f"bad --thresholds value {text!r}") from None


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


@click.group()
@click.version_option(__version__, prog_name="ids")
def main():
    """Dense residual Conv-GRU intrusion detection toolkit."""


@main.command("train")
@click.option("--config", "config_path", required=True, type=click.Path(dir_okay=False))
@click.option("--seed", type=int, default=None, help="Override the run seed.")
@click.option("--out", type=click.Path(file_okay=False), default=None, help="Output directory.")
@click.option("--epochs", type=int, default=None)
@click.option("--batch-size", type=int, default=None)
@click.option("--lr", type=float, default=None)
@guarded
def cmd_train(config_path, seed, out, epochs, batch_size, lr):
    """Fit the schema on the training split, train, and write a checkpoint."""
    cfg = RunConfig.load(config_path)
    if seed is not None:
        cfg.seed = seed
    out_dir = Path(out) if out else cfg.output_dir
    train_opts = dict(cfg.train)
    for key, val in (("epochs", epochs), ("batch_size", batch_size), ("learning_rate", lr)):
        if val is not None:
            train_opts[key] = val
    train_opts["seed"] = cfg.seed
    try:
        tcfg = TrainConfig(**train_opts)
    except (TypeError, ValueError) as exc:
        raise RunConfigError(f"train section: {exc}") from None
    if cfg.data.train is None:
        raise RunConfigError("data.train is not set")
    if not cfg.data.train.is_file():
        raise DataError(f"training file not found: {cfg.data.train}")

    started = time.time()
    table = ingest_csv(cfg.data.train, delimiter=cfg.data.delimiter, label_column=cfg.data.label_column,
                       drop_columns=cfg.data.drop_columns)
    table, report = normalize_content(table)
    logger.info("train rows: %d kept, %d nulls dropped, %d duplicates dropped",
                report.rows_out, report.nulls_dropped, report.duplicates_dropped)
    if report.empty:
        raise DataError("no training rows left after normalization")
    schema = fit_schema(table, cfg.data.label_column, cfg.data.normal_label, cfg.data.allow_missing_normal)
    ds = transform(table, schema)
    if cfg.data.subsample is not None:
        ds = ds.subsample(cfg.data.subsample, seed=cfg.seed)

    model_opts = dict(cfg.model)
    try:
        mcfg = ModelConfig(feature_count=schema.encoded_width, num_classes=schema.num_classes,
                           seed=cfg.seed, **model_opts)
    except TypeError as exc:
        raise RunConfigError(f"model section: {exc}") from None
    net = build_network(mcfg)
    logger.info("network: F=%d K=%d pairs=%d params=%d", mcfg.feature_count, mcfg.num_classes,
                mcfg.pairs, net.parameter_count())
    trace = train(net, ds.features, ds.labels, tcfg)

    out_dir.mkdir(parents=True, exist_ok=True)
    extra = {"delimiter": cfg.data.delimiter, "drop_columns": list(cfg.data.drop_columns),
             "train_config": tcfg.to_dict()}
    save_checkpoint(out_dir / "checkpoint.drn", net, schema, extra)
    schema.save(out_dir / "schema.json")
    _write_json(out_dir / "loss_trace.json", {"epochs": len(trace), "loss": trace})
    _write_json(out_dir / "run_meta.json", {
        "seed": cfg.seed,
        "model_config": mcfg.to_dict(),
        "train_config": tcfg.to_dict(),
        "schema_fingerprint": schema.fingerprint,
        "train_rows": len(ds),
        "normalization": {"nulls_dropped": report.nulls_dropped,
                          "duplicates_dropped": report.duplicates_dropped},
        "wall_clock_seconds": time.time() - started,
    })
    click.echo(f"checkpoint written to {out_dir / 'checkpoint.drn'}")


@main.command("eval")
@click.option("--checkpoint", "checkpoint_path", required=True, type=click.Path(dir_okay=False))
@click.option("--test", "test_path", default=None, type=click.Path(dir_okay=False),
              help="Test CSV (defaults to data.test from --config).")
@click.option("--config", "config_path", default=None, type=click.Path(dir_okay=False))
@click.option("--schema", "schema_path", default=None, type=click.Path(dir_okay=False),
              help="Schema file that must match the checkpoint.")
@click.option("--out", type=click.Path(file_okay=False), default=None)
@guarded
def cmd_eval(checkpoint_path, test_path, config_path, schema_path, out):
    """Evaluate a checkpoint on a labelled CSV and write the metrics report."""
    cfg = RunConfig.load(config_path) if config_path else None
    if test_path is None:
        if cfg is None or cfg.data.test is None:
            raise RunConfigError("no test file given (use --test or data.test in --config)")
        test_path = cfg.data.test
    test_path = Path(test_path)
    if not test_path.is_file():
        raise DataError(f"test file not found: {test_path}")
    net, schema, header = load_checkpoint(checkpoint_path)
    if schema is None:
        raise DataError("checkpoint carries no feature schema")
    if schema_path is not None:
        other = FeatureSchema.load(schema_path)
        if other.fingerprint != header["schema_fingerprint"]:
            raise DataError("schema fingerprint does not match the checkpoint")
    extra = header.get("extra", {})
    started = time.time()
    ds, _ = load_split(test_path, schema, delimiter=extra.get("delimiter", ","),
                       drop_columns=extra.get("drop_columns", []))
    if ds.fingerprint != header["schema_fingerprint"]:
        raise DataError("test data schema fingerprint does not match the checkpoint")
    pred = predict(net, ds.features)
    report = evaluate(pred, ds.labels, schema.normal_id, schema.labels, time.time() - started)

    out_dir = Path(out) if out else (cfg.output_dir if cfg else Path(checkpoint_path).parent)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "metrics.json").write_text(report.to_json(
        checkpoint=str(checkpoint_path), test=str(test_path), schema_fingerprint=schema.fingerprint,
        seed=header.get("seed")))
    text = format_table(report)
    (out_dir / "metrics.txt").write_text(text)
    click.echo(text, nl=False)


@main.command("correlate")
@click.option("--edge", type=click.Path(dir_okay=False), default=None)
@click.option("--fog", type=click.Path(dir_okay=False), default=None)
@click.option("--cloud", type=click.Path(dir_okay=False), default=None)
@click.option("--config", "config_path", default=None, type=click.Path(dir_okay=False))
@click.option("--thresholds", default=None, help="Comma-separated ascending thresholds.")
@click.option("--out", type=click.Path(file_okay=False), default=None)
@guarded
def cmd_correlate(edge, fog, cloud, config_path, thresholds, out):
    """Correlate edge/fog/cloud alerts and tabulate TDR per threshold."""
    cfg = RunConfig.load(config_path) if config_path else RunConfig()
    sec = cfg.correlation
    paths = {"edge": edge or sec.edge, "fog": fog or sec.fog, "cloud": cloud or sec.cloud}
    for layer, p in paths.items():
        if p is None:
            raise DataError(f"no {layer} alert file given")
        if not Path(p).is_file():
            raise DataError(f"{layer} alert file not found: {p}")
    ts = _parse_thresholds(thresholds) if thresholds else list(sec.thresholds)
    streams = {layer: load_alerts(p, layer) for layer, p in paths.items()}
    ccfg = CorrelationConfig(thresholds_to_sweep=ts, classes_in_scope=sec.classes_in_scope)
    table = sweep_thresholds(streams["edge"], streams["fog"], streams["cloud"], ccfg,
                             detected_totals=sec.detected_totals)
    out_dir = Path(out) if out else (cfg.output_dir if config_path else None)
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        _write_json(out_dir / "correlation.json", table.to_dict())
        (out_dir / "tdr_table.txt").write_text(table.format())
    click.echo(table.format(), nl=False)


@main.command("gradcheck")
@click.option("--seed", type=int, default=0)
@click.option("--eps", type=float, default=1e-5, help="Central-difference step.")
@guarded
def cmd_gradcheck(seed, eps):
    """Finite-difference check of the tiny network (F=5, L=5, P=2, K=3)."""
    if not eps > 0:
        raise RunConfigError("--eps must be > 0")
    err = tiny_network_check(eps=eps, seed=seed)
    click.echo(f"max relative error: {err:.6e}")
    if not err < GRADCHECK_TOLERANCE:
        click.echo(f"error: gradient check failed (tolerance {GRADCHECK_TOLERANCE:g})", err=True)
        sys.exit(EXIT_GRADCHECK)


if __name__ == "__main__":
    main()
