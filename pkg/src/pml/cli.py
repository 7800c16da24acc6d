"""Command-line entry points: generate, train, eval, gridsearch.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric
failure during training.
"""

from __future__ import annotations

import math
import os
import sys
from dataclasses import replace

import click

from . import config as config_mod
from . import data as data_mod
from . import persist, trainer
from .errors import ConfigError, DataError, NumericError


@click.group()
def cli() -> None:
    """Progressive-margin training for long-tailed ordinal classification."""


@cli.command()
@click.option("--classes", default=20, show_default=True, help="Number of ordinal classes.")
@click.option("--dim", default=8, show_default=True, help="Feature dimension.")
@click.option("--tail-exponent", default=1.5, show_default=True,
              help="Power-law exponent; 0 gives balanced classes.")
@click.option("--n-max", default=200, show_default=True, help="Largest class size.")
@click.option("--noise-sigma", default=0.3, show_default=True, help="Within-class spread.")
@click.option("--annotated-sigma", default=3.0, show_default=True,
              help="Per-sample deviation used by the epsilon metric.")
@click.option("--seed", default=0, show_default=True)
@click.option("--out", "out_path", required=True, type=click.Path(), help="Output CSV path.")
def generate(classes, dim, tail_exponent, n_max, noise_sigma, annotated_sigma, seed, out_path):
    """Synthesize a long-tailed ordinal dataset and write it as CSV."""
    spec = data_mod.OrdinalDatasetSpec(
        num_classes=classes, dim=dim, tail_exponent=tail_exponent, n_max=n_max,
        noise_sigma=noise_sigma, annotated_sigma=annotated_sigma, seed=seed,
    )
    bundle = data_mod.generate(spec)
    data_mod.save_csv(bundle.data, out_path)
    counts = bundle.data.class_counts()
    click.echo(f"wrote {len(bundle.data)} samples over {classes} classes to {out_path}")
    click.echo(f"class counts: {' '.join(str(int(n)) for n in counts)}")


def _load_train_config(config_path, set_items, mode, seed, data_path, out_dir):
    cfg = config_mod.load_config(config_path) if config_path else config_mod.TrainConfig()
    if set_items:
        cfg = config_mod.apply_overrides(cfg, list(set_items))
    updates = {}
    if mode is not None:
        updates["mode"] = mode
    if seed is not None:
        updates["seed"] = seed
    if data_path is not None:
        updates["data"] = data_path
    if out_dir is not None:
        updates["out"] = out_dir
    if updates:
        cfg = replace(cfg, **updates)
    cfg.validate()
    if not cfg.data:
        raise ConfigError("no dataset given: pass --data or set data= in the config")
    if not cfg.out:
        raise ConfigError("no output directory given: pass --out or set out= in the config")
    return cfg


def _run_training(cfg) -> trainer.TrainResult:
    dataset = data_mod.load_csv(cfg.data)
    bundle = data_mod.split_dataset(dataset, cfg.seed)
    result = trainer.train(cfg, bundle, run_dir=cfg.out)
    trainer.dump_artifacts(result, cfg.out)
    persist.save_model(os.path.join(cfg.out, "model.npz"), result.model, cfg,
                       result.train_class_counts)
    return result


def _echo_summary(result: trainer.TrainResult) -> None:
    final = result.reports[-1]
    click.echo(
        f"stages {result.stage_transitions}, epochs {len(result.reports)}, "
        f"final val MAE {final.val_mae:.4f}"
    )
    if result.test_report is not None:
        tr = result.test_report
        click.echo(
            f"test MAE {tr.mae:.4f}  head {tr.head_mae:.4f}  tail {tr.tail_mae:.4f}  "
            f"epsilon {tr.epsilon_error:.4f}"
        )


@cli.command()
@click.option("--config", "config_path", type=click.Path(), help="Flat key = value config file.")
@click.option("--data", "data_path", type=click.Path(), help="Dataset CSV.")
@click.option("--out", "out_dir", type=click.Path(), help="Run directory for artifacts.")
@click.option("--mode", type=click.Choice(["pml", "baseline"]), default=None)
@click.option("--seed", type=int, default=None)
@click.option("--set", "set_items", multiple=True, metavar="KEY=VALUE",
              help="Override one config field; repeatable.")
def train(config_path, data_path, out_dir, mode, seed, set_items):
    """Train on a dataset CSV and write metrics, margins, stats, and figures."""
    cfg = _load_train_config(config_path, set_items, mode, seed, data_path, out_dir)
    result = _run_training(cfg)
    _echo_summary(result)
    click.echo(f"artifacts in {cfg.out}")


@cli.command("eval")
@click.option("--model", "model_path", required=True, type=click.Path(), help="model.npz file.")
@click.option("--data", "data_path", required=True, type=click.Path(), help="Dataset CSV.")
@click.option("--out", "out_path", type=click.Path(), default=None,
              help="Optional CSV to write the metrics row to.")
def eval_cmd(model_path, data_path, out_path):
    """Evaluate a saved model on a dataset CSV (margins are never applied)."""
    model, cfg, counts = persist.load_model(model_path)
    dataset = data_mod.load_csv(data_path, num_classes=model.num_classes)
    report = trainer.evaluate(model.backbone, model.head, dataset,
                              decoder=cfg.decoder, train_class_counts=counts)
    click.echo(
        f"mae {report.mae:.6f}\nhead_mae {report.head_mae:.6f}\n"
        f"tail_mae {report.tail_mae:.6f}\nepsilon_error {report.epsilon_error:.6f}"
    )
    if out_path:
        with open(out_path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("mae,head_mae,tail_mae,epsilon_error\n")
            fh.write(",".join(repr(float(v)) for v in
                              (report.mae, report.head_mae, report.tail_mae,
                               report.epsilon_error)) + "\n")


def _parse_grid(raw: str, name: str) -> list[float]:
    try:
        values = [float(part) for part in raw.split(",") if part.strip()]
    except ValueError as exc:
        raise ConfigError(f"bad {name}: {exc}") from exc
    if not values or any(not math.isfinite(v) or v < 0 for v in values):
        raise ConfigError(f"{name} must be nonnegative finite numbers")
    return values


@cli.command()
@click.option("--config", "config_path", type=click.Path())
@click.option("--data", "data_path", type=click.Path())
@click.option("--out", "out_dir", type=click.Path())
@click.option("--seed", type=int, default=None)
@click.option("--set", "set_items", multiple=True, metavar="KEY=VALUE")
@click.option("--lambda-grid", default="0.0,0.5,1.0", show_default=True)
@click.option("--beta-grid", default="0.0,0.5,1.0", show_default=True)
def gridsearch(config_path, data_path, out_dir, seed, set_items, lambda_grid, beta_grid):
    """Train once per (lambda, beta) pair and rank the combinations by val MAE."""
    base = _load_train_config(config_path, set_items, None, seed, data_path, out_dir)
    lams = _parse_grid(lambda_grid, "--lambda-grid")
    betas = _parse_grid(beta_grid, "--beta-grid")
    rows = []
    for lam in lams:
        for beta in betas:
            sub = os.path.join(base.out, f"lam{lam:g}_beta{beta:g}")
            cfg = replace(base, lam=lam, beta=beta, out=sub)
            result = _run_training(cfg)
            val_mae = result.reports[-1].val_mae
            tr = result.test_report
            rows.append((lam, beta, val_mae,
                         tr.mae if tr else float("nan"),
                         tr.tail_mae if tr else float("nan")))
            click.echo(f"lambda={lam:g} beta={beta:g} val_mae={val_mae:.4f}")
    rows.sort(key=lambda r: r[2])
    summary = os.path.join(base.out, "gridsearch.csv")
    with open(summary, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("lambda,beta,val_mae,test_mae,test_tail_mae\n")
        for row in rows:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")
    best = rows[0]
    click.echo(f"best: lambda={best[0]:g} beta={best[1]:g} val_mae={best[2]:.4f}")
    click.echo(f"summary in {summary}")


def main(argv=None) -> int:
    try:
        cli.main(args=argv, standalone_mode=False)
        return 0
    except ConfigError as exc:
        click.echo(f"config error: {exc}", err=True)
        return 2
    except DataError as exc:
        click.echo(f"data error: {exc}", err=True)
        return 3
    except NumericError as exc:
        click.echo(f"numeric failure: {exc}", err=True)
        return 4
    except click.UsageError as exc:
        exc.show()
        return 2
    except click.ClickException as exc:
        exc.show()
        return exc.exit_code
    except click.exceptions.Exit as exc:
        return exc.exit_code
    except click.Abort:
        return 130


if __name__ == "__main__":
    sys.exit(main())
