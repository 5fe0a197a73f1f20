"""Command-line interface: simulate, train, optimize, evaluate, compare."""

from __future__ import annotations

import csv
import json
import sys
from dataclasses import replace
from pathlib import Path
from typing import Optional

import click
import numpy as np

from . import harness, moo
from .classifier import BoostedModel
from .config import load_config
from .dataset import load_dataset, save_dataset
from .sim import ScenarioConfig, generate_batch
from .tracker import TrackerConfig
from .trigger import DEFAULT_HORIZON, GAMMA_LENGTH, TriggerParams

# anything raised from these is reported as a one-line error with exit code 1
EXPECTED_ERRORS = (ValueError, KeyError, OSError, RuntimeError)

seed_option = click.option("--seed", type=int, default=0, show_default=True, help="Random seed.")


def _dump(path, obj) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, allow_nan=False)
        fh.write("\n")


def _load_json(path):
    with open(path) as fh:
        return json.load(fh)


def _splits(data_dir):
    dataset = [ls for ls in load_dataset(data_dir) if ls.valid]
    return harness.split_dataset(dataset)


def front_to_json(front: moo.ParetoFront, selected: int) -> dict:
    points = []
    for p in front.points:
        record = p.gamma.to_dict()
        record.update(c_av=float(p.c_av), c_ac=float(p.c_ac), c_ea=float(p.c_ea))
        points.append(record)
    return {
        "points": points,
        "hypervolume": float(front.hypervolume),
        "selected_index": int(selected),
        "reference": list(front.reference),
        "history": [float(h) for h in front.history],
    }


def front_from_json(data: dict) -> moo.ParetoFront:
    points = [moo.CostPoint(float(r["c_av"]), float(r["c_ac"]), float(r.get("c_ea", 0.0)),
                            TriggerParams.from_dict(r)) for r in data["points"]]
    if not points:
        raise ValueError("front has no points")
    return moo.ParetoFront(points, tuple(data.get("reference", moo.REFERENCE)),
                           float(data["hypervolume"]), list(data.get("history", [])))


@click.group()
def main():
    """Ego-lane identification with early open time series classification."""


@main.command()
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False),
              help="YAML file of scenario (and optional tracker) settings.")
@click.option("--count", type=click.IntRange(min=1), default=300, show_default=True)
@click.option("--out", type=click.Path(file_okay=False), required=True)
@seed_option
def simulate(config_path, count, out, seed):
    """Generate scenarios, track every hypothesis and write one JSON-lines file per scenario."""
    if config_path:
        base, tracker = load_config(config_path)
    else:
        base, tracker = ScenarioConfig(), TrackerConfig()
    seqs = generate_batch(base, count, seed)
    dataset = harness.build_dataset(seqs, tracker.max_hypotheses, tracker)
    paths = save_dataset(out, dataset, tracker)
    n_valid = sum(ls.valid for ls in dataset)
    click.echo(f"wrote {len(paths)} scenarios ({n_valid} valid) to {out}")


@main.command()
@click.option("--data", type=click.Path(exists=True, file_okay=False), required=True)
@click.option("--out", type=click.Path(dir_okay=False), required=True)
@click.option("--rounds", type=click.IntRange(min=1), default=100, show_default=True)
@click.option("--depth", type=click.IntRange(min=1), default=3, show_default=True)
@click.option("--lr", type=float, default=0.1, show_default=True)
@seed_option
def train(data, out, rounds, depth, lr, seed):
    """Fit the hypothesis classifier on the training split of a dataset."""
    train_set, _, _ = _splits(data)
    model = harness.train_model(train_set, rounds=rounds, depth=depth, learning_rate=lr)
    Path(out).parent.mkdir(parents=True, exist_ok=True)
    model.save(out)
    click.echo(f"trained {len(model.trees)} trees on {len(train_set)} sequences -> {out}")


@main.command()
@click.option("--data", type=click.Path(exists=True, file_okay=False), required=True)
@click.option("--model", "model_path", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--variant", type=click.Choice(sorted(GAMMA_LENGTH)), default="s4", show_default=True)
@click.option("--pop", type=int, default=8, show_default=True)
@click.option("--gens", type=int, default=16, show_default=True)
@click.option("--horizon", type=click.IntRange(min=1), default=DEFAULT_HORIZON, show_default=True)
@click.option("--out", type=click.Path(dir_okay=False), required=True)
@seed_option
def optimize(data, model_path, variant, pop, gens, horizon, out, seed):
    """NSGA-II search of one trigger variant's parameters on the optimization split."""
    _, opt, _ = _splits(data)
    model = BoostedModel.load(model_path)
    front = harness.optimize_trigger(opt, model, variant, moo.NsgaConfig(pop, gens, seed=seed), horizon)
    chosen = moo.select_operating_point(front)
    _dump(out, front_to_json(front, front.points.index(chosen)))
    click.echo(f"{len(front.points)} front points, hypervolume {front.hypervolume:.4f} -> {out}")


@main.command()
@click.option("--front", "front_path", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--data", type=click.Path(exists=True, file_okay=False), required=True)
@click.option("--model", "model_path", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--out", type=click.Path(dir_okay=False), help="Write the metrics row as JSON.")
@seed_option
def evaluate(front_path, data, model_path, out, seed):
    """Score the front's selected operating point on the test split."""
    raw = _load_json(front_path)
    front = front_from_json(raw)
    idx = int(raw.get("selected_index", front.points.index(moo.select_operating_point(front))))
    if not 0 <= idx < len(front.points):
        raise ValueError(f"selected_index {idx} outside the front")
    _, _, test = _splits(data)
    model = BoostedModel.load(model_path)
    row = harness.evaluate(test, model, front.points[idx].gamma, front.hypervolume)
    record = {
        "method": row.method,
        "earliness_s": row.earliness_s,
        "availability": row.availability,
        "accuracy": row.accuracy,
        "hypervolume": row.hypervolume,
        "accuracy_vacuous": row.accuracy_vacuous,
    }
    if out:
        _dump(out, record)
    click.echo(json.dumps(record))


@main.command()
@click.option("--data", type=click.Path(exists=True, file_okay=False),
              help="Dataset directory; simulated from scratch when omitted.")
@click.option("--model", "model_path", type=click.Path(exists=True, dir_okay=False),
              help="Trained model; trained on the train split when omitted.")
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False),
              help="Scenario config used when simulating.")
@click.option("--count", type=click.IntRange(min=10), default=300, show_default=True)
@click.option("--pop", type=int, default=8, show_default=True)
@click.option("--gens", type=int, default=16, show_default=True)
@click.option("--out", type=click.Path(dir_okay=False), required=True)
@click.option("--curves", type=click.Path(dir_okay=False), required=True)
@seed_option
def compare(data, model_path, config_path, count, pop, gens, out, curves, seed):
    """Optimize and evaluate all four trigger variants; write report.json and curves.csv."""
    if data:
        train_set, opt, test = _splits(data)
    else:
        base, tracker = load_config(config_path) if config_path else (ScenarioConfig(), TrackerConfig())
        dataset = harness.build_dataset(generate_batch(base, count, seed), tracker.max_hypotheses, tracker)
        train_set, opt, test = harness.split_dataset([ls for ls in dataset if ls.valid])
    model = BoostedModel.load(model_path) if model_path else harness.train_model(train_set)
    report = harness.compare_methods(opt, test, model, moo.NsgaConfig(pop, gens, seed=seed))

    _dump(out, {"seed": seed, "rows": harness.report_records(report)})
    Path(curves).parent.mkdir(parents=True, exist_ok=True)
    with open(curves, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "no_trigger_accuracy", "cumulative_trigger_fraction"])
        c = report.curve
        for t, acc, frac in zip(c["t"], c["no_trigger_accuracy"], c["cumulative_trigger_fraction"]):
            writer.writerow([int(t), "" if np.isnan(acc) else repr(float(acc)), repr(float(frac))])
    for r in report.rows:
        click.echo(f"{r.method:9s} earliness {r.earliness_s:6.2f} s  availability {r.availability:.4f}  "
                   f"accuracy {r.accuracy:.4f}  hypervolume {r.hypervolume:.4f}")


def run(argv: Optional[list] = None) -> int:
    """Entry point; expected failures print one line and exit with status 1."""
    try:
        main.main(args=argv, prog_name="egolane", standalone_mode=False)
    except click.exceptions.Exit as exc:
        return exc.exit_code
    except click.ClickException as exc:
        exc.show()
        return exc.exit_code
    except click.Abort:
        click.echo("aborted", err=True)
        return 1
    except EXPECTED_ERRORS as exc:
        click.echo(f"error: {exc}", err=True)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(run())
