"""Command line entry point: ``safexplore <subcommand> --config FILE --out PATH``."""
from __future__ import annotations

import argparse
import csv
import io
import sys
from pathlib import Path

import numpy as np

from .config import ConfigError, load_scenario
from .matrix import _csv_value, load_matrix, run_matrix, summary_rows

EXIT_CONFIG = 2


def _write_rows(path: Path, header, rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_csv_value(v) for v in row])
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(buf.getvalue())


def cmd_run(args) -> int:
    matrix = load_matrix(args.config, args.seed_offset)
    results = run_matrix(matrix, args.out, jobs=args.jobs)
    failed = [r["cell"] for r in summary_rows(results) if r["status"] != "ok"]
    n_eps = sum(len(r.series) for r in results)
    print(f"{len(results)} cells, {n_eps} episodes written to {args.out}")
    for cell in failed:
        print(f"cell {cell}: some episodes failed (see summary.csv)", file=sys.stderr)
    return 0


def cmd_train_nn(args) -> int:
    from .neural import save_model, train_from_config

    config = load_scenario(args.config)
    model, data = train_from_config(config)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_model(model, out)
    loss_path = out.with_name(out.stem + ".loss.csv")
    _write_rows(loss_path, ["epoch", "loss"], enumerate(model.loss_curve_))
    final = model.loss_curve_[-1] if model.loss_curve_ else float("nan")
    # targets are standardized increments, so the loss is already a fraction of their variance
    print(f"trained on {len(data)} windows; final loss {final:.4g} of unit target variance; model written to {out}")
    return 0


def cmd_influence_map(args) -> int:
    from .metrics import influence_map
    from .sim import truth_from_config
    from .world import AgentState

    config = load_scenario(args.config)
    human = truth_from_config(config)
    axis = np.round(np.arange(-args.extent, args.extent + 1e-9, args.res), 10)
    field_ = influence_map(human, AgentState(np.zeros(2)), axis, axis)
    rows = [(x, y, field_[i, j]) for i, y in enumerate(axis) for j, x in enumerate(axis)]
    _write_rows(Path(args.out), ["robot_x", "robot_y", "influence"], rows)
    print(f"influence map ({len(axis)}x{len(axis)}, gamma={config.human.gamma}) written to {args.out}")
    return 0


def _episode_rows(results, metric):
    for res in results:
        for seed in res.seeds:
            if seed in res.series:
                vals = res.series[seed][metric]
                finite = vals[np.isfinite(vals)]
                yield res.cell_id, seed, float(np.mean(finite)) if finite.size else float("nan"), \
                    float(vals[-1]) if vals.size else float("nan")


def cmd_reachable_set(args) -> int:
    matrix = load_matrix(args.config, args.seed_offset).with_overrides(**{"metrics.reachable_set": True})
    out = Path(args.out)
    results = run_matrix(matrix, out, jobs=args.jobs)
    _write_rows(out / "reachable_set.csv", ["cell", "seed", "episode_mean", "final"],
                _episode_rows(results, "reachable_set"))
    print(f"reachable-set sizes for {len(results)} cells written to {out / 'reachable_set.csv'}")
    return 0


def cmd_held_out(args) -> int:
    matrix = load_matrix(args.config, args.seed_offset).with_overrides(**{"metrics.held_out": True})
    out = Path(args.out)
    results = run_matrix(matrix, out, jobs=args.jobs)
    _write_rows(out / "held_out.csv", ["cell", "seed", "episode_mean", "final"],
                _episode_rows(results, "held_out_error"))
    print(f"held-out errors for {len(results)} cells written to {out / 'held_out.csv'}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="safexplore", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def matrix_cmd(name, func, help_):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", required=True, help="matrix config (JSON)")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed-offset", type=int, default=0, help="added to every seed")
        p.add_argument("--jobs", type=int, default=1, help="grid cells run in parallel")
        p.set_defaults(func=func)

    matrix_cmd("run", cmd_run, "run every cell of an experiment grid")
    matrix_cmd("reachable-set", cmd_reachable_set, "grid run with the safe reachable-set metric enabled")
    matrix_cmd("held-out", cmd_held_out, "grid run reporting held-out model error per episode")

    p = sub.add_parser("train-nn", help="generate the training set and fit the network human model")
    p.add_argument("--config", required=True, help="scenario config (JSON) with a 'neural' section")
    p.add_argument("--out", required=True, help="model file to write (JSON)")
    p.set_defaults(func=cmd_train_nn)

    p = sub.add_parser("influence-map", help="one-step human response to robot positions around it")
    p.add_argument("--config", required=True, help="scenario config (JSON)")
    p.add_argument("--out", required=True, help="CSV file to write")
    p.add_argument("--extent", type=float, default=3.0, help="half-width of the square grid (m)")
    p.add_argument("--res", type=float, default=0.1, help="grid spacing (m)")
    p.set_defaults(func=cmd_influence_map)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "jobs", 1) < 1:
        parser.error("--jobs must be at least 1")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
