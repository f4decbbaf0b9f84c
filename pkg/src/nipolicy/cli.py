"""Command-line entry point for the whole pipeline.

Subcommands: generate, oracle, train, eval, sweep, validate, gradcheck.
Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
All file outputs land under --output-dir; -o style paths are interpreted
relative to it unless absolute.  A --config file (same plain-text document
format as the data files) supplies defaults that explicit flags override.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import evaluation, gradcheck, textio, transport
from .errors import DataError, NumericalError
from .instances import generate_instance, read_instance, validate_instance, write_instance
from .network import initialize_network, load_checkpoint, save_checkpoint
from .occupancy import (
    occupancy_violations,
    read_occupancy,
    solve_occupancy,
    write_occupancy,
)
from .training import TrainConfig, train

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERICAL = 3


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def _fractions(text: str) -> list[float]:
    try:
        return [float(tok) for tok in text.split(",") if tok.strip() != ""]
    except ValueError as exc:
        raise _UsageError(f"bad fraction list {text!r}") from exc


def _int_list(text: str) -> list[int]:
    try:
        return [int(tok) for tok in text.split(",") if tok.strip() != ""]
    except ValueError as exc:
        raise _UsageError(f"bad integer list {text!r}") from exc


def _float_list(text: str) -> list[float]:
    try:
        return [float(tok) for tok in text.split(",") if tok.strip() != ""]
    except ValueError as exc:
        raise _UsageError(f"bad real list {text!r}") from exc


def build_parser() -> _Parser:
    parser = _Parser(prog="nipolicy", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--output-dir", default=".", help="directory for all outputs")
    common.add_argument("--config", default=None, help="plain-text config file with defaults")

    p = sub.add_parser("generate", parents=[common], help="generate a synthetic instance")
    p.add_argument("--arms", type=int, default=None)
    p.add_argument("--states", type=int, default=None)
    p.add_argument("--actions", type=int, default=None)
    p.add_argument("--budget-frac", type=str, default=None,
                   help="comma-separated active-action fractions of the cohort")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("-o", "--output", default=None)

    p = sub.add_parser("validate", parents=[common], help="check instance invariants")
    p.add_argument("--instance", required=True)

    p = sub.add_parser("oracle", parents=[common], help="solve the occupancy LP")
    p.add_argument("--instance", required=True)
    p.add_argument("-o", "--output", default=None)

    p = sub.add_parser("train", parents=[common], help="train the index network")
    p.add_argument("--instance", required=True)
    p.add_argument("--oracle", default=None, help="occupancy file (required for kl loss)")
    p.add_argument("--loss", choices=("kl", "reward", "kl+reward"), default=None)
    p.add_argument("--epsilon", type=float, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--batch", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--momentum", type=float, default=None)
    p.add_argument("--hidden", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--rollout-horizon", type=int, default=None)
    p.add_argument("--eval-every", type=int, default=None)
    p.add_argument("--eval-batches", type=int, default=None)
    p.add_argument("--checkpoint-every", type=int, default=None)
    p.add_argument("--resume", default=None, help="checkpoint to continue from")
    p.add_argument("--checkpoint-out", default=None)
    p.add_argument("--log-out", default=None)

    p = sub.add_parser("eval", parents=[common], help="simulate and report reward gaps")
    p.add_argument("--instance", required=True)
    p.add_argument("--oracle", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--batches", type=int, default=None)
    p.add_argument("--horizon", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--mode", choices=("round", "sample"), default=None)
    p.add_argument("--epsilon", type=float, default=None)
    p.add_argument("--raw-random", action="store_true",
                   help="random baseline ignores budgets (unconstrained)")
    p.add_argument("--timeseries-out", default=None)
    p.add_argument("--summary-out", default=None)

    p = sub.add_parser("sweep", parents=[common], help="grid over cohort sizes and epsilons")
    p.add_argument("--arms-list", type=str, default=None)
    p.add_argument("--epsilon-list", type=str, default=None)
    p.add_argument("--seeds", type=str, default=None)
    p.add_argument("--states", type=int, default=None)
    p.add_argument("--actions", type=int, default=None)
    p.add_argument("--budget-frac", type=str, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--batch", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--loss", choices=("kl", "reward", "kl+reward"), default=None)
    p.add_argument("--eval-batches", type=int, default=None)
    p.add_argument("--eval-horizon", type=int, default=None)
    p.add_argument("--jobs", type=int, default=None)
    p.add_argument("--summary-out", default=None)
    p.add_argument("--plot-out", default=None)

    p = sub.add_parser("gradcheck", parents=[common],
                       help="finite-difference checks of every backward pass")
    p.add_argument("--seed", type=int, default=None)

    return parser


_DEFAULTS = {
    "generate": {"arms": 50, "states": 5, "actions": 4, "budget_frac": "0.2,0.1,0.1",
                 "seed": 0, "output": "instance.txt"},
    "oracle": {"output": "occupancy.txt"},
    "train": {"loss": "kl", "epsilon": 0.1, "epochs": 500, "batch": 16, "lr": 0.05,
              "momentum": 0.9, "hidden": 64, "seed": 0, "rollout_horizon": 10,
              "eval_every": 0, "eval_batches": 10, "checkpoint_every": 0,
              "checkpoint_out": "checkpoint.txt", "log_out": "train_log.csv"},
    "eval": {"batches": 50, "horizon": 50, "seed": 0, "mode": "round", "epsilon": 0.1,
             "timeseries_out": "eval_timeseries.csv", "summary_out": "eval_summary.csv"},
    "sweep": {"arms_list": "10,50", "epsilon_list": "0.1", "seeds": "0", "states": 5,
              "actions": 4, "budget_frac": "0.2,0.1,0.1", "epochs": 500, "batch": 16,
              "lr": 0.05, "loss": "kl", "eval_batches": 50, "eval_horizon": 50,
              "jobs": 1, "summary_out": "sweep_summary.csv", "plot_out": "sweep_table.dat"},
    "gradcheck": {"seed": 0},
}


def _apply_config(args: argparse.Namespace) -> argparse.Namespace:
    """Fill unset options from --config file, then from built-in defaults."""
    defaults = dict(_DEFAULTS.get(args.command, {}))
    if args.config:
        doc = textio.read_document(args.config, expect_kind="run-config")
        for key, value in doc.items():
            if key == "_kind":
                continue
            defaults[key.replace("-", "_")] = value
    for key, value in defaults.items():
        if getattr(args, key, None) is None:
            setattr(args, key, value)
    return args


def _outpath(args, name: str) -> str:
    path = str(name)
    if os.path.isabs(path):
        return path
    os.makedirs(args.output_dir, exist_ok=True)
    return os.path.join(args.output_dir, path)


def _cmd_generate(args) -> int:
    inst = generate_instance(
        int(args.arms), int(args.states), int(args.actions),
        _fractions(str(args.budget_frac)), int(args.seed),
    )
    path = _outpath(args, args.output)
    write_instance(inst, path)
    budgets = ", ".join(f"action {a}: {int(b)}" for a, b in enumerate(inst.budgets))
    print(f"wrote {path}")
    print(f"budgets ({inst.n_arms} arms): {budgets}")
    return EXIT_OK


def _cmd_validate(args) -> int:
    inst = read_instance(args.instance)
    problems = validate_instance(inst)
    if problems:
        for msg in problems:
            print(msg)
        print(f"{len(problems)} violation(s)")
        return EXIT_DATA
    print("instance valid")
    return EXIT_OK


def _cmd_oracle(args) -> int:
    inst = read_instance(args.instance)
    om = solve_occupancy(inst)
    problems = occupancy_violations(inst, om)
    if problems:
        for msg in problems:
            print(msg)
        return EXIT_NUMERICAL
    path = _outpath(args, args.output)
    write_occupancy(inst, om, path)
    print(f"wrote {path}")
    print(f"upper bound (per-step cohort reward): {om.objective_value:.10g}")
    return EXIT_OK


def _cmd_train(args) -> int:
    inst = read_instance(args.instance)
    om = None
    if args.oracle:
        om = read_occupancy(args.oracle)
        if om.omega.shape != (inst.n_arms, inst.n_states, inst.n_actions):
            raise DataError("occupancy file does not match the instance dimensions")
    loss = str(args.loss)
    if loss in ("kl", "kl+reward") and om is None:
        raise DataError("--loss kl requires --oracle with the occupancy file")

    ckpt_path = _outpath(args, args.checkpoint_out)
    start_epoch = 0
    if args.resume:
        net, extra = load_checkpoint(args.resume)
        start_epoch = int(extra.get("next_epoch", 0))
        expected = inst.n_arms + inst.n_states
        if net.n_inputs != expected or net.n_actions != inst.n_actions:
            raise DataError(
                f"checkpoint width {net.n_inputs}x{net.n_actions} does not fit the "
                f"instance ({expected}x{inst.n_actions})"
            )
    else:
        net = initialize_network(
            inst.n_arms + inst.n_states, inst.n_actions,
            hidden=int(args.hidden), seed=int(args.seed), momentum=float(args.momentum),
        )

    config = TrainConfig(
        epochs=int(args.epochs),
        batch_size=int(args.batch),
        learning_rate=float(args.lr),
        epsilon=float(args.epsilon),
        loss=loss,
        rollout_horizon=int(args.rollout_horizon),
        seed=int(args.seed),
        eval_every=int(args.eval_every),
        eval_batches=int(args.eval_batches),
        checkpoint_every=int(args.checkpoint_every),
        checkpoint_path=ckpt_path,
    )
    log = train(inst, om, net, config, start_epoch=start_epoch, dump_dir=args.output_dir)
    log_path = _outpath(args, args.log_out)
    log.write_csv(log_path)
    print(f"wrote {ckpt_path}")
    print(f"wrote {log_path}")
    if log.train_loss:
        print(f"final training loss: {log.train_loss[-1]:.6g}")
    return EXIT_OK


def _cmd_eval(args) -> int:
    inst = read_instance(args.instance)
    om = read_occupancy(args.oracle)
    if om.omega.shape != (inst.n_arms, inst.n_states, inst.n_actions):
        raise DataError("occupancy file does not match the instance dimensions")
    net, _ = load_checkpoint(args.checkpoint)
    expected = inst.n_arms + inst.n_states
    if net.n_inputs != expected or net.n_actions != inst.n_actions:
        raise DataError(
            f"checkpoint width {net.n_inputs}x{net.n_actions} does not fit the "
            f"instance ({expected}x{inst.n_actions})"
        )
    import time

    started = time.perf_counter()
    report = evaluation.evaluate(
        inst, om, net,
        batches=int(args.batches),
        horizon=int(args.horizon),
        seed=int(args.seed),
        mode=str(args.mode),
        epsilon=float(args.epsilon),
        random_respects_budgets=not args.raw_random,
    )
    runtime = time.perf_counter() - started
    ts_path = _outpath(args, args.timeseries_out)
    report.write_timeseries_csv(ts_path)
    summary_path = _outpath(args, args.summary_out)
    evaluation.write_summary_csv([evaluation.summary_row(report, runtime)], summary_path)
    print(f"wrote {ts_path}")
    print(f"wrote {summary_path}")
    baseline = "budget-respecting" if report.random_respects_budgets else "unconstrained"
    print(f"reward gap: {report.gap_pct:.3f}%  (random baseline [{baseline}]: "
          f"{report.random_gap_pct:.3f}%)")
    print(f"oracle LP bound per step: {report.oracle_bound:.6g}")
    return EXIT_OK


def _cmd_sweep(args) -> int:
    import time

    cells = evaluation.run_sweep(
        _int_list(str(args.arms_list)),
        _float_list(str(args.epsilon_list)),
        _int_list(str(args.seeds)),
        n_states=int(args.states),
        n_actions=int(args.actions),
        budget_fractions=_fractions(str(args.budget_frac)),
        epochs=int(args.epochs),
        batch_size=int(args.batch),
        learning_rate=float(args.lr),
        loss=str(args.loss),
        eval_batches=int(args.eval_batches),
        eval_horizon=int(args.eval_horizon),
        jobs=int(args.jobs),
    )
    rows = []
    for cell in cells:
        report = cell.get("report")
        if report is not None:
            rows.append(evaluation.summary_row(report, cell["runtime_s"], cell["status"]))
        else:
            rows.append(
                f"{cell['n_arms']},{cell['n_states']},{cell['n_actions']},"
                f"{cell['epsilon']:.17g},{cell['seed']},nan,nan,nan,"
                f"{cell['status']},{cell['runtime_s']:.3f}"
            )
    summary_path = _outpath(args, args.summary_out)
    evaluation.write_summary_csv(rows, summary_path)
    plot_path = _outpath(args, args.plot_out)
    evaluation.write_gnuplot_table(cells, plot_path)
    print(f"wrote {summary_path}")
    print(f"wrote {plot_path}")
    for cell in cells:
        print(
            f"N={cell['n_arms']} eps={cell['epsilon']} seed={cell['seed']}: "
            f"gap={cell['gap_pct']:.3f}% random={cell['random_gap_pct']:.3f}% [{cell['status']}]"
        )
    return EXIT_OK


def _cmd_gradcheck(args) -> int:
    seed = int(args.seed)
    inst = generate_instance(4, 3, 3, [0.3, 0.2], seed=seed)
    om = solve_occupancy(inst)
    states = np.random.default_rng(seed).integers(0, inst.n_states, size=inst.n_arms)
    results = [
        gradcheck.check_network(seed=seed),
        gradcheck.check_sinkhorn(seed=seed),
        gradcheck.check_full_chain(inst, om, states, seed=seed),
    ]
    tolerances = {"network-layers": 1e-4, "sinkhorn-layer": 1e-4, "full-chain": 1e-3}
    failed = False
    for res in results:
        tol = tolerances[res["name"]]
        ok = res["max_rel_error"] < tol
        failed = failed or not ok
        print(
            f"{res['name']}: max relative error {res['max_rel_error']:.3e} "
            f"over {res['n_checked']} entries (tolerance {tol:g}) "
            f"{'ok' if ok else 'FAIL'}"
        )
    if failed:
        print("gradient check failed")
        return EXIT_NUMERICAL
    print("all gradient checks passed")
    return EXIT_OK


_HANDLERS = {
    "generate": _cmd_generate,
    "validate": _cmd_validate,
    "oracle": _cmd_oracle,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "sweep": _cmd_sweep,
    "gradcheck": _cmd_gradcheck,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        args = _apply_config(args)
        return _HANDLERS[args.command](args)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
