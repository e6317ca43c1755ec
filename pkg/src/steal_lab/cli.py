"""steal-lab command line: gen-data, train-target, serve, steal, evaluate,
run-all, plot. All artifacts land under --out; logging level comes from
the STEAL_LAB_LOG environment variable (error|info|debug, default info).
"""

import argparse
import logging
import os
import sys
from pathlib import Path

from .config import parse_config
from .data import save_csv, split_halves, take
from .errors import StealLabError
from .experiment import (expected_report_rows, generate_data, grid_cells,
                         run_experiment, surrogate_spec_for_cell)
from .extraction import (ENSEMBLE_FAMILIES, TargetSpec, accuracy,
                         build_surrogate_set, evaluate_fidelity, fidelity_rng,
                         train_surrogate, train_target)
from .network import load_checkpoint, save_checkpoint
from .oracle import InProcessOracle, remote_oracle
from .predictive import ParamSampler
from .reporting import (median_curves, plot_curves, write_curves,
                        write_curves_raw, write_errors, write_report,
                        write_summary, write_timings)
from .seeding import SPLIT, derive_seed
from .server import serve

log = logging.getLogger("steal_lab")

LOG_LEVELS = {"error": logging.ERROR, "info": logging.INFO,
              "debug": logging.DEBUG}


def _setup_logging():
    level = os.environ.get("STEAL_LAB_LOG", "info").lower()
    if level not in LOG_LEVELS:
        level = "info"
    logging.basicConfig(level=LOG_LEVELS[level],
                        format="%(levelname)s %(name)s: %(message)s",
                        stream=sys.stderr)


def _load_config(args):
    overrides = {"out": getattr(args, "out", None)}
    if getattr(args, "oracle", None):
        overrides["oracle"] = args.oracle
    if getattr(args, "seed", None) is not None:
        overrides["seeds"] = (args.seed,)
    if getattr(args, "m", None) is not None:
        overrides["m_values"] = tuple(args.m)
    return parse_config(args.config, overrides)


def _out_dir(config):
    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_gen_data(args):
    config = _load_config(args)
    out = _out_dir(config)
    for seed in config.seeds:
        train_ds, test_ds = generate_data(config, seed)
        save_csv(train_ds, out / f"train_seed{seed}.csv")
        save_csv(test_ds, out / f"test_seed{seed}.csv")
        log.info("seed %d: wrote %d train / %d test rows", seed,
                 len(train_ds), len(test_ds))
    return 0


def cmd_train_target(args):
    config = _load_config(args)
    out = _out_dir(config)
    ckpt_dir = out / "checkpoints"
    ckpt_dir.mkdir(exist_ok=True)
    for seed in config.seeds:
        train_ds, test_ds = generate_data(config, seed)
        plan = split_halves(train_ds, test_ds, derive_seed(seed, SPLIT))
        target_train = take(train_ds, plan.target_train)
        target_test = take(test_ds, plan.target_test)
        for size_index, size in enumerate(config.target_sizes):
            spec = TargetSpec(size, epochs=config.epochs, lr=config.lr)
            net = train_target(spec, target_train, derive_seed(seed, size_index))
            acc = accuracy(net, target_test.features, target_test.labels)
            path = ckpt_dir / f"target_{size}_seed{seed}.json"
            save_checkpoint(net, path)
            print(f"target {size} seed {seed}: accuracy {acc:.4f} -> {path}")
    return 0


def cmd_serve(args):
    net = load_checkpoint(args.checkpoint)
    server = serve(net, bind=args.bind, start=False)
    print(f"serving {net.name!r} on {server.endpoint}", flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    return 0


def _sampler_kind_for(net):
    kinds = {"McDropoutLayer": "mc_dropout", "ConcreteDropoutLayer": "concrete",
             "VariationalDenseLayer": "variational"}
    found = {kinds[type(l).__name__] for l in net.layers
             if type(l).__name__ in kinds}
    if not found:
        return "deterministic"
    return found.pop() if len(found) == 1 else "stochastic"


def cmd_steal(args):
    """Single-oracle pipeline: query, train every configured family, score."""
    config = _load_config(args)
    out = _out_dir(config)
    seed = config.seeds[0]
    if config.oracle == "in_process":
        if not args.checkpoint:
            print("steal: need --oracle URL or --checkpoint PATH", file=sys.stderr)
            return 1
        oracle = InProcessOracle(load_checkpoint(args.checkpoint))
    else:
        oracle = remote_oracle(config.oracle, expect_input_dim=config.dims,
                               expect_num_classes=config.classes)

    train_ds, test_ds = generate_data(config, seed)
    plan = split_halves(train_ds, test_ds, derive_seed(seed, SPLIT))
    query_inputs = train_ds.features[plan.surrogate_query]
    fidelity_inputs = test_ds.features[plan.fidelity_test]
    surrogate_set = build_surrogate_set(oracle, query_inputs)
    save_csv(surrogate_set, out / "surrogate_set.csv")

    label = oracle.metadata.name
    ckpt_dir = out / "checkpoints"
    ckpt_dir.mkdir(exist_ok=True)
    rows, curves = [], []
    for family, trunk in grid_cells(config):
        spec = surrogate_spec_for_cell(config, family, trunk)
        cell_seed = derive_seed(seed, 0, config.families.index(family),
                                0 if family == "het_ensemble"
                                else config.trunks.index(trunk))
        sampler, curve = train_surrogate(spec, surrogate_set, fidelity_inputs,
                                         cell_seed)
        if len(sampler.members) == 1:
            save_checkpoint(sampler.network,
                            ckpt_dir / f"surrogate_{family}_{trunk}.json")
        else:
            for i, member in enumerate(sampler.members):
                save_checkpoint(member,
                                ckpt_dir / f"surrogate_{family}_{trunk}_m{i}.json")
        for epoch, value in enumerate(curve.values):
            curves.append({"dataset": config.dataset, "target_size": label,
                           "family": family, "trunk": trunk, "seed": seed,
                           "epoch": epoch, "variance": value})
        m_values = ([sampler.m] if family in ENSEMBLE_FAMILIES
                    else list(config.m_values))
        for m in m_values:
            fid = evaluate_fidelity(sampler.with_m(m), oracle, fidelity_inputs,
                                    fidelity_rng(seed, 0, family, trunk, m))
            rows.append({"dataset": config.dataset, "target_size": label,
                         "family": family, "trunk": trunk, "M": m,
                         "seed": seed, "fidelity": fid, "target_acc": None,
                         "queries": len(query_inputs)})
            print(f"{family:>14} {trunk:>7} M={m:<3} fidelity {fid:.4f}")
    write_report(out / "report.csv", rows)
    write_curves_raw(out / "curves_raw.csv", curves)
    write_curves(out / "curves.csv", median_curves(curves, label))
    plot_curves(out / "curves.csv", out / "plots")
    return 0


def cmd_evaluate(args):
    config = _load_config(args)
    seed = config.seeds[0]
    surrogate_net = load_checkpoint(args.surrogate)
    if config.oracle == "in_process":
        if not args.checkpoint:
            print("evaluate: need --oracle URL or --checkpoint PATH",
                  file=sys.stderr)
            return 1
        oracle = InProcessOracle(load_checkpoint(args.checkpoint))
    else:
        oracle = remote_oracle(config.oracle)
    train_ds, test_ds = generate_data(config, seed)
    plan = split_halves(train_ds, test_ds, derive_seed(seed, SPLIT))
    fidelity_inputs = test_ds.features[plan.fidelity_test]
    kind = _sampler_kind_for(surrogate_net)
    m = args.m[0] if args.m else max(config.m_values)
    sampler = ParamSampler(kind, [surrogate_net],
                           1 if kind == "deterministic" else m)
    fid = evaluate_fidelity(sampler, oracle, fidelity_inputs,
                            fidelity_rng(seed, 0, "baseline", "arch_A", m))
    print(f"fidelity {fid:.4f}")
    return 0


def cmd_run_all(args):
    config = _load_config(args)
    out = _out_dir(config)
    result = run_experiment(config, jobs=args.jobs,
                            checkpoint_dir=str(out / "checkpoints"))
    write_report(out / "report.csv", result.rows)
    write_curves_raw(out / "curves_raw.csv", result.curves)
    small = config.target_sizes[0]
    write_curves(out / "curves.csv", median_curves(result.curves, small))
    write_timings(out / "timings.csv", result.timings)
    if result.errors:
        write_errors(out / "errors.csv", result.errors)
    write_summary(out / "summary.txt", result.rows, result.timings,
                  result.curves)
    plots = plot_curves(out / "curves.csv", out / "plots")
    expected = expected_report_rows(config)
    print(f"wrote {len(result.rows)} report rows (grid size {expected}), "
          f"{len(plots)} figures -> {out}")
    if result.errors:
        print(f"{len(result.errors)} grid cells failed; see errors.csv",
              file=sys.stderr)
    return 0


def cmd_plot(args):
    written = plot_curves(args.curves, args.out)
    print(f"wrote {len(written)} figures -> {args.out}")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="steal-lab",
        description="Desk-scale model extraction with UQ surrogates")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, config=True):
        if config:
            p.add_argument("--config", required=True, help="experiment config file")
            p.add_argument("--out", help="output directory (overrides config)")
            p.add_argument("--seed", type=int, help="replace the config seed list")
        return p

    add_common(sub.add_parser("gen-data", help="write dataset CSVs"))
    add_common(sub.add_parser("train-target", help="train and checkpoint targets"))

    p = sub.add_parser("serve", help="serve a checkpoint as a hard-label oracle")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--bind", default="127.0.0.1:8008", help="HOST:PORT")

    p = add_common(sub.add_parser("steal", help="run the surrogate pipeline "
                                               "against one oracle"))
    p.add_argument("--oracle", help="oracle URL (default: in-process checkpoint)")
    p.add_argument("--checkpoint", help="target checkpoint for in-process mode")
    p.add_argument("--m", type=int, nargs="*", help="forward-pass counts")

    p = add_common(sub.add_parser("evaluate", help="fidelity of a surrogate "
                                                   "checkpoint against an oracle"))
    p.add_argument("--surrogate", required=True, help="surrogate checkpoint")
    p.add_argument("--oracle", help="oracle URL")
    p.add_argument("--checkpoint", help="target checkpoint for in-process mode")
    p.add_argument("--m", type=int, nargs="*", help="forward-pass count")

    p = add_common(sub.add_parser("run-all", help="full grid, reports and plots"))
    p.add_argument("--jobs", type=int, default=1, help="parallel seed workers")

    p = sub.add_parser("plot", help="render variance-curve SVGs from a curves CSV")
    p.add_argument("--curves", required=True)
    p.add_argument("--out", required=True)

    return parser


COMMANDS = {"gen-data": cmd_gen_data, "train-target": cmd_train_target,
            "serve": cmd_serve, "steal": cmd_steal, "evaluate": cmd_evaluate,
            "run-all": cmd_run_all, "plot": cmd_plot}


def main(argv=None):
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except StealLabError as exc:
        print(f"steal-lab {args.command}: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"steal-lab {args.command}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
