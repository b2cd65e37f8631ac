"""Command-line entry point.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric failure.
Every subcommand accepts ``--config FILE.json`` whose keys act as defaults for
the flags (flag names with dashes replaced by underscores); explicit flags win.
"""

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import io, pipeline
from .attacks import ATTACK_KINDS, AttackConfig, attack_queries, relation_stats
from .detector import DEFAULT_VOTING_THRESHOLD, Hyperparams, hyperparams_dict, train_detector
from .errors import ConfigError, DataError, EmptyInput, InvalidConfig, MeaadError, NotTrained
from .features import BLOCKS, featurize, select_blocks, subset_experts
from .scenario import ScenarioConfig, generate_scenario, split_queries

log = logging.getLogger("meaad")


def default_seed() -> int:
    raw = os.environ.get("MEAAD_SEED")
    if raw is None:
        return 0
    try:
        return int(raw)
    except ValueError:
        raise InvalidConfig(f"MEAAD_SEED must be an integer, got {raw!r}") from None


def _int_list(text):
    return [int(t) for t in str(text).split(",") if t.strip()]


def _blocks(text):
    blocks = tuple(t.strip() for t in str(text).split(",") if t.strip())
    unknown = set(blocks) - set(BLOCKS)
    if unknown or not blocks:
        raise argparse.ArgumentTypeError(f"blocks must be a non-empty subset of {','.join(BLOCKS)}")
    return blocks


def _add_scenario_args(p):
    p.add_argument("--identities", type=int, default=50)
    p.add_argument("--per-id", type=int, default=20)
    p.add_argument("--experts", type=int, default=4)
    p.add_argument("--dim", type=int, default=128)
    p.add_argument("--sigma", type=float, default=0.05, help="cluster noise std-dev")
    p.add_argument("--tau", type=float, default=0.02, help="cross-expert jitter std-dev")
    p.add_argument("--queries-per-identity", type=int, default=10)


def _scenario(args, seed):
    return ScenarioConfig(
        args.identities, args.per_id, args.experts, args.dim, args.sigma, args.tau,
        args.queries_per_identity, seed,
    )


def _add_train_args(p):
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--momentum", type=float, default=0.9)
    p.add_argument("--batch-size", type=int, default=1024)
    p.add_argument("--iterations", type=int, default=5000)
    p.add_argument("--hidden", type=_int_list, default=[512, 256])
    p.add_argument("--precision", choices=("float32", "float64"), default="float32")


def _hyperparams(args, seed):
    return Hyperparams(args.lr, args.momentum, args.batch_size, args.iterations, seed, tuple(args.hidden),
                       args.precision)


def _add_attack_args(p):
    p.add_argument("--kind", choices=ATTACK_KINDS, default="naive")
    p.add_argument("--epsilon", type=float)
    p.add_argument("--steps", type=int)
    p.add_argument("--step-size", type=float)
    p.add_argument("--affinity-weight", type=float)
    p.add_argument("--refresh-every", type=int)
    p.add_argument("--target-identity", type=int)
    p.add_argument("--no-random-start", action="store_true")


def _attack_config(args, seed, k):
    return AttackConfig.for_kind(
        args.kind,
        epsilon=args.epsilon,
        steps=args.steps,
        step_size=args.step_size,
        affinity_weight=args.affinity_weight,
        refresh_every=args.refresh_every,
        target_identity=args.target_identity,
        random_start=False if args.no_random_start else None,
        seed=seed,
        k=k,
    )


def _resolved(args) -> dict:
    skip = {"func", "config"}
    return {k: v for k, v in vars(args).items() if k not in skip}


def _record(args, path, **extra):
    cfg = dict(_resolved(args), **extra)
    pipeline.record_config(Path(str(path) + ".run.json"), cfg)


def _load_queries(paths):
    out = []
    for p in paths:
        out += io.read_queries(p)
    return out


# -- subcommands -------------------------------------------------------------


def cmd_gen(args):
    seed = args.seed
    scenario = _scenario(args, seed)
    indexes, queries = generate_scenario(scenario)
    out = Path(args.out)
    for idx in indexes:
        io.write_gallery(io.gallery_path(out, idx.expert_id), idx)
    io.write_queries(out / "queries.qry", queries, scenario.dimension, scenario.n_experts)
    pipeline.record_config(out / "run_config.json", dict(_resolved(args), scenario=scenario.to_dict()))
    print(f"wrote {len(indexes)} galleries and {len(queries)} queries to {out}")


def cmd_split(args):
    queries = io.read_queries(args.queries)
    train, test = split_queries(queries, args.eval_per_identity)
    d, n = queries[0].dimension, queries[0].n_experts
    io.write_queries(args.out_train, train, d, n)
    io.write_queries(args.out_eval, test, d, n)
    print(f"train {len(train)} / eval {len(test)} queries")


def cmd_attack(args):
    indexes = io.read_galleries(args.galleries)
    queries = io.read_queries(args.queries)
    k = args.k
    model = None
    if args.kind == "adaptive":
        if not args.model:
            raise NotTrained("--kind adaptive requires --model")
        model = io.read_model(args.model)
        k = model.support_size or k
    cfg = _attack_config(args, args.seed, k)
    result = attack_queries(queries, indexes, cfg, model)
    d, n = indexes[0].dimension, len(indexes)
    io.write_queries(args.out, result.queries, d, n)
    disp = [
        float(np.max(np.linalg.norm(a.embeddings - q.embeddings, axis=1))) for a, q in zip(result.queries, queries)
    ]
    n_success = None if result.successes is None else int(sum(result.successes))
    rate = None if n_success is None or not queries else n_success / len(queries)
    report = args.report or str(args.out) + ".report.csv"
    io.write_csv(
        report,
        ("kind", "n_queries", "epsilon", "steps", "step_size", "affinity_weight", "n_success", "success_rate",
         "max_displacement"),
        [[cfg.kind, len(queries), cfg.epsilon, cfg.steps, cfg.step_size, cfg.affinity_weight, n_success, rate,
          max(disp, default=0.0)]],
    )
    if result.successes is not None:
        io.write_csv(str(report) + ".per_query.csv", ("query_id", "success"),
                     ([q.query_id, int(s)] for q, s in zip(queries, result.successes)))
        print(f"targeted success: {n_success}/{len(queries)}")
    _record(args, args.out, attack=cfg.to_dict())
    print(f"wrote {len(result.queries)} attacked queries to {args.out}")


def cmd_featurize(args):
    indexes = io.read_galleries(args.galleries)
    queries = _load_queries(args.queries)
    if not queries:
        raise EmptyInput("no queries in the given files")
    pipeline.check_labels(queries, "featurize")
    if args.expert_subset:
        queries, indexes = subset_experts(queries, indexes, args.expert_subset)
    fb = featurize(queries, indexes, args.k)
    io.write_features(args.out, fb.n_experts, args.k, fb.query_ids, fb.labels, fb.matrix)
    _record(args, args.out)
    print(f"wrote {len(queries)} feature rows (n={fb.n_experts} k={args.k} d={fb.dim}) to {args.out}")


def cmd_train(args):
    n, k, _, labels, matrix = io.read_features(args.features)
    if matrix.shape[0] == 0:
        raise EmptyInput(f"{args.features} has no rows")
    x = select_blocks(matrix, n, k, args.blocks)
    hp = _hyperparams(args, args.seed)
    model = train_detector(x, labels, hp, n_experts=n, support_size=k,
                           feature_blocks=tuple(b for b in BLOCKS if b in args.blocks))
    io.write_model(args.out, model)
    loss_csv = args.loss_csv or str(args.out) + ".loss.csv"
    io.write_loss_curve(loss_csv, model.loss_history)
    _record(args, args.out, hyperparams=hyperparams_dict(hp))
    print(f"trained d={x.shape[1]} model, final batch loss {model.loss_history[-1]:.6f}" if hp.iterations
          else f"wrote untrained d={x.shape[1]} model")


def cmd_eval(args):
    n, k, _, labels, matrix = io.read_features(args.features)
    if matrix.shape[0] == 0:
        raise EmptyInput(f"{args.features} has no rows")
    pipeline.warn_if_unbalanced(labels)
    if args.detector == "mlp":
        if not args.model:
            raise NotTrained("--detector mlp requires --model")
        model = io.read_model(args.model)
        x = select_blocks(matrix, n, k, model.feature_blocks)
        report = pipeline.evaluate_model(model, x, labels, args.threshold)
    else:
        counts = pipeline.common_counts_from_features(matrix, n, k)
        report = pipeline.evaluate_voting(counts, labels, int(args.threshold))
    for key, value in report.row().items():
        print(f"{key}: {value}")
    if args.out:
        pipeline.write_report(args.out, args.detector, report)
        _record(args, args.out)
    if args.roc_out:
        io.write_csv(args.roc_out, ("fpr", "tpr"), report.roc_points)


def cmd_stats(args):
    indexes = io.read_galleries(args.galleries)
    queries = _load_queries(args.queries)
    if not queries:
        raise EmptyInput("no queries in the given files")
    stats = relation_stats(queries, indexes, args.k)
    io.write_relation_stats(args.out, stats)
    _record(args, args.out)
    for label in ("benign", "adversarial"):
        rows = [s for s in stats if s.label == label]
        if rows:
            cc = [s.common_count for s in rows if s.common_count is not None]
            print(f"{label}: n={len(rows)} qs_mean={np.mean([s.qs_mean for s in rows]):.4f}"
                  + (f" common={np.mean(cc):.3f}" if cc else ""))


def cmd_ablate(args):
    indexes = io.read_galleries(args.galleries)
    train_q = io.read_queries(args.train_benign) + io.read_queries(args.train_adv)
    eval_q = io.read_queries(args.eval_benign) + io.read_queries(args.eval_adv)
    pipeline.check_labels(train_q + eval_q, "ablate")
    hp = _hyperparams(args, args.seed)
    rows = pipeline.ablate(
        indexes, train_q, eval_q, hp, args.k,
        expert_subsets=pipeline.parse_subsets(args.expert_subsets) if args.expert_subsets else (),
        k_values=_int_list(args.k_values) if args.k_values else (),
        feature_subsets=pipeline.parse_subsets(args.feature_subsets, str) if args.feature_subsets else (),
    )
    io.write_csv(args.out, pipeline.ABLATION_HEADER, (r.csv_row() for r in rows))
    _record(args, args.out, hyperparams=hyperparams_dict(hp))
    for r in rows:
        print(f"{r.group:13s} experts={','.join(map(str, r.experts)):8s} k={r.k:3d} "
              f"blocks={','.join(r.blocks):9s} d={r.d:4d} acc={r.report.accuracy:.4f} auc={r.report.roc_auc:.4f}")


def cmd_pipeline(args):
    seed = args.seed
    scenario = _scenario(args, seed)
    attack = AttackConfig.for_kind("naive", epsilon=args.epsilon, k=args.k)
    exp = pipeline.write_pipeline(args.out, scenario, args.eval_per_identity, args.k, attack,
                                  _hyperparams(args, seed), seed)
    for key, value in exp.report.row().items():
        print(f"{key}: {value}")


# -- parser ------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="meaad", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", help="JSON file of flag defaults")
        p.add_argument("--seed", type=int, default=None, help="defaults to $MEAAD_SEED or 0")
        p.set_defaults(func=func)
        return p

    p = add("gen", cmd_gen, "generate synthetic expert galleries and benign queries")
    _add_scenario_args(p)
    p.add_argument("--out", required=True)

    p = add("split", cmd_split, "split a query file into train/eval halves per identity")
    p.add_argument("--queries", required=True)
    p.add_argument("--eval-per-identity", type=int, default=10)
    p.add_argument("--out-train", required=True)
    p.add_argument("--out-eval", required=True)

    p = add("attack", cmd_attack, "perturb query embeddings (naive / adaptive / targeted)")
    p.add_argument("--galleries", required=True)
    p.add_argument("--queries", required=True)
    _add_attack_args(p)
    p.add_argument("--model", help="detector file (adaptive attacks)")
    p.add_argument("--k", type=int, default=15)
    p.add_argument("--out", required=True)
    p.add_argument("--report")

    p = add("featurize", cmd_featurize, "extract labeled context features")
    p.add_argument("--galleries", required=True)
    p.add_argument("--queries", required=True, nargs="+")
    p.add_argument("--k", type=int, default=15)
    p.add_argument("--expert-subset", type=_int_list)
    p.add_argument("--out", required=True)

    p = add("train", cmd_train, "train the MLP detector")
    p.add_argument("--features", required=True)
    _add_train_args(p)
    p.add_argument("--blocks", type=_blocks, default=BLOCKS)
    p.add_argument("--out", required=True)
    p.add_argument("--loss-csv")

    p = add("eval", cmd_eval, "evaluate a detector on a feature file")
    p.add_argument("--features", required=True)
    p.add_argument("--detector", choices=("mlp", "voting"), default="mlp")
    p.add_argument("--model")
    p.add_argument("--threshold", type=float, default=None,
                   help=f"probability threshold (mlp, default 0.5) or count threshold (voting, default "
                        f"{DEFAULT_VOTING_THRESHOLD})")
    p.add_argument("--out")
    p.add_argument("--roc-out")

    p = add("stats", cmd_stats, "emit per-query relation statistics CSV")
    p.add_argument("--galleries", required=True)
    p.add_argument("--queries", required=True, nargs="+")
    p.add_argument("--k", type=int, default=15)
    p.add_argument("--out", required=True)

    p = add("ablate", cmd_ablate, "retrain over expert subsets, support sizes and feature subsets")
    p.add_argument("--galleries", required=True)
    for name in ("train-benign", "train-adv", "eval-benign", "eval-adv"):
        p.add_argument(f"--{name}", required=True)
    p.add_argument("--k", type=int, default=15)
    p.add_argument("--expert-subsets", default="0;0,1;0,1,2;0,1,2,3;1,2,3")
    p.add_argument("--k-values", default=",".join(map(str, pipeline.DEFAULT_K_VALUES)))
    p.add_argument("--feature-subsets", default=";".join(",".join(s) for s in pipeline.DEFAULT_FEATURE_SUBSETS))
    _add_train_args(p)
    p.add_argument("--out", required=True)

    p = add("pipeline", cmd_pipeline, "gen -> naive attack -> featurize -> train -> eval in one run")
    _add_scenario_args(p)
    p.set_defaults(queries_per_identity=50)
    p.add_argument("--eval-per-identity", type=int, default=10)
    p.add_argument("--epsilon", type=float, default=0.8)
    p.add_argument("--k", type=int, default=15)
    _add_train_args(p)
    p.add_argument("--out", required=True)
    return parser


def _apply_config_file(parser, argv):
    args = parser.parse_args(argv)
    if not args.config:
        return args
    try:
        cfg = json.loads(Path(args.config).read_text())
    except OSError as exc:
        raise DataError(f"cannot read config {args.config}: {exc.strerror}") from None
    except ValueError as exc:
        raise ConfigError(f"config {args.config} is not valid JSON: {exc}") from None
    if not isinstance(cfg, dict):
        raise ConfigError("config file must hold a JSON object")
    known = set(vars(args))
    unknown = set(k.replace("-", "_") for k in cfg) - known
    if unknown:
        raise ConfigError(f"unknown config keys for {args.command}: {sorted(unknown)}")
    sub = parser._subparsers._group_actions[0].choices[args.command]
    sub.set_defaults(**{k.replace("-", "_"): v for k, v in cfg.items()})
    return parser.parse_args(argv)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = _apply_config_file(parser, argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        if args.seed is None:
            args.seed = default_seed()
        if getattr(args, "threshold", "absent") is None:
            args.threshold = 0.5 if args.detector == "mlp" else DEFAULT_VOTING_THRESHOLD
        args.func(args)
    except MeaadError as exc:
        print(f"meaad: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"meaad: error: {exc}", file=sys.stderr)
        return DataError.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
