"""``dpmpn`` command line.

Every subcommand takes ``--config FILE``, ``--seed N`` and any number of
``--key=value`` overrides of config keys.  Exit codes: 0 ok, 1 usage or
config error, 2 data or checkpoint error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import checkpoint
from .attention import AttentionError
from .config import Config, ConfigError, parse_config, parse_overrides, write_effective
from .evaluation import compute_metrics, eval_queries, evaluate, evaluate_map, load_negatives
from .expansion import check_strategy_nesting, validate_proposition
from .gradcheck import model_gradcheck
from .graph import DataError, build_graph, dataset_stats, known_tails, load_splits
from .params import ModelParams
from .training import NumericError, TrainLog, forward_batch, train, training_queries
from .visualize import export_dot

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _emit(line: str, out=None) -> None:
    out = out or sys.stdout
    out.write(line + "\n")
    out.flush()


# ------------------------------------------------------------------ helpers

def _config(args, extra) -> Config:
    overrides = parse_overrides(extra)
    if args.seed is not None:
        overrides["seed"] = args.seed
    if getattr(args, "data_dir", None):
        d = Path(args.data_dir)
        for split in ("train", "valid", "test"):
            key = f"{split}_path"
            if key not in overrides:
                for name in (f"{split}.txt", f"{split}.tsv"):
                    if (d / name).exists():
                        overrides[key] = str(d / name)
                        break
    return parse_config(args.config, overrides, Config())


def _load_data(cfg: Config):
    if not cfg.train_path:
        raise DataError("train_path is not set (use --train_path=FILE or --data-dir DIR)")
    train, valid, test = load_splits(cfg.train_path, cfg.valid_path or None, cfg.test_path or None)
    g = build_graph(train, cfg.add_inverse, cfg.add_self_loops)
    return train, valid, test, g


def _rngs(seed: int):
    init_seq, run_seq = np.random.SeedSequence(seed).spawn(2)
    return np.random.default_rng(init_seq), np.random.default_rng(run_seq)


def _model(cfg: Config, g, ckpt: str | None, rng: np.random.Generator) -> ModelParams:
    if ckpt:
        return checkpoint.load(ckpt, (g.n_entities, g.n_relations, cfg.n_dims, cfg.n_dims_att))
    return ModelParams.init(g.n_entities, g.n_relations, cfg.n_dims, cfg.n_dims_att, rng,
                            init_scale=cfg.init_scale)


def _out_dir(cfg: Config) -> Path:
    out = Path(cfg.output_dir or "dpmpn_out")
    out.mkdir(parents=True, exist_ok=True)
    return out


# -------------------------------------------------------------- subcommands

def cmd_train(args, cfg: Config) -> int:
    train_set, _, _, g = _load_data(cfg)
    out = _out_dir(cfg)
    write_effective(cfg, out)
    _emit(f"config={out / 'effective_config.txt'}")
    init_rng, run_rng = _rngs(cfg.seed)
    params = _model(cfg, g, args.init_checkpoint, init_rng)
    queries = training_queries(train_set, g)
    log_path = out / "train_log.txt"
    with log_path.open("w", encoding="utf-8") as fh:
        def on_step(e):
            line = TrainLog.format(e)
            fh.write(line + "\n")
            _emit(line)
        train(params, g, queries, cfg, run_rng, on_step=on_step, max_steps=args.max_steps)
    path = checkpoint.save(params, out / "model.ckpt")
    _emit(f"checkpoint={path}")
    return EXIT_OK


def cmd_eval(args, cfg: Config) -> int:
    train_set, valid, test, g = _load_data(cfg)
    split = test if args.split == "test" else valid
    if split is None:
        raise DataError(f"{args.split}_path is not set")
    init_rng, run_rng = _rngs(cfg.seed)
    params = _model(cfg, g, args.checkpoint, init_rng)
    parts = [s.triples for s in (train_set, valid, test) if s is not None]
    queries = eval_queries(split.triples, g)
    known = known_tails([eval_queries(p, g) for p in parts])
    ranks, _ = evaluate(params, g, queries, known, cfg, run_rng)
    for r in ranks:
        h, rel, t = r.query
        _emit(f"query head={g.entity_name(h)} rel={g.relation_name(rel)} tail={g.entity_name(t)} "
              f"rank={r.rank} candidates={r.n_candidates}")
    metrics = compute_metrics(ranks)
    if cfg.negatives_path:
        ent_ids = {n: i for i, n in enumerate(train_set.entity_names)}
        rel_ids = {n: i for i, n in enumerate(train_set.relation_names)}
        groups = load_negatives(cfg.negatives_path, ent_ids, rel_ids)
        metrics["map"] = evaluate_map(params, g, groups, cfg, run_rng)
    for k, v in metrics.items():
        if not math.isfinite(v):
            raise NumericError(f"metric {k} is not finite")
        _emit(f"metric={k} value={v:.6f}")
    return EXIT_OK


def cmd_stats(args, cfg: Config) -> int:
    train_set, valid, test, _ = _load_data(cfg)
    for line in dataset_stats(train_set, valid, test).to_lines():
        _emit(line)
    return EXIT_OK


def cmd_visualize(args, cfg: Config) -> int:
    _, _, _, g = _load_data(cfg)
    init_rng, run_rng = _rngs(cfg.seed)
    params = _model(cfg, g, args.checkpoint, init_rng)
    ent = {g.entity_name(i): i for i in range(g.n_entities)}
    rel = {g.relation_name(i): i for i in range(g.n_relations)}
    if args.head not in ent:
        raise DataError(f"unknown entity {args.head!r}")
    if args.relation not in rel:
        raise DataError(f"unknown relation {args.relation!r}")
    batch = np.array([[ent[args.head], rel[args.relation], 0]], dtype=np.int64)
    state = forward_batch(params, g, batch, cfg, None, run_rng, record=True)
    text = export_dot(state.traces[0], args.threshold, g)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
        _emit(f"dot={args.out}")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_validate_proposition(args, cfg: Config) -> int:
    rng = np.random.default_rng(cfg.seed)
    failed = False
    for d in args.d:
        for t in args.t:
            rep = validate_proposition(d, t, args.trials, rng)
            _emit(rep.line())
            failed |= not rep.passed
    if args.nesting_trials:
        n_fail = check_strategy_nesting(args.nesting_trials, rng)
        _emit(f"{'PASS' if n_fail == 0 else 'FAIL'} nesting trials={args.nesting_trials} failures={n_fail}")
        failed |= n_fail > 0
    return EXIT_NUMERIC if failed else EXIT_OK


def cmd_gradcheck(args, cfg: Config) -> int:
    rep = model_gradcheck(cfg.seed, h=args.h)
    _emit(rep.line())
    return EXIT_OK if rep.passed() else EXIT_NUMERIC


# ------------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="dpmpn", allow_abbrev=False,
                description="Pruned message passing for knowledge base completion.",
                epilog="Config keys can be overridden with --key=value.")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    def add(name, fn, help_):
        sp = sub.add_parser(name, help=help_, allow_abbrev=False)
        sp.add_argument("--config", help="key = value config file")
        sp.add_argument("--seed", type=int, help="seed for every random stream")
        sp.add_argument("--data-dir", help="directory holding train/valid/test .txt files")
        sp.set_defaults(func=fn)
        return sp

    sp = add("train", cmd_train, "train a model and write a checkpoint")
    sp.add_argument("--max-steps", type=int, help="stop after this many optimizer steps")
    sp.add_argument("--init-checkpoint", help="start from these parameters")

    sp = add("eval", cmd_eval, "filtered ranking metrics on a split")
    sp.add_argument("--checkpoint", help="model to evaluate (fresh init if omitted)")
    sp.add_argument("--split", choices=("test", "valid"), default="test")

    add("stats", cmd_stats, "dataset statistics")

    sp = add("visualize", cmd_visualize, "DOT export of one query's attention subgraph")
    sp.add_argument("--checkpoint")
    sp.add_argument("--head", required=True, help="head entity name")
    sp.add_argument("--relation", required=True, help="relation name")
    sp.add_argument("--threshold", type=float, default=0.0, help="prune nodes with lower peak attention")
    sp.add_argument("--out", help="write DOT here instead of stdout")

    sp = add("validate-proposition", cmd_validate_proposition, "empirical check of the subgraph size bound")
    sp.add_argument("--d", type=int, nargs="+", default=[3, 4, 5])
    sp.add_argument("--t", type=int, nargs="+", default=[1, 2, 3, 4])
    sp.add_argument("--trials", type=int, default=1000)
    sp.add_argument("--nesting-trials", type=int, default=200)

    sp = add("gradcheck", cmd_gradcheck, "finite-difference check of model gradients")
    sp.add_argument("--h", type=float, default=1e-3)
    return p


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(message)s")
    parser = build_parser()
    try:
        args, extra = parser.parse_known_args(argv)
        if args.command is None:
            raise UsageError("missing subcommand")
        bad = [x for x in extra if not (x.startswith("--") and "=" in x)]
        if bad:
            raise UsageError(f"unrecognized arguments: {' '.join(bad)}")
        cfg = _config(args, extra)
        return args.func(args, cfg)
    except (UsageError, ConfigError) as exc:
        _emit(f"error: {exc}", sys.stderr)
        return EXIT_USAGE
    except (DataError, checkpoint.CheckpointError) as exc:
        _emit(f"error: {exc}", sys.stderr)
        return EXIT_DATA
    except (NumericError, AttentionError, FloatingPointError) as exc:
        _emit(f"error: {exc}", sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
