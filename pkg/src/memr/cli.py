"""Command-line front end: ``memr {train,ablate,evaluate,verify,plot}``.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
Artifacts go under ``$MEMR_OUT_DIR`` (default ``./runs``).
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import itertools
import json
import os
import sys
from datetime import datetime, timezone

import numpy as np

from memr import plotting, verify
from memr.checkpoint import CheckpointError
from memr.envs import evaluate_policy
from memr.trainer import ConfigError, Trainer, TrainerConfig, TrainingError, read_metrics

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib


class UsageError(Exception):
    pass


def out_root(args) -> str:
    return args.out_dir or os.environ.get("MEMR_OUT_DIR", "./runs")


def _now():
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _int_list(text):
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _float_list(text):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _tuple_arg(text):
    return tuple(_int_list(text))


def add_config_flags(parser, skip=()):
    """One long flag per ``TrainerConfig`` field; unset flags stay ``None``."""
    group = parser.add_argument_group("trainer config")
    for f in dataclasses.fields(TrainerConfig):
        if f.name in skip:
            continue
        flag = "--" + f.name.replace("_", "-")
        if isinstance(f.default, bool):
            group.add_argument(flag, dest=f.name, action=argparse.BooleanOptionalAction,
                               default=None)
        elif isinstance(f.default, tuple):
            group.add_argument(flag, dest=f.name, type=_tuple_arg, default=None,
                               metavar="N,N")
        else:
            group.add_argument(flag, dest=f.name, type=type(f.default), default=None)
    group.add_argument("--steps", dest="total_num_steps", type=int, default=None,
                       help="alias of --total-num-steps")
    group.add_argument("--paper-scale", action="store_true",
                       help="start from the full-size hyperparameters instead of desk defaults")
    group.add_argument("--config", help="TOML file with trainer config keys")


def load_config_file(path) -> dict:
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except OSError as exc:
        raise UsageError(f"cannot read config file: {exc}") from None
    except tomllib.TOMLDecodeError as exc:
        raise UsageError(f"{path}: {exc}") from None
    return data.get("trainer", data)


def merged_config(args, skip=()) -> TrainerConfig:
    """Defaults, then config file, then flags."""
    values = {}
    if getattr(args, "config", None):
        values.update(load_config_file(args.config))
    for f in dataclasses.fields(TrainerConfig):
        if f.name in skip:
            continue
        v = getattr(args, f.name, None)
        if v is not None:
            values[f.name] = v
    try:
        if args.paper_scale:
            return TrainerConfig.paper_scale(**values)
        return TrainerConfig.from_dict(values)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def run_id(cfg: TrainerConfig, stamp: str) -> str:
    payload = json.dumps(cfg.to_dict(), sort_keys=True) + stamp
    return hashlib.sha1(payload.encode()).hexdigest()[:7]


def write_manifest(path, manifest):
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)


def cmd_train(args) -> int:
    stamp = _now()
    if args.resume:
        # continue in place: metrics keep appending next to the checkpoint
        run_dir = os.path.dirname(os.path.abspath(args.resume))
        rid = os.path.basename(run_dir)
        metrics = os.path.join(run_dir, "metrics.csv")
        ckpt = os.path.join(run_dir, "checkpoint.memr")
        trainer = Trainer.load(args.resume, metrics_path=metrics, checkpoint_path=ckpt)
        cfg = trainer.cfg
        if args.total_num_steps is not None:
            cfg.total_num_steps = args.total_num_steps
            cfg.validate()
    else:
        cfg = merged_config(args)
        rid = args.run_id or run_id(cfg, stamp)
        run_dir = os.path.join(out_root(args), rid)
        os.makedirs(run_dir, exist_ok=True)
        metrics = os.path.join(run_dir, "metrics.csv")
        ckpt = os.path.join(run_dir, "checkpoint.memr")
    print(json.dumps(cfg.to_dict(), sort_keys=True))
    manifest_path = os.path.join(run_dir, "manifest.json")
    manifest = {"run_id": rid, "config": cfg.to_dict(), "started": stamp, "finished": None,
                "artifacts": {"metrics": metrics, "checkpoint": ckpt, "manifest": manifest_path},
                "resumed_from": args.resume}
    write_manifest(manifest_path, manifest)
    if not args.resume:
        trainer = Trainer(cfg, metrics_path=metrics, checkpoint_path=ckpt)
    rows = trainer.run()
    trainer.save(ckpt)
    manifest["finished"] = _now()
    write_manifest(manifest_path, manifest)
    if rows:
        last = rows[-1]
        print(f"step {last.step}: eval return {last.eval_return:.2f}, "
              f"J {last.discounted_return:.2f} (tail bound "
              f"{cfg.gamma ** cfg.horizon * trainer.env.spec.reward_bound:.3g})")
    print(f"run directory: {run_dir}")
    return 0


ABLATION_AXES = {"alpha": "alpha", "model_size": "model_dataset_size",
                 "policy_updates": "policy_updates"}


def cmd_ablate(args) -> int:
    base = merged_config(args, skip=ABLATION_AXES.values())
    axes = {key: getattr(args, "grid_" + key) or [getattr(base, field)]
            for key, field in ABLATION_AXES.items()}
    seeds = args.seeds or [base.seed]
    stamp = _now()
    rid = args.run_id or "ablate-" + run_id(base, stamp)
    root = os.path.join(out_root(args), rid)
    os.makedirs(root, exist_ok=True)
    write_manifest(os.path.join(root, "manifest.json"),
                   {"run_id": rid, "config": base.to_dict(), "grid": axes, "seeds": seeds,
                    "started": stamp})
    columns = ["alpha", "model_dataset_size", "policy_updates", "seed", "status",
               "final_eval_return", "final_discounted_return", "mean_knn_entropy",
               "policy_update_count", "model_rollout_count", "error"]
    agg_path = os.path.join(root, "ablation.csv")
    with open(agg_path, "w", newline="") as fh:
        csv.writer(fh).writerow(columns)
    results = []
    for alpha, size, updates in itertools.product(axes["alpha"], axes["model_size"],
                                                  axes["policy_updates"]):
        for seed in seeds:
            record = {"alpha": alpha, "model_dataset_size": size, "policy_updates": updates,
                      "seed": seed, "status": "ok", "final_eval_return": "",
                      "final_discounted_return": "", "mean_knn_entropy": "",
                      "policy_update_count": "", "model_rollout_count": "", "error": ""}
            try:
                cfg = dataclasses.replace(base, alpha=alpha, model_dataset_size=size,
                                          policy_updates=updates, seed=seed)
                tag = f"a{alpha:g}_m{size}_g{updates}_s{seed}"
                rows = Trainer(cfg, metrics_path=os.path.join(root, f"{tag}.csv")).run()
                if rows:
                    ent = [r.knn_entropy for r in rows if np.isfinite(r.knn_entropy)]
                    record.update(final_eval_return=rows[-1].eval_return,
                                  final_discounted_return=rows[-1].discounted_return,
                                  mean_knn_entropy=float(np.mean(ent)) if ent else "",
                                  policy_update_count=rows[-1].policy_updates,
                                  model_rollout_count=rows[-1].model_rollouts)
            except Exception as exc:  # record and keep going
                record.update(status="failed", error=f"{type(exc).__name__}: {exc}")
            results.append(record)
            with open(agg_path, "a", newline="") as fh:
                csv.writer(fh).writerow([record[c] for c in columns])
            print(f"alpha={alpha:g} size={size} G={updates} seed={seed}: {record['status']} "
                  f"{record['final_eval_return']}", flush=True)
    print("\nsetting                         mean final return   runs")
    for key, group in itertools.groupby(
            results, key=lambda r: (r["alpha"], r["model_dataset_size"], r["policy_updates"])):
        group = list(group)
        ok = [r["final_eval_return"] for r in group if r["status"] == "ok"
              and r["final_eval_return"] != ""]
        mean = f"{np.mean(ok):.2f}" if ok else "n/a"
        print(f"alpha={key[0]:<5g} size={key[1]:<8} G={key[2]:<3}  {mean:>17}   "
              f"{len(ok)}/{len(group)}")
    print(f"aggregate: {agg_path}")
    return 0


def cmd_evaluate(args) -> int:
    trainer = Trainer.load(args.checkpoint)
    gamma = trainer.cfg.gamma if args.gamma is None else args.gamma
    seed = trainer.cfg.seed + 10_000 if args.seed is None else args.seed
    ret, disc = evaluate_policy(trainer.env, trainer.agent, args.episodes, gamma, seed)
    print(json.dumps({"step": trainer.t, "eval_return": ret, "discounted_return": disc}))
    return 0


def cmd_verify(args) -> int:
    checks = []
    checks += verify.check_lemma(args.lemma_n, trials=args.lemma_trials, seed=args.seed)
    checks += verify.check_theorem(args.theorem_trials, seed=args.seed)
    checks += verify.check_priority(seed=args.seed)
    checks += verify.check_sumtree(seed=args.seed)
    mixed = verify.segment_mixes(args.segment_batches, np.random.default_rng(args.seed))
    checks.append(verify.Check("segment_homogeneity", mixed == 0, f"{mixed} mixed batches", mixed))
    checks += verify.check_gradients(args.grad_configs, seed=args.seed)
    for c in checks:
        print(f"{'PASS' if c.passed else 'FAIL'}  {c.name:<32} {c.detail}")
    failed = [c for c in checks if not c.passed]
    if failed:
        print(f"{len(failed)} check(s) failed: {', '.join(c.name for c in failed)}")
        return 1
    print(f"all {len(checks)} checks passed")
    return 0


def cmd_plot(args) -> int:
    runs = []
    for path in args.csv:
        try:
            rows = read_metrics(path)
        except OSError as exc:
            raise UsageError(f"cannot read {path}: {exc}") from None
        except ValueError as exc:
            raise UsageError(str(exc)) from None
        if not rows:
            raise UsageError(f"{path}: no data rows")
        runs.append(rows)
    figures = plotting.render_figures(runs, label=args.label)
    out = args.out or out_root(args)
    os.makedirs(out, exist_ok=True)
    for name, svg in figures.items():
        with open(os.path.join(out, name), "w") as fh:
            fh.write(svg)
        print(os.path.join(out, name))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="memr", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="run one training job")
    add_config_flags(p)
    p.add_argument("--out-dir", help="artifact root (overrides MEMR_OUT_DIR)")
    p.add_argument("--run-id")
    p.add_argument("--resume", metavar="CHECKPOINT", help="continue from a checkpoint")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("ablate", help="grid over alpha, model dataset size and policy updates")
    add_config_flags(p, skip=ABLATION_AXES.values())
    p.add_argument("--alpha", dest="grid_alpha", type=_float_list)
    p.add_argument("--model-size", dest="grid_model_size", type=_int_list)
    p.add_argument("--policy-updates", dest="grid_policy_updates", type=_int_list)
    p.add_argument("--seeds", type=_int_list)
    p.add_argument("--out-dir")
    p.add_argument("--run-id")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("evaluate", help="evaluate a checkpoint's deterministic policy")
    p.add_argument("checkpoint")
    p.add_argument("--episodes", type=int, default=10)
    p.add_argument("--gamma", type=float)
    p.add_argument("--seed", type=int, help="evaluation seed (default: the trainer's)")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("verify", help="run the oracle checks")
    p.add_argument("--lemma-n", type=_int_list, default=[100, 1000, 10000])
    p.add_argument("--lemma-trials", type=int, default=1000)
    p.add_argument("--theorem-trials", type=int, default=100)
    p.add_argument("--grad-configs", type=int, default=100)
    p.add_argument("--segment-batches", type=int, default=100_000)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("plot", help="render SVG curves from metrics CSVs")
    p.add_argument("csv", nargs="+")
    p.add_argument("--out", help="output directory (default: artifact root)")
    p.add_argument("--out-dir", help=argparse.SUPPRESS)
    p.add_argument("--label", default="memr")
    p.set_defaults(func=cmd_plot)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"memr {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except (TrainingError, CheckpointError, OSError) as exc:
        print(f"memr {args.command}: failed: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
