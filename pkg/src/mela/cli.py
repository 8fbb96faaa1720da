"""Command line entry point: ``mela <subcommand> [--config FILE] [overrides]``.

Exit status is 0 on success, 1 when a stage fails and 2 for usage or
configuration errors.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import io
from .augmentation import augment_rotations
from .config import RunConfig, from_dict, load_config
from .errors import ConfigError, MelaError, StageError
from .label_inference import InferenceConfig, class_level_pairs, clustering_accuracy, label_dataset, learn_labeler
from .learners import EvalConfig, GlobalClassifier, RidgeConfig, TrainConfig, softmax_train
from .pipeline import (
    Pipeline,
    domains_report,
    grid_shape,
    load_test_tasks,
    load_train_tasks,
    synthetic_distributions,
    write_report,
)
from .representation import LinearEmbedding, MetaTrainConfig, meta_finetune_residual
from .taskgen import flatten, make_meta_distribution
from .theory_eval import RateStudyConfig, expand_classifier, meta_test, rate_study, verify_theorem1

log = logging.getLogger("mela")


def _common(parser):
    parser.add_argument("--config", help="JSON run configuration")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--out", help="output directory")
    parser.add_argument("--input", help="episodic CSV of meta-training tasks")
    parser.add_argument("--q", type=float, help="pruning aggressiveness")
    parser.add_argument("--v-init", type=int, help="initial number of clusters")
    parser.add_argument("--rotate", action="store_true", default=None, help="rotation-augment pre-training data")
    parser.add_argument("--jobs", type=int, help="worker threads for evaluation")
    parser.add_argument("-v", "--verbose", action="count", default=0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mela", description="Meta label learning experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="full pipeline")
    p.add_argument("--resume", action="store_true", help="reuse artifacts already in --out")
    sub.add_parser("simulate", help="write synthetic tasks as episodic CSV")
    p_inf = sub.add_parser("infer-labels", help="cluster local classes into global labels")
    p_inf.add_argument("--embedding", help="embedding CSV (default: identity)")
    p_pre = sub.add_parser("pretrain", help="cross-entropy pre-training on inferred labels")
    p_pre.add_argument("--assignment", help="assignment CSV (default: <out>/assignment.csv)")
    p_pre.add_argument("--oracle-labels", action="store_true", help="use ground-truth global labels")
    p_ft = sub.add_parser("finetune", help="residual meta fine-tuning")
    p_ft.add_argument("--embedding", help="pre-trained embedding CSV (default: <out>/embedding_pre.csv)")
    p_ev = sub.add_parser("evaluate", help="meta-test an embedding")
    p_ev.add_argument("--embedding", help="embedding CSV (default: identity)")
    p_ev.add_argument("--builder", choices=["ridge", "logistic"])
    p_ev.add_argument("--logistic-c", type=float)
    p_vt = sub.add_parser("verify-theory", help="Monte-Carlo check of the GLS <= pre-training bound")
    p_vt.add_argument("--draws", type=int)
    p_rs = sub.add_parser("rate-study", help="meta-GLS vs pre-training risk as T grows")
    p_rs.add_argument("--t-grid", help="comma-separated increasing task counts")
    p_rs.add_argument("--seeds", type=int)
    p_dm = sub.add_parser("domains", help="connected components of the cluster co-occurrence graph")
    p_dm.add_argument("--assignment", help="assignment CSV (default: <out>/assignment.csv)")
    for sp in sub.choices.values():
        _common(sp)
    return parser


def resolve_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else from_dict({})
    if args.seed is not None:
        cfg.seed = args.seed
    if args.out is not None:
        cfg.out = args.out
    if args.input is not None:
        cfg.data.source, cfg.data.path = "csv", args.input
    if args.q is not None:
        cfg.inference.q = args.q
    if args.v_init is not None:
        cfg.inference.V_init = args.v_init
    if args.rotate:
        cfg.pretrain.rotate_augment = True
    if args.jobs is not None:
        cfg.jobs = args.jobs
    if getattr(args, "draws", None) is not None:
        cfg.eval.draws = args.draws
    if getattr(args, "seeds", None) is not None:
        cfg.rate.seeds = args.seeds
    if getattr(args, "t_grid", None):
        try:
            cfg.rate.t_grid = [int(x) for x in args.t_grid.split(",")]
        except ValueError:
            raise ConfigError(f"bad --t-grid {args.t_grid!r}") from None
    if getattr(args, "builder", None):
        cfg.eval.builder = args.builder
    return cfg.validate()


def _ridge(cfg):
    return RidgeConfig(lam=cfg.ridge_lambda)


def _embedding(path, cfg):
    if path:
        return io.load_embedding(path)
    return LinearEmbedding.identity(cfg.data_dim)


def cmd_run(cfg, args):
    report = Pipeline(cfg, resume=args.resume).run()
    return report, None


def cmd_simulate(cfg, args):
    if cfg.data.source != "synthetic":
        raise ConfigError("simulate needs a synthetic data source")
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    tasks = load_train_tasks(cfg)
    io.save_tasks(out / "tasks.csv", tasks)
    report = {"config": cfg.to_dict(), "seed": cfg.seed, "train_tasks": len(tasks),
              "records": int(sum(len(t) for t in tasks))}
    test = load_test_tasks(cfg)
    if test is not None:
        io.save_tasks(out / "test_tasks.csv", test)
        report["test_tasks"] = len(test)
    return report, None


def cmd_infer(cfg, args):
    tasks = load_train_tasks(cfg)
    emb = _embedding(args.embedding, cfg)
    c = cfg.inference
    res = learn_labeler(tasks, emb, InferenceConfig(V_init=c.V_init, q=c.q, max_sweeps=c.max_sweeps,
                                                     seed=cfg.seed, prune_mode=c.prune_mode))
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    io.save_clusters(out / "clusters.csv", res.state)
    io.save_assignment(out / "assignment.csv", tasks, res.assignment)
    report = {"config": cfg.to_dict(), "seed": cfg.seed, "clusters": res.state.V, "sweeps": res.sweeps,
              "V_history": res.V_history, "tasks_clustered": res.assignment.n_clustered,
              "tasks_discarded": res.assignment.n_discarded}
    if all(t.local_to_global is not None for t in tasks) and res.assignment.n_clustered:
        report["clustering_accuracy"] = clustering_accuracy(*class_level_pairs(tasks, res.assignment))
    return report, None


def cmd_pretrain(cfg, args):
    tasks = load_train_tasks(cfg)
    out = Path(cfg.out)
    if args.oracle_labels:
        ds = flatten(tasks).relabeled()
    else:
        assignment = io.load_assignment(args.assignment or out / "assignment.csv", tasks)
        ds = label_dataset(tasks, assignment)
    ds.grid_shape = grid_shape(cfg)
    if cfg.pretrain.rotate_augment:
        ds = augment_rotations(ds)
    p = cfg.pretrain
    res = softmax_train(ds, LinearEmbedding.random(cfg.data_dim, cfg.feature_dim, seed=cfg.seed), p.reg,
                        TrainConfig(steps=p.steps, lr=p.lr, seed=cfg.seed), joint=True)
    out.mkdir(parents=True, exist_ok=True)
    io.save_classifier(out / "classifier.csv", res.classifier)
    io.save_embedding(out / "embedding_pre.csv", res.embedding)
    return {"config": cfg.to_dict(), "seed": cfg.seed, "samples": len(ds), "classes": ds.C_effective,
            "final_loss": res.loss, "train_accuracy": res.train_accuracy}, None


def cmd_finetune(cfg, args):
    tasks = load_train_tasks(cfg)
    out = Path(cfg.out)
    g_pre = io.load_embedding(args.embedding or out / "embedding_pre.csv")
    f = cfg.finetune
    res = meta_finetune_residual(g_pre, tasks, MetaTrainConfig(learning_rate=f.lr, steps=f.steps,
                                                               ridge=_ridge(cfg), seed=cfg.seed), hidden=f.hidden)
    out.mkdir(parents=True, exist_ok=True)
    io.save_embedding(out / "embedding_final.csv", res.model)
    n = min(len(res.trace), len(tasks))
    return {"config": cfg.to_dict(), "seed": cfg.seed, "steps": len(res.trace),
            "initial_loss": float(np.mean(res.trace[:n])) if n else None,
            "final_loss": float(np.mean(res.trace[-n:])) if n else None}, None


def cmd_evaluate(cfg, args):
    tasks = load_test_tasks(cfg)
    split = "test"
    if tasks is None:
        tasks, split = load_train_tasks(cfg), "train"
    emb = _embedding(args.embedding, cfg)
    C_inv = args.logistic_c if args.logistic_c is not None else cfg.eval.logistic_C_pre
    rep = meta_test(tasks, emb, cfg.eval.builder,
                    EvalConfig(normalize=cfg.eval.normalize, ridge=_ridge(cfg), logistic_C=C_inv), jobs=cfg.jobs)
    report = {"config": cfg.to_dict(), "seed": cfg.seed, "split": split, **rep.to_dict()}
    row = {"builder": cfg.eval.builder, "mean_accuracy": rep.mean, "ci95": rep.ci95, "num_tasks": len(tasks)}
    return report, [row]


def cmd_verify(cfg, args):
    if cfg.data.source != "synthetic":
        raise ConfigError("verify-theory needs a synthetic data source")
    md, _ = synthetic_distributions(cfg)
    tasks = load_train_tasks(cfg)
    p = cfg.pretrain
    res = softmax_train(flatten(tasks).relabeled(), LinearEmbedding.random(md.d, cfg.feature_dim, seed=cfg.seed),
                        p.reg, TrainConfig(steps=p.steps, lr=p.lr, seed=cfg.seed), joint=True)
    trained = verify_theorem1(md, expand_classifier(res.classifier, md.C), res.embedding, cfg.eval.draws,
                              rng=np.random.default_rng([cfg.seed, 7]))
    rng = np.random.default_rng([cfg.seed, 8])
    W_rand = GlobalClassifier(W=rng.standard_normal((md.C, md.d)), b=rng.standard_normal(md.C))
    random = verify_theorem1(md, W_rand, None, cfg.eval.draws, rng=np.random.default_rng([cfg.seed, 9]))
    report = {"config": cfg.to_dict(), "seed": cfg.seed, **trained, "random_classifier": random}
    rows = [{"classifier": name, "gls": r["gls"]["value"], "gls_se": r["gls"]["std_error"],
             "pretrain": r["pretrain"]["value"], "pretrain_se": r["pretrain"]["std_error"],
             "holds": r["holds"], "pointwise_violations": r["pointwise_violations"]}
            for name, r in (("trained", trained), ("random", random))]
    return report, rows


def cmd_rate(cfg, args):
    r = cfg.rate
    md = make_meta_distribution(C=r.C, d=r.d, k=r.k, n=r.n, m=r.m, noise_std=1.0, separation=r.separation,
                                seed=cfg.seed)
    rows = rate_study(md, r.t_grid, r.seeds, RateStudyConfig(reg=r.reg, train=TrainConfig(steps=r.steps, lr=r.lr),
                                                             eval_draws=r.eval_draws))
    report = {"config": cfg.to_dict(), "seed": cfg.seed, "rows": [row.to_dict() for row in rows]}
    csv_rows = [{"T": row.T, "N": row.N, "gls_risk": row.gls_risk.value, "gls_se": row.gls_risk.std_error,
                 "pretrain_risk": row.pretrain_risk.value, "pretrain_se": row.pretrain_risk.std_error,
                 "seeds": row.seeds_averaged} for row in rows]
    return report, csv_rows


def cmd_domains(cfg, args):
    tasks = load_train_tasks(cfg)
    assignment = io.load_assignment(args.assignment or Path(cfg.out) / "assignment.csv", tasks)
    return {"config": cfg.to_dict(), "seed": cfg.seed, **domains_report(tasks, assignment)}, None


COMMANDS = {
    "run": cmd_run,
    "simulate": cmd_simulate,
    "infer-labels": cmd_infer,
    "pretrain": cmd_pretrain,
    "finetune": cmd_finetune,
    "evaluate": cmd_evaluate,
    "verify-theory": cmd_verify,
    "rate-study": cmd_rate,
    "domains": cmd_domains,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
    except ConfigError as exc:
        parser.print_usage(sys.stderr)
        print(f"mela: error: {exc}", file=sys.stderr)
        return 2
    try:
        report, rows = COMMANDS[args.command](cfg, args)
    except ConfigError as exc:
        print(f"mela: error: {exc}", file=sys.stderr)
        return 2
    except StageError as exc:
        print(f"mela: stage failure {exc}", file=sys.stderr)
        return 1
    except (MelaError, ValueError, OSError) as exc:
        print(f"mela: [{args.command}] {exc}", file=sys.stderr)
        return 1
    if args.command != "run":
        write_report(Path(cfg.out), report, rows)
    return 0


if __name__ == "__main__":
    sys.exit(main())
