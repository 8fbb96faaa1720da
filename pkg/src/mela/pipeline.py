"""Stages of the full pipeline and the data loading shared by CLI subcommands.

Stages run in order: representation learning, label inference,
pre-training, residual fine-tuning, evaluation. Each persists its artifact
under the output directory, and with ``resume=True`` an existing artifact
is loaded instead of recomputed.
"""
from __future__ import annotations

import json
import logging
from pathlib import Path

import numpy as np

from . import io
from .augmentation import augment_rotations
from .config import RunConfig
from .errors import MelaError, StageError
from .label_inference import (
    InferenceConfig,
    class_level_pairs,
    clustering_accuracy,
    infer_domains,
    label_dataset,
    learn_labeler,
)
from .learners import EvalConfig, RidgeConfig, TrainConfig, softmax_train
from .representation import LinearEmbedding, MetaTrainConfig, meta_finetune_residual, meta_train_sim
from .taskgen import (
    gfsl_partition,
    make_meta_distribution,
    sample_flat_dataset,
    sample_meta_training_set,
)
from .theory_eval import meta_test

log = logging.getLogger(__name__)

ARTIFACTS = ("embedding_sim", "clusters", "assignment", "classifier", "embedding_final")


def synthetic_distributions(cfg: RunConfig):
    """Train and test meta-distributions over disjoint classes of one draw."""
    d = cfg.data
    grid = None if d.grid is None else tuple(d.grid)
    md = make_meta_distribution(
        C=d.C + d.C_test, d=d.d, k=d.k, n=d.n, m=d.m, noise_std=d.noise_std,
        separation=d.separation, grid_shape=grid, seed=cfg.seed,
    )
    train = md.subset(np.arange(d.C))
    if d.n_domains is not None:
        train = make_meta_distribution(
            C=d.C, d=d.d, k=d.k, n=d.n, m=d.m, noise_std=d.noise_std, separation=d.separation,
            n_domains=d.n_domains, grid_shape=grid, seed=cfg.seed,
        )
    test = md.subset(np.arange(d.C, d.C + d.C_test)) if d.C_test >= d.k else None
    return train, test


def load_train_tasks(cfg: RunConfig):
    d = cfg.data
    if d.source == "csv":
        return io.load_tasks(d.path)
    train, _ = synthetic_distributions(cfg)
    if d.sampling == "gfsl":
        ds = sample_flat_dataset(train, d.per_class, rng=np.random.default_rng([cfg.seed, 1]))
        return gfsl_partition(ds, d.k, d.n, d.m, rng=np.random.default_rng([cfg.seed, 2]))[: d.T]
    return sample_meta_training_set(train, d.T, rng=np.random.default_rng([cfg.seed, 1]))


def load_test_tasks(cfg: RunConfig):
    d = cfg.data
    if d.source == "csv":
        return io.load_tasks(d.test_path) if d.test_path else None
    _, test = synthetic_distributions(cfg)
    if test is None:
        return None
    return sample_meta_training_set(test, d.test_tasks, rng=np.random.default_rng([cfg.seed, 3]))


def grid_shape(cfg: RunConfig):
    return None if cfg.data.grid is None else tuple(cfg.data.grid)


def write_report(out: Path, report: dict, csv_rows=None) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    if csv_rows is not None:
        io.write_rows_csv(out / "report.csv", csv_rows)


class Pipeline:
    def __init__(self, cfg: RunConfig, resume: bool = False):
        self.cfg = cfg
        self.out = Path(cfg.out)
        self.resume = resume
        self.ridge = RidgeConfig(lam=cfg.ridge_lambda)
        self.report = {"config": cfg.to_dict(), "seed": cfg.seed, "stages": {}}
        self.tasks = None

    def _path(self, name):
        return self.out / f"{name}.csv"

    def _have(self, name):
        return self.resume and self._path(name).exists()

    def _stage(self, name, fn):
        log.info("stage %s", name)
        try:
            return fn()
        except MelaError as exc:
            raise StageError(name, str(exc)) from exc
        except (ValueError, np.linalg.LinAlgError) as exc:
            raise StageError(name, str(exc)) from exc

    def replearn(self):
        if self._have("embedding_sim"):
            self.report["stages"]["replearn"] = {"resumed": True}
            return io.load_embedding(self._path("embedding_sim"))
        c = self.cfg
        mcfg = MetaTrainConfig(learning_rate=c.replearn.lr, steps=c.replearn.steps, ridge=self.ridge, seed=c.seed)
        res = meta_train_sim(self.tasks, c.data_dim, c.feature_dim, mcfg)
        io.save_embedding(self._path("embedding_sim"), res.model)
        n = min(len(res.trace), len(self.tasks))
        self.report["stages"]["replearn"] = {
            "steps": len(res.trace),
            "initial_loss": float(np.mean(res.trace[:n])) if n else None,
            "final_loss": float(np.mean(res.trace[-n:])) if n else None,
        }
        return res.model

    def infer(self, g_sim):
        c = self.cfg
        icfg = InferenceConfig(V_init=c.inference.V_init, q=c.inference.q, max_sweeps=c.inference.max_sweeps,
                               seed=c.seed, prune_mode=c.inference.prune_mode)
        state = io.load_clusters(self._path("clusters")) if self._have("clusters") else None
        res = learn_labeler(self.tasks, g_sim, icfg, state=state)
        if state is None:
            io.save_clusters(self._path("clusters"), res.state)
        io.save_assignment(self._path("assignment"), self.tasks, res.assignment)
        info = {
            "clusters": res.state.V,
            "sweeps": res.sweeps,
            "V_history": res.V_history,
            "tasks_clustered": res.assignment.n_clustered,
            "tasks_discarded": res.assignment.n_discarded,
            "resumed": state is not None,
        }
        if all(t.local_to_global is not None for t in self.tasks) and res.assignment.n_clustered:
            info["clustering_accuracy"] = clustering_accuracy(*class_level_pairs(self.tasks, res.assignment))
        self.report["stages"]["infer"] = info
        return res

    def pretrain(self, assignment):
        c = self.cfg
        if self._have("classifier") and self._path("embedding_pre").exists():
            self.report["stages"]["pretrain"] = {"resumed": True}
            return io.load_classifier(self._path("classifier")), io.load_embedding(self._path("embedding_pre"))
        ds = label_dataset(self.tasks, assignment)
        ds.grid_shape = grid_shape(c)
        if c.pretrain.rotate_augment:
            ds = augment_rotations(ds)
        init = LinearEmbedding.random(c.data_dim, c.feature_dim, seed=c.seed)
        res = softmax_train(ds, init, c.pretrain.reg, TrainConfig(steps=c.pretrain.steps, lr=c.pretrain.lr,
                                                                  seed=c.seed), joint=True)
        io.save_classifier(self._path("classifier"), res.classifier)
        io.save_embedding(self._path("embedding_pre"), res.embedding)
        self.report["stages"]["pretrain"] = {
            "samples": len(ds), "classes": ds.C_effective, "final_loss": res.loss,
            "train_accuracy": res.train_accuracy, "steps": len(res.trace),
        }
        return res.classifier, res.embedding

    def finetune(self, g_pre):
        if self._have("embedding_final"):
            self.report["stages"]["finetune"] = {"resumed": True}
            return io.load_embedding(self._path("embedding_final"))
        c = self.cfg
        mcfg = MetaTrainConfig(learning_rate=c.finetune.lr, steps=c.finetune.steps, ridge=self.ridge, seed=c.seed)
        res = meta_finetune_residual(g_pre, self.tasks, mcfg, hidden=c.finetune.hidden)
        io.save_embedding(self._path("embedding_final"), res.model)
        n = min(len(res.trace), len(self.tasks))
        self.report["stages"]["finetune"] = {
            "steps": len(res.trace),
            "initial_loss": float(np.mean(res.trace[:n])) if n else None,
            "final_loss": float(np.mean(res.trace[-n:])) if n else None,
        }
        return res.model

    def evaluate(self, models: dict):
        c = self.cfg
        test = load_test_tasks(c)
        split = "test"
        if test is None:
            test, split = self.tasks, "train"
        results = {"split": split}
        rows = []
        for name, (model, logistic_C) in models.items():
            ecfg = EvalConfig(normalize=c.eval.normalize, ridge=self.ridge, logistic_C=logistic_C)
            rep = meta_test(test, model, c.eval.builder, ecfg, jobs=c.jobs)
            results[name] = rep.to_dict()
            rows.append({"model": name, "builder": c.eval.builder, "mean_accuracy": rep.mean,
                         "ci95": rep.ci95, "num_tasks": len(rep.accuracies)})
        self.report["stages"]["evaluate"] = results
        return rows

    def run(self):
        self.out.mkdir(parents=True, exist_ok=True)
        self.tasks = self._stage("load", lambda: load_train_tasks(self.cfg))
        g_sim = self._stage("replearn", self.replearn)
        labels = self._stage("infer", lambda: self.infer(g_sim))
        _, g_pre = self._stage("pretrain", lambda: self.pretrain(labels.assignment))
        g_final = self._stage("finetune", lambda: self.finetune(g_pre))
        e = self.cfg.eval
        rows = self._stage("evaluate", lambda: self.evaluate({
            "pretrained": (g_pre, e.logistic_C_pre), "finetuned": (g_final, e.logistic_C_ft)}))
        write_report(self.out, self.report, rows)
        return self.report


def run_pipeline(cfg: RunConfig, resume: bool = False) -> dict:
    return Pipeline(cfg, resume=resume).run()


def domains_report(tasks, assignment) -> dict:
    comps = infer_domains(tasks, assignment)
    return {"components": comps, "num_components": len(comps)}
