"""One toy run from an :class:`ExperimentConfig`, summarized for sweeps."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .autodiff import Tape, Tensor
from .config import ExperimentConfig
from .data import LabeledDataset, gen_concentric_circles, m_per_class_sampler
from .losses import Variant, context_term
from .metrics import pairwise_distance_stats
from .model import TrainingReport, embed, train
from .similarity import Batch


@dataclass
class ToyRun:
    config: ExperimentConfig
    report: TrainingReport
    eval_data: LabeledDataset
    embeddings: np.ndarray

    @property
    def final(self) -> dict:
        return self.report.epochs[-1]

    @property
    def recall_at_1(self) -> float:
        return self.final["R@1"]

    @property
    def mean_similarity(self) -> float:
        """Mean cosine similarity over all n**2 eval pairs, diagonal included."""
        E = self.embeddings
        return float((E @ E.T).mean())

    @property
    def mean_pairwise_distance(self) -> float:
        return pairwise_distance_stats(self.embeddings).mean

    @property
    def final_context_loss(self) -> float:
        """Mean logged contextual loss over the last epoch's steps."""
        last = self.final["epoch"]
        vals = [s["l_context"] for s in self.report.steps if s["epoch"] == last]
        return float(np.mean(vals))

    def eval_context_loss(self, batches: int = 50) -> float:
        """Full-pipeline contextual loss of the final embeddings on clean eval batches.

        Unlike the logged training loss this ignores the run's variant, so
        runs of different variants are scored on the same scale.
        """
        cfg = self.config
        loss_cfg = replace(cfg.loss_config(), variant=Variant.FULL)
        plan = m_per_class_sampler(self.eval_data, cfg.labels_per_batch, cfg.k, 1, cfg.eval_seed, batches)
        total = 0.0
        for idx in plan:
            idx = np.asarray(idx)
            with Tape():
                batch = Batch(Tensor(self.embeddings[idx]), self.eval_data.labels[idx])
                total += context_term(batch, loss_cfg).item()
        return total / len(plan)


def run_toy(cfg: ExperimentConfig) -> ToyRun:
    train_ds = gen_concentric_circles(cfg.num_circles, cfg.points_per_circle, cfg.train_noise, cfg.seed)
    eval_ds = gen_concentric_circles(cfg.num_circles, cfg.points_per_circle, 0.0, cfg.eval_seed)
    plan = m_per_class_sampler(train_ds, cfg.labels_per_batch, cfg.k, cfg.epochs, cfg.seed, cfg.batches_per_epoch)
    report = train(train_ds, plan, cfg.loss_config(), cfg.train_config(), eval_ds)
    return ToyRun(cfg, report, eval_ds, embed(report.params, eval_ds.points))
