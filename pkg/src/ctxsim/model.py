"""Three-layer ReLU MLP embedding network, Adam, and the training loop."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor
from .data import LabeledDataset, SamplerPlan
from .errors import ConfigError, ContractError, NumericAbort
from .losses import LossConfig, combined_loss
from .metrics import evaluate
from .similarity import Batch

logger = logging.getLogger(__name__)


@dataclass
class MlpParams:
    weights: list
    biases: list

    @classmethod
    def init(cls, widths=(2, 64, 64, 2), seed: int = 0) -> "MlpParams":
        """Uniform in +-1/sqrt(fan_in) for both weights and biases."""
        if len(widths) < 2:
            raise ConfigError("need at least input and output widths")
        rng = np.random.default_rng(seed)
        weights, biases = [], []
        for fan_in, fan_out in zip(widths[:-1], widths[1:]):
            bound = 1.0 / np.sqrt(fan_in)
            weights.append(Tensor(rng.uniform(-bound, bound, (fan_in, fan_out)), requires_grad=True))
            biases.append(Tensor(rng.uniform(-bound, bound, (1, fan_out)), requires_grad=True))
        return cls(weights, biases)

    @property
    def widths(self) -> list:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    def tensors(self) -> list:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def arrays(self) -> list:
        return [t.values.copy() for t in self.tensors()]

    def load_arrays(self, arrays) -> None:
        for t, a in zip(self.tensors(), arrays):
            if t.shape != a.shape:
                raise ContractError(f"parameter shape {a.shape} != {t.shape}")
            t.values = np.array(a, dtype=np.float64)

    def copy(self) -> "MlpParams":
        clone = MlpParams(
            [Tensor(w.values.copy(), requires_grad=True) for w in self.weights],
            [Tensor(b.values.copy(), requires_grad=True) for b in self.biases],
        )
        return clone


def forward(params: MlpParams, X) -> Tensor:
    """Linear/ReLU stack followed by row L2 normalization, recorded on the tape."""
    h = X if isinstance(X, Tensor) else Tensor(X)
    if h.shape[1] != params.weights[0].shape[0]:
        raise ContractError(
            f"input width {h.shape[1]} != first layer width {params.weights[0].shape[0]}"
        )
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        h = ad.add(ad.matmul(h, w), b)
        if i < last:
            h = ad.relu(h)
    return ad.row_l2_normalize(h)


def embed(params: MlpParams, X) -> np.ndarray:
    """Forward pass on a throwaway tape, returning plain arrays."""
    with Tape():
        return forward(params, X).values


@dataclass
class AdamState:
    m: list
    v: list
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params: MlpParams, **kw) -> "AdamState":
        ts = params.tensors()
        return cls([np.zeros_like(t.values) for t in ts], [np.zeros_like(t.values) for t in ts], **kw)


def adam_step(params: MlpParams, grads: list, state: AdamState, lr: float) -> None:
    """One bias-corrected Adam update, applied in place."""
    tensors = params.tensors()
    if len(grads) != len(tensors):
        raise ContractError("one gradient per parameter required")
    for t, g in zip(tensors, grads):
        if g.shape != t.shape:
            raise ContractError(f"gradient shape {g.shape} != parameter shape {t.shape}")
        if not np.all(np.isfinite(g)):
            raise NumericAbort(f"non-finite gradient for parameter of shape {t.shape}")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    for i, (t, g) in enumerate(zip(tensors, grads)):
        state.m[i] = b1 * state.m[i] + (1.0 - b1) * g
        state.v[i] = b2 * state.v[i] + (1.0 - b2) * g * g
        m_hat = state.m[i] / c1
        v_hat = state.v[i] / c2
        t.values = t.values - lr * m_hat / (np.sqrt(v_hat) + state.eps)


def lr_at_epoch(base_lr: float, epoch: int, milestones=(15, 30, 45), factor: float = 0.3) -> float:
    """Step schedule: multiply by ``factor`` once per milestone reached (0-based epochs)."""
    return base_lr * factor ** sum(1 for m in milestones if epoch >= m)


@dataclass(frozen=True)
class TrainConfig:
    widths: tuple = (2, 64, 64, 2)
    lr: float = 0.01
    milestones: tuple = (15, 30, 45)
    lr_decay: float = 0.3
    epochs: int = 40
    seed: int = 0
    eval_ks: tuple = (1, 2, 4, 8)


@dataclass
class TrainingReport:
    steps: list = field(default_factory=list)  # per-step loss components
    epochs: list = field(default_factory=list)  # per-epoch eval metrics
    params: MlpParams = None
    aborted: bool = False


def train(
    dataset: LabeledDataset,
    sampler: SamplerPlan,
    loss_cfg: LossConfig,
    train_cfg: TrainConfig,
    eval_data: LabeledDataset | None = None,
    params: MlpParams | None = None,
) -> TrainingReport:
    """Run every batch of ``sampler``, evaluating on ``eval_data`` after each epoch.

    ``sampler`` must contain ``train_cfg.epochs`` epochs' worth of batches.
    A non-finite loss raises :class:`NumericAbort` carrying the report so far
    (``exc.report``) whose ``params`` are the last finite ones.
    """
    if sampler.samples_per_label != loss_cfg.k:
        raise ConfigError(
            f"k={loss_cfg.k} must equal the sampler's samples per label "
            f"({sampler.samples_per_label})"
        )
    if len(sampler) % train_cfg.epochs:
        raise ConfigError("sampler length is not a whole number of epochs")
    per_epoch = len(sampler) // train_cfg.epochs
    if params is None:
        params = MlpParams.init(train_cfg.widths, train_cfg.seed)
    state = AdamState.for_params(params)
    report = TrainingReport(params=params)
    eval_data = eval_data if eval_data is not None else dataset

    def abort(message, last_good):
        report.aborted = True
        params.load_arrays(last_good)
        exc = NumericAbort(message)
        exc.report = report
        return exc

    for step, idx in enumerate(sampler):
        epoch = step // per_epoch
        lr = lr_at_epoch(train_cfg.lr, epoch, train_cfg.milestones, train_cfg.lr_decay)
        idx = np.asarray(idx)
        last_good = params.arrays()
        with Tape():
            with np.errstate(over="ignore", invalid="ignore"):
                F = forward(params, dataset.points[idx])
            if not np.all(np.isfinite(F.values)):
                raise abort(f"non-finite embeddings at step {step}", last_good)
            out = combined_loss(Batch(F, dataset.labels[idx]), loss_cfg)
            row = out.floats()
            if not all(np.isfinite(v) for v in row.values()):
                raise abort(f"non-finite loss at step {step}: {row}", last_good)
            for t in params.tensors():
                t.zero_grad()
            ad.backward(out.total)
        grads = [t.grad if t.grad is not None else np.zeros_like(t.values) for t in params.tensors()]
        try:
            with np.errstate(over="ignore", invalid="ignore"):
                adam_step(params, grads, state, lr)
        except NumericAbort as exc:
            raise abort(str(exc), last_good) from None
        if not all(np.all(np.isfinite(a)) for a in params.arrays()):
            raise abort(f"non-finite parameters after step {step}", last_good)
        report.steps.append({"step": step, "epoch": epoch, "lr": lr, **row})

        if (step + 1) % per_epoch == 0:
            metrics = evaluate(embed(params, eval_data.points), eval_data.labels, train_cfg.eval_ks)
            report.epochs.append({"epoch": epoch, **metrics})
            logger.info("epoch %d R@1=%.4f", epoch, metrics["R@1"])
    return report
