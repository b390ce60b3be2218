"""File-backed experiment configuration.

A config is a flat JSON object. Keys missing from a user file are filled
from the shipped ``default_toy.json``; unknown keys are rejected. The hash
covers every field except the output directory, so two runs that differ
only in where they write share a hash.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, fields, replace
from importlib import resources
from pathlib import Path

from .errors import ConfigError
from .losses import LossConfig
from .model import TrainConfig

_INT_FIELDS = {"seed", "num_circles", "points_per_circle", "eval_seed", "labels_per_batch",
               "batches_per_epoch", "epochs", "k", "oracle_batches"}
_INT_LISTS = {"widths", "milestones", "eval_ks", "oracle_sizes"}
_FLOAT_LISTS = {"oracle_epsilons"}
_STR_FIELDS = {"out_dir", "variant", "empty_complement"}


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int
    out_dir: str
    num_circles: int
    points_per_circle: int
    train_noise: float
    eval_seed: int
    labels_per_batch: int
    batches_per_epoch: int
    epochs: int
    widths: tuple
    lr: float
    milestones: tuple
    lr_decay: float
    eval_ks: tuple
    lam: float
    gamma: float
    delta_plus: float
    delta_minus: float
    s_tilde: float
    alpha: float
    epsilon: float
    k: int
    tau: float
    variant: str
    empty_complement: str
    oracle_batches: int
    oracle_sizes: tuple
    oracle_epsilons: tuple
    oracle_tol: float
    gradcheck_h: float
    gradcheck_tol: float

    def __post_init__(self):
        for f in fields(self):
            object.__setattr__(self, f.name, _coerce(f.name, getattr(self, f.name)))
        if len(self.widths) < 2 or self.widths[0] != 2:
            raise ConfigError("widths must start with the input width 2")
        if min(self.widths) < 1:
            raise ConfigError("every layer width must be positive")
        if self.epochs < 1 or self.batches_per_epoch < 1:
            raise ConfigError("epochs and batches_per_epoch must be positive")
        if self.points_per_circle < self.k:
            raise ConfigError("points_per_circle must be at least k")
        if self.labels_per_batch > self.num_circles:
            raise ConfigError("labels_per_batch exceeds num_circles")
        if self.train_noise < 0:
            raise ConfigError("train_noise must be non-negative")
        if self.lr <= 0:
            raise ConfigError("lr must be positive")
        # validates every loss field
        self.loss_config()

    @classmethod
    def default(cls) -> "ExperimentConfig":
        return cls(**_default_dict())

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        unknown = sorted(set(data) - {f.name for f in fields(cls)})
        if unknown:
            raise ConfigError(f"unknown config keys: {unknown}")
        merged = _default_dict()
        merged.update(data)
        return cls(**merged)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        path = Path(path)
        try:
            data = json.loads(path.read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path} is not valid JSON: {exc}") from exc
        return cls.from_dict(data)

    def with_overrides(self, **kw) -> "ExperimentConfig":
        kw = {k: v for k, v in kw.items() if v is not None}
        return replace(self, **kw) if kw else self

    def to_dict(self) -> dict:
        d = asdict(self)
        for name in _INT_LISTS | _FLOAT_LISTS:
            d[name] = list(d[name])
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @property
    def hash(self) -> str:
        d = self.to_dict()
        d.pop("out_dir")
        canon = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()[:16]

    def resolved_out_dir(self) -> Path:
        """``out_dir`` with ``{field}`` placeholders filled from this config."""
        try:
            return Path(self.out_dir.format(**self.to_dict(), hash=self.hash))
        except (KeyError, IndexError, ValueError) as exc:
            raise ConfigError(f"bad out_dir template {self.out_dir!r}: {exc}") from exc

    def loss_config(self) -> LossConfig:
        return LossConfig(
            lam=self.lam,
            gamma=self.gamma,
            delta_plus=self.delta_plus,
            delta_minus=self.delta_minus,
            s_tilde=self.s_tilde,
            alpha=self.alpha,
            epsilon=self.epsilon,
            k=self.k,
            tau=self.tau,
            variant=self.variant,
            empty_complement=self.empty_complement,
        )

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            widths=self.widths,
            lr=self.lr,
            milestones=self.milestones,
            lr_decay=self.lr_decay,
            epochs=self.epochs,
            seed=self.seed,
            eval_ks=self.eval_ks,
        )


def _default_dict() -> dict:
    text = resources.files("ctxsim").joinpath("configs/default_toy.json").read_text()
    return json.loads(text)


def _coerce(name, value):
    try:
        if name in _INT_LISTS:
            return tuple(_as_int(name, v) for v in value)
        if name in _FLOAT_LISTS:
            return tuple(float(v) for v in value)
        if name in _STR_FIELDS:
            if not isinstance(value, str):
                raise TypeError
            return value
        if name in _INT_FIELDS:
            return _as_int(name, value)
        if isinstance(value, bool):
            raise TypeError
        return float(value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad value for {name}: {value!r}") from exc


def _as_int(name, v):
    if isinstance(v, bool) or int(v) != v:
        raise ConfigError(f"{name} must be an integer, got {v!r}")
    return int(v)
