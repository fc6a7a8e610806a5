"""Multi-task loss, RMSprop and the early-stopping training loop.

The per-task loss for a batch of ``N`` utterances is

    L = 1/N * sum_n [ (y_n - u_n)^2 + 1/T_n * sum_t (y_n - s_{n,t})^2 ]

with true score ``y_n``, predicted utterance score ``u_n`` and predicted frame
scores ``s_{n,t}``. The joint loss is ``alpha * L_quality + beta *
L_intelligibility``.
"""
from __future__ import annotations

import enum
import json
import logging
import time
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .hearing import PatternBank, builtin_pattern_bank
from .nn import ModelConfig, ModelParams, NumericalBlowup, concat_inputs, model_backward, model_forward
from .synth import CorpusManifest, CorpusSplit, UtteranceRecord, realize_many

logger = logging.getLogger(__name__)


class Mode(str, enum.Enum):
    MULTITASK = "MULTITASK"
    QUALITY_ONLY = "QUALITY_ONLY"
    INTELLIGIBILITY_ONLY = "INTELLIGIBILITY_ONLY"

    @property
    def tasks(self) -> tuple[str, ...]:
        return {
            Mode.MULTITASK: ("quality", "intelligibility"),
            Mode.QUALITY_ONLY: ("quality",),
            Mode.INTELLIGIBILITY_ONLY: ("intelligibility",),
        }[self]


class TrainingDiverged(ArithmeticError):
    def __init__(self, epoch: int, batch: int, detail: str):
        super().__init__(f"non-finite loss at epoch {epoch}, batch {batch}: {detail}")
        self.epoch = epoch
        self.batch = batch


# -- losses --------------------------------------------------------------------


@dataclass
class TaskTerms:
    """True scores and predictions for one task over a batch."""

    true: Sequence[float]
    predicted: Sequence[float]
    frames: Sequence[np.ndarray]


@dataclass
class LossTerms:
    quality: TaskTerms | None = None
    intelligibility: TaskTerms | None = None
    alpha: float = 1.0
    beta: float = 1.5

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("task weights must be non-negative")


def task_loss(terms: TaskTerms) -> float:
    n = len(terms.true)
    if n == 0:
        raise ValueError("empty batch")
    total = 0.0
    for y, u, s in zip(terms.true, terms.predicted, terms.frames):
        s = np.asarray(s, dtype=np.float64)
        total += (y - u) ** 2 + np.mean((y - s) ** 2)
    return float(total / n)


def task_loss_grads(terms: TaskTerms, weight: float = 1.0) -> list[tuple[float, np.ndarray]]:
    """Per-utterance ``(dL/du_n, dL/ds_n)`` for ``weight * task_loss``."""
    n = len(terms.true)
    out = []
    for y, u, s in zip(terms.true, terms.predicted, terms.frames):
        s = np.asarray(s, dtype=np.float64)
        out.append((weight * -2.0 * (y - u) / n, weight * -2.0 * (y - s) / (n * s.shape[0])))
    return out


def quality_loss(batch: LossTerms) -> float:
    return task_loss(batch.quality)


def intelligibility_loss(batch: LossTerms) -> float:
    return task_loss(batch.intelligibility)


def total_loss(batch: LossTerms) -> float:
    total = 0.0
    if batch.quality is not None:
        total += batch.alpha * quality_loss(batch)
    if batch.intelligibility is not None:
        total += batch.beta * intelligibility_loss(batch)
    return total


# -- optimiser ------------------------------------------------------------------


@dataclass
class TrainConfig:
    learning_rate: float = 0.001
    rho: float = 0.9
    epsilon: float = 1e-8
    batch_size: int = 32
    max_epochs: int = 100
    patience: int = 5
    seed: int = 0
    mode: Mode = Mode.MULTITASK
    alpha: float = 1.0
    beta: float = 1.5
    log_compress: bool = False
    record_wall_time: bool = True

    def __post_init__(self):
        self.mode = Mode(self.mode)
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if self.batch_size < 1 or self.max_epochs < 1:
            raise ValueError("batch_size and max_epochs must be >= 1")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["mode"] = self.mode.value
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {k: v for k, v in d.items() if k in cls.__dataclass_fields__}
        unknown = set(d) - set(known)
        if unknown:
            raise ValueError(f"unknown training options: {sorted(unknown)}")
        return cls(**known)


def rmsprop_step(
    params: ModelParams, grads: ModelParams, state: dict[str, np.ndarray] | None, config: TrainConfig
) -> tuple[ModelParams, dict[str, np.ndarray]]:
    """One RMSprop update; returns new parameters and new state (inputs untouched).

    ``v <- rho v + (1 - rho) g^2`` and ``theta <- theta - lr g / (sqrt(v) + eps)``.
    """
    if grads.config != params.config:
        raise ValueError("gradient and parameter shapes differ")
    state = state or {n: np.zeros_like(a) for n, a in params.items()}
    new_params, new_state = {}, {}
    for name, theta in params.items():
        g = grads[name]
        if g.shape != theta.shape or state[name].shape != theta.shape:
            raise ValueError(f"{name}: shape mismatch")
        v = config.rho * state[name] + (1.0 - config.rho) * g * g
        new_params[name] = theta - config.learning_rate * g / (np.sqrt(v) + config.epsilon)
        new_state[name] = v
    return ModelParams(params.config, new_params), new_state


# -- data --------------------------------------------------------------------------


@dataclass
class Example:
    id: str
    features: np.ndarray
    quality: float | None
    intelligibility: float | None


@dataclass
class TrainingData:
    train: list[Example]
    val: list[Example]


def make_examples(
    records: Sequence[UtteranceRecord],
    bank: PatternBank | None = None,
    log_compress: bool = False,
    jobs: int = 1,
) -> list[Example]:
    realized = realize_many(records, bank, jobs=jobs)
    return [
        Example(r.id, concat_inputs(spec, ag, log_compress), r.quality, r.intelligibility)
        for r, (spec, ag) in zip(records, realized)
    ]


def prepare(
    manifest: CorpusManifest, bank: PatternBank | None = None, log_compress: bool = False, jobs: int = 1
) -> TrainingData:
    """Realise the TRAIN and VAL records of a labelled manifest."""
    bank = bank if bank is not None else builtin_pattern_bank()
    train = manifest.split(CorpusSplit.TRAIN)
    val = manifest.split(CorpusSplit.VAL)
    missing = [r.id for r in train + val if not r.labeled]
    if missing:
        raise ValueError(f"{len(missing)} unlabelled records, e.g. {missing[:3]}")
    return TrainingData(
        make_examples(train, bank, log_compress, jobs), make_examples(val, bank, log_compress, jobs)
    )


# -- training loop -----------------------------------------------------------------


def _weights(config: TrainConfig) -> dict[str, float]:
    return {"quality": config.alpha, "intelligibility": config.beta}


def batch_loss_and_grads(
    examples: Sequence[Example], params: ModelParams, config: TrainConfig, with_grads: bool = True
) -> tuple[dict[str, float], ModelParams | None]:
    """Mean loss terms over a batch and (optionally) their parameter gradients.

    Utterances are processed one at a time and gradients summed in list order.
    """
    tasks = params.config.tasks
    weights = _weights(config) if len(tasks) > 1 else {t: 1.0 for t in tasks}
    outputs = [model_forward(ex.features, params) for ex in examples]
    terms = {
        t: TaskTerms(
            [getattr(ex, t) for ex in examples],
            [o.utterance_scores[t] for o in outputs],
            [o.frame_scores[t] for o in outputs],
        )
        for t in tasks
    }
    losses = {t: task_loss(terms[t]) for t in tasks}
    losses["total"] = sum(weights[t] * losses[t] for t in tasks)
    if not with_grads:
        return losses, None
    per_task = {t: task_loss_grads(terms[t], weights[t]) for t in tasks}
    grads = params.zeros_like()
    for n, out in enumerate(outputs):
        grads.add_(model_backward(out.trace, {t: per_task[t][n] for t in tasks}, params))
    return losses, grads


def evaluate_loss(examples: Sequence[Example], params: ModelParams, config: TrainConfig) -> dict[str, float]:
    losses, _ = batch_loss_and_grads(examples, params, config, with_grads=False)
    return losses


@dataclass
class EpochRecord:
    epoch: int
    train_L_Q: float | None
    train_L_I: float | None
    train_total: float
    val_total: float
    wall_time: float | None

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=False)


@dataclass
class FitResult:
    best_params: ModelParams
    best_epoch: int
    history: list[EpochRecord] = field(default_factory=list)
    stopped_early: bool = False

    def history_jsonl(self) -> str:
        return "".join(r.to_json() + "\n" for r in self.history)


def _as_data(data, config: TrainConfig, bank: PatternBank | None) -> TrainingData:
    if isinstance(data, TrainingData):
        return data
    if isinstance(data, CorpusManifest):
        return prepare(data, bank, config.log_compress)
    raise TypeError("expected TrainingData or CorpusManifest")


def fit(
    data: TrainingData | CorpusManifest,
    params: ModelParams,
    config: TrainConfig,
    bank: PatternBank | None = None,
) -> FitResult:
    """Train with RMSprop and early stopping on the VAL total loss.

    Each epoch reshuffles TRAIN with a generator seeded from ``config.seed``
    and the epoch number, so batch order depends only on the seed. Returns
    the parameters of the best VAL epoch.
    """
    data = _as_data(data, config, bank)
    if not data.val:
        raise ValueError("VAL split is empty")
    if not data.train:
        raise ValueError("TRAIN split is empty")
    tasks = config.mode.tasks
    if params.config.tasks != tasks:
        raise ValueError(f"model tasks {params.config.tasks} do not match mode {config.mode.value}")

    state = None
    best_val = np.inf
    best_params = params.copy()
    best_epoch = 0
    since_best = 0
    history = []
    stopped = False
    for epoch in range(1, config.max_epochs + 1):
        start = time.perf_counter()
        order = np.random.default_rng([config.seed, epoch]).permutation(len(data.train))
        sums = {"quality": 0.0, "intelligibility": 0.0, "total": 0.0}
        for b, lo in enumerate(range(0, len(order), config.batch_size)):
            batch = [data.train[i] for i in order[lo : lo + config.batch_size]]
            try:
                losses, grads = batch_loss_and_grads(batch, params, config)
            except NumericalBlowup as exc:
                raise TrainingDiverged(epoch, b, f"{exc}; batch ids {[ex.id for ex in batch][:5]}") from exc
            if not np.isfinite(losses["total"]):
                raise TrainingDiverged(epoch, b, f"batch ids {[ex.id for ex in batch][:5]}")
            for key, value in losses.items():
                sums[key] += value * len(batch)
            params, state = rmsprop_step(params, grads, state, config)
        n_train = len(data.train)
        try:
            val_total = evaluate_loss(data.val, params, config)["total"]
        except NumericalBlowup as exc:
            raise TrainingDiverged(epoch, -1, f"validation: {exc}") from exc
        if not np.isfinite(val_total):
            raise TrainingDiverged(epoch, -1, "validation loss")
        record = EpochRecord(
            epoch=epoch,
            train_L_Q=sums["quality"] / n_train if "quality" in tasks else None,
            train_L_I=sums["intelligibility"] / n_train if "intelligibility" in tasks else None,
            train_total=sums["total"] / n_train,
            val_total=val_total,
            wall_time=round(time.perf_counter() - start, 3) if config.record_wall_time else None,
        )
        history.append(record)
        logger.info("epoch %d train %.5f val %.5f", epoch, record.train_total, val_total)
        if val_total < best_val:
            best_val, best_params, best_epoch, since_best = val_total, params.copy(), epoch, 0
        else:
            since_best += 1
            if since_best >= config.patience:
                stopped = True
                break
    return FitResult(best_params, best_epoch, history, stopped)


def fit_single_task(
    data: TrainingData | CorpusManifest,
    params: ModelParams,
    config: TrainConfig,
    bank: PatternBank | None = None,
) -> FitResult:
    """Train a model with the shared trunk and a single task branch."""
    if config.mode is Mode.MULTITASK:
        raise ValueError("fit_single_task needs mode QUALITY_ONLY or INTELLIGIBILITY_ONLY")
    return fit(data, params, config, bank)


def model_config_for(mode: Mode, base: ModelConfig | None = None) -> ModelConfig:
    base = base or ModelConfig()
    return ModelConfig(base.input_dim, base.hidden, base.dense, base.heads, Mode(mode).tasks)
