"""Joint training with plateau-driven learning-rate decay, plus the
ablation and sensitivity sweeps built on it."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np
import torch

from .data import AnomalyProblem, TrainValSplit, split_train_val
from .evaluation import aupr, auroc
from .exceptions import EmptySet, EmptyTrainingSet, InvalidConfig, NonFiniteLoss
from .model import TASKS, ModelConfig, clone_state, init_model
from .objectives import compute_losses
from .scoring import score_batch

logger = logging.getLogger(__name__)

FULL_VARIANT = ("con", "rec", "class")
ABLATION_VARIANTS = (
    ("class",),
    ("con",),
    ("rec",),
    ("con", "class"),
    ("rec", "class"),
    ("rec", "con"),
    FULL_VARIANT,
)
K_GRID = (3, 4, 7, 11, 15)
TAU_GRID = (0.05, 0.07, 0.1, 0.2, 0.5)


@dataclass
class TrainConfig:
    max_epochs: int = 10000
    batch_size: int = 32
    initial_lr: float = 1e-3
    scheduler_patience: int = 10
    lr_decay_factor: float = 0.5
    min_lr: float = 1e-6
    plateau_threshold: float = 1e-4
    tau: float = 0.1
    seed: int = 0
    enabled_tasks: tuple = FULL_VARIANT

    def __post_init__(self):
        self.enabled_tasks = normalize_tasks(self.enabled_tasks)
        self.validate()

    def validate(self):
        if self.max_epochs < 1:
            raise InvalidConfig("max_epochs must be >= 1")
        if self.batch_size < 1:
            raise InvalidConfig("batch_size must be >= 1")
        if not 0 < self.lr_decay_factor < 1:
            raise InvalidConfig("lr_decay_factor must lie in (0, 1)")
        if not self.min_lr < self.initial_lr:
            raise InvalidConfig("min_lr must be smaller than initial_lr")
        if self.scheduler_patience < 0:
            raise InvalidConfig("scheduler_patience must be >= 0")
        if not self.tau > 0:
            raise InvalidConfig("tau must be positive")
        if not self.enabled_tasks:
            raise InvalidConfig("enabled_tasks must not be empty")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["enabled_tasks"] = list(self.enabled_tasks)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise InvalidConfig(f"unknown training config keys: {sorted(unknown)}")
        return cls(**d)


def normalize_tasks(tasks) -> tuple:
    """Canonical ordering of a task subset; accepts ``"rec,class"`` strings."""
    if isinstance(tasks, str):
        tasks = [t for t in tasks.replace("+", ",").split(",") if t.strip()]
    tasks = [t.strip() for t in tasks]
    bad = set(tasks) - set(TASKS)
    if bad:
        raise InvalidConfig(f"unknown tasks {sorted(bad)}; expected a subset of {TASKS}")
    return tuple(t for t in TASKS if t in tasks)


def variant_name(tasks) -> str:
    return "+".join(normalize_tasks(tasks))


@dataclass
class TrainHistory:
    epochs: list = field(default_factory=list)  # dicts: epoch, train_loss, val_score, lr
    stop_reason: str | None = None
    best_epoch: int | None = None
    best_val_score: float = math.inf

    @property
    def learning_rates(self):
        return [e["lr"] for e in self.epochs]

    @property
    def val_scores(self):
        return [e["val_score"] for e in self.epochs]

    @property
    def train_losses(self):
        return [e["train_loss"] for e in self.epochs]

    def __eq__(self, other):
        return isinstance(other, TrainHistory) and self.to_dict() == other.to_dict()

    def to_dict(self) -> dict:
        return {"epochs": self.epochs, "stop_reason": self.stop_reason,
                "best_epoch": self.best_epoch, "best_val_score": self.best_val_score}


def validate(model, val_samples, tau: float | None = None) -> float:
    """Mean overall anomaly score of ``val_samples`` under the current weights."""
    if len(val_samples) == 0:
        raise EmptySet("validation set is empty")
    return float(np.mean(score_batch(model, val_samples, tau=tau).overall))


def _to_tensor(x, model):
    dtype = next(model.parameters()).dtype
    return torch.as_tensor(np.asarray(x), dtype=dtype)


def train(model, train_normals, split: TrainValSplit, config: TrainConfig, on_epoch=None):
    """Optimize all parameters of ``model`` on the combined loss.

    Only the training normals are seen. After each epoch the mean overall
    anomaly score of the validation subset drives a reduce-on-plateau
    schedule; training stops once the learning rate falls below
    ``config.min_lr`` or after ``config.max_epochs``. The parameters with the
    lowest validation score are restored before returning.

    ``on_epoch`` is called with each epoch record. Returns
    ``(model, TrainHistory)``.
    """
    config.validate()
    train_normals = np.asarray(train_normals)
    if len(train_normals) == 0 or len(split.train_indices) == 0:
        raise EmptyTrainingSet("no training samples")
    x_train = _to_tensor(train_normals[list(split.train_indices)], model)
    x_val = train_normals[list(split.val_indices)]
    if len(x_val) == 0:
        raise EmptySet("validation split is empty")
    model.check_input(x_train)
    tasks = config.enabled_tasks
    model.tasks = tasks
    model.tau = config.tau
    model.trained = True  # scoring is used for validation during training

    optimizer = torch.optim.Adam(model.parameters(), lr=config.initial_lr)
    scheduler = torch.optim.lr_scheduler.ReduceLROnPlateau(
        optimizer, mode="min", factor=config.lr_decay_factor, patience=config.scheduler_patience,
        threshold=config.plateau_threshold, threshold_mode="rel", min_lr=0.0, eps=0.0,
    )
    history = TrainHistory()
    best_state = clone_state(model)
    n = len(x_train)
    for epoch in range(1, config.max_epochs + 1):
        lr = optimizer.param_groups[0]["lr"]
        model.train()
        order = np.random.default_rng([config.seed, epoch]).permutation(n)
        total, count = 0.0, 0
        for step, start in enumerate(range(0, n, config.batch_size)):
            xb = x_train[order[start:start + config.batch_size]]
            losses = compute_losses(model, xb, config.tau, tasks)
            for t in tasks:
                value = losses.per_sample[t]
                if not torch.isfinite(value).all():
                    bad = value[~torch.isfinite(value)][0].item()
                    raise NonFiniteLoss(t, epoch, step, bad)
            loss = losses.combined.mean()
            if not torch.isfinite(loss):
                raise NonFiniteLoss("combined", epoch, step, loss.item())
            optimizer.zero_grad(set_to_none=True)
            loss.backward()
            optimizer.step()
            total += loss.item() * len(xb)
            count += len(xb)
        for t in TASKS:
            assert model.weights.sigma(t).item() > 0

        val_score = validate(model, x_val, config.tau)
        if not math.isfinite(val_score):
            raise NonFiniteLoss("validation", epoch, -1, val_score)
        record = {"epoch": epoch, "train_loss": total / count, "val_score": val_score, "lr": lr}
        history.epochs.append(record)
        if on_epoch is not None:
            on_epoch(record)
        if val_score < history.best_val_score:
            history.best_val_score = val_score
            history.best_epoch = epoch
            best_state = clone_state(model)
        scheduler.step(val_score)
        if optimizer.param_groups[0]["lr"] < config.min_lr:
            history.stop_reason = "lr-floor"
            break
    else:
        history.stop_reason = "max-epochs"
    model.load_state_dict(best_state)
    model.eval()
    logger.info("training stopped (%s) after %d epochs; best epoch %s, val score %.6g",
                history.stop_reason, len(history.epochs), history.best_epoch,
                history.best_val_score)
    return model, history


# --------------------------------------------------------------------------
# Whole-problem runs and sweeps


@dataclass
class RunResult:
    model: object
    history: TrainHistory
    auroc: float
    aupr: float
    seed: int


def fit_problem(problem: AnomalyProblem, model_config: ModelConfig | dict, train_config: TrainConfig,
                seed: int | None = None, val_fraction: float = 0.1) -> RunResult:
    """Split, initialize, train on the problem's normals, then evaluate on
    its evaluation set."""
    seed = train_config.seed if seed is None else seed
    train_config = replace(train_config, seed=seed)
    if isinstance(model_config, dict):
        model_config = ModelConfig.from_dict(model_config)
    split = split_train_val(problem, val_fraction=val_fraction, seed=seed)
    model = init_model(model_config, seed=seed)
    model, history = train(model, problem.train_normals, split, train_config)
    scores = score_batch(model, problem.eval_sequences).overall
    return RunResult(model, history, auroc(scores, problem.eval_labels),
                     aupr(scores, problem.eval_labels), seed)


def _model_config_for(problem, base: dict, **overrides) -> ModelConfig:
    d = dict(base)
    d.update(input_channels=problem.n_channels, input_length=problem.length)
    d.update(overrides)
    return ModelConfig.from_dict(d)


def _run_point(args):
    problem, model_cfg, train_cfg, seed = args
    r = fit_problem(problem, model_cfg, train_cfg, seed=seed)
    return r.auroc, r.aupr, r.history.stop_reason, len(r.history.epochs), r


def _map(fn, items, jobs):
    if jobs and jobs > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(fn, items))
    return [fn(item) for item in items]


def run_ablation(problem: AnomalyProblem, model_config: dict, train_config: TrainConfig,
                 variants=ABLATION_VARIANTS, seeds=(0,), jobs: int = 1, keep_models: bool = True):
    """Train one model per task subset and seed, seeds aligned across variants.

    Returns ``{variant_name: [RunResult per seed]}``.
    """
    variants = [normalize_tasks(v) for v in variants]
    allowed = {normalize_tasks(v) for v in ABLATION_VARIANTS}
    for v in variants:
        if v not in allowed:
            raise InvalidConfig(f"{variant_name(v)!r} is not an ablation variant")
    mc = _model_config_for(problem, model_config)
    items = [(problem, mc, replace(train_config, enabled_tasks=v), s) for v in variants for s in seeds]
    outputs = _map(_run_point, items, jobs)
    results = {}
    for (_, _, tc, _), out in zip(items, outputs):
        run = out[4]
        if not keep_models:
            run.model = None
        results.setdefault(variant_name(tc.enabled_tasks), []).append(run)
    return results


def run_sensitivity(problem: AnomalyProblem, model_config: dict, train_config: TrainConfig,
                    k_grid=K_GRID, tau_grid=TAU_GRID, seeds=(0,), jobs: int = 1):
    """One-at-a-time sweep over K (tau at its base value) and tau (K at its
    base value).

    Returns rows ``{parameter, value, auroc, aupr, n_seeds}`` with metrics
    averaged over seeds.
    """
    if not list(k_grid) and not list(tau_grid):
        raise InvalidConfig("sensitivity grids are empty")
    points = [("K", k) for k in k_grid] + [("tau", t) for t in tau_grid]
    items = []
    for param, value in points:
        if param == "K":
            mc = _model_config_for(problem, model_config, n_transformations=int(value))
            tc = train_config
        else:
            mc = _model_config_for(problem, model_config)
            tc = replace(train_config, tau=float(value))
        items += [(problem, mc, tc, s) for s in seeds]
    outputs = _map(_run_point, items, jobs)
    rows = []
    n_seeds = len(seeds)
    for i, (param, value) in enumerate(points):
        chunk = outputs[i * n_seeds:(i + 1) * n_seeds]
        rows.append({
            "parameter": param,
            "value": value,
            "auroc": float(np.mean([c[0] for c in chunk])),
            "aupr": float(np.mean([c[1] for c in chunk])),
            "n_seeds": n_seeds,
        })
    return rows
