import math

import numpy as np
import pytest
import torch

from neucoreclass.data import split_train_val
from neucoreclass.exceptions import EmptySet, InvalidConfig, NonFiniteLoss
from neucoreclass.model import init_model
from neucoreclass.objectives import compute_losses
from neucoreclass.scoring import score_batch
from neucoreclass.training import (
    ABLATION_VARIANTS,
    FULL_VARIANT,
    K_GRID,
    TAU_GRID,
    TrainConfig,
    fit_problem,
    normalize_tasks,
    run_ablation,
    run_sensitivity,
    train,
    validate,
    variant_name,
)

from .conftest import TINY, tiny_config


def short(**kw):
    return TrainConfig(**{"max_epochs": 2, **kw})


class TestConfig:
    @pytest.mark.parametrize("kw", [
        {"max_epochs": 0}, {"batch_size": 0}, {"lr_decay_factor": 1.0},
        {"min_lr": 1e-2}, {"tau": 0.0}, {"enabled_tasks": ()}, {"enabled_tasks": ("foo",)},
        {"scheduler_patience": -1},
    ])
    def test_invalid(self, kw):
        with pytest.raises(InvalidConfig):
            TrainConfig(**kw)

    def test_defaults(self):
        c = TrainConfig()
        assert (c.initial_lr, c.lr_decay_factor, c.min_lr, c.scheduler_patience) == (1e-3, 0.5, 1e-6, 10)
        assert c.enabled_tasks == FULL_VARIANT

    def test_round_trip(self):
        c = TrainConfig(seed=3, enabled_tasks="rec,class")
        assert TrainConfig.from_dict(c.to_dict()) == c
        with pytest.raises(InvalidConfig):
            TrainConfig.from_dict({"epochs": 3})

    def test_task_names(self):
        assert normalize_tasks("class+rec") == ("rec", "class")
        assert variant_name(["class", "con"]) == "con+class"


class TestTrain:
    def test_deterministic(self, sine_problem):
        mc = tiny_config(length=sine_problem.length)
        runs = [fit_problem(sine_problem, mc, short(max_epochs=3), seed=2) for _ in range(2)]
        assert runs[0].history == runs[1].history
        sa, sb = runs[0].model.state_dict(), runs[1].model.state_dict()
        assert all(torch.equal(sa[k], sb[k]) for k in sa)
        assert runs[0].auroc == runs[1].auroc

    def test_history_records(self, sine_problem):
        run = fit_problem(sine_problem, tiny_config(length=32), short(max_epochs=3))
        h = run.history
        assert [e["epoch"] for e in h.epochs] == [1, 2, 3]
        assert h.stop_reason == "max-epochs"
        assert all(math.isfinite(e["train_loss"]) for e in h.epochs)
        assert h.best_val_score == min(h.val_scores)
        assert run.model.trained and not run.model.training

    def test_lr_floor_after_one_decay(self, sine_problem):
        cfg = TrainConfig(max_epochs=200, initial_lr=1.5e-6, min_lr=1e-6, lr_decay_factor=0.5,
                          scheduler_patience=1, plateau_threshold=0.5)
        run = fit_problem(sine_problem, tiny_config(length=32), cfg)
        h = run.history
        assert h.stop_reason == "lr-floor"
        assert set(h.learning_rates) == {1.5e-6}
        assert len(h.epochs) <= 3  # first epoch sets the reference, then one plateau

    def test_best_snapshot_restored(self, sine_problem):
        split = split_train_val(sine_problem, seed=0)
        model = init_model(tiny_config(length=32), 0)
        model, h = train(model, sine_problem.train_normals, split, short(max_epochs=4))
        val = sine_problem.train_normals[list(split.val_indices)]
        assert validate(model, val) == pytest.approx(h.best_val_score, rel=1e-9)

    def test_on_epoch_callback(self, sine_problem):
        seen = []
        split = split_train_val(sine_problem)
        train(init_model(tiny_config(length=32), 0), sine_problem.train_normals, split, short(),
              on_epoch=seen.append)
        assert [r["epoch"] for r in seen] == [1, 2]

    def test_sigma_stays_positive_and_learns(self, sine_problem):
        run = fit_problem(sine_problem, tiny_config(length=32), short(max_epochs=3))
        for t in FULL_VARIANT:
            s = run.model.weights.sigma(t).item()
            assert s > 0 and s != 1.0

    def test_non_finite_loss(self, sine_problem):
        x = sine_problem.train_normals.copy()
        x[0, 0, 0] = np.nan
        with pytest.raises(NonFiniteLoss) as exc:
            train(init_model(tiny_config(length=32), 0), x, split_train_val(len(x)), short())
        assert exc.value.epoch == 1

    def test_disabled_tasks_do_not_move_their_sigma(self, sine_problem):
        run = fit_problem(sine_problem, tiny_config(length=32), short(enabled_tasks=("con",)))
        assert run.model.weights.sigma("rec").item() == 1.0
        assert run.model.weights.sigma("class").item() == 1.0
        assert run.model.tasks == ("con",)

    def test_constant_sequences_reconstruction(self):
        x = np.repeat(np.linspace(-1, 1, 64)[:, None, None], 16, axis=2)
        cfg = TrainConfig(max_epochs=300, enabled_tasks=("rec",))
        model = init_model(tiny_config(length=16), 0)
        model, h = train(model, x, split_train_val(64), cfg)
        with torch.no_grad():
            rec = compute_losses(model, torch.tensor(x, dtype=torch.float32), 0.1, ("rec",))["rec"]
        assert rec.mean().item() < 1e-3

    def test_validate(self, trained_tiny, sine_problem):
        x = sine_problem.eval_sequences[:1]
        assert validate(trained_tiny, x) == score_batch(trained_tiny, x).overall[0]
        x = sine_problem.eval_sequences[:5]
        assert validate(trained_tiny, np.concatenate([x, x])) == pytest.approx(
            validate(trained_tiny, x), rel=1e-12)
        with pytest.raises(EmptySet):
            validate(trained_tiny, x[:0])


class TestSweeps:
    def test_ablation_variants(self, sine_problem):
        out = run_ablation(sine_problem, TINY, short(max_epochs=1), seeds=(0, 1), keep_models=False)
        assert len(ABLATION_VARIANTS) == 7
        assert sorted(out) == sorted(variant_name(v) for v in ABLATION_VARIANTS)
        for runs in out.values():
            assert [r.seed for r in runs] == [0, 1]
            assert all(0 <= r.auroc <= 1 and r.model is None for r in runs)

    def test_ablation_rejects_unknown_variant(self, sine_problem):
        with pytest.raises(InvalidConfig):
            run_ablation(sine_problem, TINY, short(), variants=[()])

    def test_sensitivity_grid_size(self, sine_problem, monkeypatch):
        calls = []

        def fake(args):
            calls.append(args)
            return 0.5, 0.5, "max-epochs", 1, None

        monkeypatch.setattr("neucoreclass.training._run_point", fake)
        rows = run_sensitivity(sine_problem, TINY, short(), seeds=(0,))
        assert len(rows) == len(K_GRID) + len(TAU_GRID) == 10
        assert [r["value"] for r in rows if r["parameter"] == "K"] == list(K_GRID)
        assert [c[1].n_transformations for c in calls[:5]] == list(K_GRID)
        assert [c[2].tau for c in calls[5:]] == list(TAU_GRID)

    def test_single_point_matches_standard_run(self, sine_problem):
        base = fit_problem(sine_problem, tiny_config(length=32), short(), seed=0)
        rows = run_sensitivity(sine_problem, TINY, short(), k_grid=(3,), tau_grid=(), seeds=(0,))
        assert rows == [{"parameter": "K", "value": 3, "auroc": base.auroc, "aupr": base.aupr,
                         "n_seeds": 1}]

    def test_empty_grids(self, sine_problem):
        with pytest.raises(InvalidConfig):
            run_sensitivity(sine_problem, TINY, short(), k_grid=(), tau_grid=())
