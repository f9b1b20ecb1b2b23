import numpy as np
import pytest
import torch

from neucoreclass.model import ModelConfig, init_model
from neucoreclass.synthetic import make_sine_problem, make_synthetic_dataset
from neucoreclass.training import TrainConfig, fit_problem

# Small enough for unit tests on one CPU core.
TINY = dict(n_transformations=3, latent_dim=8, hidden_channels=8, encoder_depth=2,
            transform_channels=4)
# Desk-scale architecture used by the end-to-end runs.
DESK = dict(n_transformations=4, latent_dim=32, hidden_channels=16, encoder_depth=3,
            transform_channels=8)


def tiny_config(channels=1, length=16, **kw):
    return ModelConfig(input_channels=channels, input_length=length, **{**TINY, **kw})


def central_difference_check(fn, x, n_coords=12, step=1e-5, seed=0):
    """Max relative error between autograd and central differences of the
    scalar ``fn(x)`` over randomly chosen coordinates of ``x``."""
    x = x.detach().clone().requires_grad_(True)
    out = fn(x)
    (grad,) = torch.autograd.grad(out, x)
    flat = x.detach().reshape(-1)
    rng = np.random.default_rng(seed)
    idx = rng.choice(flat.numel(), size=min(n_coords, flat.numel()), replace=False)
    worst = 0.0
    for i in idx:
        plus, minus = flat.clone(), flat.clone()
        plus[i] += step
        minus[i] -= step
        with torch.no_grad():
            numeric = (fn(plus.view_as(x)) - fn(minus.view_as(x))).item() / (2 * step)
        analytic = grad.reshape(-1)[i].item()
        worst = max(worst, abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-6))
    return worst


@pytest.fixture(scope="session")
def sine_problem():
    return make_sine_problem(n_train=60, n_eval_normal=20, n_shifted=10, n_noise=10,
                             length=32, seed=3)


@pytest.fixture(scope="session")
def trained_tiny(sine_problem):
    """A tiny model trained for a few epochs; shared by scoring tests."""
    mc = tiny_config(length=sine_problem.length).to_dict()
    run = fit_problem(sine_problem, mc, TrainConfig(max_epochs=3, seed=0))
    return run.model


@pytest.fixture(scope="session")
def waves_dataset():
    return make_synthetic_dataset(n_classes=4, n_train_per_class=12, n_test_per_class=8,
                                  length=32, seed=1)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def double_tiny():
    return init_model(tiny_config(), seed=5).double()


_acceptance = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None:
        return
    name = marker.args[0]
    if rep.when == "call" or rep.outcome != "passed":
        status = {"passed": "PASS", "failed": "FAIL", "skipped": "SKIP"}[rep.outcome]
        # a criterion split over several tests fails if any part fails
        if _acceptance.get(name) != "FAIL":
            _acceptance[name] = status


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for name, status in _acceptance.items():
        terminalreporter.write_line(f"[{status}] {name}")
