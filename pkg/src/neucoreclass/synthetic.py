"""Synthetic fixtures: sine-wave normals against frequency-shifted and noise
anomalies, and a small multi-class dataset with distinct waveform families."""

from __future__ import annotations

import numpy as np

from .data import ONE_VS_REST, AnomalyProblem, RawDataset, make_dataset

NORMAL_CYCLES = (2.0, 3.0)
SHIFTED_CYCLES = (5.0, 7.0)


def sine_waves(n, length=64, channels=1, cycles=NORMAL_CYCLES, noise=0.05, rng=None):
    """Sines with random phase, amplitude in [0.8, 1.2] and a number of
    cycles per series drawn uniformly from ``cycles``."""
    rng = np.random.default_rng(rng)
    t = np.arange(length) / length
    freq = rng.uniform(*cycles, size=(n, channels, 1))
    phase = rng.uniform(0, 2 * np.pi, size=(n, channels, 1))
    amp = rng.uniform(0.8, 1.2, size=(n, channels, 1))
    x = amp * np.sin(2 * np.pi * freq * t + phase)
    return x + noise * rng.standard_normal(x.shape)


def noise_series(n, length=64, channels=1, scale=0.7, rng=None):
    rng = np.random.default_rng(rng)
    return scale * rng.standard_normal((n, channels, length))


def square_waves(n, length=64, channels=1, cycles=NORMAL_CYCLES, noise=0.05, rng=None):
    rng = np.random.default_rng(rng)
    return np.sign(sine_waves(n, length, channels, cycles, 0.0, rng)) * 0.9 + \
        noise * rng.standard_normal((n, channels, length))


def sawtooth_waves(n, length=64, channels=1, cycles=NORMAL_CYCLES, noise=0.05, rng=None):
    rng = np.random.default_rng(rng)
    t = np.arange(length) / length
    freq = rng.uniform(*cycles, size=(n, channels, 1))
    phase = rng.uniform(0, 1, size=(n, channels, 1))
    x = 2 * ((freq * t + phase) % 1.0) - 1
    return x + noise * rng.standard_normal(x.shape)


def make_sine_problem(n_train=200, n_eval_normal=100, n_shifted=50, n_noise=50, length=64,
                      channels=1, seed=0) -> AnomalyProblem:
    """One-class problem: sine normals; anomalies are sines with a shifted
    frequency band (class 1) or white noise (class 2)."""
    rng = np.random.default_rng(seed)
    train = sine_waves(n_train, length, channels, rng=rng)
    normals = sine_waves(n_eval_normal, length, channels, rng=rng)
    shifted = sine_waves(n_shifted, length, channels, cycles=SHIFTED_CYCLES, rng=rng)
    noise = noise_series(n_noise, length, channels, rng=rng)
    eval_x = np.concatenate([normals, shifted, noise])
    classes = np.repeat([0, 1, 2], [n_eval_normal, n_shifted, n_noise])
    return AnomalyProblem(
        dataset_name="SyntheticSines",
        setting=ONE_VS_REST,
        normal_classes=frozenset([0]),
        train_normals=train,
        eval_sequences=eval_x,
        eval_labels=(classes != 0).astype(np.int64),
        eval_classes=classes,
        held_out_class=0,
    )


_FAMILIES = (
    lambda n, L, C, rng: sine_waves(n, L, C, rng=rng),
    lambda n, L, C, rng: sine_waves(n, L, C, cycles=SHIFTED_CYCLES, rng=rng),
    lambda n, L, C, rng: square_waves(n, L, C, rng=rng),
    lambda n, L, C, rng: sawtooth_waves(n, L, C, rng=rng),
    lambda n, L, C, rng: noise_series(n, L, C, rng=rng),
)


def make_synthetic_dataset(n_classes=4, n_train_per_class=40, n_test_per_class=30, length=64,
                           channels=1, seed=0, name="SyntheticWaves") -> RawDataset:
    """Labeled dataset whose classes are distinct waveform families
    (sine, fast sine, square, sawtooth, noise)."""
    if not 1 <= n_classes <= len(_FAMILIES):
        raise ValueError(f"n_classes must be between 1 and {len(_FAMILIES)}")
    rng = np.random.default_rng(seed)
    xs_tr, ys_tr, xs_te, ys_te = [], [], [], []
    for c in range(n_classes):
        xs_tr.append(_FAMILIES[c](n_train_per_class, length, channels, rng))
        xs_te.append(_FAMILIES[c](n_test_per_class, length, channels, rng))
        ys_tr += [c] * n_train_per_class
        ys_te += [c] * n_test_per_class
    return make_dataset(name, (np.concatenate(xs_tr), ys_tr), (np.concatenate(xs_te), ys_te))
