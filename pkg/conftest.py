#!/usr/bin/env python3
# Shared fixtures: toy data sets and small synthetic signals with known answers.

import numpy as np
import pytest

import toy_models
from snapshots import Grid1D, SnapshotMatrix

WAVE_OMEGA = 2.8
WAVE_PERIOD = 40


def travelling_wave(n_space=8, n_time=400, omega=WAVE_OMEGA, period_samples=WAVE_PERIOD):
    """cos(omega t + 0.3 j) on n_space rows, sampled so one period is period_samples long."""
    dt = 2 * np.pi / (omega * period_samples)
    time = Grid1D.arange(n_time, dt)
    space = Grid1D.arange(n_space, 1.0)
    values = np.cos(omega * time.points[None, :] + 0.3 * np.arange(n_space)[:, None])
    return SnapshotMatrix(values, space, time)


def pair_model_data(eigenvalues, amplitudes, n_space=20, n_time=200, t_max=10.0, seed=3):
    """Real data generated exactly from conjugate pairs with unit-norm complex modes."""
    rng = np.random.default_rng(seed)
    time = Grid1D.linspace(0.0, t_max, n_time)
    space = Grid1D.arange(n_space, 1.0)
    modes = []
    values = np.zeros((n_space, n_time))
    for lam, b in zip(eigenvalues, amplitudes):
        phi = rng.standard_normal(n_space) + 1j * rng.standard_normal(n_space)
        phi /= np.linalg.norm(phi)
        modes.append(phi)
        values += 2 * b * np.real(phi[:, None] * np.exp(lam * time.points)[None, :])
    return SnapshotMatrix(values, space, time), modes


@pytest.fixture(scope="session")
def uniscale():
    return toy_models.gen_uniscale()


@pytest.fixture(scope="session")
def multiscale():
    return toy_models.gen_multiscale(seed=0)


@pytest.fixture
def wave():
    return travelling_wave()
