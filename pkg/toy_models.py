#!/usr/bin/env python3
# Toy data generators
# Uniscale sech/tanh model and the multi-scale FitzHugh-Nagumo + Duffing +
# transient wave packet model, both fully deterministic.

import logging
from dataclasses import dataclass

import numpy as np

from snapshots import (Grid1D, InvalidArgumentError, NumericalBlowupError,
                       SnapshotMatrix)

logger = logging.getLogger("toy_models")

UNISCALE_SHAPE = (128, 256)
MULTISCALE_SPACE = 40
MULTISCALE_NT = 1280
MULTISCALE_X_MAX = 40.0
MULTISCALE_T_MAX = 64.0
STACK_REPEATS = 10

TAU1 = 2.0
TAU2 = 0.2
FHN_INITIAL = (-1.0, 1.0)
DUFFING_INITIAL = (1.0, 0.0)
DEFAULT_SUBSTEPS = 10


@dataclass(frozen=True)
class UniscaleTruth:
    f1: np.ndarray
    f2: np.ndarray
    fhat1: np.ndarray
    fhat2: np.ndarray
    total: np.ndarray


@dataclass(frozen=True)
class MultiscaleTruth:
    x_slow: np.ndarray
    x_fast: np.ndarray
    x_tran: np.ndarray
    x_total: np.ndarray
    mixing: np.ndarray
    tau1: float
    tau2: float
    seed: int

    def components(self):
        return {"slow": self.x_slow, "fast": self.x_fast, "transient": self.x_tran}


def _sech(x):
    return 1.0 / np.cosh(x)


def gen_uniscale(nx=UNISCALE_SHAPE[0], nt=UNISCALE_SHAPE[1]):
    """
    Sum of two travelling sech/tanh patterns on x in [-5, 5], t in [0, 4 pi].
    f1 has a slow spatial phase drift, f2 a sign flip at x = 0 from tanh.
    """
    if nx < 16 or nt < 32:
        raise InvalidArgumentError(f"uniscale grid too small: nx={nx} (>= 16), nt={nt} (>= 32)")
    space = Grid1D.linspace(-5.0, 5.0, nx)
    time = Grid1D.linspace(0.0, 4 * np.pi, nt)
    x = space.points[:, None]
    t = time.points[None, :]

    fhat1 = np.abs(_sech(space.points + 3))
    fhat2 = np.abs(2 * _sech(space.points) * np.tanh(space.points))
    f1 = _sech(x + 3) * np.cos(2.3 * t + x / 10)
    f2 = 2 * _sech(x) * np.tanh(x) * np.sin(2.8 * t + 2.5 * x)
    total = f1 + f2

    truth = UniscaleTruth(f1=f1, f2=f2, fhat1=fhat1, fhat2=fhat2, total=total)
    return SnapshotMatrix(total, space, time), truth


def _rk4(rhs, y0, t_grid, substeps, label):
    """Classical RK4 at spacing/substeps, sampled on every grid point."""
    if substeps < 1:
        raise InvalidArgumentError(f"substeps must be >= 1, got {substeps}")
    h = t_grid.spacing / substeps
    out = np.empty((len(y0), len(t_grid)))
    y = np.array(y0, dtype=float)
    out[:, 0] = y
    for k in range(1, len(t_grid)):
        for _ in range(substeps):
            k1 = rhs(y)
            k2 = rhs(y + 0.5 * h * k1)
            k3 = rhs(y + 0.5 * h * k2)
            k4 = rhs(y + h * k3)
            y = y + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        if not np.all(np.isfinite(y)):
            raise NumericalBlowupError(f"{label} integration diverged at t={t_grid.points[k]:.6g}")
        out[:, k] = y
    return out


def gen_fitzhugh_nagumo(tau1=TAU1, t_grid=None, v0=FHN_INITIAL[0], w0=FHN_INITIAL[1],
                        substeps=DEFAULT_SUBSTEPS):
    """FitzHugh-Nagumo [v, w] trajectory (2 x n_t), the slow process."""
    if not tau1 > 0:
        raise InvalidArgumentError(f"tau1 must be positive, got {tau1}")
    if t_grid is None:
        t_grid = Grid1D.linspace(0.0, MULTISCALE_T_MAX, MULTISCALE_NT)

    def rhs(y):
        v, w = y
        return np.array([v - v ** 3 / 3 - w + 0.65, (v + 0.7 - 0.8 * w) / tau1])

    return _rk4(rhs, (v0, w0), t_grid, substeps, "FitzHugh-Nagumo")


def gen_duffing(tau2=TAU2, t_grid=None, p0=DUFFING_INITIAL[0], q0=DUFFING_INITIAL[1],
                substeps=DEFAULT_SUBSTEPS):
    """Unforced Duffing [p, q] trajectory (2 x n_t), the fast process."""
    if not tau2 > 0:
        raise InvalidArgumentError(f"tau2 must be positive, got {tau2}")
    if t_grid is None:
        t_grid = Grid1D.linspace(0.0, MULTISCALE_T_MAX, MULTISCALE_NT)

    def rhs(y):
        p, q = y
        return np.array([q, -(p + p ** 3) / tau2])

    return _rk4(rhs, (p0, q0), t_grid, substeps, "Duffing")


def oscillator_energy(trajectory, tau2=TAU2):
    """Conserved Duffing energy tau2 q^2/2 + p^2/2 + p^4/4 along a trajectory."""
    p, q = trajectory
    return tau2 * q ** 2 / 2 + p ** 2 / 2 + p ** 4 / 4


def fitzhugh_fixed_point():
    """Real equilibrium of the FitzHugh-Nagumo system (independent of tau1)."""
    # w = (v + 0.7)/0.8 reduces the system to v^3 + 0.75 v + 0.675 = 0
    roots = np.roots([1.0, 0.0, 0.75, 0.675])
    v = float(np.real(roots[np.argmin(np.abs(np.imag(roots)))]))
    return v, (v + 0.7) / 0.8


def transient_envelopes(x_grid, t_grid):
    """Spatial Gaussian sigma_x (n_x x n_t) and temporal lobes sigma_t (n_t)."""
    x0 = float(x_grid.points.max())
    period = t_grid.length
    x = x_grid.points[:, None]
    t = t_grid.points[None, :]
    sigma_x = np.exp(-((x - x0 * t / period) ** 2) / (0.2 * x0) ** 2)
    sigma_t = np.abs(np.sin(2 * np.pi * t_grid.points / period))
    return sigma_x, sigma_t


def gen_transient(x_grid, t_grid):
    """Translating high-frequency wave packet with two temporal lobes."""
    if len(x_grid) == 0 or len(t_grid) == 0:
        raise InvalidArgumentError("transient needs nonempty grids")
    sigma_x, sigma_t = transient_envelopes(x_grid, t_grid)
    x = x_grid.points[:, None]
    t = t_grid.points[None, :]
    return 2 * np.sin(10 * t + x / (2 * np.pi)) * sigma_x * sigma_t[None, :]


def random_orthogonal(n, seed):
    """Seeded orthogonal matrix: QR of a Gaussian matrix, R diagonal made positive."""
    rng = np.random.default_rng(seed)
    q, r = np.linalg.qr(rng.standard_normal((n, n)))
    return q * np.sign(np.diag(r))[None, :]


def gen_multiscale(seed=0, nt=MULTISCALE_NT, tau1=TAU1, tau2=TAU2,
                   fhn_initial=FHN_INITIAL, duffing_initial=DUFFING_INITIAL,
                   substeps=DEFAULT_SUBSTEPS):
    """
    Mixed FitzHugh-Nagumo (slow) and Duffing (fast) stacks plus the transient.

    Each oscillator state is stacked ten times (20 rows each), the 40-row stack
    is mixed by a seeded orthogonal matrix and the wave packet is added on
    x = 0..40, t = 0..64.
    """
    if nt < 256:
        raise InvalidArgumentError(f"multiscale needs nt >= 256, got {nt}")
    space = Grid1D.linspace(0.0, MULTISCALE_X_MAX, MULTISCALE_SPACE)
    time = Grid1D.linspace(0.0, MULTISCALE_T_MAX, nt)

    slow = gen_fitzhugh_nagumo(tau1, time, *fhn_initial, substeps=substeps)
    fast = gen_duffing(tau2, time, *duffing_initial, substeps=substeps)

    half = STACK_REPEATS * 2
    slow_stack = np.zeros((MULTISCALE_SPACE, nt))
    fast_stack = np.zeros((MULTISCALE_SPACE, nt))
    slow_stack[:half] = np.tile(slow, (STACK_REPEATS, 1))
    fast_stack[half:] = np.tile(fast, (STACK_REPEATS, 1))

    mixing = random_orthogonal(MULTISCALE_SPACE, seed)
    x_slow = mixing @ slow_stack
    x_fast = mixing @ fast_stack
    x_tran = gen_transient(space, time)
    x_total = x_slow + x_fast + x_tran

    logger.debug(f"Generated multiscale data seed={seed} shape={x_total.shape}")
    truth = MultiscaleTruth(x_slow=x_slow, x_fast=x_fast, x_tran=x_tran, x_total=x_total,
                            mixing=mixing, tau1=tau1, tau2=tau2, seed=int(seed))
    return SnapshotMatrix(x_total, space, time), truth
