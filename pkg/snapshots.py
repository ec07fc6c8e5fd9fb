#!/usr/bin/env python3
# Snapshot data containers, error types and small shared helpers
# used by every phasor-DMD module.

import logging
import os
from dataclasses import dataclass

import numpy as np

logger = logging.getLogger("snapshots")

THREADS_ENV = "PHASORDMD_THREADS"


class PhasorDmdError(Exception):
    """Base class for every error raised by the phasor-DMD modules."""


class InvalidArgumentError(PhasorDmdError, ValueError):
    pass


class RankDeficiencyError(PhasorDmdError, RuntimeError):
    pass


class NumericalBlowupError(PhasorDmdError, RuntimeError):
    pass


class PairingError(PhasorDmdError, RuntimeError):
    """Oscillatory modes without a conjugate partner within tolerance."""

    def __init__(self, indices, message=None):
        self.indices = tuple(int(i) for i in indices)
        super().__init__(message or f"Unmatched oscillatory modes: {list(self.indices)}")


class DegenerateModeError(PhasorDmdError, RuntimeError):
    pass


class InvalidStateError(PhasorDmdError, RuntimeError):
    pass


class CoverageError(PhasorDmdError, RuntimeError):
    pass


class LevelFailureError(PhasorDmdError, RuntimeError):
    pass


class FormatParseError(PhasorDmdError, ValueError):
    def __init__(self, line, message):
        self.line = line
        super().__init__(f"line {line}: {message}")


class IntegrityError(PhasorDmdError, ValueError):
    pass


class IllConditionedWarning(UserWarning):
    pass


class BandCountWarning(UserWarning):
    pass


@dataclass(frozen=True)
class Grid1D:
    """Uniformly spaced, strictly increasing coordinate vector."""

    points: np.ndarray
    spacing: float

    def __post_init__(self):
        pts = np.array(self.points, dtype=float)
        if pts.ndim != 1 or pts.size == 0:
            raise InvalidArgumentError("grid must be a nonempty 1-D vector")
        if not np.all(np.isfinite(pts)):
            raise InvalidArgumentError("grid contains non-finite points")
        if not self.spacing > 0:
            raise InvalidArgumentError(f"grid spacing must be positive, got {self.spacing}")
        if pts.size > 1:
            steps = np.diff(pts)
            if np.any(steps <= 0):
                raise InvalidArgumentError("grid must be strictly increasing")
            if np.max(np.abs(steps - self.spacing)) > 1e-12 * max(abs(self.spacing), np.max(np.abs(pts))):
                raise InvalidArgumentError("grid spacing is not uniform")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "spacing", float(self.spacing))

    @classmethod
    def linspace(cls, start, stop, n):
        if n < 2:
            raise InvalidArgumentError(f"need at least 2 points, got {n}")
        pts = np.linspace(start, stop, n)
        return cls(pts, (stop - start) / (n - 1))

    @classmethod
    def from_points(cls, points):
        """Build a grid from sampled coordinates, inferring the spacing."""
        pts = np.asarray(points, dtype=float)
        if pts.size < 2:
            return cls(pts, 1.0)
        return cls(pts, (pts[-1] - pts[0]) / (pts.size - 1))

    @classmethod
    def arange(cls, n, spacing, start=0.0):
        return cls(start + spacing * np.arange(n), spacing)

    def __len__(self):
        return self.points.size

    @property
    def length(self):
        return float(self.points[-1] - self.points[0])

    def window(self, start, stop):
        """Sub-grid of samples [start, stop)."""
        return Grid1D(self.points[start:stop], self.spacing)


@dataclass(frozen=True)
class SnapshotMatrix:
    """Real space x time data with its coordinate grids."""

    values: np.ndarray
    space: Grid1D
    time: Grid1D

    def __post_init__(self):
        vals = np.array(self.values, dtype=float)
        if vals.ndim != 2:
            raise InvalidArgumentError(f"snapshot matrix must be 2-D, got shape {vals.shape}")
        if vals.shape != (len(self.space), len(self.time)):
            raise InvalidArgumentError(
                f"values shape {vals.shape} does not match grids ({len(self.space)}, {len(self.time)})")
        if vals.shape[1] < 2:
            raise InvalidArgumentError("snapshot matrix needs at least 2 time samples")
        if not np.all(np.isfinite(vals)):
            raise InvalidArgumentError("snapshot matrix contains non-finite values")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @property
    def n_space(self):
        return self.values.shape[0]

    @property
    def n_time(self):
        return self.values.shape[1]

    @property
    def dt(self):
        return self.time.spacing

    def window(self, start, stop, local_time=True):
        """Columns [start, stop); with local_time the window clock starts at 0."""
        time = self.time.window(start, stop)
        if local_time:
            time = Grid1D(time.points - time.points[0], time.spacing)
        return SnapshotMatrix(self.values[:, start:stop], self.space, time)

    def with_values(self, values):
        return SnapshotMatrix(values, self.space, self.time)


def as_points(t):
    """Time coordinates from a Grid1D, a scalar or an array."""
    if isinstance(t, Grid1D):
        return t.points
    return np.atleast_1d(np.asarray(t, dtype=float))


def relative_error(estimate, truth):
    """Relative Frobenius error ||estimate - truth|| / ||truth||."""
    estimate = np.asarray(estimate)
    truth = np.asarray(truth)
    denom = np.linalg.norm(truth)
    if denom == 0:
        return float(np.linalg.norm(estimate))
    return float(np.linalg.norm(estimate - truth) / denom)


def max_workers():
    """Worker cap from PHASORDMD_THREADS (0 or unset means auto)."""
    raw = os.environ.get(THREADS_ENV, "0").strip() or "0"
    try:
        n = int(raw)
    except ValueError:
        logger.warning(f"Ignoring non-integer {THREADS_ENV}={raw!r}")
        n = 0
    if n <= 0:
        return min(32, (os.cpu_count() or 1) + 4)
    return n
