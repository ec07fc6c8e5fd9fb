#!/usr/bin/env python3
# Phasor notation of a conjugate-pair DMD model:
# x_pair(x, t) = 2 b S(x) cos(omega t + varphi(x)) exp(mu t)

import logging
from dataclasses import dataclass

import numpy as np

from dmd_core import is_normalized
from snapshots import InvalidArgumentError, InvalidStateError, as_points

logger = logging.getLogger("phasor")


@dataclass(frozen=True)
class PhasorMode:
    """One conjugate pair (or DC mode when omega == 0) in phasor form."""

    pair_id: int
    S: np.ndarray
    varphi: np.ndarray
    omega: float
    mu: float
    b: float
    undefined: np.ndarray = None

    def __post_init__(self):
        S = np.array(self.S, dtype=float)
        varphi = np.array(self.varphi, dtype=float)
        if S.shape != varphi.shape or S.ndim != 1:
            raise InvalidArgumentError(f"S {S.shape} and varphi {varphi.shape} must be equal-length vectors")
        if np.any(S < 0):
            raise InvalidArgumentError("spatial pattern must be nonnegative")
        if self.b < 0:
            raise InvalidArgumentError(f"amplitude must be nonnegative, got {self.b}")
        undefined = S == 0 if self.undefined is None else np.array(self.undefined, dtype=bool)
        for arr in (S, varphi, undefined):
            arr.setflags(write=False)
        object.__setattr__(self, "S", S)
        object.__setattr__(self, "varphi", varphi)
        object.__setattr__(self, "undefined", undefined)
        object.__setattr__(self, "omega", float(self.omega))
        object.__setattr__(self, "mu", float(self.mu))
        object.__setattr__(self, "b", float(self.b))

    @property
    def is_dc(self):
        return self.omega == 0

    def complex_mode(self):
        return self.S * np.exp(1j * self.varphi)


def phase_shift(phi):
    """Spatially varying phase arctan2(Im phi, Re phi), mapped into (-pi, pi]."""
    phi = np.asarray(phi, dtype=complex)
    varphi = np.arctan2(phi.imag, phi.real)
    return np.where(varphi <= -np.pi, varphi + 2 * np.pi, varphi)


def undefined_phase(phi):
    """Locations where phi = 0 and the phase is meaningless."""
    return np.asarray(phi, dtype=complex) == 0


def spatial_pattern(phi):
    """Nonnegative spatial pattern |phi|."""
    phi = np.asarray(phi, dtype=complex)
    return np.sqrt(phi.real ** 2 + phi.imag ** 2)


def classic_pattern(phi):
    """The traditional Re(phi) reading of a DMD mode, kept for comparison."""
    return np.asarray(phi, dtype=complex).real


def waveform(omega, varphi, t):
    """Real spatiotemporal waveform cos(omega t + varphi(x)), shape (n_space, n_time)."""
    t = as_points(t)
    return np.cos(omega * t[None, :] + np.asarray(varphi, dtype=float)[:, None])


def _mode_from(pm, index, pair_id):
    model = pm.model
    phi = model.modes[:, index]
    S = spatial_pattern(phi)
    undefined = undefined_phase(phi)
    if np.any(undefined):
        logger.warning(f"Mode {pair_id}: phase undefined at {int(undefined.sum())} locations (S = 0)")
    return PhasorMode(pair_id=pair_id, S=S, varphi=phase_shift(phi),
                      omega=model.eigenvalues[index].imag, mu=model.eigenvalues[index].real,
                      b=model.amplitudes[index].real, undefined=undefined)


def phasor_decompose(pm):
    """
    Phasor modes of a normalized paired model.

    Returns (pair_modes, dc_modes). Pairs are read from their omega > 0 member;
    DC modes carry omega = 0.
    """
    if not is_normalized(pm):
        raise InvalidStateError("phasor decomposition needs normalized amplitudes (real, >= 0)")
    if pm.unpaired:
        logger.warning(f"Ignoring unpaired modes {list(pm.unpaired)}: no phasor form")
    modes = [_mode_from(pm, a, k) for k, (a, _) in enumerate(pm.pairs)]
    dc = []
    for k, i in enumerate(pm.dc_modes):
        mode = _mode_from(pm, i, k)
        dc.append(PhasorMode(pair_id=k, S=mode.S, varphi=mode.varphi, omega=0.0, mu=mode.mu,
                             b=mode.b, undefined=mode.undefined))
    return modes, dc


def phasor_reconstruct_pair(mode, t):
    """2 b S cos(omega t + varphi) exp(mu t); strictly real."""
    t = as_points(t)
    envelope = 2 * mode.b * np.exp(mode.mu * t)
    return mode.S[:, None] * waveform(mode.omega, mode.varphi, t) * envelope[None, :]


def dc_reconstruct(mode, t):
    """b S cos(varphi) exp(mu t) for an unpaired DC mode."""
    t = as_points(t)
    return (mode.b * mode.S * np.cos(mode.varphi))[:, None] * np.exp(mode.mu * t)[None, :]


def phasor_reconstruct(modes, dc, t, n_space=None):
    """Sum of pair reconstructions plus DC contributions."""
    t = as_points(t)
    lengths = {m.S.size for m in list(modes) + list(dc)}
    if n_space is not None:
        lengths.add(n_space)
    if len(lengths) > 1:
        raise InvalidArgumentError(f"phasor modes have mismatched spatial lengths {sorted(lengths)}")
    if not lengths:
        return np.zeros((0, t.size))
    out = np.zeros((lengths.pop(), t.size))
    for mode in modes:
        out += phasor_reconstruct_pair(mode, t)
    for mode in dc:
        out += dc_reconstruct(mode, t)
    return out


def align_phase(varphi, reference, weights=None):
    """
    Constant gauge offset c minimizing the weighted phase mismatch
    varphi - (reference + c); returns (c, reference + c wrapped to (-pi, pi]).
    """
    varphi = np.asarray(varphi, dtype=float)
    reference = np.asarray(reference, dtype=float)
    weights = np.ones_like(varphi) if weights is None else np.asarray(weights, dtype=float)
    offset = float(np.angle(np.sum(weights * np.exp(1j * (varphi - reference)))))
    return offset, phase_shift(np.exp(1j * (reference + offset)))
