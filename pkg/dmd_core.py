#!/usr/bin/env python3
# DMD model fitting
# Exact DMD, amplitude fitting, conjugate-pair enforcement, normalization,
# variable-projection refinement and time-delay embedding.

import logging
import warnings
from dataclasses import dataclass, replace

import numpy as np
import scipy.linalg
from scipy.optimize import least_squares

from snapshots import (DegenerateModeError, Grid1D, IllConditionedWarning,
                       InvalidArgumentError, InvalidStateError, PairingError,
                       RankDeficiencyError, SnapshotMatrix, as_points,
                       relative_error)

logger = logging.getLogger("dmd_core")

DEFAULT_PAIR_TOL = 1e-6
DEFAULT_DC_TOL = 1e-8
RANK_TOL = 1e-12
COND_LIMIT = 1e12
DEFAULT_MAX_ITER = 50
DEFAULT_LAMBDA_TOL = 1e-10


@dataclass(frozen=True)
class DmdModel:
    """
    x(t) ~ sum_j modes[:, j] * exp(eigenvalues[j] * t) * amplitudes[j].

    Eigenvalues are continuous-time (mu + i omega, units 1/time).
    """

    modes: np.ndarray
    eigenvalues: np.ndarray
    amplitudes: np.ndarray
    dt: float
    ill_conditioned: bool = False

    def __post_init__(self):
        modes = np.array(self.modes, dtype=complex)
        if modes.ndim == 1:
            modes = modes[:, None]
        eigs = np.array(self.eigenvalues, dtype=complex).reshape(-1)
        amps = np.array(self.amplitudes, dtype=complex).reshape(-1)
        if modes.ndim != 2 or modes.shape[1] != eigs.size or amps.size != eigs.size:
            raise InvalidArgumentError(
                f"inconsistent model shapes: modes {modes.shape}, "
                f"{eigs.size} eigenvalues, {amps.size} amplitudes")
        for name, arr in (("modes", modes), ("eigenvalues", eigs), ("amplitudes", amps)):
            if not np.all(np.isfinite(arr)):
                raise InvalidArgumentError(f"model {name} contain non-finite entries")
        if not self.dt > 0:
            raise InvalidArgumentError(f"dt must be positive, got {self.dt}")
        for arr in (modes, eigs, amps):
            arr.setflags(write=False)
        object.__setattr__(self, "modes", modes)
        object.__setattr__(self, "eigenvalues", eigs)
        object.__setattr__(self, "amplitudes", amps)
        object.__setattr__(self, "dt", float(self.dt))

    @property
    def rank(self):
        return self.eigenvalues.size

    @property
    def n_space(self):
        return self.modes.shape[0]

    @property
    def mu(self):
        return self.eigenvalues.real

    @property
    def omega(self):
        return self.eigenvalues.imag


@dataclass(frozen=True)
class PairedModel:
    """A DmdModel whose ranks are grouped into conjugate pairs and DC modes."""

    pairs: tuple
    dc_modes: tuple
    model: DmdModel
    unpaired: tuple = ()
    converged: bool = True

    def __post_init__(self):
        pairs = tuple((int(a), int(b)) for a, b in self.pairs)
        dc = tuple(int(i) for i in self.dc_modes)
        unpaired = tuple(int(i) for i in self.unpaired)
        seen = [i for ab in pairs for i in ab] + list(dc) + list(unpaired)
        if sorted(seen) != list(range(self.model.rank)):
            raise InvalidArgumentError(
                f"pairs/dc/unpaired indices {sorted(seen)} do not cover rank {self.model.rank} exactly once")
        object.__setattr__(self, "pairs", pairs)
        object.__setattr__(self, "dc_modes", dc)
        object.__setattr__(self, "unpaired", unpaired)

    @property
    def is_strict(self):
        return not self.unpaired

    def with_model(self, model, **changes):
        return replace(self, model=model, **changes)


def _exponentials(eigenvalues, t):
    return np.exp(np.outer(eigenvalues, t))


def _solve_amplitudes(modes, eigenvalues, values, t):
    """Least-squares b over all snapshots; returns (b, condition number)."""
    r = eigenvalues.size
    if r == 0:
        return np.zeros(0, dtype=complex), 1.0
    dynamics = _exponentials(eigenvalues, t)
    # column j is vec(phi_j outer T_j), row-major to match values.reshape(-1)
    design = np.einsum("ij,jk->ikj", modes, dynamics).reshape(-1, r)
    b, _, _, sv = scipy.linalg.lstsq(design, np.asarray(values, dtype=complex).reshape(-1))
    cond = float(sv[0] / sv[-1]) if sv[-1] > 0 else np.inf
    return b, cond


def compute_amplitudes(model, X):
    """Amplitudes b minimizing ||X - Phi diag(b) T||_F over every snapshot of X."""
    if model.n_space != X.n_space:
        raise InvalidArgumentError(f"model has {model.n_space} rows, data has {X.n_space}")
    b, cond = _solve_amplitudes(model.modes, model.eigenvalues, X.values, X.time.points)
    if cond > COND_LIMIT:
        logger.warning(f"Amplitude system is ill-conditioned (cond={cond:.3g})")
        warnings.warn(f"amplitude system condition number {cond:.3g}", IllConditionedWarning)
    return b


def exact_dmd(X, r):
    """Exact DMD of rank r with continuous-time eigenvalues ln(Lambda)/dt."""
    values = X.values
    n_space, n_time = values.shape
    max_rank = min(n_space, n_time - 1)
    if not 1 <= r <= max_rank:
        raise InvalidArgumentError(f"rank must be in [1, {max_rank}], got {r}")

    x1 = values[:, :-1]
    x2 = values[:, 1:]
    u, s, vh = scipy.linalg.svd(x1, full_matrices=False)
    if s[0] == 0 or s[r - 1] < RANK_TOL * s[0]:
        raise RankDeficiencyError(
            f"data is rank-deficient for r={r}: sigma_r/sigma_1 = {s[r - 1] / s[0] if s[0] else 0:.3g}")
    u_r = u[:, :r]
    s_r = s[:r]
    v_r = vh[:r].conj().T

    projected = x2 @ v_r / s_r
    atilde = u_r.conj().T @ projected
    discrete, w = scipy.linalg.eig(atilde)
    if np.any(discrete == 0):
        raise RankDeficiencyError("zero discrete eigenvalue has no continuous-time logarithm")
    modes = projected @ w
    eigenvalues = np.log(discrete.astype(complex)) / X.dt

    b, cond = _solve_amplitudes(modes, eigenvalues, values, X.time.points)
    ill = cond > COND_LIMIT
    if ill:
        logger.warning(f"Amplitude system is ill-conditioned (cond={cond:.3g})")
        warnings.warn(f"amplitude system condition number {cond:.3g}", IllConditionedWarning)
    logger.debug(f"exact_dmd rank {r}: eigenvalues {np.round(eigenvalues, 6)}")
    return DmdModel(modes, eigenvalues, b, X.dt, ill_conditioned=ill)


def enforce_conjugate_pairs(model, tol=DEFAULT_PAIR_TOL, dc_tol=DEFAULT_DC_TOL, strict=True):
    """
    Group ranks into exact conjugate pairs and DC modes.

    Each unmatched mode with omega > 0 (lowest index first) takes the unmatched
    partner j minimizing |lambda_i - conj(lambda_j)|, accepted when that distance
    is <= tol * |lambda_i|. Accepted pairs are replaced by their conjugate mean.
    """
    if not tol > 0:
        raise InvalidArgumentError(f"pairing tolerance must be positive, got {tol}")
    lam = model.eigenvalues.copy()
    modes = model.modes.copy()
    amps = model.amplitudes.copy()
    r = lam.size
    if r == 0:
        return PairedModel((), (), model)

    dc_limit = dc_tol * np.max(np.abs(lam))
    dc = [i for i in range(r) if abs(lam[i].imag) <= dc_limit]
    oscillatory = [i for i in range(r) if abs(lam[i].imag) > dc_limit]

    matched = set()
    pairs = []
    for i in oscillatory:
        if i in matched or lam[i].imag <= 0:
            continue
        candidates = [j for j in oscillatory if j != i and j not in matched]
        if not candidates:
            continue
        dist = np.abs(lam[i] - np.conj(lam[candidates]))
        k = int(np.argmin(dist))
        if dist[k] > tol * abs(lam[i]):
            continue
        j = candidates[k]
        lam_a = (lam[i] + np.conj(lam[j])) / 2
        phi_a = (modes[:, i] + np.conj(modes[:, j])) / 2
        b_a = (amps[i] + np.conj(amps[j])) / 2
        lam[i], lam[j] = lam_a, np.conj(lam_a)
        modes[:, i], modes[:, j] = phi_a, np.conj(phi_a)
        amps[i], amps[j] = b_a, np.conj(b_a)
        matched.update((i, j))
        pairs.append((i, j))

    leftover = [i for i in oscillatory if i not in matched]
    if leftover:
        if strict:
            raise PairingError(leftover)
        logger.warning(f"Keeping {len(leftover)} unpaired oscillatory modes: {leftover}")

    paired = DmdModel(modes, lam, amps, model.dt, model.ill_conditioned)
    return PairedModel(tuple(pairs), tuple(dc), paired, unpaired=tuple(leftover))


def drop_unpaired(pm):
    """Strict paired model without the unpaired ranks; indices are renumbered."""
    if not pm.unpaired:
        return pm
    gone = set(pm.unpaired)
    keep = [i for i in range(pm.model.rank) if i not in gone]
    new = {old: k for k, old in enumerate(keep)}
    model = pm.model
    trimmed = DmdModel(model.modes[:, keep], model.eigenvalues[keep], model.amplitudes[keep],
                       model.dt, model.ill_conditioned)
    return PairedModel(tuple((new[a], new[b]) for a, b in pm.pairs),
                       tuple(new[i] for i in pm.dc_modes), trimmed, converged=pm.converged)


def normalize_modes(pm):
    """Unit-norm modes with real, nonnegative amplitudes; reconstruction unchanged."""
    modes = pm.model.modes.copy()
    amps = pm.model.amplitudes.copy()
    if pm.model.rank == 0:
        return pm
    norms = np.linalg.norm(modes, axis=0)
    zero = np.flatnonzero(norms == 0)
    if zero.size:
        raise DegenerateModeError(f"modes {zero.tolist()} have zero norm")
    modes = modes * np.exp(1j * np.angle(amps))[None, :] / norms[None, :]
    amps = (np.abs(amps) * norms).astype(complex)
    for a, b in pm.pairs:
        modes[:, b] = np.conj(modes[:, a])
        amps[b] = amps[a]
    return pm.with_model(replace(pm.model, modes=modes, amplitudes=amps))


def is_normalized(pm, tol=1e-12):
    amps = pm.model.amplitudes
    return bool(np.all(np.abs(amps.imag) <= tol * np.maximum(np.abs(amps), 1.0)) and np.all(amps.real >= 0))


def reconstruct(model, t):
    """Complex reconstruction sum_j phi_j exp(lambda_j t) b_j on the times t."""
    t = as_points(t)
    if model.rank == 0:
        return np.zeros((model.n_space, t.size), dtype=complex)
    return (model.modes * model.amplitudes[None, :]) @ _exponentials(model.eigenvalues, t)


def imaginary_ratio(model, t):
    """max|Im| / max|Re| of the complex reconstruction."""
    recon = reconstruct(model, t)
    real_peak = np.max(np.abs(recon.real)) if recon.size else 0.0
    imag_peak = np.max(np.abs(recon.imag)) if recon.size else 0.0
    if real_peak == 0:
        return float(imag_peak)
    return float(imag_peak / real_peak)


class _PairParameters:
    """Maps (mu, omega) per pair and mu per DC mode onto a full eigenvalue vector."""

    def __init__(self, pm):
        self.pairs = pm.pairs
        self.dc = pm.dc_modes
        self.rank = pm.model.rank

    def pack(self, eigenvalues):
        params = []
        for a, _ in self.pairs:
            params.extend([eigenvalues[a].real, eigenvalues[a].imag])
        params.extend(eigenvalues[i].real for i in self.dc)
        return np.array(params, dtype=float)

    def unpack(self, params):
        lam = np.zeros(self.rank, dtype=complex)
        for k, (a, b) in enumerate(self.pairs):
            lam[a] = complex(params[2 * k], params[2 * k + 1])
            lam[b] = np.conj(lam[a])
        offset = 2 * len(self.pairs)
        for k, i in enumerate(self.dc):
            lam[i] = params[offset + k]
        return lam


def _projected_coefficients(eigenvalues, values, t):
    """Best n x r coefficient matrix (Phi diag b) for fixed eigenvalues."""
    dynamics = _exponentials(eigenvalues, t)
    if not np.all(np.isfinite(dynamics)):
        return None, dynamics
    coef = scipy.linalg.lstsq(dynamics.T, values.T.astype(complex))[0]
    return coef.T, dynamics


def varpro_refine(pm, X, max_iter=DEFAULT_MAX_ITER, lambda_tol=DEFAULT_LAMBDA_TOL):
    """
    Levenberg-Marquardt refinement of the eigenvalues with modes and amplitudes
    re-solved linearly at every step. Each conjugate pair has two free real
    parameters and each DC mode one, so the output keeps exact conjugate pairs.
    """
    if pm.unpaired:
        raise InvalidStateError(f"varpro needs a strict paired model, unpaired: {list(pm.unpaired)}")
    if pm.model.n_space != X.n_space:
        raise InvalidArgumentError(f"model has {pm.model.n_space} rows, data has {X.n_space}")
    if pm.model.rank == 0:
        return pm

    values = X.values
    t = X.time.points
    mapping = _PairParameters(pm)
    params0 = mapping.pack(pm.model.eigenvalues)
    penalty = np.concatenate([values.ravel(), np.zeros(values.size)]) * 1e3

    def residual(params):
        coef, dynamics = _projected_coefficients(mapping.unpack(params), values, t)
        if coef is None:
            return penalty
        resid = values - coef @ dynamics
        return np.concatenate([resid.real.ravel(), resid.imag.ravel()])

    fit = least_squares(residual, params0, method="lm", xtol=lambda_tol, ftol=lambda_tol,
                        max_nfev=max_iter * (params0.size + 1))
    converged = bool(fit.status > 0)
    if not converged:
        logger.warning(f"varpro stopped without converging: {fit.message}")

    lam = mapping.unpack(fit.x)
    coef, _ = _projected_coefficients(lam, values, t)
    if coef is None:
        logger.warning("varpro produced overflowing dynamics; keeping input eigenvalues")
        return replace(pm, converged=False)
    norms = np.linalg.norm(coef, axis=0)
    modes = np.where(norms > 0, coef / np.where(norms > 0, norms, 1.0), coef)
    amps = norms.astype(complex)
    for a, b in pm.pairs:
        modes[:, b] = np.conj(modes[:, a])
        amps[b] = amps[a]
    refined = normalize_modes(PairedModel(pm.pairs, pm.dc_modes,
                                          DmdModel(modes, lam, amps, pm.model.dt),
                                          converged=converged))

    before = relative_error(reconstruct(pm.model, t).real, values)
    after = relative_error(reconstruct(refined.model, t).real, values)
    if after > before * (1 + 1e-9) + 1e-15:
        logger.warning(f"varpro residual rose ({before:.3g} -> {after:.3g}); returning input model")
        return replace(pm, converged=False)
    logger.info(f"varpro refined residual {before:.3g} -> {after:.3g} in {fit.nfev} evaluations")
    return refined


def time_delay_embed(X, d):
    """Stack d time-shifted copies of X; row block k holds X shifted by k samples."""
    if d < 1 or d >= X.n_time:
        raise InvalidArgumentError(f"delays must satisfy 1 <= d < n_time={X.n_time}, got {d}")
    if d == 1:
        return X
    m = X.n_time - d + 1
    stacked = np.vstack([X.values[:, k:k + m] for k in range(d)])
    return SnapshotMatrix(stacked, Grid1D.arange(stacked.shape[0], 1.0), X.time.window(0, m))


def extract_first_delay(model, n_space):
    """Keep the first n_space rows of every mode (the undelayed block)."""
    if n_space < 1 or model.n_space % n_space:
        raise InvalidArgumentError(f"mode length {model.n_space} is not a multiple of {n_space}")
    if model.n_space == n_space:
        return model
    return replace(model, modes=model.modes[:n_space])


@dataclass(frozen=True)
class FitResult:
    paired: PairedModel
    embedded: PairedModel
    delays: int
    relative_error: float
    imaginary_ratio: float


def fit_pipeline(X, rank, delays=1, refine="none", pair_tol=DEFAULT_PAIR_TOL,
                 dc_tol=DEFAULT_DC_TOL, strict=True, max_iter=DEFAULT_MAX_ITER,
                 lambda_tol=DEFAULT_LAMBDA_TOL):
    """embed -> exact DMD -> pairs -> normalize -> optional varpro -> first delay."""
    if refine not in ("none", "varpro"):
        raise InvalidArgumentError(f"unknown refinement {refine!r}")
    embedded_data = time_delay_embed(X, delays)
    model = exact_dmd(embedded_data, rank)
    embedded = normalize_modes(enforce_conjugate_pairs(model, pair_tol, dc_tol, strict=strict))
    if refine == "varpro":
        if embedded.unpaired:
            logger.warning("Skipping varpro: model has unpaired modes")
        else:
            embedded = varpro_refine(embedded, embedded_data, max_iter, lambda_tol)

    first = extract_first_delay(embedded.model, X.n_space)
    paired = normalize_modes(embedded.with_model(first))
    err = relative_error(reconstruct(paired.model, X.time).real, X.values)
    ratio = imaginary_ratio(paired.model, X.time)
    logger.info(f"Fitted rank {rank} (delays={delays}, refine={refine}): relative error {err:.3g}")
    return FitResult(paired, embedded, delays, err, ratio)
