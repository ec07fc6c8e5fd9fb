#!/usr/bin/env python3
# Multi-resolution windowed DMD
# Sliding-window fits per level, low/high frequency separation, stitching of
# overlapping windows, global band assignment and the summed phasor terms
# (band amplitude, spatial pattern, waveform) of every band.

import concurrent.futures
import logging
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.signal import find_peaks
from scipy.signal.windows import hann
from scipy.stats import gaussian_kde
from sklearn.cluster import KMeans
from sklearn.metrics import silhouette_score

from dmd_core import (DEFAULT_DC_TOL, DEFAULT_PAIR_TOL, DmdModel, PairedModel,
                      drop_unpaired, enforce_conjugate_pairs, exact_dmd,
                      normalize_modes, varpro_refine)
from phasor import (PhasorMode, dc_reconstruct, phasor_decompose,
                    phasor_reconstruct_pair)
from snapshots import (BandCountWarning, CoverageError, InvalidArgumentError,
                       LevelFailureError, PhasorDmdError, as_points,
                       max_workers, relative_error)

logger = logging.getLogger("multires")

DEFAULT_WINDOWS = (60, 120, 480)
DEFAULT_STRIDE_FRAC = 0.1
DEFAULT_RANK = 6
MAX_FAILED_FRACTION = 0.25
MAX_AUTO_BANDS = 6
WINDOW_RANK_TOL = 1e-10
LOWFREQ = "lowfreq"
TAPERS = ("hann", "boxcar")
REFINEMENTS = ("none", "varpro")
DEFAULT_REFINE = "varpro"
BAND_BANDWIDTH = 0.1
BAND_PEAK_PROMINENCE = 0.25


@dataclass(frozen=True)
class LevelConfig:
    window_length: int
    stride: int
    rank: int
    freq_cut: float = None
    refine: str = "none"

    def __post_init__(self):
        if self.window_length < 2:
            raise InvalidArgumentError(f"window length must be >= 2, got {self.window_length}")
        if not 0 < self.stride <= self.window_length:
            raise InvalidArgumentError(
                f"stride must be in (0, {self.window_length}], got {self.stride}")
        if self.rank < 1:
            raise InvalidArgumentError(f"rank must be >= 1, got {self.rank}")
        if self.freq_cut is not None and self.freq_cut < 0:
            raise InvalidArgumentError(f"freq_cut must be >= 0, got {self.freq_cut}")
        if self.refine not in REFINEMENTS:
            raise InvalidArgumentError(f"unknown refinement {self.refine!r}; expected one of {REFINEMENTS}")

    @classmethod
    def from_fraction(cls, window_length, stride_frac=DEFAULT_STRIDE_FRAC, rank=DEFAULT_RANK, freq_cut=None,
                      refine=DEFAULT_REFINE):
        """Stride as a fraction of the window, rounded to the nearest sample (at least 1)."""
        if not 0 < stride_frac <= 1:
            raise InvalidArgumentError(f"stride fraction must be in (0, 1], got {stride_frac}")
        stride = max(1, int(round(stride_frac * window_length)))
        return cls(window_length, min(stride, window_length), rank, freq_cut, refine)

    def cut(self, dt):
        """Frequency separating unresolved (< cut) from resolved modes."""
        if self.freq_cut is not None:
            return float(self.freq_cut)
        return 2 * np.pi / (self.window_length * dt)


def default_levels(windows=DEFAULT_WINDOWS, stride_frac=DEFAULT_STRIDE_FRAC, rank=DEFAULT_RANK,
                   refine=DEFAULT_REFINE):
    return [LevelConfig.from_fraction(w, stride_frac, rank, refine=refine) for w in windows]


@dataclass(frozen=True)
class WindowFit:
    """One window of one level; paired is None when the fit failed."""

    index: int
    start: int
    stop: int
    mean: np.ndarray
    paired: PairedModel = None
    error: str = None

    @property
    def ok(self):
        return self.paired is not None


@dataclass(frozen=True)
class WindowedMode:
    """Pair j of window k at level l, with its time span and band label."""

    j: int
    k: int
    level: int
    phasor: PhasorMode
    window_span: tuple
    index_span: tuple
    band: object = None

    @property
    def triplet(self):
        return (self.j, self.k, self.level)


@dataclass
class LevelResult:
    config: LevelConfig
    fits: list
    modes: list
    lowfreq: np.ndarray

    @property
    def spans(self):
        return [(f.start, f.stop) for f in self.fits if f.ok]

    @property
    def n_failed(self):
        return sum(not f.ok for f in self.fits)


@dataclass
class MrDecomposition:
    space: object
    time: object
    levels: list
    lowfreq_residual: np.ndarray
    bands: dict = field(default_factory=dict)
    taper: str = "hann"

    @property
    def modes(self):
        return [m for level in self.levels for m in level.modes]

    @property
    def band_labels(self):
        return sorted(self.bands)

    def band(self, label):
        wanted = set(self.bands.get(label, ()))
        return [m for m in self.modes if m.triplet in wanted]

    def window_weights(self):
        """Normalized stitch weight of every fitted window, keyed by (level, k)."""
        weights = {}
        n_time = len(self.time)
        for level, result in enumerate(self.levels):
            fitted = [f for f in result.fits if f.ok]
            rows = stitch_weights([(f.start, f.stop) for f in fitted], n_time, self.taper)
            for fit, row in zip(fitted, rows):
                weights[(level, fit.index)] = row
        return weights


@dataclass(frozen=True)
class BandSummary:
    label: object
    beta: np.ndarray
    S_p: np.ndarray
    W_p: np.ndarray
    recon: np.ndarray

    @property
    def approx(self):
        """Pair approximation 2 beta S_p W_p of the band (NaN where beta = 0)."""
        return 2 * self.beta[None, :] * self.S_p * self.W_p


def sliding_windows(n_time, cfg):
    """[start, end) ranges at multiples of the stride, tail covered by a right-aligned window."""
    length = cfg.window_length
    if length > n_time:
        raise InvalidArgumentError(f"window length {length} exceeds series length {n_time}")
    starts = list(range(0, n_time - length + 1, cfg.stride))
    if starts[-1] + length < n_time:
        starts.append(n_time - length)
    return [(s, s + length) for s in starts]


def _taper(length, taper):
    if taper == "hann":
        # Hann without its zero end points, so every sample carries weight
        return hann(length + 2)[1:-1]
    if taper == "boxcar":
        return np.ones(length)
    raise InvalidArgumentError(f"unknown taper {taper!r}; expected one of {TAPERS}")


def stitch_weights(spans, n_time, taper="hann"):
    """(n_windows, n_time) taper weights renormalized to sum to 1 at every index."""
    raw = np.zeros((len(spans), n_time))
    for row, (start, stop) in zip(raw, spans):
        row[start:stop] = _taper(stop - start, taper)
    total = raw.sum(axis=0)
    uncovered = np.flatnonzero(total == 0)
    if uncovered.size:
        raise CoverageError(f"{uncovered.size} time indices not covered by any window "
                            f"(first: {int(uncovered[0])})")
    return raw / total[None, :]


def stitch(window_matrices, spans, taper="hann", n_time=None):
    """Blend overlapping window matrices into one series with normalized taper weights."""
    if n_time is None:
        n_time = max(stop for _, stop in spans)
    weights = stitch_weights(spans, n_time, taper)
    n_space = window_matrices[0].shape[0]
    out = np.zeros((n_space, n_time))
    for w, matrix, (start, stop) in zip(weights, window_matrices, spans):
        out[:, start:stop] += w[None, start:stop] * matrix
    return out


def _empty_model(n_space, dt):
    return PairedModel((), (), DmdModel(np.zeros((n_space, 0)), [], [], dt))


def _window_rank(values, rank, scale):
    sv = np.linalg.svd(values[:, :-1], compute_uv=False)
    if sv.size == 0 or sv[0] <= 1e-12 * scale:
        return 0
    return min(rank, int(np.sum(sv >= WINDOW_RANK_TOL * sv[0])))


def _fit_window(X, k, start, stop, cfg, pair_tol, dc_tol, refine):
    window = X.window(start, stop)
    mean = window.values.mean(axis=1)
    centered = window.with_values(window.values - mean[:, None])
    try:
        rank = _window_rank(centered.values, cfg.rank, max(np.linalg.norm(window.values), 1e-300))
        if rank == 0:
            return WindowFit(k, start, stop, mean, _empty_model(X.n_space, X.dt))
        model = exact_dmd(centered, rank)
        paired = enforce_conjugate_pairs(model, pair_tol, dc_tol, strict=False)
        if paired.unpaired:
            logger.debug(f"Window {k}: dropping unpaired modes {list(paired.unpaired)}")
        paired = normalize_modes(drop_unpaired(paired))
        if refine == "varpro":
            paired = varpro_refine(paired, centered)
        return WindowFit(k, start, stop, mean, paired)
    except (PhasorDmdError, np.linalg.LinAlgError, ValueError) as e:
        return WindowFit(k, start, stop, mean, None, str(e))


def fit_level(X, cfg, level=0, pair_tol=DEFAULT_PAIR_TOL, dc_tol=DEFAULT_DC_TOL, workers=None,
              refine=None):
    """
    Fit every sliding window of X: subtract the window mean, exact DMD at
    cfg.rank, conjugate pairs, normalization and, with refine="varpro"
    (default: cfg.refine), variable projection. Window clocks start at 0.
    """
    refine = cfg.refine if refine is None else refine
    if refine not in REFINEMENTS:
        raise InvalidArgumentError(f"unknown refinement {refine!r}; expected one of {REFINEMENTS}")
    windows = sliding_windows(X.n_time, cfg)
    with concurrent.futures.ThreadPoolExecutor(max_workers=workers or max_workers()) as executor:
        fits = list(executor.map(
            lambda item: _fit_window(X, item[0], item[1][0], item[1][1], cfg, pair_tol, dc_tol, refine),
            enumerate(windows)))

    failed = [f for f in fits if not f.ok]
    for f in failed:
        logger.warning(f"Level {level} window {f.index} [{f.start}, {f.stop}) skipped: {f.error}")
    logger.info(f"Level {level}: fitted {len(fits) - len(failed)}/{len(fits)} windows "
                f"(length {cfg.window_length}, stride {cfg.stride}, rank {cfg.rank}, refine {refine})")
    if len(failed) > MAX_FAILED_FRACTION * len(fits):
        raise LevelFailureError(f"level {level}: {len(failed)}/{len(fits)} window fits failed")
    return fits


def scale_separate(fits, cfg, X, level=0, taper="hann"):
    """
    Split every fitted window at cfg's frequency cut. Means, DC modes and pairs
    with |omega| < cut are stitched into the low-frequency reconstruction; the
    remaining pairs are returned as WindowedModes.
    """
    cut = cfg.cut(X.dt)
    times = X.time.points
    matrices, spans, retained = [], [], []
    for fit in fits:
        if not fit.ok:
            continue
        t_loc = times[fit.start:fit.stop] - times[fit.start]
        low = np.repeat(fit.mean[:, None], t_loc.size, axis=1)
        pair_modes, dc_modes = phasor_decompose(fit.paired)
        for mode in dc_modes:
            low += dc_reconstruct(mode, t_loc)
        for j, mode in enumerate(pair_modes):
            if abs(mode.omega) < cut:
                low += phasor_reconstruct_pair(mode, t_loc)
            else:
                retained.append(WindowedMode(j, fit.index, level, mode,
                                             (float(times[fit.start]), float(times[fit.stop - 1])),
                                             (fit.start, fit.stop)))
        matrices.append(low)
        spans.append((fit.start, fit.stop))
    if not matrices:
        raise LevelFailureError(f"level {level}: no fitted windows to stitch")
    lowfreq = stitch(matrices, spans, taper, n_time=X.n_time)
    logger.info(f"Level {level}: cut {cut:.4g} rad/time, {len(retained)} resolved modes retained")
    return lowfreq, retained


def _kmeans_labels(features, k, seed):
    if k == 1:
        return np.zeros(features.shape[0], dtype=int)
    km = KMeans(n_clusters=k, random_state=seed, n_init=10).fit(features)
    # relabel so that band 0 is the slowest
    order = np.argsort(km.cluster_centers_.ravel())
    remap = np.empty(k, dtype=int)
    remap[order] = np.arange(k)
    return remap[km.labels_]


def _density_peaks(log_freq, weights):
    """Prominent maxima of the amplitude-weighted density of log|omega|."""
    spread = float(np.sqrt(np.cov(log_freq, aweights=weights)))
    if not spread > 0:
        return 1
    kde = gaussian_kde(log_freq, bw_method=BAND_BANDWIDTH / spread, weights=weights)
    grid = np.linspace(log_freq.min() - 3 * BAND_BANDWIDTH, log_freq.max() + 3 * BAND_BANDWIDTH, 1024)
    density = kde(grid)
    peaks, _ = find_peaks(density, prominence=BAND_PEAK_PROMINENCE * density.max())
    return peaks.size


def assign_bands(modes, n_bands="auto", seed=0, weights=None):
    """
    Band labels from 1-D k-means on log|omega|, ordered by ascending frequency.

    With "auto" the count is the number of prominent peaks of the
    amplitude-weighted log-frequency density (weights default to b), capped
    at 6. When fewer than two peaks stand out, the best silhouette over 2..6
    decides.
    """
    if not modes:
        raise InvalidArgumentError("no modes to assign to bands")
    log_freq = np.log(np.array([abs(m.phasor.omega) for m in modes]))
    features = log_freq.reshape(-1, 1)
    distinct = np.unique(np.round(log_freq, 12)).size

    if n_bands == "auto":
        k_max = min(MAX_AUTO_BANDS, distinct, len(modes) - 1)
        if weights is None:
            weights = [m.phasor.b for m in modes]
        weights = np.asarray(weights, dtype=float)
        if weights.shape != log_freq.shape or np.any(weights < 0):
            raise InvalidArgumentError("band weights must be one nonnegative value per mode")
        if not weights.sum() > 0:
            weights = np.ones_like(log_freq)
        k = 1
        if k_max >= 2:
            peaks = _density_peaks(log_freq, weights)
            logger.debug(f"Weighted log-frequency density has {peaks} prominent peaks")
            if peaks >= 2:
                k = min(peaks, k_max)
            else:
                best = -np.inf
                for cand in range(2, k_max + 1):
                    score = silhouette_score(features, _kmeans_labels(features, cand, seed))
                    logger.debug(f"k={cand}: silhouette {score:.4f}")
                    if score > best:
                        k, best = cand, score
        logger.info(f"Automatic band count: {k}")
    else:
        k = int(n_bands)
        if k < 1:
            raise InvalidArgumentError(f"band count must be >= 1, got {n_bands}")
        if k > distinct:
            logger.warning(f"Only {distinct} distinct frequencies; reducing band count {k} -> {distinct}")
            warnings.warn(f"band count reduced from {k} to {distinct}", BandCountWarning)
            k = distinct
    return _kmeans_labels(features, k, seed)


def decompose(X, configs, n_bands="auto", taper="hann", pair_tol=DEFAULT_PAIR_TOL,
              dc_tol=DEFAULT_DC_TOL, seed=0, workers=None, refine=None):
    """
    Run the level hierarchy: each level's low-frequency reconstruction is the
    next level's input, the last one is kept as the slowest band, and all
    resolved modes are assigned to global frequency bands. refine overrides
    every level's own refinement when given.
    """
    if not configs:
        raise InvalidArgumentError("at least one level configuration is required")
    lengths = [cfg.window_length for cfg in configs]
    if lengths != sorted(lengths):
        raise InvalidArgumentError(f"window lengths must increase level by level, got {lengths}")
    if lengths[-1] > X.n_time:
        raise InvalidArgumentError(f"window length {lengths[-1]} exceeds series length {X.n_time}")
    if taper not in TAPERS:
        raise InvalidArgumentError(f"unknown taper {taper!r}; expected one of {TAPERS}")

    current = X
    levels = []
    for level, cfg in enumerate(configs):
        if refine is not None:
            cfg = replace(cfg, refine=refine)
        fits = fit_level(current, cfg, level, pair_tol, dc_tol, workers)
        lowfreq, retained = scale_separate(fits, cfg, current, level, taper)
        levels.append(LevelResult(cfg, fits, retained, lowfreq))
        current = current.with_values(lowfreq)

    decomp = MrDecomposition(X.space, X.time, levels, current.values, taper=taper)
    modes = decomp.modes
    if not modes:
        logger.warning("No resolved modes at any level; everything is low-frequency")
        return decomp

    # b per unit of window overlap
    weights = [m.phasor.b * result.config.stride / X.n_time for result in levels for m in result.modes]
    labels = assign_bands(modes, n_bands, seed, weights)
    offset = 0
    bands = {}
    for result in levels:
        labelled = []
        for mode in result.modes:
            label = int(labels[offset])
            offset += 1
            labelled.append(replace(mode, band=label))
            bands.setdefault(label, []).append(mode.triplet)
        result.modes = labelled
    decomp.bands = bands
    logger.info("Bands: " + ", ".join(f"{p}: {len(v)} modes" for p, v in sorted(bands.items())))
    return decomp


def _contributions(band, t, weights):
    """(mode, time indices, window-local times, b exp(mu t_loc) [* stitch weight])."""
    t = as_points(t)
    for mode in band:
        t_start, t_end = mode.window_span
        slack = 1e-9 * max(1.0, abs(t_end))
        idx = np.flatnonzero((t >= t_start - slack) & (t <= t_end + slack))
        t_loc = t[idx] - t_start
        w = mode.phasor.b * np.exp(mode.phasor.mu * t_loc)
        if weights is not None:
            w = w * weights[(mode.level, mode.k)][idx]
        yield mode, idx, t_loc, w


def band_amplitude(band, t, weights=None):
    """Band amplitude: sum of b exp(mu (t - t_start)) over windows containing t."""
    if not band:
        raise InvalidArgumentError("band is empty")
    beta = np.zeros(as_points(t).size)
    for _, idx, _, w in _contributions(band, t, weights):
        beta[idx] += w
    return beta


def _weighted_average(band, t, weights, term):
    if not band:
        raise InvalidArgumentError("band is empty")
    n_time = as_points(t).size
    n_space = band[0].phasor.S.size
    beta = np.zeros(n_time)
    total = np.zeros((n_space, n_time))
    for mode, idx, t_loc, w in _contributions(band, t, weights):
        beta[idx] += w
        total[:, idx] += term(mode.phasor, t_loc) * w[None, :]
    with np.errstate(invalid="ignore", divide="ignore"):
        avg = total / beta[None, :]
    avg[:, beta == 0] = np.nan
    return avg


def band_spatial_pattern(band, t, weights=None):
    """Amplitude-weighted average of the member spatial patterns; NaN where beta = 0."""
    return _weighted_average(band, t, weights, lambda p, t_loc: p.S[:, None])


def band_waveform(band, t, weights=None):
    """Amplitude-weighted average of the member waveforms; NaN where beta = 0."""
    return _weighted_average(
        band, t, weights, lambda p, t_loc: np.cos(p.omega * t_loc[None, :] + p.varphi[:, None]))


def band_reconstruct(band, t, weights=None):
    """Stitched sum of the pair reconstructions of every band member."""
    if not band:
        raise InvalidArgumentError("band is empty")
    t_pts = as_points(t)
    out = np.zeros((band[0].phasor.S.size, t_pts.size))
    for mode in band:
        t_start, t_end = mode.window_span
        slack = 1e-9 * max(1.0, abs(t_end))
        idx = np.flatnonzero((t_pts >= t_start - slack) & (t_pts <= t_end + slack))
        piece = phasor_reconstruct_pair(mode.phasor, t_pts[idx] - t_start)
        if weights is not None:
            piece = piece * weights[(mode.level, mode.k)][None, idx]
        out[:, idx] += piece
    return out


def summarize_band(decomp, label, weights=None):
    """Band amplitude, summed spatial pattern and waveform, and exact reconstruction."""
    if weights is None:
        weights = decomp.window_weights()
    band = decomp.band(label)
    return BandSummary(label=label,
                       beta=band_amplitude(band, decomp.time, weights),
                       S_p=band_spatial_pattern(band, decomp.time, weights),
                       W_p=band_waveform(band, decomp.time, weights),
                       recon=band_reconstruct(band, decomp.time, weights))


def band_reconstructions(decomp):
    """Reconstruction of every band plus the final low-frequency residual."""
    weights = decomp.window_weights()
    recons = {label: band_reconstruct(decomp.band(label), decomp.time, weights)
              for label in decomp.band_labels}
    recons[LOWFREQ] = decomp.lowfreq_residual
    return recons


def total_reconstruction(decomp):
    return sum(band_reconstructions(decomp).values())


def match_components(recons, truths):
    """
    Assign each reconstruction to the truth component it correlates with best
    and report the relative error of every truth component.
    """
    names = list(truths)
    assignment = {}
    for label, recon in recons.items():
        norm = np.linalg.norm(recon)
        if norm == 0:
            continue
        scores = [np.sum(recon * truths[n]) / (norm * max(np.linalg.norm(truths[n]), 1e-300))
                  for n in names]
        assignment[label] = names[int(np.argmax(scores))]
    combined = {n: np.zeros_like(np.asarray(truths[n], dtype=float)) for n in names}
    for label, name in assignment.items():
        combined[name] = combined[name] + recons[label]
    errors = {n: relative_error(combined[n], truths[n]) for n in names}
    return assignment, errors, combined


def spatial_stability(S_p, margin=0):
    """||temporal std of S_p|| / ||temporal mean of S_p|| over interior, defined times."""
    S_p = np.asarray(S_p, dtype=float)
    interior = S_p[:, margin:S_p.shape[1] - margin] if margin else S_p
    defined = interior[:, ~np.any(np.isnan(interior), axis=0)]
    if defined.shape[1] == 0:
        return np.nan
    mean = defined.mean(axis=1)
    std = defined.std(axis=1)
    return float(np.linalg.norm(std) / np.linalg.norm(mean))


def prominent_maxima(beta, prominence=0.3):
    """Indices of maxima of beta whose prominence exceeds prominence * max(beta)."""
    beta = np.nan_to_num(np.asarray(beta, dtype=float))
    peak = beta.max() if beta.size else 0.0
    if peak <= 0:
        return np.array([], dtype=int)
    idx, _ = find_peaks(beta, prominence=prominence * peak)
    return idx
