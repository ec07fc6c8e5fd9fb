#!/usr/bin/env python3
# Text serialization of matrices, fitted models, decompositions and run manifests.
# Matrices are tab-separated (17 significant digits); everything else is JSON.

import csv
import json
import logging
from dataclasses import dataclass

import numpy as np

from dmd_core import DmdModel, PairedModel, is_normalized
from multires import (LevelConfig, LevelResult, MrDecomposition, WindowedMode,
                      WindowFit)
from phasor import PhasorMode, phase_shift, phasor_decompose, spatial_pattern
from snapshots import (FormatParseError, Grid1D, IntegrityError,
                       InvalidArgumentError, SnapshotMatrix)

logger = logging.getLogger("io_formats")

SCHEMA_VERSION = 1
MODEL_KIND = "phasor-dmd-model"
DECOMPOSITION_KIND = "phasor-dmd-decomposition"
INTEGRITY_TOL = 1e-12


@dataclass(frozen=True)
class MatrixCsv:
    values: np.ndarray
    space: np.ndarray
    time: np.ndarray

    def to_snapshots(self):
        return SnapshotMatrix(self.values, Grid1D.from_points(self.space), Grid1D.from_points(self.time))


@dataclass(frozen=True)
class ModelDocument:
    paired: PairedModel
    pair_modes: list
    dc_modes: list
    space: Grid1D = None
    time: Grid1D = None


def _fmt(value):
    return format(float(value), ".17g")


def write_matrix(path, values, space=None, time=None):
    """Write values (n_space x n_time) with coordinate header row and column."""
    values = np.atleast_2d(np.asarray(values, dtype=float))
    if values.ndim != 2:
        raise InvalidArgumentError(f"matrix must be 2-D, got shape {values.shape}")
    space = np.arange(values.shape[0], dtype=float) if space is None else np.asarray(
        getattr(space, "points", space), dtype=float)
    time = np.arange(values.shape[1], dtype=float) if time is None else np.asarray(
        getattr(time, "points", time), dtype=float)
    if space.shape != (values.shape[0],) or time.shape != (values.shape[1],):
        raise InvalidArgumentError(
            f"coordinates ({space.size}, {time.size}) do not match matrix shape {values.shape}")
    for name, arr in (("values", values), ("space", space), ("time", time)):
        if not np.all(np.isfinite(arr)):
            raise InvalidArgumentError(f"matrix {name} contain non-finite entries")

    with open(path, 'w', newline='', encoding='utf-8') as f:
        writer = csv.writer(f, delimiter='\t', lineterminator='\n')
        writer.writerow(['x'] + [_fmt(v) for v in time])
        for x, row in zip(space, values):
            writer.writerow([_fmt(x)] + [_fmt(v) for v in row])
    logger.debug(f"Wrote {values.shape[0]}x{values.shape[1]} matrix to {path}")


def _parse_cells(cells, line):
    try:
        parsed = [float(c) for c in cells]
    except ValueError:
        bad = next(c for c in cells if not _is_number(c))
        raise FormatParseError(line, f"non-numeric cell {bad!r}") from None
    if not np.all(np.isfinite(parsed)):
        bad = next(c for c, v in zip(cells, parsed) if not np.isfinite(v))
        raise FormatParseError(line, f"non-finite cell {bad!r}")
    return parsed


def _is_number(cell):
    try:
        float(cell)
        return True
    except ValueError:
        return False


def read_matrix(path):
    """Parse a matrix file written by write_matrix."""
    with open(path, newline='', encoding='utf-8') as f:
        rows = list(csv.reader(f, delimiter='\t'))
    if not rows:
        raise FormatParseError(1, "empty file")
    header = rows[0]
    if not header or header[0] != 'x':
        raise FormatParseError(1, "header must start with 'x'")
    time = _parse_cells(header[1:], 1)
    if not time:
        raise FormatParseError(1, "header has no time columns")
    space, values = [], []
    for line, row in enumerate(rows[1:], start=2):
        if len(row) != len(header):
            raise FormatParseError(line, f"expected {len(header)} cells, found {len(row)}")
        cells = _parse_cells(row, line)
        space.append(cells[0])
        values.append(cells[1:])
    if not values:
        raise FormatParseError(len(rows), "matrix has no data rows")
    return MatrixCsv(np.array(values), np.array(space), np.array(time))


def _complex_record(arr):
    arr = np.asarray(arr, dtype=complex)
    return {'re': arr.real.tolist(), 'im': arr.imag.tolist()}


def _complex_array(record):
    return np.array(record['re'], dtype=float) + 1j * np.array(record['im'], dtype=float)


def _phasor_record(mode):
    return {'pair_id': mode.pair_id, 'mu': mode.mu, 'omega': mode.omega, 'b': mode.b,
            'S': mode.S.tolist(), 'varphi': mode.varphi.tolist()}


def _phasor_from(record):
    return PhasorMode(pair_id=record['pair_id'], S=record['S'], varphi=record['varphi'],
                      omega=record['omega'], mu=record['mu'], b=record['b'])


def _model_record(pm):
    model = pm.model
    record = {
        'dt': model.dt,
        'n_space': model.n_space,
        'rank': model.rank,
        'modes': {'re': model.modes.real.T.tolist(), 'im': model.modes.imag.T.tolist()},
        'eigenvalues': _complex_record(model.eigenvalues),
        'amplitudes': _complex_record(model.amplitudes),
        'ill_conditioned': model.ill_conditioned,
        'pairs': [list(p) for p in pm.pairs],
        'dc_modes': list(pm.dc_modes),
        'unpaired': list(pm.unpaired),
        'converged': pm.converged,
        'phasor': None,
    }
    if is_normalized(pm):
        pairs, dc = phasor_decompose(pm)
        record['phasor'] = {'pairs': [_phasor_record(m) for m in pairs],
                            'dc': [_phasor_record(m) for m in dc]}
    return record


def _check_close(name, stored, expected, tol=INTEGRITY_TOL):
    stored = np.asarray(stored, dtype=float)
    expected = np.asarray(expected, dtype=float)
    if stored.shape != expected.shape:
        raise IntegrityError(f"{name}: stored shape {stored.shape} differs from {expected.shape}")
    scale = max(1.0, float(np.max(np.abs(expected))) if expected.size else 1.0)
    if expected.size and np.max(np.abs(stored - expected)) > tol * scale:
        raise IntegrityError(f"{name} does not match the raw complex modes")


def _verify_phasor(label, record, model, index):
    phi = model.modes[:, index]
    _check_close(f"{label} S", record['S'], spatial_pattern(phi))
    defined = np.abs(phi) > 0
    wrapped = np.angle(np.exp(1j * (np.asarray(record['varphi'], dtype=float) - phase_shift(phi))))
    if wrapped.shape != phi.shape or np.any(np.abs(wrapped[defined]) > INTEGRITY_TOL * np.pi):
        raise IntegrityError(f"{label} varphi does not match the raw complex modes")
    lam = model.eigenvalues[index]
    _check_close(f"{label} mu", record['mu'], lam.real)
    _check_close(f"{label} b", record['b'], model.amplitudes[index].real)
    if label.startswith("pair"):
        _check_close(f"{label} omega", record['omega'], lam.imag)


def _model_from(record):
    try:
        modes = (np.array(record['modes']['re'], dtype=float)
                 + 1j * np.array(record['modes']['im'], dtype=float))
        modes = modes.T.reshape(record['n_space'], record['rank'])
        model = DmdModel(modes, _complex_array(record['eigenvalues']),
                         _complex_array(record['amplitudes']), record['dt'],
                         record.get('ill_conditioned', False))
        pm = PairedModel(record['pairs'], record['dc_modes'], model,
                         unpaired=record.get('unpaired', ()),
                         converged=record.get('converged', True))
    except (KeyError, TypeError, ValueError) as e:
        raise IntegrityError(f"malformed model record: {e}") from e

    phasor = record.get('phasor')
    if phasor is None:
        return pm, [], []
    if len(phasor['pairs']) != len(pm.pairs) or len(phasor['dc']) != len(pm.dc_modes):
        raise IntegrityError("phasor records do not match pair/DC structure")
    for rec, (a, _) in zip(phasor['pairs'], pm.pairs):
        _verify_phasor(f"pair {rec['pair_id']}", rec, model, a)
    for rec, i in zip(phasor['dc'], pm.dc_modes):
        _verify_phasor(f"dc {rec['pair_id']}", rec, model, i)
    return pm, [_phasor_from(r) for r in phasor['pairs']], [_phasor_from(r) for r in phasor['dc']]


def _grid_record(grid):
    return None if grid is None else {'points': grid.points.tolist(), 'spacing': grid.spacing}


def _grid_from(record):
    return None if record is None else Grid1D(record['points'], record['spacing'])


def _dump(path, document):
    with open(path, 'w', encoding='utf-8', newline='\n') as f:
        json.dump(document, f, indent=2, ensure_ascii=False)
        f.write('\n')


def _load(path, kind):
    with open(path, 'r', encoding='utf-8') as f:
        try:
            document = json.load(f)
        except json.JSONDecodeError as e:
            raise FormatParseError(e.lineno, e.msg) from e
    if document.get('kind') != kind:
        raise IntegrityError(f"{path} is not a {kind} document (kind={document.get('kind')!r})")
    if document.get('schema_version') != SCHEMA_VERSION:
        raise IntegrityError(f"unsupported schema version {document.get('schema_version')!r}")
    return document


def write_model(path, pm, space=None, time=None):
    """Raw complex model, pair structure and phasor fields in one JSON document."""
    document = {'kind': MODEL_KIND, 'schema_version': SCHEMA_VERSION,
                'space': _grid_record(space), 'time': _grid_record(time)}
    document.update(_model_record(pm))
    _dump(path, document)
    logger.info(f"Saved rank-{pm.model.rank} model to {path}")


def read_model(path):
    """Load a model and check that its phasor fields agree with the raw modes."""
    document = _load(path, MODEL_KIND)
    pm, pairs, dc = _model_from(document)
    return ModelDocument(pm, pairs, dc, _grid_from(document.get('space')), _grid_from(document.get('time')))


def _config_record(cfg):
    return {'window_length': cfg.window_length, 'stride': cfg.stride, 'rank': cfg.rank,
            'freq_cut': cfg.freq_cut, 'refine': cfg.refine}


def _window_record(fit):
    return {'index': fit.index, 'start': fit.start, 'stop': fit.stop, 'mean': fit.mean.tolist(),
            'model': _model_record(fit.paired) if fit.ok else None, 'error': fit.error}


def _windowed_mode_record(mode):
    return {'j': mode.j, 'k': mode.k, 'level': mode.level, 'band': mode.band,
            'window_span': list(mode.window_span), 'index_span': list(mode.index_span),
            'phasor': _phasor_record(mode.phasor)}


def write_decomposition(path, decomp):
    document = {
        'kind': DECOMPOSITION_KIND,
        'schema_version': SCHEMA_VERSION,
        'space': _grid_record(decomp.space),
        'time': _grid_record(decomp.time),
        'taper': decomp.taper,
        'levels': [{'config': _config_record(level.config),
                    'windows': [_window_record(f) for f in level.fits],
                    'modes': [_windowed_mode_record(m) for m in level.modes],
                    'lowfreq': level.lowfreq.tolist()}
                   for level in decomp.levels],
        'lowfreq_residual': np.asarray(decomp.lowfreq_residual).tolist(),
        'bands': {str(label): [list(t) for t in triplets]
                  for label, triplets in sorted(decomp.bands.items())},
    }
    _dump(path, document)
    logger.info(f"Saved {len(decomp.levels)}-level decomposition to {path}")


def read_decomposition(path):
    document = _load(path, DECOMPOSITION_KIND)
    levels = []
    for entry in document['levels']:
        fits = []
        for w in entry['windows']:
            paired = None if w['model'] is None else _model_from(w['model'])[0]
            fits.append(WindowFit(w['index'], w['start'], w['stop'], np.array(w['mean'], dtype=float),
                                  paired, w['error']))
        modes = [WindowedMode(m['j'], m['k'], m['level'], _phasor_from(m['phasor']),
                              tuple(m['window_span']), tuple(m['index_span']), m['band'])
                 for m in entry['modes']]
        levels.append(LevelResult(LevelConfig(**entry['config']), fits, modes,
                                  np.array(entry['lowfreq'], dtype=float)))
    bands = {int(label): [tuple(t) for t in triplets] for label, triplets in document['bands'].items()}
    return MrDecomposition(_grid_from(document['space']), _grid_from(document['time']), levels,
                           np.array(document['lowfreq_residual'], dtype=float), bands,
                           document['taper'])


def write_manifest(path, manifest):
    """Run manifest with sorted keys; identical runs give identical bytes."""
    with open(path, 'w', encoding='utf-8', newline='\n') as f:
        json.dump(manifest, f, indent=2, ensure_ascii=False, sort_keys=True)
        f.write('\n')
