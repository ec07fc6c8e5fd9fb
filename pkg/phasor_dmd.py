#!/usr/bin/env python3
# Phasor DMD command line
# Generates the toy data sets, fits DMD models, exports phasor fields and
# runs the multi-resolution band decomposition, writing a manifest per run.

import argparse
import logging
import os
import pathlib
import sys

import numpy as np

import toy_models
from dmd_core import DEFAULT_PAIR_TOL, fit_pipeline
from io_formats import (read_matrix, read_model, write_decomposition,
                        write_manifest, write_matrix, write_model)
from multires import (DEFAULT_RANK, DEFAULT_REFINE, DEFAULT_STRIDE_FRAC,
                      DEFAULT_WINDOWS, LOWFREQ, REFINEMENTS, TAPERS, LevelConfig,
                      band_reconstructions, decompose, match_components,
                      prominent_maxima, spatial_stability, summarize_band)
from phasor import phasor_decompose, phasor_reconstruct_pair, waveform
from snapshots import (Grid1D, PhasorDmdError, THREADS_ENV, max_workers,
                       relative_error)

__version__ = "1.0.0"

logger = logging.getLogger("phasor_dmd")

TOTAL_ERROR_TARGET = 0.10
COMPONENT_ERROR_TARGET = 0.15


def setup_logging(verbose=False, log_file="phasor_dmd.log"):
    """Root logger to file and console, configured once per invocation."""
    handlers = [logging.StreamHandler()]
    if log_file:
        handlers.insert(0, logging.FileHandler(log_file))
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        handlers=handlers,
        force=True,
    )


def _manifest(args, command, config, inputs, outputs, metrics):
    return {
        'tool': 'phasor_dmd',
        'version': __version__,
        'command': command,
        'argv': list(args.argv),
        'seed': getattr(args, 'seed', None),
        'config': config,
        'inputs': inputs,
        'outputs': sorted(outputs),
        'metrics': metrics,
    }


def _parse_truth(parser, entries):
    """NAME=PATH pairs; a bare PATH is named after its file stem."""
    truths = {}
    for entry in entries or ():
        name, sep, path = entry.partition('=')
        if not sep:
            name, path = pathlib.Path(entry).stem, entry
        if not name or not path:
            parser.error(f"--truth expects NAME=PATH, got {entry!r}")
        truths[name] = path
    return truths


def _load_truths(paths, shape):
    truths = {}
    for name, path in paths.items():
        values = read_matrix(path).values
        if values.shape != shape:
            raise PhasorDmdError(f"truth {name} has shape {values.shape}, data has {shape}")
        truths[name] = values
    return truths


def cmd_generate(args, parser):
    out = pathlib.Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    written = []

    def save(name, values, space, time):
        write_matrix(out / name, values, space, time)
        written.append(name)

    if args.model == 'uniscale':
        X, truth = toy_models.gen_uniscale(args.nx or toy_models.UNISCALE_SHAPE[0],
                                           args.nt or toy_models.UNISCALE_SHAPE[1])
        t0 = [X.time.points[0]]
        save('total.csv', X.values, X.space, X.time)
        save('f1.csv', truth.f1, X.space, X.time)
        save('f2.csv', truth.f2, X.space, X.time)
        save('fhat1.csv', truth.fhat1[:, None], X.space, t0)
        save('fhat2.csv', truth.fhat2[:, None], X.space, t0)
        config = {'nx': X.n_space, 'nt': X.n_time}
    else:
        X, truth = toy_models.gen_multiscale(seed=args.seed, nt=args.nt or toy_models.MULTISCALE_NT,
                                             substeps=args.substeps)
        save('total.csv', X.values, X.space, X.time)
        for name, values in truth.components().items():
            save(f'{name}.csv', values, X.space, X.time)
        config = {'nt': X.n_time, 'tau1': truth.tau1, 'tau2': truth.tau2, 'substeps': args.substeps}

    config['model'] = args.model
    write_manifest(out / 'manifest.json',
                   _manifest(args, 'generate', config, {}, written, {'shape': list(X.values.shape)}))
    logger.info(f"Generated {args.model} data {X.values.shape} in {out}")
    return 0


def cmd_fit(args, parser):
    if args.rank < 1:
        parser.error(f"--rank must be >= 1, got {args.rank}")
    if args.delays < 1:
        parser.error(f"--delays must be >= 1, got {args.delays}")
    truth_paths = _parse_truth(parser, args.truth)

    X = read_matrix(args.input).to_snapshots()
    truths = _load_truths(truth_paths, X.values.shape)
    result = fit_pipeline(X, args.rank, delays=args.delays, refine=args.refine,
                          pair_tol=args.pair_tol, strict=not args.allow_unpaired)
    pairs, dc = phasor_decompose(result.paired)

    out = pathlib.Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_model(out / 'model.json', result.paired, X.space, X.time)

    data_norm = np.linalg.norm(X.values)
    lines = [f"Rank {args.rank}, delays {args.delays}, refine {args.refine}",
             f"Pairs: {len(pairs)}, DC modes: {len(dc)}, unpaired: {len(result.paired.unpaired)}",
             "",
             "Eigenvalues (mu + i omega):"]
    for lam in result.paired.model.eigenvalues:
        lines.append(f"  {lam.real:+.10f} {lam.imag:+.10f}i")
    lines += ["", "pair\tomega\tmu\tb\tshare"]
    recons = {}
    for mode in pairs:
        recons[mode.pair_id] = phasor_reconstruct_pair(mode, X.time)
        share = np.linalg.norm(recons[mode.pair_id]) / data_norm if data_norm else 0.0
        lines.append(f"{mode.pair_id}\t{mode.omega:.10f}\t{mode.mu:.3e}\t{mode.b:.6g}\t{share:.4f}")

    metrics = {'relative_error': result.relative_error, 'imaginary_ratio': result.imaginary_ratio,
               'omega': [m.omega for m in pairs], 'converged': result.paired.converged}
    if truths:
        lines += ["", "truth\tpair\trelative_error"]
        per_mode = {}
        for name, values in truths.items():
            scores = {pid: relative_error(r, values) for pid, r in recons.items()}
            best = min(scores, key=scores.get) if scores else None
            per_mode[name] = {'pair': best, 'relative_error': scores.get(best, 1.0)}
            lines.append(f"{name}\t{best}\t{per_mode[name]['relative_error']:.6e}")
        metrics['per_mode'] = per_mode
    lines += ["", f"Total relative error: {result.relative_error:.6e}"]
    (out / 'report.txt').write_text("\n".join(lines) + "\n", encoding='utf-8')

    config = {'rank': args.rank, 'delays': args.delays, 'refine': args.refine,
              'pair_tol': args.pair_tol, 'allow_unpaired': args.allow_unpaired}
    write_manifest(out / 'manifest.json',
                   _manifest(args, 'fit', config, {'in': args.input, 'truth': truth_paths},
                             ['model.json', 'report.txt'], metrics))
    print(f"Total relative error: {result.relative_error:.6e}")
    return 0


def cmd_phasor(args, parser):
    document = read_model(args.model)
    if document.time is None:
        raise PhasorDmdError(f"{args.model} has no time grid to evaluate waveforms on")
    time = document.time
    space = document.space if document.space is not None else Grid1D.arange(document.paired.model.n_space, 1.0)
    prefix = args.out
    parent = os.path.dirname(prefix)
    if parent:
        os.makedirs(parent, exist_ok=True)

    written = []
    for mode in document.pair_modes:
        stem = f"{prefix}pair{mode.pair_id}"
        fields = {
            'S': mode.S[:, None],
            'varphi': mode.varphi[:, None],
            'waveform': waveform(mode.omega, mode.varphi, time),
            'recon': phasor_reconstruct_pair(mode, time),
        }
        for name, values in fields.items():
            columns = time if values.shape[1] == len(time) else [time.points[0]]
            write_matrix(f"{stem}_{name}.csv", values, space, columns)
            written.append(os.path.basename(f"{stem}_{name}.csv"))

    metrics = {'pairs': len(document.pair_modes), 'dc_modes': len(document.dc_modes),
               'omega': [m.omega for m in document.pair_modes]}
    write_manifest(f"{prefix}manifest.json",
                   _manifest(args, 'phasor', {}, {'model': args.model}, written, metrics))
    logger.info(f"Exported {len(written)} phasor fields for {len(document.pair_modes)} pairs")
    return 0


def _parse_windows(parser, text):
    try:
        windows = [int(w) for w in text.split(',') if w.strip()]
    except ValueError:
        parser.error(f"--windows must be comma-separated integers, got {text!r}")
    if not windows or any(w < 2 for w in windows):
        parser.error(f"--windows needs window lengths >= 2, got {text!r}")
    if windows != sorted(windows):
        parser.error(f"--windows must be increasing, got {text!r}")
    return windows


def _parse_bands(parser, text):
    if text == 'auto':
        return 'auto'
    try:
        k = int(text)
    except ValueError:
        k = 0
    if k < 1:
        parser.error(f"--bands must be 'auto' or a positive integer, got {text!r}")
    return k


def cmd_mrcosts(args, parser):
    windows = _parse_windows(parser, args.windows)
    bands = _parse_bands(parser, args.bands)
    if args.rank < 1:
        parser.error(f"--rank must be >= 1, got {args.rank}")
    if not 0 < args.stride_frac <= 1:
        parser.error(f"--stride-frac must be in (0, 1], got {args.stride_frac}")
    truth_paths = _parse_truth(parser, args.truth)

    X = read_matrix(args.input).to_snapshots()
    if windows[-1] > X.n_time:
        parser.error(f"window length {windows[-1]} exceeds series length {X.n_time}")
    truths = _load_truths(truth_paths, X.values.shape)

    configs = [LevelConfig.from_fraction(w, args.stride_frac, args.rank, refine=args.refine)
               for w in windows]
    decomp = decompose(X, configs, n_bands=bands, taper=args.taper, pair_tol=args.pair_tol,
                       seed=args.seed, workers=max_workers())

    out = pathlib.Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_decomposition(out / 'decomposition.json', decomp)
    written = ['decomposition.json']

    weights = decomp.window_weights()
    margin = windows[-1]
    band_metrics = {}
    for label in decomp.band_labels:
        summary = summarize_band(decomp, label, weights)
        stem = f"band{label}"
        write_matrix(out / f"{stem}_beta.csv", summary.beta[None, :], [0.0], X.time)
        write_matrix(out / f"{stem}_S.csv", np.nan_to_num(summary.S_p), X.space, X.time)
        write_matrix(out / f"{stem}_W.csv", np.nan_to_num(summary.W_p), X.space, X.time)
        write_matrix(out / f"{stem}_recon.csv", summary.recon, X.space, X.time)
        written += [f"{stem}_{f}.csv" for f in ('beta', 'S', 'W', 'recon')]
        modes = decomp.band(label)
        band_metrics[str(label)] = {
            'modes': len(modes),
            'omega_median': float(np.median([abs(m.phasor.omega) for m in modes])),
            'spatial_stability': spatial_stability(summary.S_p, margin),
            'beta_maxima': len(prominent_maxima(summary.beta)),
        }
    write_matrix(out / 'lowfreq.csv', decomp.lowfreq_residual, X.space, X.time)
    written.append('lowfreq.csv')

    recons = band_reconstructions(decomp)
    total_error = relative_error(sum(recons.values()), X.values)
    metrics = {'relative_error': total_error, 'bands': band_metrics,
               'failed_windows': [level.n_failed for level in decomp.levels]}
    misses = []
    if total_error > TOTAL_ERROR_TARGET:
        misses.append(f"total relative error {total_error:.4f} > {TOTAL_ERROR_TARGET}")

    lines = [f"Levels: {windows} (stride fraction {args.stride_frac}, rank {args.rank}, "
             f"refine {args.refine}, taper {args.taper})",
             f"Bands: {len(decomp.band_labels)} + {LOWFREQ}", "",
             "band\tmodes\tmedian_omega\tS_stability\tbeta_maxima"]
    for label, m in band_metrics.items():
        lines.append(f"{label}\t{m['modes']}\t{m['omega_median']:.4f}\t"
                     f"{m['spatial_stability']:.4f}\t{m['beta_maxima']}")

    if truths:
        assignment, errors, _ = match_components(recons, truths)
        metrics['assignment'] = {str(k): v for k, v in assignment.items()}
        metrics['component_errors'] = errors
        lines += ["", "component\tbands\trelative_error"]
        for name, err in errors.items():
            members = [str(k) for k, v in assignment.items() if v == name]
            lines.append(f"{name}\t{','.join(members) or '-'}\t{err:.6e}")
            if err > COMPONENT_ERROR_TARGET:
                misses.append(f"{name} relative error {err:.4f} > {COMPONENT_ERROR_TARGET}")

    metrics['misses'] = misses
    lines += ["", f"Total relative error: {total_error:.6e}"]
    lines += [f"MISS: {m}" for m in misses]
    (out / 'report.txt').write_text("\n".join(lines) + "\n", encoding='utf-8')
    written.append('report.txt')
    for miss in misses:
        logger.warning(f"Target missed: {miss}")

    config = {'windows': windows, 'stride_frac': args.stride_frac, 'rank': args.rank,
              'bands': bands, 'taper': args.taper, 'pair_tol': args.pair_tol,
              'refine': args.refine,
              'strides': [c.stride for c in configs]}
    write_manifest(out / 'manifest.json',
                   _manifest(args, 'mrcosts', config, {'in': args.input, 'truth': truth_paths},
                             written, metrics))
    print(f"Total relative error: {total_error:.6e}")
    return 0


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--verbose', action='store_true', help='Debug logging')
    common.add_argument('--log-file', type=str, default='phasor_dmd.log',
                        help="Log file ('' to log to the console only)")

    parser = argparse.ArgumentParser(
        description='Phasor-notation DMD: fit, export and multi-resolution band decomposition',
        epilog=f'{THREADS_ENV} caps the window-fit worker threads (0 = auto).')
    parser.add_argument('--version', action='version', version=f'%(prog)s {__version__}')
    sub = parser.add_subparsers(dest='command', required=True)

    gen = sub.add_parser('generate', parents=[common], help='Write toy data and truth components')
    gen.add_argument('--model', choices=['uniscale', 'multiscale'], required=True)
    gen.add_argument('--seed', type=int, default=0, help='Mixing-matrix seed (multiscale)')
    gen.add_argument('--out', type=str, required=True, help='Output directory')
    gen.add_argument('--nx', type=int, help='Spatial points (uniscale)')
    gen.add_argument('--nt', type=int, help='Time samples')
    gen.add_argument('--substeps', type=int, default=toy_models.DEFAULT_SUBSTEPS,
                     help='RK4 substeps per sample (multiscale)')

    fit = sub.add_parser('fit', parents=[common], help='Fit a conjugate-pair DMD model')
    fit.add_argument('--in', dest='input', type=str, required=True)
    fit.add_argument('--rank', type=int, required=True)
    fit.add_argument('--delays', type=int, default=1)
    fit.add_argument('--refine', choices=['none', 'varpro'], default='none')
    fit.add_argument('--pair-tol', type=float, default=DEFAULT_PAIR_TOL)
    fit.add_argument('--allow-unpaired', action='store_true')
    fit.add_argument('--truth', action='append', help='NAME=PATH truth matrix (repeatable)')
    fit.add_argument('--out', type=str, required=True, help='Output directory')

    pha = sub.add_parser('phasor', parents=[common], help='Export S, varphi, waveform and recon per pair')
    pha.add_argument('--model', type=str, required=True)
    pha.add_argument('--out', type=str, required=True, help='Output file prefix')

    mrc = sub.add_parser('mrcosts', parents=[common], help='Multi-resolution band decomposition')
    mrc.add_argument('--in', dest='input', type=str, required=True)
    mrc.add_argument('--windows', type=str, default=','.join(str(w) for w in DEFAULT_WINDOWS))
    mrc.add_argument('--stride-frac', type=float, default=DEFAULT_STRIDE_FRAC)
    mrc.add_argument('--rank', type=int, default=DEFAULT_RANK)
    mrc.add_argument('--refine', choices=list(REFINEMENTS), default=DEFAULT_REFINE,
                     help='Per-window refinement (default: varpro)')
    mrc.add_argument('--bands', type=str, default='auto')
    mrc.add_argument('--taper', choices=list(TAPERS), default='hann')
    mrc.add_argument('--pair-tol', type=float, default=DEFAULT_PAIR_TOL)
    mrc.add_argument('--seed', type=int, default=0, help='k-means seed')
    mrc.add_argument('--truth', action='append', help='NAME=PATH truth matrix (repeatable)')
    mrc.add_argument('--out', type=str, required=True, help='Output directory')
    return parser


COMMANDS = {
    'generate': cmd_generate,
    'fit': cmd_fit,
    'phasor': cmd_phasor,
    'mrcosts': cmd_mrcosts,
}


def main(argv=None):
    """
    Parse arguments and run one command. Returns 0 on success and 1 on a
    runtime failure; usage errors exit with status 2 from argparse.
    """
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    args.argv = argv
    setup_logging(args.verbose, args.log_file)

    try:
        return COMMANDS[args.command](args, parser)
    except (PhasorDmdError, OSError) as e:
        logger.error(f"{args.command} failed: {e}")
        return 1


if __name__ == "__main__":
    sys.exit(main())
