"""``irwri-kit`` command line: forward | estimate-sources | invert | sweep.

Exit codes: 0 success, 2 configuration or data error, 3 numerical divergence.
"""
from __future__ import annotations

import argparse
import logging
import sys
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from .acquisition import (add_noise, read_data_block, read_manifest,
                          synthesize_data, write_data_block, write_manifest)
from .config import ConfigError, ExperimentConfig, load_config, write_config
from .experiments import DeskCase, SweepCell, desk_case, starting_model, sweep
from .grid_model import export_csv, read_grid, velocity_to_squared_slowness, write_grid
from .helmholtz import assemble
from .irwri import DivergenceError, InversionConfig, frequency_schedule, run_inversion, write_history
from .metrics import signature_re, write_table
from .model_update import RegularizerConfig
from .source_estimation import (default_lambda, estimate_conventional, estimate_joint,
                                estimate_separate, write_signature_csv)

log = logging.getLogger("irwri_kit")

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED = 0, 2, 3
MANIFEST = "manifest.json"


class DataError(RuntimeError):
    """Missing or inconsistent data files."""


def _case(cfg: ExperimentConfig, n_sources=None) -> DeskCase:
    g, m, a = cfg.grid, cfg.model, cfg.acquisition
    velocity = None
    if m.true_file:
        velocity, dx, dz = read_grid(m.true_file)
        if not (np.isclose(dx, g.h) and np.isclose(dz, g.h)):
            raise ConfigError(f"model.true_file: spacing {dx}x{dz} differs from grid.h = {g.h}")
    return desk_case(m.generator, g.nx, g.nz, g.h, g.npml,
                     a.n_sources if n_sources is None else n_sources, a.n_receivers,
                     a.source_depth, m.water_rows, a.signature_seed, velocity)


def _start(cfg: ExperimentConfig, case: DeskCase):
    m = cfg.model
    if m.start == "smooth":
        return starting_model(case, radius=m.start_radius)
    if m.start == "gradient":
        return starting_model(case, gradient=m.start_gradient)
    v, dx, dz = read_grid(m.start_file)
    if v.shape != case.grid.physical_shape:
        raise ConfigError(f"model.start_file: shape {v.shape} differs from the grid")
    return case.m_true.with_values(velocity_to_squared_slowness(v, case.grid, bounds=None).values)


def _data_file(freq: float) -> str:
    return f"data_{freq:08.3f}Hz.bin"


def _load_data(out: Path, case: DeskCase, frequencies) -> dict:
    manifest_path = out / MANIFEST
    if not manifest_path.is_file():
        raise DataError(f"{manifest_path} not found; run 'forward' first")
    manifest = read_manifest(manifest_path)
    files = {float(k): v for k, v in manifest["files"].items()}
    data = {}
    for f in frequencies:
        if f not in files:
            raise DataError(f"no data for {f:g} Hz in {manifest_path}")
        D = read_data_block(out / files[f])
        if D.values.shape != (case.geometry.n_receivers, case.geometry.n_sources):
            raise DataError(f"{files[f]}: shape {D.values.shape} does not match the acquisition")
        data[f] = D.values
    return data


def _figures(out: Path, fn, *args, **kwargs):
    """Figures are extras: failures are logged and never change the exit code."""
    try:
        from . import plotting
        getattr(plotting, fn)(out, *args, **kwargs)
    except Exception as exc:  # pragma: no cover - figure backends vary
        log.warning("figure %s skipped: %s", out, exc)


def cmd_forward(cfg: ExperimentConfig, out: Path) -> int:
    case = _case(cfg)
    g = case.grid
    files = {}
    for f in cfg.frequencies.values:
        D = synthesize_data(case.m_true, case.geometry, case.signatures.at(f), 2 * np.pi * f,
                            cfg.frequencies.stencil, case.pml_velocity)
        if np.isfinite(cfg.noise.snr_db):
            D = add_noise(D, cfg.noise.snr_db, seed=(cfg.run.seed, int(round(f * 1000))))
        name = _data_file(f)
        write_data_block(out / name, D)
        files[repr(float(f))] = name
    write_grid(out / "true_model.grd", case.m_true.velocity(), g.dx, g.dz)
    write_manifest(out / MANIFEST, {
        "frequencies_hz": [float(f) for f in cfg.frequencies.values],
        "files": files,
        "n_sources": case.geometry.n_sources,
        "n_receivers": case.geometry.n_receivers,
        "source_nodes": [int(i) for i in case.geometry.source_nodes],
        "receiver_nodes": [int(i) for i in case.geometry.receiver_nodes],
        "snr_db": cfg.noise.snr_db if np.isfinite(cfg.noise.snr_db) else None,
    })
    _figures(out / "true_model.png", "plot_model", case.m_true.velocity(), g.dx, g.dz, "true model")
    return EXIT_OK


def cmd_estimate_sources(cfg: ExperimentConfig, out: Path) -> int:
    case = _case(cfg)
    freqs = [float(f) for f in cfg.frequencies.values]
    data = _load_data(out, case, freqs)
    m = case.m_true if cfg.estimate.background == "true" else _start(cfg, case)
    est = {k: [] for k in cfg.estimate.methods}
    for f in freqs:
        A = assemble(m, 2 * np.pi * f, cfg.frequencies.stencil, case.pml_velocity)
        lam = default_lambda(A, case.geometry, cfg.estimate.lambda_scale)
        if "conventional" in est:
            est["conventional"].append(estimate_conventional(A, case.geometry, data[f]).signatures)
        if "separate" in est:
            est["separate"].append(estimate_separate(A, case.geometry, data[f], lam)[1].signatures)
        if "joint" in est:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", UserWarning)
                _, S = estimate_joint(A, case.geometry, data[f], lam)
            est["joint"].append(np.diag(S.S))
    truth = np.array([case.signatures.at(f) for f in freqs])
    est = {k: np.array(v) for k, v in est.items()}
    write_signature_csv(out / "signatures.csv", freqs, {"true": truth, **est})
    rows = []
    for k, s in est.items():
        for i, re in enumerate(signature_re(truth, s)):
            rows.append((k, i, float(re)))
    write_table(out / "signature_re.csv", ["method", "source", "re"], rows)
    _figures(out / "signatures.png", "plot_signatures", freqs, truth, est)
    return EXIT_OK


def _inversion_config(cfg: ExperimentConfig) -> InversionConfig:
    inv = cfg.inversion
    sched = frequency_schedule(cfg.paths(), inv.step, inv.batch_size, inv.overlap)
    return InversionConfig(
        algorithm=inv.algorithm,
        schedule=tuple(tuple(tuple(b) for b in path) for path in sched),
        max_iterations=inv.max_iterations, min_relative_drop=inv.min_relative_drop,
        lambda_scale=inv.lambda_scale, regularizer=RegularizerConfig(gamma_scale=inv.gamma_scale),
        stencil_kind=cfg.frequencies.stencil, carry_duals=inv.carry_duals)


def cmd_invert(cfg: ExperimentConfig, out: Path) -> int:
    case = _case(cfg)
    icfg = _inversion_config(cfg)
    data = _load_data(out, case, icfg.frequencies())
    truth = {f: case.signatures.at(f) for f in icfg.frequencies()}
    m0 = _start(cfg, case)
    g = case.grid
    write_grid(out / "start_model.grd", m0.velocity(), g.dx, g.dz)
    try:
        res = run_inversion(icfg, data, m0, case.geometry, truth, case.m_true, case.pml_velocity)
    except DivergenceError as exc:
        if exc.state is not None:
            write_grid(out / "last_good_model.grd", exc.state.m.velocity(), g.dx, g.dz)
        raise
    for ip, ib, m in res.snapshots:
        write_grid(out / f"model_path{ip}_batch{ib:03d}.grd", m.velocity(), g.dx, g.dz)
    v = res.model.velocity()
    write_grid(out / "final_model.grd", v, g.dx, g.dz)
    export_csv(out / "final_model.csv", v, g.dx, g.dz, "velocity_m_per_s")
    write_history(out / "history.csv", res.history)
    _figures(out / "final_model.png", "plot_model", v, g.dx, g.dz, f"{icfg.algorithm} final model")
    _figures(out / "history.png", "plot_history", res.history)
    return EXIT_OK


def cmd_sweep(cfg: ExperimentConfig, out: Path) -> int:
    s, g, m, a = cfg.sweep, cfg.grid, cfg.model, cfg.acquisition
    case_kwargs = dict(model=m.generator, nx=g.nx, nz=g.nz, h=g.h, npml=g.npml,
                       n_receivers=a.n_receivers, water_rows=m.water_rows,
                       seed=a.signature_seed)
    base = SweepCell(radius=m.start_radius,
                     snr=cfg.noise.snr_db if np.isfinite(cfg.noise.snr_db) else None,
                     source_depth=a.source_depth, n_sources=a.n_sources)
    seeds = [cfg.run.seed + k for k in range(s.seeds)]
    rows = sweep(case_kwargs, base, s.axis, s.values, s.second_axis or None,
                 s.second_values or (None,), cfg.frequencies.values, seeds,
                 cfg.estimate.lambda_scale, cfg.estimate.methods, workers=cfg.run.threads)
    header = [s.axis, s.second_axis or "none", "method", "mean_re", "n_seeds"]
    write_table(out / "sweep.csv", header, rows)
    _figures(out / "sweep.png", "plot_sweep",
             [(r[1], r[0], r[2], r[3]) for r in rows], s.axis)
    return EXIT_OK


COMMANDS = {"forward": cmd_forward, "estimate-sources": cmd_estimate_sources,
            "invert": cmd_invert, "sweep": cmd_sweep}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="irwri-kit", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", type=Path, help="INI experiment file (defaults if omitted)")
    p.add_argument("--out", type=Path, default=Path("."), help="output directory")
    p.add_argument("--seed", type=int, help="overrides run.seed")
    p.add_argument("--threads", type=int, help="overrides run.threads (sweep worker processes)")
    p.add_argument("-v", "--verbose", action="count", default=0)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * args.verbose,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg.run.seed = args.seed
        if args.threads is not None:
            cfg.run.threads = args.threads
        cfg.validate()
        args.out.mkdir(parents=True, exist_ok=True)
        write_config(args.out / f"resolved_{args.command}.ini", cfg)
        return COMMANDS[args.command](cfg, args.out)
    except (ConfigError, DataError, OSError) as exc:
        print(f"irwri-kit: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DivergenceError as exc:
        print(f"irwri-kit: diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
