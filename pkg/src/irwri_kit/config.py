"""INI experiment configuration: parsing, validation, env overrides, resolved dump.

Every key lives in a section; unknown sections or keys are rejected.  Any
key can be overridden from the environment as ``IRWRI_<SECTION>_<KEY>``
(upper case), which takes precedence over the file.
"""
from __future__ import annotations

import configparser
import dataclasses
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import get_type_hints

from .experiments import MODELS
from .helmholtz import FIVE_POINT, MIXED_NINE_POINT
from .irwri import ALGORITHMS

__all__ = ["ConfigError", "ExperimentConfig", "load_config", "write_config", "ENV_PREFIX"]

ENV_PREFIX = "IRWRI_"


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending field."""


@dataclass
class GridSection:
    nx: int = 90
    nz: int = 30
    h: float = 25.0
    npml: int = 10


@dataclass
class ModelSection:
    generator: str = "marmousi"
    water_rows: int = 6
    true_file: str = ""
    start: str = "smooth"
    start_radius: float = 400.0
    start_gradient: float = 1.2
    start_file: str = ""


@dataclass
class AcquisitionSection:
    n_sources: int = 8
    n_receivers: int = 30
    source_depth: int = 3
    signature_seed: int = 0


@dataclass
class NoiseSection:
    snr_db: float = float("inf")


@dataclass
class FrequencySection:
    values: list = field(default_factory=lambda: [3.0 + 0.5 * k for k in range(11)])
    stencil: str = FIVE_POINT


@dataclass
class EstimateSection:
    methods: list = field(default_factory=lambda: ["conventional", "separate", "joint"])
    background: str = "start"
    lambda_scale: float = 0.1


@dataclass
class InversionSection:
    algorithm: str = "alg2"
    paths: list = field(default_factory=lambda: [3.0, 6.0, 3.0, 7.0, 3.0, 8.0])
    step: float = 0.5
    batch_size: int = 2
    overlap: int = 1
    max_iterations: int = 15
    min_relative_drop: float = 1e-3
    lambda_scale: float = 0.1
    gamma_scale: float = 0.1
    carry_duals: bool = False


@dataclass
class SweepSection:
    axis: str = "snr"
    values: list = field(default_factory=lambda: [40.0, 20.0, 10.0, 5.0])
    second_axis: str = ""
    second_values: list = field(default_factory=list)
    seeds: int = 10


@dataclass
class RunSection:
    seed: int = 0
    threads: int = 1


@dataclass
class ExperimentConfig:
    run: RunSection = field(default_factory=RunSection)
    grid: GridSection = field(default_factory=GridSection)
    model: ModelSection = field(default_factory=ModelSection)
    acquisition: AcquisitionSection = field(default_factory=AcquisitionSection)
    noise: NoiseSection = field(default_factory=NoiseSection)
    frequencies: FrequencySection = field(default_factory=FrequencySection)
    estimate: EstimateSection = field(default_factory=EstimateSection)
    inversion: InversionSection = field(default_factory=InversionSection)
    sweep: SweepSection = field(default_factory=SweepSection)

    def validate(self) -> None:
        g = self.grid
        _require(g.nx >= 3 and g.nz >= 3, "grid.nx/grid.nz", "must be >= 3")
        _require(g.h > 0, "grid.h", "must be positive")
        _require(g.npml >= 0, "grid.npml", "must be >= 0")
        _require(self.run.threads >= 1, "run.threads", "must be >= 1")
        _require(self.run.seed >= 0, "run.seed", "must be >= 0")
        m = self.model
        _require(m.start in ("smooth", "gradient", "file"), "model.start",
                 "must be smooth, gradient or file")
        _require(m.start != "file" or m.start_file, "model.start_file",
                 "required when model.start = file")
        _require(m.start_radius >= 0, "model.start_radius", "must be >= 0")
        _require(m.generator in MODELS or m.true_file, "model.generator",
                 f"must be one of {sorted(MODELS)} unless model.true_file is set")
        _require(0 <= m.water_rows < g.nz, "model.water_rows", "must lie inside the grid")
        _require(self.noise.snr_db > 0, "noise.snr_db", "must be positive (inf for noise-free)")
        a = self.acquisition
        _require(a.n_sources >= 1, "acquisition.n_sources", "must be >= 1")
        _require(a.n_receivers >= 1, "acquisition.n_receivers", "must be >= 1")
        _require(0 <= a.source_depth < g.nz, "acquisition.source_depth", "must lie inside the grid")
        f = self.frequencies
        _require(len(f.values) > 0 and all(v > 0 for v in f.values), "frequencies.values",
                 "must be a non-empty list of positive Hz")
        _require(f.stencil in (FIVE_POINT, MIXED_NINE_POINT), "frequencies.stencil",
                 f"must be {FIVE_POINT} or {MIXED_NINE_POINT}")
        e = self.estimate
        bad = set(e.methods) - {"conventional", "separate", "joint"}
        _require(not bad, "estimate.methods", f"unknown methods {sorted(bad)}")
        _require(e.background in ("start", "true"), "estimate.background", "must be start or true")
        _require(e.lambda_scale > 0, "estimate.lambda_scale", "must be positive")
        i = self.inversion
        _require(i.algorithm in ALGORITHMS, "inversion.algorithm", f"must be one of {ALGORITHMS}")
        _require(len(i.paths) % 2 == 0 and len(i.paths) > 0, "inversion.paths",
                 "must list start,end pairs")
        _require(all(s <= e_ and s > 0 for s, e_ in self.paths()), "inversion.paths",
                 "each path needs 0 < start <= end")
        _require(i.step > 0, "inversion.step", "must be positive")
        _require(i.batch_size >= 1 and 0 <= i.overlap < i.batch_size, "inversion.overlap",
                 "need batch_size >= 1 and 0 <= overlap < batch_size")
        _require(i.max_iterations >= 0, "inversion.max_iterations", "must be >= 0")
        _require(i.lambda_scale > 0, "inversion.lambda_scale", "must be positive")
        _require(i.gamma_scale >= 0, "inversion.gamma_scale", "must be >= 0")
        s = self.sweep
        axes = ("snr", "radius", "source_depth", "n_sources")
        _require(s.axis in axes, "sweep.axis", f"must be one of {axes}")
        _require(s.second_axis in axes + ("",), "sweep.second_axis", f"must be empty or one of {axes}")
        _require(s.seeds >= 1, "sweep.seeds", "must be >= 1")

    def paths(self):
        p = self.inversion.paths
        return [(p[k], p[k + 1]) for k in range(0, len(p), 2)]


def _require(ok, name, message):
    if not ok:
        raise ConfigError(f"{name}: {message}")


def _convert(name, kind, text):
    text = text.strip()
    try:
        if kind is bool:
            low = text.lower()
            if low not in ("true", "false", "yes", "no", "1", "0"):
                raise ValueError(text)
            return low in ("true", "yes", "1")
        if kind is list:
            return [float(t) if _is_number(t) else t.strip() for t in text.split(",") if t.strip()]
        return kind(text)
    except ValueError:
        raise ConfigError(f"{name}: cannot parse {text!r} as {kind.__name__}") from None


def _is_number(token):
    try:
        float(token)
    except ValueError:
        return False
    return True


def _sections(cfg):
    return {f.name: getattr(cfg, f.name) for f in dataclasses.fields(cfg)}


def load_config(path=None, environ=None) -> ExperimentConfig:
    """Read an INI file (or only defaults if ``path`` is None) and validate it."""
    cfg = ExperimentConfig()
    sections = _sections(cfg)
    parser = configparser.ConfigParser(interpolation=None)
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file {path} does not exist")
        try:
            parser.read(path)
        except configparser.Error as exc:
            raise ConfigError(f"{path}: {exc}") from None
    values = {s: dict(parser[s]) for s in parser.sections()}
    environ = os.environ if environ is None else environ
    for key, text in environ.items():
        if not key.startswith(ENV_PREFIX):
            continue
        rest = key[len(ENV_PREFIX):].lower()
        for sname in sections:
            if rest.startswith(sname + "_"):
                values.setdefault(sname, {})[rest[len(sname) + 1:]] = text
                break
        else:
            raise ConfigError(f"{key}: no such config section")
    for sname, entries in values.items():
        if sname not in sections:
            raise ConfigError(f"[{sname}]: unknown section")
        section = sections[sname]
        hints = get_type_hints(type(section))
        for key, text in entries.items():
            if key not in hints:
                raise ConfigError(f"{sname}.{key}: unknown key")
            setattr(section, key, _convert(f"{sname}.{key}", hints[key], text))
    cfg.validate()
    return cfg


def _format(value):
    if isinstance(value, list):
        return ", ".join(repr(v) if isinstance(v, float) else str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_config(path, cfg: ExperimentConfig) -> None:
    """Write the fully resolved configuration (defaults included) as INI."""
    parser = configparser.ConfigParser(interpolation=None)
    for sname, section in _sections(cfg).items():
        parser[sname] = {f.name: _format(getattr(section, f.name))
                         for f in dataclasses.fields(section)}
    with open(path, "w") as fh:
        parser.write(fh)
