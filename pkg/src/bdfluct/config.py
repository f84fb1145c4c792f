"""Experiment configuration: an INI file plus command-line overrides.

Schema (every key optional, defaults shown)::

    [kernel]
    type = constant          ; constant | power_law | list
    truncation = 200         ; K, largest tracked cluster size
    a = 1.0                  ; constant / power-law prefactor of a_k
    b = 1.0                  ; constant / power-law prefactor of b_k
    a_exponent = 0.0         ; power_law: a_k = a * k**a_exponent
    b_exponent = 0.0         ; power_law: b_k = b * k**b_exponent
    a_list =                 ; list: a_1, ..., a_{K-1}
    b_list =                 ; list: b_2, ..., b_K

    [weights]
    alpha = 2.0              ; w_k = k**alpha, alpha > 1
    beta = 3.0               ; companion r_k = k**beta, beta > alpha

    [run]
    seed = 2024
    n = 10000                ; mass for simulate
    n_list = 1000, 10000, 100000
    replicas = 100
    t_end = 1.0
    samples = 33
    k_stat = 10
    k_out = 10
    init = monomers          ; monomers | equilibrium
    out = out

    [ode]
    rtol = 1e-8
    atol = 1e-12

    [fluctuate]
    mode = stationary        ; stationary | ode | em
    dt = 0.001
    paths = 2000

Errors name the file, the line and the offending key.
"""
from __future__ import annotations

import configparser
import re
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ConfigError
from .operators import RateKernel, WeightSequence

_SCHEMA = {
    "kernel": {"type", "truncation", "a", "b", "a_exponent", "b_exponent", "a_list", "b_list"},
    "weights": {"alpha", "beta"},
    "run": {"seed", "n", "n_list", "replicas", "t_end", "samples", "k_stat", "k_out", "init",
            "out"},
    "ode": {"rtol", "atol"},
    "fluctuate": {"mode", "dt", "paths"},
}


@dataclass
class ExperimentConfig:
    kernel_type: str = "constant"
    truncation: int = 200
    a: float = 1.0
    b: float = 1.0
    a_exponent: float = 0.0
    b_exponent: float = 0.0
    a_list: list = field(default_factory=list)
    b_list: list = field(default_factory=list)
    alpha: float = 2.0
    beta: float = 3.0
    seed: int = 2024
    n: int = 10_000
    n_list: list = field(default_factory=lambda: [1000, 10_000, 100_000])
    replicas: int = 100
    t_end: float = 1.0
    samples: int = 33
    k_stat: int = 10
    k_out: int = 10
    init: str = "monomers"
    out: str = "out"
    rtol: float = 1e-8
    atol: float = 1e-12
    mode: str = "stationary"
    dt: float = 1e-3
    paths: int = 2000
    source: str = "<defaults>"
    explicit: set = field(default_factory=set)  # fields set by file or flags
    lines: dict = field(default_factory=dict)  # field name -> line in the file

    def kernel(self) -> RateKernel:
        if self.kernel_type == "constant":
            return RateKernel.constant(self.truncation, self.a, self.b)
        if self.kernel_type == "power_law":
            return RateKernel.power_law(self.truncation, self.a, self.a_exponent, self.b,
                                        self.b_exponent)
        return RateKernel.from_lists(self.a_list, self.b_list)

    def weights(self) -> WeightSequence:
        return WeightSequence.power_law(self.alpha)

    def companion(self) -> WeightSequence:
        return WeightSequence.power_law(self.beta)

    def as_dict(self) -> dict:
        """Experiment parameters (the output directory is not one of them)."""
        d = asdict(self)
        for key in ("source", "explicit", "lines", "out"):
            d.pop(key)
        return d

    def _error(self, section: str, name: str, msg: str) -> ConfigError:
        line = self.lines.get(name)
        where = f"{self.source}:{line}" if line else self.source
        return ConfigError(f"{where}: [{section}] {msg}")

    def validate(self) -> "ExperimentConfig":
        """Cross-field checks; raises :class:`ConfigError`."""
        if self.kernel_type not in ("constant", "power_law", "list"):
            raise self._error("kernel", "kernel_type", "type must be constant, power_law or list")
        if self.kernel_type == "list":
            if not self.a_list or len(self.a_list) != len(self.b_list):
                raise self._error("kernel", "a_list",
                                  "a_list and b_list need equal, nonzero lengths")
            self.truncation = len(self.a_list) + 1
        if self.truncation < 2:
            raise self._error("kernel", "truncation", "truncation must be at least 2")
        if not self.alpha > 1:
            raise self._error("weights", "alpha", "alpha must exceed 1")
        if not self.beta > self.alpha:
            raise self._error("weights", "beta", "beta must exceed alpha")
        # unset block sizes follow a small truncation down
        for name in ("k_stat", "k_out"):
            if name not in self.explicit:
                setattr(self, name, min(getattr(self, name), self.truncation))
        if not 1 <= self.k_stat <= self.truncation:
            raise self._error("run", "k_stat", "k_stat must lie in 1..truncation")
        if not 1 <= self.k_out <= self.truncation:
            raise self._error("run", "k_out", "k_out must lie in 1..truncation")
        if self.n < 1 or any(n < 1 for n in self.n_list):
            raise self._error("run", "n" if self.n < 1 else "n_list", "masses must be positive")
        if self.replicas < 2:
            raise self._error("run", "replicas", "replicas must be at least 2")
        if self.t_end < 0:
            raise self._error("run", "t_end", "t_end must be nonnegative")
        if self.samples < 1:
            raise self._error("run", "samples", "samples must be positive")
        if self.init not in ("monomers", "equilibrium"):
            raise self._error("run", "init", "init must be monomers or equilibrium")
        if self.mode not in ("stationary", "ode", "em"):
            raise self._error("fluctuate", "mode", "mode must be stationary, ode or em")
        if self.dt <= 0 or self.paths < 2:
            raise self._error("fluctuate", "dt" if self.dt <= 0 else "paths",
                              "need dt > 0 and paths >= 2")
        try:
            self.kernel()
            self.weights().check_companion(self.companion())
        except ValueError as exc:
            raise ConfigError(f"{self.source}: {exc}") from None
        return self


# (section, key) -> (field name, converter)
_FIELDS = {
    ("kernel", "type"): ("kernel_type", str),
    ("kernel", "truncation"): ("truncation", int),
    ("kernel", "a"): ("a", float),
    ("kernel", "b"): ("b", float),
    ("kernel", "a_exponent"): ("a_exponent", float),
    ("kernel", "b_exponent"): ("b_exponent", float),
    ("kernel", "a_list"): ("a_list", "floats"),
    ("kernel", "b_list"): ("b_list", "floats"),
    ("weights", "alpha"): ("alpha", float),
    ("weights", "beta"): ("beta", float),
    ("run", "seed"): ("seed", int),
    ("run", "n"): ("n", int),
    ("run", "n_list"): ("n_list", "ints"),
    ("run", "replicas"): ("replicas", int),
    ("run", "t_end"): ("t_end", float),
    ("run", "samples"): ("samples", int),
    ("run", "k_stat"): ("k_stat", int),
    ("run", "k_out"): ("k_out", int),
    ("run", "init"): ("init", str),
    ("run", "out"): ("out", str),
    ("ode", "rtol"): ("rtol", float),
    ("ode", "atol"): ("atol", float),
    ("fluctuate", "mode"): ("mode", str),
    ("fluctuate", "dt"): ("dt", float),
    ("fluctuate", "paths"): ("paths", int),
}


def _convert(raw: str, kind):
    if kind == "floats":
        return [float(v) for v in raw.replace(",", " ").split()]
    if kind == "ints":
        return [int(float(v)) for v in raw.replace(",", " ").split()]
    if kind is int:
        v = float(raw)
        if v != int(v):
            raise ValueError(f"{raw!r} is not an integer")
        return int(v)
    return kind(raw.strip())


def _line_index(text: str) -> dict:
    """``(section, key) -> line number`` by a plain scan of the file."""
    where = {}
    section = None
    for no, line in enumerate(text.splitlines(), 1):
        s = line.strip()
        m = re.match(r"\[([^\]]+)\]", s)
        if m:
            section = m.group(1).strip()
            where[(section, None)] = no
            continue
        m = re.match(r"([A-Za-z0-9_\-]+)\s*[=:]", s)
        if m and section is not None:
            where[(section, m.group(1).lower())] = no
    return where


def load_config(path: str | None) -> ExperimentConfig:
    """Read an INI file (``None`` gives the defaults).  Does not validate."""
    cfg = ExperimentConfig()
    if path is None:
        return cfg
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    try:
        parser.read_string(text, source=path)
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from None
    lines = _line_index(text)
    for section in parser.sections():
        if section not in _SCHEMA:
            raise ConfigError(f"{path}:{lines.get((section, None), '?')}: unknown section "
                              f"[{section}]")
        for key, raw in parser.items(section):
            line = lines.get((section, key), "?")
            if key not in _SCHEMA[section]:
                raise ConfigError(f"{path}:{line}: [{section}] unknown key {key!r}")
            name, kind = _FIELDS[(section, key)]
            try:
                value = _convert(raw, kind)
            except ValueError:
                msg = f"{path}:{line}: [{section}] {key}: cannot parse {raw!r}"
                raise ConfigError(msg) from None
            setattr(cfg, name, value)
            cfg.explicit.add(name)
            cfg.lines[name] = line
    cfg.source = path
    return cfg


def apply_overrides(cfg: ExperimentConfig, **flags) -> ExperimentConfig:
    """Command-line values win over the file; ``None`` means not given."""
    mapping = {"seed": "seed", "out": "out", "replicas": "replicas", "t_end": "t_end",
               "truncation": "truncation", "weights_alpha": "alpha"}
    for flag, name in mapping.items():
        value = flags.get(flag)
        if value is not None:
            setattr(cfg, name, value)
            cfg.explicit.add(name)
            cfg.lines.pop(name, None)
    n = flags.get("n")
    if n:
        # one value sets the simulation mass, several set the size ladder
        cfg.n = int(n[0])
        cfg.n_list = [int(v) for v in n]
        cfg.explicit.update({"n", "n_list"})
    return cfg


def initial_profile(cfg: ExperimentConfig, kernel: RateKernel) -> np.ndarray:
    if cfg.init == "monomers":
        c0 = np.zeros(kernel.K)
        c0[0] = 1.0
        return c0
    from .deterministic import equilibrium_density
    return equilibrium_density(kernel).profile
