"""Run configuration.

An INI file (``configparser`` grammar: ``[section]`` headers and
``key = value`` lines, ``#`` comments).  Every key has a default, so an
empty file is a valid configuration for ``simulate`` and ``cv``.

::

    [run]
    method = cos            # cos | block
    seed = 0
    threads = 0             # 0 = all available cores

    [paths]
    grid = grid.csv
    regions = plots.csv     # or .geojson
    outcomes = outcomes.csv
    prediction_regions = units.csv
    groups =                # optional region_id,group file for totals
    layout =                # optional O/K layout file for simulate
    output = out

    [prior]
    beta = gaussian         # gaussian | flat
    beta_mean = 0
    beta_var = 1000
    sigma2_shape = 2
    sigma2_scale = 2
    tau2_shape = 2
    tau2_scale = 2
    phi_low = 0.006
    phi_high = 30

    [kernel]
    gamma = 0.6             # taper range, ``inf`` for none

    [block]
    factor = 3              # coarse cell = factor x factor fine pixels

    [mcmc]
    chains = 4
    warmup = 500
    sampling = 500
    thin = 10
    target_accept = 0.3

    [simulate]
    design = small          # small | large | both
    replicates = 100

    [cv]
    k = 10
    synthetic_regions = 62
"""
from __future__ import annotations

import configparser
import hashlib
import math
import os
from dataclasses import dataclass
from pathlib import Path

from .errors import ConfigError
from .model import FlatBeta, GaussianBeta, InverseGamma, PriorSpec, Uniform
from .sampler import McmcConfig

__all__ = ["DEFAULTS", "RunConfig", "load_config", "FIT_SECTIONS"]

DEFAULTS = {
    "run": {"method": "cos", "seed": "0", "threads": "0"},
    "paths": {"grid": "", "regions": "", "outcomes": "", "prediction_regions": "", "groups": "",
              "layout": "", "output": "out"},
    "prior": {"beta": "gaussian", "beta_mean": "0", "beta_var": "1000", "sigma2_shape": "2",
              "sigma2_scale": "2", "tau2_shape": "2", "tau2_scale": "2", "phi_low": "0.006",
              "phi_high": "30"},
    "kernel": {"gamma": "0.6"},
    "block": {"factor": "3"},
    "mcmc": {"chains": "4", "warmup": "500", "sampling": "500", "thin": "10", "target_accept": "0.3"},
    "simulate": {"design": "small", "replicates": "100"},
    "cv": {"k": "10", "synthetic_regions": "62"},
}

# sections whose values determine the fitted draws
FIT_SECTIONS = ("run", "paths", "prior", "kernel", "block", "mcmc")
_FIT_EXCLUDE = {("run", "threads"), ("paths", "output"), ("paths", "prediction_regions"),
                ("paths", "groups"), ("paths", "layout")}


def _num(cp, sec, key, kind=float, positive=False, allow_inf=False):
    raw = cp.get(sec, key).strip()
    try:
        v = kind(raw)
    except ValueError:
        raise ConfigError(f"{sec}.{key}: expected {kind.__name__}, got {raw!r}") from None
    if kind is float and math.isinf(v) and not allow_inf:
        raise ConfigError(f"{sec}.{key}: must be finite")
    if positive and not v > 0:
        raise ConfigError(f"{sec}.{key}: must be positive, got {raw}")
    return v


@dataclass(eq=False)
class RunConfig:
    parser: configparser.ConfigParser
    base_dir: Path

    # ---- typed views ---------------------------------------------------
    def get(self, sec, key) -> str:
        return self.parser.get(sec, key).strip()

    @property
    def method(self) -> str:
        m = self.get("run", "method")
        if m not in ("cos", "block"):
            raise ConfigError(f"run.method: must be 'cos' or 'block', got {m!r}")
        return m

    @property
    def seed(self) -> int:
        return _num(self.parser, "run", "seed", int)

    @property
    def threads(self) -> int:
        n = _num(self.parser, "run", "threads", int)
        if n < 0:
            raise ConfigError("run.threads: must be >= 0")
        return n or (os.cpu_count() or 1)

    @property
    def gamma(self) -> float:
        return _num(self.parser, "kernel", "gamma", float, positive=True, allow_inf=True)

    @property
    def factor(self) -> int:
        return _num(self.parser, "block", "factor", int, positive=True)

    def path(self, key) -> Path | None:
        raw = self.get("paths", key)
        if not raw:
            return None
        p = Path(raw)
        return p if p.is_absolute() else self.base_dir / p

    @property
    def output(self) -> Path:
        return self.path("output") or self.base_dir / "out"

    def prior(self, n_coef: int) -> PriorSpec:
        cp = self.parser
        kind = self.get("prior", "beta")
        if kind == "flat":
            beta = FlatBeta()
        elif kind == "gaussian":
            var = _num(cp, "prior", "beta_var", positive=True)
            beta = GaussianBeta.isotropic(n_coef, var, _num(cp, "prior", "beta_mean"))
        else:
            raise ConfigError(f"prior.beta: must be 'gaussian' or 'flat', got {kind!r}")
        try:
            return PriorSpec(
                beta,
                tau2=InverseGamma(_num(cp, "prior", "tau2_shape", positive=True),
                                  _num(cp, "prior", "tau2_scale", positive=True)),
                sigma2=InverseGamma(_num(cp, "prior", "sigma2_shape", positive=True),
                                    _num(cp, "prior", "sigma2_scale", positive=True)),
                phi=Uniform(_num(cp, "prior", "phi_low", positive=True), _num(cp, "prior", "phi_high")),
            )
        except ValueError as exc:
            raise ConfigError(f"prior: {exc}") from None

    def mcmc(self, seed: int | None = None) -> McmcConfig:
        cp = self.parser
        try:
            return McmcConfig(
                n_chains=_num(cp, "mcmc", "chains", int),
                warmup=_num(cp, "mcmc", "warmup", int),
                sampling=_num(cp, "mcmc", "sampling", int),
                thin=_num(cp, "mcmc", "thin", int),
                target_accept=_num(cp, "mcmc", "target_accept"),
                seed=self.seed if seed is None else seed,
            )
        except ValueError as exc:
            raise ConfigError(f"mcmc: {exc}") from None

    # ---- validation ------------------------------------------------------
    def validate(self, require=()):
        """Check types of every key and existence of the listed path keys."""
        self.method, self.seed, self.threads, self.gamma, self.factor
        self.prior(1)
        self.mcmc()
        for key in require:
            p = self.path(key)
            if p is None:
                raise ConfigError(f"paths.{key}: required but not set")
            if not p.exists():
                raise ConfigError(f"paths.{key}: file not found: {p}")
        return self

    # ---- serialization ---------------------------------------------------
    def canonical(self, sections=None) -> str:
        """Sorted ``section.key = value`` lines; the basis of config hashes."""
        lines = []
        for sec in sorted(self.parser.sections()):
            if sections is not None and sec not in sections:
                continue
            for key in sorted(self.parser[sec]):
                lines.append(f"{sec}.{key} = {self.parser.get(sec, key).strip()}")
        return "\n".join(lines) + "\n"

    def fit_hash(self, data_hashes: dict | None = None) -> str:
        """Hash of everything that determines fit draws, including input file contents."""
        text = "\n".join(l for l in self.canonical(FIT_SECTIONS).splitlines()
                         if tuple(l.split(" = ")[0].split(".", 1)) not in _FIT_EXCLUDE)
        for k in sorted(data_hashes or {}):
            text += f"\n#{k} {data_hashes[k]}"
        return hashlib.sha256(text.encode()).hexdigest()

    def write(self, path):
        with open(path, "w") as fh:
            self.parser.write(fh)


def load_config(path=None, overrides=()) -> RunConfig:
    """Read ``path`` (optional) on top of the defaults, then apply ``section.key=value`` overrides."""
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"), interpolation=None)
    cp.read_dict(DEFAULTS)
    base = Path.cwd()
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        try:
            cp.read(path)
        except configparser.Error as exc:
            raise ConfigError(f"{path}: {exc}") from None
        base = path.resolve().parent
    for item in overrides:
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise ConfigError(f"override {item!r}: expected section.key=value")
        lhs, value = item.split("=", 1)
        sec, key = lhs.strip().split(".", 1)
        if not cp.has_section(sec):
            cp.add_section(sec)
        cp.set(sec, key.strip(), value.strip())
    for sec in cp.sections():
        if sec not in DEFAULTS:
            raise ConfigError(f"unknown config section [{sec}]")
        for key in cp[sec]:
            if key not in DEFAULTS[sec]:
                raise ConfigError(f"{sec}.{key}: unknown key")
    return RunConfig(cp, base)
