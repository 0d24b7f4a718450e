"""Flat key=value experiment configuration.

One key per line, `#` comments, no sections.  Unknown keys and duplicate keys
are hard errors carrying line numbers: silent typo tolerance costs more than
it saves in a reproducibility tool.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields

from .errors import ConfigurationError

EXPERIMENTS = ("qsd_accuracy", "contraction_vs_N", "chaos_vs_N",
               "boundary_fraction", "exit_scaling", "uniform_survival",
               "lyapunov_decay")

POTENTIALS = ("double_well_1d", "tilted_double_well_1d", "radial_well_2d",
              "quadratic_1d")


def _float_list(text):
    return [float(v) for v in str(text).split(",") if v != ""]


def _int_list(text):
    return [int(v) for v in str(text).split(",") if v != ""]


@dataclass
class ExperimentConfig:
    experiment: str = ""
    potential: str = "double_well_1d"
    epsilon: float = 0.5
    epsilons: list = field(default_factory=list)      # multi-eps experiments
    tilt: float = 0.1
    height: float = 1.0
    n_particles: list = field(default_factory=lambda: [1000])
    dt: float = 1e-3
    horizon: float = 200.0
    burn_in: float = 100.0
    block_time: float = 2.0
    snapshot_every: float = 0.1
    times: list = field(default_factory=lambda: [5.0, 50.0, 200.0])
    replicas: int = 100
    paths: int = 400
    seed: int = 20240901
    threads: int = 1
    oracle_resolution: int = 2048
    init_lo: float = -1.5
    init_hi: float = 1.5
    x0: float = -1.0
    y0: float = 1.0
    grid_lo: float = -1.5
    grid_hi: float = 1.5
    grid_points: int = 64
    alpha: float = 0.05
    beta: float = 0.05
    boundary_alpha: float = 0.5
    v0: float = 0.0            # 0 = derive 4 sup U + 1
    output_dir: str = ""
    tv_threshold: float = 0.05
    slope_threshold: float = -0.3
    ratio_threshold: float = 2.0
    factor_threshold: float = 3.0
    freq_threshold: float = 1e-2

    def potential_params(self, epsilon=None):
        params = {"epsilon": self.epsilon if epsilon is None else epsilon}
        if self.potential == "tilted_double_well_1d":
            params["tilt"] = self.tilt
            params["height"] = self.height
        return params


_TYPES = {
    "experiment": str, "potential": str, "output_dir": str,
    "epsilon": float, "tilt": float, "height": float, "dt": float,
    "horizon": float, "burn_in": float, "block_time": float,
    "snapshot_every": float, "init_lo": float, "init_hi": float,
    "x0": float, "y0": float, "grid_lo": float, "grid_hi": float,
    "alpha": float, "beta": float, "boundary_alpha": float, "v0": float,
    "tv_threshold": float, "slope_threshold": float, "ratio_threshold": float,
    "factor_threshold": float, "freq_threshold": float,
    "replicas": int, "paths": int, "seed": int, "threads": int,
    "oracle_resolution": int, "grid_points": int,
    "epsilons": _float_list, "times": _float_list, "n_particles": _int_list,
}

_POSITIVE = ("epsilon", "dt", "horizon", "block_time", "snapshot_every",
             "replicas", "paths", "threads", "oracle_resolution",
             "grid_points", "height")


def parse_config(text):
    """Parse the flat format into an ExperimentConfig; errors carry lines."""
    seen = {}
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"line {lineno}: expected key=value")
        key, _, val = line.partition("=")
        key = key.strip()
        val = val.strip()
        if key not in _TYPES:
            raise ConfigurationError(f"line {lineno}: unknown key {key!r}")
        if key in seen:
            raise ConfigurationError(
                f"line {lineno}: duplicate key {key!r} (first on line "
                f"{seen[key]})")
        seen[key] = lineno
        try:
            values[key] = _TYPES[key](val)
        except ValueError as exc:
            raise ConfigurationError(
                f"line {lineno}: bad value for {key}: {exc}") from None
    cfg = ExperimentConfig(**values)
    validate_config(cfg)
    return cfg


def apply_overrides(cfg, pairs):
    """Apply --key value command-line overrides onto a parsed config."""
    for key, val in pairs:
        if key not in _TYPES:
            raise ConfigurationError(f"unknown override key {key!r}")
        try:
            setattr(cfg, key, _TYPES[key](val))
        except ValueError as exc:
            raise ConfigurationError(f"bad override for {key}: {exc}") from None
    validate_config(cfg)
    return cfg


def validate_config(cfg):
    if cfg.experiment not in EXPERIMENTS:
        raise ConfigurationError(
            f"experiment must be one of {', '.join(EXPERIMENTS)}; "
            f"got {cfg.experiment!r}")
    if cfg.potential not in POTENTIALS:
        raise ConfigurationError(f"unknown potential {cfg.potential!r}")
    for name in _POSITIVE:
        if getattr(cfg, name) <= 0:
            raise ConfigurationError(f"{name} must be positive")
    if any(n < 2 for n in cfg.n_particles):
        raise ConfigurationError("n_particles entries must be >= 2")
    if cfg.burn_in < 0 or cfg.burn_in >= cfg.horizon:
        raise ConfigurationError("need 0 <= burn_in < horizon")
    if cfg.experiment in ("exit_scaling", "uniform_survival") \
            and len(cfg.epsilons) < 2:
        raise ConfigurationError(
            f"{cfg.experiment} needs an `epsilons` list of >= 2 values")
    if any(e <= 0 for e in cfg.epsilons):
        raise ConfigurationError("epsilons must be positive")
    if cfg.experiment == "chaos_vs_N":
        if len(cfg.times) < 1 or sorted(cfg.times) != cfg.times:
            raise ConfigurationError("times must be ascending and non-empty")
    if cfg.experiment == "contraction_vs_N" and len(cfg.n_particles) < 2:
        raise ConfigurationError("contraction_vs_N needs >= 2 particle counts")
    if not 0.0 < cfg.alpha < 0.25:
        raise ConfigurationError("alpha must lie in (0, 1/4)")
    if cfg.beta <= 0:
        raise ConfigurationError("beta must be positive")
    return cfg


def config_as_dict(cfg):
    return {f.name: getattr(cfg, f.name) for f in fields(cfg)}
