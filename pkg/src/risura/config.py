"""Scenario configuration and its YAML file format.

A config file is a YAML mapping of sections; each section holds the fields
listed in :data:`SECTIONS`.  Omitted fields keep their defaults, unknown
sections or keys are rejected.  Example (the desk-scale defaults)::

    array:
      M: 16            # BS antennas
      N1: 8            # RIS rows
      N2: 8            # RIS columns
      N1g: 8           # angular grid length, first axis (>= N1)
      N2g: 8           # angular grid length, second axis (>= N2)
    devices:
      K_total: 256     # device population (sets the ID width)
      Ka: 3            # active devices
      K_init: 8        # column budget handed to the detector
    frame:
      L: 3             # subblocks
      tau: [8, 8]      # per-mode channel uses; d = len(tau)
    codec:
      B_total: 18      # message bits, ID included
      R: 12            # coded bits per subblock
      parity: [0, 6, 12]
      bits_per_mode: null   # null -> split R evenly over the modes
      code_seed: 7
    channel:
      mode: ongrid     # ongrid | physical
      zeta_s: 4        # nonzeros per angular vector (ongrid)
      paths_per_device: 4
      angular_spread_deg: 15.0
      l0_db: -30.0
      d0: 1.0
      exponent_devris: 2.0
      exponent_risbs: 2.5
      dist_range: [500.0, 1000.0]
      dist_risbs: 100.0
      normalize_pathloss: true
    link:
      power_db: 20.0   # transmit power; noise variance is 1
      noise_var: 1.0
    phase1:
      estimator: genie # genie | alternating
      p_on: 0.5
      t_p: null        # null -> 4 N
      ridge: 1.0e-6
    detector:
      delta: 1.0e-6
      max_iter: 300
      tol: 1.0e-7
      kappa: 1.0e6
      prune_start: 20
      prune_every: 5
      power_rel: 1.0e-10    # prune columns below this share of the total rank-one energy
      noise_floor: 0.3      # initial cap on 1/E[beta], relative to the mean entry energy
      floor_decay: 0.9      # per-sweep shrink factor of that cap
      init: dual            # dual | random | svd
      select_settle: 50     # prune-free sweeps both dual chains need before one is kept
    run:
      seed: 0
"""

from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
import math

import yaml

__all__ = ["SystemConfig", "SECTIONS", "load_config", "dump_config", "config_from_mapping"]


@dataclass(frozen=True)
class SystemConfig:
    # array
    M: int = 16
    N1: int = 8
    N2: int = 8
    N1g: int = 8
    N2g: int = 8
    # devices
    K_total: int = 256
    Ka: int = 3
    K_init: int = 8
    # frame
    L: int = 3
    tau: tuple = (8, 8)
    # codec
    B_total: int = 18
    R: int = 12
    parity: tuple = (0, 6, 12)
    bits_per_mode: tuple = None
    code_seed: int = 7
    # channel
    mode: str = "ongrid"
    zeta_s: int = 4
    paths_per_device: int = 4
    angular_spread_deg: float = 15.0
    l0_db: float = -30.0
    d0: float = 1.0
    exponent_devris: float = 2.0
    exponent_risbs: float = 2.5
    dist_range: tuple = (500.0, 1000.0)
    dist_risbs: float = 100.0
    normalize_pathloss: bool = True
    # link
    power_db: float = 20.0
    noise_var: float = 1.0
    # phase1
    estimator: str = "genie"
    p_on: float = 0.5
    t_p: int = None
    ridge: float = 1e-6
    # detector
    delta: float = 1e-6
    max_iter: int = 300
    tol: float = 1e-7
    kappa: float = 1e6
    prune_start: int = 20
    prune_every: int = 5
    power_rel: float = 1e-10
    noise_floor: float = 0.3
    floor_decay: float = 0.9
    init: str = "dual"
    select_settle: int = 50
    # run
    seed: int = 0

    def __post_init__(self):
        for name in ("tau", "parity", "dist_range", "bits_per_mode"):
            value = getattr(self, name)
            if value is not None and not isinstance(value, tuple):
                object.__setattr__(self, name, tuple(value))
        self.validate()

    @property
    def N(self):
        return self.N1 * self.N2

    @property
    def Ng(self):
        return self.N1g * self.N2g

    @property
    def d(self):
        return len(self.tau)

    @property
    def tau_total(self):
        return math.prod(self.tau)

    @property
    def pilot_length(self):
        return self.t_p if self.t_p is not None else 4 * self.N

    @property
    def mode_bits(self):
        """Bits carried by each tensor mode within one subblock."""
        if self.bits_per_mode is not None:
            return tuple(int(b) for b in self.bits_per_mode)
        base, extra = divmod(self.R, self.d)
        return tuple(base + (1 if i < extra else 0) for i in range(self.d))

    @property
    def power(self):
        return 0.0 if math.isinf(self.power_db) and self.power_db < 0 else 10.0 ** (self.power_db / 10.0)

    def validate(self):
        problems = []
        for name in ("M", "N1", "N2", "N1g", "N2g", "K_total", "K_init", "L", "R"):
            if getattr(self, name) < 1:
                problems.append(f"{name} must be >= 1")
        if self.N1g < self.N1 or self.N2g < self.N2:
            problems.append("grid lengths must not be shorter than the panel dimensions")
        if not 1 <= self.Ka <= self.K_init <= self.K_total:
            problems.append("need 1 <= Ka <= K_init <= K_total (use power_db: -.inf for a signal-free run)")
        if len(self.tau) < 1 or any(t < 1 for t in self.tau):
            problems.append("tau must be a non-empty list of positive channel-use factors")
        if len(self.parity) != self.L:
            problems.append(f"parity profile has {len(self.parity)} entries, expected L={self.L}")
        elif self.parity[0] != 0:
            problems.append("the first block carries no parity")
        elif any(p < 0 or p > self.R for p in self.parity):
            problems.append("parity counts must lie in [0, R]")
        elif sum(self.R - p for p in self.parity) != self.B_total:
            problems.append(
                f"info bits sum to {sum(self.R - p for p in self.parity)}, expected B_total={self.B_total}"
            )
        if self.bits_per_mode is not None:
            if len(self.bits_per_mode) != len(self.tau) or sum(self.bits_per_mode) != self.R:
                problems.append("bits_per_mode must have one entry per mode and sum to R")
        if self.mode not in ("ongrid", "physical"):
            problems.append(f"unknown channel mode {self.mode!r}")
        if self.estimator not in ("genie", "alternating"):
            problems.append(f"unknown phase-1 estimator {self.estimator!r}")
        if not 0.0 <= self.p_on <= 1.0:
            problems.append("p_on must lie in [0, 1]")
        if self.zeta_s < 1 or self.zeta_s > self.N1g * self.N2g:
            problems.append("zeta_s must lie in [1, Ng]")
        if self.delta <= 0:
            problems.append("delta must be positive")
        if self.kappa <= 1:
            problems.append("kappa must exceed 1")
        if self.max_iter < 1 or self.prune_start < 1 or self.prune_every < 1:
            problems.append("max_iter, prune_start and prune_every must be >= 1")
        if self.init not in ("dual", "random", "svd"):
            problems.append(f"unknown detector init {self.init!r}")
        if self.select_settle < 1:
            problems.append("select_settle must be >= 1")
        if self.power_rel < 0 or self.noise_floor < 0 or not 0 < self.floor_decay <= 1:
            problems.append("need power_rel >= 0, noise_floor >= 0 and 0 < floor_decay <= 1")
        if problems:
            raise ValueError("invalid SystemConfig: " + "; ".join(problems))

    def with_(self, **changes):
        return replace(self, **changes)


SECTIONS = {
    "array": ("M", "N1", "N2", "N1g", "N2g"),
    "devices": ("K_total", "Ka", "K_init"),
    "frame": ("L", "tau"),
    "codec": ("B_total", "R", "parity", "bits_per_mode", "code_seed"),
    "channel": (
        "mode", "zeta_s", "paths_per_device", "angular_spread_deg", "l0_db", "d0",
        "exponent_devris", "exponent_risbs", "dist_range", "dist_risbs", "normalize_pathloss",
    ),
    "link": ("power_db", "noise_var"),
    "phase1": ("estimator", "p_on", "t_p", "ridge"),
    "detector": (
        "delta", "max_iter", "tol", "kappa", "prune_start", "prune_every",
        "power_rel", "noise_floor", "floor_decay", "init", "select_settle",
    ),
    "run": ("seed",),
}

_FIELD_NAMES = {f.name for f in fields(SystemConfig)}
assert _FIELD_NAMES == {name for names in SECTIONS.values() for name in names}


def config_from_mapping(data):
    """Build a config from a ``{section: {key: value}}`` mapping."""
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ValueError("config root must be a mapping of sections")
    flat = {}
    for section, values in data.items():
        if section not in SECTIONS:
            raise ValueError(f"unknown config section {section!r}")
        if values is None:
            continue
        if not isinstance(values, dict):
            raise ValueError(f"section {section!r} must be a mapping")
        for key, value in values.items():
            if key not in SECTIONS[section]:
                raise ValueError(f"unknown key {key!r} in section {section!r}")
            flat[key] = value
    if "power_db" in flat and isinstance(flat["power_db"], str):
        flat["power_db"] = float(flat["power_db"])
    return SystemConfig(**flat)


def load_config(path):
    with open(path, "r") as fh:
        return config_from_mapping(yaml.safe_load(fh))


def dump_config(cfg, path=None):
    """Serialize to the sectioned YAML layout; returns the text."""
    flat = asdict(cfg)
    data = {}
    for section, names in SECTIONS.items():
        data[section] = {n: list(flat[n]) if isinstance(flat[n], tuple) else flat[n] for n in names}
    text = yaml.safe_dump(data, sort_keys=False)
    if path is not None:
        Path(path).write_text(text)
    return text


def coerce_field(name, raw):
    """Parse a command-line string into the type of config field ``name``."""
    if name not in _FIELD_NAMES:
        raise ValueError(f"{name!r} is not a SystemConfig field")
    value = yaml.safe_load(raw) if isinstance(raw, str) else raw
    default = next(f.default for f in fields(SystemConfig) if f.name == name)
    if isinstance(default, bool):
        return bool(value)
    if isinstance(default, int) and not isinstance(value, (list, tuple)):
        return int(value)
    if isinstance(default, float):
        return float(value)
    if isinstance(default, tuple) and value is not None:
        return tuple(value)
    return value
