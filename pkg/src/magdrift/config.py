"""Run configuration: plain-text sections of key=value lines.

Every key has a documented default; unknown sections or keys are rejected
so stale configs fail loudly.  ``effective_text`` serializes the resolved
configuration (it round-trips through ``load_config`` to identical
settings and is embedded in run manifests for reproducibility).
"""

from __future__ import annotations

import configparser
import io
from dataclasses import dataclass, field, fields as dc_fields

from .fields import CYLINDRICAL, UNIFORM


class ConfigError(ValueError):
    """Config file failed to parse or validate."""


@dataclass
class RunConfig:
    # [field]
    field_kind: str = CYLINDRICAL
    B0: float = 1.0
    R0: float = 1.0
    q_over_m: float = 1.0
    # [scaling]
    epsilon: float = 0.1
    sigma: float = 1.0
    tau: float = 1.0
    eps0: float = 1.0
    # [grid]
    L: float = 4.0
    nx: int = 64
    ny: int = 64
    nz: int = 16
    # [initial]
    profile: str = "blob"
    center_radius: float = 1.0
    width: float = 0.6
    mass: float = 20.0
    vshift_x: float = 0.0
    vshift_y: float = 0.0
    vshift_z: float = 0.0
    # [kinetic]
    particles: int = 200000
    kinetic_dt: float = 0.0          # 0 = automatic from the step guards
    kinetic_T: float = 0.5
    seed: int = 1234
    workers: int = 1
    hist_nx: int = 16
    hist_ny: int = 16
    hist_nz: int = 8
    hist_nv: int = 12
    cfl_velocity_sigmas: float = 6.0
    gyro_angle_max: float = 0.0          # 0 disables the optional resolution cap
    # [fluid]
    fluid_dt: float = 0.01
    fluid_T: float = 0.5
    picard_tol: float = 1e-10
    picard_max_iter: int = 20
    damping: float = 1.0
    floor: float = 1e-12
    # [sweep]
    epsilons: list = field(default_factory=lambda: [0.2, 0.1, 0.05, 0.025])
    checkpoints: list = field(default_factory=lambda: [0.1, 0.2, 0.3, 0.4, 0.5])
    # [output]
    directory: str = "out"
    snapshot_cadence: int = 1        # diagnostics periods between snapshots; 0 = off
    figures: bool = True


_SCHEMA = {
    "field": {"kind": ("field_kind", str), "B0": ("B0", float),
              "R0": ("R0", float), "q_over_m": ("q_over_m", float)},
    "scaling": {"epsilon": ("epsilon", float), "sigma": ("sigma", float),
                "tau": ("tau", float), "eps0": ("eps0", float)},
    "grid": {"L": ("L", float), "nx": ("nx", int), "ny": ("ny", int),
             "nz": ("nz", int)},
    "initial": {"profile": ("profile", str),
                "center_radius": ("center_radius", float),
                "width": ("width", float), "mass": ("mass", float),
                "vshift_x": ("vshift_x", float), "vshift_y": ("vshift_y", float),
                "vshift_z": ("vshift_z", float)},
    "kinetic": {"particles": ("particles", int), "dt": ("kinetic_dt", float),
                "T": ("kinetic_T", float), "seed": ("seed", int),
                "workers": ("workers", int), "hist_nx": ("hist_nx", int),
                "hist_ny": ("hist_ny", int), "hist_nz": ("hist_nz", int),
                "hist_nv": ("hist_nv", int),
                "cfl_velocity_sigmas": ("cfl_velocity_sigmas", float),
                "gyro_angle_max": ("gyro_angle_max", float)},
    "fluid": {"dt": ("fluid_dt", float), "T": ("fluid_T", float),
              "picard_tol": ("picard_tol", float),
              "picard_max_iter": ("picard_max_iter", int),
              "damping": ("damping", float), "floor": ("floor", float)},
    "sweep": {"epsilons": ("epsilons", "floatlist"),
              "checkpoints": ("checkpoints", "floatlist")},
    "output": {"directory": ("directory", str),
               "snapshot_cadence": ("snapshot_cadence", int),
               "figures": ("figures", "bool")},
}


def _convert(section, key, raw, kind):
    where = f"[{section}].{key}"
    try:
        if kind is float:
            return float(raw)
        if kind is int:
            v = float(raw)
            if v != int(v):
                raise ValueError
            return int(v)
        if kind == "bool":
            low = raw.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError
        if kind == "floatlist":
            return [float(tok) for tok in raw.replace(",", " ").split()]
        return raw.strip()
    except ValueError:
        raise ConfigError(f"{where}: cannot parse {raw!r}") from None


def _validate(cfg: RunConfig):
    def positive(name, label):
        if getattr(cfg, name) <= 0:
            raise ConfigError(f"{label} must be positive, got {getattr(cfg, name)}")

    if cfg.field_kind not in (UNIFORM, CYLINDRICAL):
        raise ConfigError(f"[field].kind must be uniform or cylindrical, "
                          f"got {cfg.field_kind!r}")
    for name, label in (("B0", "[field].B0"), ("R0", "[field].R0"),
                        ("q_over_m", "[field].q_over_m"),
                        ("sigma", "[scaling].sigma"), ("tau", "[scaling].tau"),
                        ("eps0", "[scaling].eps0"), ("L", "[grid].L"),
                        ("width", "[initial].width"), ("mass", "[initial].mass"),
                        ("picard_tol", "[fluid].picard_tol"),
                        ("fluid_dt", "[fluid].dt"),
                        ("cfl_velocity_sigmas", "[kinetic].cfl_velocity_sigmas"),
                        ):
        positive(name, label)
    if not (0.0 < cfg.epsilon <= 1.0):
        raise ConfigError(f"[scaling].epsilon must lie in (0, 1], got {cfg.epsilon}")
    for name, label in (("nx", "[grid].nx"), ("ny", "[grid].ny"),
                        ("nz", "[grid].nz")):
        if getattr(cfg, name) < 8:
            raise ConfigError(f"{label} must be >= 8")
    if cfg.profile not in ("blob", "ring", "radial"):
        raise ConfigError(f"[initial].profile must be blob, ring or radial")
    if cfg.particles < 0:
        raise ConfigError("[kinetic].particles must be nonnegative")
    if cfg.workers < 1:
        raise ConfigError("[kinetic].workers must be at least 1")
    if cfg.kinetic_dt < 0:
        raise ConfigError("[kinetic].dt must be nonnegative (0 = automatic)")
    if cfg.gyro_angle_max < 0:
        raise ConfigError("[kinetic].gyro_angle_max must be nonnegative (0 = off)")
    if cfg.kinetic_T < 0 or cfg.fluid_T < 0:
        raise ConfigError("run horizons must be nonnegative")
    for h, lab in ((cfg.hist_nx, "hist_nx"), (cfg.hist_ny, "hist_ny"),
                   (cfg.hist_nz, "hist_nz"), (cfg.hist_nv, "hist_nv")):
        if h < 2:
            raise ConfigError(f"[kinetic].{lab} must be >= 2")
    if cfg.picard_max_iter < 1:
        raise ConfigError("[fluid].picard_max_iter must be >= 1")
    if not (0.0 < cfg.damping <= 1.0):
        raise ConfigError("[fluid].damping must lie in (0, 1]")
    if cfg.floor < 0:
        raise ConfigError("[fluid].floor must be nonnegative")
    if any(e <= 0 or e > 1 for e in cfg.epsilons):
        raise ConfigError("[sweep].epsilons must lie in (0, 1]")
    if any(t <= 0 for t in cfg.checkpoints):
        raise ConfigError("[sweep].checkpoints must be positive")
    if cfg.snapshot_cadence < 0:
        raise ConfigError("[output].snapshot_cadence must be nonnegative")
    return cfg


def load_config(path_or_text, is_text: bool = False) -> RunConfig:
    """Parse and validate a config file (or literal text).

    Raises ConfigError with the offending line or key; an empty file
    yields all defaults.
    """
    parser = configparser.ConfigParser(inline_comment_prefixes=("#",),
                                       comment_prefixes=("#",))
    parser.optionxform = str  # keys are case sensitive (B0, R0, L, T)
    try:
        if is_text:
            parser.read_string(path_or_text)
        else:
            with open(path_or_text) as fh:
                parser.read_string(fh.read())
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from None
    except configparser.Error as exc:
        lineno = getattr(exc, "lineno", "?")
        raise ConfigError(f"parse error at line {lineno}: {exc.message}") from None

    cfg = RunConfig()
    for section in parser.sections():
        if section not in _SCHEMA:
            raise ConfigError(f"unknown section [{section}]")
        for key, raw in parser.items(section):
            if key not in _SCHEMA[section]:
                raise ConfigError(f"unknown key [{section}].{key}")
            attr, kind = _SCHEMA[section][key]
            setattr(cfg, attr, _convert(section, key, raw, kind))
    return _validate(cfg)


def effective_text(cfg: RunConfig) -> str:
    """Serialize the resolved configuration (round-trips via load_config)."""
    out = io.StringIO()
    for section, keys in _SCHEMA.items():
        out.write(f"[{section}]\n")
        for key, (attr, kind) in keys.items():
            val = getattr(cfg, attr)
            if kind == "floatlist":
                val = " ".join(repr(v) for v in val)
            elif kind == "bool":
                val = "true" if val else "false"
            elif kind is float:
                val = repr(val)
            out.write(f"{key} = {val}\n")
        out.write("\n")
    return out.getvalue()


def build_objects(cfg: RunConfig):
    """Instantiate the solver objects described by a config."""
    from .fields import MagneticFieldConfig, ScaledParams
    from .fluid import PicardConfig
    from .grids import SlabGrid3D
    from .kinetic import HistogramSpec, InitialData

    field_cfg = MagneticFieldConfig(kind=cfg.field_kind, B0=cfg.B0, R0=cfg.R0,
                                    q_over_m=cfg.q_over_m)
    params = ScaledParams(epsilon=cfg.epsilon, sigma=cfg.sigma, tau=cfg.tau,
                          eps0=cfg.eps0)
    grid = SlabGrid3D(L=cfg.L, nx=cfg.nx, ny=cfg.ny, nz=cfg.nz, R0=cfg.R0)
    initial = InitialData(profile=cfg.profile, center_radius=cfg.center_radius,
                          width=cfg.width, mass=cfg.mass,
                          velocity_shift=(cfg.vshift_x, cfg.vshift_y,
                                          cfg.vshift_z))
    hist = HistogramSpec(nx=cfg.hist_nx, ny=cfg.hist_ny, nz=cfg.hist_nz,
                         nv=cfg.hist_nv)
    picard = PicardConfig(tol_E=cfg.picard_tol, max_iterations=cfg.picard_max_iter,
                          damping=cfg.damping, floor=cfg.floor)
    return {"field_cfg": field_cfg, "params": params, "grid": grid,
            "initial": initial, "hist": hist, "picard": picard}
