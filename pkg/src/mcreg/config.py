"""Plain-text configuration: ``key = value`` lines grouped in sections.

Sections and keys::

    [projector]  model, fx, fy, cx, cy, width, height, min_gate, max_gate,
                 fov_up_deg, fov_down_deg
    [channels]   intensity, depth, range, normal       (on/off)
                 omega_intensity, omega_depth, omega_range, omega_normal
    [solver]     damping, max_iterations, kernel_threshold, levels,
                 min_inliers, min_relative_improvement
    [imaging]    discontinuity, normal_discontinuity_deg
    [pipeline]   max_dt, guess_file

Every key is optional. Unknown sections or keys raise ``ConfigError``.
For the spherical model, ``fx``..``cy`` may be omitted and are then derived
from the image size and the vertical field of view.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field
from pathlib import Path

from .cues import Cue, CueKind
from .imaging import DEFAULT_DISCONTINUITY, DEFAULT_NORMAL_DISCONTINUITY_DEG
from .projection import CameraMatrix, ProjectionModel, Projector, pinhole, spherical
from .solver import SolverConfig


class ConfigError(ValueError):
    pass


_FLOAT, _INT, _BOOL, _STR = float, int, bool, str

_SCHEMA = {
    "projector": {"model": _STR, "fx": _FLOAT, "fy": _FLOAT, "cx": _FLOAT, "cy": _FLOAT,
                  "width": _INT, "height": _INT, "min_gate": _FLOAT, "max_gate": _FLOAT,
                  "fov_up_deg": _FLOAT, "fov_down_deg": _FLOAT},
    "channels": {"intensity": _BOOL, "depth": _BOOL, "range": _BOOL, "normal": _BOOL,
                 "omega_intensity": _FLOAT, "omega_depth": _FLOAT, "omega_range": _FLOAT,
                 "omega_normal": _FLOAT},
    "solver": {"damping": _FLOAT, "max_iterations": _INT, "kernel_threshold": _FLOAT,
               "levels": _INT, "min_inliers": _INT, "min_relative_improvement": _FLOAT},
    "imaging": {"discontinuity": _FLOAT, "normal_discontinuity_deg": _FLOAT},
    "pipeline": {"max_dt": _FLOAT, "guess_file": _STR},
}


@dataclass
class Config:
    """Everything the command-line tools need, with defaults for every field."""

    projector: Projector = field(default_factory=pinhole)
    solver: SolverConfig = field(default_factory=SolverConfig)
    discontinuity: float = DEFAULT_DISCONTINUITY
    normal_discontinuity_deg: float = DEFAULT_NORMAL_DISCONTINUITY_DEG
    max_dt: float = 0.02
    guess_file: str | None = None

    @property
    def kinds(self) -> tuple:
        return tuple(c.kind for c in self.solver.cues)


def _parse_value(section, key, raw, typ):
    try:
        if typ is _BOOL:
            low = raw.strip().lower()
            if low in ("1", "yes", "true", "on"):
                return True
            if low in ("0", "no", "false", "off"):
                return False
            raise ValueError(raw)
        return typ(raw.strip())
    except ValueError:
        raise ConfigError(f"[{section}] {key}: cannot parse {raw!r} as {typ.__name__}") from None


def parse_config(text: str, source: str = "<string>") -> Config:
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    cp.optionxform = str
    try:
        cp.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from exc
    raw = {}
    for section in cp.sections():
        if section not in _SCHEMA:
            raise ConfigError(f"{source}: unknown section [{section}]")
        for key, value in cp.items(section):
            if key not in _SCHEMA[section]:
                raise ConfigError(f"{source}: unknown key '{key}' in [{section}]")
            raw[section, key] = _parse_value(section, key, value, _SCHEMA[section][key])
    return _build(raw)


def load_config(path) -> Config:
    """Read a config file; ``None`` gives the defaults."""
    if path is None:
        return Config()
    path = Path(path)
    return parse_config(path.read_text(), str(path))


def _build(raw: dict) -> Config:
    def get(section, key, default=None):
        return raw.get((section, key), default)

    try:
        model = ProjectionModel(get("projector", "model", "pinhole"))
    except ValueError:
        raise ConfigError(f"[projector] unknown model {get('projector', 'model')!r}") from None
    if model is ProjectionModel.PINHOLE:
        base = pinhole()
    else:
        base = spherical(width=get("projector", "width", 870), height=get("projector", "height", 64),
                         fov_up_deg=get("projector", "fov_up_deg", 2.1),
                         fov_down_deg=get("projector", "fov_down_deg", -24.9))
    K = CameraMatrix(get("projector", "fx", base.K.fx), get("projector", "fy", base.K.fy),
                     get("projector", "cx", base.K.cx), get("projector", "cy", base.K.cy))
    try:
        proj = Projector(model, K, get("projector", "width", base.width),
                         get("projector", "height", base.height),
                         get("projector", "min_gate", base.min_gate),
                         get("projector", "max_gate", base.max_gate))
    except ValueError as exc:
        raise ConfigError(f"[projector] {exc}") from exc

    geo = CueKind.DEPTH if model is ProjectionModel.PINHOLE else CueKind.RANGE
    enabled = {CueKind.INTENSITY: True, geo: True, CueKind.NORMAL: True}
    for kind in CueKind:
        flag = get("channels", kind.value)
        if flag is not None:
            enabled[kind] = flag
    cues = []
    for kind in CueKind:
        if enabled.get(kind):
            omega = get("channels", f"omega_{kind.value}")
            try:
                cues.append(Cue(kind, omega))
            except ValueError as exc:
                raise ConfigError(f"[channels] {exc}") from exc
    if not cues:
        raise ConfigError("[channels] at least one channel must be enabled")
    try:
        solver = SolverConfig(
            cues=tuple(cues),
            damping=get("solver", "damping", 1e3),
            max_iterations_per_level=get("solver", "max_iterations", 30),
            kernel_threshold=get("solver", "kernel_threshold", 1.0),
            n_levels=get("solver", "levels", 3),
            min_inliers=get("solver", "min_inliers", 100),
            min_relative_improvement=get("solver", "min_relative_improvement", 1e-3),
        )
    except ValueError as exc:
        raise ConfigError(f"[solver] {exc}") from exc
    return Config(proj, solver, get("imaging", "discontinuity", DEFAULT_DISCONTINUITY),
                  get("imaging", "normal_discontinuity_deg", DEFAULT_NORMAL_DISCONTINUITY_DEG),
                  get("pipeline", "max_dt", 0.02), get("pipeline", "guess_file"))
