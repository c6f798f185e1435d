"""Run configuration (flat key=value text) and CSV serialisation of results."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from .errors import ConfigError, IoError, MissingKey
from .fem import Mesh1D, Subdomain
from .forward import TimeGrid
from .report import REPORT_COLUMNS, RunReport

COMMANDS = ("solve", "robust", "rsc", "mms")
U0_PRESETS = ("sin2", "gauss3", "zero")
UD_PRESETS = ("fig3", "fig5", "fig7", "zero")

# required keys per command, on top of T and n_elems
_REQUIRED = {
    "solve": (),
    "robust": ("ell", "gamma", "O"),
    "rsc": ("ell", "gamma", "beta", "omega", "O"),
    "mms": (),
}


@dataclass(frozen=True)
class RunConfig:
    command: str
    T: float
    n_elems: int
    n_steps: int
    L: float = 30.0
    theta: float = 0.75
    u0: str = "sin2"
    u_d: str = "zero"
    omega: Subdomain | None = None
    O: Subdomain | None = None
    O_d: Subdomain | None = None
    ell: float | None = None
    gamma: float | None = None
    beta: float | None = None
    tol: float = 1e-6
    rtol: float = 0.0
    max_iter: int = 200
    picard_tol: float = 1e-8
    picard_max: int = 200
    relaxation: float = 1.0
    continuation: bool = False
    n_list: tuple[int, ...] | None = None
    dt_list: tuple[float, ...] | None = None
    out: str = "."
    stride: int = 1

    @property
    def dt(self) -> float:
        return self.T / self.n_steps

    @property
    def grid(self) -> TimeGrid:
        return TimeGrid(self.T, self.n_steps)


_FLOAT = {"T", "L", "theta", "ell", "gamma", "beta", "tol", "rtol", "picard_tol", "relaxation"}
_INT = {"n_elems", "n_steps", "max_iter", "picard_max", "stride"}
_INTERVAL = {"omega", "O", "O_d"}
_KNOWN = {f.name for f in fields(RunConfig)} | {"dt"}


def _parse_value(key, raw, line):
    try:
        if key in _FLOAT or key == "dt":
            val = float(raw)
            if not math.isfinite(val):
                raise ValueError("not finite")
            return val
        if key in _INT:
            val = float(raw)
            if val != int(val):
                raise ValueError("not an integer")
            return int(val)
        if key in _INTERVAL:
            a, b = (float(p) for p in raw.split(","))
            return Subdomain(a, b)
        if key == "continuation":
            low = raw.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError("expected true/false")
            return low in ("true", "1", "yes")
        if key == "n_list":
            return tuple(int(p) for p in raw.split(","))
        if key == "dt_list":
            return tuple(float(p) for p in raw.split(","))
    except ValueError as exc:
        raise ConfigError(f"bad value {raw!r}: {exc}", line, key) from None
    return raw


def parse_config(text: str, command: str | None = None) -> RunConfig:
    """Parse a flat ``key=value`` document; ``#`` starts a comment.

    ``command`` may come from the text or from the caller (the CLI verb);
    if both are given they must agree. Either ``n_steps`` or ``dt`` fixes
    the time grid.
    """
    values: dict = {}
    lines: dict = {}
    for lineno, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"expected key=value, got {line!r}", lineno)
        key, raw = (p.strip() for p in line.split("=", 1))
        if key not in _KNOWN:
            raise ConfigError("unknown key", lineno, key)
        if key in values:
            raise ConfigError("duplicate key", lineno, key)
        values[key] = _parse_value(key, raw, lineno)
        lines[key] = lineno

    if command is not None:
        if "command" in values and values["command"] != command:
            raise ConfigError(f"config is for {values['command']!r}, not {command!r}", lines["command"], "command")
        values["command"] = command
    if "command" not in values:
        raise MissingKey("missing required key", key="command")
    cmd = values["command"]
    if cmd not in COMMANDS:
        raise ConfigError(f"command must be one of {COMMANDS}", lines.get("command"), "command")

    for key in ("T", "n_elems") + _REQUIRED[cmd]:
        if key not in values:
            raise MissingKey(f"missing required key for {cmd!r}", key=key)

    T = values["T"]
    if not T > 0:
        raise ConfigError("must be positive", lines["T"], "T")
    dt = values.pop("dt", None)
    if dt is not None:
        if not dt > 0:
            raise ConfigError("must be positive", lines["dt"], "dt")
        n = int(round(T / dt))
        if n < 1 or abs(n * dt - T) > 1e-9 * T:
            raise ConfigError(f"dt={dt} does not divide T={T}", lines["dt"], "dt")
        if "n_steps" in values and values["n_steps"] != n:
            raise ConfigError("n_steps and dt disagree", lines["n_steps"], "n_steps")
        values["n_steps"] = n
    if "n_steps" not in values:
        raise MissingKey("give n_steps or dt", key="n_steps")
    if values["n_steps"] < 2:
        raise ConfigError("need at least 2 time steps", lines.get("n_steps", lines.get("dt")), "n_steps")

    cfg = RunConfig(**values)
    _validate(cfg, lines)
    return cfg


def _validate(cfg: RunConfig, lines: dict):
    def fail(key, msg):
        raise ConfigError(msg, lines.get(key), key)

    if not cfg.L > 0:
        fail("L", "must be positive")
    if cfg.n_elems < 2:
        fail("n_elems", "need at least 2 elements")
    if not 0.0 < cfg.theta <= 1.0:
        fail("theta", "must lie in (0, 1]")
    for key in ("omega", "O", "O_d"):
        sub = getattr(cfg, key)
        if sub is not None and (sub.a < -cfg.L - 1e-12 or sub.b > cfg.L + 1e-12):
            fail(key, f"interval ({sub.a:g}, {sub.b:g}) leaves the domain (-{cfg.L:g}, {cfg.L:g})")
    for key in ("ell", "gamma", "beta", "picard_tol"):
        val = getattr(cfg, key)
        if val is not None and not val > 0:
            fail(key, "must be positive")
    for key in ("tol", "rtol"):
        if getattr(cfg, key) < 0:
            fail(key, "must be non-negative")
    if not 0.0 < cfg.relaxation <= 1.0:
        fail("relaxation", "must lie in (0, 1]")
    for key in ("stride", "max_iter", "picard_max"):
        if getattr(cfg, key) < (0 if key == "max_iter" else 1):
            fail(key, "out of range")
    if not (cfg.u0 in U0_PRESETS or cfg.u0.startswith("file:")):
        fail("u0", f"expected one of {U0_PRESETS} or file:<path>")
    if cfg.u_d not in UD_PRESETS:
        fail("u_d", f"expected one of {UD_PRESETS}")
    if cfg.n_list is not None and any(n < 2 for n in cfg.n_list):
        fail("n_list", "need at least 2 elements per mesh")
    if cfg.dt_list is not None and any(not d > 0 for d in cfg.dt_list):
        fail("dt_list", "time steps must be positive")


def _format_value(val) -> str:
    if isinstance(val, bool):
        return "true" if val else "false"
    if isinstance(val, float):
        return repr(val)
    if isinstance(val, Subdomain):
        return f"{val.a!r},{val.b!r}"
    if isinstance(val, tuple):
        return ",".join(repr(v) for v in val)
    return str(val)


def serialize_config(cfg: RunConfig) -> str:
    """Inverse of :func:`parse_config` (unset optional keys are omitted)."""
    out = []
    for f in fields(RunConfig):
        val = getattr(cfg, f.name)
        if val is None:
            continue
        out.append(f"{f.name}={_format_value(val)}")
    return "\n".join(out) + "\n"


# ---------------------------------------------------------------- presets

def initial_datum(spec: str, mesh: Mesh1D) -> np.ndarray:
    x = mesh.nodes
    if spec == "sin2":
        u0 = np.sin(np.pi * x / 30.0) ** 2
    elif spec == "gauss3":
        u0 = 1e-3 * np.exp(-(x**2))
    elif spec == "zero":
        u0 = np.zeros_like(x)
    elif spec.startswith("file:"):
        tab = read_profile_csv(spec[len("file:") :])
        u0 = np.interp(x, tab[:, 0], tab[:, 1])
    else:
        raise ConfigError(f"unknown initial datum {spec!r}", key="u0")
    # the presets vanish at x = +-30 only up to roundoff
    u0 = np.array(u0, dtype=float)
    if abs(u0[0]) <= 1e-12 and abs(u0[-1]) <= 1e-12:
        u0[[0, -1]] = 0.0
    return u0


def desired_state(spec: str, mesh: Mesh1D, grid: TimeGrid) -> np.ndarray:
    x = mesh.nodes[None, :]
    t = grid.times[:, None]
    s2 = np.sin(np.pi * x / 30.0) ** 2
    if spec == "fig3":
        ud = s2 + 0.1 * t * (np.cos(np.pi * x / 30.0) + 1.0)
    elif spec == "fig5":
        ud = np.exp(-(x**2)) + s2
    elif spec == "fig7":
        ud = (-(t**3) + t**2) + s2
    elif spec == "zero":
        ud = np.zeros((1, 1))
    else:
        raise ConfigError(f"unknown desired state {spec!r}", key="u_d")
    return np.broadcast_to(ud, (grid.n_steps + 1, mesh.n_nodes)).copy()


def read_profile_csv(path) -> np.ndarray:
    """Two-column ``x,value`` table (``#`` comment lines allowed), sorted by x."""
    try:
        tab = np.loadtxt(path, delimiter=",", comments="#", ndmin=2)
    except (OSError, ValueError) as exc:
        raise IoError(f"cannot read profile {path}: {exc}") from exc
    if tab.shape[1] != 2:
        raise IoError(f"profile {path} must have two columns")
    return tab[np.argsort(tab[:, 0])]


# ---------------------------------------------------------------- fields

@dataclass
class SpaceTimeField:
    """Values on a tensor grid: ``values[n, i]`` at time ``t[n]`` and node ``x[i]``."""

    values: np.ndarray
    x: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        self.values = np.atleast_2d(np.asarray(self.values, dtype=float))
        self.x = np.atleast_1d(np.asarray(self.x, dtype=float))
        self.t = np.atleast_1d(np.asarray(self.t, dtype=float))
        if self.values.shape != (self.t.size, self.x.size):
            raise ValueError(f"values shape {self.values.shape} does not match ({self.t.size}, {self.x.size})")

    @classmethod
    def on(cls, values, mesh: Mesh1D, grid: TimeGrid) -> "SpaceTimeField":
        return cls(values, mesh.nodes, grid.times)


def _fmt(v: float) -> str:
    return "%.17g" % v


def write_field_csv(field: SpaceTimeField, path, stride: int = 1):
    """Rows ``t,x,value`` with time as the outer loop; every ``stride``-th level."""
    if stride < 1:
        raise ValueError("stride must be >= 1")
    xs = [_fmt(v) for v in field.x]
    try:
        with open(path, "w", newline="\n") as fh:
            fh.write("# t,x,value\n")
            for n in range(0, field.t.size, stride):
                ts = _fmt(field.t[n])
                fh.writelines(f"{ts},{x},{_fmt(v)}\n" for x, v in zip(xs, field.values[n]))
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def read_field_csv(path) -> SpaceTimeField:
    try:
        data = np.loadtxt(path, delimiter=",", comments="#", ndmin=2)
    except (OSError, ValueError) as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    t = np.unique(data[:, 0])
    x = data[: data.shape[0] // t.size, 1]
    return SpaceTimeField(data[:, 2].reshape(t.size, x.size), x, t)


def write_report_csv(report: RunReport, path):
    try:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(REPORT_COLUMNS)
            for row in report.rows:
                cells = []
                for col in REPORT_COLUMNS:
                    val = getattr(row, col)
                    if val is None:
                        cells.append("")
                    elif col == "iter":
                        cells.append(str(int(val)))
                    else:
                        cells.append(_fmt(val))
                w.writerow(cells)
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def read_report_csv(path) -> list[dict]:
    try:
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    out = []
    for r in rows:
        out.append({k: (None if v == "" else (int(v) if k == "iter" else float(v))) for k, v in r.items()})
    return out


def write_table_csv(rows, path):
    """MMS error table, one line per ErrorRow."""
    cols = ("dt", "n_elems", "linf_error", "l2_error", "l2_error_squared", "failure")
    try:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(cols)
            for r in rows:
                w.writerow([_fmt(r.dt), r.n_elems, _fmt(r.linf_error), _fmt(r.l2_error),
                            _fmt(r.l2_error_squared), r.failure or ""])
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc
