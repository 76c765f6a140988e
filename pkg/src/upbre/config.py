"""Run configuration: a flat ``key = value`` text file with a strict schema.

Lines are ``key = value``; ``#`` starts a comment.  Values are numbers,
``true``/``false``, or strings (optionally double-quoted).  Unknown keys
are rejected.  :func:`dump_config` writes every key in a canonical form
that :func:`parse_config` reads back to an equal :class:`RunConfig`.

Defaults follow the full-size experiment (512 x 2048 rays, 512 x 512
reconstruction from a 2048 x 2048 phantom, ``eps_log = eps_fd = 0.1``,
33 log-spaced gammas on [1e-5, 3e-4]).  ``DESK_PRESET`` overrides the
sizes for runs that finish in minutes on one core.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, fields
from pathlib import Path

from .bregman import BregmanKind
from .errors import ConfigError
from .phantom import load_phantom
from .recon import FistaConfig
from .select import FULL_GAMMA_GRID, GammaGrid, TrialConfig

__all__ = ["RunConfig", "parse_config", "parse_config_text", "dump_config", "config_hash", "DESK_PRESET"]


@dataclass(frozen=True)
class RunConfig:
    n_angles: int = 512
    n_offsets: int = 2048
    fine_n: int = 2048
    coarse_n: int = 512
    phantom: str = "shepp-logan"  # shepp-logan, modified, or a CSV path
    flux: float = 1e4
    dark: float = 0.0
    photon_scale: float = 1.0
    clamp_floor: float = 0.5
    noise: str = "poisson"
    sigma2: float = 1.0  # only used with noise = gaussian
    bregman: str = "ms,kl,is"
    eps_log: float = 0.1
    eps_fd: str = "0.1"
    n_probes: int = 1
    gamma_grid: str = FULL_GAMMA_GRID
    refine: bool = True
    golden_evals: int = 6
    max_iters: int = 500
    inner_tv_iters: int = 20
    rel_tol: float = 1e-6
    data_seed: int = 0
    probe_seed: int = 1
    trial_seed: int = 2
    n_trials: int = 10
    output_dir: str = "out"

    # -- derived views -----------------------------------------------------
    @property
    def kinds(self) -> tuple[str, ...]:
        return tuple(k.strip().lower() for k in self.bregman.split(",") if k.strip())

    @property
    def eps_fds(self) -> tuple[float, ...]:
        return tuple(float(e) for e in str(self.eps_fd).split(",") if e.strip())

    @property
    def grid(self) -> GammaGrid:
        return GammaGrid.parse(self.gamma_grid)

    @property
    def fista(self) -> FistaConfig:
        return FistaConfig(self.max_iters, self.inner_tv_iters, self.rel_tol)

    def trial_config(self, **overrides) -> TrialConfig:
        kw = dict(
            fine_n=self.fine_n, coarse_n=self.coarse_n, n_angles=self.n_angles, n_offsets=self.n_offsets,
            flux=self.flux, dark=self.dark, kinds=self.kinds, eps_log=self.eps_log, eps_fds=self.eps_fds,
            gamma_grid=self.gamma_grid, refine=self.refine, golden_evals=self.golden_evals,
            n_probes=self.n_probes, fista=self.fista, phantom=load_phantom(self.phantom),
        )
        kw.update(overrides)
        return TrialConfig(**kw)

    def validate(self) -> "RunConfig":
        positive_int = ("n_angles", "fine_n", "coarse_n", "n_probes", "golden_evals", "max_iters",
                        "inner_tv_iters", "n_trials")
        for k in positive_int:
            if getattr(self, k) < 1:
                raise ConfigError(f"{k} must be >= 1, got {getattr(self, k)}")
        if self.n_offsets < 2:
            raise ConfigError(f"n_offsets must be >= 2, got {self.n_offsets}")
        for k in ("flux", "photon_scale", "clamp_floor", "sigma2", "eps_log", "rel_tol"):
            if not getattr(self, k) > 0:
                raise ConfigError(f"{k} must be positive, got {getattr(self, k)}")
        if self.dark < 0:
            raise ConfigError(f"dark must be nonnegative, got {self.dark}")
        if self.fine_n < self.coarse_n or self.fine_n % self.coarse_n:
            raise ConfigError(f"fine_n ({self.fine_n}) must be a multiple of coarse_n ({self.coarse_n})")
        if self.noise not in ("poisson", "gaussian"):
            raise ConfigError(f"noise must be poisson or gaussian, got {self.noise!r}")
        if not self.kinds:
            raise ConfigError("bregman must list at least one of ms, kl, is")
        for k in self.kinds:
            if k not in {b.value for b in BregmanKind}:
                raise ConfigError(f"bregman: unknown kind {k!r}")
        try:
            eps = self.eps_fds
        except ValueError:
            raise ConfigError(f"eps_fd: cannot parse {self.eps_fd!r}") from None
        if not eps or any(not e > 0 for e in eps):
            raise ConfigError(f"eps_fd must be positive, got {self.eps_fd!r}")
        try:
            self.grid
        except ValueError as exc:
            raise ConfigError(f"gamma_grid: {exc}") from None
        for k in ("data_seed", "probe_seed", "trial_seed"):
            if getattr(self, k) < 0:
                raise ConfigError(f"{k} must be nonnegative")
        return self

    def replace(self, **changes) -> "RunConfig":
        return coerce(dataclasses.replace(self, **changes))

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)


DESK_PRESET = dict(n_angles=60, n_offsets=96, fine_n=256, coarse_n=64, gamma_grid="log:0.0001:0.1:13")

_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _coerce_value(key: str, value):
    typ = _TYPES[key]
    try:
        if typ == "bool":
            if isinstance(value, bool):
                return value
            v = str(value).strip().lower()
            if v in ("true", "1", "yes"):
                return True
            if v in ("false", "0", "no"):
                return False
            raise ValueError(value)
        if typ == "int":
            f = float(value)
            if f != int(f):
                raise ValueError(value)
            return int(f)
        if typ == "float":
            return float(value)
        return str(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{key}: invalid {typ} value {value!r}") from None


def coerce(cfg: RunConfig) -> RunConfig:
    return RunConfig(**{k: _coerce_value(k, v) for k, v in dataclasses.asdict(cfg).items()}).validate()


def _strip_comment(line: str) -> str:
    quoted = False
    for i, ch in enumerate(line):
        if ch == '"':
            quoted = not quoted
        elif ch == "#" and not quoted:
            return line[:i]
    return line


def _unquote(v: str) -> str:
    v = v.strip()
    if len(v) >= 2 and v[0] == v[-1] == '"':
        return v[1:-1]
    return v


def parse_config_text(text: str, base: RunConfig | None = None, **overrides) -> RunConfig:
    values = dataclasses.asdict(base or RunConfig())
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = _strip_comment(raw).strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value, got {raw!r}")
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in _TYPES:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        values[key] = _coerce_value(key, _unquote(val))
    for key, val in overrides.items():
        if key not in _TYPES:
            raise ConfigError(f"unknown key {key!r}")
        if val is not None:
            values[key] = _coerce_value(key, val)
    return RunConfig(**values).validate()


def parse_config(path=None, base: RunConfig | None = None, **overrides) -> RunConfig:
    """Read ``path`` (if given) on top of ``base`` and apply ``overrides``."""
    text = ""
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file not found: {p}")
        text = p.read_text()
    return parse_config_text(text, base, **overrides)


def dump_config(cfg: RunConfig) -> str:
    lines = []
    for key, val in dataclasses.asdict(cfg).items():
        if isinstance(val, bool):
            s = "true" if val else "false"
        elif isinstance(val, (int, float)):
            s = repr(val)
        else:
            s = '"' + val + '"'
        lines.append(f"{key} = {s}")
    return "\n".join(lines) + "\n"


def config_hash(cfg: RunConfig) -> str:
    blob = json.dumps(dataclasses.asdict(cfg), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()
