"""System configuration shared by the transmitter, channel and receiver."""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Optional, Sequence

import numpy as np


class ConfigError(ValueError):
    """Raised when a configuration violates one of its invariants."""


SUPPORT_MODES = ("per_symbol", "per_frame")


@dataclass(frozen=True)
class FrameLayout:
    """Column layout of a transmission frame.

    Column 0 holds the symbol label, columns ``1..K`` the user signature and
    the remaining ``K*I`` columns the payload codewords.
    """

    K: int
    I: int

    @property
    def L(self) -> int:
        return self.K * self.I + self.K + 1

    @property
    def label_index(self) -> int:
        return 0

    @property
    def signature_span(self) -> slice:
        return slice(1, self.K + 1)

    @property
    def data_span(self) -> slice:
        return slice(self.K + 1, self.L)


@dataclass(frozen=True)
class SystemConfig:
    K: int
    N: int
    J: int
    I: int
    d_f: int
    d_v: Optional[int] = None
    M: int = 4
    P: float = 1.0
    sigma2: float = 0.0
    beta: Optional[tuple[float, ...]] = None
    beta_bar: Optional[float] = None
    support_mode: str = "per_symbol"
    signature_seed: int = 0

    def __post_init__(self):
        # β defaults to unit path loss for every user.
        if self.beta is None:
            object.__setattr__(self, "beta", (1.0,) * self.N)
        else:
            object.__setattr__(self, "beta", tuple(float(b) for b in self.beta))
        if self.beta_bar is None:
            object.__setattr__(self, "beta_bar", float(np.mean(self.beta)) if self.beta else 1.0)

    @property
    def gamma(self) -> float:
        return self.d_f / self.K

    @property
    def L(self) -> int:
        return self.K * self.I + self.K + 1

    @property
    def overload(self) -> float:
        return self.N / self.K

    @property
    def bits_per_symbol(self) -> int:
        return int(math.log2(self.M))

    @property
    def payload_bits(self) -> int:
        """Bits carried by one user's frame."""
        return self.I * self.d_f * self.bits_per_symbol

    @property
    def layout(self) -> FrameLayout:
        return FrameLayout(self.K, self.I)

    def replace(self, **changes) -> "SystemConfig":
        if "N" in changes and "beta" not in changes:
            changes["beta"] = None
        if "beta" in changes:
            changes.setdefault("beta_bar", None)
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict[str, Any]:
        d = dataclasses.asdict(self)
        d["beta"] = list(self.beta)
        return d


def from_sparsity(
    d_f: int,
    d_v: int,
    gamma: float,
    I: int,
    J: Optional[int] = None,
    **kwargs,
) -> SystemConfig:
    """Build a config from (d_f, d_v, gamma) with K = d_f/gamma and N = d_v/gamma.

    J defaults to N.
    """
    if not 0 < gamma < 1:
        raise ConfigError(f"gamma must lie in (0, 1), got {gamma}")
    K = _exact_int(d_f / gamma, "K = d_f/gamma")
    N = _exact_int(d_v / gamma, "N = d_v/gamma")
    return validate_config(
        SystemConfig(K=K, N=N, J=N if J is None else J, I=I, d_f=d_f, d_v=d_v, **kwargs)
    )


def _exact_int(value: float, what: str) -> int:
    r = round(value)
    if r <= 0 or abs(value - r) > 1e-9 * max(1.0, abs(value)):
        raise ConfigError(f"{what} must be a positive integer, got {value}")
    return int(r)


def validate_config(cfg: SystemConfig) -> SystemConfig:
    """Check every invariant and return ``cfg`` unchanged."""
    for name in ("K", "N", "J", "I", "d_f", "M"):
        v = getattr(cfg, name)
        if not isinstance(v, (int, np.integer)) or v <= 0:
            raise ConfigError(f"{name} must be a positive integer, got {v!r}")
    if cfg.M < 2 or cfg.M & (cfg.M - 1):
        raise ConfigError(f"M must be a power of 2 and >= 2, got {cfg.M}")
    if not cfg.d_f < cfg.K:
        raise ConfigError(f"gamma = d_f/K must lie in (0, 1); got d_f={cfg.d_f}, K={cfg.K}")
    if cfg.d_v is not None:
        if cfg.d_v <= 0:
            raise ConfigError(f"d_v must be a positive integer, got {cfg.d_v}")
        # N = d_v/gamma with gamma = d_f/K, compared in integers.
        if cfg.N * cfg.d_f != cfg.d_v * cfg.K:
            raise ConfigError(
                f"N = d_v/gamma does not hold: N={cfg.N}, d_v={cfg.d_v}, gamma={cfg.gamma}"
            )
    if cfg.J < cfg.N:
        raise ConfigError(f"BiG-AMP needs J >= N, got J={cfg.J}, N={cfg.N}")
    if not cfg.P > 0:
        raise ConfigError(f"P must be positive, got {cfg.P}")
    if not cfg.sigma2 >= 0:
        raise ConfigError(f"sigma2 must be >= 0, got {cfg.sigma2}")
    if len(cfg.beta) != cfg.N:
        raise ConfigError(f"beta must have N={cfg.N} entries, got {len(cfg.beta)}")
    if any(not b > 0 for b in cfg.beta):
        raise ConfigError("every path loss beta_n must be positive")
    if not math.isclose(cfg.beta_bar, float(np.mean(cfg.beta)), rel_tol=1e-12):
        raise ConfigError(f"beta_bar={cfg.beta_bar} is not the mean of beta")
    if cfg.support_mode not in SUPPORT_MODES:
        raise ConfigError(f"support_mode must be one of {SUPPORT_MODES}, got {cfg.support_mode!r}")
    return cfg


_INT_KEYS = {"K", "N", "J", "I", "d_f", "d_v", "M", "signature_seed"}
_FLOAT_KEYS = {"P", "sigma2", "beta_bar", "gamma"}


def parse_config_text(text: str) -> dict[str, Any]:
    """Parse ``key = value`` lines; ``#`` starts a comment, beta is comma separated."""
    out: dict[str, Any] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key in _INT_KEYS:
            out[key] = int(value)
        elif key in _FLOAT_KEYS:
            out[key] = float(value)
        elif key == "beta":
            out[key] = tuple(float(v) for v in value.replace(",", " ").split())
        elif key == "support_mode":
            out[key] = value
        else:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
    return out


def config_from_mapping(values: dict[str, Any]) -> SystemConfig:
    """Build and validate a config from flat key/values.

    Either K and N are given directly, or gamma together with d_f and d_v.
    """
    values = dict(values)
    gamma = values.pop("gamma", None)
    if gamma is not None and ("K" not in values or "N" not in values):
        try:
            d_f, d_v, I = values.pop("d_f"), values.pop("d_v"), values.pop("I")
        except KeyError as e:
            raise ConfigError(f"missing key {e.args[0]!r}") from None
        return from_sparsity(d_f, d_v, gamma, I, **values)
    try:
        cfg = SystemConfig(**values)
    except TypeError as e:
        raise ConfigError(str(e)) from None
    cfg = validate_config(cfg)
    if gamma is not None and not math.isclose(gamma, cfg.gamma):
        raise ConfigError(f"gamma={gamma} disagrees with d_f/K={cfg.gamma}")
    return cfg


def load_config(path: str | Path) -> SystemConfig:
    return config_from_mapping(parse_config_text(Path(path).read_text()))


def dump_config(cfg: SystemConfig) -> str:
    lines = []
    for k, v in cfg.to_dict().items():
        if v is None:
            continue
        if k == "beta":
            v = ", ".join(repr(b) for b in v)
        lines.append(f"{k} = {v}")
    return "\n".join(lines) + "\n"


PAPER_GAMMAS: Sequence[float] = (0.25, 0.20, 0.10)
