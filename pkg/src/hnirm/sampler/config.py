"""Chain configuration and its flat ``key = value`` file format."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from ..exceptions import ValidationError
from ..hierarchy import HyperPriors


@dataclass(frozen=True)
class ChainConfig:
    """Iteration plan, proposal scales and fixed hyperparameters.

    Defaults: 15,000 iterations, 2,500 burn-in,
    thinning 5, random-walk scales 0.05 (items, respondent intercepts), 0.2
    (respondent positions) and 1.0 (item intercepts).
    """

    n_iter: int = 15000
    burn_in: int = 2500
    thin: int = 5
    d: int = 2
    jump_w: float = 0.05
    jump_theta: float = 0.05
    jump_z: float = 0.2
    jump_beta: float = 1.0
    hyper: HyperPriors = field(default_factory=HyperPriors)
    seed: int = 0
    group_mode: str = "single"
    target_accept: tuple[float, float] = (0.2, 0.4)
    adapt: bool = False
    adapt_interval: int = 50
    parallel: int = 1
    store_positions: bool = False
    store_person_distances: bool = False
    store_pair_draws: bool = True

    def __post_init__(self):
        if self.n_iter < 1 or self.burn_in < 0:
            raise ValidationError("n_iter must be >= 1 and burn_in >= 0")
        if self.burn_in >= self.n_iter:
            raise ValidationError("burn_in must be smaller than n_iter")
        if self.thin < 1:
            raise ValidationError("thin must be >= 1")
        if self.d < 1:
            raise ValidationError("d must be >= 1")
        for name in ("jump_w", "jump_theta", "jump_z", "jump_beta"):
            if not getattr(self, name) > 0:
                raise ValidationError(f"{name} must be positive")
        if self.group_mode not in ("single", "by_label"):
            raise ValidationError(f"group_mode must be 'single' or 'by_label', got {self.group_mode!r}")
        lo, hi = self.target_accept
        if not 0 < lo < hi < 1:
            raise ValidationError("target_accept must satisfy 0 < low < high < 1")
        if self.parallel < 1:
            raise ValidationError("parallel must be >= 1")
        if not 0 <= self.seed < 2**64:
            raise ValidationError("seed must be a 64-bit unsigned integer")

    @property
    def n_draws(self) -> int:
        return (self.n_iter - self.burn_in) // self.thin

    @property
    def jumps(self) -> dict[str, float]:
        return {"w": self.jump_w, "theta": self.jump_theta, "z": self.jump_z, "beta": self.jump_beta}

    def to_flat(self) -> dict[str, str]:
        flat = {}
        for key, value in asdict(self).items():
            if key == "hyper":
                flat.update({k: repr(float(v)) for k, v in value.items()})
            elif key == "target_accept":
                flat[key] = f"{value[0]},{value[1]}"
            else:
                flat[key] = str(value)
        return flat

    def with_overrides(self, **kw) -> "ChainConfig":
        return replace(self, **kw)


_HYPER_KEYS = {f.name for f in fields(HyperPriors)}


def _coerce(name: str, raw: str, template):
    raw = raw.strip()
    try:
        if isinstance(template, bool):
            if raw.lower() in ("1", "true", "yes", "on"):
                return True
            if raw.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(template, int):
            return int(raw)
        if isinstance(template, float):
            return float(raw)
        if isinstance(template, tuple):
            lo, hi = raw.split(",")
            return (float(lo), float(hi))
    except ValueError:
        raise ValidationError(f"config key {name!r}: cannot parse {raw!r}") from None
    return raw


def config_from_mapping(values: dict[str, str], base: ChainConfig | None = None) -> ChainConfig:
    """Build a config from string values keyed by ``ChainConfig`` field names.

    Hyperprior fields (``sigma_gamma2``, ``a``, ...) are accepted at top level.
    """
    base = base or ChainConfig()
    chain_kw, hyper_kw = {}, {}
    defaults = {f.name: getattr(base, f.name) for f in fields(ChainConfig)}
    for key, raw in values.items():
        if key in _HYPER_KEYS:
            hyper_kw[key] = _coerce(key, str(raw), 1.0)
        elif key in defaults and key != "hyper":
            chain_kw[key] = _coerce(key, str(raw), defaults[key])
        else:
            raise ValidationError(f"unknown config key {key!r}")
    if hyper_kw:
        chain_kw["hyper"] = replace(base.hyper, **hyper_kw)
    return replace(base, **chain_kw)


def read_config_file(path) -> dict[str, str]:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValidationError(f"{path}:{lineno}: expected 'key = value'")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def write_config_file(config: ChainConfig, path) -> None:
    lines = [f"{k} = {v}" for k, v in config.to_flat().items()]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
