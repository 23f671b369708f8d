"""Run configuration: defaults, file overrides, flag overrides, and builders."""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from pathlib import Path

from .attention_control import ControlSchedule
from .denoiser import LATENT_SHAPE, AnalyticGaussianModel, TinyAttentionModel
from .errors import ConfigError
from .inversion import DistancePolicy
from .schedule import NoiseSchedule, make_schedule

MODEL_CHOICES = ("analytic", "tiny-unet")

_INT_FIELDS = {"steps", "tau_c", "self_start", "self_layer", "model_seed", "layers", "seed"}
_FLOAT_FIELDS = {"beta_start", "beta_end", "omega_inverse", "omega_forward",
                 "k_src", "k_tgt", "sigma0", "sdedit_start"}
_BOOL_FIELDS = {"cross_control", "self_control", "harmonic", "self_edit_literal", "figures"}
_WORDS_FIELDS = {"blend_src", "blend_tgt"}


@dataclass
class EditConfig:
    """Everything one edit run needs, resolvable from defaults, file and flags."""

    steps: int = 200
    beta_start: float = 0.0015
    beta_end: float = 0.0195
    omega_inverse: float = 1.0
    omega_forward: float = 5.0
    tau_c: int | None = None        # default: 0.6 * steps (refine while t >= tau_c)
    self_start: int | None = None   # default: 0.2 * steps completed iterations
    self_layer: int | None = None   # default: layers // 2
    k_src: float = 0.3
    k_tgt: float = 0.3
    policy: DistancePolicy = field(default_factory=DistancePolicy)
    model: str = "analytic"
    model_seed: int = 0
    layers: int = 4
    sigma0: float = 2.5
    seed: int = 0
    cross_control: bool = True
    self_control: bool = True
    harmonic: bool = True
    self_edit_literal: bool = False
    sdedit_start: float = 0.75
    blend_src: tuple[str, ...] = ()
    blend_tgt: tuple[str, ...] = ()
    out_dir: Path = Path("out")
    figures: bool = True

    def validate(self) -> None:
        if self.steps < 1:
            raise ConfigError(f"steps must be >= 1, got {self.steps}")
        if not (0.0 < self.beta_start <= self.beta_end < 1.0):
            raise ConfigError(f"need 0 < beta_start <= beta_end < 1, got [{self.beta_start}, {self.beta_end}]")
        if self.omega_inverse < 0.0 or self.omega_forward < 0.0:
            raise ConfigError("guidance scales must be >= 0")
        for name, k in (("k_src", self.k_src), ("k_tgt", self.k_tgt)):
            if not (0.0 < k < 1.0):
                raise ConfigError(f"{name} must lie in (0, 1), got {k}")
        if self.model not in MODEL_CHOICES:
            raise ConfigError(f"model must be one of {MODEL_CHOICES}, got {self.model!r}")
        if self.layers < 1:
            raise ConfigError(f"layers must be >= 1, got {self.layers}")
        if self.sigma0 <= 0.0:
            raise ConfigError(f"sigma0 must be positive, got {self.sigma0}")
        if not (0.0 < self.sdedit_start <= 1.0):
            raise ConfigError(f"sdedit_start must lie in (0, 1], got {self.sdedit_start}")
        self.control_schedule()

    def resolved_tau_c(self) -> int:
        return self.tau_c if self.tau_c is not None else round(0.6 * self.steps)

    def resolved_self_start(self) -> int:
        return self.self_start if self.self_start is not None else round(0.2 * self.steps)

    def resolved_self_layer(self) -> int:
        return self.self_layer if self.self_layer is not None else self.layers // 2

    def control_schedule(self) -> ControlSchedule:
        return ControlSchedule(tau_c=self.resolved_tau_c(),
                               self_start=self.resolved_self_start(),
                               self_layer=self.resolved_self_layer(),
                               total_steps=self.steps)

    def build_schedule(self) -> NoiseSchedule:
        return make_schedule(self.steps, self.beta_start, self.beta_end)

    def build_model(self, schedule: NoiseSchedule):
        if self.model == "analytic":
            return AnalyticGaussianModel(schedule, sigma0=self.sigma0,
                                         shape=LATENT_SHAPE, model_seed=self.model_seed)
        return TinyAttentionModel(n_layers=self.layers, model_seed=self.model_seed,
                                  shape=LATENT_SHAPE)

    def to_dict(self) -> dict:
        out = {}
        for f in fields(self):
            value = getattr(self, f.name)
            if isinstance(value, DistancePolicy):
                value = value.canonical()
            elif isinstance(value, Path):
                value = str(value)
            elif isinstance(value, tuple):
                value = list(value)
            out[f.name] = value
        return out


def parse_config_file(text: str) -> dict[str, object]:
    """Read the flat ``key = value`` config dialect.

    Values may be integers, floats, ``true``/``false`` or quoted strings;
    ``#`` starts a comment and section headers are ignored.
    """
    values: dict[str, object] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line or (line.startswith("[") and line.endswith("]")):
            continue
        if "=" not in line:
            raise ConfigError(f"config line {lineno}: expected key = value, got {raw!r}")
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if value.lower() in ("true", "false"):
            values[key] = value.lower() == "true"
        elif len(value) >= 2 and value[0] == value[-1] and value[0] in "'\"":
            values[key] = value[1:-1]
        else:
            try:
                values[key] = int(value)
            except ValueError:
                try:
                    values[key] = float(value)
                except ValueError:
                    raise ConfigError(f"config line {lineno}: cannot parse value {value!r}") from None
    return values


def _coerce(name: str, value: object) -> object:
    if value is None:
        return None
    if name in _INT_FIELDS:
        return int(value)
    if name in _FLOAT_FIELDS:
        return float(value)
    if name in _BOOL_FIELDS:
        if isinstance(value, bool):
            return value
        raise ConfigError(f"{name} expects true/false, got {value!r}")
    if name == "policy":
        return value if isinstance(value, DistancePolicy) else DistancePolicy.parse(str(value))
    if name in _WORDS_FIELDS:
        if isinstance(value, (list, tuple)):
            return tuple(str(w) for w in value)
        return tuple(w.strip() for w in str(value).split(",") if w.strip())
    if name == "out_dir":
        return Path(value)
    if name == "model":
        return str(value)
    return value


def build_config(file_values: dict | None = None, flag_values: dict | None = None) -> EditConfig:
    """Layer the sources: dataclass defaults < config file < command-line flags."""
    cfg = EditConfig()
    known = {f.name for f in fields(EditConfig)}
    for source, strict in ((file_values or {}, True), (flag_values or {}, False)):
        for key, value in source.items():
            if key not in known:
                if strict:
                    raise ConfigError(f"unknown config key {key!r}")
                continue
            coerced = _coerce(key, value)
            if coerced is not None:
                setattr(cfg, key, coerced)
    cfg.validate()
    return cfg
