"""Run configuration.

One flat dataclass covers model shape, training, inversion, coding and
sampling. Values resolve in precedence order: built-in defaults, then a
named preset, then a key=value config file, then explicit flags.
"""

import dataclasses
from dataclasses import dataclass

from .errors import ParameterError


@dataclass(frozen=True)
class RunConfig:
    preset: str = "toy"
    seed: int = 0
    image_size: int = 32

    schedule_kind: str = "linear"
    schedule_steps: int = 200
    beta_start: float = 1e-4
    beta_end: float = 0.02

    codec_mode: str = "identity"
    latent_channels: int = 8
    codec_hidden: int = 16

    widths: tuple = (16, 24, 32)
    cond_dim: int = 32
    time_dim: int = 32
    cond_hidden: int = 48
    embed_tokens: int = 8

    train_steps: int = 2000
    train_lr: float = 2e-3
    batch_size: int = 4
    p_uncond: float = 0.1
    autoencoder_steps: int = 600

    inversion_steps: int = 400
    inversion_lr: float = 2e-2
    embed_levels: int = 256
    guidance_levels: int = 32

    sampler_steps: int = 20
    eta: float = 1.0
    comp_scale: float = 215.0
    cfg_scale: float = 0.95

    dataset_count: int = 24
    dataset_kind: str = "mixed"
    dataset_seed: int = 7

    def __post_init__(self):
        if self.preset not in PRESETS:
            raise ParameterError(f"unknown preset {self.preset!r}")
        if self.image_size < 4 or self.image_size % 4:
            raise ParameterError(
                f"image_size must be a positive multiple of 4, got {self.image_size}"
            )
        for name in ("schedule_steps", "train_steps", "inversion_steps",
                     "sampler_steps", "batch_size", "embed_tokens", "dataset_count"):
            if getattr(self, name) < 1:
                raise ParameterError(f"{name} must be >= 1, got {getattr(self, name)}")
        for name in ("train_lr", "inversion_lr"):
            if getattr(self, name) <= 0:
                raise ParameterError(f"{name} must be positive, got {getattr(self, name)}")
        if not 0.0 <= self.p_uncond <= 1.0:
            raise ParameterError(f"p_uncond must lie in [0, 1], got {self.p_uncond}")
        if not 0.0 <= self.eta <= 1.0:
            raise ParameterError(f"eta must lie in [0, 1], got {self.eta}")
        for name in ("comp_scale", "cfg_scale"):
            if getattr(self, name) < 0:
                raise ParameterError(f"{name} must be >= 0, got {getattr(self, name)}")
        for name in ("embed_levels", "guidance_levels"):
            if getattr(self, name) < 2:
                raise ParameterError(f"{name} must be >= 2, got {getattr(self, name)}")


# the toy preset is the dataclass defaults; the full-scale preset restores
# the production shapes (64x768 embeddings, 1000-step schedule, 100-step
# eta=1 sampler, 4000 inversion steps)
PRESETS = {
    "toy": {},
    "paper": {
        "image_size": 512,
        "schedule_steps": 1000,
        "codec_mode": "autoencoder",
        "widths": (32, 64, 128),
        "cond_dim": 768,
        "cond_hidden": 256,
        "embed_tokens": 64,
        "train_steps": 100000,
        "inversion_steps": 4000,
        "sampler_steps": 100,
        "eta": 1.0,
        "comp_scale": 215.0,
        "cfg_scale": 0.95,
    },
}

_FIELD_NAMES = {f.name for f in dataclasses.fields(RunConfig)}
_DEFAULTS = RunConfig()


def _coerce(name: str, value):
    """Cast a raw (possibly string) value to the field's default type."""
    target = type(getattr(_DEFAULTS, name))
    if isinstance(value, target) and not (target is int and isinstance(value, bool)):
        return value
    try:
        if target is tuple:
            parts = value if isinstance(value, (list, tuple)) else str(value).split(",")
            return tuple(int(str(p).strip()) for p in parts)
        if target is int:
            return int(str(value).strip())
        if target is float:
            return float(str(value).strip())
        if target is str:
            return str(value).strip()
    except (TypeError, ValueError) as exc:
        raise ParameterError(f"config key {name!r}: cannot parse {value!r}") from exc
    raise ParameterError(f"config key {name!r}: cannot parse {value!r}")


def parse_config_file(path) -> dict:
    """Read flat key = value lines; # starts a comment anywhere."""
    raw = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ParameterError(f"{path}:{lineno}: expected key = value, got {line!r}")
            key, value = (part.strip() for part in line.split("=", 1))
            if key not in _FIELD_NAMES:
                raise ParameterError(f"{path}:{lineno}: unknown config key {key!r}")
            raw[key] = value
    return raw


def make_config(preset: str = "toy", **overrides) -> RunConfig:
    """Build a validated RunConfig from a preset plus explicit overrides."""
    if preset not in PRESETS:
        raise ParameterError(f"unknown preset {preset!r}, expected one of {sorted(PRESETS)}")
    merged = dict(PRESETS[preset])
    merged["preset"] = preset
    for key, value in overrides.items():
        if key not in _FIELD_NAMES:
            raise ParameterError(f"unknown config key {key!r}")
        if value is not None:
            merged[key] = value
    merged = {k: _coerce(k, v) for k, v in merged.items()}
    return RunConfig(**merged)


def resolve_config(preset: str = None, config_file=None, **flag_overrides) -> RunConfig:
    """Merge preset, config file, and flags; flags win over file over preset."""
    file_values = parse_config_file(config_file) if config_file else {}
    chosen = preset or file_values.pop("preset", None) or "toy"
    file_values.pop("preset", None)
    merged = dict(file_values)
    for key, value in flag_overrides.items():
        if value is not None:
            merged[key] = value
    return make_config(chosen, **merged)
