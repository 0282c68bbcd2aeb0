"""Run configuration: one flat dataclass, JSON round-trip, two presets,
and key=value overrides for the CLI.

The `desk` preset is the shipped default (small trainable encoder, 8 kHz
synthetic audio). The `paper` preset carries the large-scale settings for
users who bring precomputed feature files from a pretrained front-end; it
is not exercised by the test corpus.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass


class ConfigError(ValueError):
    pass


VARIANTS = ("baseline", "fa", "fa_be", "bfa_be", "fc", "inter", "intra")
VARIANT_ALIASES = {"be": "bfa_be"}
MASK_MODES = ("exclude", "renorm")
FRONTENDS = ("encoder", "external")


@dataclass
class BamConfig:
    # model
    d_model: int = 32
    heads: int = 1
    n_blocks: int = 2
    stride: int = 8
    variant: str = "bfa_be"
    mask_mode: str = "exclude"
    threshold: float = 0.5
    intra_channels: int = 8
    # front-end
    frontend: str = "encoder"
    sample_rate: int = 8000
    hop_ms: float = 20.0
    encoder_channels: tuple = (16, 24, 32)
    encoder_widths: tuple = (10, 4, 4)
    external_dim: int = 32
    features_dir: str = ""
    # training
    lambda_boundary: float = 0.5
    lr: float = 1e-3
    epochs: int = 30
    lr_halving_period: int = 10
    batch_size: int = 8
    crop_seconds: float = 4.0
    seed: int = 0
    teacher_force: bool = False

    def __post_init__(self):
        self.encoder_channels = tuple(int(c) for c in self.encoder_channels)
        self.encoder_widths = tuple(int(w) for w in self.encoder_widths)
        self.variant = VARIANT_ALIASES.get(self.variant, self.variant)
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}; choices: {', '.join(VARIANTS)}")
        if self.mask_mode not in MASK_MODES:
            raise ConfigError(f"unknown mask_mode {self.mask_mode!r}; choices: {', '.join(MASK_MODES)}")
        if self.frontend not in FRONTENDS:
            raise ConfigError(f"unknown frontend {self.frontend!r}; choices: {', '.join(FRONTENDS)}")
        if self.lambda_boundary < 0:
            raise ConfigError("lambda_boundary must be >= 0")
        if self.stride < 1:
            raise ConfigError("stride must be >= 1")
        if self.n_blocks < 1:
            raise ConfigError("n_blocks must be >= 1")
        if self.frontend == "encoder":
            if self.encoder_channels[-1] != self.d_model:
                raise ConfigError(
                    f"last encoder channel count {self.encoder_channels[-1]} must equal d_model {self.d_model}"
                )
            hop = self.hop_samples
            if not math.isclose(hop * 1000.0 / self.sample_rate, self.hop_ms, rel_tol=0, abs_tol=1e-9):
                raise ConfigError(
                    f"encoder widths give a hop of {hop} samples = "
                    f"{hop * 1000.0 / self.sample_rate:g} ms, but hop_ms is {self.hop_ms:g}"
                )

    @property
    def hop_samples(self):
        if self.frontend == "encoder":
            return int(math.prod(self.encoder_widths))
        hop = self.hop_ms * self.sample_rate / 1000.0
        if abs(hop - round(hop)) > 1e-9:
            raise ConfigError(f"hop_ms {self.hop_ms} is not a whole number of samples at {self.sample_rate} Hz")
        return int(round(hop))

    @property
    def resolution_ms(self):
        """Temporal span of one model output frame."""
        return self.hop_ms * self.stride

    @property
    def frame_samples(self):
        return self.hop_samples * self.stride

    def to_dict(self):
        d = dataclasses.asdict(self)
        d["encoder_channels"] = list(self.encoder_channels)
        d["encoder_widths"] = list(self.encoder_widths)
        return d

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in dataclasses.fields(cls)}
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown config keys: {', '.join(sorted(extra))}")
        return cls(**d)

    @classmethod
    def load(cls, path):
        with open(path, "r", encoding="utf-8") as fh:
            try:
                d = json.load(fh)
            except json.JSONDecodeError as e:
                raise ConfigError(f"{path}: not valid JSON ({e})") from e
        return cls.from_dict(d)

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_json() + "\n")

    def replace(self, **kw):
        d = self.to_dict()
        d.update(kw)
        return BamConfig.from_dict(d)


def preset(name):
    if name == "desk":
        return BamConfig()
    if name == "paper":
        return BamConfig(
            d_model=1024,
            external_dim=1024,
            frontend="external",
            sample_rate=16000,
            lr=1e-5,
            epochs=50,
            encoder_channels=(1024,),
            encoder_widths=(320,),
        )
    raise ConfigError(f"unknown preset {name!r}; choices: desk, paper")


def _coerce(field_obj, current, raw, key):
    if isinstance(current, bool):
        low = raw.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{key}: expected a boolean, got {raw!r}")
    if isinstance(current, int):
        try:
            return int(raw)
        except ValueError as e:
            raise ConfigError(f"{key}: expected an integer, got {raw!r}") from e
    if isinstance(current, float):
        try:
            return float(raw)
        except ValueError as e:
            raise ConfigError(f"{key}: expected a number, got {raw!r}") from e
    if isinstance(current, tuple):
        try:
            return tuple(int(v) for v in raw.split(",") if v != "")
        except ValueError as e:
            raise ConfigError(f"{key}: expected comma-separated integers, got {raw!r}") from e
    return raw


def apply_overrides(cfg, pairs):
    """Apply ``key=value`` strings; keys must be existing config fields."""
    d = cfg.to_dict()
    fields = {f.name: f for f in dataclasses.fields(BamConfig)}
    for pair in pairs:
        if "=" not in pair:
            raise ConfigError(f"override {pair!r} is not of the form key=value")
        key, raw = pair.split("=", 1)
        key = key.strip()
        if key not in fields:
            raise ConfigError(f"unknown config key {key!r}")
        d[key] = _coerce(fields[key], d[key], raw.strip(), key)
    return BamConfig.from_dict(d)
