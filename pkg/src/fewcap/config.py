"""Model and training configuration plus the flat ``key=value`` config file."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError


@dataclass
class EncoderConfig:
    """Shapes of the captioning model. Defaults are the desk-scale setting."""

    L: int = 1                # object / joint transformer blocks
    L_refiner: int = 1
    L_decoder: int = 2
    d: int = 64
    heads: int = 4
    N: int = 8
    N_obj: int = 8
    len_s: int = 12
    n_word: int = 4
    d_a: int = 24
    d_m: int = 16
    d_o: int = 16

    def __post_init__(self):
        for f in dataclasses.fields(self):
            val = getattr(self, f.name)
            lower = 0 if f.name.startswith("L") else 1
            if val < lower:
                raise ConfigError(f"{f.name} must be >= {lower}, got {val}")
        if self.d % self.heads:
            raise ConfigError(f"d={self.d} is not divisible by heads={self.heads}")
        if self.len_s < self.n_word + 2:
            raise ConfigError("len_s must fit the framed keyword sequence")

    @classmethod
    def paper_msvd(cls, **kw):
        """Paper-scale shapes for MSVD in the few-supervised setting."""
        base = dict(L=1, L_refiner=2, L_decoder=4, d=768, heads=8, N=20, N_obj=20, len_s=20,
                    n_word=4, d_a=1536, d_m=2048, d_o=2048)
        base.update(kw)
        return cls(**base)


@dataclass
class TrainConfig:
    lr: float = 1e-4
    lr_decay: float = 0.5
    decay_interval: int = 0          # 0 -> patience // 2
    weight_decay: float = 0.0        # true L2 term, off by default
    batch_size: int = 128
    max_epochs: int = 35
    patience: int = 5
    seed: int = 0
    gt_per_video: int = 1
    n_pse: int = 2
    T: int = 10
    penalty: float = 1.2
    keyword_dropout: float = 0.5
    exclude_pad: bool = True
    early_stopping: bool = True
    lm_order: int = 3
    lm_k: float = 0.1
    clf_epochs: int = 60
    clf_pairs: int = 16              # synthetic pairs per visible sentence
    encoder: EncoderConfig = field(default_factory=EncoderConfig)

    def __post_init__(self):
        for name in ("lr", "lr_decay", "batch_size", "max_epochs", "patience", "gt_per_video",
                     "T", "penalty", "lm_order", "lm_k", "clf_epochs", "clf_pairs"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if self.n_pse < 0:
            raise ConfigError("n_pse must be >= 0")
        if self.patience > self.max_epochs:
            raise ConfigError("patience must not exceed max_epochs")
        if not 0 <= self.keyword_dropout <= 1:
            raise ConfigError("keyword_dropout must lie in [0, 1]")

    @property
    def plateau_interval(self):
        return self.decay_interval or max(1, self.patience // 2)

    @classmethod
    def desk(cls, **kw):
        """Desk-scale run: small batches and a larger step size, since there are far fewer updates."""
        kw.setdefault("lr", 1e-3)
        kw.setdefault("batch_size", 16)
        return cls(**kw)

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, obj):
        obj = dict(obj)
        enc = EncoderConfig(**obj.pop("encoder", {}))
        return cls(encoder=enc, **obj)


def _coerce(name, raw, typ):
    try:
        if typ in (bool, "bool"):
            low = raw.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return low in ("true", "1", "yes")
        if typ in (int, "int"):
            return int(raw)
        if typ in (float, "float"):
            return float(raw)
    except ValueError:
        raise ConfigError(f"{name}: cannot parse {raw!r} as {typ}") from None
    return raw


def _field_types(cls):
    return {f.name: f.type for f in dataclasses.fields(cls)}


def parse_config_text(text, base=None):
    """Flat ``key=value`` lines (``#`` comments). Encoder keys sit beside training keys."""
    base = base or TrainConfig()
    train_types = {k: v for k, v in _field_types(TrainConfig).items() if k != "encoder"}
    enc_types = _field_types(EncoderConfig)
    train_vals, enc_vals = {}, {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value")
        key, _, raw = (s.strip() for s in line.partition("="))
        if key in train_types:
            train_vals[key] = _coerce(key, raw, train_types[key])
        elif key in enc_types:
            enc_vals[key] = _coerce(key, raw, enc_types[key])
        else:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
    enc = dataclasses.replace(base.encoder, **enc_vals)
    return dataclasses.replace(base, encoder=enc, **train_vals)


def load_config(path, base=None):
    return parse_config_text(Path(path).read_text(encoding="utf-8"), base)


def dump_config(cfg):
    lines = [f"{k}={v}" for k, v in cfg.to_dict().items() if k != "encoder"]
    lines += [f"{k}={v}" for k, v in dataclasses.asdict(cfg.encoder).items()]
    return "\n".join(lines) + "\n"
