"""Run configuration shared by the CLI and the scripts."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields, replace
import json
from pathlib import Path

from .losses import LossCoefficients

PROFILES = ("vg", "oi")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class FocalConfig:
    alpha: float = 0.25
    gamma: float = 2.0
    adaptive: bool = False  # per-class gamma for object logits from triplet frequencies
    clamp: bool = True


@dataclass(frozen=True)
class ToyDims:
    d_obj: int = 64
    d_rel: int = 32
    channels: int = 8
    filters: int = 8
    attn_heads: int = 4
    ffn: int = 128
    positions: str = "refined"  # or "initial": every head encodes the starting boxes


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    images: int = 10
    queries: int = 300
    heads: int = 6
    mu: float = 4.0
    tau: float = 0.3
    k_at: tuple[int, ...] = (20, 50, 100)
    profile: str = "vg"
    graph_constraint: bool | None = None  # None: on for vg, off for oi
    jobs: int = 1
    num_object_classes: int = 150
    num_predicates: int = 50
    min_objects: int = 2
    max_objects: int = 8
    relation_density: float = 0.2
    max_relations: int | None = None
    label_skew: float = 1.0
    jitter: float = 0.05
    flip_prob: float = 0.1
    drop_prob: float = 0.1
    spurious_rate: float = 0.2
    steps: int = 2000
    lr: float = 0.5
    box_lr_scale: float = 0.005
    assign_mode: str = "pseudo"
    cls_cost: str = "full"
    coeffs: LossCoefficients = field(default_factory=LossCoefficients)
    focal: FocalConfig = field(default_factory=FocalConfig)
    toy: ToyDims = field(default_factory=ToyDims)

    def __post_init__(self):
        if self.profile not in PROFILES:
            raise ConfigError(f"profile must be one of {PROFILES}, got {self.profile!r}")
        if self.queries < 1 or self.heads < 1 or self.images < 0 or self.jobs < 1:
            raise ConfigError("queries, heads and jobs must be positive; images nonnegative")
        if self.mu <= 0:
            raise ConfigError("mu must be positive")
        if self.assign_mode not in ("pseudo", "full_bg", "no_bg"):
            raise ConfigError(f"unknown assign_mode {self.assign_mode!r}")
        if self.toy.positions not in ("refined", "initial"):
            raise ConfigError(f"unknown toy.positions {self.toy.positions!r}")
        if self.cls_cost not in ("full", "target"):
            raise ConfigError(f"unknown cls_cost {self.cls_cost!r}")

    @property
    def use_graph_constraint(self) -> bool:
        return self.profile == "vg" if self.graph_constraint is None else self.graph_constraint

    def to_dict(self) -> dict:
        d = asdict(self)
        d["k_at"] = list(self.k_at)
        return d

    @classmethod
    def from_dict(cls, raw: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        kw = dict(raw)
        nested = {"coeffs": LossCoefficients, "focal": FocalConfig, "toy": ToyDims}
        for key, typ in nested.items():
            if key in kw and isinstance(kw[key], dict):
                try:
                    kw[key] = typ(**kw[key])
                except TypeError as e:
                    raise ConfigError(f"config.{key}: {e}") from None
        if "k_at" in kw:
            kw["k_at"] = tuple(int(k) for k in kw["k_at"])
        return cls(**kw)

    @classmethod
    def load(cls, path) -> "RunConfig":
        text = Path(path).read_text()
        if str(path).endswith((".yaml", ".yml")):
            import yaml
            raw = yaml.safe_load(text) or {}
        else:
            raw = json.loads(text)
        return cls.from_dict(raw)

    def override(self, **kw) -> "RunConfig":
        return replace(self, **{k: v for k, v in kw.items() if v is not None})
