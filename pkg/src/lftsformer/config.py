"""Pipeline configuration: one versioned document, loaded from YAML or JSON.

Schema (version 1), every key optional::

    schema_version: 1
    profile: desk | paper          # picks the defaults below before overrides apply
    seed: 0                        # drives fixture, initialization, shuffling, dropout
    data: null                     # bar CSV path; null uses the synthetic fixture
    synthetic: {n: 8000, seed: 0}
    split_ratio: 0.9               # chronological train/test cut
    val_ratio: 0.1                 # tail share of training windows held out for validation
    vmd: {alpha, tau, tol, max_iter, dc_mode, k_map: {open, high, low, close}, k_candidates}
    fe: {m, r_factor, max_points}
    mic: {threshold, bins}
    model: {...ModelConfig fields...}     # enc_in/dec_in are derived from the feature count
    optimizer: {lr, beta1, beta2, eps, gc_enabled, clip_norm}
    train: {epochs, patience, batch_size, steps_per_epoch, loss, beta_init, beta_penalty, c}
    out: runs/default
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
import re
from dataclasses import dataclass, field, fields
from pathlib import Path

import yaml

from . import __version__
from .micfe import FeParams
from .model import ModelConfig, desk_profile, paper_profile
from .train import GcAdamConfig, TrainConfig
from .vmd import VmdParams

SCHEMA_VERSION = 1
PRICE_COLUMNS = ("open", "high", "low", "close")
THREADS_ENV = "LFTS_THREADS"


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class SyntheticConfig:
    n: int = 8000
    seed: int = 0


@dataclass(frozen=True)
class VmdSection:
    alpha: float = VmdParams.alpha
    tau: float = 0.0
    tol: float = 1e-7
    max_iter: int = 500
    dc_mode: bool = False
    k_map: dict = field(default_factory=lambda: {"open": 15, "high": 10, "low": 8, "close": 12})
    k_candidates: list | None = None   # when set, K is chosen per column by reconstruction MIC

    def params(self, K: int) -> VmdParams:
        return VmdParams(K, self.alpha, self.tau, self.tol, self.max_iter, self.dc_mode)


@dataclass(frozen=True)
class MicSection:
    threshold: float = 0.5
    bins: int | None = None


@dataclass(frozen=True)
class PipelineConfig:
    schema_version: int = SCHEMA_VERSION
    profile: str = "desk"
    seed: int = 0
    data: str | None = None
    synthetic: SyntheticConfig = SyntheticConfig()
    split_ratio: float = 0.9
    val_ratio: float = 0.1
    vmd: VmdSection = VmdSection()
    fe: FeParams = FeParams()
    mic: MicSection = MicSection()
    model: ModelConfig = ModelConfig()
    optimizer: GcAdamConfig = GcAdamConfig()
    train: TrainConfig = TrainConfig()
    out: str = "runs/default"

    def validate(self) -> "PipelineConfig":
        """Cross-field checks that must pass before any compute."""
        if self.schema_version != SCHEMA_VERSION:
            raise ConfigError(f"unsupported schema_version {self.schema_version}")
        if self.profile not in ("desk", "paper"):
            raise ConfigError(f"profile must be desk or paper, got {self.profile!r}")
        if not 0.0 < self.split_ratio < 1.0:
            raise ConfigError(f"split_ratio must lie in (0, 1), got {self.split_ratio}")
        if not 0.0 < self.val_ratio < 1.0:
            raise ConfigError(f"val_ratio must lie in (0, 1), got {self.val_ratio}")
        if not 0.0 <= self.mic.threshold <= 1.0:
            raise ConfigError("mic.threshold must lie in [0, 1]")
        if self.vmd.k_candidates is None:
            if sorted(self.vmd.k_map) != sorted(PRICE_COLUMNS):
                raise ConfigError(f"vmd.k_map needs exactly {PRICE_COLUMNS}")
            if any(int(k) < 1 for k in self.vmd.k_map.values()):
                raise ConfigError("every K in vmd.k_map must be >= 1")
        elif not self.vmd.k_candidates or any(int(k) < 1 for k in self.vmd.k_candidates):
            raise ConfigError("vmd.k_candidates must be a nonempty list of positive integers")
        if self.data is None:
            window = self.model.seq_len + self.model.pred_len
            test_rows = self.synthetic.n - round(self.synthetic.n * self.split_ratio)
            if test_rows < window + 1 or self.synthetic.n * self.split_ratio * self.val_ratio < 1:
                raise ConfigError(f"{self.synthetic.n} rows at split {self.split_ratio} leave {test_rows} "
                                  f"test rows, fewer than a window of {window}")
        return self

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["model"] = self.model.to_dict()
        return d

    def lock(self) -> dict:
        return {"lftsformer_version": __version__, "config": self.to_dict()}

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.lock(), sort_keys=True).encode()).hexdigest()

    def write_lock(self, path) -> None:
        Path(path).write_text(json.dumps(self.lock(), indent=2, sort_keys=True) + "\n")

    def replace(self, **kw) -> "PipelineConfig":
        return dataclasses.replace(self, **kw)


def profile_defaults(profile: str) -> dict:
    if profile == "desk":
        return {
            "model": desk_profile().to_dict(),
            "fe": {"max_points": 1000},
            "optimizer": {"lr": 1e-3},
            "train": {"epochs": 8, "patience": 3, "batch_size": 32, "steps_per_epoch": 40},
        }
    if profile == "paper":
        return {"model": paper_profile().to_dict(), "train": {"epochs": 200, "patience": 10, "batch_size": 32}}
    raise ConfigError(f"profile must be desk or paper, got {profile!r}")


def _merge(base: dict, over: dict) -> dict:
    out = dict(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict) and k != "k_map":
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def _section(cls, d, where):
    if d is None:
        return cls()
    if isinstance(d, cls):
        return d
    if not isinstance(d, dict):
        raise ConfigError(f"{where} must be a mapping")
    known = {f.name for f in fields(cls)}
    extra = set(d) - known
    if extra:
        raise ConfigError(f"unknown keys in {where}: {sorted(extra)}")
    try:
        if cls is ModelConfig:
            return ModelConfig.from_dict(d)
        return cls(**d)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from None


def build_config(doc: dict | None = None, profile: str | None = None, seed: int | None = None,
                 out: str | None = None) -> PipelineConfig:
    """Profile defaults, then the document, then explicit overrides; validated."""
    doc = dict(doc or {})
    if "config" in doc and "lftsformer_version" in doc:   # a lockfile
        doc = dict(doc["config"])
    prof = profile or doc.get("profile", "desk")
    merged = _merge(profile_defaults(prof), doc)
    merged["profile"] = prof
    if seed is not None:
        merged["seed"] = int(seed)
    if out is not None:
        merged["out"] = str(out)
    known = {f.name for f in fields(PipelineConfig)}
    extra = set(merged) - known
    if extra:
        raise ConfigError(f"unknown top-level keys: {sorted(extra)}")
    s = int(merged.get("seed", 0))
    model = dict(merged.get("model") or {})
    model["seed"] = s
    train = dict(merged.get("train") or {})
    train["seed"] = s
    try:
        cfg = PipelineConfig(
            schema_version=int(merged.get("schema_version", SCHEMA_VERSION)),
            profile=prof,
            seed=s,
            data=merged.get("data"),
            synthetic=_section(SyntheticConfig, merged.get("synthetic"), "synthetic"),
            split_ratio=float(merged.get("split_ratio", 0.9)),
            val_ratio=float(merged.get("val_ratio", 0.1)),
            vmd=_section(VmdSection, merged.get("vmd"), "vmd"),
            fe=_section(FeParams, merged.get("fe"), "fe"),
            mic=_section(MicSection, merged.get("mic"), "mic"),
            model=_section(ModelConfig, model, "model"),
            optimizer=_section(GcAdamConfig, merged.get("optimizer"), "optimizer"),
            train=_section(TrainConfig, train, "train"),
            out=str(merged.get("out", "runs/default")),
        )
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from None
    return cfg.validate()


class _Loader(yaml.SafeLoader):
    pass


# YAML 1.1 reads 1e-4 (no dot) as a string; accept the forms JSON and humans write
_Loader.add_implicit_resolver(
    "tag:yaml.org,2002:float",
    re.compile(r"""^(?:[-+]?(?:[0-9][0-9_]*)\.[0-9_]*(?:[eE][-+]?[0-9]+)?
                |[-+]?[0-9][0-9_]*[eE][-+]?[0-9]+
                |\.[0-9_]+(?:[eE][-+][0-9]+)?
                |[-+]?\.(?:inf|Inf|INF)
                |\.(?:nan|NaN|NAN))$""", re.X),
    list("-+0123456789."))


def load_config(path, **overrides) -> PipelineConfig:
    """Read a YAML document, a JSON document or a lockfile."""
    text = Path(path).read_text()
    try:
        doc = json.loads(text) if str(path).endswith(".json") else yaml.load(text, Loader=_Loader)
    except (yaml.YAMLError, json.JSONDecodeError) as exc:
        raise ConfigError(f"{path}: {exc}") from None
    if doc is not None and not isinstance(doc, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return build_config(doc, **overrides)
