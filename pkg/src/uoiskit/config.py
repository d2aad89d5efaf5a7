"""One TOML file describing a full run: data, training, inference, oracle.

Sections map onto the module-level config dataclasses. Everything has a
default, so the empty file (or no file at all) is a valid run; a global
`seed` at the top level flows into any training section that does not pin
its own. Unknown keys are rejected rather than ignored, typos in a config
should fail loudly.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, fields
from pathlib import Path

try:
    import tomllib
except ImportError:  # python 3.10
    import tomli as tomllib

from .core import ImageSize
from .errors import ConfigError, UoiskitError
from .hdnet import DEFAULT_BG_FRACTION, HDNET_HIDDEN
from .hpg import GaussianSpec
from .hpghead import DEFAULT_HIDDEN, W_FG, W_H
from .pipeline import PipelineConfig
from .proposer import OracleConfig
from .synthgen import SceneConfig
from .tinynn import TrainConfig

DEFAULT_N_SCENES = 20
DEFAULT_PROMPTS_PER_SCENE = 12


@dataclass(frozen=True)
class HeadSpec:
    """Foreground/heat head shape and loss weights."""

    hidden: tuple = DEFAULT_HIDDEN
    w_fg: float = W_FG
    w_h: float = W_H

    def __post_init__(self):
        if not all(isinstance(d, int) and d > 0 for d in self.hidden):
            raise ConfigError(f"hidden sizes must be positive ints: {self.hidden}")
        if self.w_fg < 0 or self.w_h < 0:
            raise ConfigError("loss weights must be >= 0")


@dataclass(frozen=True)
class RefinerSpec:
    """Score-refinement net shape and its prompt sampling."""

    hidden: tuple = HDNET_HIDDEN
    prompts_per_scene: int = DEFAULT_PROMPTS_PER_SCENE
    bg_fraction: float = DEFAULT_BG_FRACTION

    def __post_init__(self):
        if not all(isinstance(d, int) and d > 0 for d in self.hidden):
            raise ConfigError(f"hidden sizes must be positive ints: {self.hidden}")
        if self.prompts_per_scene < 1:
            raise ConfigError("prompts_per_scene must be at least 1")
        if not 0.0 <= self.bg_fraction <= 1.0:
            raise ConfigError(f"bg_fraction {self.bg_fraction} outside [0, 1]")


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    n_scenes: int = DEFAULT_N_SCENES
    scene: SceneConfig = field(default_factory=SceneConfig)
    heatmap: GaussianSpec = field(default_factory=GaussianSpec)
    hpg: HeadSpec = field(default_factory=HeadSpec)
    hdnet: RefinerSpec = field(default_factory=RefinerSpec)
    train_hpg: TrainConfig = field(default_factory=TrainConfig)
    train_hdnet: TrainConfig = field(default_factory=TrainConfig)
    pipeline: PipelineConfig = field(default_factory=PipelineConfig)
    oracle: OracleConfig = field(default_factory=OracleConfig)
    data_dir: str | None = None
    out_dir: str | None = None

    def __post_init__(self):
        if self.n_scenes < 1:
            raise ConfigError(f"n_scenes must be at least 1, got {self.n_scenes}")
        if (self.data_dir is not None and self.out_dir is not None
                and Path(self.data_dir) == Path(self.out_dir)):
            raise ConfigError(
                f"data and output paths must differ, both are {self.data_dir!r}")


def _build(cls, table, where):
    """Construct a config dataclass from a TOML table, loudly."""
    known = {f.name for f in fields(cls)}
    unknown = set(table) - known
    if unknown:
        raise ConfigError(f"unknown keys in [{where}]: {sorted(unknown)}")
    coerced = {}
    for f in fields(cls):
        if f.name not in table:
            continue
        value = table[f.name]
        if f.name in ("hidden", "shapes") and isinstance(value, list):
            value = tuple(value)
        coerced[f.name] = value
    try:
        return cls(**coerced)
    except UoiskitError as exc:
        raise ConfigError(f"[{where}]: {exc}") from exc
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{where}]: {exc}") from exc


def _build_scene(table):
    table = dict(table)
    h = table.pop("height", None)
    w = table.pop("width", None)
    if (h is None) != (w is None):
        raise ConfigError("[scene]: height and width must be given together")
    if h is not None:
        try:
            table["size"] = ImageSize(int(h), int(w))
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"[scene]: bad height/width: {exc}") from exc
    return _build(SceneConfig, table, "scene")


def _train_tables(raw_train, global_seed):
    base = {k: v for k, v in raw_train.items() if k not in ("hpg", "hdnet")}
    out = []
    for name in ("hpg", "hdnet"):
        override = raw_train.get(name, {})
        if not isinstance(override, dict):
            raise ConfigError(f"[train.{name}] must be a table")
        merged = {**base, **override}
        merged.setdefault("seed", global_seed)
        out.append(_build(TrainConfig, merged, f"train.{name}"))
    return out


_SECTIONS = ("scene", "heatmap", "hpg", "hdnet", "train", "pipeline",
             "oracle", "paths")
_TOP_KEYS = ("seed", "n_scenes")


def resolve_config(raw, seed=None, count=None):
    """Build a RunConfig from a parsed TOML dict plus CLI overrides."""
    unknown = set(raw) - set(_SECTIONS) - set(_TOP_KEYS)
    if unknown:
        raise ConfigError(f"unknown top-level config keys: {sorted(unknown)}")
    for name in _SECTIONS:
        if name in raw and not isinstance(raw[name], dict):
            raise ConfigError(f"[{name}] must be a table")
    global_seed = int(seed if seed is not None else raw.get("seed", 0))
    n_scenes = int(count if count is not None else raw.get("n_scenes",
                                                           DEFAULT_N_SCENES))
    train_hpg, train_hdnet = _train_tables(raw.get("train", {}), global_seed)
    paths = raw.get("paths", {})
    unknown_paths = set(paths) - {"data", "out"}
    if unknown_paths:
        raise ConfigError(f"unknown keys in [paths]: {sorted(unknown_paths)}")
    return RunConfig(
        seed=global_seed,
        n_scenes=n_scenes,
        scene=_build_scene(raw.get("scene", {})),
        heatmap=_build(GaussianSpec, raw.get("heatmap", {}), "heatmap"),
        hpg=_build(HeadSpec, raw.get("hpg", {}), "hpg"),
        hdnet=_build(RefinerSpec, raw.get("hdnet", {}), "hdnet"),
        train_hpg=train_hpg,
        train_hdnet=train_hdnet,
        pipeline=_build(PipelineConfig, raw.get("pipeline", {}), "pipeline"),
        oracle=_build(OracleConfig, raw.get("oracle", {}), "oracle"),
        data_dir=paths.get("data"),
        out_dir=paths.get("out"),
    )


def load_config(path=None, seed=None, count=None):
    """Read a TOML run config; omitted path means all defaults.

    `seed` and `count` are command-line overrides applied on top of the
    file's values before validation.
    """
    if path is None:
        return resolve_config({}, seed=seed, count=count)
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    try:
        raw = tomllib.loads(p.read_text())
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"cannot parse config {p}: {exc}") from exc
    return resolve_config(raw, seed=seed, count=count)


def config_dict(cfg):
    """JSON-friendly resolved config for echoing into output manifests.

    Paths are dropped on purpose: they vary between hosts while the science
    content does not, and outputs should be byte-identical across reruns in
    different directories.
    """
    out = dataclasses.asdict(cfg)
    out.pop("data_dir")
    out.pop("out_dir")
    return out
