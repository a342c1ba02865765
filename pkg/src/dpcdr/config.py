"""Run configuration: one TOML file, flattened to dotted keys, plus overrides.

Keys are grouped by prefix (``data.``, ``synth.``, ``sppg.``, ``privacy.``,
``rcdr.``, ``eval.``); TOML tables and dotted keys are equivalent. A single
top-level ``seed`` drives synthesis, splitting and both training stages.
"""

from __future__ import annotations

import hashlib
import json
import sys
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .rcdr import RcdrConfig
from .sppg import SppgConfig
from .synth import SynthSpec

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class DataConfig:
    source_path: str = ""
    target_path: str = ""
    prepared_dir: str = ""
    threshold: float = 3.0
    min_interactions: int = 5
    n_negatives: int = 99

    @property
    def uses_files(self) -> bool:
        return bool(self.source_path or self.target_path or self.prepared_dir)


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    data: DataConfig = field(default_factory=DataConfig)
    synth: SynthSpec = field(default_factory=SynthSpec)
    sppg: SppgConfig = field(default_factory=SppgConfig)
    rcdr: RcdrConfig = field(default_factory=RcdrConfig)
    eval_ks: tuple = (5, 10)

    def to_dict(self) -> dict:
        """Flat dotted-key view; the canonical form hashed for run ids."""
        out = {"seed": self.seed, "eval.ks": list(self.eval_ks)}
        for prefix, obj in (("data", self.data), ("synth", self.synth), ("rcdr", self.rcdr)):
            for f in fields(obj):
                if prefix in ("synth", "rcdr") and f.name == "seed":
                    continue
                out[f"{prefix}.{f.name}"] = getattr(obj, f.name)
        for f in fields(self.sppg):
            if f.name == "seed":
                continue
            name = f"privacy.{f.name}" if f.name in PRIVACY_KEYS else f"sppg.{f.name}"
            value = getattr(self.sppg, f.name)
            out[name] = list(value) if isinstance(value, tuple) else value
        return dict(sorted(out.items()))

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    @property
    def run_id(self) -> str:
        return self.config_hash()[:12]

    def with_values(self, values: dict) -> "RunConfig":
        return from_flat({**self.to_dict(), **values})


PRIVACY_KEYS = ("alpha_grid", "amplified", "delta", "sigma_p", "clip_B", "whole_model")
SECTIONS = {"data": DataConfig, "synth": SynthSpec, "sppg": SppgConfig, "privacy": SppgConfig, "rcdr": RcdrConfig}


def _flatten(d: dict, prefix: str = "") -> dict:
    out = {}
    for k, v in d.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            out.update(_flatten(v, key + "."))
        else:
            out[key] = v
    return out


def _coerce(value, like, key):
    """Convert ``value`` to the type of the dataclass default ``like``."""
    try:
        if isinstance(like, bool):
            if isinstance(value, str):
                if value.lower() in ("1", "true", "yes", "on"):
                    return True
                if value.lower() in ("0", "false", "no", "off"):
                    return False
                raise ValueError(value)
            return bool(value)
        if isinstance(like, tuple):
            if isinstance(value, str):
                value = [v for v in value.strip("[]()").split(",") if v.strip()]
            return tuple(float(v) for v in value)
        if isinstance(like, int) and not isinstance(like, bool):
            if isinstance(value, float) and not value.is_integer():
                raise ValueError(value)
            return int(value)
        if isinstance(like, float):
            return float(value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{key}: cannot interpret {value!r}") from exc
    if like is None:
        try:
            return float(value) if isinstance(value, float) or "." in str(value) else int(value)
        except (TypeError, ValueError):
            raise ConfigError(f"{key}: cannot interpret {value!r}") from None
    return str(value)


def _section_kwargs(flat: dict, section: str, cls) -> dict:
    defaults = cls()
    optional = {f.name: "None" in str(f.type) for f in fields(cls)}
    kwargs = {}
    for key, value in flat.items():
        head, _, name = key.partition(".")
        if head != section:
            continue
        if name not in optional or name == "seed":
            raise ConfigError(f"unknown config key: {key}")
        if optional[name] and (value is None or (isinstance(value, str) and value.lower() in ("none", "null"))):
            kwargs[name] = None
        else:
            kwargs[name] = _coerce(value, getattr(defaults, name), key)
    return kwargs


def from_flat(flat: dict) -> RunConfig:
    """Build a ``RunConfig`` from dotted keys, validating names and ranges."""
    flat = dict(flat)
    for key in flat:
        head = key.partition(".")[0]
        if key not in ("seed", "eval.ks") and head not in SECTIONS:
            raise ConfigError(f"unknown config key: {key}")
    for key in [k for k in flat if k.startswith("privacy.")]:
        if key.partition(".")[2] not in PRIVACY_KEYS:
            raise ConfigError(f"unknown config key: {key}")
    for key in [k for k in flat if k.startswith("sppg.")]:
        if key.partition(".")[2] in PRIVACY_KEYS:
            raise ConfigError(f"{key} belongs in the privacy block")
    seed = _coerce(flat.get("seed", 0), 0, "seed")
    ks = flat.get("eval.ks", (5, 10))
    if isinstance(ks, str):
        ks = ks.strip("[]()").split(",")
    try:
        ks = tuple(int(k) for k in ks)
    except (TypeError, ValueError) as exc:
        raise ConfigError("eval.ks must be a list of integers") from exc
    if not ks or min(ks) < 1:
        raise ConfigError("eval.ks must hold positive cutoffs")
    sppg_kwargs = {**_section_kwargs(flat, "sppg", SppgConfig), **_section_kwargs(flat, "privacy", SppgConfig)}
    try:
        return RunConfig(
            seed=seed,
            data=DataConfig(**_section_kwargs(flat, "data", DataConfig)),
            synth=SynthSpec(**_section_kwargs(flat, "synth", SynthSpec), seed=seed),
            sppg=SppgConfig(**sppg_kwargs, seed=seed),
            rcdr=RcdrConfig(**_section_kwargs(flat, "rcdr", RcdrConfig), seed=seed),
            eval_ks=ks,
        )
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def parse_overrides(items) -> dict:
    """``["sppg.tau=0", ...]`` to a dict; values are coerced later by type."""
    out = {}
    for item in items or ():
        key, sep, value = item.partition("=")
        if not sep or not key.strip():
            raise ConfigError(f"override must look like key=value: {item!r}")
        out[key.strip()] = value.strip()
    return out


def load_config(path=None, overrides: dict | None = None) -> RunConfig:
    flat = {}
    if path:
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"config file not found: {p}")
        try:
            flat = _flatten(tomllib.loads(p.read_text()))
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{p}: {exc}") from exc
    flat.update(overrides or {})
    return from_flat(flat)


def dump_toml(cfg: RunConfig) -> str:
    """Flat TOML text that reloads to the same configuration."""
    lines = []
    for key, value in cfg.to_dict().items():
        if value is None:
            value = "none"
        lines.append(f"{_toml_key(key)} = {_toml_value(value)}")
    return "\n".join(lines) + "\n"


def _toml_key(key: str) -> str:
    return ".".join(f'"{p}"' if not p.replace("_", "").isalnum() else p for p in key.split("."))


def _toml_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, float)):
        return repr(v)
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_toml_value(x) for x in v) + "]"
    return json.dumps(str(v))


def with_variant(cfg: RunConfig, **sections) -> RunConfig:
    """Replace fields inside sections, e.g. ``with_variant(cfg, sppg={"tau": 0.0})``."""
    kw = {}
    for name, changes in sections.items():
        kw[name] = replace(getattr(cfg, name), **changes)
    return replace(cfg, **kw)
