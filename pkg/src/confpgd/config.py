"""Run configuration: a TOML manifest plus ``--set key=value`` overrides."""
from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, field

try:
    import tomllib as tomli
except ImportError:  # Python < 3.11
    import tomli

from .assembly import StencilChoice
from .pgd import DEFAULT_SEED, AlsConfig, Diagnostics, GreedyConfig
from .problems import LoadSpec, ProblemSpec


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class OutputPaths:
    report: str = "report.csv"
    summary: str = "summary.json"
    modes: str = "modes.json"
    wall_time: bool = True


@dataclass(frozen=True)
class RunConfig:
    problem: ProblemSpec = field(default_factory=ProblemSpec)
    greedy: GreedyConfig = field(default_factory=GreedyConfig)
    als: AlsConfig = field(default_factory=AlsConfig)
    diagnostics: Diagnostics = field(default_factory=Diagnostics)
    output: OutputPaths = field(default_factory=OutputPaths)
    seed: int = DEFAULT_SEED


SECTIONS = {
    "problem": ProblemSpec,
    "load": LoadSpec,
    "stencil": StencilChoice,
    "greedy": GreedyConfig,
    "als": AlsConfig,
    "diagnostics": Diagnostics,
    "output": OutputPaths,
}


def _parse_value(text: str):
    try:
        return tomli.loads(f"v = {text}")["v"]
    except tomli.TOMLDecodeError:
        return text


def apply_overrides(doc: dict, overrides) -> dict:
    for item in overrides or ():
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        key, value = item.split("=", 1)
        parts = key.strip().split(".")
        target = doc
        for part in parts[:-1]:
            target = target.setdefault(part, {})
            if not isinstance(target, dict):
                raise ConfigError(f"override {key!r}: {part!r} is not a section")
        target[parts[-1]] = _parse_value(value.strip())
    return doc


def _coerce(cls, section: str, values: dict):
    if not isinstance(values, dict):
        raise ConfigError(f"field '{section}': expected a section")
    known = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in values.items():
        if key not in known:
            raise ConfigError(f"field '{section}.{key}': unknown key")
        default = known[key].default
        if isinstance(default, bool) and not isinstance(value, bool):
            raise ConfigError(f"field '{section}.{key}': expected true/false, got {value!r}")
        if isinstance(default, float) and isinstance(value, int) and not isinstance(value, bool):
            value = float(value)
        if isinstance(default, int) and not isinstance(default, bool) and isinstance(value, float):
            if not value.is_integer():
                raise ConfigError(f"field '{section}.{key}': expected an integer, got {value!r}")
            value = int(value)
        if isinstance(value, list):
            value = tuple(value)
        kwargs[key] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"field '{section}': {exc}") from exc


def config_from_dict(doc: dict) -> RunConfig:
    doc = dict(doc)
    top = {k for k in doc if k not in SECTIONS and k != "seed"}
    if top:
        raise ConfigError(f"field '{sorted(top)[0]}': unknown section or key")
    problem = dict(doc.get("problem", {}))
    # load and stencil may be nested under [problem] or given as top-level sections
    load_doc = problem.pop("load", None) or doc.get("load", {})
    stencil_doc = problem.pop("stencil", None) or doc.get("stencil", {})
    load = _coerce(LoadSpec, "load", load_doc)
    stencil = _coerce(StencilChoice, "stencil", stencil_doc)
    spec = _coerce(ProblemSpec, "problem", problem)
    spec = dataclasses.replace(spec, load=load, stencil=stencil)
    seed = doc.get("seed", DEFAULT_SEED)
    if not isinstance(seed, int) or isinstance(seed, bool):
        raise ConfigError(f"field 'seed': expected an integer, got {seed!r}")
    als = _coerce(AlsConfig, "als", {"seed": seed, **doc.get("als", {})})
    return RunConfig(
        problem=spec,
        greedy=_coerce(GreedyConfig, "greedy", doc.get("greedy", {})),
        als=als,
        diagnostics=_coerce(Diagnostics, "diagnostics", doc.get("diagnostics", {})),
        output=_coerce(OutputPaths, "output", doc.get("output", {})),
        seed=als.seed,
    )


def load_config(path=None, overrides=()) -> RunConfig:
    doc = {}
    if path is not None:
        try:
            with open(os.fspath(path), "rb") as fh:
                doc = tomli.load(fh)
        except tomli.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return config_from_dict(apply_overrides(doc, overrides))


def config_echo(cfg: RunConfig) -> dict:
    """Plain-data view of a config for the run summary."""
    def plain(obj):
        if dataclasses.is_dataclass(obj):
            return {f.name: plain(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
        if isinstance(obj, tuple):
            return [plain(v) for v in obj]
        return obj
    return plain(cfg)
