"""Flat ``key = value`` experiment files.

One assignment per line, ``#`` starts a comment, commas separate list
items, and ``a..b`` expands to an inclusive integer range. Keys prefixed
``grid.`` define a hyperparameter search instead of a fixed value.
"""
from __future__ import annotations

from dataclasses import dataclass, field, fields
from pathlib import Path

from .model import VARIANTS, ModelConfig
from .trainer import HParams

PRESETS = ("custom", "table2", "directional")
LIST_KEYS = {"variants", "depths", "seeds"}


class ConfigError(ValueError):
    pass


def _scalar(text: str):
    low = text.lower()
    if low in ("true", "false"):
        return low == "true"
    if low in ("none", "null"):
        return None
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            pass
    return text


def _value(text: str):
    items = []
    for part in (p.strip() for p in text.split(",")):
        if not part:
            continue
        if ".." in part:
            lo, hi = part.split("..", 1)
            try:
                items.extend(range(int(lo), int(hi) + 1))
            except ValueError as exc:
                raise ConfigError(f"bad range {part!r}") from exc
        else:
            items.append(_scalar(part))
    if "," in text or ".." in text:
        return items
    return items[0] if items else ""


def parse_kv(text: str) -> dict:
    out: dict = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value, got {raw.strip()!r}")
        key, val = (s.strip() for s in line.split("=", 1))
        if key in out:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        out[key] = _value(val)
    return out


def _listify(v) -> list:
    return v if isinstance(v, list) else [v]


@dataclass
class ExperimentSpec:
    preset: str = "custom"
    dataset: str = "synthetic"
    variants: list[str] = field(default_factory=lambda: ["gat"])
    depths: list[int] = field(default_factory=lambda: [2])
    seeds: list[int] = field(default_factory=lambda: [0])
    out: str = "results"
    model: ModelConfig = field(default_factory=ModelConfig)
    hparams: HParams = field(default_factory=HParams)
    grid: dict[str, list] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.preset not in PRESETS:
            raise ConfigError(f"unknown preset {self.preset!r}; expected one of {PRESETS}")
        if not self.depths:
            raise ConfigError("depth list must be nonempty")
        if not all(d == "adaptive" or (isinstance(d, int) and d >= 1) for d in self.depths):
            raise ConfigError(f"depths must be positive integers or 'adaptive', got {self.depths}")
        if not self.seeds:
            raise ConfigError("seed list must be nonempty")
        bad = [v for v in self.variants if v not in VARIANTS]
        if bad:
            raise ConfigError(f"unknown variants {bad}")

    @classmethod
    def from_mapping(cls, kv: dict) -> "ExperimentSpec":
        model_keys = {f.name for f in fields(ModelConfig)} - {"variant", "depth"}
        hp_keys = {f.name for f in fields(HParams)} - {"seed"}
        top, model, hp, grid = {}, {}, {}, {}
        for k, v in kv.items():
            if k.startswith("grid."):
                name = k[5:]
                if name not in hp_keys:
                    raise ConfigError(f"grid key {name!r} is not a hyperparameter")
                grid[name] = _listify(v)
            elif k in LIST_KEYS:
                top[k] = [x for x in _listify(v) if x != ""]
            elif k in ("preset", "dataset", "out"):
                top[k] = str(v)
            elif k in model_keys:
                model[k] = v
            elif k in hp_keys:
                hp[k] = v
            else:
                raise ConfigError(f"unknown key {k!r}")
        try:
            return cls(model=ModelConfig(**model), hparams=HParams(**hp), grid=grid, **top)
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(str(exc)) from exc

    def to_mapping(self) -> dict:
        d = {
            "preset": self.preset,
            "dataset": self.dataset,
            "variants": list(self.variants),
            "depths": list(self.depths),
            "seeds": list(self.seeds),
            "out": self.out,
        }
        d.update({k: v for k, v in self.model.to_dict().items() if k not in ("variant", "depth")})
        # beta and dropout live on the model; the HParams copies are sweep overrides
        d.update({f.name: getattr(self.hparams, f.name) for f in fields(HParams) if f.name not in d and f.name != "seed"})
        d.update({f"grid.{k}": list(v) for k, v in self.grid.items()})
        return d


def dump_kv(d: dict) -> str:
    def fmt(v):
        if isinstance(v, list):
            return ", ".join(fmt(x) for x in v) + ("," if len(v) == 1 else "")
        return "none" if v is None else str(v)

    return "".join(f"{k} = {fmt(v)}\n" for k, v in d.items())


def load_spec(path: str | Path) -> ExperimentSpec:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"spec file {path} not found")
    return ExperimentSpec.from_mapping(parse_kv(path.read_text()))
