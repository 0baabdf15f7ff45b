"""JSON run configuration shared by every CLI subcommand.

Schema (all sections optional unless noted):

    {
      "seed": 0,                       // master seed, default for every stage
      "out": "runs/demo",              // output directory (or pass --out)
      "data": {                        // required: exactly one source
        "synth": {"n_users": 50, "n_items": 40, "n_groups": 4,
                   "stickiness": 0.9, "seq_len_range": [12, 20], "seed": 0}
        // or: "items": "items.jsonl", "interactions": "interactions.jsonl"
      },
      "model": {"d_m": 32, "layers": 2, "heads": 2, "max_positions": 32,
                 "m": 2, "seed": 0},   // n_items always derives from the data
      "hyper": {"lr": 0.001, "epochs": 3, "batch": 32,
                 "alpha": 1.0, "beta": 0.5, "gamma": 0.5, "seed": 0},
      "dimensions": [{"name": "category"}, {"name": "title", "d_i": 20}],
      "stage0_epochs": null,           // per-stage epoch overrides
      "stage1_epochs": null,
      "eval_ks": [5, 10]
    }

Sub-section seeds default to the master seed; an explicit override (the
--seed flag or the VREC_SEED environment variable, flag winning) replaces
the master seed and every sub-seed so one knob re-runs the whole pipeline.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

from .backbone import ModelConfig
from .datasets import SynthConfig
from .training import TrainHyper

__all__ = ["ConfigError", "DIMENSION_NAMES", "RunConfig", "SEED_ENV_VAR", "load_config"]

SEED_ENV_VAR = "VREC_SEED"
DIMENSION_NAMES = ("category", "title", "cf")

_MODEL_KEYS = ("d_m", "layers", "heads", "max_positions", "m", "seed")
_HYPER_KEYS = ("lr", "epochs", "batch", "alpha", "beta", "gamma", "seed")
_SYNTH_KEYS = ("n_users", "n_items", "n_groups", "stickiness", "seq_len_range", "seed")


class ConfigError(ValueError):
    """Raised for malformed or inconsistent run configuration."""


@dataclass
class RunConfig:
    seed: int = 0
    out: Path | None = None
    synth: SynthConfig | None = None
    items_path: Path | None = None
    interactions_path: Path | None = None
    model: dict = field(default_factory=dict)  # ModelConfig kwargs except n_items
    hyper: TrainHyper = field(default_factory=TrainHyper)
    dimensions: list[tuple[str, int | None]] = field(default_factory=list)
    stage0_epochs: int | None = None
    stage1_epochs: int | None = None
    eval_ks: tuple[int, ...] = (5, 10)

    def model_config(self, n_items: int) -> ModelConfig:
        kwargs = dict(self.model)
        kwargs.setdefault("seed", self.seed)
        return ModelConfig(n_items=n_items, **kwargs)

    @property
    def m(self) -> int:
        return int(self.model.get("m", ModelConfig.__dataclass_fields__["m"].default))

    def data_seed(self) -> int:
        return self.synth.seed if self.synth is not None else self.seed

    def with_seed(self, seed: int) -> "RunConfig":
        """Replace the master seed and every stage seed."""
        cfg = replace(self, seed=seed, hyper=replace(self.hyper, seed=seed),
                      model={**self.model, "seed": seed})
        if cfg.synth is not None:
            cfg.synth = replace(cfg.synth, seed=seed)
        return cfg

    def with_m(self, m: int) -> "RunConfig":
        return replace(self, model={**self.model, "m": int(m)})


def _require_keys(section: str, obj: dict, allowed: tuple[str, ...]) -> None:
    unknown = sorted(set(obj) - set(allowed))
    if unknown:
        raise ConfigError(f"{section}: unknown key(s) {', '.join(unknown)}; "
                          f"allowed: {', '.join(allowed)}")


def _parse_dimensions(raw, m: int) -> list[tuple[str, int | None]]:
    dims: list[tuple[str, int | None]] = []
    seen: set[str] = set()
    for i, entry in enumerate(raw):
        if not isinstance(entry, dict):
            raise ConfigError(f"dimensions[{i}]: expected an object with 'name'")
        _require_keys(f"dimensions[{i}]", entry, ("name", "d_i"))
        name = entry.get("name")
        if name not in DIMENSION_NAMES:
            raise ConfigError(f"dimensions[{i}]: unknown dimension {name!r}; "
                              f"allowed: {', '.join(DIMENSION_NAMES)}")
        if name in seen:
            raise ConfigError(f"dimensions[{i}]: duplicate dimension {name!r}")
        seen.add(name)
        d_i = entry.get("d_i")
        if d_i is not None and (not isinstance(d_i, int) or d_i < 2):
            raise ConfigError(f"dimensions[{i}]: d_i must be an integer >= 2, got {d_i!r}")
        dims.append((name, d_i))
    if m > 0 and not dims:
        raise ConfigError("at least one labeling dimension is required when "
                          "reasoning steps use verifiers (model.m > 0)")
    return dims


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: malformed JSON ({e.msg} at line {e.lineno})")
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be a JSON object")
    _require_keys(str(path), raw, ("seed", "out", "data", "model", "hyper",
                                   "dimensions", "stage0_epochs", "stage1_epochs",
                                   "eval_ks"))

    seed = int(raw.get("seed", 0))

    data = raw.get("data")
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: 'data' section is required")
    synth = None
    items_path = interactions_path = None
    if "synth" in data:
        _require_keys("data", data, ("synth",))
        _require_keys("data.synth", data["synth"], _SYNTH_KEYS)
        synth_kwargs = dict(data["synth"])
        synth_kwargs.setdefault("seed", seed)
        if "seq_len_range" in synth_kwargs:
            synth_kwargs["seq_len_range"] = tuple(synth_kwargs["seq_len_range"])
        try:
            synth = SynthConfig(**synth_kwargs)
        except (TypeError, ValueError) as e:
            raise ConfigError(f"data.synth: {e}")
    else:
        _require_keys("data", data, ("items", "interactions"))
        if "items" not in data or "interactions" not in data:
            raise ConfigError("data: provide either 'synth' or both "
                              "'items' and 'interactions' paths")
        # relative paths resolve against the config file, not the process cwd
        items_path = path.parent / Path(data["items"])
        interactions_path = path.parent / Path(data["interactions"])

    model = dict(raw.get("model", {}))
    _require_keys("model", model, _MODEL_KEYS)
    hyper_kwargs = dict(raw.get("hyper", {}))
    _require_keys("hyper", hyper_kwargs, _HYPER_KEYS)
    hyper_kwargs.setdefault("seed", seed)
    try:
        hyper = TrainHyper(**hyper_kwargs)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"hyper: {e}")

    m = int(model.get("m", ModelConfig.__dataclass_fields__["m"].default))
    dims = _parse_dimensions(raw.get("dimensions", []), m)

    eval_ks = tuple(int(k) for k in raw.get("eval_ks", (5, 10)))
    if not eval_ks or min(eval_ks) < 1:
        raise ConfigError("eval_ks must be a non-empty list of positive integers")

    for key in ("stage0_epochs", "stage1_epochs"):
        if raw.get(key) is not None and int(raw[key]) < 0:
            raise ConfigError(f"{key} must be non-negative")

    return RunConfig(
        seed=seed,
        out=path.parent / Path(raw["out"]) if raw.get("out") else None,
        synth=synth,
        items_path=items_path,
        interactions_path=interactions_path,
        model=model,
        hyper=hyper,
        dimensions=dims,
        stage0_epochs=raw.get("stage0_epochs"),
        stage1_epochs=raw.get("stage1_epochs"),
        eval_ks=eval_ks,
    )
