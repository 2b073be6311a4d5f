"""Strict JSON config parsing with defaults echoed back.

Every run directory receives the fully resolved configuration (defaults
filled in), so the weights and schedules that produced a result are
always on disk next to it. Unknown keys are rejected rather than
ignored; silent typos in experiment configs are worse than loud ones.
"""

from __future__ import annotations

import json
from dataclasses import asdict
from pathlib import Path

from .errors import InvalidSpec
from .evaluation import EpisodeSpec
from .losses import LossWeights, TempSchedule
from .synth import WorldSpec
from .training import TrainConfig


def _require_keys(doc: dict, allowed: set[str], context: str) -> None:
    unknown = set(doc) - allowed
    if unknown:
        raise InvalidSpec(f"{context}: unknown keys {sorted(unknown)}; allowed: {sorted(allowed)}")


def _number(doc: dict, key: str, default, context: str, allow_none: bool = False):
    value = doc.get(key, default)
    if value is None and allow_none:
        return None
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise InvalidSpec(f"{context}: {key} must be a number, got {value!r}")
    return value


def _integer(doc: dict, key: str, default, context: str) -> int:
    value = doc.get(key, default)
    if isinstance(value, bool) or not isinstance(value, int):
        raise InvalidSpec(f"{context}: {key} must be an integer, got {value!r}")
    return value


def loss_weights_from_dict(doc: dict) -> LossWeights:
    _require_keys(doc, {"lambda_anchor", "lambda_contrast", "sce_eps", "reverse_ce_weight"}, "weights")
    return LossWeights(
        lambda_anchor=float(_number(doc, "lambda_anchor", 1.0, "weights")),
        lambda_contrast=float(_number(doc, "lambda_contrast", 1.0, "weights")),
        sce_eps=float(_number(doc, "sce_eps", 1e-8, "weights")),
        reverse_ce_weight=float(_number(doc, "reverse_ce_weight", 1.0, "weights")),
    )


def temp_schedule_from_dict(doc: dict, total_steps: int) -> TempSchedule:
    _require_keys(doc, {"tau0", "tau_max"}, "temp")
    return TempSchedule(
        tau0=float(_number(doc, "tau0", 1.0, "temp")),
        tau_max=float(_number(doc, "tau_max", 10.0, "temp")),
        total_steps=total_steps,
    )


TRAIN_KEYS = {
    "total_steps", "lr0", "batch_size", "seed", "tau_cls", "eps", "grad_clip",
    "weights", "temp",
}


def train_config_from_dict(doc: dict) -> TrainConfig:
    if not isinstance(doc, dict):
        raise InvalidSpec(f"train config must be a JSON object, got {type(doc).__name__}")
    _require_keys(doc, TRAIN_KEYS, "train config")
    total_steps = _integer(doc, "total_steps", 400, "train config")
    grad_clip = _number(doc, "grad_clip", None, "train config", allow_none=True)
    return TrainConfig(
        total_steps=total_steps,
        lr0=float(_number(doc, "lr0", 0.003, "train config")),
        batch_size=_integer(doc, "batch_size", 4, "train config"),
        weights=loss_weights_from_dict(doc.get("weights", {})),
        temp=temp_schedule_from_dict(doc.get("temp", {}), total_steps),
        seed=_integer(doc, "seed", 0, "train config"),
        tau_cls=float(_number(doc, "tau_cls", 0.01, "train config")),
        eps=float(_number(doc, "eps", 1e-12, "train config")),
        grad_clip=None if grad_clip is None else float(grad_clip),
    )


def train_config_to_dict(cfg: TrainConfig) -> dict:
    sched = cfg.schedule()
    return {
        "total_steps": cfg.total_steps,
        "lr0": cfg.lr0,
        "batch_size": cfg.batch_size,
        "seed": cfg.seed,
        "tau_cls": cfg.tau_cls,
        "eps": cfg.eps,
        "grad_clip": cfg.grad_clip,
        "weights": asdict(cfg.weights),
        "temp": {"tau0": sched.tau0, "tau_max": sched.tau_max},
    }


WORLD_KEYS = {
    "dims", "classes", "kappa_vocab", "kappa_prompts", "kappa_images",
    "inter_class_angle", "llm_bias_angle", "modality_gap_angle",
    "vocab_size", "prompts_per_class", "images_per_class", "seed",
}


def world_spec_from_dict(doc: dict) -> WorldSpec:
    if not isinstance(doc, dict):
        raise InvalidSpec(f"world spec must be a JSON object, got {type(doc).__name__}")
    _require_keys(doc, WORLD_KEYS, "world spec")
    defaults = WorldSpec()
    kwargs = {}
    for key in WORLD_KEYS:
        default = getattr(defaults, key)
        if key in ("dims", "classes", "vocab_size", "prompts_per_class", "images_per_class", "seed"):
            kwargs[key] = _integer(doc, key, default, "world spec")
        else:
            kwargs[key] = float(_number(doc, key, default, "world spec"))
    return WorldSpec(**kwargs)


def world_spec_to_dict(spec: WorldSpec) -> dict:
    return asdict(spec)


EPISODES_KEYS = {"shots", "trials", "eval_split_fraction", "seed", "configs"}
EPISODE_CONFIG_KEYS = {"name", "sce", "anchor", "contrast"}


def episodes_job_from_dict(doc: dict) -> tuple[list[int], EpisodeSpec, list[dict]]:
    """Parse an episodes job: shot list, base spec, and config rows.

    Each config row is {"name", "sce", "anchor", "contrast"}; omitted
    flags default to True, and the default row set is the full model.
    """
    if not isinstance(doc, dict):
        raise InvalidSpec(f"episodes spec must be a JSON object, got {type(doc).__name__}")
    _require_keys(doc, EPISODES_KEYS, "episodes spec")
    shots = doc.get("shots", [1, 2, 4])
    if not isinstance(shots, list) or not shots or not all(
        isinstance(k, int) and not isinstance(k, bool) and k >= 1 for k in shots
    ):
        raise InvalidSpec(f"episodes spec: shots must be a nonempty list of ints >= 1, got {shots!r}")
    base = EpisodeSpec(
        shots=shots[0],
        trials=_integer(doc, "trials", 3, "episodes spec"),
        eval_split_fraction=float(_number(doc, "eval_split_fraction", 0.5, "episodes spec")),
        seed=_integer(doc, "seed", 0, "episodes spec"),
    )
    configs = doc.get("configs", [{"name": "full", "sce": True, "anchor": True, "contrast": True}])
    if not isinstance(configs, list) or not configs:
        raise InvalidSpec("episodes spec: configs must be a nonempty list")
    parsed = []
    for i, c in enumerate(configs):
        if not isinstance(c, dict):
            raise InvalidSpec(f"episodes spec: configs[{i}] must be an object")
        _require_keys(c, EPISODE_CONFIG_KEYS, f"configs[{i}]")
        name = c.get("name", f"config_{i}")
        if not isinstance(name, str):
            raise InvalidSpec(f"configs[{i}]: name must be a string")
        row = {"name": name}
        for flag in ("sce", "anchor", "contrast"):
            v = c.get(flag, True)
            if not isinstance(v, bool):
                raise InvalidSpec(f"configs[{i}]: {flag} must be a boolean, got {v!r}")
            row[flag] = v
        parsed.append(row)
    return list(shots), base, parsed


def load_json(path: str | Path, context: str) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise InvalidSpec(f"{context}: invalid JSON in {path}: {exc}") from exc
