"""Versioned run configuration: a strict JSON schema for the CLI.

Unknown keys are rejected recursively so typos fail loudly instead of
silently falling back to defaults.
"""

import json
from dataclasses import dataclass

from .errors import ConfigError
from .geom import PanoGeometry
from .imggen import ImgConfig
from .palette import D_MAX
from .structgen import StructConfig, TrainConfig
from .synthworld import WorldParams

SCHEMA_VERSION = 1

_SCHEMA = {
    "schema_version": None,
    "geometry": {"width": None, "height": None},
    "world": {"room_count_range": None, "furniture_density": None},
    "trajectory": {"per_world": None, "perturb_sigma": None},
    "structure": {
        "width": None, "height": None, "latent_channels": None,
        "latent_height": None, "latent_width": None, "enc_widths": None,
        "head_width": None, "out_head_width": None, "guide_residual": None,
        "lambda_ce": None, "lambda_depth": None, "lambda_kl": None,
        "log_var_clamp": None,
        "mode": None, "lr": None, "batch": None, "steps": None,
        "context_range": None,
    },
    "image": {
        "width": None, "height": None, "blocks": None, "base_width": None,
        "spade_hidden": None, "guide_features": None, "disc_widths": None,
        "lambda_gan": None, "lambda_perc": None, "lambda_fm": None,
        "lr": None, "steps": None,
    },
    "eval": {"contexts": None, "max_steps": None, "trajectories_per_world": None},
    "seeds": {"train_worlds": None, "eval_worlds": None, "train": None, "eval": None},
}

DEFAULTS = {
    "schema_version": SCHEMA_VERSION,
    "geometry": {"width": 64, "height": 32},
    "world": {"room_count_range": [3, 6], "furniture_density": 0.15},
    "trajectory": {"per_world": 2, "perturb_sigma": 0.2},
    "structure": {"mode": "teacher_forcing", "lr": 1e-3, "batch": 8,
                  "steps": 200, "context_range": [1, 3]},
    "image": {"lambda_gan": 1.0, "lr": 2e-4, "steps": 200},
    "eval": {"contexts": [1, 2, 3], "max_steps": 6, "trajectories_per_world": 2},
    "seeds": {"train_worlds": [0, 1, 2, 3], "eval_worlds": [100, 101],
              "train": 0, "eval": 0},
}


def _check_keys(doc, schema, path=""):
    for key, value in doc.items():
        if key not in schema:
            raise ConfigError(f"unknown config key {path + key!r}")
        sub = schema[key]
        if isinstance(sub, dict):
            if not isinstance(value, dict):
                raise ConfigError(f"config key {path + key!r} must be an object")
            _check_keys(value, sub, path + key + ".")


def _merge(base, override):
    out = dict(base)
    for k, v in override.items():
        out[k] = _merge(base.get(k, {}), v) if isinstance(v, dict) else v
    return out


@dataclass
class RunConfig:
    doc: dict

    @staticmethod
    def parse(doc: dict) -> "RunConfig":
        if "schema_version" not in doc:
            raise ConfigError("config is missing schema_version")
        if doc["schema_version"] != SCHEMA_VERSION:
            raise ConfigError(f"unsupported config schema {doc['schema_version']!r}")
        _check_keys(doc, _SCHEMA)
        return RunConfig(_merge(DEFAULTS, doc))

    @staticmethod
    def load(path) -> "RunConfig":
        with open(path, encoding="utf-8") as fh:
            return RunConfig.parse(json.load(fh))

    def dump(self) -> str:
        return json.dumps(self.doc, indent=2, sort_keys=True)

    # -- section views ----------------------------------------------------
    def geometry(self) -> PanoGeometry:
        g = self.doc["geometry"]
        return PanoGeometry(g["width"], g["height"])

    def world_params(self) -> WorldParams:
        w = self.doc["world"]
        return WorldParams(tuple(w["room_count_range"]), w["furniture_density"])

    def struct_config(self) -> StructConfig:
        s = dict(self.doc["structure"])
        for k in ("mode", "lr", "batch", "steps", "context_range"):
            s.pop(k, None)
        if "enc_widths" in s:
            s["enc_widths"] = tuple(s["enc_widths"])
        g = self.doc["geometry"]
        s.setdefault("width", g["width"])
        s.setdefault("height", g["height"])
        return StructConfig(d_max=D_MAX, **s)

    def train_config(self) -> TrainConfig:
        s = self.doc["structure"]
        return TrainConfig(mode=s["mode"], lr=s["lr"], batch=s["batch"],
                           steps=s["steps"], seed=self.doc["seeds"]["train"],
                           context_range=tuple(s["context_range"]))

    def img_config(self) -> ImgConfig:
        i = dict(self.doc["image"])
        i.pop("steps", None)
        if "disc_widths" in i:
            i["disc_widths"] = tuple(i["disc_widths"])
        g = self.doc["geometry"]
        i.setdefault("width", g["width"])
        i.setdefault("height", g["height"])
        return ImgConfig(d_max=D_MAX, **i)
