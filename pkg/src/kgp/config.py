"""Run configuration: JSON schema, validation, defaults.

Configs are strict -- unknown keys anywhere in the document are rejected so
typos fail loudly instead of silently falling back to defaults.  Every
command writes its fully resolved config next to its outputs.
"""

from __future__ import annotations

import copy

import jsonschema

from .errors import ValidationError

_NUM = {"type": "number"}
_POSINT = {"type": "integer", "minimum": 1}

SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "seed": {"type": "integer", "minimum": 0},
        "dataset": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "preset": {"enum": ["burgers", "gappy2d"]},
                "n_param": _POSINT,
                "m_spatial": _POSINT,
                "n_time": _POSINT,
                "t_final": _NUM,
                "x_max": _NUM,
                "parameters": {
                    "type": "array",
                    "items": {"type": "array", "items": _NUM},
                },
                "nx": _POSINT,
                "ny": _POSINT,
                "hole_radius": _NUM,
            },
        },
        "data": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "manifest": {"type": "string"},
                "holdout": {"type": "integer", "minimum": 0},
            },
        },
        "kernel": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "family": {"enum": ["se", "matern52"]},
                "deep": {"type": "boolean"},
                "widths": {"type": "array", "items": _POSINT},
                "latent_dim": _POSINT,
                "activation": {"enum": ["relu", "tanh", "identity"]},
            },
        },
        "training": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "learning_rate": _NUM,
                "beta1": _NUM,
                "beta2": _NUM,
                "weight_decay": _NUM,
                "max_iters": {"type": "integer", "minimum": 0},
                "fd_step": _NUM,
                "lr_decay_step": {"type": ["integer", "null"], "minimum": 1},
                "lr_decay_factor": _NUM,
            },
        },
        "gappy": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "enabled": {"type": "boolean"},
                "cg_tol": _NUM,
                "cg_maxiter": _POSINT,
            },
        },
        "predict": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "parameters": {
                    "type": "array",
                    "items": {"type": "array", "items": _NUM},
                },
                "spatial_axes": {
                    "type": "array",
                    "items": {"type": "array", "items": _NUM},
                },
                "times": {"type": "array", "items": _NUM},
            },
        },
        "output": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"dir": {"type": "string"}},
        },
    },
}

DEFAULTS = {
    "seed": 0,
    "dataset": {
        "preset": "burgers",
        "n_param": 20,
        "m_spatial": 128,
        "n_time": 100,
        "t_final": 35.0,
        "x_max": 100.0,
        "nx": 12,
        "ny": 12,
        "hole_radius": 0.25,
    },
    "data": {"holdout": 0},
    "kernel": {
        "family": "matern52",
        "deep": True,
        "widths": [16, 16],
        "latent_dim": 2,
        "activation": "relu",
    },
    "training": {
        "learning_rate": 1e-2,
        "beta1": 0.5,
        "beta2": 0.9,
        "weight_decay": 2.5e-5,
        "max_iters": 100,
        "fd_step": 1e-5,
        "lr_decay_step": None,
        "lr_decay_factor": 0.8,
    },
    "gappy": {"enabled": False, "cg_tol": 1e-5, "cg_maxiter": 2000},
    "predict": {},
    "output": {"dir": "kgp_out"},
}


def validate_config(doc):
    """Schema-check a raw config document; returns it with defaults merged."""
    try:
        jsonschema.validate(doc, SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ValidationError(f"config invalid at {where}: {exc.message}")
    merged = copy.deepcopy(DEFAULTS)
    for key, value in doc.items():
        if isinstance(value, dict):
            merged[key].update(value)
        else:
            merged[key] = value
    return merged
