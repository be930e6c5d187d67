"""Binary tensor container and dataset/model (de)serialization.

Tensor files are one UTF-8 JSON header line followed by the raw
little-endian float64 payload in C order::

    {"magic": "KGP1", "dtype": "f64le", "shape": [...],
     "axis_roles": [...], "mask_present": false}\n<payload>[<mask bytes>]

When a mask is present it trails the payload, one byte per entry
(1 = regular, 0 = gap).  Gap entries in the payload hold NaN as a
cross-check; the mask bytes are authoritative.
"""

from __future__ import annotations

import json
import os
from typing import NamedTuple

import numpy as np

from .errors import ValidationError

MAGIC = "KGP1"
DTYPE = "f64le"


class TensorData(NamedTuple):
    values: np.ndarray
    axis_roles: list
    mask: np.ndarray | None  # boolean, True = regular


def write_tensor(path, values, axis_roles, mask=None):
    values = np.asarray(values, dtype=np.float64)
    if len(axis_roles) != values.ndim:
        raise ValidationError(
            f"{len(axis_roles)} axis roles for a {values.ndim}-axis tensor"
        )
    header = {
        "magic": MAGIC,
        "dtype": DTYPE,
        "shape": list(values.shape),
        "axis_roles": list(axis_roles),
        "mask_present": mask is not None,
    }
    payload = np.ascontiguousarray(values, dtype="<f8")
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8"))
        fh.write(b"\n")
        fh.write(payload.tobytes())
        if mask is not None:
            m = np.asarray(mask, dtype=bool)
            if m.shape != values.shape:
                raise ValidationError(
                    f"mask shape {m.shape} does not match tensor shape {values.shape}"
                )
            fh.write(np.ascontiguousarray(m, dtype=np.uint8).tobytes())


def read_tensor(path):
    with open(path, "rb") as fh:
        header_line = fh.readline()
        try:
            header = json.loads(header_line.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError):
            raise ValidationError(f"{path}: malformed tensor header")
        if header.get("magic") != MAGIC:
            raise ValidationError(
                f"{path}: bad magic {header.get('magic')!r}, expected {MAGIC!r}"
            )
        if header.get("dtype") != DTYPE:
            raise ValidationError(
                f"{path}: unsupported dtype {header.get('dtype')!r}"
            )
        shape = tuple(int(s) for s in header["shape"])
        count = int(np.prod(shape)) if shape else 1
        raw = fh.read(8 * count)
        if len(raw) != 8 * count:
            raise ValidationError(f"{path}: truncated payload")
        values = np.frombuffer(raw, dtype="<f8").reshape(shape).copy()
        mask = None
        if header.get("mask_present"):
            mraw = fh.read(count)
            if len(mraw) != count:
                raise ValidationError(f"{path}: truncated mask payload")
            mask = np.frombuffer(mraw, dtype=np.uint8).reshape(shape).astype(bool)
    return TensorData(values, list(header["axis_roles"]), mask)


def write_json(path, obj):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_json(path):
    if not os.path.exists(path):
        raise ValidationError(f"no such file: {path}")
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)
