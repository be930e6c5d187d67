"""Cartesian product grids of training/test inputs.

A grid is an ordered list of factor axes: one parameter axis (rows are
parameter vectors), one or more spatial axes (rows are coordinates along
one spatial dimension), and at most one temporal axis.  The axis order
(parameter, x_1, ..., x_d, time) fixes the layout of every field tensor
and the factor order of every Kronecker operator built on the grid.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError

ROLES = ("parameter", "spatial", "temporal")


def _as_points(points):
    p = np.asarray(points, dtype=np.float64)
    if p.ndim == 1:
        p = p[:, None]
    if p.ndim != 2 or p.shape[0] == 0:
        raise ValidationError(f"axis points must be a nonempty n x q array, got shape {p.shape}")
    return p


@dataclass(frozen=True)
class Axis:
    role: str
    points: np.ndarray

    def __post_init__(self):
        if self.role not in ROLES:
            raise ValidationError(f"unknown axis role {self.role!r}")
        object.__setattr__(self, "points", _as_points(self.points))
        if np.unique(self.points, axis=0).shape[0] != self.points.shape[0]:
            raise ValidationError(f"{self.role} axis has duplicate rows")

    @property
    def size(self):
        return self.points.shape[0]

    @property
    def dim(self):
        return self.points.shape[1]


@dataclass(frozen=True)
class ProductGrid:
    """Ordered axes whose Cartesian product is the full input lattice."""

    axes: tuple

    def __init__(self, axes):
        axes = tuple(axes)
        roles = [a.role for a in axes]
        if roles.count("parameter") != 1 or roles[0] != "parameter":
            raise ValidationError("grid needs exactly one parameter axis, first")
        if roles.count("spatial") < 1:
            raise ValidationError("grid needs at least one spatial axis")
        if roles.count("temporal") > 1:
            raise ValidationError("grid allows at most one temporal axis")
        if "temporal" in roles and roles[-1] != "temporal":
            raise ValidationError("temporal axis must come last")
        mid = roles[1:-1] if roles[-1] == "temporal" else roles[1:]
        if any(r != "spatial" for r in mid):
            raise ValidationError("spatial axes must sit between parameter and time")
        object.__setattr__(self, "axes", axes)

    @classmethod
    def from_arrays(cls, params, spatial, times=None):
        axes = [Axis("parameter", params)]
        axes += [Axis("spatial", x) for x in spatial]
        if times is not None:
            axes.append(Axis("temporal", times))
        return cls(axes)

    @property
    def shape(self):
        return tuple(a.size for a in self.axes)

    @property
    def n_total(self):
        return int(np.prod(self.shape))

    @property
    def spatial_axes(self):
        return tuple(a for a in self.axes if a.role == "spatial")

    @property
    def spatial_shape(self):
        return tuple(a.size for a in self.spatial_axes)

    @property
    def n_spatial(self):
        return int(np.prod(self.spatial_shape))

    @property
    def n_param(self):
        return self.axes[0].size

    @property
    def n_time(self):
        return self.axes[-1].size if self.axes[-1].role == "temporal" else 1

    @property
    def has_time(self):
        return self.axes[-1].role == "temporal"

    def full_points(self):
        """Enumerate the lattice as an (n_total, sum of dims) matrix.

        Row order matches C-order raveling of a field tensor on this grid,
        i.e. the last axis varies fastest.
        """
        cols = []
        for i, ax in enumerate(self.axes):
            reps_before = int(np.prod(self.shape[:i])) if i else 1
            reps_after = int(np.prod(self.shape[i + 1:])) if i + 1 < len(self.axes) else 1
            block = np.repeat(ax.points, reps_after, axis=0)
            cols.append(np.tile(block, (reps_before, 1)))
        return np.hstack(cols)

    def check_field(self, y):
        y = np.asarray(y, dtype=np.float64)
        if y.shape != self.shape:
            raise ValidationError(
                f"field tensor shape {y.shape} does not match grid shape {self.shape}"
            )
        return y
