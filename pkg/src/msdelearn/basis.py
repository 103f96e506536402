"""Finite-dimensional hypothesis spaces over hyperrectangles.

One-dimensional families (clamped B-splines, piecewise Legendre
polynomials, trigonometric polynomials) are combined by tensor-grid
products.  Query points outside the box are clamped to its boundary for
the polynomial families; the trig family is evaluated periodically and
never clamped.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from numpy.polynomial.legendre import legvander
from scipy.interpolate import BSpline

from .errors import ContractViolationError, ConfigurationError

__all__ = [
    "BasisSpec1D",
    "BasisLibrary",
    "uniform_spec",
    "trig_spec",
    "build_library",
    "uniform_library",
    "infer_box",
    "eval_basis",
    "design_matrix",
]

FAMILIES = ("bspline", "piecewise_poly", "trig")
DEFAULT_P_MAX = 2


@dataclass(frozen=True)
class BasisSpec1D:
    """One-dimensional basis family on the interval [knots[0], knots[-1]].

    For splines and piecewise polynomials the knots define the uniform or
    user-chosen segmentation; for the trig family the knots record the
    nominal period interval and the basis is {1, cos k*t, sin k*t} for
    k <= degree.
    """

    family: str
    degree: int
    knots: tuple[float, ...]
    p_max: int = DEFAULT_P_MAX

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ConfigurationError(
                f"unknown basis family {self.family!r}; expected one of {FAMILIES}")
        if not (0 <= self.degree <= self.p_max):
            raise ConfigurationError(
                f"degree {self.degree} outside [0, p_max={self.p_max}]")
        kn = tuple(float(k) for k in self.knots)
        if len(kn) < 2 or np.any(np.diff(kn) <= 0):
            raise ConfigurationError("knots must be strictly increasing, length >= 2")
        object.__setattr__(self, "knots", kn)
        if self.family == "trig" and self.degree < 1:
            raise ConfigurationError("trig family needs degree >= 1")

    @property
    def segments(self) -> int:
        return len(self.knots) - 1

    @property
    def interval(self) -> tuple[float, float]:
        return self.knots[0], self.knots[-1]

    @property
    def n_functions(self) -> int:
        if self.family == "bspline":
            return self.segments + self.degree
        if self.family == "piecewise_poly":
            return self.segments * (self.degree + 1)
        return 2 * self.degree + 1  # trig: 1, cos k, sin k

    def to_dict(self) -> dict:
        return {"family": self.family, "degree": self.degree,
                "knots": list(self.knots), "p_max": self.p_max}

    @staticmethod
    def from_dict(d: dict) -> "BasisSpec1D":
        return BasisSpec1D(family=d["family"], degree=int(d["degree"]),
                           knots=tuple(d["knots"]), p_max=int(d.get("p_max", DEFAULT_P_MAX)))


@dataclass(frozen=True)
class BasisLibrary:
    """Tensor-product hypothesis space over a box, one BasisSpec1D per dimension."""

    dims_in: int
    specs: tuple[BasisSpec1D, ...]
    box: np.ndarray  # shape (dims_in, 2), rows [a_i, b_i]

    def __post_init__(self):
        if len(self.specs) != self.dims_in:
            raise ContractViolationError(
                f"{len(self.specs)} specs for dims_in={self.dims_in}")
        box = np.asarray(self.box, dtype=float).reshape(self.dims_in, 2).copy()
        for i, sp in enumerate(self.specs):
            a, b = sp.interval
            if not (np.isclose(box[i, 0], a) and np.isclose(box[i, 1], b)):
                raise ContractViolationError(
                    f"box row {i} {box[i]} disagrees with spec interval ({a}, {b})")
        box.setflags(write=False)
        object.__setattr__(self, "box", box)

    @property
    def n_total(self) -> int:
        n = 1
        for sp in self.specs:
            n *= sp.n_functions
        return n

    def to_dict(self) -> dict:
        return {"dims_in": self.dims_in,
                "specs": [sp.to_dict() for sp in self.specs],
                "box": self.box.tolist()}

    @staticmethod
    def from_dict(d: dict) -> "BasisLibrary":
        specs = tuple(BasisSpec1D.from_dict(s) for s in d["specs"])
        return BasisLibrary(dims_in=int(d["dims_in"]), specs=specs,
                            box=np.asarray(d["box"], dtype=float))


def uniform_spec(family: str, a: float, b: float, segments: int,
                 degree: int, p_max: int = DEFAULT_P_MAX) -> BasisSpec1D:
    """Uniform segmentation of [a, b] into the given number of segments."""
    if segments < 1:
        raise ConfigurationError(f"segments must be >= 1, got {segments}")
    return BasisSpec1D(family=family, degree=degree,
                       knots=tuple(np.linspace(a, b, segments + 1)), p_max=p_max)


def trig_spec(degree: int, period: float = 2.0 * np.pi,
              p_max: int = DEFAULT_P_MAX) -> BasisSpec1D:
    """Periodic basis {1, cos k t, sin k t}, k <= degree, on [0, period)."""
    return BasisSpec1D(family="trig", degree=degree, knots=(0.0, period), p_max=p_max)


def build_library(specs: Sequence[BasisSpec1D]) -> BasisLibrary:
    """Assemble a BasisLibrary whose box is read off the per-dimension specs."""
    specs = tuple(specs)
    box = np.array([sp.interval for sp in specs], dtype=float)
    return BasisLibrary(dims_in=len(specs), specs=specs, box=box)


def uniform_library(box: np.ndarray, family, degree: int, segments: int,
                    p_max: int = DEFAULT_P_MAX) -> BasisLibrary:
    """Uniform-knot library over a box; family may be one name or one per dimension."""
    box = np.asarray(box, dtype=float).reshape(-1, 2)
    families = [family] * box.shape[0] if isinstance(family, str) else list(family)
    if len(families) != box.shape[0]:
        raise ConfigurationError(
            f"{len(families)} families for a {box.shape[0]}-dimensional box")
    specs = []
    for (a, b), fam in zip(box, families):
        if fam == "trig":
            specs.append(BasisSpec1D(family="trig", degree=degree,
                                     knots=(float(a), float(b)), p_max=p_max))
        else:
            specs.append(uniform_spec(fam, float(a), float(b), segments, degree, p_max))
    return build_library(specs)


def infer_box(data: np.ndarray, padding_fraction: float = 0.05) -> np.ndarray:
    """Per-dimension [min - pad, max + pad] with pad = padding_fraction*(max - min).

    Degenerate dimensions (max == min) get a floor pad of 1e-8 so the box
    always has positive volume.
    """
    pts = np.asarray(data, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    if pts.size == 0:
        raise ContractViolationError("infer_box needs nonempty data")
    if not np.all(np.isfinite(pts)):
        raise ContractViolationError("infer_box got non-finite data")
    if padding_fraction < 0:
        raise ContractViolationError("padding_fraction must be >= 0")
    lo = pts.min(axis=0)
    hi = pts.max(axis=0)
    pad = np.maximum(padding_fraction * (hi - lo), np.where(hi == lo, 1e-8, 0.0))
    return np.stack([lo - pad, hi + pad], axis=1)


def _design_1d(spec: BasisSpec1D, x: np.ndarray) -> np.ndarray:
    """Evaluate one 1-D family at points x, shape (n, spec.n_functions)."""
    x = np.asarray(x, dtype=float)
    a, b = spec.interval
    if spec.family == "bspline":
        xc = np.clip(x, a, b)
        t = np.concatenate([np.full(spec.degree, a), spec.knots,
                            np.full(spec.degree, b)])
        return BSpline.design_matrix(xc, t, spec.degree).toarray()
    if spec.family == "piecewise_poly":
        xc = np.clip(x, a, b)
        knots = np.asarray(spec.knots)
        seg = np.clip(np.searchsorted(knots, xc, side="right") - 1, 0, spec.segments - 1)
        # map into [-1, 1] on the active segment, then shifted Legendre columns
        left = knots[seg]
        width = knots[seg + 1] - knots[seg]
        u = 2.0 * (xc - left) / width - 1.0
        vand = legvander(u, spec.degree)
        out = np.zeros((x.size, spec.n_functions))
        cols = seg[:, None] * (spec.degree + 1) + np.arange(spec.degree + 1)[None, :]
        np.put_along_axis(out, cols, vand, axis=1)
        return out
    # trig: periodic, no clamping
    omega = 2.0 * np.pi / (b - a)
    cols = [np.ones_like(x)]
    for k in range(1, spec.degree + 1):
        cols.append(np.cos(k * omega * (x - a)))
        cols.append(np.sin(k * omega * (x - a)))
    return np.stack(cols, axis=1)


def design_matrix(lib: BasisLibrary, points: np.ndarray) -> np.ndarray:
    """Rows of tensor-product basis values, shape (#points, lib.n_total).

    Row i equals eval_basis(lib, points[i]); the tensor product is laid
    out in C order (last dimension fastest).
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    if pts.shape[1] != lib.dims_in:
        raise ContractViolationError(
            f"points have dimension {pts.shape[1]}, library expects {lib.dims_in}")
    out = _design_1d(lib.specs[0], pts[:, 0])
    for j in range(1, lib.dims_in):
        nxt = _design_1d(lib.specs[j], pts[:, j])
        out = np.einsum("nk,nl->nkl", out, nxt).reshape(pts.shape[0], -1)
    return out


def eval_basis(lib: BasisLibrary, point: np.ndarray) -> np.ndarray:
    """All n_total tensor-product basis values at one point."""
    return design_matrix(lib, np.asarray(point, dtype=float).reshape(1, -1))[0]
