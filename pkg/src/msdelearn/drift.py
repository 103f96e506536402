"""Least-squares drift estimation over tensor-product hypothesis spaces.

The continuous-time losses for f and g are discretized with forward
differences and the Ito left-point convention, which turns both fits into
linear least squares on the basis design.  Normal equations are
accumulated in fixed-size chunks in a fixed order, so results are
deterministic and memory stays bounded regardless of ensemble size.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .basis import BasisLibrary, design_matrix
from .errors import ContractViolationError, IllConditioningError
from .simulate import TrajectoryEnsemble

__all__ = [
    "Regularization",
    "DriftEstimate",
    "fit_f",
    "fit_g",
    "evaluate_drift",
]

# rows*n_total buffered per design chunk; ~32 MB of float64
_CHUNK_FLOATS = 4_000_000

# Eigenvalue floor relative to the largest Gram eigenvalue.  Gram
# eigenvalues are computed to ~1e-16 of the largest one, so design
# singular values below ~3e-7 of the largest are indistinguishable from
# rounding noise; such modes are truncated even when the nominal
# singular-value cutoff is lower.
_GRAM_FLOOR = 1e-13

_REG_KINDS = ("none", "ridge", "truncated_svd")


@dataclass(frozen=True)
class Regularization:
    """Solver conditioning policy.

    kind "none" demands a nonsingular Gram and raises otherwise;
    "ridge" adds strength*I to the sample-normalized Gram;
    "truncated_svd" drops modes whose singular value is below
    strength * (largest singular value).
    """

    kind: str = "truncated_svd"
    strength: float = 1e-10

    def __post_init__(self):
        if self.kind not in _REG_KINDS:
            raise ContractViolationError(
                f"unknown regularization kind {self.kind!r}; expected one of {_REG_KINDS}")
        if self.strength < 0:
            raise ContractViolationError("regularization strength must be >= 0")

    def to_dict(self) -> dict:
        return {"kind": self.kind, "strength": self.strength}

    @staticmethod
    def from_dict(d: dict) -> "Regularization":
        return Regularization(kind=d["kind"], strength=float(d["strength"]))


@dataclass(frozen=True)
class DriftEstimate:
    """A fitted drift: coefficients over a BasisLibrary, one column per output."""

    library: BasisLibrary
    coefficients: np.ndarray  # (n_total, output_dim)
    output_dim: int
    regularization: Regularization

    def __post_init__(self):
        coef = np.asarray(self.coefficients, dtype=float)
        if coef.ndim == 1:
            coef = coef[:, None]
        if coef.shape != (self.library.n_total, self.output_dim):
            raise ContractViolationError(
                f"coefficients shape {coef.shape} != "
                f"({self.library.n_total}, {self.output_dim})")
        if not np.all(np.isfinite(coef)):
            raise ContractViolationError("coefficients must be finite")
        coef = coef.copy()
        coef.setflags(write=False)
        object.__setattr__(self, "coefficients", coef)

    def evaluate(self, points: np.ndarray) -> np.ndarray:
        """Predictions at feature points, shape (#points, output_dim); chunked."""
        pts = np.asarray(points, dtype=float)
        squeeze = pts.ndim == 1
        if squeeze:
            pts = pts.reshape(1, -1)
        chunk = max(1, _CHUNK_FLOATS // max(self.library.n_total, 1))
        out = np.empty((pts.shape[0], self.output_dim))
        for s in range(0, pts.shape[0], chunk):
            out[s:s + chunk] = design_matrix(self.library, pts[s:s + chunk]) @ self.coefficients
        return out[0] if squeeze else out

    def __call__(self, points: np.ndarray) -> np.ndarray:
        return self.evaluate(points)

    def to_dict(self) -> dict:
        return {"library": self.library.to_dict(),
                "coefficients": self.coefficients.tolist(),
                "output_dim": self.output_dim,
                "regularization": self.regularization.to_dict()}

    @staticmethod
    def from_dict(d: dict) -> "DriftEstimate":
        return DriftEstimate(library=BasisLibrary.from_dict(d["library"]),
                             coefficients=np.asarray(d["coefficients"], dtype=float),
                             output_dim=int(d["output_dim"]),
                             regularization=Regularization.from_dict(d["regularization"]))


def accumulate_normal_equations(lib: BasisLibrary, points: np.ndarray,
                                targets: np.ndarray):
    """Gram and cross terms of the design, chunked in fixed order.

    Returns (G, B, n) with G = Phi^T Phi, B = Phi^T targets, n = #rows.
    """
    pts = np.asarray(points, dtype=float)
    tgt = np.asarray(targets, dtype=float)
    if tgt.ndim == 1:
        tgt = tgt[:, None]
    if pts.shape[0] != tgt.shape[0]:
        raise ContractViolationError(
            f"{pts.shape[0]} points for {tgt.shape[0]} targets")
    p = lib.n_total
    G = np.zeros((p, p))
    B = np.zeros((p, tgt.shape[1]))
    chunk = max(1, _CHUNK_FLOATS // max(p, 1))
    for s in range(0, pts.shape[0], chunk):
        Phi = design_matrix(lib, pts[s:s + chunk])
        G += Phi.T @ Phi
        B += Phi.T @ tgt[s:s + chunk]
    return G, B, pts.shape[0]


def solve_normal_equations(G: np.ndarray, B: np.ndarray,
                           reg: Regularization) -> np.ndarray:
    """Coefficients from (normalized) normal equations under the given policy."""
    w, V = np.linalg.eigh(G)
    wmax = float(w[-1]) if w.size else 0.0
    if reg.kind == "ridge":
        return V @ ((V.T @ B) / (w + reg.strength)[:, None])
    cutoff = max(reg.strength ** 2, _GRAM_FLOOR) * wmax
    keep = w > cutoff
    if reg.kind == "none":
        if wmax <= 0 or not keep.all():
            raise IllConditioningError(
                "Gram matrix is singular or near-singular; pass "
                "Regularization(kind='ridge') or kind='truncated_svd'")
        return V @ ((V.T @ B) / w[:, None])
    # truncated_svd
    if not keep.any():
        raise IllConditioningError(
            "all Gram eigenvalues fall below the truncation cutoff")
    Vk = V[:, keep]
    return Vk @ ((Vk.T @ B) / w[keep][:, None])


def _fit_block(ensemble: TrajectoryEnsemble, feature, lib: BasisLibrary,
               block: str, reg: Regularization) -> DriftEstimate:
    dims = ensemble.dims
    lo, hi = (0, dims.D_x) if block == "x" else (dims.D_x, dims.D_total)
    if ensemble.L < 2:
        raise ContractViolationError("ensemble needs at least 2 time points")
    flat = ensemble.states[:, :-1, :].reshape(-1, dims.D_total)
    feats = flat if feature is None else np.asarray(feature(flat), dtype=float)
    if feats.shape[-1] != lib.dims_in:
        raise ContractViolationError(
            f"feature dimension {feats.shape[-1]} != library dims_in {lib.dims_in}")
    increments = np.diff(ensemble.states[:, :, lo:hi], axis=1)
    targets = increments.reshape(-1, hi - lo) / ensemble.dt
    G, B, n = accumulate_normal_equations(lib, feats, targets)
    # normalizing both sides by the sample count fixes the scale that
    # ridge strengths and truncation cutoffs are read against
    coef = solve_normal_equations(G / n, B / n, reg)
    return DriftEstimate(library=lib, coefficients=coef,
                         output_dim=hi - lo, regularization=reg)


def fit_f(ensemble: TrajectoryEnsemble, feature_f: Callable | None,
          lib: BasisLibrary,
          reg: Regularization = Regularization()) -> DriftEstimate:
    """Fit the x-block drift by regressing forward differences dx/dt on the basis.

    feature_f maps batches of full states to f's feature vectors (None
    means identity).  Returns the least-squares minimizer of the
    discretized loss sum_{m,l} ||f(xi_f(z_l)) - dx_l/dt||^2.
    """
    return _fit_block(ensemble, feature_f, lib, "x", reg)


def fit_g(ensemble: TrajectoryEnsemble, feature_g: Callable | None,
          lib: BasisLibrary, weight: np.ndarray | None = None,
          reg: Regularization = Regularization()) -> DriftEstimate:
    """Fit the y-block drift from the discretized Girsanov-type loss.

    weight is the constant covariance matrix whose inverse weights the
    loss (identity when None).  Any constant symmetric positive-definite
    weight is validated but cannot move the minimizer: with one shared
    basis the stationarity condition reads (Phi^T Phi) C W^{-1} =
    (Phi^T V) W^{-1}, and W^{-1} cancels.  The weighted form is covered
    against an independent dense generalized-least-squares oracle in the
    test suite.
    """
    if weight is not None:
        W = np.asarray(weight, dtype=float)
        D_y = ensemble.dims.D_y
        if W.shape == ():
            W = W.reshape(1, 1)
        if W.shape != (D_y, D_y):
            raise ContractViolationError(
                f"weight shape {W.shape} != ({D_y}, {D_y})")
        if not np.allclose(W, W.T, rtol=0.0, atol=1e-10):
            raise ContractViolationError("weight must be symmetric")
        if np.linalg.eigvalsh(W).min() <= 0:
            raise ContractViolationError("weight must be positive definite")
    return _fit_block(ensemble, feature_g, lib, "y", reg)


def evaluate_drift(est: DriftEstimate, point: np.ndarray) -> np.ndarray:
    """coefficients^T basis(point); accepts a single point or a batch."""
    return est.evaluate(point)
