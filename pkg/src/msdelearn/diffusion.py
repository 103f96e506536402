"""Diffusion estimation from empirical quadratic variations.

The summed outer products of y-increments estimate the integrated
covariance: E[Q] = Sigma^y * T + O(dt) for constant noise.  The O(dt)
term is the squared drift; passing the fitted drift removes it, which
matters when |g| is large relative to sigma/sqrt(dt).  The constant-class
minimizer is closed form (mean Q over the horizon, eigenvalue-clipped to
PSD); sigma_hat is recovered by spectral square root.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .basis import BasisLibrary
from .drift import DriftEstimate, Regularization, accumulate_normal_equations, \
    solve_normal_equations
from .errors import ContractViolationError
from .simulate import TrajectoryEnsemble

__all__ = [
    "QuadraticVariationRecord",
    "DiffusionEstimate",
    "empirical_qv",
    "fit_sigma_constant",
    "fit_sigma_state_dependent",
    "matrix_sqrt_psd",
]

_CHUNK_FLOATS = 4_000_000


@dataclass(frozen=True)
class QuadraticVariationRecord:
    """Per-trajectory matrices Q^(m) = sum_l dy_l dy_l^T over [0, T]."""

    per_trajectory_Q: np.ndarray  # (M, D_y, D_y)
    horizon: float

    def __post_init__(self):
        Q = np.asarray(self.per_trajectory_Q, dtype=float)
        if Q.ndim != 3 or Q.shape[1] != Q.shape[2]:
            raise ContractViolationError(
                f"per_trajectory_Q must be (M, D_y, D_y), got {Q.shape}")
        if not np.allclose(Q, np.swapaxes(Q, 1, 2), rtol=0.0, atol=1e-12):
            raise ContractViolationError("Q matrices must be symmetric within 1e-12")
        if self.horizon <= 0:
            raise ContractViolationError("horizon must be positive")
        Q = Q.copy()
        Q.setflags(write=False)
        object.__setattr__(self, "per_trajectory_Q", Q)

    @property
    def M(self) -> int:
        return self.per_trajectory_Q.shape[0]


@dataclass(frozen=True)
class DiffusionEstimate:
    """Fitted noise covariance and its square root.

    constant_matrix class: Sigma_hat is a D_y x D_y symmetric PSD matrix
    and sigma_hat its spectral square root.  diagonal_state_dependent
    class: Sigma_hat is a DriftEstimate over a basis in y whose column i
    predicts Sigma_ii(y); evaluation clips negative variances to zero.
    degenerate flags an all-zero quadratic variation.
    """

    model_class: str
    Sigma_hat: np.ndarray | DriftEstimate
    sigma_hat: np.ndarray | None = None
    degenerate: bool = False

    def __post_init__(self):
        if self.model_class not in ("constant_matrix", "diagonal_state_dependent"):
            raise ContractViolationError(
                f"unknown diffusion model class {self.model_class!r}")

    def sigma_diagonal(self) -> np.ndarray:
        """Per-entry sigma values for the constant class (display convention)."""
        if self.model_class != "constant_matrix":
            raise ContractViolationError("sigma_diagonal applies to the constant class")
        return np.sqrt(np.clip(np.diag(self.Sigma_hat), 0.0, None))

    def sigma_function(self) -> Callable[[np.ndarray], np.ndarray]:
        """Per-entry sigma(y) for the state-dependent class, clipped at zero."""
        if self.model_class != "diagonal_state_dependent":
            raise ContractViolationError("sigma_function applies to the diagonal class")
        est = self.Sigma_hat

        def sigma(y: np.ndarray) -> np.ndarray:
            values = est.evaluate(np.asarray(y, dtype=float))
            return np.sqrt(np.clip(values, 0.0, None))

        return sigma

    def to_dict(self) -> dict:
        d = {"model_class": self.model_class, "degenerate": self.degenerate}
        if self.model_class == "constant_matrix":
            d["Sigma_hat"] = np.asarray(self.Sigma_hat).tolist()
            d["sigma_hat"] = np.asarray(self.sigma_hat).tolist()
        else:
            d["Sigma_hat"] = self.Sigma_hat.to_dict()
        return d

    @staticmethod
    def from_dict(d: dict) -> "DiffusionEstimate":
        if d["model_class"] == "constant_matrix":
            return DiffusionEstimate(model_class="constant_matrix",
                                     Sigma_hat=np.asarray(d["Sigma_hat"], dtype=float),
                                     sigma_hat=np.asarray(d["sigma_hat"], dtype=float),
                                     degenerate=bool(d["degenerate"]))
        return DiffusionEstimate(model_class="diagonal_state_dependent",
                                 Sigma_hat=DriftEstimate.from_dict(d["Sigma_hat"]),
                                 degenerate=bool(d["degenerate"]))


def _corrected_increments(ensemble: TrajectoryEnsemble,
                          drift_fn: Callable | None,
                          m_slice: slice) -> np.ndarray:
    """y-increments for a trajectory slice, minus drift*dt when provided."""
    dims = ensemble.dims
    block = ensemble.states[m_slice]
    dy = np.diff(block[:, :, dims.D_x:], axis=1)
    if drift_fn is not None:
        left = block[:, :-1, :].reshape(-1, dims.D_total)
        pred = np.asarray(drift_fn(left), dtype=float)
        if pred.shape != (left.shape[0], dims.D_y):
            raise ContractViolationError(
                f"drift_fn returned shape {pred.shape}, "
                f"expected ({left.shape[0]}, {dims.D_y})")
        dy = dy - pred.reshape(dy.shape) * ensemble.dt
    return dy


def empirical_qv(ensemble: TrajectoryEnsemble,
                 drift_fn: Callable | None = None) -> QuadraticVariationRecord:
    """Accumulate Q^(m) = sum_l dy_l dy_l^T for every trajectory.

    drift_fn (optional) maps batches of full states to y-drift
    predictions; when given, increments are drift-corrected before
    squaring, removing the O(dt) squared-drift bias from the estimate.
    """
    dims = ensemble.dims
    M, L = ensemble.M, ensemble.L
    if L < 2:
        raise ContractViolationError("ensemble needs at least 2 time points")
    Q = np.empty((M, dims.D_y, dims.D_y))
    chunk = max(1, _CHUNK_FLOATS // max((L - 1) * dims.D_y, 1))
    for s in range(0, M, chunk):
        dy = _corrected_increments(ensemble, drift_fn, slice(s, s + chunk))
        Q[s:s + chunk] = np.einsum("mld,mle->mde", dy, dy)
    return QuadraticVariationRecord(per_trajectory_Q=Q, horizon=ensemble.T)


def fit_sigma_constant(qv: QuadraticVariationRecord) -> DiffusionEstimate:
    """Closed-form constant-covariance fit: sym(mean Q)/T, clipped to PSD."""
    mean_Q = qv.per_trajectory_Q.mean(axis=0)
    Sigma = 0.5 * (mean_Q + mean_Q.T) / qv.horizon
    w, V = np.linalg.eigh(Sigma)
    Sigma = (V * np.clip(w, 0.0, None)) @ V.T
    Sigma = 0.5 * (Sigma + Sigma.T)
    degenerate = bool(np.all(np.abs(Sigma) < 1e-300))
    return DiffusionEstimate(model_class="constant_matrix", Sigma_hat=Sigma,
                             sigma_hat=matrix_sqrt_psd(Sigma), degenerate=degenerate)


def fit_sigma_state_dependent(ensemble: TrajectoryEnsemble, lib: BasisLibrary,
                              drift_fn: Callable | None = None,
                              reg: Regularization = Regularization()
                              ) -> DiffusionEstimate:
    """Diagonal state-dependent fit: regress per-step dy_i^2/dt on a y-basis.

    The basis library lives on the y-domain (dims_in = D_y).  Negative
    predicted variances are clipped to zero at evaluation time.
    """
    dims = ensemble.dims
    if lib.dims_in != dims.D_y:
        raise ContractViolationError(
            f"library dims_in {lib.dims_in} != D_y {dims.D_y}")
    y_left = ensemble.states[:, :-1, dims.D_x:].reshape(-1, dims.D_y)
    dy = _corrected_increments(ensemble, drift_fn, slice(None))
    targets = (dy ** 2).reshape(-1, dims.D_y) / ensemble.dt
    G, B, n = accumulate_normal_equations(lib, y_left, targets)
    coef = solve_normal_equations(G / n, B / n, reg)
    est = DriftEstimate(library=lib, coefficients=coef,
                        output_dim=dims.D_y, regularization=reg)
    degenerate = bool(np.all(np.abs(targets) < 1e-300))
    return DiffusionEstimate(model_class="diagonal_state_dependent",
                             Sigma_hat=est, degenerate=degenerate)


def matrix_sqrt_psd(Sigma: np.ndarray) -> np.ndarray:
    """Spectral square root U sqrt(D) U^T of a symmetric PSD matrix.

    Eigenvalues in [-1e-12, 0) are treated as rounding and clipped to 0;
    asymmetric input (beyond 1e-10) or genuinely negative eigenvalues
    raise ContractViolationError.
    """
    A = np.asarray(Sigma, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ContractViolationError(f"expected a square matrix, got shape {A.shape}")
    if not np.allclose(A, A.T, rtol=0.0, atol=1e-10):
        raise ContractViolationError("matrix_sqrt_psd input is not symmetric within 1e-10")
    w, V = np.linalg.eigh(0.5 * (A + A.T))
    scale = max(abs(w[0]), abs(w[-1]), 1.0)
    if w[0] < -1e-12 * scale:
        raise ContractViolationError(
            f"matrix has a negative eigenvalue {w[0]:.3e}; not PSD")
    root = (V * np.sqrt(np.clip(w, 0.0, None))) @ V.T
    return 0.5 * (root + root.T)
