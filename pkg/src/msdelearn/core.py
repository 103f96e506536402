"""Data model for mixed SDE systems.

A mixed SDE (mSDE) splits the state z = (x, y) into a noise-free block x
of dimension D_x and a noisy block y of dimension D_y:

    dx = f(xi_f(z)) dt
    dy = g(xi_g(z)) dt + sigma_y(y) dw

so the full D x D diffusion matrix is block-singular with at least D_x
zero eigenvalues.  All drift, feature, and diffusion callables follow one
vectorization convention: they accept arrays shaped ``(..., dim_in)`` and
return ``(..., dim_out)`` (``(..., D_y, D_y)`` for the diffusion map), so
a single call evaluates a whole batch of states.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import ContractViolationError, ConfigurationError

__all__ = [
    "SystemDimensions",
    "StateVector",
    "InitialDistribution",
    "ModelSystem",
    "full_drift",
    "full_diffusion",
]

# Symmetry tolerance for every diffusion-map evaluation.
SYMMETRY_ATOL = 1e-12


@dataclass(frozen=True)
class SystemDimensions:
    """Dimension bookkeeping for one mSDE system."""

    D_total: int  # full state dimension
    D_x: int      # noise-free block
    D_y: int      # noisy block
    d_f: int      # feature dimension consumed by f
    d_g: int      # feature dimension consumed by g

    def __post_init__(self):
        if self.D_x < 1 or self.D_y < 1:
            raise ContractViolationError(
                f"blocks must be nonempty: D_x={self.D_x}, D_y={self.D_y}")
        if self.D_total != self.D_x + self.D_y:
            raise ContractViolationError(
                f"D_total={self.D_total} != D_x+D_y={self.D_x + self.D_y}")
        if self.d_f < 1 or self.d_g < 1:
            raise ContractViolationError(
                f"feature dimensions must be positive: d_f={self.d_f}, d_g={self.d_g}")


@dataclass(frozen=True)
class StateVector:
    """One state z = (x_block, y_block); arrays are 1-D and read-only."""

    x_block: np.ndarray
    y_block: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "x_block", _frozen_1d(self.x_block))
        object.__setattr__(self, "y_block", _frozen_1d(self.y_block))

    @property
    def full(self) -> np.ndarray:
        return np.concatenate([self.x_block, self.y_block])

    def __len__(self) -> int:
        return self.x_block.size + self.y_block.size


def _frozen_1d(a) -> np.ndarray:
    out = np.atleast_1d(np.asarray(a, dtype=float))
    if out.ndim != 1:
        raise ContractViolationError("state blocks must be 1-D")
    out = out.copy()
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class InitialDistribution:
    """Sampler for the initial state mu_0.

    kind:
        uniform_box    -- independent Uniform(lower_i, upper_i) per coordinate
        uniform_angle  -- independent Uniform(0, 2*pi) per coordinate
        gaussian       -- independent Normal(mean_i, std_i) per coordinate
        custom_sampler -- a callable (rng, n) -> array (n, D); needed when
                          coordinates are not independent boxes (e.g. a
                          positional box paired with a uniform angle)
    """

    kind: str
    parameters: dict = field(default_factory=dict)

    _KINDS = ("uniform_box", "uniform_angle", "gaussian", "custom_sampler")

    def __post_init__(self):
        if self.kind not in self._KINDS:
            raise ConfigurationError(
                f"unknown initial-distribution kind {self.kind!r}; "
                f"expected one of {self._KINDS}")

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        """Draw n initial states, shaped (n, D)."""
        p = self.parameters
        if self.kind == "uniform_box":
            lower = np.asarray(p["lower"], dtype=float)
            upper = np.asarray(p["upper"], dtype=float)
            return rng.uniform(lower, upper, size=(n, lower.size))
        if self.kind == "uniform_angle":
            dim = int(p.get("dim", 1))
            return rng.uniform(0.0, 2.0 * np.pi, size=(n, dim))
        if self.kind == "gaussian":
            mean = np.asarray(p["mean"], dtype=float)
            std = np.asarray(p["std"], dtype=float)
            return mean + std * rng.standard_normal((n, mean.size))
        draws = np.asarray(p["sampler"](rng, n), dtype=float)
        if draws.ndim != 2 or draws.shape[0] != n:
            raise ContractViolationError(
                f"custom sampler returned shape {draws.shape}, expected ({n}, D)")
        return draws


@dataclass(frozen=True)
class ModelSystem:
    """A complete mSDE specification.

    drift_f, drift_g consume feature vectors produced by feature_f,
    feature_g (identity by default); diffusion_sigma_y maps the y-block to
    a symmetric PSD D_y x D_y matrix.  All callables must be pure and
    vectorized over leading axes.  periodic_features_f marks feature
    coordinates of f that live on the circle (drives periodic bases).
    """

    dims: SystemDimensions
    drift_f: Callable[[np.ndarray], np.ndarray]
    drift_g: Callable[[np.ndarray], np.ndarray]
    diffusion_sigma_y: Callable[[np.ndarray], np.ndarray]
    feature_f: Callable[[np.ndarray], np.ndarray] | None = None
    feature_g: Callable[[np.ndarray], np.ndarray] | None = None
    initial: InitialDistribution | None = None
    name: str = "custom"
    periodic_features_f: tuple[bool, ...] = ()

    def features_f(self, states: np.ndarray) -> np.ndarray:
        """Apply xi_f to states shaped (..., D_total)."""
        if self.feature_f is None:
            return states
        return np.asarray(self.feature_f(states), dtype=float)

    def features_g(self, states: np.ndarray) -> np.ndarray:
        """Apply xi_g to states shaped (..., D_total)."""
        if self.feature_g is None:
            return states
        return np.asarray(self.feature_g(states), dtype=float)


def _as_state_array(state, dims: SystemDimensions) -> np.ndarray:
    if isinstance(state, StateVector):
        arr = state.full
    else:
        arr = np.atleast_1d(np.asarray(state, dtype=float))
    if arr.shape[-1] != dims.D_total:
        raise ContractViolationError(
            f"state has {arr.shape[-1]} components, model expects D_total={dims.D_total}")
    return arr


def full_drift(model: ModelSystem, state) -> np.ndarray:
    """Assemble the full drift h(z) = [f(xi_f(z)); g(xi_g(z))].

    Parameters
    ----------
    model : ModelSystem
    state : StateVector or array (..., D_total)

    Returns
    -------
    array (..., D_total); the first D_x entries are the x-block drift.
    """
    z = _as_state_array(state, model.dims)
    ff = model.features_f(z)
    fg = model.features_g(z)
    if ff.shape[-1] != model.dims.d_f:
        raise ContractViolationError(
            f"feature_f produced {ff.shape[-1]} components, expected d_f={model.dims.d_f}")
    if fg.shape[-1] != model.dims.d_g:
        raise ContractViolationError(
            f"feature_g produced {fg.shape[-1]} components, expected d_g={model.dims.d_g}")
    fx = np.asarray(model.drift_f(ff), dtype=float)
    gy = np.asarray(model.drift_g(fg), dtype=float)
    if fx.shape[-1] != model.dims.D_x:
        raise ContractViolationError(
            f"drift_f produced {fx.shape[-1]} components, expected D_x={model.dims.D_x}")
    if gy.shape[-1] != model.dims.D_y:
        raise ContractViolationError(
            f"drift_g produced {gy.shape[-1]} components, expected D_y={model.dims.D_y}")
    return np.concatenate([fx, gy], axis=-1)


def full_diffusion(model: ModelSystem, state) -> np.ndarray:
    """Assemble the full (singular) diffusion matrix of shape (..., D, D).

    The x-rows and x-columns are identically zero; the y-block equals
    diffusion_sigma_y(y), which must be symmetric within 1e-12.
    """
    z = _as_state_array(state, model.dims)
    dims = model.dims
    sig = np.asarray(model.diffusion_sigma_y(z[..., dims.D_x:]), dtype=float)
    if sig.shape[-2:] != (dims.D_y, dims.D_y):
        raise ContractViolationError(
            f"diffusion_sigma_y produced shape {sig.shape[-2:]}, "
            f"expected ({dims.D_y}, {dims.D_y})")
    if not np.allclose(sig, np.swapaxes(sig, -1, -2), rtol=0.0, atol=SYMMETRY_ATOL):
        raise ContractViolationError(
            "diffusion_sigma_y output is not symmetric within 1e-12")
    out = np.zeros(z.shape[:-1] + (dims.D_total, dims.D_total))
    out[..., dims.D_x:, dims.D_x:] = sig
    return out
