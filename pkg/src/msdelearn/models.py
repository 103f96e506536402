"""Built-in model zoo and the Cucker-Smale kernel-learning reduction.

Five systems: a polynomial toy model, the van der Pol oscillator, a
single-agent Vicsek model with angular noise, the stochastic
Henon-Heiles system, and N-agent Cucker-Smale flocking whose pairwise
alignment kernel is learned as a one-dimensional function of distance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .basis import BasisLibrary, design_matrix, infer_box
from .core import InitialDistribution, ModelSystem, SystemDimensions
from .diffusion import DiffusionEstimate
from .drift import DriftEstimate, Regularization, solve_normal_equations
from .errors import ConfigurationError, ContractViolationError
from .simulate import TrajectoryEnsemble

__all__ = [
    "BUILTIN_NAMES",
    "CuckerSmaleSpec",
    "KernelEstimate",
    "make_builtin",
    "toy_model",
    "van_der_pol_model",
    "vicsek_model",
    "henon_heiles_model",
    "cucker_smale_model",
    "default_alignment_kernel",
    "cs_drift",
    "cs_feature_design",
    "cs_fit_kernel",
    "cs_pairwise_distances",
    "assemble_fitted_model",
]

BUILTIN_NAMES = ("toy", "van_der_pol", "vicsek", "henon_heiles", "cucker_smale")

_CHUNK_ROWS = 50_000


# ---------------------------------------------------------------------------
# low-dimensional systems

def toy_model(sigma: float = 0.1) -> ModelSystem:
    """dx = (0.4x - 0.1xy) dt, dy = (-0.8y + 0.2x^2) dt + sigma dw."""

    def f(z):
        return (0.4 * z[..., 0] - 0.1 * z[..., 0] * z[..., 1])[..., None]

    def g(z):
        return (-0.8 * z[..., 1] + 0.2 * z[..., 0] ** 2)[..., None]

    return ModelSystem(
        dims=SystemDimensions(D_total=2, D_x=1, D_y=1, d_f=2, d_g=2),
        drift_f=f, drift_g=g,
        diffusion_sigma_y=_constant_sigma(np.array([[float(sigma)]])),
        initial=_unit_box(2), name="toy")


def van_der_pol_model(mu: float = 1.0, sigma: float = 0.1) -> ModelSystem:
    """dx = y dt, dy = (mu(1 - x^2)y - x) dt + sigma dw."""
    mu = float(mu)

    def f(z):
        return z[..., 1][..., None]

    def g(z):
        return (mu * (1.0 - z[..., 0] ** 2) * z[..., 1] - z[..., 0])[..., None]

    return ModelSystem(
        dims=SystemDimensions(D_total=2, D_x=1, D_y=1, d_f=2, d_g=2),
        drift_f=f, drift_g=g,
        diffusion_sigma_y=_constant_sigma(np.array([[float(sigma)]])),
        initial=_unit_box(2), name="van_der_pol")


def vicsek_model(v: float = 0.03, k: float = 0.05,
                 sigma: float = 0.08) -> ModelSystem:
    """Single agent at constant speed v whose heading theta relaxes toward
    the line x = y: dx = v cos(theta) dt, dy = v sin(theta) dt,
    dtheta = k(x - y) dt + sigma dw.  The heading feature is periodic.
    """
    v = float(v)
    k = float(k)

    def f(theta):
        t = theta[..., 0]
        return np.stack([v * np.cos(t), v * np.sin(t)], axis=-1)

    def g(xy):
        return (k * (xy[..., 0] - xy[..., 1]))[..., None]

    def sampler(rng, n):
        return np.concatenate([rng.uniform(0.0, 1.0, size=(n, 2)),
                               rng.uniform(0.0, 2.0 * np.pi, size=(n, 1))], axis=1)

    return ModelSystem(
        dims=SystemDimensions(D_total=3, D_x=2, D_y=1, d_f=1, d_g=2),
        drift_f=f, drift_g=g,
        diffusion_sigma_y=_constant_sigma(np.array([[float(sigma)]])),
        feature_f=lambda z: z[..., 2:3],
        feature_g=lambda z: z[..., 0:2],
        initial=InitialDistribution(kind="custom_sampler",
                                    parameters={"sampler": sampler}),
        name="vicsek", periodic_features_f=(True,))


def henon_heiles_model(lam: float = 1.0, sigma1: float = 0.07,
                       sigma2: float = 0.05) -> ModelSystem:
    """Stochastic Henon-Heiles: positions (x, y) driven by momenta
    (p_x, p_y); momenta feel the cubic potential force plus diagonal noise
    diag(sigma1, sigma2).  State order is (x, y, p_x, p_y).
    """
    lam = float(lam)

    def f(p):
        return p

    def g(xy):
        x, y = xy[..., 0], xy[..., 1]
        return np.stack([-x - 2.0 * lam * x * y,
                         -y - lam * (x ** 2 - y ** 2)], axis=-1)

    return ModelSystem(
        dims=SystemDimensions(D_total=4, D_x=2, D_y=2, d_f=2, d_g=2),
        drift_f=f, drift_g=g,
        diffusion_sigma_y=_constant_sigma(np.diag([float(sigma1), float(sigma2)])),
        feature_f=lambda z: z[..., 2:4],
        feature_g=lambda z: z[..., 0:2],
        initial=_unit_box(4), name="henon_heiles")


def _unit_box(dim: int) -> InitialDistribution:
    return InitialDistribution(kind="uniform_box",
                               parameters={"lower": [0.0] * dim,
                                           "upper": [1.0] * dim})


def _constant_sigma(matrix: np.ndarray) -> Callable[[np.ndarray], np.ndarray]:
    matrix = np.asarray(matrix, dtype=float)
    matrix.setflags(write=False)

    def sigma_y(_y: np.ndarray) -> np.ndarray:
        return matrix

    return sigma_y


# ---------------------------------------------------------------------------
# Cucker-Smale

def default_alignment_kernel(r: np.ndarray) -> np.ndarray:
    """phi(r) = (1 + r^2)^(-1/4)."""
    r = np.asarray(r, dtype=float)
    return (1.0 + r ** 2) ** (-0.25)


@dataclass(frozen=True)
class CuckerSmaleSpec:
    """N agents in dimension d with pairwise velocity alignment.

    kernel_phi maps distance arrays to kernel values; sigma_v is either a
    constant noise level or a callable on per-agent velocities (..., d)
    returning nonnegative scalars (...,).
    """

    N: int
    d: int
    kernel_phi: Callable[[np.ndarray], np.ndarray]
    sigma_v: float | Callable[[np.ndarray], np.ndarray] = 0.1

    def __post_init__(self):
        if self.N < 2 or self.d < 1:
            raise ConfigurationError(f"need N >= 2 agents, d >= 1; got N={self.N}, d={self.d}")

    @property
    def dims(self) -> SystemDimensions:
        nd = self.N * self.d
        return SystemDimensions(D_total=2 * nd, D_x=nd, D_y=nd, d_f=2 * nd, d_g=2 * nd)


def cs_drift(spec: CuckerSmaleSpec, positions: np.ndarray,
             velocities: np.ndarray) -> np.ndarray:
    """Reference O(N^2 d) alignment drift.

    Row i is (1/N) sum_{j != i} phi(||x_j - x_i||)(v_j - v_i).  Pair terms
    are summed with math.fsum (exactly rounded), so relabeling agents
    permutes the output rows bit-identically.
    """
    x = np.asarray(positions, dtype=float)
    v = np.asarray(velocities, dtype=float)
    if x.shape != (spec.N, spec.d) or v.shape != (spec.N, spec.d):
        raise ContractViolationError(
            f"positions/velocities must be ({spec.N}, {spec.d}); "
            f"got {x.shape} and {v.shape}")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(v))):
        raise ContractViolationError("cs_drift needs finite inputs")
    out = np.empty((spec.N, spec.d))
    for i in range(spec.N):
        terms = [[] for _ in range(spec.d)]
        for j in range(spec.N):
            if j == i:
                continue
            r = math.sqrt(math.fsum((x[j, k] - x[i, k]) ** 2 for k in range(spec.d)))
            w = float(spec.kernel_phi(np.asarray(r)))
            for k in range(spec.d):
                terms[k].append(w * (v[j, k] - v[i, k]))
        for k in range(spec.d):
            out[i, k] = math.fsum(terms[k]) / spec.N
    return out


def _cs_drift_batch(spec: CuckerSmaleSpec, pos: np.ndarray,
                    vel: np.ndarray) -> np.ndarray:
    """Vectorized alignment drift over a batch, shape (n, N, d)."""
    rel_x = pos[:, None, :, :] - pos[:, :, None, :]   # [n, i, j] = x_j - x_i
    rel_v = vel[:, None, :, :] - vel[:, :, None, :]
    r = np.sqrt(np.sum(rel_x ** 2, axis=-1))
    w = np.asarray(spec.kernel_phi(r), dtype=float)
    # j = i contributes nothing because rel_v vanishes on the diagonal
    return np.einsum("nij,nijd->nid", w, rel_v) / spec.N


def cucker_smale_model(spec: CuckerSmaleSpec | None = None, N: int = 20,
                       d: int = 2, sigma: float = 0.1,
                       kernel_phi: Callable | None = None) -> ModelSystem:
    """Flocking mSDE: positions integrate velocities; velocities align
    pairwise through kernel_phi and carry per-agent isotropic noise.
    """
    if spec is None:
        spec = CuckerSmaleSpec(N=int(N), d=int(d),
                               kernel_phi=kernel_phi or default_alignment_kernel,
                               sigma_v=sigma)
    nd = spec.N * spec.d

    def f(z):
        return z[..., nd:]

    def g(z):
        flat = z.reshape(-1, 2 * nd)
        pos = flat[:, :nd].reshape(-1, spec.N, spec.d)
        vel = flat[:, nd:].reshape(-1, spec.N, spec.d)
        out = _cs_drift_batch(spec, pos, vel).reshape(-1, nd)
        return out.reshape(z.shape[:-1] + (nd,))

    if callable(spec.sigma_v):
        def sigma_y(y):
            vel = y.reshape(-1, spec.N, spec.d)
            per_agent = np.asarray(spec.sigma_v(vel), dtype=float)  # (n, N)
            diag = np.repeat(per_agent, spec.d, axis=-1)            # (n, N*d)
            out = np.zeros(diag.shape + (nd,))
            idx = np.arange(nd)
            out[..., idx, idx] = diag
            return out.reshape(y.shape[:-1] + (nd, nd))
    else:
        sigma_y = _constant_sigma(float(spec.sigma_v) * np.eye(nd))

    return ModelSystem(dims=spec.dims, drift_f=f, drift_g=g,
                       diffusion_sigma_y=sigma_y,
                       initial=_unit_box(2 * nd), name="cucker_smale")


@dataclass(frozen=True)
class KernelEstimate:
    """Fitted 1-D interaction kernel over [0, r_max]; clamped beyond."""

    library: BasisLibrary
    coefficients: np.ndarray

    def __post_init__(self):
        coef = np.asarray(self.coefficients, dtype=float).reshape(-1)
        if coef.size != self.library.n_total:
            raise ContractViolationError(
                f"{coef.size} coefficients for {self.library.n_total} basis functions")
        if self.library.dims_in != 1:
            raise ContractViolationError("kernel library must be one-dimensional")
        coef = coef.copy()
        coef.setflags(write=False)
        object.__setattr__(self, "coefficients", coef)

    def evaluate(self, r: np.ndarray) -> np.ndarray:
        r = np.asarray(r, dtype=float)
        flat = r.reshape(-1, 1)
        vals = design_matrix(self.library, flat) @ self.coefficients
        return vals.reshape(r.shape)

    def __call__(self, r: np.ndarray) -> np.ndarray:
        return self.evaluate(r)

    def to_dict(self) -> dict:
        return {"library": self.library.to_dict(),
                "coefficients": self.coefficients.tolist()}

    @staticmethod
    def from_dict(d: dict) -> "KernelEstimate":
        return KernelEstimate(library=BasisLibrary.from_dict(d["library"]),
                              coefficients=np.asarray(d["coefficients"], dtype=float))


def _cs_blocks(ensemble: TrajectoryEnsemble, N: int, d: int):
    nd = N * d
    if ensemble.dims.D_total != 2 * nd or ensemble.dims.D_x != nd:
        raise ContractViolationError(
            f"ensemble dims {ensemble.dims} do not match N={N}, d={d}")
    return nd


def _cs_rows(ensemble: TrajectoryEnsemble, N: int, d: int,
             lib: BasisLibrary, sl: slice):
    """Design rows and targets for a chunk of flattened (m, l) steps."""
    nd = N * d
    left = ensemble.states[:, :-1, :].reshape(-1, 2 * nd)[sl]
    dv = np.diff(ensemble.states[:, :, nd:], axis=1).reshape(-1, nd)[sl]
    c = left.shape[0]
    pos = left[:, :nd].reshape(c, N, d)
    vel = left[:, nd:].reshape(c, N, d)
    rel_x = pos[:, None, :, :] - pos[:, :, None, :]   # [c, i, j] = x_j - x_i
    rel_v = vel[:, None, :, :] - vel[:, :, None, :]
    r = np.sqrt(np.sum(rel_x ** 2, axis=-1))
    Phi = design_matrix(lib, r.reshape(-1, 1)).reshape(c, N, N, lib.n_total)
    # the j = i terms vanish because rel_v is zero there
    rows = np.einsum("cijq,cijd->cidq", Phi, rel_v) / N
    return rows.reshape(c * N * d, lib.n_total), dv.reshape(c * N * d) / ensemble.dt


def cs_feature_design(ensemble: TrajectoryEnsemble, N: int, d: int,
                      lib: BasisLibrary):
    """Dense kernel-regression system (design, targets).

    For each trajectory step, agent i, and coordinate k, the target is
    dv_{i,k}/dt and the design entry for basis element B_q is
    (1/N) sum_{j != i} B_q(||x_j - x_i||)(v_{j,k} - v_{i,k}).  The dense
    system has M*(L-1)*N*d rows; use cs_fit_kernel for a chunked fit that
    never materializes it.
    """
    _cs_blocks(ensemble, N, d)
    n_rows = ensemble.M * (ensemble.L - 1)
    return _cs_rows(ensemble, N, d, lib, slice(0, n_rows))


def cs_fit_kernel(ensemble: TrajectoryEnsemble, N: int, d: int,
                  lib: BasisLibrary,
                  reg: Regularization = Regularization()) -> KernelEstimate:
    """Least-squares kernel fit via chunked normal equations."""
    _cs_blocks(ensemble, N, d)
    p = lib.n_total
    G = np.zeros((p, p))
    b = np.zeros((p, 1))
    n_steps = ensemble.M * (ensemble.L - 1)
    chunk = max(1, _CHUNK_ROWS // (N * N))
    total = 0
    for s in range(0, n_steps, chunk):
        rows, tgt = _cs_rows(ensemble, N, d, lib, slice(s, min(s + chunk, n_steps)))
        G += rows.T @ rows
        b += rows.T @ tgt[:, None]
        total += rows.shape[0]
    coef = solve_normal_equations(G / total, b / total, reg)
    return KernelEstimate(library=lib, coefficients=coef[:, 0])


def cs_pairwise_distances(ensemble: TrajectoryEnsemble, N: int, d: int,
                          stride: int = 1) -> np.ndarray:
    """All unordered pairwise distances over (every stride-th) time step.

    This is the empirical distance measure rho_r that weights kernel
    errors.
    """
    nd = _cs_blocks(ensemble, N, d)
    iu = np.triu_indices(N, k=1)
    pos = ensemble.states[:, ::stride, :nd].reshape(-1, N, d)
    out = np.empty((pos.shape[0], iu[0].size))
    chunk = max(1, _CHUNK_ROWS // (N * N))
    for s in range(0, pos.shape[0], chunk):
        blk = pos[s:s + chunk]
        rel = blk[:, iu[0], :] - blk[:, iu[1], :]
        out[s:s + chunk] = np.sqrt(np.sum(rel ** 2, axis=-1))
    return out.reshape(-1)


def cs_kernel_box(distances: np.ndarray, percentile: float = 99.0,
                  pad: float = 0.05) -> np.ndarray:
    """Learning domain [0, r_max] from observed distances (tail-trimmed)."""
    r_max = float(np.percentile(distances, percentile)) * (1.0 + pad)
    if r_max <= 0:
        r_max = 1e-8
    return np.array([[0.0, r_max]])


# ---------------------------------------------------------------------------
# assembling fitted systems for replay

def assemble_fitted_model(reference: ModelSystem, est_f: DriftEstimate,
                          est_g: DriftEstimate,
                          diffusion: DiffusionEstimate) -> ModelSystem:
    """A ModelSystem whose drifts and diffusion are the fitted estimates,
    reusing the reference model's feature maps and initial law.
    """
    dims = reference.dims
    if diffusion.model_class == "constant_matrix":
        sigma_y = _constant_sigma(np.asarray(diffusion.sigma_hat, dtype=float))
    else:
        sig_fn = diffusion.sigma_function()

        def sigma_y(y):
            vals = sig_fn(y.reshape(-1, dims.D_y))
            out = np.zeros((vals.shape[0], dims.D_y, dims.D_y))
            idx = np.arange(dims.D_y)
            out[:, idx, idx] = vals
            return out.reshape(y.shape[:-1] + (dims.D_y, dims.D_y))

    return ModelSystem(dims=dims, drift_f=est_f.evaluate, drift_g=est_g.evaluate,
                       diffusion_sigma_y=sigma_y,
                       feature_f=reference.feature_f,
                       feature_g=reference.feature_g,
                       initial=reference.initial,
                       name=reference.name + "_fitted",
                       periodic_features_f=reference.periodic_features_f)


def cs_fitted_model(spec: CuckerSmaleSpec, kernel: KernelEstimate,
                    sigma: float | Callable) -> ModelSystem:
    """Cucker-Smale system driven by a fitted kernel (and fitted noise level)."""
    fitted_spec = CuckerSmaleSpec(N=spec.N, d=spec.d,
                                  kernel_phi=kernel.evaluate, sigma_v=sigma)
    model = cucker_smale_model(fitted_spec)
    return ModelSystem(dims=model.dims, drift_f=model.drift_f,
                       drift_g=model.drift_g,
                       diffusion_sigma_y=model.diffusion_sigma_y,
                       initial=model.initial,
                       name="cucker_smale_fitted")


def make_builtin(name: str, params: dict | None = None) -> ModelSystem:
    """Model zoo lookup with per-system parameter defaults."""
    params = dict(params or {})
    try:
        if name == "toy":
            return toy_model(**params)
        if name == "van_der_pol":
            return van_der_pol_model(**params)
        if name == "vicsek":
            return vicsek_model(**params)
        if name == "henon_heiles":
            return henon_heiles_model(**params)
        if name == "cucker_smale":
            return cucker_smale_model(**params)
    except TypeError as exc:
        raise ConfigurationError(f"bad parameters for model {name!r}: {exc}") from exc
    raise ConfigurationError(
        f"unknown model {name!r}; expected one of {BUILTIN_NAMES}")
