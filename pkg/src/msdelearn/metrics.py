"""Performance measures: L2(rho) drift error, paired trajectory error,
and Wasserstein-2 distances between empirical time-marginals.

rho is the empirical occupation measure of an observed ensemble (all M*L
states with uniform weights).  Wasserstein-2 between equal-size empirical
measures is solved exactly as an assignment problem up to a size cutoff;
above it, an epsilon-scaled log-domain Sinkhorn divergence (debiased) is
used and flagged as approximate.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import ContractViolationError
from .simulate import TrajectoryEnsemble

__all__ = [
    "OccupationMeasure",
    "MetricReport",
    "L2RhoResult",
    "W2Result",
    "SnapshotDistance",
    "l2_rho_error",
    "trajectory_error",
    "wasserstein2",
    "wasserstein2_detailed",
    "wasserstein_curve",
]

_CHUNK = 200_000

# Sinkhorn controls: epsilon anneals from the median cost down to
# eps_scale*median by halving, warm-starting the potentials each stage.
_SINKHORN_STAGE_ITERS = 100
_SINKHORN_FINAL_ITERS = 5000
_SINKHORN_TOL = 1e-7


@dataclass(frozen=True)
class OccupationMeasure:
    """Uniformly weighted empirical measure over full states."""

    sample_points: np.ndarray  # (n, D)
    weights: np.ndarray        # (n,), sums to 1

    def __post_init__(self):
        pts = np.asarray(self.sample_points, dtype=float)
        w = np.asarray(self.weights, dtype=float)
        if pts.ndim != 2 or w.shape != (pts.shape[0],):
            raise ContractViolationError(
                f"inconsistent occupation measure shapes {pts.shape} / {w.shape}")
        if abs(w.sum() - 1.0) > 1e-12:
            raise ContractViolationError("weights must sum to 1 within 1e-12")
        object.__setattr__(self, "sample_points", pts)
        object.__setattr__(self, "weights", w)

    @staticmethod
    def from_ensemble(ens: TrajectoryEnsemble) -> "OccupationMeasure":
        """All (m, l) states with weight 1/(M*L) each."""
        n = ens.M * ens.L
        pts = ens.states.reshape(n, ens.dims.D_total)
        return OccupationMeasure(sample_points=pts, weights=np.full(n, 1.0 / n))


class L2RhoResult(NamedTuple):
    absolute: float
    relative: float      # nan when the reference drift vanishes on the samples
    degenerate_reference: bool = False


class W2Result(NamedTuple):
    distance: float
    approximate: bool
    solver: str


class SnapshotDistance(NamedTuple):
    time: float
    distance: float
    approximate: bool


@dataclass(frozen=True)
class MetricReport:
    """The three reported quantities for one experiment run."""

    relative_L2_rho: float
    trajectory_error_mean: float
    trajectory_error_std: float
    wasserstein: tuple[SnapshotDistance, ...]
    absolute_L2_rho: float = float("nan")
    notes: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("relative_L2_rho", "trajectory_error_mean", "trajectory_error_std"):
            v = getattr(self, name)
            if not np.isfinite(v) or v < 0:
                raise ContractViolationError(f"{name} must be finite and nonnegative")
        for snap in self.wasserstein:
            if not np.isfinite(snap.distance) or snap.distance < 0:
                raise ContractViolationError("wasserstein entries must be finite, >= 0")

    def to_dict(self) -> dict:
        return {
            "relative_L2_rho": self.relative_L2_rho,
            "absolute_L2_rho": self.absolute_L2_rho,
            "trajectory_error_mean": self.trajectory_error_mean,
            "trajectory_error_std": self.trajectory_error_std,
            "wasserstein": [{"time": s.time, "distance": s.distance,
                             "approximate": s.approximate} for s in self.wasserstein],
            "notes": dict(self.notes),
        }

    def csv_header(self) -> str:
        cols = ["relative_L2_rho", "trajectory_error_mean", "trajectory_error_std"]
        cols += [f"wasserstein_t{np.format_float_positional(s.time, trim='-')}"
                 for s in self.wasserstein]
        return ",".join(cols)

    def csv_row(self, precision: int = 4) -> str:
        vals = [self.relative_L2_rho, self.trajectory_error_mean,
                self.trajectory_error_std] + [s.distance for s in self.wasserstein]
        return ",".join(f"{v:.{precision}g}" for v in vals)


def l2_rho_error(true_h: Callable, est_h: Callable,
                 rho: OccupationMeasure) -> L2RhoResult:
    """Weighted L2 distance between two drift fields over rho.

    Both callables take batches of full states (n, D) and return (n, D_out).
    absolute = sqrt(sum_i w_i ||h_i - h_hat_i||^2); relative divides by the
    same norm of the reference field (nan + flag when that norm is zero).
    """
    pts, w = rho.sample_points, rho.weights
    num = 0.0
    den = 0.0
    for s in range(0, pts.shape[0], _CHUNK):
        chunk = pts[s:s + _CHUNK]
        h = np.asarray(true_h(chunk), dtype=float)
        h_hat = np.asarray(est_h(chunk), dtype=float)
        if h.shape != h_hat.shape:
            raise ContractViolationError(
                f"drift fields disagree in shape: {h.shape} vs {h_hat.shape}")
        wc = w[s:s + _CHUNK]
        num += float(wc @ np.sum((h - h_hat) ** 2, axis=1))
        den += float(wc @ np.sum(h ** 2, axis=1))
    absolute = float(np.sqrt(num))
    if den == 0.0:
        return L2RhoResult(absolute=absolute, relative=float("nan"),
                           degenerate_reference=True)
    return L2RhoResult(absolute=absolute, relative=float(np.sqrt(num / den)))


def trajectory_error(reference: TrajectoryEnsemble,
                     replayed: TrajectoryEnsemble):
    """Relative paired trajectory errors.

    e_m = sqrt(sum_l ||z_l - z_hat_l||^2 dt / sum_l ||z_l||^2 dt); on the
    shared uniform grid dt cancels.  Returns (mean, std, per_trajectory).
    """
    if reference.states.shape != replayed.states.shape:
        raise ContractViolationError(
            f"shape mismatch: {reference.states.shape} vs {replayed.states.shape}")
    if not np.array_equal(reference.times, replayed.times):
        raise ContractViolationError("time grids differ")
    if reference.seed != replayed.seed:
        raise ContractViolationError(
            "seed mismatch: replayed ensemble was not paired with this reference")
    diff = reference.states - replayed.states
    num = np.sum(diff ** 2, axis=(1, 2))
    den = np.sum(reference.states ** 2, axis=(1, 2))
    per = np.sqrt(np.divide(num, den, out=np.zeros_like(num),
                            where=den > 0))
    per[(den == 0) & (num > 0)] = np.inf
    return float(per.mean()), float(per.std()), per


def _pairwise_sq(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return ((a[:, None, :] - b[None, :, :]) ** 2).sum(axis=2)


def _logsumexp(X: np.ndarray, axis: int) -> np.ndarray:
    m = X.max(axis=axis, keepdims=True)
    return (m + np.log(np.exp(X - m).sum(axis=axis, keepdims=True))).squeeze(axis)


def _sinkhorn_cost(C: np.ndarray, eps: float, f=None, g=None,
                   max_iter=_SINKHORN_FINAL_ITERS, tol=_SINKHORN_TOL):
    """Entropic OT cost <P, C> for uniform marginals; returns potentials too."""
    n, k = C.shape
    f = np.zeros(n) if f is None else f
    g = np.zeros(k) if g is None else g
    for _ in range(max_iter):
        f_new = -eps * (_logsumexp((g[None, :] - C) / eps, axis=1) - np.log(k))
        g_new = -eps * (_logsumexp((f_new[:, None] - C) / eps, axis=0) - np.log(n))
        delta = float(np.abs(g_new - g).max())
        f, g = f_new, g_new
        if delta < tol * eps:
            break
    P = np.exp((f[:, None] + g[None, :] - C) / eps) / (n * k)
    return float((P * C).sum()), f, g


def _sinkhorn_divergence(a: np.ndarray, b: np.ndarray, eps_scale: float) -> float:
    """Debiased divergence S = OT(a,b) - (OT(a,a) + OT(b,b))/2 at the target eps."""
    C_ab = _pairwise_sq(a, b)
    med = float(np.median(C_ab))
    if med <= 0:
        return 0.0
    eps_target = eps_scale * med

    def annealed_cost(C: np.ndarray) -> float:
        eps = med
        f = g = None
        while eps > eps_target * 1.0001:
            _, f, g = _sinkhorn_cost(C, eps, f, g,
                                     max_iter=_SINKHORN_STAGE_ITERS, tol=1e-4)
            eps = max(eps / 2.0, eps_target)
        cost, _, _ = _sinkhorn_cost(C, eps_target, f, g)
        return cost

    val = annealed_cost(C_ab) \
        - 0.5 * annealed_cost(_pairwise_sq(a, a)) \
        - 0.5 * annealed_cost(_pairwise_sq(b, b))
    return max(val, 0.0)


def wasserstein2_detailed(samples_a: np.ndarray, samples_b: np.ndarray,
                          exact_cutoff: int = 2000,
                          eps_scale: float = 1e-3) -> W2Result:
    """W2 between two equal-size uniform empirical measures, with solver info.

    Exact assignment for M <= exact_cutoff; otherwise the debiased
    Sinkhorn path with eps = eps_scale * median pairwise cost, flagged
    approximate.
    """
    a = np.asarray(samples_a, dtype=float)
    b = np.asarray(samples_b, dtype=float)
    if a.ndim == 1:
        a = a[:, None]
    if b.ndim == 1:
        b = b[:, None]
    if a.shape != b.shape:
        raise ContractViolationError(
            f"sample shapes differ: {a.shape} vs {b.shape}; W2 here compares "
            "equal-count ensembles")
    M = a.shape[0]
    if M <= exact_cutoff:
        C = _pairwise_sq(a, b)
        rows, cols = linear_sum_assignment(C)
        return W2Result(distance=float(np.sqrt(C[rows, cols].mean())),
                        approximate=False, solver="assignment")
    val = _sinkhorn_divergence(a, b, eps_scale)
    return W2Result(distance=float(np.sqrt(val)), approximate=True,
                    solver="sinkhorn_debiased")


def wasserstein2(samples_a: np.ndarray, samples_b: np.ndarray,
                 exact_cutoff: int = 2000, eps_scale: float = 1e-3) -> float:
    """W2 distance value; see wasserstein2_detailed for the solver flag."""
    return wasserstein2_detailed(samples_a, samples_b, exact_cutoff,
                                 eps_scale).distance


def wasserstein_curve(reference: TrajectoryEnsemble,
                      comparison: TrajectoryEnsemble,
                      snapshot_times: Sequence[float],
                      exact_cutoff: int = 2000,
                      eps_scale: float = 1e-3) -> list[SnapshotDistance]:
    """W2 between time-marginals at the grid times nearest each snapshot.

    Snapshot times must lie within [0, T] of both ensembles; the nearest
    grid time is always within dt/2 on the uniform grid.
    """
    out = []
    for t in snapshot_times:
        t = float(t)
        if t < -1e-12 or t > min(reference.T, comparison.T) + 1e-12:
            raise ContractViolationError(
                f"snapshot time {t} outside the shared horizon "
                f"[0, {min(reference.T, comparison.T)}]")
        idx_a = int(np.argmin(np.abs(reference.times - t)))
        idx_b = int(np.argmin(np.abs(comparison.times - t)))
        res = wasserstein2_detailed(reference.states[:, idx_a, :],
                                    comparison.states[:, idx_b, :],
                                    exact_cutoff=exact_cutoff,
                                    eps_scale=eps_scale)
        out.append(SnapshotDistance(time=t, distance=res.distance,
                                    approximate=res.approximate))
    return out
