"""Euler-Maruyama ensemble simulation with recorded Brownian increments.

Every trajectory draws from its own `numpy.random.SeedSequence` child
stream (initial state first, then all increments), so the result is
bit-identical regardless of chunking or thread count.  The y-block
increments are always recorded, which lets a fitted model be replayed on
exactly the noise that produced the reference data.
"""

from __future__ import annotations

import hashlib
import io
import os
import zipfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .core import InitialDistribution, ModelSystem, SystemDimensions
from .errors import ConfigurationError, ContractViolationError, SimulationError

__all__ = [
    "SimulationConfig",
    "TrajectoryEnsemble",
    "simulate_ensemble",
    "replay_ensemble",
    "thin_ensemble",
    "save_ensemble",
    "load_ensemble",
    "ensemble_hash",
    "export_states_csv",
]

BLOWUP_LIMIT = 1e8


@dataclass(frozen=True)
class SimulationConfig:
    """Time grid, ensemble size, seed, and initial law for one run."""

    T: float
    dt: float
    M: int
    seed: int
    initial: InitialDistribution

    def __post_init__(self):
        if self.T <= 0 or self.dt <= 0:
            raise ConfigurationError(f"T and dt must be positive: T={self.T}, dt={self.dt}")
        if self.M < 1:
            raise ConfigurationError(f"M must be >= 1, got {self.M}")
        if self.seed < 0 or self.seed > 2 ** 64 - 1:
            raise ConfigurationError("seed must fit in 64 unsigned bits")
        if self.L < 2:
            raise ConfigurationError("grid needs at least 2 time points")
        if abs(self.T - (self.L - 1) * self.dt) > 1e-9 * self.T:
            raise ConfigurationError(
                f"T={self.T} is not an integer multiple of dt={self.dt}")

    @property
    def L(self) -> int:
        return int(round(self.T / self.dt)) + 1


@dataclass(frozen=True)
class TrajectoryEnsemble:
    """M sample paths on a shared uniform grid, plus the noise that made them."""

    times: np.ndarray             # (L,)
    states: np.ndarray            # (M, L, D_total)
    noise_increments: np.ndarray  # (M, L-1, D_y)
    dims: SystemDimensions
    seed: int

    def __post_init__(self):
        times = _own(self.times)
        states = _own(self.states)
        noise = _own(self.noise_increments)
        if times.ndim != 1 or times.size < 2:
            raise ContractViolationError("times must be a 1-D grid of length >= 2")
        steps = np.diff(times)
        if np.any(steps <= 0):
            raise ContractViolationError("times must be strictly increasing")
        if not np.allclose(steps, steps[0], rtol=1e-9, atol=0.0):
            raise ContractViolationError("time grid must be uniform")
        if abs(times[0]) > 1e-12:
            raise ContractViolationError("times[0] must be 0")
        M, L, D = states.shape
        if L != times.size or D != self.dims.D_total:
            raise ContractViolationError(
                f"states shape {states.shape} inconsistent with grid/dims")
        if noise.shape != (M, L - 1, self.dims.D_y):
            raise ContractViolationError(
                f"noise shape {noise.shape} != ({M}, {L - 1}, {self.dims.D_y})")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "noise_increments", noise)

    @property
    def M(self) -> int:
        return self.states.shape[0]

    @property
    def L(self) -> int:
        return self.states.shape[1]

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0])

    @property
    def T(self) -> float:
        return float(self.times[-1])

    def x_states(self) -> np.ndarray:
        return self.states[:, :, : self.dims.D_x]

    def y_states(self) -> np.ndarray:
        return self.states[:, :, self.dims.D_x:]


def _own(arr) -> np.ndarray:
    out = np.ascontiguousarray(np.asarray(arr, dtype=float))
    out.setflags(write=False)
    return out


def _draw_streams(config: SimulationConfig, D_y: int):
    """Per-trajectory initial states and increments; order-independent by design."""
    children = np.random.SeedSequence(config.seed).spawn(config.M)
    L = config.L
    root = np.sqrt(config.dt)
    z0 = None
    noise = np.empty((config.M, L - 1, D_y))
    for m, child in enumerate(children):
        rng = np.random.default_rng(child)
        draw = config.initial.sample(rng, 1)[0]
        if z0 is None:
            z0 = np.empty((config.M, draw.size))
        z0[m] = draw
        noise[m] = rng.normal(0.0, root, size=(L - 1, D_y))
    return z0, noise


def _integrate_block(model: ModelSystem, z0: np.ndarray, noise: np.ndarray,
                     dt: float, m_offset: int) -> np.ndarray:
    """Euler-Maruyama over one trajectory block; rows are independent."""
    dims = model.dims
    M, steps = noise.shape[0], noise.shape[1]
    states = np.empty((M, steps + 1, dims.D_total))
    states[:, 0, :] = z0
    for l in range(steps):
        z = states[:, l, :]
        fx = np.asarray(model.drift_f(model.features_f(z)), dtype=float)
        gy = np.asarray(model.drift_g(model.features_g(z)), dtype=float)
        sig = np.asarray(model.diffusion_sigma_y(z[:, dims.D_x:]), dtype=float)
        if sig.ndim == 2:  # constant matrix shared by the batch
            shock = noise[:, l, :] @ sig.T
        else:
            shock = np.einsum("mij,mj->mi", sig, noise[:, l, :])
        # the x-block update carries no noise term at all
        states[:, l + 1, : dims.D_x] = z[:, : dims.D_x] + fx * dt
        states[:, l + 1, dims.D_x:] = z[:, dims.D_x:] + gy * dt + shock
        nxt = states[:, l + 1, :]
        bad = ~np.isfinite(nxt).all(axis=1) | (np.abs(nxt).max(axis=1) > BLOWUP_LIMIT)
        if bad.any():
            m_bad = int(np.argmax(bad))
            t_bad = (l + 1) * dt
            raise SimulationError(
                f"trajectory {m_offset + m_bad} blew up at t={t_bad:.6g} "
                f"(|state| > {BLOWUP_LIMIT:g} or non-finite)",
                trajectory=m_offset + m_bad, time=t_bad)
    return states


def _run_blocks(model: ModelSystem, z0: np.ndarray, noise: np.ndarray,
                dt: float, threads: int) -> np.ndarray:
    M = z0.shape[0]
    threads = max(1, min(int(threads), M))
    if threads == 1:
        return _integrate_block(model, z0, noise, dt, 0)
    bounds = np.linspace(0, M, threads + 1).astype(int)
    jobs = [(int(a), int(b)) for a, b in zip(bounds[:-1], bounds[1:]) if b > a]
    with ThreadPoolExecutor(max_workers=len(jobs)) as pool:
        parts = list(pool.map(
            lambda ab: _integrate_block(model, z0[ab[0]:ab[1]],
                                        noise[ab[0]:ab[1]], dt, ab[0]),
            jobs))
    return np.concatenate(parts, axis=0)


def simulate_ensemble(model: ModelSystem, config: SimulationConfig,
                      threads: int = 1) -> TrajectoryEnsemble:
    """Generate M Euler-Maruyama paths of the model on the config grid.

    Identical (model, config) pairs produce bit-identical ensembles for
    any thread count.  Raises SimulationError with the trajectory index
    and time if a path leaves |state| <= 1e8 or becomes non-finite.
    """
    dims = model.dims
    z0, noise = _draw_streams(config, dims.D_y)
    if z0.shape[1] != dims.D_total:
        raise ContractViolationError(
            f"initial sampler produced dimension {z0.shape[1]}, "
            f"model expects D_total={dims.D_total}")
    if not np.all(np.isfinite(z0)):
        raise SimulationError("non-finite initial state", trajectory=None, time=0.0)
    states = _run_blocks(model, z0, noise, config.dt, threads)
    times = np.arange(config.L) * config.dt
    return TrajectoryEnsemble(times=times, states=states, noise_increments=noise,
                              dims=dims, seed=config.seed)


def replay_ensemble(model: ModelSystem, reference: TrajectoryEnsemble,
                    threads: int = 1) -> TrajectoryEnsemble:
    """Re-integrate a model from the reference initial states on the
    reference's recorded Brownian increments.

    The output shares the input's grid, seed label, and noise record, so
    trajectory_error comparisons are paired by construction.
    """
    dims = model.dims
    ref = reference.dims
    if (dims.D_total, dims.D_x, dims.D_y) != (ref.D_total, ref.D_x, ref.D_y):
        raise ContractViolationError(
            f"model blocks ({dims.D_x}, {dims.D_y}) do not match "
            f"reference blocks ({ref.D_x}, {ref.D_y})")
    if reference.noise_increments.shape != (reference.M, reference.L - 1, dims.D_y):
        raise ContractViolationError("reference carries no usable noise record")
    states = _run_blocks(model, np.asarray(reference.states[:, 0, :]),
                         np.asarray(reference.noise_increments),
                         reference.dt, threads)
    return TrajectoryEnsemble(times=reference.times, states=states,
                              noise_increments=reference.noise_increments,
                              dims=dims, seed=reference.seed)


def resimulate_ensemble(model: ModelSystem, reference: TrajectoryEnsemble,
                        seed: int, threads: int = 1) -> TrajectoryEnsemble:
    """Re-integrate from the reference initial states with fresh noise.

    Shares z_0 per trajectory with the reference but draws new Brownian
    increments from per-trajectory streams of the given seed, so marginal
    laws can be compared without initial-sampling variance.  Distinct
    from replay_ensemble, which reuses the recorded increments.
    """
    dims = model.dims
    ref = reference.dims
    if (dims.D_total, dims.D_x, dims.D_y) != (ref.D_total, ref.D_x, ref.D_y):
        raise ContractViolationError(
            f"model blocks ({dims.D_x}, {dims.D_y}) do not match "
            f"reference blocks ({ref.D_x}, {ref.D_y})")
    children = np.random.SeedSequence(int(seed)).spawn(reference.M)
    root = np.sqrt(reference.dt)
    noise = np.empty((reference.M, reference.L - 1, dims.D_y))
    for m, child in enumerate(children):
        noise[m] = np.random.default_rng(child).normal(
            0.0, root, size=(reference.L - 1, dims.D_y))
    states = _run_blocks(model, np.asarray(reference.states[:, 0, :]),
                         noise, reference.dt, threads)
    return TrajectoryEnsemble(times=reference.times, states=states,
                              noise_increments=noise, dims=dims,
                              seed=int(seed))


def thin_ensemble(ens: TrajectoryEnsemble, every: int) -> TrajectoryEnsemble:
    """Keep every k-th grid point of the same underlying paths.

    States are subsampled; consecutive noise increments are summed per
    retained interval, which keeps them valid Brownian increments for the
    coarser step.  Requires (L-1) divisible by `every`.
    """
    if every < 1:
        raise ContractViolationError(f"every must be >= 1, got {every}")
    steps = ens.L - 1
    if steps % every != 0:
        raise ContractViolationError(
            f"{steps} fine steps not divisible by every={every}")
    noise = ens.noise_increments.reshape(ens.M, steps // every, every,
                                         ens.dims.D_y).sum(axis=2)
    return TrajectoryEnsemble(times=ens.times[::every],
                              states=ens.states[:, ::every, :],
                              noise_increments=noise,
                              dims=ens.dims, seed=ens.seed)


# ---------------------------------------------------------------------------
# serialization: a zip of .npy members with frozen metadata, so repeated
# saves of the same ensemble are byte-identical (np.savez stamps wall-clock
# times into the archive; this writer does not)

_MEMBERS = ("dims.npy", "seed.npy", "times.npy", "states.npy", "noise_increments.npy")


def _npy_bytes(arr: np.ndarray) -> bytes:
    buf = io.BytesIO()
    np.lib.format.write_array(buf, np.ascontiguousarray(arr), version=(1, 0))
    return buf.getvalue()


def save_ensemble(path, ens: TrajectoryEnsemble) -> None:
    """Write the ensemble as a deterministic .npz-compatible archive (atomic)."""
    payload = {
        "dims.npy": np.array([ens.dims.D_total, ens.dims.D_x, ens.dims.D_y,
                              ens.dims.d_f, ens.dims.d_g], dtype=np.int64),
        "seed.npy": np.array([ens.seed], dtype=np.uint64),
        "times.npy": ens.times,
        "states.npy": ens.states,
        "noise_increments.npy": ens.noise_increments,
    }
    tmp = str(path) + ".tmp"
    with open(tmp, "wb") as fh:
        with zipfile.ZipFile(fh, "w", compression=zipfile.ZIP_STORED) as zf:
            for name in _MEMBERS:
                info = zipfile.ZipInfo(name, date_time=(1980, 1, 1, 0, 0, 0))
                info.compress_type = zipfile.ZIP_STORED
                info.external_attr = 0o644 << 16
                zf.writestr(info, _npy_bytes(payload[name]))
    os.replace(tmp, path)


def load_ensemble(path) -> TrajectoryEnsemble:
    """Read an archive written by save_ensemble.

    Missing, truncated, or foreign files raise ContractViolationError
    rather than leaking zipfile/format internals.
    """
    try:
        with np.load(path) as data:
            dims_arr = data["dims"].astype(int)
            dims = SystemDimensions(D_total=int(dims_arr[0]), D_x=int(dims_arr[1]),
                                    D_y=int(dims_arr[2]), d_f=int(dims_arr[3]),
                                    d_g=int(dims_arr[4]))
            return TrajectoryEnsemble(times=data["times"], states=data["states"],
                                      noise_increments=data["noise_increments"],
                                      dims=dims, seed=int(data["seed"][0]))
    except (zipfile.BadZipFile, ValueError, KeyError, OSError) as exc:
        raise ContractViolationError(
            f"unreadable ensemble archive {path}: {exc}") from exc


def ensemble_hash(ens: TrajectoryEnsemble) -> str:
    """SHA-256 over the serialized members, in fixed order."""
    h = hashlib.sha256()
    h.update(np.array([ens.dims.D_total, ens.dims.D_x, ens.dims.D_y,
                       ens.dims.d_f, ens.dims.d_g], dtype=np.int64).tobytes())
    h.update(np.array([ens.seed], dtype=np.uint64).tobytes())
    for arr in (ens.times, ens.states, ens.noise_increments):
        h.update(np.ascontiguousarray(arr).tobytes())
    return h.hexdigest()


def export_states_csv(path, ens: TrajectoryEnsemble) -> None:
    """Flat CSV with columns trajectory,time,state_0..state_{D-1}.

    Row-major over (trajectory, time); values printed with 17 significant
    digits so they round-trip to the same doubles.
    """
    M, L, D = ens.states.shape
    cols = ["trajectory", "time"] + [f"state_{j}" for j in range(D)]
    body = np.empty((M * L, D + 2))
    body[:, 0] = np.repeat(np.arange(M), L)
    body[:, 1] = np.tile(ens.times, M)
    body[:, 2:] = ens.states.reshape(M * L, D)
    tmp = str(path) + ".tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.write(",".join(cols) + "\n")
        np.savetxt(fh, body, delimiter=",",
                   fmt=["%d", "%.17g"] + ["%.17g"] * D)
    os.replace(tmp, path)
