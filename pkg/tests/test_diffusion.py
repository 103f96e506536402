"""Quadratic-variation diffusion estimation and the spectral square root."""

import numpy as np
import pytest

from msdelearn import (
    ContractViolationError,
    DiffusionEstimate,
    InitialDistribution,
    ModelSystem,
    QuadraticVariationRecord,
    SimulationConfig,
    SystemDimensions,
    empirical_qv,
    fit_sigma_constant,
    fit_sigma_state_dependent,
    henon_heiles_model,
    infer_box,
    matrix_sqrt_psd,
    simulate_ensemble,
    toy_model,
    uniform_library,
)
from _oracles import qv_reference


def _toy_drift_g(model):
    return lambda z: np.asarray(model.drift_g(model.features_g(z)), dtype=float)


# ---------------------------------------------------------------------------
# quadratic variation accumulation

def test_empirical_qv_matches_loop_oracle(toy_small):
    qv = empirical_qv(toy_small)
    np.testing.assert_allclose(qv.per_trajectory_Q, qv_reference(toy_small),
                               rtol=1e-13, atol=1e-18)
    assert qv.horizon == pytest.approx(toy_small.T)
    assert qv.M == toy_small.M


def test_qv_chunking_invariance(toy_small, monkeypatch):
    base = empirical_qv(toy_small)
    monkeypatch.setattr("msdelearn.diffusion._CHUNK_FLOATS", 128)
    small = empirical_qv(toy_small)
    np.testing.assert_allclose(small.per_trajectory_Q, base.per_trajectory_Q,
                               rtol=1e-13, atol=1e-18)


def test_qv_multidimensional_matches_oracle():
    model = henon_heiles_model()
    config = SimulationConfig(T=0.05, dt=0.005, M=8, seed=9,
                              initial=model.initial)
    ens = simulate_ensemble(model, config)
    qv = empirical_qv(ens)
    np.testing.assert_allclose(qv.per_trajectory_Q, qv_reference(ens),
                               rtol=1e-13, atol=1e-18)


# ---------------------------------------------------------------------------
# constant-class estimation

def test_sigma_constant_recovers_toy_noise(toy_system, toy_small):
    qv = empirical_qv(toy_small, drift_fn=_toy_drift_g(toy_system))
    est = fit_sigma_constant(qv)
    assert est.model_class == "constant_matrix"
    assert not est.degenerate
    # 3000 increments put the sampling band around 1.3% relative
    assert est.sigma_diagonal()[0] == pytest.approx(0.1, abs=0.005)


def test_sigma_constant_is_mean_qv_over_horizon(toy_small):
    qv = empirical_qv(toy_small)
    est = fit_sigma_constant(qv)
    expected = qv.per_trajectory_Q.mean(axis=0) / qv.horizon
    np.testing.assert_allclose(est.Sigma_hat, expected, rtol=1e-12)
    np.testing.assert_allclose(est.sigma_hat @ est.sigma_hat, est.Sigma_hat,
                               rtol=1e-10, atol=1e-18)


def test_drift_correction_kills_squared_drift_bias():
    # with sigma = 0, raw QV is exactly the squared-drift term and the
    # corrected QV vanishes identically
    model = toy_model(sigma=0.0)
    config = SimulationConfig(T=0.2, dt=0.004, M=20, seed=31,
                              initial=model.initial)
    ens = simulate_ensemble(model, config)
    drift = _toy_drift_g(model)

    raw = fit_sigma_constant(empirical_qv(ens))
    left = ens.states[:, :-1, :].reshape(-1, 2)
    expected_bias = ens.dt * np.mean(drift(left) ** 2)
    np.testing.assert_allclose(raw.Sigma_hat[0, 0], expected_bias, rtol=1e-10)
    assert not raw.degenerate

    # correction leaves only the add-then-subtract roundoff, ~1e-32,
    # twenty-six orders below the raw bias
    corrected = fit_sigma_constant(empirical_qv(ens, drift_fn=drift))
    assert corrected.Sigma_hat[0, 0] <= 1e-30


def test_degenerate_flag_on_constant_paths():
    dims = SystemDimensions(D_total=2, D_x=1, D_y=1, d_f=2, d_g=2)
    still = ModelSystem(
        dims=dims,
        drift_f=lambda z: np.zeros(z.shape[:-1] + (1,)),
        drift_g=lambda z: np.zeros(z.shape[:-1] + (1,)),
        diffusion_sigma_y=lambda y: np.array([[0.0]]),
        initial=InitialDistribution("uniform_box",
                                    {"lower": [0.0, 0.0], "upper": [1.0, 1.0]}))
    config = SimulationConfig(T=0.1, dt=0.01, M=5, seed=3, initial=still.initial)
    est = fit_sigma_constant(empirical_qv(simulate_ensemble(still, config)))
    assert est.degenerate
    assert est.sigma_diagonal()[0] == 0.0


def test_drift_correction_shift_is_order_dt(toy_system, toy_small):
    # with noise present the correction moves Sigma_hat by at most
    # O(dt * sup g^2), so raw and corrected agree to that order
    drift = _toy_drift_g(toy_system)
    raw = fit_sigma_constant(empirical_qv(toy_small))
    corrected = fit_sigma_constant(empirical_qv(toy_small, drift_fn=drift))
    left = toy_small.states[:, :-1, :].reshape(-1, 2)
    bound = float(np.abs(drift(left)).max())
    shift = abs(raw.Sigma_hat[0, 0] - corrected.Sigma_hat[0, 0])
    assert shift <= 10.0 * toy_small.dt * bound ** 2


def test_qv_drift_fn_shape_validated(toy_small):
    with pytest.raises(ContractViolationError):
        empirical_qv(toy_small, drift_fn=lambda z: np.zeros((z.shape[0], 3)))


# ---------------------------------------------------------------------------
# state-dependent diagonal estimation

def _ou_state_dependent(sigma0=0.1):
    dims = SystemDimensions(D_total=2, D_x=1, D_y=1, d_f=2, d_g=2)

    def sigma_y(y):
        val = sigma0 * (1.0 + y[..., 0] ** 2)
        return val[:, None, None]

    return ModelSystem(
        dims=dims,
        drift_f=lambda z: np.zeros(z.shape[:-1] + (1,)),
        drift_g=lambda z: -z[..., 1:],
        diffusion_sigma_y=sigma_y,
        initial=InitialDistribution("uniform_box",
                                    {"lower": [0.0, -1.0], "upper": [1.0, 1.0]}))


def test_state_dependent_recovers_variance_profile():
    model = _ou_state_dependent()
    config = SimulationConfig(T=0.5, dt=0.005, M=300, seed=77,
                              initial=model.initial)
    ens = simulate_ensemble(model, config)
    y_left = ens.states[:, :-1, 1].reshape(-1, 1)
    lib = uniform_library(infer_box(y_left), "bspline", degree=2, segments=3)
    est = fit_sigma_state_dependent(ens, lib,
                                    drift_fn=lambda z: -z[..., 1:])
    assert est.model_class == "diagonal_state_dependent"
    sigma = est.sigma_function()
    lo, hi = np.quantile(y_left, [0.1, 0.9])
    grid = np.linspace(lo, hi, 40)[:, None]
    truth = 0.1 * (1.0 + grid[:, 0] ** 2)
    rel = np.abs(sigma(grid)[:, 0] - truth) / truth
    assert rel.max() < 0.15


def test_state_dependent_flat_case_matches_constant(toy_system, toy_small):
    y_left = toy_small.states[:, :-1, 1].reshape(-1, 1)
    lib = uniform_library(infer_box(y_left), "bspline", degree=1, segments=1)
    est = fit_sigma_state_dependent(toy_small, lib,
                                    drift_fn=_toy_drift_g(toy_system))
    sigma = est.sigma_function()
    lo, hi = np.quantile(y_left, [0.1, 0.9])
    values = sigma(np.linspace(lo, hi, 20)[:, None])[:, 0]
    np.testing.assert_allclose(values, 0.1, rtol=0.05)


def test_state_dependent_library_width_checked(toy_small):
    lib = uniform_library(np.array([[0.0, 1.0], [0.0, 1.0]]), "bspline", 1, 1)
    with pytest.raises(ContractViolationError):
        fit_sigma_state_dependent(toy_small, lib)


# ---------------------------------------------------------------------------
# spectral square root

def test_matrix_sqrt_psd_squares_back(rng):
    A = rng.normal(size=(4, 4))
    spd = A @ A.T + 0.5 * np.eye(4)
    root = matrix_sqrt_psd(spd)
    np.testing.assert_allclose(root @ root, spd, rtol=1e-12, atol=1e-12)
    np.testing.assert_allclose(root, root.T, atol=1e-14)


def test_matrix_sqrt_psd_diagonal_case():
    np.testing.assert_allclose(matrix_sqrt_psd(np.diag([4.0, 9.0])),
                               np.diag([2.0, 3.0]), atol=1e-14)


def test_matrix_sqrt_psd_clips_rounding_negatives():
    out = matrix_sqrt_psd(np.diag([1.0, -1e-13]))
    np.testing.assert_allclose(out, np.diag([1.0, 0.0]), atol=1e-7)


@pytest.mark.parametrize("bad", [
    np.diag([1.0, -0.5]),
    np.array([[1.0, 0.4], [0.0, 1.0]]),
    np.ones((2, 3)),
])
def test_matrix_sqrt_psd_rejects(bad):
    with pytest.raises(ContractViolationError):
        matrix_sqrt_psd(bad)


# ---------------------------------------------------------------------------
# record validation and serialization

def test_qv_record_validation():
    good = np.tile(np.eye(2), (3, 1, 1))
    QuadraticVariationRecord(per_trajectory_Q=good, horizon=1.0)
    skew = good.copy()
    skew[0, 0, 1] = 0.5
    with pytest.raises(ContractViolationError):
        QuadraticVariationRecord(per_trajectory_Q=skew, horizon=1.0)
    with pytest.raises(ContractViolationError):
        QuadraticVariationRecord(per_trajectory_Q=good, horizon=0.0)
    with pytest.raises(ContractViolationError):
        QuadraticVariationRecord(per_trajectory_Q=np.eye(2), horizon=1.0)


def test_diffusion_estimate_round_trips(toy_system, toy_small):
    const = fit_sigma_constant(empirical_qv(toy_small))
    rebuilt = DiffusionEstimate.from_dict(const.to_dict())
    np.testing.assert_array_equal(rebuilt.Sigma_hat, const.Sigma_hat)
    np.testing.assert_array_equal(rebuilt.sigma_hat, const.sigma_hat)

    y_left = toy_small.states[:, :-1, 1].reshape(-1, 1)
    lib = uniform_library(infer_box(y_left), "bspline", 1, 1)
    diag = fit_sigma_state_dependent(toy_small, lib)
    rebuilt = DiffusionEstimate.from_dict(diag.to_dict())
    probe = np.linspace(0.0, 1.0, 9)[:, None]
    np.testing.assert_array_equal(rebuilt.sigma_function()(probe),
                                  diag.sigma_function()(probe))


def test_class_specific_accessors_guarded(toy_small):
    const = fit_sigma_constant(empirical_qv(toy_small))
    with pytest.raises(ContractViolationError):
        const.sigma_function()
    y_left = toy_small.states[:, :-1, 1].reshape(-1, 1)
    lib = uniform_library(infer_box(y_left), "bspline", 1, 1)
    diag = fit_sigma_state_dependent(toy_small, lib)
    with pytest.raises(ContractViolationError):
        diag.sigma_diagonal()
    with pytest.raises(ContractViolationError):
        DiffusionEstimate(model_class="full_tensor", Sigma_hat=np.eye(2))
