"""Experiment pipeline: library assembly, bound checks, full runs, outputs."""

import json

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from msdelearn import (
    BasisConfig,
    ConfigurationError,
    ContractViolationError,
    ExperimentConfig,
)
from msdelearn.metrics import MetricReport, SnapshotDistance
from msdelearn.pipeline import (
    FitArtifacts,
    check_acceptance,
    compare_reference,
    feature_library,
    fit_from_dict,
    fit_to_dict,
    run_experiment,
    run_simulate,
    write_outputs,
)
from msdelearn.simulate import ensemble_hash


def _toy_config(**overrides):
    d = {
        "model": {"name": "toy", "params": {"sigma": 0.1}},
        "simulation": {"T": 0.05, "dt": 0.005, "M": 30, "seed": 7},
        "basis_f": {"family": "bspline", "degree": 2, "segments": 1},
        "basis_g": {"family": "bspline", "degree": 2, "segments": 1},
        "snapshot_times": [0.025, 0.05],
    }
    d.update(overrides)
    return ExperimentConfig.from_dict(d)


def _cs_config(**overrides):
    d = {
        "model": {"name": "cucker_smale", "params": {"N": 4, "d": 2, "sigma": 0.1}},
        "simulation": {"T": 0.05, "dt": 0.01, "M": 8, "seed": 11},
        "basis_f": {"family": "bspline", "degree": 2, "segments": 1},
        "basis_g": {"family": "bspline", "degree": 2, "segments": 1},
        "snapshot_times": [0.05],
        "kernel": {
            "basis": {"family": "bspline", "degree": 2, "segments": 3},
            "domain_percentile": 99.0,
            "domain_pad": 0.05,
        },
    }
    d.update(overrides)
    return ExperimentConfig.from_dict(d)


@pytest.fixture(scope="module")
def toy_art():
    return run_experiment(_toy_config())


@pytest.fixture(scope="module")
def cs_art():
    return run_experiment(_cs_config())


def _report(rel=0.01, traj=0.005, std=0.001, w=((0.25, 0.02), (0.5, 0.03))):
    snaps = tuple(SnapshotDistance(t, d, False) for t, d in w)
    return MetricReport(relative_L2_rho=rel, trajectory_error_mean=traj,
                        trajectory_error_std=std, wasserstein=snaps)


# ---------------------------------------------------------------------------
# feature_library

def test_feature_library_covers_padded_data_box():
    rng = np.random.default_rng(0)
    pts = rng.uniform(-2.0, 3.0, size=(200, 2))
    cfg = BasisConfig(family="bspline", degree=2, segments=2,
                      padding_fraction=0.1)
    lib = feature_library(cfg, pts)
    assert lib.dims_in == 2
    # tensor product of two (segments + degree)-function spline families
    assert lib.n_total == 4 * 4
    assert np.all(lib.box[:, 0] <= pts.min(axis=0))
    assert np.all(lib.box[:, 1] >= pts.max(axis=0))


def test_feature_library_periodic_dimension_uses_full_circle():
    pts = np.linspace(1.0, 2.0, 50)[:, None]  # narrow observed range
    cfg = BasisConfig(family="bspline", degree=2, segments=3)
    lib = feature_library(cfg, pts, periodic=(True,))
    assert lib.specs[0].family == "trig"
    assert lib.specs[0].knots == (0.0, 2.0 * np.pi)
    assert lib.n_total == 2 * 2 + 1


def test_feature_library_trig_family_implies_circle():
    pts = np.linspace(-0.5, 0.5, 40)[:, None]
    cfg = BasisConfig(family="trig", degree=1, segments=1)
    lib = feature_library(cfg, pts)
    assert lib.specs[0].family == "trig"
    assert lib.specs[0].knots == (0.0, 2.0 * np.pi)


def test_feature_library_mixed_families_per_dimension():
    rng = np.random.default_rng(1)
    pts = np.column_stack([rng.uniform(0, 2 * np.pi, 60),
                           rng.uniform(-1, 1, 60)])
    cfg = BasisConfig(family=("trig", "bspline"), degree=2, segments=2)
    lib = feature_library(cfg, pts)
    assert lib.specs[0].family == "trig"
    assert lib.specs[1].family == "bspline"
    assert lib.n_total == 5 * 4


def test_feature_library_family_count_mismatch():
    pts = np.zeros((10, 2)) + np.arange(10)[:, None]
    cfg = BasisConfig(family=("bspline", "bspline", "trig"), degree=2,
                      segments=2)
    with pytest.raises(ConfigurationError, match="3 basis families"):
        feature_library(cfg, pts)


def test_feature_library_periodic_flag_count_mismatch():
    pts = np.zeros((10, 2)) + np.arange(10)[:, None]
    cfg = BasisConfig(family="bspline", degree=2, segments=2)
    with pytest.raises(ContractViolationError, match="1 periodicity flags"):
        feature_library(cfg, pts, periodic=(True,))


# ---------------------------------------------------------------------------
# check_acceptance

def test_check_acceptance_empty_bounds_pass():
    assert check_acceptance(_report(), np.array([0.1]), {}) == []


def test_check_acceptance_all_bounds_satisfied():
    acceptance = {"sigma_low": [0.09], "sigma_high": [0.11],
                  "relative_l2_rho_max": 0.05,
                  "trajectory_error_mean_max": 0.02,
                  "wasserstein_max": [0.1, 0.1]}
    assert check_acceptance(_report(), np.array([0.1]), acceptance) == []


def test_check_acceptance_sigma_bounds_broadcast():
    acceptance = {"sigma_low": [0.06], "sigma_high": [0.08]}
    fails = check_acceptance(_report(), np.array([0.07, 0.05]), acceptance)
    assert len(fails) == 1
    assert "sigma[1] = 0.05" in fails[0]
    assert "[0.06, 0.08]" in fails[0]


def test_check_acceptance_sigma_bounds_need_constant_fit():
    acceptance = {"sigma_low": [0.06], "sigma_high": [0.08]}
    fails = check_acceptance(_report(), None, acceptance)
    assert fails == ["sigma bounds set but no constant sigma was fitted"]


def test_check_acceptance_sigma_bound_length_mismatch():
    acceptance = {"sigma_low": [0.1, 0.2, 0.3], "sigma_high": [0.4, 0.5, 0.6]}
    fails = check_acceptance(_report(), np.array([0.2, 0.3]), acceptance)
    assert len(fails) == 1
    assert "3/3 entries for 2 fitted values" in fails[0]


def test_check_acceptance_metric_bounds_fail_with_values():
    acceptance = {"relative_l2_rho_max": 0.005,
                  "trajectory_error_mean_max": 0.001}
    fails = check_acceptance(_report(rel=0.01, traj=0.005), None, acceptance)
    assert any("relative L2(rho) error 0.01 > 0.005" in f for f in fails)
    assert any("trajectory error 0.005 > 0.001" in f for f in fails)


def test_check_acceptance_wasserstein_bounds_pair_by_position():
    # a single bound constrains only the first snapshot
    fails = check_acceptance(_report(w=((0.25, 0.02), (0.5, 9.0))), None,
                             {"wasserstein_max": [0.01]})
    assert len(fails) == 1
    assert "W2 at t=0.25 is 0.02 > 0.01" in fails[0]


# ---------------------------------------------------------------------------
# compare_reference

def test_compare_reference_empty_reference():
    assert compare_reference(_report(), np.array([0.1]), {}) == []


def test_compare_reference_within_band():
    notes = compare_reference(_report(rel=0.01), None,
                              {"relative_l2_rho": 0.005})
    assert notes == ["relative L2(rho): ours 0.01 vs reference 0.005 "
                     "(within 3x band)"]


def test_compare_reference_exceeds_band():
    notes = compare_reference(_report(rel=0.02), None,
                              {"relative_l2_rho": 0.005})
    assert "EXCEEDS 3x band" in notes[0]


def test_compare_reference_zero_reference_has_no_band():
    notes = compare_reference(_report(traj=0.005), None,
                              {"trajectory_error_mean": 0.0})
    assert notes == ["trajectory error mean: ours 0.005, reference 0 (no band)"]


def test_compare_reference_custom_factor():
    ref = {"relative_l2_rho": 0.005}
    assert "EXCEEDS" in compare_reference(_report(rel=0.01), None, ref,
                                          factor=1.5)[0]
    assert "within" in compare_reference(_report(rel=0.01), None, ref,
                                         factor=2.0)[0]


def test_compare_reference_wasserstein_pairs_by_position():
    notes = compare_reference(_report(), None, {"wasserstein": [0.02]})
    assert len(notes) == 1
    assert notes[0].startswith("W2 snapshot 0 (t=0.25): ours 0.02")
    assert "within" in notes[0]


def test_compare_reference_sigma_deviation_with_broadcast():
    notes = compare_reference(_report(), np.array([0.1, 0.2]),
                              {"sigma": [0.1]})
    assert notes[0] == ("sigma[0]: ours 0.1000 vs reference 0.1000 "
                        "(relative deviation 0.00%)")
    assert notes[1] == ("sigma[1]: ours 0.2000 vs reference 0.1000 "
                        "(relative deviation 100.00%)")


def test_compare_reference_sigma_entries_capped():
    sigma = np.full(11, 0.1)
    notes = compare_reference(_report(), sigma, {"sigma": [0.1]})
    assert len(notes) == 9
    assert notes[-1] == "sigma: 3 further entries omitted"


# ---------------------------------------------------------------------------
# run_simulate / run_experiment on a small noisy system

def test_run_simulate_honors_config_and_seed_override():
    cfg = _toy_config()
    model, ens = run_simulate(cfg)
    assert model.name == "toy"
    assert (ens.M, ens.T, ens.dt, ens.seed) == (30, 0.05, 0.005, 7)
    _, other = run_simulate(cfg, seed=8)
    assert other.seed == 8
    assert not np.array_equal(other.states, ens.states)


def test_run_experiment_artifact_structure(toy_art):
    art = toy_art
    assert art.fit.est_f is not None and art.fit.est_g is not None
    assert art.fit.kernel is None
    assert art.fit.diffusion.model_class == "constant_matrix"
    assert art.replayed.states.shape == art.ensemble.states.shape
    assert art.comparison.seed == art.ensemble.seed + 1
    # shared initial conditions, fresh noise afterwards
    assert_array_equal(art.comparison.states[:, 0, :],
                       art.ensemble.states[:, 0, :])
    assert not np.array_equal(art.comparison.states[:, 1:, :],
                              art.ensemble.states[:, 1:, :])


def test_run_experiment_report_and_notes(toy_art):
    report = toy_art.report
    assert np.isfinite(report.relative_L2_rho)
    assert report.notes["drift_corrected_qv"] is True
    assert report.notes["l2_domain"] == "full states"
    assert report.notes["w2_design"] == \
        "shared initial conditions, independent noise"
    assert report.notes["sigma_degenerate"] is False
    assert [s.time for s in report.wasserstein] == [0.025, 0.05]
    assert toy_art.sigma_entries.shape == (1,)
    assert 0.05 < toy_art.sigma_entries[0] < 0.15


def test_run_experiment_timings_and_verdicts(toy_art):
    assert set(toy_art.timings) == {"simulate_seconds", "fit_seconds",
                                    "evaluate_seconds"}
    assert all(v >= 0 for v in toy_art.timings.values())
    assert toy_art.acceptance_failures == ()
    assert toy_art.reference_notes == ()


def test_run_experiment_acceptance_and_reference_flow_through():
    cfg = _toy_config(acceptance={"sigma_low": [0.5], "sigma_high": [0.6]},
                      reference={"relative_l2_rho": 0.05})
    art = run_experiment(cfg)
    assert len(art.acceptance_failures) == 1
    assert "outside [0.5, 0.6]" in art.acceptance_failures[0]
    assert len(art.reference_notes) == 1
    assert "relative L2(rho)" in art.reference_notes[0]


# ---------------------------------------------------------------------------
# interaction-kernel path

def test_run_experiment_kernel_path(cs_art):
    art = cs_art
    assert art.fit.est_f is None and art.fit.est_g is None
    assert art.fit.kernel is not None
    assert art.report.notes["l2_domain"] == "pairwise distances"
    lo, hi = art.report.notes["kernel_domain"]
    assert lo == 0.0 and hi > 0.0
    # one constant noise level per velocity component
    assert art.sigma_entries.shape == (4 * 2,)
    assert np.all(art.sigma_entries > 0)


def test_kernel_domain_matches_library_box(cs_art):
    box = cs_art.fit.kernel.library.box
    assert cs_art.report.notes["kernel_domain"] == [float(box[0, 0]),
                                                    float(box[0, 1])]


# ---------------------------------------------------------------------------
# fit serialization

def test_fit_round_trip_generic(toy_art, rng):
    d = fit_to_dict(toy_art.fit)
    json.dumps(d)  # must be JSON-serializable as written
    back = fit_from_dict(d)
    assert back.kernel is None
    probe = rng.uniform(-1, 1, size=(20, toy_art.fit.est_f.library.dims_in))
    assert_array_equal(back.est_f.evaluate(probe),
                       toy_art.fit.est_f.evaluate(probe))
    assert_array_equal(back.est_g.evaluate(probe),
                       toy_art.fit.est_g.evaluate(probe))
    assert_array_equal(back.diffusion.sigma_diagonal(),
                       toy_art.fit.diffusion.sigma_diagonal())


def test_fit_round_trip_kernel(cs_art):
    back = fit_from_dict(fit_to_dict(cs_art.fit))
    assert back.est_f is None and back.est_g is None
    r = np.linspace(0.0, float(cs_art.fit.kernel.library.box[0, 1]), 50)
    assert_array_equal(back.kernel.evaluate(r), cs_art.fit.kernel.evaluate(r))


def test_fit_from_dict_requires_diffusion():
    with pytest.raises(KeyError):
        fit_from_dict({"est_f": None, "est_g": None})


# ---------------------------------------------------------------------------
# output tree

def test_write_outputs_tree_and_manifest(toy_art, tmp_path):
    paths = write_outputs(toy_art, tmp_path)
    expected = {"report.json", "report.csv", "wasserstein.csv", "sigma.csv",
                "estimates.json", "summary.txt", "manifest.json",
                "figures/wasserstein.png", "figures/trajectories.png",
                "figures/drift_parity.png"}
    assert set(paths) == expected
    assert all(p.stat().st_size > 0 for p in paths.values())

    manifest = json.loads(paths["manifest.json"].read_text())
    # the manifest lists every artifact written before itself
    assert manifest["files"] == sorted(expected - {"manifest.json"})
    assert manifest["acceptance_passed"] is True
    assert manifest["ensemble_sha256"] == ensemble_hash(toy_art.ensemble)
    assert manifest["grid"]["M"] == 30
    # timings are excluded from the byte-stable manifest
    assert (tmp_path / "timing.txt").exists()
    assert "timing.txt" not in manifest["files"]


def test_write_outputs_kernel_run_adds_kernel_files(cs_art, tmp_path):
    paths = write_outputs(cs_art, tmp_path)
    assert "kernel.csv" in paths
    assert "figures/kernel.png" in paths
    assert "figures/drift_parity.png" not in paths
    header, first = paths["kernel.csv"].read_text().splitlines()[:2]
    assert header == "r,phi_true,phi_hat"
    assert len(first.split(",")) == 3


def test_write_outputs_can_save_ensemble(toy_art, tmp_path):
    paths = write_outputs(toy_art, tmp_path, save_ensemble_data=True)
    assert "ensemble.npz" in paths and "states.csv" in paths
    from msdelearn.simulate import load_ensemble

    loaded = load_ensemble(paths["ensemble.npz"])
    assert_array_equal(loaded.states, toy_art.ensemble.states)


def test_report_json_contents(toy_art, tmp_path):
    paths = write_outputs(toy_art, tmp_path)
    report = json.loads(paths["report.json"].read_text())
    assert report["relative_L2_rho"] == toy_art.report.relative_L2_rho
    assert report["sigma_hat"] == [float(v) for v in toy_art.sigma_entries]
    assert report["acceptance_failures"] == []
    assert [s["time"] for s in report["wasserstein"]] == [0.025, 0.05]
