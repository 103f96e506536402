"""Basis families: spline oracle agreement, algebraic identities, layout."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from msdelearn import (
    BasisLibrary,
    BasisSpec1D,
    ConfigurationError,
    ContractViolationError,
    build_library,
    design_matrix,
    eval_basis,
    infer_box,
    trig_spec,
    uniform_library,
    uniform_spec,
)
from _oracles import clamped_bspline_design


def _line_library(family, a, b, segments, degree):
    return build_library([uniform_spec(family, a, b, segments, degree)])


# ---------------------------------------------------------------------------
# agreement with the Cox-de Boor recursion

@pytest.mark.parametrize("degree", [0, 1, 2])
@pytest.mark.parametrize("segments", [1, 3, 5])
def test_bspline_matches_recursion(rng, degree, segments):
    a, b = -1.3, 2.1
    lib = _line_library("bspline", a, b, segments, degree)
    xs = np.concatenate([
        rng.uniform(a, b, size=40),
        np.asarray(lib.specs[0].knots),        # on-knot convention
        [a - 0.5, b + 0.7],                    # clamped queries
    ])
    ours = design_matrix(lib, xs[:, None])
    oracle = clamped_bspline_design(np.asarray(lib.specs[0].knots), degree, xs)
    np.testing.assert_allclose(ours, oracle, atol=1e-12)


def test_bspline_function_count():
    for segments, degree in [(1, 0), (1, 2), (4, 1), (8, 2)]:
        spec = uniform_spec("bspline", 0.0, 1.0, segments, degree)
        assert spec.n_functions == segments + degree


# ---------------------------------------------------------------------------
# algebraic identities

def test_bspline_partition_of_unity(rng):
    lib = _line_library("bspline", 0.0, 2.0, 4, 2)
    xs = rng.uniform(-1.0, 3.0, size=(200, 1))  # includes clamped region
    rows = design_matrix(lib, xs)
    np.testing.assert_allclose(rows.sum(axis=1), 1.0, atol=1e-12)


def test_piecewise_poly_single_active_segment(rng):
    # exactly one segment block is nonzero and its constant column is 1
    degree, segments = 2, 4
    lib = _line_library("piecewise_poly", 0.0, 2.0, segments, degree)
    xs = rng.uniform(-1.0, 3.0, size=(200, 1))
    rows = design_matrix(lib, xs).reshape(200, segments, degree + 1)
    active = np.abs(rows).max(axis=2) > 0.0
    np.testing.assert_array_equal(active.sum(axis=1), np.ones(200))
    const_cols = rows[np.arange(200), np.argmax(active, axis=1), 0]
    np.testing.assert_array_equal(const_cols, np.ones(200))


@pytest.mark.parametrize("family", ["bspline", "piecewise_poly"])
@pytest.mark.parametrize("exponent", [0, 1, 2])
def test_polynomial_reproduction(rng, family, exponent):
    # degree-2 spaces contain 1, x, x^2 exactly inside the box
    lib = _line_library(family, -1.0, 1.5, 3, 2)
    xs = rng.uniform(-1.0, 1.5, size=(300, 1))
    rows = design_matrix(lib, xs)
    target = xs[:, 0] ** exponent
    coef, *_ = np.linalg.lstsq(rows, target, rcond=None)
    np.testing.assert_allclose(rows @ coef, target, atol=1e-10)


def test_bspline_local_support(rng):
    lib = _line_library("bspline", 0.0, 8.0, 8, 2)
    xs = rng.uniform(0.0, 8.0, size=(100, 1))
    rows = design_matrix(lib, xs)
    assert np.all((rows > 1e-14).sum(axis=1) <= 3)  # degree + 1 active


def test_bspline_nonnegative(rng):
    lib = _line_library("bspline", -2.0, 2.0, 5, 2)
    rows = design_matrix(lib, rng.uniform(-3.0, 3.0, size=(200, 1)))
    assert np.all(rows >= 0.0)


def test_polynomial_families_clamp_outside_box():
    for family in ("bspline", "piecewise_poly"):
        lib = _line_library(family, 0.0, 1.0, 2, 2)
        low = design_matrix(lib, np.array([[-5.0], [0.0]]))
        high = design_matrix(lib, np.array([[9.0], [1.0]]))
        np.testing.assert_array_equal(low[0], low[1])
        np.testing.assert_array_equal(high[0], high[1])


# ---------------------------------------------------------------------------
# trig family

def test_trig_columns_and_periodicity(rng):
    spec = trig_spec(degree=2)
    lib = build_library([spec])
    assert spec.n_functions == 5
    xs = rng.uniform(-10.0, 10.0, size=50)
    rows = design_matrix(lib, xs[:, None])
    np.testing.assert_array_equal(rows[:, 0], np.ones(50))
    shifted = design_matrix(lib, (xs + 2.0 * np.pi)[:, None])
    np.testing.assert_allclose(rows, shifted, atol=1e-9)
    np.testing.assert_allclose(rows[:, 1], np.cos(xs), atol=1e-12)
    np.testing.assert_allclose(rows[:, 2], np.sin(xs), atol=1e-12)


def test_trig_is_not_clamped():
    lib = build_library([trig_spec(degree=1)])
    inside = eval_basis(lib, np.array([0.0]))
    outside = eval_basis(lib, np.array([-0.5]))
    assert not np.allclose(inside, outside)


# ---------------------------------------------------------------------------
# tensor products

def test_tensor_rows_are_kronecker_products(rng):
    lib = build_library([
        uniform_spec("bspline", 0.0, 1.0, 2, 2),
        trig_spec(degree=1),
        uniform_spec("piecewise_poly", -1.0, 1.0, 2, 1),
    ])
    assert lib.n_total == 4 * 3 * 4
    pts = rng.uniform(0.0, 1.0, size=(20, 3))
    rows = design_matrix(lib, pts)
    for i in range(20):
        parts = [design_matrix(build_library([sp]), pts[i:i + 1, j:j + 1])[0]
                 for j, sp in enumerate(lib.specs)]
        expected = np.kron(np.kron(parts[0], parts[1]), parts[2])
        np.testing.assert_allclose(rows[i], expected, atol=1e-12)
        np.testing.assert_allclose(eval_basis(lib, pts[i]), expected, atol=1e-12)


def test_tensor_partition_of_unity(rng):
    lib = uniform_library(np.array([[0.0, 1.0], [0.0, 1.0]]),
                          "bspline", degree=2, segments=3)
    rows = design_matrix(lib, rng.uniform(0.0, 1.0, size=(100, 2)))
    np.testing.assert_allclose(rows.sum(axis=1), 1.0, atol=1e-12)


def test_design_matrix_rejects_wrong_width(rng):
    lib = uniform_library(np.array([[0.0, 1.0], [0.0, 1.0]]),
                          "bspline", degree=1, segments=1)
    with pytest.raises(ContractViolationError):
        design_matrix(lib, rng.uniform(size=(5, 3)))


# ---------------------------------------------------------------------------
# box inference

def test_infer_box_pads_by_fraction():
    data = np.array([[0.0, 10.0], [2.0, 30.0]])
    box = infer_box(data, padding_fraction=0.1)
    np.testing.assert_allclose(box, [[-0.2, 2.2], [8.0, 32.0]])


def test_infer_box_degenerate_dimension():
    box = infer_box(np.full((5, 1), 3.0))
    assert box[0, 0] < 3.0 < box[0, 1]


def test_infer_box_rejects_bad_input():
    with pytest.raises(ContractViolationError):
        infer_box(np.empty((0, 2)))
    with pytest.raises(ContractViolationError):
        infer_box(np.array([[np.nan]]))
    with pytest.raises(ContractViolationError):
        infer_box(np.ones((3, 1)), padding_fraction=-0.1)


# ---------------------------------------------------------------------------
# serialization and validation

def test_spec_and_library_dict_round_trip(rng):
    lib = build_library([
        uniform_spec("bspline", -1.0, 2.0, 3, 2),
        trig_spec(degree=2),
    ])
    rebuilt = BasisLibrary.from_dict(lib.to_dict())
    assert rebuilt.specs == lib.specs
    np.testing.assert_array_equal(rebuilt.box, lib.box)
    pts = rng.uniform(-1.0, 2.0, size=(10, 2))
    np.testing.assert_array_equal(design_matrix(rebuilt, pts),
                                  design_matrix(lib, pts))


@pytest.mark.parametrize("kwargs", [
    {"family": "fourier"},
    {"degree": 3},
    {"degree": -1},
    {"knots": (1.0, 0.0)},
    {"knots": (0.0,)},
])
def test_spec_validation(kwargs):
    base = dict(family="bspline", degree=1, knots=(0.0, 1.0))
    base.update(kwargs)
    with pytest.raises(ConfigurationError):
        BasisSpec1D(**base)


def test_trig_needs_degree_one():
    with pytest.raises(ConfigurationError):
        BasisSpec1D(family="trig", degree=0, knots=(0.0, 1.0))


def test_uniform_spec_rejects_zero_segments():
    with pytest.raises(ConfigurationError):
        uniform_spec("bspline", 0.0, 1.0, 0, 1)


def test_library_box_must_match_specs():
    spec = uniform_spec("bspline", 0.0, 1.0, 2, 1)
    with pytest.raises(ContractViolationError):
        BasisLibrary(dims_in=1, specs=(spec,), box=np.array([[0.0, 2.0]]))


# ---------------------------------------------------------------------------
# property tests

@settings(max_examples=60, deadline=None)
@given(degree=st.integers(0, 2), segments=st.integers(1, 6),
       x=st.floats(-50.0, 50.0))
def test_bspline_unity_everywhere(degree, segments, x):
    lib = _line_library("bspline", -1.0, 1.0, segments, degree)
    row = eval_basis(lib, np.array([x]))
    assert row.sum() == pytest.approx(1.0, abs=1e-12)
    assert np.all(row >= 0.0)


@settings(max_examples=60, deadline=None)
@given(degree=st.integers(1, 2), x=st.floats(-20.0, 20.0))
def test_trig_row_norm_identity(degree, x):
    # cos^2 + sin^2 collapses each harmonic pair to 1
    lib = build_library([trig_spec(degree=degree)])
    row = eval_basis(lib, np.array([x]))
    pairs = row[1:].reshape(degree, 2)
    np.testing.assert_allclose((pairs ** 2).sum(axis=1), 1.0, atol=1e-12)
