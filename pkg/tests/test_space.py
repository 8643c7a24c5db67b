import json
import math
import os

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from calderon_lab.space import (
    SpaceFormatError,
    doubling_audit,
    geometry_equivalence_audit,
    load_space,
    lp_norm,
    maximal_operator,
    quasi_metric_audit,
    space_from_coords,
)

from .oracles import brute_doubling, brute_maximal, brute_quasi_triangle


def test_grid_basics(grid8):
    assert grid8.n == 8
    assert grid8.total_measure == pytest.approx(1.0)
    assert grid8.diameter == pytest.approx(1.0)
    assert np.allclose(grid8.d, grid8.d.T)
    assert np.all(np.diag(grid8.d) == 0.0)


def test_quasi_metric_audit_matches_brute(grid8):
    rep = quasi_metric_audit(grid8)
    assert rep.exhaustive
    assert rep.A0_fit == pytest.approx(brute_quasi_triangle(grid8), abs=1e-14)
    assert rep.within_declared


def test_power_metric_needs_larger_A0():
    x = np.linspace(0.0, 1.0, 10)
    sq = space_from_coords(x[:, None], rho=2.0, A0=2.0)
    rep = quasi_metric_audit(sq)
    assert rep.A0_fit > 1.0
    assert rep.within_declared
    tight = space_from_coords(x[:, None], rho=2.0, A0=1.0)
    assert not quasi_metric_audit(tight).within_declared


def test_doubling_audit_matches_brute(grid8):
    rep = doubling_audit(grid8)
    assert rep.exhaustive
    assert rep.C_mu_fit == pytest.approx(brute_doubling(grid8), abs=1e-14)
    # a uniform 1-d grid has volume growth of order one
    assert 0.5 <= rep.omega_fit <= 1.5
    assert rep.scaling_residual <= rep.C_mu_fit + 1e-12


def test_geometry_audit_fields(grid16):
    rep = geometry_equivalence_audit(grid16)
    assert rep.volume_swap_fit >= 1.0
    assert rep.ball_chain_upper >= 1.0
    assert rep.ball_chain_lower >= 1.0
    for name in ("avg_kernel_fit", "near_sum_fit", "far_sum_fit", "tail_sum_fit"):
        assert math.isfinite(getattr(rep, name))
        assert getattr(rep, name) > 0.0


def test_maximal_operator_matches_brute(grid8):
    rng = np.random.default_rng(3)
    for _ in range(4):
        f = rng.standard_normal(grid8.n)
        assert np.allclose(maximal_operator(grid8, f), brute_maximal(grid8, f),
                           atol=1e-14)


def test_maximal_dominates_function(grid16):
    f = np.zeros(grid16.n)
    f[5] = 4.0
    m = maximal_operator(grid16, f)
    assert np.all(m >= np.abs(f) - 1e-14)
    assert np.all(m > 0.0)


@given(st.integers(0, 2**31 - 1), st.floats(0.1, 8.0))
def test_lp_norm_scales_homogeneously(seed, c):
    space = space_from_coords(np.linspace(0, 1, 12)[:, None])
    f = np.random.default_rng(seed).standard_normal(12)
    for p in (1.0, 1.5, 2.0, 4.0, math.inf):
        assert lp_norm(space, c * f, p) == pytest.approx(c * lp_norm(space, f, p),
                                                         rel=1e-12)


@given(st.integers(0, 2**31 - 1))
def test_lp_norm_triangle(seed):
    space = space_from_coords(np.linspace(0, 1, 12)[:, None])
    rng = np.random.default_rng(seed)
    f, g = rng.standard_normal(12), rng.standard_normal(12)
    for p in (1.0, 2.0, 4.0):
        assert lp_norm(space, f + g, p) <= lp_norm(space, f, p) + lp_norm(space, g, p) + 1e-12


def test_lp_norm_rejects_bad_exponent(grid8):
    with pytest.raises(ValueError):
        lp_norm(grid8, np.zeros(8), 0.0)


# -- file format ---------------------------------------------------------


def write_space(tmp_path, spec, name="space.json"):
    path = tmp_path / name
    path.write_text(json.dumps(spec))
    return str(path)


def test_load_space_euclidean(tmp_path):
    path = write_space(tmp_path, {
        "points": [0.0, 0.25, 0.5, 1.0],
        "weights": [0.25, 0.25, 0.25, 0.25],
        "metric": {"type": "euclidean"},
    })
    space = load_space(path)
    assert space.n == 4
    assert space.d[0, 3] == pytest.approx(1.0)


def test_load_space_power(tmp_path):
    path = write_space(tmp_path, {
        "points": [[0.0], [1.0], [3.0]],
        "metric": {"type": "power", "rho": 2.0},
        "A0": 2.0,
    })
    space = load_space(path)
    assert space.d[0, 1] == pytest.approx(1.0)
    assert space.d[0, 2] == pytest.approx(9.0)


def test_load_space_explicit_matrix(tmp_path):
    d = np.array([[0.0, 1.0, 2.0], [1.0, 0.0, 1.0], [2.0, 1.0, 0.0]])
    d.astype("<f8").tofile(tmp_path / "d.f64")
    path = write_space(tmp_path, {
        "points": ["a", "b", "c"],
        "metric": {"type": "explicit", "matrix_file": "d.f64"},
        "ids": ["a", "b", "c"],
    })
    space = load_space(path)
    assert np.allclose(space.d, d)
    assert space.ids == ["a", "b", "c"]


def test_load_space_error_paths(tmp_path):
    with pytest.raises(SpaceFormatError):
        load_space(str(tmp_path / "absent.json"))
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(SpaceFormatError):
        load_space(str(bad))
    with pytest.raises(SpaceFormatError):
        load_space(write_space(tmp_path, {"points": [0.0, 1.0]}, "nometric.json"))
    with pytest.raises(SpaceFormatError):
        load_space(write_space(tmp_path, {
            "points": [0.0, 1.0], "weights": [1.0],
            "metric": {"type": "euclidean"},
        }, "badw.json"))
    # matrix file holding the wrong number of entries
    np.zeros(5).astype("<f8").tofile(tmp_path / "short.f64")
    with pytest.raises(SpaceFormatError):
        load_space(write_space(tmp_path, {
            "points": ["a", "b", "c"],
            "metric": {"type": "explicit", "matrix_file": "short.f64"},
        }, "badm.json"))


def test_weights_must_be_positive():
    with pytest.raises(ValueError):
        space_from_coords([[0.0], [1.0]], weights=[1.0, 0.0])
