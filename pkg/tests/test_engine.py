import numpy as np
import pytest

from calderon_lab.dyadic import refine_subcubes
from calderon_lab.engine import (
    auto_select,
    build_probes,
    continuous_crf,
    decay_study,
    discrete_crf,
    discrete_split,
    identity_split,
    mode_target,
    neumann_invert,
    operator_norm_l2,
    window_kernel,
    window_levels,
)
from calderon_lab.operators import matmulw

from .oracles import brute_operator_norm


def test_mode_targets(grid8):
    E = mode_target(grid8, "inhomogeneous")
    assert np.allclose(E, np.diag(1.0 / grid8.w))
    hom = mode_target(grid8, "homogeneous")
    assert np.allclose(hom, E - np.ones((8, 8)) / grid8.total_measure)
    with pytest.raises(ValueError):
        mode_target(grid8, "mixed")


def test_operator_norm_matches_svd(grid32):
    rng = np.random.default_rng(0)
    for trial in range(6):
        K = rng.standard_normal((32, 32))
        if trial % 2:
            K = K + K.T
        got = operator_norm_l2(grid32, K)
        want = brute_operator_norm(grid32, K)
        assert got == pytest.approx(want, rel=1e-10)


def test_operator_norm_handles_eigenvalue_clusters(grid32):
    # projector with a maximally degenerate top eigenvalue
    P = mode_target(grid32, "homogeneous")
    got = operator_norm_l2(grid32, P)
    assert got == pytest.approx(brute_operator_norm(grid32, P), rel=1e-10)


def test_window_kernel_sums_members(grid8, haar_hom8):
    fam = haar_hom8
    for k in fam.levels:
        wl = window_levels(fam, k, 1)
        assert wl == [l for l in fam.levels if abs(l - k) <= 1]
        direct = sum(fam.Q[l] for l in wl)
        assert np.array_equal(window_kernel(fam, k, 1), direct)


def test_identity_split_tiles_exactly(grid32, smooth_hom32, smooth_inhom32):
    for fam in (smooth_hom32, smooth_inhom32):
        target = mode_target(grid32, fam.mode)
        for N in (0, 1, 3):
            split = identity_split(grid32, fam, N)
            assert np.abs(split.near + split.far - target).max() <= 1e-10
            assert split.residual <= 1e-10


def test_identity_split_thread_invariance(grid32, smooth_hom32):
    one = identity_split(grid32, smooth_hom32, 1, threads=1)
    three = identity_split(grid32, smooth_hom32, 1, threads=3)
    assert one.near.tobytes() == three.near.tobytes()
    assert one.far.tobytes() == three.far.tobytes()


def test_neumann_certificate(grid32, smooth_hom32):
    split = identity_split(grid32, smooth_hom32, 1)
    inv, cert = neumann_invert(grid32, split.far, "homogeneous")
    assert cert["ok"]
    assert cert["rho"] < 1.0
    assert cert["tail_bound"] <= cert["tail_target"]
    # the certificate's tail controls the actual inversion residual
    target = mode_target(grid32, "homogeneous")
    near = target - split.far
    resid = np.abs(matmulw(grid32, inv, near) - target).max()
    assert resid <= max(2.0 * cert["tail_bound"], 1e-12) * 10


def test_neumann_rejects_expansion(grid32, smooth_hom32):
    split = identity_split(grid32, smooth_hom32, 0)
    bad = split.far * 2.0
    if operator_norm_l2(grid32, bad) < 1.0:
        bad = bad * 10.0
    with pytest.raises(ValueError, match="not a contraction"):
        neumann_invert(grid32, bad, "homogeneous")


def test_probe_census(grid32, system32):
    probes = build_probes(grid32, system32, seed=0)
    again = build_probes(grid32, system32, seed=0)
    names = [n for n, _ in probes]
    assert names == [n for n, _ in again]
    for (_, f), (_, g) in zip(probes, again):
        assert np.array_equal(f, g)
        assert np.isfinite(f).all()
    assert "constant" in names
    assert sum(1 for n in names if n.startswith("noise")) > 0
    assert sum(1 for n in names if n.startswith("bump")) >= 3
    assert sum(1 for n in names if n.startswith("detail")) > 0


def test_continuous_crf_haar_exact(grid16, system16, haar_hom16):
    res = continuous_crf(grid16, system16, haar_hom16, 1)
    assert res.rho <= 1e-12
    assert res.split_residual <= 1e-12
    assert res.dual_consistency <= 1e-12
    worst = max(max(v for k, v in row.items() if k.startswith("rel_l2"))
                for row in res.probe_table)
    assert worst <= 1e-12


def test_continuous_crf_smoothed(grid32, system32, smooth_hom32):
    res = continuous_crf(grid32, system32, smooth_hom32, 1)
    assert res.rho < 1.0
    assert res.certificate["ok"]
    assert res.window_residual <= 1e-10
    assert res.dual_row_residual <= 1e-10
    assert res.probe_inequality <= 1.0
    worst = max(max(v for k, v in row.items() if k.startswith("rel_l2"))
                for row in res.probe_table)
    assert worst <= 1e-6


def test_discrete_split_tiles(grid32, system32, smooth_hom32):
    ref = refine_subcubes(system32, 2)
    for variant in (0, 1, 2):
        split = discrete_split(grid32, system32, smooth_hom32, 1, ref, variant)
        total = split.S + split.G + split.R
        assert np.abs(total - mode_target(grid32, "homogeneous")).max() <= 1e-10


def test_discrete_haar_exactness_by_style(grid16, system16, haar_hom16):
    # styles that sample the windowed kernel need cells one level deeper
    # than the window is wide; the plain-details style does not
    levels = sorted(set(haar_hom16.dyadic_levels.values()))
    ref1 = refine_subcubes(system16, 1, levels=levels)
    ref2 = refine_subcubes(system16, 2, levels=levels)
    for variant, ref in ((0, ref1), (1, ref2), (2, ref2)):
        split = discrete_split(grid16, system16, haar_hom16, 1, ref, variant)
        assert operator_norm_l2(grid16, split.G) <= 1e-12
    for variant in (1, 2):
        split = discrete_split(grid16, system16, haar_hom16, 1, ref1, variant)
        assert operator_norm_l2(grid16, split.G) > 0.5


def test_discrete_crf_variants(grid32, system32, smooth_hom32):
    for variant in (0, 1, 2):
        res = discrete_crf(grid32, system32, smooth_hom32, 1, 2, variant=variant)
        assert res.rho < 1.0
        assert res.certificate["ok"]
        assert res.split_residual <= 1e-10
        worst = max(max(v for k, v in row.items() if k.startswith("rel_l2"))
                    for row in res.probe_table)
        assert worst <= 1e-5


def test_discrete_dual_inverts_on_the_right(grid16, system16, haar_hom16):
    res = discrete_crf(grid16, system16, haar_hom16, 1, 2, variant=0,
                       swapped=True)
    assert res.rho <= 1e-12
    assert res.recon_residual <= 1e-10
    worst = max(max(v for k, v in row.items() if k.startswith("rel_l2"))
                for row in res.probe_table)
    assert worst <= 1e-12


def test_discrete_sampler_invariance_on_haar(grid16, system16, haar_hom16):
    rhos = []
    for sampler in ("center", "random", "worst-case"):
        res = discrete_crf(grid16, system16, haar_hom16, 1, 1,
                           sampler=sampler, seed=3)
        rhos.append(res.rho)
        worst = max(max(v for k, v in row.items() if k.startswith("rel_l2"))
                    for row in res.probe_table)
        assert worst <= 1e-12
    assert rhos[0] == rhos[1] == rhos[2]
    assert max(rhos) <= 1e-12


def test_discrete_split_thread_invariance(grid32, system32, smooth_hom32):
    ref = refine_subcubes(system32, 2)
    a = discrete_split(grid32, system32, smooth_hom32, 1, ref, 0, False, 1)
    b = discrete_split(grid32, system32, smooth_hom32, 1, ref, 0, False, 3)
    assert a.S.tobytes() == b.S.tobytes()
    assert a.G.tobytes() == b.G.tobytes()


def test_inhomogeneous_discrete_average_rows(grid32, system32, smooth_inhom32):
    res = discrete_crf(grid32, system32, smooth_inhom32, 1, 1)
    assert res.rho < 1.0
    assert res.certificate["ok"]
    assert "coarse_defect_l2" in res.census or "defect_l2" in res.census


def test_decay_study_shapes(grid32, system32, smooth_hom32):
    study = decay_study(grid32, system32, smooth_hom32, "RN_l2",
                        values=(0, 1, 2, 3))
    ys = [row["RN_l2"] for row in study.rows]
    assert all(a > b for a, b in zip(ys, ys[1:]))
    assert not study.fit["skipped"]
    assert study.fit["ratio"] < 1.0
    assert study.fit["monotone"]


def test_decay_study_degenerate_table(grid8, haar_hom8, system8):
    study = decay_study(grid8, system8, haar_hom8, "RN_l2", values=(0, 1, 2))
    assert study.fit["skipped"]
    assert "degenerate" in study.fit["reason"]


def test_decay_study_j0_sweep(grid32, system32, smooth_hom32):
    study = decay_study(grid32, system32, smooth_hom32, "GN_l2", sweep="j0",
                        values=(0, 1, 2), N=1)
    ys = [row["GN_l2"] for row in study.rows]
    assert all(a > b for a, b in zip(ys, ys[1:]))


def test_decay_study_rejects_unknown_quantity(grid8, system8, haar_hom8):
    with pytest.raises(ValueError):
        decay_study(grid8, system8, haar_hom8, "nope")


def test_auto_select_contracts(grid32, system32, smooth_hom32):
    sel = auto_select(grid32, system32, smooth_hom32)
    assert sel["rho_continuous"] <= 0.5
    assert sel["rho_discrete"] <= 0.5
    res = continuous_crf(grid32, system32, smooth_hom32, sel["N"])
    assert res.certificate["ok"]
