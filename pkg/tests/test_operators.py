import json
import os

import numpy as np
import pytest

from calderon_lab.engine import mode_target
from calderon_lab.operators import (
    build_haar_family,
    build_haar_ladder,
    build_smoothed_family,
    build_smoothed_ladder,
    compose_and_audit,
    load_family,
    matmulw,
    save_family,
    verify_ati,
    verify_exp_ati,
)

from .oracles import brute_compose, brute_far_part


def test_haar_ladder_is_conditional_expectation(grid8, system8):
    P = build_haar_ladder(system8)
    w = grid8.w
    for k, Pk in P.items():
        # averaging: rows integrate to one, cube-constant output, idempotent
        assert np.allclose(Pk @ w, np.ones(grid8.n), atol=1e-13)
        assert np.allclose(matmulw(grid8, Pk, Pk), Pk, atol=1e-13)
        # self-adjoint in L2(w)
        assert np.allclose(w[:, None] * Pk, (w[:, None] * Pk).T, atol=1e-14)


def test_haar_coarse_absorbs_fine(grid8, system8):
    P = build_haar_ladder(system8)
    ks = sorted(P)
    for i, k in enumerate(ks[:-1]):
        fine = ks[i + 1]
        assert np.allclose(matmulw(grid8, P[k], P[fine]), P[k], atol=1e-13)
        assert np.allclose(matmulw(grid8, P[fine], P[k]), P[k], atol=1e-13)


def test_haar_details_are_orthogonal(grid8, haar_hom8):
    fam = haar_hom8
    for k in fam.levels:
        for l in fam.levels:
            prod = matmulw(grid8, fam.Q[k], fam.Q[l])
            if k == l:
                assert np.allclose(prod, fam.Q[k], atol=1e-12)
            else:
                assert np.abs(prod).max() <= 1e-12


def test_telescopes_hit_their_targets(grid8, haar_hom8, haar_inhom8):
    for fam in (haar_hom8, haar_inhom8):
        total = fam.sum_kernel()
        assert np.abs(total - mode_target(grid8, fam.mode)).max() <= 1e-12


def test_smoothed_ladder_is_normalized(grid32, system32):
    P, census = build_smoothed_ladder(system32)
    assert all(c["residual"] <= 1e-13 for c in census.values())
    w = grid32.w
    for k, Pk in P.items():
        assert np.allclose(Pk @ w, np.ones(grid32.n), atol=1e-12)
        assert np.allclose(w[:, None] * Pk, (w[:, None] * Pk).T, atol=1e-13)
        assert Pk.min() >= 0.0


def test_smoothed_telescope_and_integrals(grid32, smooth_hom32, smooth_inhom32):
    for fam in (smooth_hom32, smooth_inhom32):
        total = fam.sum_kernel()
        assert np.abs(total - mode_target(grid32, fam.mode)).max() <= 1e-12
        for k in fam.levels:
            row = fam.Q[k] @ grid32.w
            if fam.mode == "inhomogeneous" and k == fam.levels[0]:
                assert np.allclose(row, np.ones(grid32.n), atol=1e-12)
            else:
                assert np.abs(row).max() <= 1e-12


def test_family_window_sum_matches_brute(grid8, haar_hom8):
    # far part assembled pairwise equals the brute double loop
    from calderon_lab.engine import identity_split

    for N in (0, 1, 2):
        split = identity_split(grid8, haar_hom8, N)
        brute = brute_far_part(grid8, haar_hom8, N)
        assert np.abs(split.far - brute).max() <= 1e-12


def test_ati_reports_pass(grid8, grid32, haar_hom8, smooth_hom32, system32):
    assert verify_ati(grid8, haar_hom8).all_exact_pass
    rep = verify_ati(grid32, smooth_hom32)
    assert rep.all_exact_pass
    erep = verify_exp_ati(grid32, system32, smooth_hom32)
    assert erep.all_exact_pass


def test_compose_audit_cancellation(grid32, system32, smooth_hom32):
    rep = compose_and_audit(grid32, system32, smooth_hom32, smooth_hom32)
    assert rep.all_exact_pass
    assert rep.get("eta_fit").value > 0.0


def test_compose_matches_brute(grid8, haar_hom8):
    A = haar_hom8.Q[haar_hom8.levels[0]]
    B = haar_hom8.Q[haar_hom8.levels[-1]]
    assert np.allclose(matmulw(grid8, A, B), brute_compose(grid8, A, B))


def test_unknown_mode_rejected(system8):
    with pytest.raises(ValueError):
        build_haar_family(system8, "periodic")


def test_family_round_trip_bit_exact(tmp_path, grid8, haar_hom8):
    d = str(tmp_path / "fam")
    save_family(haar_hom8, d)
    back = load_family(d)
    assert back.mode == haar_hom8.mode
    assert back.provenance == haar_hom8.provenance
    assert back.delta == haar_hom8.delta
    assert back.levels == haar_hom8.levels
    for k in haar_hom8.levels:
        assert np.array_equal(back.Q[k], haar_hom8.Q[k])


def test_family_load_rejects_bad_format(tmp_path, haar_hom8):
    d = str(tmp_path / "fam")
    save_family(haar_hom8, d)
    man = json.load(open(os.path.join(d, "manifest.json")))
    man["format"] = 99
    json.dump(man, open(os.path.join(d, "manifest.json"), "w"))
    with pytest.raises(ValueError):
        load_family(d)


def test_family_load_rejects_truncated_files(tmp_path, haar_hom8):
    d = str(tmp_path / "fam")
    save_family(haar_hom8, d)
    qfiles = sorted(f for f in os.listdir(d) if f.startswith("q_"))
    path = os.path.join(d, qfiles[0])
    raw = open(path, "rb").read()
    open(path, "wb").write(raw[: len(raw) // 2])
    with pytest.raises(ValueError):
        load_family(d)


def test_smoothed_ladder_params_recorded(smooth_hom32):
    assert smooth_hom32.params["nu"] == 1.0
    assert smooth_hom32.params["a"] == 1.0
