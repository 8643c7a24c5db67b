import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from calderon_lab.dyadic import (
    NetConstructionError,
    build_dyadic,
    build_nets,
    load_dyadic,
    refine_subcubes,
    verify_dyadic_invariants,
    verify_expsum,
)
from calderon_lab.space import space_from_coords

from .oracles import brute_expsum, brute_nesting_ok, brute_partition_ok


def test_net_levels_bracket_the_geometry(grid8, system8):
    net = system8.net
    # coarsest built scale reaches the diameter, finest resolves half the gap
    assert net.scale(net.k_min) >= grid8.diameter
    assert net.scale(net.k_min + 1) < grid8.diameter
    dmin = grid8.min_positive_distance()
    assert net.scale(net.k_op_max) >= dmin / 2.0
    assert net.scale(net.k_op_max + 1) < dmin / 2.0


def test_net_separation_and_covering(system8):
    space, net = system8.space, system8.net
    for k in net.levels:
        centers = net.centers[k]
        if len(centers) > 1:
            sub = space.d[np.ix_(centers, centers)]
            off = sub[~np.eye(len(centers), dtype=bool)]
            assert off.min() >= net.scale(k) - 1e-15
        assert space.d[:, centers].min(axis=1).max() <= net.c0 * net.scale(k) + 1e-15


def test_nets_are_nested_and_anchored(system8):
    net = system8.net
    levels = list(net.levels)
    assert 0 in net.centers[levels[0]]
    for k in levels[1:]:
        assert set(net.centers[k - 1]) <= set(net.centers[k])


def test_net_rebuild_is_deterministic():
    rng = np.random.default_rng(11)
    x = np.sort(rng.random(12))
    space = space_from_coords(x[:, None])
    net = build_nets(space, 0.5)
    net2 = build_nets(space, 0.5)
    for k in net.levels:
        assert np.array_equal(net.centers[k], net2.centers[k])


def test_net_ties_prefer_smaller_index():
    # points 1 and 2 tie in distance from the anchor but exclude each other
    # at scale 1/2, so the greedy pick decides which one becomes a center
    space = space_from_coords([[0.0, 0.0], [0.6, 0.2], [0.6, -0.2]])
    net = build_nets(space, 0.5)
    two = [k for k in net.levels if len(net.centers[k]) == 2]
    assert two, "expected a two-center level"
    assert set(net.centers[two[0]].tolist()) == {0, 1}


def test_cube_invariants_exhaustive(system8, system32):
    for system in (system8, system32):
        checks = verify_dyadic_invariants(system)
        assert checks["partition"] and checks["nesting"]
        assert checks["measure_gap"] <= 1e-12
        assert brute_partition_ok(system)
        assert brute_nesting_ok(system)


def test_sandwich_constants(system8):
    A0, c0, C0 = system8.space.A0, system8.net.c0, system8.net.C0
    assert system8.c_natural == pytest.approx(c0 / (3.0 * A0 * A0))
    assert system8.C_natural == pytest.approx(2.0 * A0 * C0)
    # fits live inside the declared sandwich
    assert system8.sandwich_inner_fit >= system8.c_natural - 1e-15
    assert system8.sandwich_outer_fit <= system8.C_natural + 1e-15


def test_expsum_matches_brute(system8):
    rep = verify_expsum(system8)
    c1, c2 = brute_expsum(system8)
    assert rep.C1_fit == pytest.approx(c1, abs=1e-12)
    assert rep.C2_fit == pytest.approx(c2, abs=1e-12)


@given(st.floats(0.5, 2.0), st.floats(0.5, 2.0))
def test_expsum_brute_agreement_over_parameters(a, c):
    space = space_from_coords(np.linspace(0, 1, 8)[:, None])
    system = build_dyadic(build_nets(space, 0.5), space)
    rep = verify_expsum(system, a=a, c=c)
    c1, c2 = brute_expsum(system, a=a, c=c)
    assert rep.C1_fit == pytest.approx(c1, abs=1e-12)
    assert rep.C2_fit == pytest.approx(c2, abs=1e-12)


def test_refinement_cells_partition_each_cube(system16):
    for j0 in (1, 2):
        ref = refine_subcubes(system16, j0)
        for k in sorted(ref.cells):
            # every point lands in exactly one cell of the level
            counts = np.zeros(system16.space.n, dtype=int)
            for _, cell_members, _ in ref.cells[k]:
                counts[cell_members] += 1
            assert np.all(counts == 1)


def test_refinement_cells_are_descendants(system16):
    ref = refine_subcubes(system16, 2)
    for k in sorted(ref.cells):
        fine = k + 2
        for sub_center, cell_members, pick in ref.cells[k]:
            expect = system16.cube_members(fine, sub_center)
            assert np.array_equal(np.sort(cell_members), np.sort(expect))
            assert pick in cell_members


def test_refinement_sampler_choices(system16):
    center = refine_subcubes(system16, 1, sampler="center")
    for k in sorted(center.cells):
        for sub_center, _, pick in center.cells[k]:
            assert pick == sub_center
    worst = refine_subcubes(system16, 1, sampler="worst-case")
    rand = refine_subcubes(system16, 1, sampler="random", seed=4)
    rand2 = refine_subcubes(system16, 1, sampler="random", seed=4)
    for k in sorted(worst.cells):
        for (_, members, pick), (_, _, pick2), (_, _, pick3) in zip(
            worst.cells[k], rand.cells[k], rand2.cells[k]
        ):
            assert pick in members
            assert pick2 == pick3  # seeded sampling is reproducible
    with pytest.raises(ValueError):
        refine_subcubes(system16, 1, sampler="nope")


def test_refinement_depth_limited_by_built_levels(system8):
    too_deep = (system8.net.k_max - system8.net.k_min) + 1
    with pytest.raises(NetConstructionError):
        refine_subcubes(system8, too_deep,
                        levels=[system8.net.k_min + 1])


def test_refinement_strict_depth_check(system8):
    # strict mode enforces the admissibility inequality on delta^j0
    with pytest.raises(NetConstructionError):
        refine_subcubes(system8, 1, strict=True, levels=[system8.net.k_min])
    refine_subcubes(system8, 4, strict=True, levels=[system8.net.k_min])


def test_system_serialization_round_trip(tmp_path, grid8, system8):
    path = str(tmp_path / "system.json")
    system8.save(path)
    back = load_dyadic(path, grid8)
    assert back.levels == system8.levels
    for k in system8.levels:
        assert np.array_equal(back.assign[k], system8.assign[k])
        assert np.array_equal(back.net.centers[k], system8.net.centers[k])
    doc = json.load(open(path))
    doc["format"] = 2
    path2 = str(tmp_path / "v2.json")
    json.dump(doc, open(path2, "w"))
    with pytest.raises(NetConstructionError):
        load_dyadic(path2, grid8)
