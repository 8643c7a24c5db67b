"""Nested nets, dyadic cube systems, subcube refinements, and scale-sum bounds.

Levels are indexed by integers k with scale delta^k (delta in (0,1)), coarse to
fine. Nets are greedy farthest-point subsets seeded by the coarser level, so
center sets are nested by construction. Cubes assign each point to a center,
top-down, forcing children to live inside their parent cube.
"""

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .reporting import canonical_json


class NetConstructionError(ValueError):
    """Strict-mode geometry hypothesis or invariant violation."""


def _level_bounds(space, delta):
    """Auto level range: coarsest scale covering the diameter, finest above
    half the minimal positive distance."""
    diam = space.diameter
    dmin = space.min_positive_distance()
    if diam <= 0 or dmin <= 0:
        return 0, 0
    k_min = int(math.floor(math.log(diam) / math.log(delta)))
    while delta**k_min < diam:
        k_min -= 1
    while delta ** (k_min + 1) >= diam:
        k_min += 1
    k_max = int(math.floor(math.log(dmin / 2.0) / math.log(delta)))
    while delta**k_max < dmin / 2.0:
        k_max -= 1
    while delta ** (k_max + 1) >= dmin / 2.0:
        k_max += 1
    return k_min, max(k_min, k_max)


@dataclass
class NetHierarchy:
    """Nested center sets per level, with separation/covering diagnostics."""

    delta: float
    c0: float
    C0: float
    k_min: int
    k_max: int  # finest built level
    k_op_max: int  # finest level meant for operator ladders
    centers: dict  # k -> sorted array of point indices
    separation_fit: dict = field(default_factory=dict)  # k -> min pair dist / delta^k
    covering_fit: dict = field(default_factory=dict)  # k -> max net dist / delta^k

    def scale(self, k):
        return self.delta**k

    @property
    def levels(self):
        return list(range(self.k_min, self.k_max + 1))


def build_nets(space, delta, k_range=None, c0=1.0, C0=1.0, strict=False, depth_pad=4):
    """Greedy farthest-point nets, coarse to fine, each level seeding the next.

    A point joins the level-k net while its distance to the net exceeds
    C0*delta^k, farthest first (ties to the smallest point index). Separation
    and covering are verified per level; strict mode also requires the
    hypothesis 12*A0^3*C0*delta <= c0 and errors on violations instead of
    recording fitted constants.
    """
    if not 0.0 < delta < 1.0:
        raise NetConstructionError("delta must be in (0,1)")
    if space.n == 0:
        raise NetConstructionError("empty space")
    if strict and 12.0 * space.A0**3 * C0 * delta > c0:
        raise NetConstructionError(
            f"strict geometry needs 12*A0^3*C0*delta <= c0, got "
            f"{12.0 * space.A0 ** 3 * C0 * delta:.6g} > {c0:.6g}"
        )
    if k_range is None:
        k_min, k_op_max = _level_bounds(space, delta)
        k_max = k_op_max + max(0, depth_pad)
    else:
        k_min, k_max = int(k_range[0]), int(k_range[1])
        if k_max < k_min:
            raise NetConstructionError("empty level range")
        k_op_max = k_max

    d = space.d
    centers = {}
    sep_fit, cov_fit = {}, {}
    current = []
    mind = np.full(space.n, np.inf)
    for k in range(k_min, k_max + 1):
        threshold = C0 * delta**k
        if not current:
            current.append(0)
            mind = d[:, 0].copy()
        while True:
            cand = int(np.argmax(mind))  # argmax takes the smallest index on ties
            if mind[cand] <= threshold:
                break
            current.append(cand)
            np.minimum(mind, d[:, cand], out=mind)
        idx = np.array(sorted(current), dtype=int)
        centers[k] = idx
        cov = float(mind.max())
        cov_fit[k] = cov / delta**k
        if len(idx) > 1:
            sub = d[np.ix_(idx, idx)].copy()
            np.fill_diagonal(sub, np.inf)
            sep = float(sub.min())
        else:
            sep = math.inf
        sep_fit[k] = sep / delta**k
        if strict:
            if sep < c0 * delta**k:
                raise NetConstructionError(f"separation below c0*delta^k at level {k}")
            if cov > C0 * delta**k:
                raise NetConstructionError(f"covering above C0*delta^k at level {k}")
    return NetHierarchy(delta, c0, C0, k_min, k_max, k_op_max, centers, sep_fit, cov_fit)


@dataclass
class DyadicSystem:
    """Cube tree over a net hierarchy: assignments, parents, and new centers."""

    space: object
    net: NetHierarchy
    assign: dict  # k -> array (n,) of center point indices
    new_centers: dict  # k -> sorted array of centers in level k+1 but not k
    c_natural: float
    C_natural: float
    sandwich_inner_fit: float = math.inf  # min over cubes of (nearest outsider)/delta^k
    sandwich_outer_fit: float = 0.0  # max over cubes of (farthest member)/delta^k

    @property
    def delta(self):
        return self.net.delta

    @property
    def levels(self):
        return self.net.levels

    def scale(self, k):
        return self.net.scale(k)

    def cube_members(self, k, center):
        return np.flatnonzero(self.assign[k] == center)

    def cubes_at(self, k):
        """Center indices owning at least one point at level k."""
        return self.net.centers[k]

    def parent_center(self, k, center):
        """Center of the level-(k-1) cube containing this level-k cube."""
        return int(self.assign[k - 1][center])

    def children_centers(self, k, center):
        """Level-(k+1) centers whose cubes partition this level-k cube."""
        nxt = self.net.centers[k + 1]
        return nxt[self.assign[k][nxt] == center]

    def new_center_distances(self, k):
        """d(x, Y^k) for every x; +inf sentinel when level k gained no centers."""
        ys = self.new_centers.get(k)
        if ys is None or len(ys) == 0:
            return np.full(self.space.n, np.inf)
        return self.space.d[:, ys].min(axis=1)

    def to_json_dict(self):
        ids = self.space.ids
        levels = []
        for k in self.levels:
            levels.append(
                {
                    "k": k,
                    "centers": [ids[c] for c in self.net.centers[k]],
                    "assign": [ids[c] for c in self.assign[k]],
                }
            )
        return {
            "format": 1,
            "delta": self.delta,
            "k_range": [self.net.k_min, self.net.k_max],
            "k_op_max": self.net.k_op_max,
            "constants": {
                "c0": self.net.c0,
                "C0": self.net.C0,
                "c_natural": self.c_natural,
                "C_natural": self.C_natural,
                "A0": self.space.A0,
            },
            "levels": levels,
        }

    def save(self, path):
        with open(path, "w") as fh:
            fh.write(canonical_json(self.to_json_dict()))
            fh.write("\n")


def build_dyadic(net, space, strict=False):
    """Assign points to cubes top-down and verify partition/nesting/sandwich.

    At the coarsest level every point takes its nearest center (ties to the
    smallest center index). Below that, a point may only choose among the
    children of its current cube, which makes nesting exact by construction.
    """
    d = space.d
    assign = {}
    prev = None
    for k in net.levels:
        cs = net.centers[k]
        dm = d[:, cs]
        if prev is None:
            choice = np.argmin(dm, axis=1)  # first minimum = smallest center index
        else:
            allowed = prev[cs][None, :] == prev[:, None]
            masked = np.where(allowed, dm, np.inf)
            choice = np.argmin(masked, axis=1)
        assign[k] = cs[choice]
        prev = assign[k]

    new_centers = {}
    for k in net.levels[:-1]:
        cur = set(net.centers[k].tolist())
        new_centers[k] = np.array(
            [c for c in net.centers[k + 1] if c not in cur], dtype=int
        )

    c_nat = net.c0 / (3.0 * space.A0**2)
    C_nat = 2.0 * space.A0 * net.C0
    system = DyadicSystem(space, net, assign, new_centers, c_nat, C_nat)

    inner = math.inf
    outer = 0.0
    for k in net.levels:
        scale = net.scale(k)
        for c in net.centers[k]:
            members = system.cube_members(k, c)
            dists = d[c, members]
            outer = max(outer, float(dists.max()) / scale)
            outside = np.setdiff1d(np.arange(space.n), members, assume_unique=False)
            if outside.size:
                inner = min(inner, float(d[c, outside].min()) / scale)
        if strict:
            if outer >= C_nat:
                raise NetConstructionError(
                    f"cube at level {k} escapes the outer sandwich ball"
                )
            if inner < c_nat:
                raise NetConstructionError(
                    f"inner sandwich ball leaks out of a cube at level {k}"
                )
    system.sandwich_inner_fit = inner
    system.sandwich_outer_fit = outer
    return system


def dist_to_new_centers(system, x, k):
    """d(x, Y^k) with a +inf sentinel when level k introduced no new centers."""
    i = system.space.index(x)
    return float(system.new_center_distances(k)[i])


def verify_dyadic_invariants(system):
    """Exhaustive partition / nesting / per-level measure checks; returns dict."""
    space, net = system.space, system.net
    ok_partition = True
    measure_gap = 0.0
    for k in net.levels:
        total = 0.0
        seen = np.zeros(space.n, dtype=bool)
        for c in net.centers[k]:
            members = system.cube_members(k, c)
            if np.any(seen[members]):
                ok_partition = False
            seen[members] = True
            total += float(space.w[members].sum())
        if not np.all(seen):
            ok_partition = False
        measure_gap = max(measure_gap, abs(total - space.total_measure))
    ok_nesting = True
    for k in net.levels[1:]:
        # the chain map must send each point's cube into its parent cube
        parents = system.assign[k - 1]
        if not np.all(parents[system.assign[k]] == parents):
            ok_nesting = False
    return {
        "partition": ok_partition,
        "nesting": ok_nesting,
        "measure_gap": measure_gap,
        "sandwich_inner_fit": system.sandwich_inner_fit,
        "sandwich_outer_fit": system.sandwich_outer_fit,
        "c_natural": system.c_natural,
        "C_natural": system.C_natural,
    }


@dataclass
class SubcubeRefinement:
    """Descendant cells j0 levels down, with one sampled point per cell."""

    system: object
    j0: int
    sampler: str
    seed: int
    # k -> list of cells (sub_center, member indices array, sampled index)
    cells: dict = field(default_factory=dict)
    max_cells_per_cube: int = 0

    def level_cells(self, k):
        return self.cells[k]


def refine_subcubes(system, j0, sampler="center", seed=0, levels=None, strict=False,
                    max_cells=None):
    """Split each level-k cube into its level-(k+j0) descendants and pick a
    sample point per cell: the cell center, a measure-weighted random draw, or
    the farthest member from the cell center (worst case)."""
    if j0 < 0:
        raise ValueError("j0 must be >= 0")
    if sampler not in ("center", "random", "worst-case"):
        raise ValueError(f"unknown sampler {sampler!r}")
    net = system.net
    if levels is None:
        levels = [k for k in net.levels if k + j0 <= net.k_max]
    else:
        for k in levels:
            if k + j0 > net.k_max:
                raise NetConstructionError(
                    f"refining level {k} by j0={j0} exceeds the built depth {net.k_max}"
                )
    if strict:
        lhs = system.delta**j0
        rhs = (2.0 * system.space.A0) ** (-4) * system.C_natural
        if lhs > rhs:
            raise NetConstructionError(
                f"refinement depth too shallow: delta^j0={lhs:.6g} > {rhs:.6g}"
            )
    rng = np.random.default_rng(seed)
    space = system.space
    cells = {}
    max_n = 0
    for k in levels:
        fine = k + j0
        out = []
        for c in system.cubes_at(k):
            members = system.cube_members(k, c)
            subs = [c]
            for step in range(j0):
                nxt = []
                for s in subs:
                    nxt.extend(system.children_centers(k + step, s).tolist())
                subs = sorted(nxt)
            max_n = max(max_n, len(subs))
            if max_cells is not None and len(subs) > max_cells:
                raise NetConstructionError(
                    f"cube at level {k} split into {len(subs)} cells > bound {max_cells}"
                )
            got = 0
            for s in subs:
                sub_members = system.cube_members(fine, s)
                got += sub_members.size
                if sampler == "center":
                    y = int(s)
                elif sampler == "random":
                    probs = space.w[sub_members] / space.w[sub_members].sum()
                    y = int(rng.choice(sub_members, p=probs))
                else:
                    far = np.argmax(space.d[s, sub_members])
                    y = int(sub_members[far])
                out.append((int(s), sub_members, y))
            if got != members.size:
                raise NetConstructionError("descendant cells fail to cover their cube")
        cells[k] = out
    ref = SubcubeRefinement(system, j0, sampler, seed, cells, max_n)
    return ref


@dataclass
class ExpSumFit:
    """Fitted constants for the two scale-sum bounds against 1/V_r and 1/V(x,y)."""

    C1_fit: float
    C2_fit: float
    witness1: tuple
    witness2: tuple
    census: dict


def verify_expsum(system, a=1.0, c=1.0, sample_seed=0, max_points=None):
    """Bound the level sums of exp-decay terms by inverse ball volumes.

    S1(x,r) sums 1/V_{delta^k}(x) * exp(-c (d(x,Y^k)/delta^k)^a) over scales
    delta^k >= r; S2(x,y) adds the factor exp(-c (d(x,y)/delta^k)^a) and runs
    over every built level. Reports sup S1*V_r and sup S2*V(x,y).
    """
    space, net = system.space, system.net
    levels = net.levels
    if len(levels) < 2:
        raise ValueError("scale-sum audit needs at least two levels")
    n = space.n
    if max_points is None:
        pts = np.arange(n) if n <= 128 else np.random.default_rng(sample_seed).integers(
            0, n, size=128
        )
    else:
        pts = np.arange(min(n, max_points))

    scales = np.array([net.scale(k) for k in levels])
    # per-level base terms t[k, x] = exp(-c (d(x,Y^k)/delta^k)^a) / V_{delta^k}(x)
    base = np.zeros((len(levels), n))
    for li, k in enumerate(levels):
        dy = system.new_center_distances(k)
        vol = space.ball_volumes(net.scale(k))
        with np.errstate(over="ignore"):
            decay = np.where(np.isfinite(dy), np.exp(-c * (dy / net.scale(k)) ** a), 0.0)
        base[li] = decay / vol
    prefix = np.cumsum(base, axis=0)

    C1, w1 = 0.0, ()
    for i in pts:
        radii = space._dsort[i] + space.radius_eps()
        for r in radii:
            qual = np.flatnonzero(scales >= r)
            if qual.size == 0:
                continue
            s1 = prefix[qual[-1], i]
            val = s1 * space.ball_volume(i, r)
            if val > C1:
                C1, w1 = float(val), (space.ids[i], float(r))

    V = space.pair_volumes()
    C2, w2 = 0.0, ()
    S2 = np.zeros((n, n))
    for li, k in enumerate(levels):
        with np.errstate(over="ignore"):
            S2 += base[li][:, None] * np.exp(-c * (space.d / net.scale(k)) ** a)
    off = ~np.eye(n, dtype=bool)
    prod = S2 * V
    m = float(prod[off].max())
    xi, yi = np.unravel_index(np.argmax(np.where(off, prod, -np.inf)), prod.shape)
    C2, w2 = m, (space.ids[xi], space.ids[yi])
    return ExpSumFit(
        C1, C2, w1, w2,
        {"a": a, "c": c, "levels": levels, "points": int(len(pts)), "seed": sample_seed},
    )


def load_dyadic(path, space):
    """Rebuild a system from its JSON serialization against the same space."""
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("format") != 1:
        raise NetConstructionError("unknown dyadic serialization format")
    ix = {pid: i for i, pid in enumerate(space.ids)}
    k_min, k_max = doc["k_range"]
    consts = doc["constants"]
    centers, assign = {}, {}
    for lv in doc["levels"]:
        k = lv["k"]
        centers[k] = np.array(sorted(ix[c] for c in lv["centers"]), dtype=int)
        assign[k] = np.array([ix[c] for c in lv["assign"]], dtype=int)
    net = NetHierarchy(
        doc["delta"], consts["c0"], consts["C0"], k_min, k_max,
        doc.get("k_op_max", k_max), centers,
    )
    new_centers = {}
    for k in net.levels[:-1]:
        cur = set(net.centers[k].tolist())
        new_centers[k] = np.array(
            [c for c in net.centers[k + 1] if c not in cur], dtype=int
        )
    system = DyadicSystem(
        space, net, assign, new_centers, consts["c_natural"], consts["C_natural"]
    )
    return system
