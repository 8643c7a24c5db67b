"""Finite quasi-metric measure spaces.

A space is a finite point set with a symmetric quasi-metric d (strict triangle
factor A0) and strictly positive point weights acting as the measure. Balls use
the strict inequality d(y,x) < r. Everything downstream (nets, cubes, operator
families) consumes this object.
"""

import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

# audits enumerate everything up to this size, then fall back to seeded samples
EXHAUSTIVE_LIMIT = 128
SAMPLE_BUDGET = 100_000


class SpaceFormatError(ValueError):
    """Malformed space file or inconsistent metric data."""


class FinitePointSpace:
    """Point ids, pairwise distances, weights, and a declared quasi-triangle constant."""

    def __init__(self, point_ids, dist, weights, A0=1.0, coords=None):
        self.ids = list(point_ids)
        self.n = len(self.ids)
        if self.n == 0:
            raise SpaceFormatError("empty space")
        if len(set(map(repr, self.ids))) != self.n:
            raise SpaceFormatError("point ids must be distinct")
        self.d = np.array(dist, dtype=float)
        if self.d.shape != (self.n, self.n):
            raise SpaceFormatError(f"distance matrix must be {self.n}x{self.n}")
        if not np.all(np.isfinite(self.d)) or np.any(self.d < 0):
            raise SpaceFormatError("distances must be finite and nonnegative")
        if np.any(np.abs(self.d - self.d.T) > 0):
            raise SpaceFormatError("asymmetric explicit metric")
        if np.any(np.diag(self.d) != 0):
            raise SpaceFormatError("nonzero diagonal distance")
        off = self.d + np.eye(self.n) * (1.0 + self.d.max())
        if np.any(off == 0):
            i, j = np.argwhere(off == 0)[0]
            raise SpaceFormatError(
                f"zero distance between distinct points {self.ids[i]!r}, {self.ids[j]!r}"
            )
        self.w = np.array(weights, dtype=float)
        if self.w.shape != (self.n,):
            raise SpaceFormatError("weights must match the point count")
        if not np.all(self.w > 0) or not np.all(np.isfinite(self.w)):
            raise SpaceFormatError("nonpositive weight")
        self.A0 = float(A0)
        if self.A0 < 1.0:
            raise SpaceFormatError("A0 must be >= 1")
        self.coords = None if coords is None else np.array(coords, dtype=float)
        self._ix = {pid: i for i, pid in enumerate(self.ids)}

        # per-row sorted distances with weight prefix sums; V_r lookups are
        # searchsorted against these, so ball volumes cost O(log n) per query
        self._order = np.argsort(self.d, axis=1, kind="stable")
        self._dsort = np.take_along_axis(self.d, self._order, axis=1)
        cw = np.cumsum(self.w[self._order], axis=1)
        self._cumw = np.concatenate([np.zeros((self.n, 1)), cw], axis=1)

    # -- basic accessors -------------------------------------------------

    def index(self, x):
        """Resolve a point id (or an in-range integer index) to an index."""
        if x in self._ix:
            return self._ix[x]
        if isinstance(x, (int, np.integer)) and 0 <= x < self.n:
            return int(x)
        raise KeyError(f"unknown point id {x!r}")

    @property
    def total_measure(self):
        return float(np.sum(self.w))

    @property
    def diameter(self):
        return float(self.d.max())

    def min_positive_distance(self):
        if self.n == 1:
            return 0.0
        off = self.d[~np.eye(self.n, dtype=bool)]
        return float(off.min())

    def radius_eps(self):
        """Half the minimal positive distance; 1.0 on a one-point space."""
        m = self.min_positive_distance()
        return 0.5 * m if m > 0 else 1.0

    # -- balls and volumes -----------------------------------------------

    def ball(self, x, r):
        """Indices of the open ball {y : d(y,x) < r}."""
        if r <= 0:
            raise ValueError("ball radius must be positive")
        i = self.index(x)
        return np.flatnonzero(self.d[i] < r)

    def ball_volume(self, x, r):
        """V_r(x) = mu(B(x,r)), strict inequality."""
        i = self.index(x)
        k = np.searchsorted(self._dsort[i], r, side="left")
        return float(self._cumw[i, k])

    def ball_volumes(self, r):
        """V_r(x) for every x at a common radius r, as an array."""
        k = np.array([np.searchsorted(self._dsort[i], r, side="left") for i in range(self.n)])
        return self._cumw[np.arange(self.n), k]

    def volume_to(self, x, y):
        """V(x,y) = mu(B(x, d(x,y))); zero when x == y (empty open ball)."""
        i, j = self.index(x), self.index(y)
        return self.ball_volume(i, self.d[i, j]) if i != j else 0.0

    def pair_volumes(self):
        """Matrix V[i,j] = mu(B(i, d(i,j))); diagonal is zero."""
        V = np.empty((self.n, self.n))
        for i in range(self.n):
            k = np.searchsorted(self._dsort[i], self.d[i], side="left")
            V[i] = self._cumw[i, k]
        return V

    def row_volumes(self, i, radii):
        """V_r(i) for an array of radii r."""
        k = np.searchsorted(self._dsort[i], radii, side="left")
        return self._cumw[i, k]


# -- construction -------------------------------------------------------


def space_from_coords(coords, weights=None, A0=1.0, rho=None, point_ids=None):
    """Build a space from coordinates with the Euclidean metric, optionally powered."""
    coords = np.atleast_2d(np.array(coords, dtype=float))
    if coords.ndim != 2:
        raise SpaceFormatError("coords must be vectors")
    n = coords.shape[0]
    diff = coords[:, None, :] - coords[None, :, :]
    d = np.sqrt(np.sum(diff * diff, axis=2))
    d = 0.5 * (d + d.T)
    np.fill_diagonal(d, 0.0)
    if rho is not None:
        if rho <= 0:
            raise SpaceFormatError("metric power rho must be positive")
        d = d**rho
    if weights is None:
        weights = np.ones(n)
    if point_ids is None:
        point_ids = list(range(n))
    return FinitePointSpace(point_ids, d, weights, A0=A0, coords=coords)


def load_space(path):
    """Load a space file: JSON with points, weights, metric spec, and A0.

    The metric is either {"type": "euclidean"}, {"type": "power", "rho": p}
    (both need coordinate points), or {"type": "explicit", "matrix_file": f}
    referencing an n*n row-major little-endian binary64 file.
    """
    try:
        with open(path) as fh:
            spec = json.load(fh)
    except OSError as exc:
        raise SpaceFormatError(f"cannot read space file: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise SpaceFormatError(f"malformed space file: {exc}") from exc
    try:
        points = spec["points"]
        metric = spec["metric"]
    except (KeyError, TypeError) as exc:
        raise SpaceFormatError(f"space file missing field: {exc}") from exc
    if not isinstance(points, list) or not points:
        raise SpaceFormatError("points must be a nonempty list")
    n = len(points)
    weights = spec.get("weights", [1.0] * n)
    if len(weights) != n:
        raise SpaceFormatError("weights length differs from point count")
    A0 = float(spec.get("A0", 1.0))
    ids = spec.get("ids", list(range(n)))

    mtype = metric.get("type")
    if mtype in ("euclidean", "power"):
        if not isinstance(points[0], (list, tuple, int, float)):
            raise SpaceFormatError("formula metrics need coordinate points")
        coords = [[p] if isinstance(p, (int, float)) else list(p) for p in points]
        rho = float(metric["rho"]) if mtype == "power" else None
        return space_from_coords(coords, weights, A0=A0, rho=rho, point_ids=ids)
    if mtype == "explicit":
        mfile = metric.get("matrix_file")
        if not mfile:
            raise SpaceFormatError("explicit metric needs matrix_file")
        mpath = os.path.join(os.path.dirname(os.path.abspath(path)), mfile)
        try:
            raw = np.fromfile(mpath, dtype="<f8")
        except OSError as exc:
            raise SpaceFormatError(f"cannot read matrix file: {exc}") from exc
        if raw.size != n * n:
            raise SpaceFormatError(f"matrix file holds {raw.size} values, expected {n * n}")
        coords = None
        if isinstance(points[0], (list, tuple, int, float)):
            coords = [[p] if isinstance(p, (int, float)) else list(p) for p in points]
        return FinitePointSpace(ids, raw.reshape(n, n), weights, A0=A0, coords=coords)
    raise SpaceFormatError(f"unknown metric type {mtype!r}")


# -- audits --------------------------------------------------------------


@dataclass
class QuasiMetricAudit:
    A0_fit: float
    declared_A0: float
    within_declared: bool
    worst_triple: tuple
    samples: int
    exhaustive: bool


def quasi_metric_audit(space, sample_seed=0, triple_count=SAMPLE_BUDGET):
    """Fit the quasi-triangle constant: max d(x,z) / (d(x,y) + d(y,z))."""
    if triple_count < 1:
        raise ValueError("triple_count must be >= 1")
    n, d = space.n, space.d
    if n == 1:
        return QuasiMetricAudit(1.0, space.A0, True, (space.ids[0],) * 3, 1, True)
    best, worst = 0.0, (space.ids[0],) * 3
    if n <= EXHAUSTIVE_LIMIT:
        for y in range(n):
            denom = d[:, y][:, None] + d[y, :][None, :]
            with np.errstate(invalid="ignore", divide="ignore"):
                ratio = np.where(denom > 0, d / denom, 0.0)
            m = float(ratio.max())
            if m > best:
                x, z = np.unravel_index(np.argmax(ratio), ratio.shape)
                best, worst = m, (space.ids[x], space.ids[y], space.ids[z])
        return QuasiMetricAudit(max(best, 1.0), space.A0, max(best, 1.0) <= space.A0 + 1e-12,
                                worst, n**3, True)
    rng = np.random.default_rng(sample_seed)
    xs, ys, zs = rng.integers(0, n, size=(3, triple_count))
    denom = d[xs, ys] + d[ys, zs]
    ok = denom > 0
    ratio = np.zeros(triple_count)
    ratio[ok] = d[xs[ok], zs[ok]] / denom[ok]
    i = int(np.argmax(ratio))
    best = float(ratio[i])
    worst = (space.ids[xs[i]], space.ids[ys[i]], space.ids[zs[i]])
    return QuasiMetricAudit(max(best, 1.0), space.A0, max(best, 1.0) <= space.A0 + 1e-12,
                            worst, triple_count, False)


@dataclass
class DoublingAudit:
    C_mu_fit: float
    omega_fit: float
    worst_witness: tuple
    samples: int
    exhaustive: bool
    scaling_residual: float = 0.0  # sup over lambda in {2,4,8} of mu(lam B)/(lam^omega mu(B))


def _audit_radii(space, i):
    # realized distances from i, shifted up by eps so each realized ball appears
    return space._dsort[i] + space.radius_eps()


def doubling_audit(space, sample_seed=0, pair_count=SAMPLE_BUDGET):
    """Fit the doubling constant sup mu(B(x,2r))/mu(B(x,r)) over realized radii."""
    if pair_count < 1:
        raise ValueError("pair_count must be >= 1")
    n = space.n
    best, witness = 1.0, (space.ids[0], space.radius_eps(), 2)
    if n <= EXHAUSTIVE_LIMIT:
        rows = range(n)
        per_row = None
    else:
        rng = np.random.default_rng(sample_seed)
        rows = rng.integers(0, n, size=pair_count)
        per_row = rng.integers(0, n, size=pair_count)
    ratios_all = []
    lam_entries = []
    for t, i in enumerate(rows):
        radii = _audit_radii(space, i)
        if per_row is not None:
            radii = radii[per_row[t] : per_row[t] + 1]
        v1 = space.row_volumes(i, radii)
        v2 = space.row_volumes(i, 2.0 * radii)
        ratio = v2 / v1
        j = int(np.argmax(ratio))
        if ratio[j] > best:
            best = float(ratio[j])
            witness = (space.ids[i], float(radii[j]), 2)
        ratios_all.append(ratio)
        lam_entries.append((i, radii, v1))
    omega = math.log2(best) if best > 1.0 else 0.0
    resid = 0.0
    for i, radii, v1 in lam_entries:
        for lam in (2.0, 4.0, 8.0):
            vl = space.row_volumes(i, lam * radii)
            resid = max(resid, float(np.max(vl / (lam**omega * v1))))
    samples = n * n if per_row is None else len(lam_entries)
    return DoublingAudit(best, omega, witness, samples, per_row is None, resid)


@dataclass
class GeometryReport:
    """Fitted constants for the volume-comparison bounds and the kernel-sum bounds."""

    volume_swap_fit: float  # sup V(x,y)/V(y,x)
    ball_chain_upper: float  # sup [V_r(x)+V(x,y)] / mu(B(x, r+d(x,y)))
    ball_chain_lower: float  # sup of the reciprocal
    avg_kernel_fit: float  # sup over (x1,r,gamma) of the decay-kernel total mass
    near_sum_fit: float  # sup over (x,R,beta) of the inside-ball inverse-volume sum
    far_sum_fit: float  # sup over (x,R,beta) of the outside-ball inverse-volume sum
    tail_sum_fit: float  # sup over (x1,r,R,gamma) of tail mass / (r/(r+R))^gamma
    census: dict = field(default_factory=dict)


def geometry_equivalence_audit(space, sample_seed=0, exponents=(0.5, 1.0, 2.0)):
    """Evaluate the ball-volume equivalences and integral bounds as finite sums."""
    n, d, w = space.n, space.d, space.w
    if n < 2:
        raise ValueError("geometry audit needs n >= 2")
    V = space.pair_volumes()
    offdiag = ~np.eye(n, dtype=bool)

    swap = float(np.max(V[offdiag] / V.T[offdiag]))

    if n <= EXHAUSTIVE_LIMIT:
        xs = np.arange(n)
    else:
        rng = np.random.default_rng(sample_seed)
        xs = rng.integers(0, n, size=64)
    # radius loops quadruple the work, so thin them deterministically past n=64
    stride = max(1, n // 64) if n <= 64 else max(1, n // 16)

    chain_hi = chain_lo = 0.0
    avg_fit = near_fit = far_fit = tail_fit = 0.0
    for i in xs:
        radii = _audit_radii(space, i)[::stride]
        # chain: V_r(x)+V(x,y) vs mu(B(x, r+d(x,y))) over all y != x
        for r in radii:
            vr = space.ball_volume(i, r)
            lhs = vr + V[i]
            rhs = space.row_volumes(i, r + d[i])
            mask = offdiag[i]
            chain_hi = max(chain_hi, float(np.max(lhs[mask] / rhs[mask])))
            chain_lo = max(chain_lo, float(np.max(rhs[mask] / lhs[mask])))
            for g in exponents:
                total = float(np.sum(w / (vr + V[i]) * (r / (r + d[i])) ** g))
                avg_fit = max(avg_fit, total)
                # tail mass outside radius R, normalized by (r/(r+R))^gamma
                for R in radii:
                    far = d[i] >= R
                    t = float(np.sum(w[far] / (vr + V[i][far]) * (r / (r + d[i][far])) ** g))
                    tail_fit = max(tail_fit, t / (r / (r + R)) ** g)
        for R in radii:
            near = offdiag[i] & (d[i] <= R)
            far = offdiag[i] & (d[i] >= R)
            for b in exponents:
                if near.any():
                    near_fit = max(
                        near_fit, float(np.sum(w[near] / V[i][near] * (d[i][near] / R) ** b))
                    )
                if far.any():
                    far_fit = max(
                        far_fit, float(np.sum(w[far] / V[i][far] * (R / d[i][far]) ** b))
                    )
    census = {"points": len(xs), "radii_per_point": int(math.ceil(n / stride)),
              "exponents": list(exponents),
              "exhaustive": bool(n <= EXHAUSTIVE_LIMIT), "seed": sample_seed}
    return GeometryReport(swap, chain_hi, chain_lo, avg_fit, near_fit, far_fit, tail_fit, census)


# -- function-level operations ------------------------------------------


def maximal_operator(space, f):
    """Centered maximal function over the realized radius set; Mf >= |f| pointwise."""
    f = np.asarray(f, dtype=float)
    if f.shape != (space.n,):
        raise ValueError("function length differs from point count")
    af = np.abs(f)
    eps = space.radius_eps()
    out = np.empty(space.n)
    for i in range(space.n):
        order = space._order[i]
        cum_fw = np.concatenate([[0.0], np.cumsum((af * space.w)[order])])
        radii = space._dsort[i] + eps
        k = np.searchsorted(space._dsort[i], radii, side="left")
        out[i] = np.max(cum_fw[k] / space._cumw[i, k])
    return out


def lp_norm(space, f, p):
    """Weighted p-norm; p = inf gives the max of |f|."""
    f = np.asarray(f, dtype=float)
    if p == math.inf:
        return float(np.max(np.abs(f))) if f.size else 0.0
    if not p > 0:
        raise ValueError("p must be positive")
    return float(np.sum(np.abs(f) ** p * space.w) ** (1.0 / p))
