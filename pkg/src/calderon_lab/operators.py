"""Averaging and detail operator ladders over a dyadic system.

Kernel convention throughout: an operator with kernel K acts by
(Tf)(x) = sum_y K(x,y) f(y) w_y, so the identity operator has kernel
diag(1/w), composition is K1 @ diag(w) @ K2, and conditional expectation on a
cube has the constant kernel 1/mu(Q) on the cube square.

A family is a ladder of detail kernels indexed by level labels. Homogeneous
families telescope between the global mean projector and the identity, so the
labels are dyadic levels and the kernel sum is exactly identity minus mean.
Inhomogeneous families keep the coarsest averaging as level 0 and sum to the
identity.
"""

import json
import math
import os
import warnings
from dataclasses import dataclass, field

import numpy as np

from .reporting import EstimateReport, canonical_json


def matmulw(space, A, B):
    return A @ (space.w[:, None] * B)


def apply_kernel(space, K, f):
    return K @ (space.w * np.asarray(f, dtype=float))


def identity_kernel(space):
    return np.diag(1.0 / space.w)


def mean_projector(space):
    return np.full((space.n, space.n), 1.0 / space.total_measure)


@dataclass
class OperatorFamily:
    """Detail kernels Q by level label, plus the averaging ladder they came from."""

    mode: str  # "homogeneous" | "inhomogeneous"
    provenance: str  # "haar" | "smoothed"
    delta: float
    levels: list  # ordered labels
    dyadic_levels: dict  # label -> dyadic level whose scale the kernel lives at
    Q: dict  # label -> (n, n) kernel
    P: dict = field(default_factory=dict)  # dyadic level -> averaging kernel
    params: dict = field(default_factory=dict)

    @property
    def n(self):
        return self.Q[self.levels[0]].shape[0]

    def scale(self, label):
        return self.delta ** self.dyadic_levels[label]

    def scales(self):
        return {l: self.scale(l) for l in self.levels}

    def sum_kernel(self):
        return sum(self.Q[l] for l in self.levels)

    def row_target(self, label):
        """Weighted row-sum every kernel must hit: averaging rows integrate to
        one, detail rows to zero."""
        if self.mode == "inhomogeneous" and label == self.levels[0]:
            return 1.0
        return 0.0


def build_haar_ladder(system):
    """Conditional expectations onto the cubes of each operator level."""
    space = system.space
    net = system.net
    P = {}
    for k in range(net.k_min, net.k_op_max + 1):
        A = np.zeros((space.n, space.n))
        for c in system.cubes_at(k):
            m = system.cube_members(k, c)
            A[np.ix_(m, m)] = 1.0 / space.w[m].sum()
        P[k] = A
    return P


def _sinkhorn_normalize(space, H, tol, max_iter):
    """Symmetric scaling u H u with unit weighted row sums.

    The damped square-root update keeps the scaling symmetric; positive
    diagonals guarantee convergence on these kernels.
    """
    w = space.w
    u = 1.0 / (H @ w)
    for it in range(max_iter):
        s = H @ (u * w)
        resid = float(np.abs(u * s - 1.0).max())
        if resid <= tol:
            return u[:, None] * H * u[None, :], it, resid
        u = np.sqrt(u / s)
    warnings.warn(
        f"scale normalization stalled at residual {resid:.3g}; using raw kernel",
        RuntimeWarning,
    )
    return u[:, None] * H * u[None, :], max_iter, resid


def build_smoothed_ladder(system, nu=1.0, a=1.0, tol=1e-13, max_iter=10_000):
    """Row-normalized exponential-decay averaging kernels per operator level."""
    space = system.space
    net = system.net
    P, census = {}, {}
    for k in range(net.k_min, net.k_op_max + 1):
        scale = net.scale(k)
        H = np.exp(-nu * (space.d / scale) ** a)
        P[k], iters, resid = _sinkhorn_normalize(space, H, tol, max_iter)
        census[k] = {"iterations": iters, "residual": resid}
    return P, census


def _telescope(space, P, k_lo, k_hi, mode):
    """Detail kernels from an averaging ladder, exact-sum by construction."""
    E = identity_kernel(space)
    if mode == "homogeneous":
        levels = list(range(k_lo, k_hi + 1))
        hi = {k: (E if k == k_hi else P[k + 1]) for k in levels}
        lo = {k: (mean_projector(space) if k == k_lo else P[k]) for k in levels}
        Q = {k: hi[k] - lo[k] for k in levels}
        dy = {k: k for k in levels}
    elif mode == "inhomogeneous":
        K = k_hi + 1 - k_lo
        levels = list(range(K + 1))
        Q = {0: P[k_lo].copy()}
        for j in range(1, K):
            Q[j] = P[k_lo + j] - P[k_lo + j - 1]
        Q[K] = E - P[k_hi]
        dy = {j: k_lo + j for j in levels}
    else:
        raise ValueError(f"unknown mode {mode!r}")
    return levels, dy, Q


def build_haar_family(system, mode="homogeneous"):
    P = build_haar_ladder(system)
    net = system.net
    levels, dy, Q = _telescope(system.space, P, net.k_min, net.k_op_max, mode)
    return OperatorFamily(
        mode, "haar", system.delta, levels, dy, Q, P,
        {"k_min": net.k_min, "k_op_max": net.k_op_max},
    )


def build_smoothed_family(system, mode="homogeneous", nu=1.0, a=1.0, tol=1e-13,
                          max_iter=10_000):
    P, census = build_smoothed_ladder(system, nu, a, tol, max_iter)
    net = system.net
    levels, dy, Q = _telescope(system.space, P, net.k_min, net.k_op_max, mode)
    return OperatorFamily(
        mode, "smoothed", system.delta, levels, dy, Q, P,
        {
            "nu": nu, "a": a, "k_min": net.k_min, "k_op_max": net.k_op_max,
            "normalization": census,
        },
    )


def _integral_residuals(space, family):
    """Worst deviation of weighted row/column sums from their mode targets."""
    row = col = 0.0
    for l in family.levels:
        K = family.Q[l]
        t = family.row_target(l)
        row = max(row, float(np.abs(K @ space.w - t).max()))
        col = max(col, float(np.abs(space.w @ K - t).max()))
    return row, col


def _pair_windows(space, scale, d):
    return (scale + d) / (2.0 * space.A0)


def verify_ati(space, family, beta=1.0, gammas=(0.5, 1.0, 2.0), tol=1e-10,
               sample_seed=0, probes=8):
    """Approximation-of-identity audit: size, smoothness, double smoothness,
    integrals, and domination of the averages by the maximal function."""
    rep = EstimateReport(f"ati:{family.provenance}:{family.mode}")
    row, col = _integral_residuals(space, family)
    rep.add("integrals_rows", "exact", row, tol)
    rep.add("integrals_cols", "exact", col, tol)

    d = space.d
    V = space.pair_volumes()
    size_fit = {g: 0.0 for g in gammas}
    for l in family.levels:
        s = family.scale(l)
        denom = space.ball_volumes(s)[:, None] + V
        base = np.abs(family.Q[l]) * denom
        grow = (s + d) / s
        for g in gammas:
            size_fit[g] = max(size_fit[g], float((base * grow**g).max()))
    for g in gammas:
        rep.add(f"size_gamma_{g:g}", "fitted", size_fit[g])

    rng = np.random.default_rng(sample_seed)
    n = space.n
    gamma_reg = gammas[len(gammas) // 2]
    reg_fit = 0.0
    for l in family.levels:
        s = family.scale(l)
        Q = family.Q[l]
        rhs = (s / (s + d)) ** gamma_reg / (space.ball_volumes(s)[:, None] + V)
        for xp in range(n):
            win = _pair_windows(space, s, d)
            ok = (d[:, xp][:, None] <= win) & (d[:, xp][:, None] > 0)
            if not ok.any():
                continue
            mod = (d[:, xp][:, None] / (s + d)) ** beta
            num = np.abs(Q - Q[xp][None, :])
            with np.errstate(divide="ignore", invalid="ignore"):
                ratio = np.where(ok, num / (mod * rhs), 0.0)
            reg_fit = max(reg_fit, float(np.nanmax(ratio)))
    rep.add("regularity", "fitted", reg_fit)

    if n <= 24:
        pair_pool = [(xp, yp) for xp in range(n) for yp in range(n)]
    else:
        pair_pool = list(
            zip(rng.integers(0, n, 256).tolist(), rng.integers(0, n, 256).tolist())
        )
    dd_fit = 0.0
    for l in family.levels:
        s = family.scale(l)
        Q = family.Q[l]
        rhs = (s / (s + d)) ** gamma_reg / (space.ball_volumes(s)[:, None] + V)
        win = _pair_windows(space, s, d) / (2.0 * space.A0)
        for xp, yp in pair_pool:
            okx = (d[:, xp][:, None] <= win) & (d[:, xp][:, None] > 0)
            oky = (d[yp][None, :] <= win) & (d[yp][None, :] > 0)
            ok = okx & oky
            if not ok.any():
                continue
            num = np.abs(Q - Q[xp][None, :] - Q[:, yp][:, None] + Q[xp, yp])
            modx = (d[:, xp][:, None] / (s + d)) ** beta
            mody = (d[yp][None, :] / (s + d)) ** beta
            with np.errstate(divide="ignore", invalid="ignore"):
                ratio = np.where(ok, num / (modx * mody * rhs), 0.0)
            dd_fit = max(dd_fit, float(np.nanmax(ratio)))
    rep.add("second_difference", "fitted", dd_fit)

    if family.P:
        from .space import maximal_operator

        fs = [rng.standard_normal(n) for _ in range(probes)]
        fs.append(np.ones(n))
        mx = 0.0
        for f in fs:
            Mf = maximal_operator(space, f)
            for k, Pk in family.P.items():
                mx = max(mx, float(np.max(np.abs(apply_kernel(space, Pk, f)) / Mf)))
        rep.add("averaging_maximal", "fitted", mx)
    rep.census.update(
        {"beta": beta, "gammas": list(gammas), "gamma_reg": gamma_reg,
         "pairs": len(pair_pool), "seed": sample_seed}
    )
    return rep


def _exp_size_rhs(space, system, k_dyadic, scale, nu, a, with_centers):
    """Unit-constant right side of the exponential size bound at one level."""
    V = space.ball_volumes(scale)
    out = np.exp(-nu * (space.d / scale) ** a) / np.sqrt(np.outer(V, V))
    if with_centers:
        dy = system.new_center_distances(k_dyadic)
        m = np.maximum(dy[:, None], dy[None, :])
        with np.errstate(over="ignore"):
            out = out * np.where(np.isfinite(m), np.exp(-nu * (m / scale) ** a), 0.0)
    return out


def verify_exp_ati(space, system, family, eta=1.0, nu=None, a=None, nu_alt=None,
                   tol=1e-10, sample_seed=0):
    """Exponential-decay identity-approximation audit.

    Size carries both decay factors, against the pair distance and against the
    distance to the level's new net centers; levels that introduced no centers
    drop the second factor and are flagged, as is the coarsest inhomogeneous
    level, whose kernel is an averaging. Wide-window smoothness uses the halved
    decay rate.
    """
    if nu is None:
        nu = family.params.get("nu", 2.0)
    if a is None:
        a = family.params.get("a", 1.0)
    if nu_alt is None:
        nu_alt = nu / 2.0
    rep = EstimateReport(f"exp_ati:{family.provenance}:{family.mode}")
    row, col = _integral_residuals(space, family)
    rep.add("integrals_rows", "exact", row, tol)
    rep.add("integrals_cols", "exact", col, tol)

    d = space.d
    n = space.n
    empty_levels = []
    exempt = []
    size_fit = size_plain = 0.0
    for l in family.levels:
        kd = family.dyadic_levels[l]
        s = family.scale(l)
        Q = np.abs(family.Q[l])
        has_centers = np.isfinite(system.new_center_distances(kd)).all()
        if not has_centers:
            empty_levels.append(l)
        averaging = family.mode == "inhomogeneous" and l == family.levels[0]
        if averaging:
            exempt.append(l)
        with_centers = has_centers and not averaging
        rhs = _exp_size_rhs(space, system, kd, s, nu, a, with_centers)
        size_fit = max(size_fit, float((Q / rhs).max()))
        rhs0 = _exp_size_rhs(space, system, kd, s, nu, a, False)
        size_plain = max(size_plain, float((Q / rhs0).max()))
    rep.add("size", "fitted", size_fit)
    rep.add("size_no_centers", "fitted", size_plain)

    reg_fit = dd_fit = 0.0
    regw_fit = ddw_fit = 0.0
    rng = np.random.default_rng(sample_seed)
    if n <= 24:
        pair_pool = [(xp, yp) for xp in range(n) for yp in range(n)]
    else:
        pair_pool = list(
            zip(rng.integers(0, n, 256).tolist(), rng.integers(0, n, 256).tolist())
        )
    for l in family.levels:
        kd = family.dyadic_levels[l]
        s = family.scale(l)
        Q = family.Q[l]
        averaging = family.mode == "inhomogeneous" and l == family.levels[0]
        with_centers = (l not in empty_levels) and not averaging
        rhs = _exp_size_rhs(space, system, kd, s, nu, a, with_centers)
        rhs_alt = _exp_size_rhs(space, system, kd, s, nu_alt, a, with_centers)
        for xp in range(n):
            dx = d[:, xp][:, None]
            num = np.abs(Q - Q[xp][None, :])
            ok = (dx <= s) & (dx > 0)
            if ok.any():
                with np.errstate(divide="ignore", invalid="ignore"):
                    ratio = np.where(ok, num / ((dx / s) ** eta * rhs), 0.0)
                reg_fit = max(reg_fit, float(np.nanmax(ratio)))
            win = _pair_windows(space, s, d)
            okw = (dx <= win) & (dx > 0)
            if okw.any():
                modw = (dx / (s + d)) ** eta
                with np.errstate(divide="ignore", invalid="ignore"):
                    ratio = np.where(okw, num / (modw * rhs_alt), 0.0)
                regw_fit = max(regw_fit, float(np.nanmax(ratio)))
        for xp, yp in pair_pool:
            dx = d[:, xp][:, None]
            dyp = d[yp][None, :]
            num = np.abs(Q - Q[xp][None, :] - Q[:, yp][:, None] + Q[xp, yp])
            ok = (dx <= s) & (dx > 0) & (dyp <= s) & (dyp > 0)
            if ok.any():
                with np.errstate(divide="ignore", invalid="ignore"):
                    ratio = np.where(
                        ok, num / ((dx / s) ** eta * (dyp / s) ** eta * rhs), 0.0
                    )
                dd_fit = max(dd_fit, float(np.nanmax(ratio)))
            win2 = _pair_windows(space, s, d) / (2.0 * space.A0)
            okw = (dx <= win2) & (dx > 0) & (dyp <= win2) & (dyp > 0)
            if okw.any():
                modx = (dx / (s + d)) ** eta
                mody = (dyp / (s + d)) ** eta
                with np.errstate(divide="ignore", invalid="ignore"):
                    ratio = np.where(okw, num / (modx * mody * rhs_alt), 0.0)
                ddw_fit = max(ddw_fit, float(np.nanmax(ratio)))
    rep.add("regularity", "fitted", reg_fit)
    rep.add("second_difference", "fitted", dd_fit)
    rep.add("regularity_wide", "fitted", regw_fit)
    rep.add("second_difference_wide", "fitted", ddw_fit)
    rep.census.update(
        {
            "nu": nu, "a": a, "eta": eta, "nu_alt": nu_alt,
            "levels_without_new_centers": empty_levels,
            "averaging_levels": exempt,
            "pairs": len(pair_pool), "seed": sample_seed,
        }
    )
    return rep


def compose_and_audit(space, system, left, right, window=3, c=None, a=None,
                      eta=None, tol=1e-10):
    """Composition decay audit: for levels j, k at distance up to the window,
    fit the constant in |Q_j Q_k| <= C delta^{|j-k| eta} against the coarser
    scale's decay profile, regress eta from the per-gap constants, and check
    that detail-by-detail compositions keep exact cancellation."""
    if c is None:
        base_nu = min(left.params.get("nu", 2.0), right.params.get("nu", 2.0))
        c = base_nu / 4.0
    if a is None:
        a = left.params.get("a", right.params.get("a", 1.0))
    if eta is None:
        eta = 1.0
    rep = EstimateReport(f"compose:{left.provenance}x{right.provenance}")
    gap_fit = {}
    cancel = 0.0
    pairs = []
    for j in left.levels:
        for k in right.levels:
            if abs(j - k) <= window:
                pairs.append((j, k))
    for j, k in pairs:
        M = matmulw(space, left.Q[j], right.Q[k])
        kd = min(left.dyadic_levels[j], right.dyadic_levels[k])
        s = left.delta**kd
        has_centers = np.isfinite(system.new_center_distances(kd)).all()
        rhs = np.exp(-c * (space.d / s) ** a) / space.ball_volumes(s)[:, None]
        if has_centers:
            dyv = system.new_center_distances(kd)
            rhs = rhs * np.exp(-c * (dyv[:, None] / s) ** a)
        ratio = float((np.abs(M) / rhs).max())
        m = abs(j - k)
        gap_fit[m] = max(gap_fit.get(m, 0.0), ratio)
        if right.row_target(k) == 0.0:
            cancel = max(cancel, float(np.abs(M @ space.w).max()))
        if left.row_target(j) == 0.0:
            cancel = max(cancel, float(np.abs(space.w @ M).max()))
    gaps = sorted(gap_fit)
    if len(gaps) >= 2:
        xs = np.array(gaps, dtype=float)
        ys = np.log(np.array([max(gap_fit[m], 1e-300) for m in gaps]))
        slope, intercept = np.polyfit(xs, ys, 1)
        eta_fit = float(slope / math.log(left.delta))
        base_C = float(math.exp(intercept))
    else:
        eta_fit, base_C = math.nan, gap_fit.get(0, math.nan)
    rep.add("cancellation", "exact", cancel, tol)
    rep.add("size_C", "fitted", base_C)
    rep.add("eta_fit", "fitted", eta_fit)
    rep.census.update(
        {
            "window": window, "c": c, "a": a, "eta_assumed": eta,
            "per_gap": {str(m): gap_fit[m] for m in gaps},
            "pairs": len(pairs),
        }
    )
    return rep


def save_family(family, dirpath):
    """Manifest plus one little-endian float64 row-major file per kernel."""
    os.makedirs(dirpath, exist_ok=True)
    manifest = {
        "format": 1,
        "mode": family.mode,
        "provenance": family.provenance,
        "n": family.n,
        "delta": family.delta,
        "levels": family.levels,
        "dyadic_levels": {str(l): family.dyadic_levels[l] for l in family.levels},
        "p_levels": sorted(family.P.keys()),
        "params": family.params,
    }
    with open(os.path.join(dirpath, "manifest.json"), "w") as fh:
        fh.write(canonical_json(manifest))
        fh.write("\n")
    for l in family.levels:
        family.Q[l].astype("<f8").tofile(os.path.join(dirpath, f"q_{l}.f64"))
    for k in sorted(family.P.keys()):
        family.P[k].astype("<f8").tofile(os.path.join(dirpath, f"p_{k}.f64"))


def load_family(dirpath):
    with open(os.path.join(dirpath, "manifest.json")) as fh:
        manifest = json.load(fh)
    if manifest.get("format") != 1:
        raise ValueError("unknown family serialization format")
    n = manifest["n"]
    Q, P = {}, {}
    for l in manifest["levels"]:
        arr = np.fromfile(os.path.join(dirpath, f"q_{l}.f64"), dtype="<f8")
        if arr.size != n * n:
            raise ValueError(f"kernel file for level {l} has wrong size")
        Q[l] = arr.reshape(n, n)
    for k in manifest["p_levels"]:
        arr = np.fromfile(os.path.join(dirpath, f"p_{k}.f64"), dtype="<f8")
        if arr.size != n * n:
            raise ValueError(f"averaging file for level {k} has wrong size")
        P[k] = arr.reshape(n, n)
    dy = {int(k): v for k, v in manifest["dyadic_levels"].items()}
    return OperatorFamily(
        manifest["mode"], manifest["provenance"], manifest["delta"],
        list(manifest["levels"]), dy, Q, P, manifest.get("params", {}),
    )
