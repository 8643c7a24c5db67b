"""Test-function norms, bump profiles, and singular-kernel audits.

A test function anchored at x1 with width r is graded by two exhaustive
ratios: a size ratio against the normalized decay profile
1/(V_r(x1)+V(x1,y)) * (r/(r+d(x1,y)))^gamma and a smoothness ratio on pairs
inside the window d(y,y') <= (r+d(x1,y))/(2*A0). The norm is the larger of
the two; cancellation is tracked separately as a weighted-sum residual.
"""

import numpy as np

from .reporting import EstimateReport
from .operators import apply_kernel


def _size_profile(space, x1, r, gamma):
    dx = space.d[x1]
    vol = space.ball_volume(x1, r) + space.row_volumes(x1, dx)
    return (r / (r + dx)) ** gamma / vol


def test_norm(space, f, x1, r, beta=1.0, gamma=1.0):
    """Smallest admissible constant for the size and smoothness bounds."""
    if r <= 0:
        raise ValueError("width r must be positive")
    f = np.asarray(f, dtype=float)
    x1 = space.index(x1)
    u = _size_profile(space, x1, r, gamma)
    c_size = float(np.max(np.abs(f) / u))
    d = space.d
    dx = d[x1]
    win = (r + dx)[:, None] / (2.0 * space.A0)
    ok = (d <= win) & (d > 0)
    if ok.any():
        diff = np.abs(f[:, None] - f[None, :])
        mod = (d / (r + dx)[:, None]) ** beta
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(ok, diff / (mod * u[:, None]), 0.0)
        c_reg = float(np.nanmax(ratio))
    else:
        c_reg = 0.0
    return max(c_size, c_reg)


def cancellation_residual(space, f):
    return float(abs(np.dot(np.asarray(f, dtype=float), space.w)))


def holder_norm(space, f, beta=1.0):
    f = np.asarray(f, dtype=float)
    sup = float(np.abs(f).max())
    d = space.d
    off = d > 0
    if off.any():
        diff = np.abs(f[:, None] - f[None, :])
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(off, diff / d**beta, 0.0)
        sup = max(sup, float(ratio.max()))
    return sup


def make_bump(space, center, r):
    """Tent profile: one on B(center, r), zero outside B(center, 2*A0*r),
    linear in the distance between; Lipschitz constant 1/((2*A0-1)*r)."""
    if r <= 0:
        raise ValueError("radius must be positive")
    c = space.index(center)
    t = (2.0 * space.A0 * r - space.d[c]) / ((2.0 * space.A0 - 1.0) * r)
    return np.clip(t, 0.0, 1.0)


def verify_cz_kernel(space, kernel, s=0.5, sigma=None, r0=None, tol=1e-10,
                     sample_seed=0):
    """Singular-kernel audit: size against 1/V(x,y), smoothness in each slot,
    double smoothness, row integrals, and an optional extra-decay tail."""
    K = np.asarray(kernel, dtype=float)
    n = space.n
    d = space.d
    V = space.pair_volumes()
    off = ~np.eye(n, dtype=bool)
    rep = EstimateReport("cz_kernel")

    size_fit = float(np.max(np.where(off, np.abs(K) * V, 0.0)))
    rep.add("size", "fitted", size_fit)

    reg_fit = 0.0
    for xp in range(n):
        dx = d[:, xp][:, None]
        win = d / (2.0 * space.A0)
        ok = off & (dx <= win) & (dx > 0)
        if not ok.any():
            continue
        num = np.abs(K - K[xp][None, :])
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(ok, num * V / (dx / d) ** s, 0.0)
        reg_fit = max(reg_fit, float(np.nanmax(ratio)))
    rep.add("regularity", "fitted", reg_fit)

    rng = np.random.default_rng(sample_seed)
    if n <= 24:
        pool = [(xp, yp) for xp in range(n) for yp in range(n)]
    else:
        pool = list(zip(rng.integers(0, n, 256).tolist(),
                        rng.integers(0, n, 256).tolist()))
    dd_fit = 0.0
    for xp, yp in pool:
        dx = d[:, xp][:, None]
        dy = d[yp][None, :]
        win = d / (2.0 * space.A0) ** 2
        ok = off & (dx <= win) & (dx > 0) & (dy <= win) & (dy > 0)
        if not ok.any():
            continue
        num = np.abs(K - K[xp][None, :] - K[:, yp][:, None] + K[xp, yp])
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(ok, num * V / ((dx / d) ** s * (dy / d) ** s), 0.0)
        dd_fit = max(dd_fit, float(np.nanmax(ratio)))
    rep.add("second_difference", "fitted", dd_fit)

    rows = (np.where(off, K, 0.0) @ space.w)
    rep.add("row_integrals", "fitted", float(np.abs(rows).max()),
            details={"min": float(rows.min()), "max": float(rows.max())})

    if sigma is not None and r0 is not None:
        far = off & (d >= r0)
        if far.any():
            tail = float(np.max(np.where(far, np.abs(K) * V * (d / r0) ** sigma, 0.0)))
        else:
            tail = 0.0
        rep.add("tail", "fitted", tail, details={"sigma": sigma, "r0": r0})
    rep.census.update({"s": s, "pairs": len(pool), "seed": sample_seed})
    return rep


def _mean_free(space, f):
    return f - np.dot(f, space.w) / space.total_measure


def operator_test_space_ratio(space, kernel, x1=0, r=None, beta=1.0, gamma=1.0,
                              system=None, seed=0, count=8):
    """Lower bound for the test-space operator norm: the largest ratio
    ||Tf|| / ||f|| over a probe census of bumps, ladder details, and seeded
    mean-free noise. A maximum over probes can only undershoot the true norm.
    """
    x1 = space.index(x1)
    if r is None:
        r = max(space.diameter / 4.0, space.min_positive_distance())
    probes = []
    dmin = space.min_positive_distance()
    for name, rr in (("bump_wide", max(space.diameter / 2.0, dmin)),
                     ("bump_mid", r), ("bump_tight", 2.0 * dmin)):
        probes.append((name, _mean_free(space, make_bump(space, x1, rr))))
    if system is not None:
        from .operators import build_haar_family

        fam = build_haar_family(system, "homogeneous")
        ls = fam.levels
        for lab in {ls[len(ls) // 2], ls[-1]}:
            probes.append((f"detail_{lab}", fam.Q[lab][:, x1] * space.w[x1]))
    rng = np.random.default_rng(seed)
    for i in range(count):
        probes.append((f"noise_{i}", _mean_free(space, rng.standard_normal(space.n))))

    rep = EstimateReport("test_space_ratio")
    best, table = 0.0, []
    for name, f in probes:
        nf = test_norm(space, f, x1, r, beta, gamma)
        if nf <= 0:
            continue
        g = apply_kernel(space, kernel, f)
        ng = test_norm(space, g, x1, r, beta, gamma)
        table.append({"probe": name, "ratio": ng / nf})
        best = max(best, ng / nf)
    rep.add("ratio", "fitted", best)
    rep.census.update(
        {"x1": space.ids[x1], "r": r, "beta": beta, "gamma": gamma,
         "seed": seed, "probes": table}
    )
    return rep
