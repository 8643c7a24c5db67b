"""Assembly and certification of multiscale reproducing identities.

The ladder's detail kernels sum to a projector: the identity on inhomogeneous
families, the identity minus the global mean on homogeneous ones. Splitting
the squared sum at a window width N gives a near part plus a far remainder;
when the remainder contracts, a truncated Neumann series produces dual
kernels with a computable error certificate, and the same recipe applies to
the sampled (discrete) form of the near part.
"""

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .dyadic import refine_subcubes
from .operators import (
    apply_kernel,
    build_haar_family,
    identity_kernel,
    matmulw,
    mean_projector,
)
from .reporting import parallel_map
from .space import lp_norm
from .testspaces import make_bump, operator_test_space_ratio, test_norm, verify_cz_kernel


def mode_target(space, mode):
    """Kernel of the operator the family reproduces."""
    E = identity_kernel(space)
    if mode == "homogeneous":
        return E - mean_projector(space)
    if mode == "inhomogeneous":
        return E
    raise ValueError(f"unknown mode {mode!r}")


def operator_norm_l2(space, kernel, tol=1e-12, max_iter=50_000, seed=7, block=8):
    """Largest singular value of the operator on L2(mu): blocked power
    iteration on the Gram matrix of the measure-symmetrized kernel, with a
    Ritz extraction so clustered or symmetry-degenerate top values converge.
    Stops on the eigen-residual, or once the Ritz value stagnates (a tight
    cluster of top eigenvalues keeps the residual at the cluster width while
    the value itself is long converged); warns if the iteration cap is hit."""
    K = np.asarray(kernel, dtype=float)
    sw = np.sqrt(space.w)
    M = sw[:, None] * K * sw[None, :]
    fro = float(np.linalg.norm(M))
    if fro == 0.0:
        return 0.0
    G = M.T @ M
    n = space.n
    b = min(block, n)
    rng = np.random.default_rng(seed)
    V = np.linalg.qr(rng.standard_normal((n, b)))[0]
    floor = 64.0 * np.finfo(float).eps * fro * fro * math.sqrt(n)
    lam = 0.0
    prev = -1.0
    stalled = 0
    for _ in range(max_iter):
        W = G @ V
        H = V.T @ W
        evals, evecs = np.linalg.eigh(0.5 * (H + H.T))
        lam = float(evals[-1])
        u = evecs[:, -1]
        resid = float(np.linalg.norm(W @ u - lam * (V @ u)))
        if resid <= max(tol * lam, floor):
            return math.sqrt(max(lam, 0.0))
        stalled = stalled + 1 if abs(lam - prev) <= tol * max(lam, floor) else 0
        if stalled >= 3:
            return math.sqrt(max(lam, 0.0))
        prev = lam
        V = np.linalg.qr(W)[0]
    warnings.warn("operator norm power iteration hit its iteration cap",
                  RuntimeWarning)
    return math.sqrt(max(lam, 0.0))


def window_levels(family, k, N):
    """Level labels entering the width-N companion of level k."""
    if family.mode == "homogeneous":
        return [l for l in family.levels if abs(l - k) <= N]
    top = family.levels[-1]
    lo = 0 if k <= N else k - N
    hi = min(k + N, top)
    return [l for l in family.levels if lo <= l <= hi]


def window_kernel(family, k, N):
    out = None
    for l in window_levels(family, k, N):
        out = family.Q[l].copy() if out is None else out + family.Q[l]
    return out


def window_row_target(family, k, N):
    """Weighted row sums of the companion kernel: one on the coarse
    inhomogeneous block, zero everywhere else."""
    if family.mode == "inhomogeneous" and k <= N:
        return 1.0
    return 0.0


@dataclass
class IdentitySplit:
    """Near/far split of the squared kernel sum at window width N."""

    mode: str
    N: int
    near: np.ndarray
    far: np.ndarray
    near_pairs: list
    far_pairs: list
    residual: float  # max deviation of near+far from the reproduced operator


def identity_split(space, family, N, threads=1):
    S = family.sum_kernel()
    n = space.n

    # per-level products may run concurrently; the final summation below is
    # sequential in level order so results do not depend on the thread count
    def one(k):
        wl = window_levels(family, k, N)
        QN = window_kernel(family, k, N)
        return wl, matmulw(space, QN, family.Q[k]), matmulw(space, S - QN, family.Q[k])

    parts = parallel_map(one, family.levels, threads)
    T = np.zeros((n, n))
    R = np.zeros((n, n))
    near_pairs, far_pairs = [], []
    for k, (wl, Tk, Rk) in zip(family.levels, parts):
        T += Tk
        R += Rk
        near_pairs.extend((l, k) for l in wl)
        far_pairs.extend((l, k) for l in family.levels if l not in wl)
    # the pair ledger must tile all of levels x levels exactly once
    if sorted(near_pairs + far_pairs) != sorted(
        (l, k) for l in family.levels for k in family.levels
    ):
        raise AssertionError("window ledger fails to tile the level pairs")
    residual = float(np.abs(T + R - mode_target(space, family.mode)).max())
    return IdentitySplit(family.mode, N, T, R, near_pairs, far_pairs, residual)


def neumann_invert(space, deviation, mode, tail_target=1e-8, max_terms=200,
                   norm_seed=7):
    """Truncated Neumann inverse of (projector - deviation), with certificate.

    The deviation norm rho must be below one; the series is cut at the first
    j with rho^(j+1)/(1-rho) below the target. The certificate's soundness
    inequality is residual <= 2*tail_bound, measured on both composition
    orders, with a small absolute slack so an exactly vanishing deviation
    does not fail on float noise.
    """
    rho = operator_norm_l2(space, deviation, seed=norm_seed)
    if rho >= 1.0:
        raise ValueError(
            f"deviation norm {rho:.6g} is not a contraction; raise N "
            "(or deepen the refinement)"
        )
    if rho == 0.0:
        j_star = 0
    else:
        j_star = 0
        while rho ** (j_star + 1) / (1.0 - rho) > tail_target and j_star < max_terms:
            j_star += 1
    tail = rho ** (j_star + 1) / (1.0 - rho)
    P0 = mode_target(space, mode)
    inv = P0.copy()
    for _ in range(j_star):
        inv = P0 + matmulw(space, deviation, inv)
    T = P0 - deviation
    residual = max(
        operator_norm_l2(space, matmulw(space, inv, T) - P0, seed=norm_seed),
        operator_norm_l2(space, matmulw(space, T, inv) - P0, seed=norm_seed),
    )
    cert = {
        "rho": rho,
        "j_star": j_star,
        "tail_bound": tail,
        "tail_target": tail_target,
        "residual": residual,
        "ok": bool(residual <= max(2.0 * tail, 1e-12)),
    }
    return inv, cert


def build_probes(space, system=None, seed=0, noise=8, max_columns=32):
    """Deterministic probe census: a constant, bumps at three widths around
    the medoid, every ladder detail column at two levels when a cube system
    is supplied (strided above max_columns per level), and seeded noise."""
    medoid = int(np.argmin(space.d @ space.w))
    diam = space.diameter
    dmin = space.min_positive_distance()
    probes = [("constant", np.ones(space.n))]
    if diam > 0:
        probes.append(("bump_coarse", make_bump(space, medoid, diam / 2.0)))
        probes.append(("bump_mid", make_bump(space, medoid, max(diam / 8.0, dmin))))
        probes.append(("bump_fine", make_bump(space, medoid, 2.0 * dmin)))
    if system is not None and space.n > 1:
        fam = build_haar_family(system, "homogeneous")
        ls = fam.levels
        stride = max(1, space.n // max_columns)
        for lab in sorted({ls[len(ls) // 2], ls[-1]}):
            for y in range(0, space.n, stride):
                probes.append((f"detail_{lab}_{y}", fam.Q[lab][:, y].copy()))
    rng = np.random.default_rng(seed)
    for i in range(noise):
        probes.append((f"noise_{i}", rng.standard_normal(space.n)))
    return probes


def _reconstruct(space, mode, kernel, f):
    g = apply_kernel(space, kernel, f)
    if mode == "homogeneous":
        g = g + np.dot(f, space.w) / space.total_measure
    return g


def _probe_errors(space, mode, kernels, probes, threads=1, ps=(2.0, 1.5, 4.0)):
    """Relative reconstruction errors per probe for each named kernel."""

    def one(item):
        name, f = item
        row = {"probe": name}
        for side, K in kernels.items():
            g = _reconstruct(space, mode, K, f)
            base = {p: lp_norm(space, f, p) for p in ps}
            for p in ps:
                tag = f"rel_l{p:g}_{side}"
                row[tag] = lp_norm(space, g - f, p) / base[p] if base[p] > 0 else 0.0
        return row

    return parallel_map(one, probes, threads)


@dataclass
class CRFResult:
    """Certified reproducing-formula audit for one family and window width."""

    mode: str
    provenance: str
    N: int
    rho: float
    certificate: dict
    split_residual: float
    window_residual: float
    dual_row_residual: float
    left_residual: float
    right_residual: float
    dual_consistency: float
    dual_norm_fit: float
    probe_inequality: float
    probe_table: list
    census: dict = field(default_factory=dict)


def _window_normalization_residual(space, family, N):
    worst = 0.0
    for k in family.levels:
        QN = window_kernel(family, k, N)
        t = window_row_target(family, k, N)
        worst = max(worst, float(np.abs(QN @ space.w - t).max()))
    return worst


def _probe_inequality(space, mode, assembled, cert, probes, table, side):
    """Worst ratio of the measured probe error to its certified ceiling
    tail_bound * ||f||_2 * ||assembled||_2; at or below one passes."""
    synth = operator_norm_l2(space, assembled)
    worst = 0.0
    for (name, f), row in zip(probes, table):
        nf = lp_norm(space, f, 2.0)
        err = row[f"rel_l2_{side}"] * nf
        ceiling = cert["tail_bound"] * nf * synth + 1e-12
        worst = max(worst, err / ceiling)
    return worst


def _dual_norm_fit(space, family, duals, beta, gamma):
    """Test-space norm of dual columns at their own scale, sampled."""
    fit = 0.0
    ls = family.levels
    picks = sorted({ls[0], ls[len(ls) // 2], ls[-1]})
    ys = list(range(0, space.n, max(1, space.n // 6)))
    for l in picks:
        r = family.scale(l)
        col = duals[l]
        for y in ys:
            fit = max(fit, test_norm(space, col[:, y], y, r, beta, gamma))
    return fit


def continuous_crf(space, system, family, N, tail_target=1e-8, probe_seed=0,
                   threads=1, beta=0.75, gamma=0.75):
    """Dual families via certified inversion of the near part, both sides.

    Left duals compose the inverse with the companion kernels; right duals
    are their adjoints on the other slot. Both reconstructions, their mutual
    agreement, and the dual columns' test-space norms are audited.
    """
    split = identity_split(space, family, N, threads)
    inv, cert = neumann_invert(space, split.far, family.mode, tail_target)
    target = mode_target(space, family.mode)
    left = {}
    right = {}
    C_left = np.zeros_like(target)
    C_right = np.zeros_like(target)
    dual_rows = 0.0
    for k in family.levels:
        QN = window_kernel(family, k, N)
        left[k] = matmulw(space, inv, QN)
        right[k] = matmulw(space, QN, inv.T)
        C_left += matmulw(space, left[k], family.Q[k])
        C_right += matmulw(space, family.Q[k], right[k])
        t = window_row_target(family, k, N)
        dual_rows = max(dual_rows, float(np.abs(left[k] @ space.w - t).max()))
        dual_rows = max(dual_rows, float(np.abs(space.w @ right[k] - t).max()))
    left_res = operator_norm_l2(space, C_left - target)
    right_res = operator_norm_l2(space, C_right - target)
    dual_gap = float(np.abs(C_left - C_right).max())
    probes = build_probes(space, system, probe_seed)
    table = _probe_errors(
        space, family.mode, {"left": C_left, "right": C_right}, probes, threads
    )
    ineq = _probe_inequality(space, family.mode, C_left, cert, probes, table, "left")
    fit = _dual_norm_fit(space, family, left, beta, gamma)
    return CRFResult(
        family.mode, family.provenance, N, cert["rho"], cert, split.residual,
        _window_normalization_residual(space, family, N), dual_rows,
        left_res, right_res, dual_gap, fit, ineq, table,
        {
            "tail_target": tail_target, "beta": beta, "gamma": gamma,
            "probes": [p[0] for p in probes], "threads": threads,
        },
    )


def homogeneous_crf(space, system, family, N, **kw):
    if family.mode != "homogeneous":
        raise ValueError("family is not homogeneous")
    return continuous_crf(space, system, family, N, **kw)


def inhomogeneous_crf(space, system, family, N, **kw):
    if family.mode != "inhomogeneous":
        raise ValueError("family is not inhomogeneous")
    return continuous_crf(space, system, family, N, **kw)


_VARIANT_STYLES = {
    0: ("integrate", "sample"),
    1: ("sample", "integrate"),
    2: ("sample_mass", "sample"),
}


def _cell_factors(space, left, right, cells, left_style, right_style):
    n = space.n
    m = len(cells)
    U = np.empty((n, m))
    V = np.empty((m, n))
    for ci, (center, members, y) in enumerate(cells):
        wm = space.w[members]
        if left_style == "integrate":
            U[:, ci] = left[:, members] @ wm
        elif left_style == "sample":
            U[:, ci] = left[:, y]
        elif left_style == "sample_mass":
            U[:, ci] = left[:, y] * wm.sum()
        else:
            raise ValueError(left_style)
        if right_style == "sample":
            V[ci] = right[y]
        elif right_style == "integrate":
            V[ci] = wm @ right[members]
        elif right_style == "average":
            V[ci] = (wm @ right[members]) / wm.sum()
        else:
            raise ValueError(right_style)
    return U, V


@dataclass
class DiscreteSplit:
    """Sampled near part plus its defect, tied to the continuous remainder."""

    mode: str
    N: int
    j0: int
    sampler: str
    variant: int
    swapped: bool
    S: np.ndarray
    G: np.ndarray
    R: np.ndarray
    residual: float
    parts: dict = field(default_factory=dict)


def discrete_split(space, system, family, N, refinement, variant=0, swapped=False,
                   threads=1):
    """Replace each near-part composition by a cell-sampled product.

    Homogeneous variants integrate/sample the two factors per the variant
    table; inhomogeneous splits cube-average the coarse rows (levels up to N)
    and point-sample the fine ones, so the defect separates into a coarse and
    a fine piece alongside the far remainder. With swapped=True the plain
    detail kernel takes the outer slot and the companion is the one sampled,
    which is the assembly the right-sided (dual) reconstruction inverts; its
    sampled factor lives at window-width-coarser scales, so it wants a deeper
    refinement than the primal form.
    """
    split = identity_split(space, family, N, threads)
    n = space.n

    def one(k):
        QN = window_kernel(family, k, N)
        Qk = family.Q[k]
        A, B = (Qk, QN) if swapped else (QN, Qk)
        if family.mode == "homogeneous":
            ls, rs = _VARIANT_STYLES[variant]
        else:
            ls, rs = "integrate", ("average" if k <= N else "sample")
        cells = refinement.level_cells(family.dyadic_levels[k])
        U, V = _cell_factors(space, A, B, cells, ls, rs)
        Sk = U @ V
        return Sk, matmulw(space, A, B) - Sk

    parts = parallel_map(one, family.levels, threads)
    S = np.zeros((n, n))
    G = np.zeros((n, n))
    coarse_defect = np.zeros((n, n))
    fine_defect = np.zeros((n, n))
    for k, (Sk, Gk) in zip(family.levels, parts):
        S += Sk
        G += Gk
        if family.mode == "inhomogeneous":
            if k <= N:
                coarse_defect += Gk
            else:
                fine_defect += Gk
    residual = float(np.abs(S + G + split.far - mode_target(space, family.mode)).max())
    parts = {}
    if family.mode == "inhomogeneous":
        parts = {"coarse_defect": coarse_defect, "fine_defect": fine_defect}
    return DiscreteSplit(
        family.mode, N, refinement.j0, refinement.sampler, variant, swapped,
        S, G, split.far, residual, parts,
    )


@dataclass
class DiscreteCRFResult:
    mode: str
    provenance: str
    N: int
    j0: int
    sampler: str
    variant: int
    swapped: bool
    rho: float
    certificate: dict
    split_residual: float
    recon_residual: float
    probe_inequality: float
    probe_table: list
    census: dict = field(default_factory=dict)


def discrete_crf(space, system, family, N, j0, sampler="center", seed=0,
                 variant=0, swapped=False, refinement=None, tail_target=1e-8,
                 probe_seed=0, threads=1):
    """Certified reconstruction from the sampled near part."""
    if refinement is None:
        levels = sorted(set(family.dyadic_levels.values()))
        refinement = refine_subcubes(system, j0, sampler, seed, levels=levels)
    split = discrete_split(space, system, family, N, refinement, variant, swapped,
                           threads)
    target = mode_target(space, family.mode)
    deviation = target - split.S
    inv, cert = neumann_invert(space, deviation, family.mode, tail_target)
    # primal reconstruction inverts from the left; the swapped (dual) form
    # keeps the plain details on the left, so its inverse lands on the right
    recon = matmulw(space, split.S, inv) if swapped else matmulw(space, inv, split.S)
    recon_res = operator_norm_l2(space, recon - target)
    probes = build_probes(space, system, probe_seed)
    table = _probe_errors(space, family.mode, {"disc": recon}, probes, threads)
    ineq = _probe_inequality(space, family.mode, recon, cert, probes, table, "disc")
    census = {
        "tail_target": tail_target,
        "probes": [p[0] for p in probes],
        "defect_l2": operator_norm_l2(space, split.G),
        "remainder_l2": operator_norm_l2(space, split.R),
        "threads": threads,
    }
    if split.parts:
        census["coarse_defect_l2"] = operator_norm_l2(space, split.parts["coarse_defect"])
        census["fine_defect_l2"] = operator_norm_l2(space, split.parts["fine_defect"])
    return DiscreteCRFResult(
        family.mode, family.provenance, N, refinement.j0, refinement.sampler,
        variant, swapped, cert["rho"], cert, split.residual, recon_res, ineq,
        table, census,
    )


@dataclass
class DecayStudy:
    quantity: str
    sweep: str
    rows: list
    fit: dict
    census: dict = field(default_factory=dict)


DECAY_QUANTITIES = ("RN_l2", "RN_testspace_ratio", "GN_l2", "CZ_CT_of_RN")


def decay_study(space, system, family, quantity, sweep="N", values=(0, 1, 2, 3, 4),
                N=1, j0=1, sampler="center", seed=0, cz_s=0.5, beta=0.75,
                gamma=0.75, threads=1):
    """One remainder quantity against one swept parameter (window width N or
    refinement depth j0), with a log-scale geometric rate fit, its residual,
    and a strict-monotonicity flag. Flat-zero tables (exact ladders) skip the
    fit and say so."""
    if quantity not in DECAY_QUANTITIES:
        raise ValueError(f"unknown decay quantity {quantity!r}")
    if sweep not in ("N", "j0"):
        raise ValueError("sweep must be 'N' or 'j0'")
    levels = sorted(set(family.dyadic_levels.values()))
    medoid = int(np.argmin(space.d @ space.w))
    r_probe = max(space.diameter / 4.0, space.min_positive_distance())

    def one(v):
        cur_N, cur_j0 = (v, j0) if sweep == "N" else (N, v)
        split = identity_split(space, family, cur_N)
        if quantity == "RN_l2":
            y = operator_norm_l2(space, split.far)
        elif quantity == "GN_l2":
            refinement = refine_subcubes(system, cur_j0, sampler, seed, levels=levels)
            dsplit = discrete_split(space, system, family, cur_N, refinement)
            y = operator_norm_l2(space, dsplit.G)
        elif quantity == "CZ_CT_of_RN":
            y = verify_cz_kernel(space, split.far, s=cz_s).get("size").value
        else:
            rep = operator_test_space_ratio(
                space, split.far, medoid, r_probe, beta, gamma,
                system=system, seed=seed,
            )
            y = rep.get("ratio").value
        return {sweep: v, quantity: float(y)}

    rows = parallel_map(one, list(values), threads)
    ys = np.array([row[quantity] for row in rows], dtype=float)
    xs = np.array([row[sweep] for row in rows], dtype=float)
    if np.any(ys <= 0.0) or float(ys.max()) < 1e-13:
        fit = {"skipped": True, "reason": "degenerate table (exact ladder)"}
    else:
        slope, intercept = np.polyfit(xs, np.log(ys), 1)
        pred = slope * xs + intercept
        fit = {
            "skipped": False,
            "ratio": float(math.exp(slope)),
            "base": float(math.exp(intercept)),
            "residual": float(np.sqrt(np.mean((np.log(ys) - pred) ** 2))),
            "monotone": bool(np.all(np.diff(ys) < 0.0)),
        }
    return DecayStudy(
        quantity, sweep, rows, fit,
        {"N": N, "j0": j0, "sampler": sampler, "seed": seed, "cz_s": cz_s,
         "beta": beta, "gamma": gamma, "values": list(values)},
    )


def auto_select(space, system, family, target_rho=0.5, N_cap=None,
                j0_range=(1, 2, 3), sampler="center", seed=0, variants=None):
    """Smallest window width and refinement depth with certified contraction:
    scan N first, then j0 at that N, requiring every requested sampled
    variant (both primal and swapped) to contract."""
    if N_cap is None:
        N_cap = len(family.levels)
    if variants is None:
        variants = (0, 1, 2) if family.mode == "homogeneous" else (0,)
    chosen_N, rho_cont = None, None
    for N in range(N_cap + 1):
        rho = operator_norm_l2(space, identity_split(space, family, N).far)
        if rho <= target_rho:
            chosen_N, rho_cont = N, rho
            break
    if chosen_N is None:
        raise ValueError(f"no window width up to {N_cap} contracts below {target_rho}")
    target = mode_target(space, family.mode)
    chosen_j0, rho_disc = None, None
    levels = sorted(set(family.dyadic_levels.values()))
    for j0 in j0_range:
        refinement = refine_subcubes(system, j0, sampler, seed, levels=levels)
        worst = 0.0
        for variant in variants:
            # the swapped (dual) assembly is certified on homogeneous runs only
            swaps = (False, True) if family.mode == "homogeneous" else (False,)
            for swapped in swaps:
                dsplit = discrete_split(
                    space, system, family, chosen_N, refinement, variant, swapped
                )
                worst = max(worst, operator_norm_l2(space, target - dsplit.S))
        if worst <= target_rho:
            chosen_j0, rho_disc = j0, worst
            break
    if chosen_j0 is None:
        raise ValueError(
            f"no refinement depth in {list(j0_range)} contracts below {target_rho}"
        )
    return {
        "N": chosen_N, "rho_continuous": rho_cont,
        "j0": chosen_j0, "rho_discrete": rho_disc,
    }
