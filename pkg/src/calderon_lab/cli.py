"""Command-line front end for the multiscale reproducing-identity laboratory.

Subcommands audit spaces, build cube systems and operator ladders, certify
reproducing formulae, sweep remainder decay, and orchestrate full experiment
runs from JSON configs. Run reports are deterministic: the stored hash covers
everything except wall-clock timings and the artifact manifest, so identical
configs give identical hashes at any thread count.

Exit codes: 0 clean, 1 a gating check failed (or a stage died mid-run),
2 configuration or input-format trouble.
"""

import argparse
import dataclasses
import json
import os
import sys
import time

import numpy as np

from .dyadic import (
    NetConstructionError,
    build_dyadic,
    build_nets,
    verify_dyadic_invariants,
    verify_expsum,
)
from .engine import (
    auto_select,
    continuous_crf,
    decay_study,
    discrete_crf,
    mode_target,
)
from .operators import (
    build_haar_family,
    build_smoothed_family,
    compose_and_audit,
    load_family,
    save_family,
    verify_ati,
    verify_exp_ati,
)
from .reporting import (
    canonical_json,
    fmt17,
    json_safe,
    sha256_bytes,
    sha256_file,
    thread_count,
)
from .space import (
    SpaceFormatError,
    doubling_audit,
    geometry_equivalence_audit,
    load_space,
    quasi_metric_audit,
)

DEFAULT_TOLERANCES = {
    "identity": 1e-10,
    "neumann": 1e-10,
    "reconstruction": 1e-6,
    "reconstruction_lp": 1e-5,
    "dual_consistency": 1e-8,
}


class ConfigError(Exception):
    """Bad configuration or unreadable input; maps to exit code 2."""


def _fail2(msg):
    print(f"error: {msg}", file=sys.stderr)
    return 2


def _seed(args):
    return 0 if args.seed is None else args.seed


def _load_space_or_die(path):
    if not os.path.exists(path):
        raise ConfigError(f"space file not found: {path}")
    try:
        return load_space(path)
    except SpaceFormatError as exc:
        raise ConfigError(str(exc)) from exc


def _emit(payload, out):
    text = canonical_json(json_safe(payload))
    if out:
        with open(out, "w") as fh:
            fh.write(text)
            fh.write("\n")
    else:
        print(text)


def _build_system(space, delta, k_range=None, strict=False):
    net = build_nets(space, delta, k_range=k_range, strict=strict)
    return build_dyadic(net, space, strict=strict)


def _build_family(system, kind, mode, nu=1.0, a=1.0):
    if kind == "haar":
        return build_haar_family(system, mode)
    if kind == "smoothed":
        return build_smoothed_family(system, mode, nu=nu, a=a)
    raise ConfigError(f"unknown family kind {kind!r}")


# ---------------------------------------------------------------- commands


def cmd_space_audit(args):
    space = _load_space_or_die(args.space)
    qm = quasi_metric_audit(space, sample_seed=_seed(args))
    db = doubling_audit(space, sample_seed=_seed(args))
    geo = geometry_equivalence_audit(space, sample_seed=_seed(args))
    payload = {
        "space": {
            "n": space.n,
            "total_measure": space.total_measure,
            "diameter": space.diameter,
            "A0": space.A0,
        },
        "quasi_metric": dataclasses.asdict(qm),
        "doubling": dataclasses.asdict(db),
        "geometry": dataclasses.asdict(geo),
    }
    _emit(payload, args.out)
    return 0 if qm.within_declared else 1


def cmd_dyadic_build(args):
    space = _load_space_or_die(args.space)
    system = _build_system(space, args.delta, strict=args.strict_geometry)
    checks = verify_dyadic_invariants(system)
    exp = verify_expsum(system, sample_seed=_seed(args))
    payload = {
        "levels": {str(k): len(system.net.centers[k]) for k in system.net.levels},
        "k_range": [system.net.k_min, system.net.k_max],
        "k_op_max": system.net.k_op_max,
        "invariants": checks,
        "scale_sums": {"C1_fit": exp.C1_fit, "C2_fit": exp.C2_fit},
    }
    if args.out:
        system.save(args.out)
        payload["written"] = args.out
    _emit(payload, None)
    ok = checks["partition"] and checks["nesting"]
    return 0 if ok else 1


def cmd_family_build(args):
    space = _load_space_or_die(args.space)
    system = _build_system(space, args.delta, strict=args.strict_geometry)
    family = _build_family(system, args.kind, args.mode, args.nu, args.a)
    if not args.out:
        return _fail2("family build needs --out DIRECTORY")
    save_family(family, args.out)
    _emit(
        {
            "written": args.out,
            "mode": family.mode,
            "provenance": family.provenance,
            "levels": family.levels,
        },
        None,
    )
    return 0


def cmd_family_audit(args):
    space = _load_space_or_die(args.space)
    family = load_family(args.family_dir)
    if family.n != space.n:
        return _fail2("family size differs from the space")
    system = _build_system(space, family.delta, strict=args.strict_geometry)
    reports = [verify_ati(space, family, sample_seed=_seed(args))]
    if family.provenance == "smoothed":
        reports.append(verify_exp_ati(space, system, family, sample_seed=_seed(args)))
    payload = {rep.subject: rep.to_dict() for rep in reports}
    _emit(payload, args.out)
    return 0 if all(rep.all_exact_pass for rep in reports) else 1


def _crf_gates(result, tol, worst_errors):
    """Uniform gating rows for one certified formula run."""
    gates = [
        ("split_residual", result.split_residual, tol["identity"]),
        ("certificate", 0.0 if result.certificate["ok"] else 1.0, 0.5),
        ("probe_inequality", result.probe_inequality, 1.0),
        ("recon_l2", worst_errors["l2"], tol["reconstruction"]),
        ("recon_l1.5", worst_errors["l1.5"], tol["reconstruction_lp"]),
        ("recon_l4", worst_errors["l4"], tol["reconstruction_lp"]),
    ]
    if hasattr(result, "dual_consistency"):
        gates.append(("window_residual", result.window_residual, tol["identity"]))
        gates.append(("dual_rows", result.dual_row_residual, tol["identity"]))
        gates.append(
            ("dual_consistency", result.dual_consistency, tol["dual_consistency"])
        )
    return gates


def _worst_errors(table):
    out = {}
    for p in ("2", "1.5", "4"):
        cols = [k for k in table[0] if k.startswith(f"rel_l{p}_")]
        out[f"l{p}"] = max(max(row[k] for k in cols) for row in table)
    return out


def _run_crf_entry(space, system, families, entry, tol, seed, threads, auto_cache):
    mode = entry.get("mode", "homogeneous")
    family = families[mode]
    kind = entry.get("type", "continuous")
    N = entry.get("N", "auto")
    j0 = entry.get("j0", "auto")
    if N == "auto" or (kind == "discrete" and j0 == "auto"):
        if mode not in auto_cache:
            variants = (0, 1, 2) if mode == "homogeneous" else (0,)
            auto_cache[mode] = auto_select(
                space, system, family, sampler=entry.get("sampler", "center"),
                seed=seed, variants=variants,
            )
        if N == "auto":
            N = auto_cache[mode]["N"]
        if j0 == "auto":
            j0 = auto_cache[mode]["j0"]
    if kind == "continuous":
        result = continuous_crf(space, system, family, int(N), threads=threads)
    elif kind == "discrete":
        result = discrete_crf(
            space, system, family, int(N), int(j0),
            sampler=entry.get("sampler", "center"), seed=seed,
            variant=int(entry.get("variant", 0)),
            swapped=bool(entry.get("swapped", False)), threads=threads,
        )
    else:
        raise ConfigError(f"unknown formula type {kind!r}")
    worst = _worst_errors(result.probe_table)
    gates = _crf_gates(result, tol, worst)
    summary = {
        "mode": result.mode,
        "provenance": result.provenance,
        "type": kind,
        "N": int(N),
        "rho": result.rho,
        "certificate": result.certificate,
        "worst_errors": worst,
        "gates": {
            name: {"value": value, "tolerance": t, "passed": bool(value <= t)}
            for name, value, t in gates
        },
    }
    if kind == "discrete":
        summary.update(
            {
                "j0": int(j0),
                "sampler": result.sampler,
                "variant": result.variant,
                "swapped": result.swapped,
                "recon_residual": result.recon_residual,
                "defect_l2": result.census.get("defect_l2"),
                "remainder_l2": result.census.get("remainder_l2"),
            }
        )
    else:
        summary["dual_consistency"] = result.dual_consistency
        summary["dual_norm_fit"] = result.dual_norm_fit
    failures = [
        f"{entry.get('label', kind)}:{name}"
        for name, value, t in gates
        if not value <= t
    ]
    return summary, result.probe_table, failures


def _write_csv(path, header, rows):
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(row) + "\n")


def _decay_csv_rows(study):
    rows = []
    rate = "" if study.fit.get("skipped") else fmt17(study.fit["ratio"])
    for row in study.rows:
        rows.append([fmt17(row[study.sweep]), fmt17(row[study.quantity]), rate])
    return rows


def run_experiment(config, config_dir, out_dir, threads=1, seed=None):
    """Execute the full pipeline described by a config; returns (report, exit)."""
    tol = dict(DEFAULT_TOLERANCES)
    tol.update(config.get("tolerances", {}))
    for name, value in tol.items():
        if not value > 0:
            raise ConfigError(f"tolerance {name} must be positive")
    seed = config.get("seed", 0) if seed is None else seed
    space_path = config.get("space")
    if not space_path:
        raise ConfigError("config needs a space file path")
    if not os.path.isabs(space_path):
        space_path = os.path.join(config_dir, space_path)
    # a bad space file must not leave partial artifacts behind, so load it
    # before the output directory exists
    space = _load_space_or_die(space_path)
    delta = float(config.get("delta", 0.5))
    strict = bool(config.get("strict_geometry", False))

    os.makedirs(out_dir, exist_ok=True)
    stages = {}
    timings = {}
    failures = []
    manifest = {"files": {}, "notes": []}
    decay_payload = []
    certificates = {}
    probe_tables = {}

    def stage(name, fn):
        t0 = time.perf_counter()
        try:
            stages[name] = fn()
        except Exception as exc:
            stages[name] = {"error": f"{type(exc).__name__}: {exc}"}
            failures.append(f"{name}:stage-error")
            raise
        finally:
            timings[name] = time.perf_counter() - t0

    state = {"space": space}

    def do_space():
        qm = quasi_metric_audit(space, sample_seed=seed)
        db = doubling_audit(space, sample_seed=seed)
        if not qm.within_declared:
            failures.append("space:quasi_triangle")
        return {
            "n": space.n,
            "diameter": space.diameter,
            "total_measure": space.total_measure,
            "quasi_metric": dataclasses.asdict(qm),
            "doubling": dataclasses.asdict(db),
        }

    def do_dyadic():
        system = _build_system(
            state["space"], delta, config.get("k_range"), strict
        )
        state["system"] = system
        checks = verify_dyadic_invariants(system)
        exp = verify_expsum(system, sample_seed=seed)
        if not (checks["partition"] and checks["nesting"]):
            failures.append("dyadic:invariants")
        if checks["measure_gap"] > tol["identity"]:
            failures.append("dyadic:measure_gap")
        return {
            "levels": {str(k): len(system.net.centers[k]) for k in system.net.levels},
            "k_op_max": system.net.k_op_max,
            "invariants": checks,
            "scale_sums": {"C1_fit": exp.C1_fit, "C2_fit": exp.C2_fit},
        }

    def do_family():
        fam_cfg = config.get("family", {})
        kind = fam_cfg.get("kind", "smoothed")
        modes = sorted(
            {e.get("mode", "homogeneous") for e in config.get("calderon", [])}
            | {"homogeneous"}
        )
        families = {}
        out = {}
        for mode in modes:
            fam = _build_family(
                state["system"], kind, mode,
                float(fam_cfg.get("nu", 1.0)), float(fam_cfg.get("a", 1.0)),
            )
            families[mode] = fam
            total = fam.sum_kernel()
            gap = float(
                np.abs(total - mode_target(state["space"], mode)).max()
            )
            if gap > tol["identity"]:
                failures.append(f"family:{mode}:telescope")
            out[mode] = {
                "provenance": fam.provenance,
                "levels": fam.levels,
                "telescope_gap": gap,
            }
        state["families"] = families
        return out

    def do_audits():
        space, system = state["space"], state["system"]
        out = {}
        for mode, fam in sorted(state["families"].items()):
            rep = verify_ati(space, fam, sample_seed=seed)
            out[f"ati:{mode}"] = rep.to_dict()
            if not rep.all_exact_pass:
                failures.append(f"audits:ati:{mode}")
            if fam.provenance == "smoothed":
                erep = verify_exp_ati(space, system, fam, sample_seed=seed)
                out[f"exp:{mode}"] = erep.to_dict()
                if not erep.all_exact_pass:
                    failures.append(f"audits:exp:{mode}")
                crep = compose_and_audit(space, system, fam, fam)
                out[f"compose:{mode}"] = crep.to_dict()
                if not crep.all_exact_pass:
                    failures.append(f"audits:compose:{mode}")
        return out

    def do_calderon():
        space, system = state["space"], state["system"]
        out = {}
        auto_cache = {}
        for i, entry in enumerate(config.get("calderon", [])):
            label = entry.get("label", f"entry{i}")
            summary, table, fails = _run_crf_entry(
                space, system, state["families"], entry, tol, seed, threads,
                auto_cache,
            )
            out[label] = summary
            probe_tables[label] = table
            certificates[label] = summary["certificate"]
            failures.extend(f"calderon:{f}" for f in fails)
        if auto_cache:
            out["auto_selection"] = auto_cache
        return out

    def do_decay():
        space, system = state["space"], state["system"]
        out = []
        for spec_row in config.get("decay", []):
            fam = state["families"][spec_row.get("mode", "homogeneous")]
            study = decay_study(
                space, system, fam, spec_row["quantity"],
                sweep=spec_row.get("sweep", "N"),
                values=tuple(spec_row.get("values", (0, 1, 2, 3, 4))),
                N=int(spec_row.get("N", 1)), j0=int(spec_row.get("j0", 1)),
                sampler=spec_row.get("sampler", "center"), seed=seed,
                beta=float(spec_row.get("beta", 0.75)),
                gamma=float(spec_row.get("gamma", 0.75)),
                threads=threads,
            )
            decay_payload.append(study)
            out.append(
                {
                    "quantity": study.quantity,
                    "sweep": study.sweep,
                    "rows": study.rows,
                    "fit": study.fit,
                }
            )
        return out

    order = [
        ("space", do_space),
        ("dyadic", do_dyadic),
        ("family", do_family),
        ("audits", do_audits),
        ("calderon", do_calderon),
        ("decay", do_decay),
    ]
    halted = None
    for name, fn in order:
        try:
            stage(name, fn)
        except Exception:
            halted = name
            break

    # artifact emission: decay CSVs + figures, probe-error figure, summary
    from . import plots

    seen = {}
    for study in decay_payload:
        base = f"decay_{study.quantity}_{study.sweep}"
        if base in seen:
            seen[base] += 1
            base = f"{base}_{seen[base]}"
        else:
            seen[base] = 0
        csv_path = os.path.join(out_dir, base + ".csv")
        _write_csv(
            csv_path, [study.sweep, study.quantity, "fitted_rate"],
            _decay_csv_rows(study),
        )
        manifest["files"][base + ".csv"] = sha256_file(csv_path)
        png_path = os.path.join(out_dir, base + ".png")
        plots.decay_figure(study, png_path)
        manifest["files"][base + ".png"] = sha256_file(png_path)
    if not decay_payload:
        manifest["notes"].append("no decay tables; zero plot-data files emitted")
    if probe_tables:
        png_path = os.path.join(out_dir, "recon_errors.png")
        plots.reconstruction_figure(probe_tables, png_path)
        manifest["files"]["recon_errors.png"] = sha256_file(png_path)

    summary_rows = []

    def srow(stage_name, name, kind, value, tolerance, passed):
        summary_rows.append(
            [
                stage_name, name, kind,
                fmt17(float(value)),
                "" if tolerance is None else fmt17(float(tolerance)),
                "" if passed is None else ("pass" if passed else "FAIL"),
            ]
        )

    dy = stages.get("dyadic")
    if isinstance(dy, dict) and "invariants" in dy:
        inv = dy["invariants"]
        srow("dyadic", "partition", "exact", 1.0 - inv["partition"], 0.5,
             inv["partition"])
        srow("dyadic", "nesting", "exact", 1.0 - inv["nesting"], 0.5,
             inv["nesting"])
        srow("dyadic", "measure_gap", "exact", inv["measure_gap"],
             tol["identity"], inv["measure_gap"] <= tol["identity"])
    fam_stage = stages.get("family")
    if isinstance(fam_stage, dict):
        for mode, info in sorted(fam_stage.items()):
            if isinstance(info, dict) and "telescope_gap" in info:
                srow("family", f"{mode}:telescope_gap", "exact",
                     info["telescope_gap"], tol["identity"],
                     info["telescope_gap"] <= tol["identity"])
    audits_stage = stages.get("audits")
    if isinstance(audits_stage, dict):
        for key, rep in sorted(audits_stage.items()):
            for cond in rep.get("conditions", []) if isinstance(rep, dict) else []:
                srow(f"audits:{key}", cond["name"], cond["kind"], cond["value"],
                     cond.get("tolerance"), cond.get("passed"))
    cal_stage = stages.get("calderon")
    if isinstance(cal_stage, dict):
        for label, summary in sorted(cal_stage.items()):
            if not isinstance(summary, dict) or "gates" not in summary:
                continue
            for gname, g in summary["gates"].items():
                srow(f"calderon:{label}", gname, "exact", g["value"],
                     g["tolerance"], g["passed"])
    summary_path = os.path.join(out_dir, "summary.csv")
    _write_csv(
        summary_path, ["stage", "name", "kind", "value", "tolerance", "status"],
        summary_rows,
    )
    manifest["files"]["summary.csv"] = sha256_file(summary_path)

    report = {
        "config": config,
        "stages": json_safe(stages),
        "certificates": json_safe(certificates),
        "gating": {"failures": failures, "ok": not failures and halted is None},
        "halted_stage": halted,
    }
    body = canonical_json(json_safe(report))
    report["report_hash"] = sha256_bytes(body.encode())
    report["timings"] = timings
    report["manifest"] = manifest
    report_path = os.path.join(out_dir, "report.json")
    with open(report_path, "w") as fh:
        fh.write(canonical_json(json_safe(report)))
        fh.write("\n")

    if halted is not None:
        return report, 1
    return report, (0 if not failures else 1)


def cmd_calderon(args):
    space = _load_space_or_die(args.space)
    system = _build_system(space, args.delta, strict=args.strict_geometry)
    mode = "inhomogeneous" if args.formula == "inhomogeneous" else args.mode
    family = _build_family(system, args.kind, mode, args.nu, args.a)
    tol = dict(DEFAULT_TOLERANCES)
    tol["reconstruction"] = args.recon_tol
    entry = {
        "label": args.formula,
        "mode": mode,
        "type": "discrete" if args.formula == "discrete" else "continuous",
        "N": "auto" if args.N is None else args.N,
        "j0": "auto" if args.j0 is None else args.j0,
        "variant": args.variant,
        "swapped": args.swapped,
        "sampler": args.sampler,
    }
    if args.formula == "inhomogeneous" and args.j0 is not None:
        entry["type"] = "discrete"
    summary, table, fails = _run_crf_entry(
        space, system, {mode: family}, entry, tol, _seed(args),
        thread_count(args.threads), {},
    )
    _emit(summary, args.out)
    return 0 if not fails else 1


def cmd_study_decay(args):
    space = _load_space_or_die(args.space)
    system = _build_system(space, args.delta, strict=args.strict_geometry)
    family = _build_family(system, args.kind, args.mode, args.nu, args.a)
    values = tuple(int(v) for v in args.values.split(","))
    study = decay_study(
        space, system, family, args.quantity, sweep=args.sweep, values=values,
        N=args.N, j0=args.j0, sampler=args.sampler, seed=_seed(args),
        threads=thread_count(args.threads),
    )
    payload = {
        "quantity": study.quantity,
        "sweep": study.sweep,
        "rows": study.rows,
        "fit": study.fit,
    }
    if args.out:
        _write_csv(
            args.out, [study.sweep, study.quantity, "fitted_rate"],
            _decay_csv_rows(study),
        )
        print(canonical_json(json_safe(study.fit)))
    else:
        _emit(payload, None)
    return 0


def cmd_run(args):
    if not os.path.exists(args.config):
        return _fail2(f"config not found: {args.config}")
    try:
        with open(args.config) as fh:
            config = json.load(fh)
    except json.JSONDecodeError as exc:
        return _fail2(f"malformed config: {exc}")
    config_dir = os.path.dirname(os.path.abspath(args.config))
    name = config.get("name") or os.path.splitext(os.path.basename(args.config))[0]
    out_dir = args.out or f"{name}-out"
    threads = thread_count(args.threads)
    if args.strict_geometry:
        config = dict(config)
        config["strict_geometry"] = True
    try:
        report, code = run_experiment(
            config, config_dir, out_dir, threads, seed=args.seed,
        )
    except ConfigError as exc:
        return _fail2(str(exc))
    print(f"report: {os.path.join(out_dir, 'report.json')}")
    print(f"report_hash: {report['report_hash']}")
    status = "ok" if report["gating"]["ok"] else "FAILED"
    print(f"gating: {status}")
    for f in report["gating"]["failures"]:
        print(f"  failed: {f}")
    if report.get("halted_stage"):
        print(f"  halted at stage: {report['halted_stage']}")
    return code


# ---------------------------------------------------------------- parser


def _common(p, out_help="write the JSON report here instead of stdout"):
    p.add_argument("--seed", type=int, default=None, help="sampling seed")
    p.add_argument("--threads", type=int, default=None,
                   help="worker threads (falls back to CALDERON_LAB_THREADS)")
    p.add_argument("--out", default=None, help=out_help)
    p.add_argument("--strict-geometry", action="store_true",
                   help="enforce the small-delta admissibility inequalities")


def build_parser():
    ap = argparse.ArgumentParser(
        prog="calderon-lab",
        description="multiscale reproducing-identity laboratory",
    )
    sub = ap.add_subparsers(dest="group", required=True)

    p_space = sub.add_parser("space", help="space-level audits")
    space_sub = p_space.add_subparsers(dest="action", required=True)
    p = space_sub.add_parser("audit", help="quasi-metric and doubling audits")
    p.add_argument("space")
    _common(p)
    p.set_defaults(fn=cmd_space_audit)

    p_dy = sub.add_parser("dyadic", help="nested net and cube construction")
    dy_sub = p_dy.add_subparsers(dest="action", required=True)
    p = dy_sub.add_parser("build", help="build and verify a cube system")
    p.add_argument("space")
    p.add_argument("--delta", type=float, default=0.5)
    _common(p, out_help="save the cube system JSON here")
    p.set_defaults(fn=cmd_dyadic_build)

    p_fam = sub.add_parser("family", help="operator ladders")
    fam_sub = p_fam.add_subparsers(dest="action", required=True)
    p = fam_sub.add_parser("build", help="build and serialize a ladder")
    p.add_argument("space")
    p.add_argument("--delta", type=float, default=0.5)
    p.add_argument("--kind", choices=("haar", "smoothed"), default="smoothed")
    p.add_argument("--mode", choices=("homogeneous", "inhomogeneous"),
                   default="homogeneous")
    p.add_argument("--nu", type=float, default=1.0)
    p.add_argument("--a", type=float, default=1.0)
    _common(p, out_help="directory for the serialized family")
    p.set_defaults(fn=cmd_family_build)
    p = fam_sub.add_parser("audit", help="size/regularity/cancellation audits")
    p.add_argument("family_dir")
    p.add_argument("--space", required=True)
    _common(p)
    p.set_defaults(fn=cmd_family_audit)

    p_cal = sub.add_parser("calderon", help="certified reproducing formulae")
    cal_sub = p_cal.add_subparsers(dest="formula", required=True)
    for which in ("continuous", "discrete", "inhomogeneous"):
        p = cal_sub.add_parser(which)
        p.add_argument("space")
        p.add_argument("--delta", type=float, default=0.5)
        p.add_argument("--kind", choices=("haar", "smoothed"), default="smoothed")
        p.add_argument("--mode", choices=("homogeneous", "inhomogeneous"),
                       default="homogeneous")
        p.add_argument("--nu", type=float, default=1.0)
        p.add_argument("--a", type=float, default=1.0)
        p.add_argument("--N", type=int, default=None,
                       help="window width (default: smallest certified)")
        p.add_argument("--j0", type=int, default=None,
                       help="refinement depth for sampled forms")
        p.add_argument("--variant", type=int, choices=(0, 1, 2), default=0)
        p.add_argument("--swapped", action="store_true",
                       help="right-sided (dual) sampled assembly")
        p.add_argument("--sampler",
                       choices=("center", "random", "worst-case"),
                       default="center")
        p.add_argument("--recon-tol", type=float, default=1e-6)
        _common(p)
        p.set_defaults(fn=cmd_calderon)

    p_study = sub.add_parser("study", help="decay sweeps")
    study_sub = p_study.add_subparsers(dest="action", required=True)
    p = study_sub.add_parser("decay", help="one decay quantity vs one parameter")
    p.add_argument("space")
    p.add_argument("--delta", type=float, default=0.5)
    p.add_argument("--kind", choices=("haar", "smoothed"), default="smoothed")
    p.add_argument("--mode", choices=("homogeneous", "inhomogeneous"),
                   default="homogeneous")
    p.add_argument("--nu", type=float, default=1.0)
    p.add_argument("--a", type=float, default=1.0)
    p.add_argument("--quantity", required=True,
                   choices=("RN_l2", "RN_testspace_ratio", "GN_l2", "CZ_CT_of_RN"))
    p.add_argument("--sweep", choices=("N", "j0"), default="N")
    p.add_argument("--values", default="0,1,2,3,4",
                   help="comma-separated swept values")
    p.add_argument("--N", type=int, default=1)
    p.add_argument("--j0", type=int, default=1)
    p.add_argument("--sampler", choices=("center", "random", "worst-case"),
                   default="center")
    _common(p, out_help="write the table CSV here (fit JSON to stdout)")
    p.set_defaults(fn=cmd_study_decay)

    p_run = sub.add_parser("run", help="full experiment from a JSON config")
    p_run.add_argument("config")
    _common(p_run, out_help="output directory (default: <name>-out)")
    p_run.set_defaults(fn=cmd_run)
    return ap


def main(argv=None):
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, SpaceFormatError, NetConstructionError,
            FileNotFoundError) as exc:
        return _fail2(str(exc))


if __name__ == "__main__":
    sys.exit(main())
