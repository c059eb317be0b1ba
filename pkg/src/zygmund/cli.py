"""Command-line runner: one subcommand per module, JSON config, CSV/JSON artifacts.

Exit codes: 0 pass, 1 usage or configuration error, 2 audit failure.
"""
from __future__ import annotations

import argparse
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import acceptance as acc

EXIT_OK, EXIT_USAGE, EXIT_AUDIT = 0, 1, 2
THREADS_ENV = "ZYGMUND_THREADS"

DEFAULT_FIELD = {"kind": "weierstrass", "b": 2.0}
DEFAULT_TENSOR = {"kind": "tensor_sum", "b": 2.0, "dim": 2}


class ConfigError(ValueError):
    pass


def _load_config(args) -> dict:
    cfg: dict = {}
    if args.config:
        try:
            cfg = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from exc
        if not isinstance(cfg, dict):
            raise ConfigError("config must be a JSON object")
    for key in ("seed", "depth", "samples", "threads", "out_dir"):
        val = getattr(args, key, None)
        if val is not None:
            cfg[key] = val
    cfg["subcommand"] = args.command
    cfg.setdefault("seed", 0)
    cfg.setdefault("out_dir", "out")
    cfg.setdefault("threads", int(os.environ.get(THREADS_ENV, "1") or 1))
    return cfg


def _out(cfg: dict) -> Path:
    p = Path(cfg["out_dir"])
    p.mkdir(parents=True, exist_ok=True)
    return p


def _prov(cfg: dict) -> dict:
    # out_dir and threads do not change results, so they stay out of the hash
    core = {k: v for k, v in cfg.items() if k not in ("out_dir", "threads")}
    return {"config_hash": acc.config_hash(core), "seed": cfg["seed"]}


def _field(cfg: dict, default: dict):
    from .fields import field_from_config

    try:
        return field_from_config(cfg.get("field", default))
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"bad field spec: {exc}") from exc


def _summary(cfg: dict, out: Path, payload: dict, name: str = "summary.json") -> None:
    acc.write_json(out / name, {**_prov(cfg), "config": cfg_without_paths(cfg), **payload})


def cfg_without_paths(cfg: dict) -> dict:
    return {k: v for k, v in cfg.items() if k not in ("out_dir", "threads")}


# ---------------------------------------------------------------------------
# Subcommands


def cmd_eval(cfg: dict) -> int:
    f = _field(cfg, DEFAULT_FIELD)
    pts = cfg.get("points")
    if pts is None:
        m = int(cfg.get("samples", 17))
        pts = [[i / (m - 1)] * f.dim for i in range(m)] if m > 1 else [[0.0] * f.dim]
    X = np.asarray(pts, dtype=float).reshape(-1, f.dim)
    vals, errs = f.evaluate(X)
    rows = [{**{f"x{i}": float(x[i]) for i in range(f.dim)}, "value": float(v), "error_bound": float(e)}
            for x, v, e in zip(X, vals, errs)]
    out = _out(cfg)
    acc.write_csv(out / "eval.csv", rows, _prov(cfg))
    for r in rows:
        print(",".join(f"{v!r}" for v in r.values()))
    return EXIT_OK


def cmd_gradient(cfg: dict) -> int:
    from .fields import SampleSpec
    from .gradient import gradient_modulus, trajectories

    f = _field(cfg, DEFAULT_FIELD)
    depth = int(cfg.get("depth", 20))
    count = int(cfg.get("samples", 20))
    rng = np.random.default_rng(cfg["seed"])
    X = rng.random((count, f.dim))
    V, E = trajectories(f, X, depth)
    rows = []
    for i, x in enumerate(X):
        for n in range(depth + 1):
            row = {"point": i, **{f"x{j}": float(x[j]) for j in range(f.dim)}, "n": n}
            row.update({f"V{j}": float(V[i, n, j]) for j in range(f.dim)})
            row.update({"norm": float(np.linalg.norm(V[i, n])), "error_bound": float(E[i, n])})
            rows.append(row)
    mod = []
    for k in range(0, depth):
        w = gradient_modulus(f, 2.0**-k, SampleSpec(count=2000, levels=(k, depth), seed=cfg["seed"]))
        mod.append({"delta": 2.0**-k, "w": w})
    out = _out(cfg)
    acc.write_csv(out / "trajectories.csv", rows, _prov(cfg))
    acc.write_csv(out / "modulus.csv", mod, _prov(cfg))
    (out / "modulus.dat").write_text("".join(f"{r['delta']!r} {r['w']!r}\n" for r in mod))
    print(f"{count} trajectories to level {depth}; w(1) >= {mod[0]['w']:.6g}")
    return EXIT_OK


def cmd_cantor(cfg: dict) -> int:
    from .cantor import StoppingParams, audit_stopping, selection_step, theorem1_generations
    from .dyadic import unit_cube

    mode = cfg.get("mode", "generations")
    out = _out(cfg)
    if mode == "generations":
        f = _field(cfg, DEFAULT_TENSOR)
        params = StoppingParams(
            M=float(cfg.get("M", 3.0)), epsilon=float(cfg.get("epsilon", 0.5)),
            max_depth=int(cfg.get("depth", 30)), local_depth=cfg.get("local_depth", 8),
        )
        res = theorem1_generations(f, params, int(cfg.get("generations", 3)), seed=cfg["seed"],
                                   r_budget=cfg.get("r_budget", 4))
        payload = res.to_json()
        payload["generations"] = [g.to_json() for g in res.generations]
        ok = res.stopped is None and res.limit_audit["violations"] == 0
        print(f"generations {[len(g.cubes) for g in res.generations]}, dimension bound {res.dimension_bound:.4g}")
    elif mode == "selection":
        f = _field(cfg, DEFAULT_TENSOR)
        params = StoppingParams(M=float(cfg.get("M", 50.0)), epsilon=float(cfg.get("epsilon", 0.5)),
                                max_depth=int(cfg.get("depth", 14)))
        res = selection_step(f, unit_cube(f.dim), params, directions=cfg.get("directions"))
        audit = audit_stopping(f, res.family)
        runs = [r.to_json() for r in res.runs]
        ok = audit.passed and all(r["cone_violations"] == 0 and r["mean_value"]["monotone"] for r in runs)
        payload = {"V": list(res.VQ), "family": res.family.to_json(), "stopping": audit.to_json(), "runs": runs}
        print(f"{len(res.family.cubes)} selected cubes, stopping audit {'passed' if audit.passed else 'FAILED'}")
    else:
        raise ConfigError(f"unknown cantor mode {mode!r} (generations or selection)")
    _summary(cfg, out, {"passed": ok, "result": payload}, "cantor.json")
    return EXIT_OK if ok else EXIT_AUDIT


def cmd_dimension(cfg: dict) -> int:
    from .dimension import (
        GenerationFamily, boxdim_fit, box_counts, build_mass_measure, frostman_audit,
        nested_constants, ratio_quarter_cantor, validate_generations,
    )

    if "generations_file" in cfg:
        raw = json.loads(Path(cfg["generations_file"]).read_text())
        gens = [GenerationFamily.from_json(g) for g in raw]
        source = str(cfg["generations_file"])
    else:
        gens = ratio_quarter_cantor(int(cfg.get("generations", 7)))
        source = "ratio-1/4 Cantor fixture"
    problems = validate_generations(gens)
    if problems:
        raise ConfigError("; ".join(problems))
    s = float(cfg.get("s", 1.0))
    consts = nested_constants(gens, s)
    alpha = cfg.get("alpha", consts.alpha)
    mu = build_mass_measure(gens, s)
    depth = int(cfg.get("depth", max(c.level for c in gens[-1].cubes)))
    fa = frostman_audit(mu, float(alpha), depth) if alpha is not None else None
    deepest = max(c.level for c in gens[-1].cubes)
    counts = box_counts(gens[-1].cubes, range(1, deepest + 1))
    fit = boxdim_fit(counts)
    ok = fa is None or consts.frostman_bound is None or fa.max_ratio <= consts.frostman_bound * (1 + 1e-12)
    out = _out(cfg)
    _summary(cfg, out, {
        "source": source,
        "constants": consts.to_json(),
        "alpha": alpha,
        "frostman": None if fa is None else {"max_ratio": fa.max_ratio, "per_level": list(fa.per_level)},
        "box_counts": [[sc, c] for sc, c in counts],
        "slope": fit.slope,
        "fit_residual": fit.residual,
        "passed": ok,
    })
    (out / "box_counts.dat").write_text("".join(f"{-math.log2(sc)!r} {math.log2(c)!r}\n" for sc, c in counts))
    print(f"slope {fit.slope:.4f}, alpha {alpha}")
    return EXIT_OK if ok else EXIT_AUDIT


def _stage(args):
    ce, k, count, seed = args
    from .counterexample import stage_audit

    return stage_audit(ce, k, count, seed=seed)


def cmd_counterexample(cfg: dict) -> int:
    from . import counterexample as cx

    ce = cx.build_counterexample(int(cfg.get("stages", 3)), cfg.get("epsilons"),
                                 float(cfg.get("fraction", 0.5)), int(cfg.get("n_min", 2)))
    count = int(cfg.get("samples", 100_000))
    seed = cfg["seed"]
    jobs = [(ce, k, count, seed) for k in range(ce.K)]
    if cfg["threads"] > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=cfg["threads"]) as pool:
            stages = list(pool.map(_stage, jobs))
    else:
        stages = [_stage(j) for j in jobs]
    sched = cx.audit_schedule(ce.schedule.to_json())
    shells = cx.shell_audit(ce, 2000, seed=seed)
    probes = cx.probe_audit(ce, 2000, seed=seed)
    growth = cx.growth_audit(ce, 2000, seed=seed)
    ok = all(sched.values()) and all(s.passed for s in stages) and all(r.passed for r in shells)
    out = _out(cfg)
    acc.write_json(out / "construction.json", {**_prov(cfg), **ce.to_json()})
    _summary(cfg, out, {
        "passed": ok,
        "schedule_families": sched,
        "stages": [s.to_json() for s in stages],
        "shells": [r.to_json() for r in shells],
        "probes": [r.to_json() for r in probes],
        "growth": growth.to_json(),
    }, "audits.json")
    for s in stages:
        print(f"stage {s.k}: {'pass' if s.passed else 'FAIL'} orthogonality C {s.orth_C[0]:.4g}/{s.orth_C[1]:.4g}")
    return EXIT_OK if ok else EXIT_AUDIT


def cmd_martingale(cfg: dict) -> int:
    from .martingale import bloch_norm, defect_audit, face_integral_martingale, martingale_residual_bounds

    f = _field(cfg, DEFAULT_TENSOR)
    depth = int(cfg.get("depth", 8))
    m = face_integral_martingale(f, depth, float(cfg.get("tol", 1e-10)))
    bloch, profile = bloch_norm(m)
    res = m.residuals()
    allow = martingale_residual_bounds(m)
    levels = [n for n in range(1, 6) if n < depth]
    rows, sup = defect_audit(m, levels, polygonals=int(cfg.get("samples", 100)), seed=cfg["seed"])
    ok = all(r <= a for r, a in zip(res, allow))
    out = _out(cfg)
    acc.write_json(out / "martingale.json", m.to_json())
    acc.write_csv(out / "defects.csv", [
        {"cube": r.cube.label(), "k": r.k, "defect": r.defect, "defect_over_side": r.normalized} for r in rows
    ], _prov(cfg))
    _summary(cfg, out, {
        "passed": ok,
        "bloch": bloch,
        "bloch_profile": profile,
        "residuals": res,
        "residual_allowance": allow,
        "defect_sup_by_level": {str(k): v for k, v in sup.items()},
    })
    print(f"Bloch norm {bloch:.6g}, max residual {max(res) if res else 0.0:.3g}")
    return EXIT_OK if ok else EXIT_AUDIT


def cmd_verify(cfg: dict) -> int:
    numbers = cfg.get("criteria")
    if numbers is not None:
        numbers = [int(n) for n in numbers]
        bad = [n for n in numbers if n not in acc.CHECKS and n != 10]
        if bad:
            raise ConfigError(f"unknown criteria {bad}")
        numbers = [n for n in numbers if n != 10] or None
    repeat = int(cfg.get("repeat", 2))
    base = _out(cfg)
    dirs = [base / f"run{i + 1}" for i in range(max(repeat, 1))]
    ok = True
    for i, d in enumerate(dirs):
        results = acc.run_verify(d, cfg["seed"], cfg["threads"], numbers)
        if i == 0:
            for r in results:
                print(r.line())
                ok = ok and r.ok
    if repeat >= 2:
        diff = acc.compare_dirs(dirs[0], dirs[1])
        print(("PASS" if not diff else "FAIL") + f" [10] determinism: {len(diff)} differing files")
        ok = ok and not diff
    return EXIT_OK if ok else EXIT_AUDIT


COMMANDS = {
    "eval": cmd_eval,
    "gradient": cmd_gradient,
    "cantor": cmd_cantor,
    "dimension": cmd_dimension,
    "counterexample": cmd_counterexample,
    "martingale": cmd_martingale,
    "verify": cmd_verify,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config document; flags override its fields")
    common.add_argument("--seed", type=int)
    common.add_argument("--threads", type=int, help=f"worker processes (default ${THREADS_ENV} or 1)")
    common.add_argument("--out-dir", dest="out_dir")
    common.add_argument("--depth", type=int)
    common.add_argument("--samples", type=int)
    p = argparse.ArgumentParser(prog="zygmund", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name, parents=[common])
        if name == "eval":
            sp.add_argument("--point", action="append", help="comma-separated coordinates; repeatable")
        if name == "verify":
            sp.add_argument("--repeat", type=int, help="runs to compare for determinism (default 2)")
            sp.add_argument("--criteria", help="comma-separated criterion numbers")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    try:
        cfg = _load_config(args)
        if getattr(args, "point", None):
            cfg["points"] = [[float(v) for v in s.split(",")] for s in args.point]
        if getattr(args, "repeat", None) is not None:
            cfg["repeat"] = args.repeat
        if getattr(args, "criteria", None):
            cfg["criteria"] = [int(v) for v in args.criteria.split(",")]
        if cfg["threads"] < 1:
            raise ConfigError("threads must be at least 1")
        return COMMANDS[args.command](cfg)
    except (ConfigError, ValueError, KeyError, TypeError) as exc:
        report = {"error": type(exc).__name__, "message": str(exc), "subcommand": args.command}
        print(json.dumps(report), file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
