"""Single entry point: simulate / gcomp / gtest / estimate / mle / cfsim / verify.

Every run is deterministic by default (fixed seed constant), logs its resolved
configuration as one JSON line to stderr, and writes outputs atomically.
Exit codes: 0 success, 1 domain error, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import cfsim as cfsim_mod
from . import dgp as dgp_mod
from . import gcomp as gcomp_mod
from . import gest as gest_mod
from . import io as io_mod
from . import mle as mle_mod
from . import oracle as oracle_mod
from . import rng as rng_mod
from .core import Cohort, SnftmError
from .shift import ShiftParams

SCHEMA_VERSION = io_mod.SCHEMA_VERSION
_CHUNK = 1024


def _log_run(sub: str, args: argparse.Namespace):
    payload = {"command": sub}
    payload.update({k: v for k, v in sorted(vars(args).items()) if k != "func" and v is not None})
    print(json.dumps(payload, default=str), file=sys.stderr)


def _write_json(path, obj):
    obj = {"schema_version": SCHEMA_VERSION, **obj}
    io_mod.atomic_write_text(path, json.dumps(obj, indent=2, default=_jsonable) + "\n")


def _jsonable(v):
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    if isinstance(v, np.ndarray):
        return v.tolist()
    raise TypeError(f"not JSON-serializable: {type(v)}")


def _write_curve_csv(path, rows, header="t,survival,stderr"):
    lines = [f"# schema_version={SCHEMA_VERSION}", header]
    lines += [",".join(repr(float(c)) for c in row) for row in rows]
    io_mod.atomic_write_text(path, "\n".join(lines) + "\n")


def _parse_psi(text: str) -> ShiftParams:
    return ShiftParams(tuple(float(v) for v in text.split(",")))


def _chunked(n: int):
    return [(lo, min(lo + _CHUNK, n)) for lo in range(0, n, _CHUNK)]


def _cmd_simulate(args) -> int:
    cfg = io_mod.load_dgp_config(args.dgp)
    uniforms = rng_mod.stream(args.seed, "dgp").random((args.n, cfg.draws_per_subject))
    model = cfg.shift_model()

    def assemble(span):
        lo, hi = span
        return [dgp_mod._assemble(cfg, model, uniforms[i]) for i in range(lo, hi)]

    with ThreadPoolExecutor(max_workers=args.threads) as pool:
        pieces = list(pool.map(assemble, _chunked(args.n)))
    subjects = tuple(t for piece in pieces for t in piece)
    cohort = Cohort(subjects, cfg.grid)
    io_mod.write_cohort(
        args.out, cohort,
        covariate_levels=cfg.covariate_law.levels,
        treatment_levels=cfg.treatment_law.levels,
    )
    return 0


def _load_laws(path, args):
    if str(path).endswith(".csv"):
        cohort, _meta = io_mod.read_cohort(path)
        return gcomp_mod.estimate_laws(cohort), cohort.grid
    cfg = io_mod.load_dgp_config(path)
    return dgp_mod.true_conditional_laws(cfg), cfg.grid


def _cmd_gcomp(args) -> int:
    laws, grid = _load_laws(args.laws, args)
    regime = io_mod.load_regime(args.regime, grid.K + 1)
    t_grid = io_mod.parse_t_grid(args.t_grid)
    if args.mc:
        res = gcomp_mod.mc_gcomp(laws, regime, t_grid, args.mc, seed=args.seed)
        rows = zip(res.t_grid, res.survival, res.stderr)
    else:
        rows = ((t, gcomp_mod.s_marginal(laws, regime, float(t)), 0.0) for t in t_grid)
    _write_curve_csv(args.out, rows)
    return 0


def _cmd_gtest(args) -> int:
    cohort, _ = io_mod.read_cohort(args.cohort)
    spec = io_mod.load_treatment_spec(args.spec)
    psi0 = _parse_psi(args.psi0) if args.psi0 else None
    report = gest_mod.g_test(cohort, spec, psi0)
    payload = {"psi0": list(psi0.psi) if psi0 else None, **report.to_dict()}
    if args.out:
        _write_json(args.out, payload)
    else:
        print(json.dumps({"schema_version": SCHEMA_VERSION, **payload}, indent=2))
    return 0


def _cmd_estimate(args) -> int:
    cohort, _ = io_mod.read_cohort(args.cohort)
    spec = io_mod.load_treatment_spec(args.spec)
    box = []
    for part in args.box.split(","):
        lo, hi = part.split(":")
        box.append((float(lo), float(hi)))
    est = gest_mod.estimate_psi(
        cohort, spec, box,
        grid_pitch=args.pitch,
        compute_ci=not args.no_ci,
        tol_alpha=args.tol,
    )
    _write_json(args.out, {
        "psi_hat": est.psi.tolist(),
        "components": list(est.components),
        "active": est.active.tolist(),
        "se": est.se.tolist(),
        "roots": [list(r) for r in est.roots],
        "multiple_roots": est.multiple_roots,
        "ci_interval": list(est.ci_interval()) if len(est.ci_grid) else None,
        "ci_grid": est.ci_grid.tolist(),
        "ci_mask": est.ci_mask.tolist(),
        "alpha_trace": est.alpha_trace.tolist(),
        "h_residual": est.h_residual.tolist(),
    })
    return 0


def _cmd_mle(args) -> int:
    cohort, _ = io_mod.read_cohort(args.cohort)
    template = io_mod.load_mle_template(args.model, cohort.grid)
    fit = mle_mod.fit(cohort, template)
    report = mle_mod.test_null(cohort, fit)
    cov_probs = {
        f"k={k}|l={','.join(map(str, lp))}|a={','.join(map(str, ap))}|bin={b}": list(v)
        for (k, lp, ap, b), v in sorted(fit.model.covariate_probs.items())
    }
    _write_json(args.out, {
        "psi_hat": list(fit.model.psi.psi),
        "se": np.sqrt(np.diag(fit.psi_cov)).tolist(),
        "loglik": fit.loglik,
        "information": fit.information.tolist(),
        "psi_cov": fit.psi_cov.tolist(),
        "baseline_bounds": list(fit.model.baseline_bounds),
        "baseline_rates": list(fit.model.baseline_rates),
        "covariate_probs": cov_probs,
        "converged": fit.converged,
        "grad_norm": fit.grad_norm,
        "n_evals": fit.n_evals,
        "test": report.to_dict(),
    })
    return 0


def _cmd_cfsim(args) -> int:
    spec = io_mod._load_json(args.world)
    if "dgp" in spec:
        cfg = io_mod.load_dgp_config(Path(args.world).parent / spec["dgp"])
        psi = ShiftParams(tuple(spec["psi"])) if "psi" in spec else None
        world = cfsim_mod.FittedWorld.from_dgp_config(cfg, psi)
    elif "cohort" in spec:
        cohort, _ = io_mod.read_cohort(Path(args.world).parent / spec["cohort"])
        world = cfsim_mod.FittedWorld.from_cohort(
            cohort,
            ShiftParams(tuple(spec["psi"])),
            tuple(spec.get("thresholds", ())),
        )
    else:
        raise SnftmError("world config needs a 'dgp' or 'cohort' entry")
    regime = io_mod.load_regime(args.regime, world.grid.K + 1)
    t_grid = io_mod.parse_t_grid(args.t_grid) if args.t_grid else None
    res = cfsim_mod.simulate_counterfactual(
        world, regime, args.n, seed=args.seed, t_grid=t_grid
    )
    _write_curve_csv(args.out, res.to_rows())
    if args.mean_out:
        _write_json(args.mean_out, {"mean_survival_time": res.mean, "n": args.n})
    return 0


def _cmd_verify(args) -> int:
    cfg = io_mod.load_dgp_config(args.dgp)
    world = oracle_mod.enumerate_world(cfg)
    reports = oracle_mod.run_suite(world, args.suite)
    passed = all(r.passed for r in reports.values())
    payload = {
        "suite": args.suite,
        "passed": passed,
        "reports": {name: rep.to_dict() for name, rep in sorted(reports.items())},
    }
    if args.out:
        _write_json(args.out, payload)
    else:
        print(json.dumps({"schema_version": SCHEMA_VERSION, **payload}, indent=2))
    return 0 if passed else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="snftm",
        description="Structural nested failure time models: simulation, "
        "G-computation, G-estimation, likelihood inference and exact verification.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out_required=True):
        p.add_argument(
            "--seed", type=int, default=rng_mod.DEFAULT_SEED,
            help="master seed (fixed constant by default: runs are reproducible)",
        )
        p.add_argument("--threads", type=int, default=1, help="worker threads")
        p.add_argument("--tol", type=float, default=1e-6, help="numeric tolerance knob")
        if out_required:
            p.add_argument("--out", required=True, help="output path")
        else:
            p.add_argument("--out", default=None, help="output path (stdout if omitted)")

    p = sub.add_parser("simulate", help="draw a cohort from a world config")
    p.add_argument("--dgp", required=True)
    p.add_argument("--n", type=int, required=True)
    common(p)
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("gcomp", help="counterfactual survival curve by G-computation")
    p.add_argument("--laws", required=True, help="world config JSON (exact) or cohort CSV (estimated)")
    p.add_argument("--regime", required=True)
    p.add_argument("--t-grid", required=True, help="a:b:step")
    p.add_argument("--mc", type=int, default=0, help="Monte-Carlo draws instead of exact recursion")
    common(p)
    p.set_defaults(func=_cmd_gcomp)

    p = sub.add_parser("gtest", help="G-null / candidate-parameter test")
    p.add_argument("--cohort", required=True)
    p.add_argument("--spec", required=True)
    p.add_argument("--psi0", default=None, help="candidate psi1,psi2,psi3 (default: identity)")
    common(p, out_required=False)
    p.set_defaults(func=_cmd_gtest)

    p = sub.add_parser("estimate", help="G-estimation of the shift parameters")
    p.add_argument("--cohort", required=True)
    p.add_argument("--spec", required=True)
    p.add_argument("--box", required=True, help="lo:hi[,lo:hi...] search box")
    p.add_argument("--pitch", type=float, default=0.01, help="confidence-grid pitch")
    p.add_argument("--no-ci", action="store_true")
    common(p)
    p.set_defaults(func=_cmd_estimate)

    p = sub.add_parser("mle", help="parametric maximum likelihood fit and null tests")
    p.add_argument("--cohort", required=True)
    p.add_argument("--model", required=True)
    common(p)
    p.set_defaults(func=_cmd_mle)

    p = sub.add_parser("cfsim", help="simulate counterfactual outcomes under a regime")
    p.add_argument("--world", required=True)
    p.add_argument("--regime", required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--t-grid", default=None)
    p.add_argument("--mean-out", default=None)
    common(p)
    p.set_defaults(func=_cmd_cfsim)

    p = sub.add_parser("verify", help="exact theorem checks on a small world")
    p.add_argument("--dgp", required=True)
    p.add_argument("--suite", choices=("gcomp", "blip", "null", "all"), default="all")
    common(p, out_required=False)
    p.set_defaults(func=_cmd_verify)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code) if e.code else 0
    _log_run(args.command, args)
    try:
        return args.func(args)
    except SnftmError as e:
        print(f"snftm: error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
