"""Command-line entry point.

Subcommands cover the desk-scale experiments (early-phase training, kappa/rho
table sweeps, the projected-vs-adaptive ascent identity, blow-up rate fits,
the delta-rescaling gap) and the rank-one KKT tools (construct, verify,
report).  Every run writes its artifacts under --out-dir; --json switches
stdout to a single machine-readable object.  Exit codes: 0 when every checked
item passes, 1 when a named check fails, 2 on usage errors.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from . import experiments as xp
from .kkt_points import (
    RankOneKKT,
    SmallProblem,
    assemble_weights,
    construct_rank_one,
    small_problem_radius,
    solve_small_problem,
    verify_theorem_conditions,
)
from .ncf import NcfProblem, kkt_report
from .nets import NetSpec, homogeneity_order

_EXPERIMENT_KINDS = {
    "early-phase": "early_phase",
    "table-sweep": "table_kappa_rho",
    "gd-vs-pga": "gd_vs_pga",
    "blowup-rate": "blowup_rate",
    "rescale-gap": "rescale_gap",
}


def _emit(args, payload: dict, lines: list[str]) -> None:
    if args.json:
        print(json.dumps(payload, sort_keys=True))
    else:
        for line in lines:
            print(line)


def _spec_from_args(args) -> NetSpec:
    if args.widths:
        widths = tuple(int(w) for w in args.widths.split(","))
    else:
        hidden = [args.hidden] * (args.L - 1)
        widths = tuple([args.d] + hidden + [1])
    return NetSpec(widths, alpha=args.alpha, p=args.p)


def _load_config(args, default_cfg: xp.ExperimentConfig) -> xp.ExperimentConfig:
    """Inline flags fill the config; an explicit --config file wins over them."""
    if getattr(args, "config", None):
        with open(args.config) as fh:
            d = json.load(fh)
        inline = [
            name
            for name in ("seed", "delta", "step", "iters", "out_dir")
            if getattr(args, name, None) not in (None, False)
        ]
        if inline:
            print(
                f"warning: --config overrides inline flags ({', '.join(inline)})",
                file=sys.stderr,
            )
        cfg = xp.ExperimentConfig.from_dict(d)
        if cfg.out_dir is None and args.out_dir:
            cfg = xp.ExperimentConfig.from_dict({**d, "out_dir": args.out_dir})
        return cfg
    return default_cfg


def _cmd_early_phase(args) -> int:
    seed = args.seed if args.seed is not None else 0
    base = (
        xp.relu_three_layer_config(seed=seed, out_dir=args.out_dir)
        if args.relu
        else xp.squared_relu_student_config(seed=seed, out_dir=args.out_dir)
    )
    overrides = {}
    if args.delta is not None:
        overrides["delta"] = args.delta
    if args.step is not None:
        overrides["step"] = args.step
    if args.iters is not None:
        overrides["iters"] = args.iters
    if overrides:
        base = xp.ExperimentConfig.from_dict({**base.to_dict(), **overrides})
    cfg = _load_config(args, base)
    result = xp.run_early_phase(cfg)
    payload = result.summary()
    _emit(
        args,
        payload,
        [
            f"final alignment      {result.final_alignment:.6f}",
            f"loss ratio           {result.loss_ratio:.6f}",
            f"norm ratio max|w|/d  {result.norm_ratio:.6f}",
            f"final hidden kappa   {result.final_hidden_kappa:.3e}",
            f"status               {'FAILED (diverged)' if result.failed else 'ok'}",
        ],
    )
    return 1 if result.failed else 0


def _cmd_table_sweep(args) -> int:
    spec = _spec_from_args(args)
    seeds = tuple(range(args.seed_base, args.seed_base + args.num_seeds))
    base = xp.ExperimentConfig(
        kind="table_kappa_rho",
        spec=spec,
        recipe=xp.DatasetRecipe(n=args.n, d=args.d, inputs="gaussian", labels="gaussian"),
        seeds=seeds,
        out_dir=args.out_dir,
        pga_step=args.step if args.step is not None else 1e-2,
        pga_max_iter=args.cap,
        burn_in=args.burn_in,
    )
    cfg = _load_config(args, base)
    result = xp.run_table_sweep(cfg)
    payload = result.summary()
    lines = [
        f"converged seeds      {payload['num_converged']}/{len(cfg.seeds)}",
        f"max kappa            {result.max_kappa:.3e}",
        f"max rho              {'n/a' if result.max_rho is None else f'{result.max_rho:.3e}'}",
    ]
    if result.unconverged_seeds:
        lines.append(f"warning: unconverged seeds excluded: {result.unconverged_seeds}")
    _emit(args, payload, lines)
    if payload["num_converged"] == 0:
        print("FAILED: no seed converged", file=sys.stderr)
        return 1
    return 0


def _cmd_gd_vs_pga(args) -> int:
    spec = _spec_from_args(args)
    base = xp.ExperimentConfig(
        kind="gd_vs_pga",
        spec=spec,
        recipe=xp.DatasetRecipe(n=args.n, d=args.d, inputs="gaussian", labels="gaussian"),
        step=args.step if args.step is not None else 1e-2,
        iters=args.steps,
        seeds=(args.seed if args.seed is not None else 0,),
        out_dir=args.out_dir,
    )
    cfg = _load_config(args, base)
    deviation = xp.run_gd_vs_pga(cfg)
    payload = {"max_relative_deviation": deviation, "steps": cfg.iters, "tol": args.tol}
    _emit(args, payload, [f"max relative deviation over {cfg.iters} steps: {deviation:.3e}"])
    if deviation > args.tol:
        print(f"FAILED: gd_pga_identity deviation {deviation:.3e} > {args.tol:.1e}", file=sys.stderr)
        return 1
    return 0


def _cmd_blowup_rate(args) -> int:
    spec = NetSpec(tuple([1] * (args.layers + 1)), alpha=1.0, p=1)
    base = xp.ExperimentConfig(
        kind="blowup_rate",
        spec=spec,
        step=args.step if args.step is not None else 1e-3,
        horizon=args.horizon,
        seeds=(0,),
        out_dir=args.out_dir,
    )
    cfg = _load_config(args, base)
    report = xp.run_blowup(cfg)
    expected = 1.0 / (homogeneity_order(spec) - 2)
    payload = {
        "fitted_exponent": report.fitted_exponent,
        "expected_exponent": expected,
        "T_star_estimate": report.T_star_estimate,
        "r_squared": report.r_squared,
    }
    _emit(
        args,
        payload,
        [
            f"fitted exponent      {report.fitted_exponent:.4f} (expected {expected:.4f})",
            f"T* estimate          {report.T_star_estimate:.6f}",
            f"r^2                  {report.r_squared:.6f}",
        ],
    )
    ok = abs(report.fitted_exponent - expected) <= 0.05 and report.r_squared >= 0.99
    if not ok:
        print("FAILED: blowup_exponent_fit outside tolerance", file=sys.stderr)
        return 1
    return 0


def _cmd_rescale_gap(args) -> int:
    spec = NetSpec((10, 20, 1), alpha=0.0, p=2)
    recipe = xp.DatasetRecipe(
        n=100, d=10, inputs="sphere", labels="teacher", teacher=NetSpec((10, 2, 1), alpha=0.0, p=2)
    )
    deltas = tuple(float(x) for x in args.deltas.split(","))
    base = xp.ExperimentConfig(
        kind="rescale_gap",
        spec=spec,
        recipe=recipe,
        step=args.step if args.step is not None else 2e-3,
        horizon=args.horizon,
        deltas=deltas,
        seeds=(args.seed if args.seed is not None else 0,),
        out_dir=args.out_dir,
    )
    cfg = _load_config(args, base)
    gaps = xp.run_rescale_gap(cfg)
    monotone = all(g2 < g1 for (_, g1), (_, g2) in zip(gaps, gaps[1:]))
    payload = {"gaps": [[d, g] for d, g in gaps], "monotone_decreasing": monotone}
    _emit(
        args,
        payload,
        [f"delta {d:<6g} sup gap {g:.6e}" for d, g in gaps]
        + [f"monotone decreasing: {monotone}"],
    )
    if not monotone:
        print("FAILED: rescale_gap_monotonicity violated", file=sys.stderr)
        return 1
    return 0


def _build_kkt_instance(args):
    spec = _spec_from_args(args)
    seed = args.seed if args.seed is not None else 0
    labels = getattr(args, "labels", "gaussian")
    recipe = xp.DatasetRecipe(n=args.n, d=spec.input_dim, inputs="gaussian", labels=labels)
    data = xp.sample_dataset(recipe, seed)
    prob = NcfProblem(spec, data, data.y)
    return spec, recipe, seed, data, prob


def _cmd_construct_kkt(args) -> int:
    spec, recipe, seed, data, prob = _build_kkt_instance(args)
    sp = SmallProblem(data, spec.alpha, spec.p, spec.depth)
    b1, small_rep = solve_small_problem(sp, seed)
    q = tuple(int(s) for s in args.q.split(",")) if args.q else None
    kkt = construct_rank_one(spec, b1, q=q)
    verdict = verify_theorem_conditions(kkt, prob)
    payload = {
        "spec": {"widths": list(spec.widths), "alpha": spec.alpha, "p": spec.p},
        "recipe": recipe.to_dict(),
        "seed": seed,
        "small_problem": {
            "radius_sq": small_problem_radius(spec.depth, spec.p),
            "value": small_rep.value,
            "residual": small_rep.residual,
        },
        "kkt": kkt.to_dict(),
        "verdict": verdict.to_dict(),
    }
    if args.out_dir:
        import os

        os.makedirs(args.out_dir, exist_ok=True)
        with open(f"{args.out_dir}/rank_one_kkt.json", "w") as fh:
            json.dump(payload, fh, sort_keys=True, indent=2)
            fh.write("\n")
    lines = [
        f"small problem: value {small_rep.value:.6f}, residual {small_rep.residual:.3e}"
    ]
    for c in verdict.checks:
        lines.append(
            f"{'PASS' if c.passed else 'FAIL'}  {c.name:<22} deviation {c.deviation:.3e} (tol {c.tolerance:.1e})"
        )
    _emit(args, payload, lines)
    if not verdict.all_passed:
        print(f"FAILED: {', '.join(verdict.failed())}", file=sys.stderr)
        return 1
    return 0


def _load_artifact(path: str):
    with open(path) as fh:
        d = json.load(fh)
    s = d["spec"]
    spec = NetSpec(tuple(s["widths"]), alpha=s["alpha"], p=s["p"])
    recipe = xp.DatasetRecipe.from_dict(d["recipe"])
    data = xp.sample_dataset(recipe, int(d["seed"]))
    prob = NcfProblem(spec, data, data.y)
    return spec, prob, RankOneKKT.from_dict(d["kkt"])


def _cmd_verify_kkt(args) -> int:
    spec, prob, kkt = _load_artifact(args.kkt)
    verdict = verify_theorem_conditions(kkt, prob)
    lines = [
        f"{'PASS' if c.passed else 'FAIL'}  {c.name:<22} deviation {c.deviation:.3e} (tol {c.tolerance:.1e})"
        for c in verdict.checks
    ]
    _emit(args, verdict.to_dict(), lines)
    if not verdict.all_passed:
        print(f"FAILED: {', '.join(verdict.failed())}", file=sys.stderr)
        return 1
    return 0


def _cmd_kkt_report(args) -> int:
    if args.kkt:
        spec, prob, kkt = _load_artifact(args.kkt)
        w = assemble_weights(kkt)
        check = True
    else:
        spec, _, seed, data, prob = _build_kkt_instance(args)
        w = xp.random_unit_weights(spec, np.random.default_rng([seed, 2]))
        check = False
    rep = kkt_report(prob, w, tol=args.tol)
    payload = rep.to_dict()
    _emit(
        args,
        payload,
        [
            f"ncf value        {rep.ncf_value:.6f}",
            f"lambda estimate  {rep.lambda_estimate:.6f}",
            f"residual         {rep.residual:.3e}",
            f"alignment        {rep.alignment:.10f}",
            f"nonnegative kkt  {rep.is_nonnegative_kkt}",
        ],
    )
    if check and rep.residual > args.tol:
        print(f"FAILED: kkt_residual {rep.residual:.3e} > {args.tol:.1e}", file=sys.stderr)
        return 1
    return 0


def _add_common(sub, with_config=True):
    sub.add_argument("--seed", type=int, default=None)
    sub.add_argument("--out-dir", default=None)
    sub.add_argument("--json", action="store_true", help="machine-readable stdout")
    if with_config:
        sub.add_argument("--config", default=None, help="JSON config file (wins over flags)")


def _add_spec_flags(sub, L=3, p=2, alpha=0.0, hidden=8, d=10, n=100):
    sub.add_argument("--L", type=int, default=L, help="number of layers")
    sub.add_argument("--p", type=int, default=p, help="activation power")
    sub.add_argument("--alpha", type=float, default=alpha, help="leak slope")
    sub.add_argument("--hidden", type=int, default=hidden, help="hidden width")
    sub.add_argument("--widths", default=None, help="full comma list, overrides --L/--hidden/--d")
    sub.add_argument("--d", type=int, default=d, help="input dimension")
    sub.add_argument("--n", type=int, default=n, help="sample count")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ncflow",
        description="Early-phase dynamics of homogeneous networks and rank-one "
        "KKT points of the constrained neural correlation function.",
    )
    subs = parser.add_subparsers(dest="command", required=True)

    s = subs.add_parser("early-phase", help="teacher-student run at small initialization")
    _add_common(s)
    s.add_argument("--delta", type=float, default=None)
    s.add_argument("--step", type=float, default=None)
    s.add_argument("--iters", type=int, default=None)
    s.add_argument("--relu", action="store_true", help="three-layer ReLU variant")
    s.set_defaults(func=_cmd_early_phase)

    s = subs.add_parser("table-sweep", help="kappa/rho sweep over random instances")
    _add_common(s)
    _add_spec_flags(s)
    s.add_argument("--num-seeds", type=int, default=30)
    s.add_argument("--seed-base", type=int, default=0)
    s.add_argument("--step", type=float, default=None, help="ascent step")
    s.add_argument("--cap", type=int, default=200_000, help="iteration cap per seed")
    s.add_argument("--burn-in", type=int, default=20_000, help="mini-batch steps for p=1")
    s.set_defaults(func=_cmd_table_sweep)

    s = subs.add_parser("gd-vs-pga", help="projected vs adaptive-step ascent identity")
    _add_common(s)
    _add_spec_flags(s, L=2, p=2, d=6, n=30)
    s.add_argument("--steps", type=int, default=50)
    s.add_argument("--step", type=float, default=None, help="ascent step")
    s.add_argument("--tol", type=float, default=1e-10)
    s.set_defaults(func=_cmd_gd_vs_pga)

    s = subs.add_parser("blowup-rate", help="finite-time escape exponent on scalar chains")
    _add_common(s)
    s.add_argument("--layers", type=int, default=3, choices=(3, 4))
    s.add_argument("--step", type=float, default=None)
    s.add_argument("--horizon", type=float, default=10.0)
    s.set_defaults(func=_cmd_blowup_rate)

    s = subs.add_parser("rescale-gap", help="training-flow vs ascent-flow gap across deltas")
    _add_common(s)
    s.add_argument("--deltas", default="0.2,0.1,0.05")
    s.add_argument("--step", type=float, default=None, help="time step in rescaled time")
    s.add_argument("--horizon", type=float, default=4.0)
    s.set_defaults(func=_cmd_rescale_gap)

    s = subs.add_parser("construct-kkt", help="build and certify a rank-one KKT point")
    _add_common(s, with_config=False)
    _add_spec_flags(s)
    s.add_argument("--q", default=None, help="comma signs for layers 2..L, e.g. 1,-1")
    s.add_argument(
        "--labels",
        default="halfnormal",
        choices=("halfnormal", "gaussian"),
        help="label draw; one-signed labels keep the reduced problem convex",
    )
    s.set_defaults(func=_cmd_construct_kkt)

    s = subs.add_parser("verify-kkt", help="re-verify a saved rank-one KKT artifact")
    _add_common(s, with_config=False)
    s.add_argument("--kkt", required=True, help="path to rank_one_kkt.json")
    s.set_defaults(func=_cmd_verify_kkt)

    s = subs.add_parser("kkt-report", help="first-order report at saved or random weights")
    _add_common(s, with_config=False)
    _add_spec_flags(s)
    s.add_argument("--kkt", default=None, help="path to rank_one_kkt.json")
    s.add_argument("--tol", type=float, default=1e-8)
    s.set_defaults(func=_cmd_kkt_report)

    return parser


def dispatch(argv) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse reports usage errors with code 2
        return int(exc.code) if exc.code is not None else 2
    return args.func(args)


def main() -> None:
    sys.exit(dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
