"""Command-line interface.

Subcommands: generate, verify, design, learn, check-assumptions, separate,
survival, report.  The process exits 0 iff every verification the invocation
ran has passed.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import __version__
from .design import kw_design
from .dmq import default_config, run_dmq
from .experiments import (ExperimentSpec, run_separation, survival_decay)
from .instances import (build_variant, load_instance, save_instance,
                        verify_gap, verify_realizability)
from .mdp import load_json, save_json
from .oracle import optimal_values
from .packs import build_pack, verify_pack
from .policies import LinearGreedyPolicy, eps_greedy_policy, uniform_policy
from .regression import estimate_c_hyper, estimate_c_var
from .reports import emit_results, render_survival_figure, render_value_vs_budget, write_csv


def _add_generate(sub):
    p = sub.add_parser("generate", help="build a hard instance and write it to JSON")
    p.add_argument("--variant", default="base",
                   choices=["base", "reference", "gap_complete", "reachable"])
    p.add_argument("--d", type=int, required=True)
    p.add_argument("--m", type=int, required=True)
    p.add_argument("--gamma", type=float, required=True)
    p.add_argument("--horizon", "--H", dest="horizon", type=int, required=True)
    p.add_argument("--a-star", type=int, default=1)
    p.add_argument("--pack-seed", type=int, default=0)
    p.add_argument("--retry-budget", type=int, default=1_000_000)
    p.add_argument("--exact-basis", action="store_true",
                   help="use the standard basis (requires m <= d)")
    p.add_argument("--reward-mode", default="bellman_consistent",
                   choices=["bellman_consistent", "strict_paper"])
    p.add_argument("-o", "--out", required=True)


def _cmd_generate(args) -> int:
    pack = build_pack(args.d, args.m, args.gamma, seed=args.pack_seed,
                      retry_budget=args.retry_budget, exact_basis=args.exact_basis)
    inst = build_variant(args.variant, pack, args.a_star, args.horizon, args.reward_mode)
    save_instance(inst, args.out)
    print(f"wrote {args.variant} instance (d={args.d}, m={args.m}, gamma={args.gamma}, "
          f"H={args.horizon}) to {args.out}")
    return 0


def _cmd_verify(args) -> int:
    inst = load_instance(args.instance)
    ok = True
    rows = []
    pack_report = verify_pack(inst.pack)
    pack_ok = pack_report.max_abs_inner <= inst.pack.gamma + 1e-12
    ok &= pack_ok
    rows.append(("pack max |<v_i,v_j>|", f"{pack_report.max_abs_inner:.3e}",
                 f"<= {inst.pack.gamma:g}", pack_ok))
    if inst.variant == "reference":
        rows.append(("realizability", "n/a (reference)", "", True))
        rows.append(("minimum gap", "n/a (reference)", "", True))
    else:
        tables = optimal_values(inst.mdp)
        real = verify_realizability(inst, tol=args.tol, tables=tables)
        ok &= real.passed
        rows.append(("realizability max residual", f"{real.max_residual:.3e}",
                     f"<= {args.tol:g} at (h,s,a)={real.witness}", real.passed))
        gap = verify_gap(inst, tables=tables)
        ok &= gap.passed
        detail = ("no positive gaps" if gap.report.delta_min is None else
                  f"delta_min={gap.report.delta_min:.6g} at {gap.report.witness}, "
                  f"excluded={gap.excluded_states}")
        rows.append(("minimum gap", detail, f">= {gap.bound:.6g}", gap.passed))
    width = max(len(r[0]) for r in rows)
    for name, value, expect, passed in rows:
        print(f"{name:<{width}}  {value}  {expect}  {'PASS' if passed else 'FAIL'}")
    return 0 if ok else 1


def _cmd_design(args) -> int:
    obj = load_json(args.features)
    X = np.asarray(obj["vectors"], dtype=float)
    dist = kw_design(X, eps_design=args.eps, max_iter=args.max_iter)
    payload = {
        "support": [int(i) for i in dist.support],
        "weights": [float(w) for w in dist.weights],
        "g_value": dist.g_value,
        "effective_dim": dist.effective_dim,
        "certified": dist.certified,
        "iterations": dist.iterations,
    }
    save_json(payload, args.out)
    print(f"g_value={dist.g_value:.6g} effective_dim={dist.effective_dim} "
          f"certified={dist.certified} -> {args.out}")
    return 0 if dist.certified else 1


def _cmd_learn(args) -> int:
    inst = load_instance(args.instance)
    if args.config:
        raw = load_json(args.config)
        config = default_config(raw.get("epsilon", 0.1), inst.features.dim,
                                inst.mdp.horizon, raw.get("assumption_mode", "low_variance"),
                                scale_factor=raw.get("scale_factor", 1.0),
                                budget=raw.get("budget"))
    else:
        config = default_config(args.epsilon, inst.features.dim, inst.mdp.horizon,
                                args.mode, scale_factor=args.scale_factor,
                                budget=args.budget)
    policy, stats = run_dmq(inst.mdp, inst.features, config, seed=args.seed)
    save_json({"thetas": [[float(x) for x in row] for row in policy.thetas]},
              args.policy_out)
    save_json(stats.to_json_dict(), args.stats_out)
    print(f"trajectories={stats.trajectories} restarts={stats.restarts_total} "
          f"truncated={stats.truncated} |Pi|={list(stats.policy_set_sizes)}")
    return 0


def _cmd_check_assumptions(args) -> int:
    inst = load_instance(args.instance)
    mdp, feats = inst.mdp, inst.features
    if args.policy == "uniform":
        policy = uniform_policy(mdp)
    elif args.policy == "eps_greedy":
        policy = eps_greedy_policy(mdp, feats, None, args.eps)
    else:
        thetas = (inst.theta_star if inst.theta_star is not None
                  else np.zeros((mdp.horizon, feats.dim)))
        policy = LinearGreedyPolicy(thetas)
    cvar = estimate_c_var(mdp, policy, features=feats)
    from .mdp import rollout
    from .rng import NS_MONTE_CARLO, stream

    batch = rollout(mdp, policy, args.hyper_samples, stream(args.seed, NS_MONTE_CARLO), feats)
    per_level = []
    for h in range(1, mdp.horizon + 1):
        X = feats.padded[batch.states[:, h - 1], batch.slots[:, h - 1]]
        rep = estimate_c_hyper(X, mode="spectral")
        per_level.append({"level": h, "c_hyper_lower_bound": rep.estimate})
    payload = {
        "policy": args.policy,
        "c_var": {"estimate": cvar.estimate, "undefined": cvar.undefined,
                  "per_level": list(cvar.breakdown)},
        "c_hyper": {"mode": "spectral", "samples": args.hyper_samples,
                    "lower_bound_only": True, "per_level": per_level},
    }
    save_json(payload, args.out)
    est = "undefined (policy optimal on visited support)" if cvar.undefined else f"{cvar.estimate:.6g}"
    print(f"C_var[{args.policy}] = {est}; "
          f"C_hyper lower bounds per level written to {args.out}")
    return 0


def _cmd_separate(args) -> int:
    raw = load_json(args.spec)
    reports = []
    specs = raw if isinstance(raw, list) else [raw]
    for one in specs:
        spec = ExperimentSpec(
            instance=one["instance"],
            learner=one["learner"],
            budget=int(one["budget"]),
            trials=int(one["trials"]),
            seed=int(one.get("seed", 0)),
            access=one.get("access"),
            learner_options=one.get("learner_options", {}),
            name=one.get("name", f"separation_{one['learner']}"),
        )
        report = run_separation(spec, gap_threshold=one.get("gap_threshold", 0.05))
        reports.append(report)
        agg = report.aggregates
        print(f"{spec.learner}: mean gap {agg['mean_value_gap']:.4f}, "
              f"ever-took-a* {agg['ever_took_a_star_rate']:.2f}, "
              f"exactly optimal {agg['frac_exactly_optimal']:.2f}")
    emit_results(reports, args.out)
    print(f"results in {args.out}")
    return 0


def _cmd_survival(args) -> int:
    inst = load_instance(args.instance)
    policies = {}
    for name in args.policies.split(","):
        name = name.strip()
        if name == "uniform":
            policies[name] = uniform_policy(inst.mdp)
        elif name == "eps_greedy":
            policies[name] = eps_greedy_policy(inst.mdp, inst.features, None, args.eps)
        else:
            raise SystemExit(f"unknown policy {name!r} (use uniform, eps_greedy)")
    table = survival_decay(inst, policies, args.episodes, seed=args.seed)
    emit_results([table], args.out)
    print(f"survival table ({args.episodes} episodes) in {args.out}")
    return 0


def _cmd_report(args) -> int:
    src = args.source
    survived, separated = [], []
    for fn in sorted(os.listdir(src)):
        if not fn.endswith(".json"):
            continue
        with open(os.path.join(src, fn)) as fh:
            payload = json.load(fh)
        kind = payload.get("kind")
        if kind == "survival":
            survived.append(payload)
        elif kind == "separation":
            separated.append(payload)
    os.makedirs(args.out, exist_ok=True)
    made = []
    if survived:
        made.append(render_survival_figure(survived, os.path.join(args.out, "survival.svg")))
    if separated:
        made.append(render_value_vs_budget(separated,
                                           os.path.join(args.out, "value_vs_budget.svg")))
        rows = [[p["name"], p["learner"], p["budget"],
                 p["aggregates"]["mean_value_gap"],
                 p["aggregates"]["ever_took_a_star_rate"],
                 p["aggregates"]["frac_exactly_optimal"]] for p in separated]
        made.append(write_csv(os.path.join(args.out, "summary.csv"),
                              ["name", "learner", "budget", "mean_value_gap",
                               "ever_took_a_star_rate", "frac_exactly_optimal"], rows))
    if not made:
        print(f"no report payloads found in {src}")
        return 1
    for path in made:
        print(f"wrote {path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="linrl", description=__doc__)
    ap.add_argument("--version", action="version", version=f"linrl {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    _add_generate(sub)

    p = sub.add_parser("verify", help="check realizability, gap, and pack certificate")
    p.add_argument("instance")
    p.add_argument("--tol", type=float, default=1e-9)

    p = sub.add_parser("design", help="G-optimal design over a feature set")
    p.add_argument("features", help='JSON file with {"vectors": [[...], ...]}')
    p.add_argument("--eps", type=float, default=0.01)
    p.add_argument("--max-iter", type=int, default=100_000)
    p.add_argument("-o", "--out", required=True)

    p = sub.add_parser("learn", help="run the DMQ learner on an instance")
    p.add_argument("instance")
    p.add_argument("--config", help="JSON config (epsilon, assumption_mode, scale_factor, budget)")
    p.add_argument("--epsilon", type=float, default=0.1)
    p.add_argument("--mode", default="low_variance",
                   choices=["low_variance", "hypercontractive"])
    p.add_argument("--scale-factor", type=float, default=1.0)
    p.add_argument("--budget", type=int)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--policy-out", default="policy.json")
    p.add_argument("--stats-out", default="stats.json")

    p = sub.add_parser("check-assumptions", help="estimate C_var / C_hyper for a policy")
    p.add_argument("instance")
    p.add_argument("--policy", default="uniform", choices=["uniform", "eps_greedy", "greedy"])
    p.add_argument("--eps", type=float, default=0.1)
    p.add_argument("--hyper-samples", type=int, default=20_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-o", "--out", default="assumptions.json")

    p = sub.add_parser("separate", help="run the separation study from a spec file")
    p.add_argument("--spec", required=True)
    p.add_argument("--out", default="results")

    p = sub.add_parser("survival", help="survival-decay table for an instance")
    p.add_argument("instance")
    p.add_argument("--episodes", type=int, default=100_000)
    p.add_argument("--policies", default="uniform,eps_greedy")
    p.add_argument("--eps", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="results")

    p = sub.add_parser("report", help="render figures from emitted results")
    p.add_argument("source", help="directory containing emitted .json payloads")
    p.add_argument("--out", default="figures")
    return ap


_DISPATCH = {
    "generate": _cmd_generate,
    "verify": _cmd_verify,
    "design": _cmd_design,
    "learn": _cmd_learn,
    "check-assumptions": _cmd_check_assumptions,
    "separate": _cmd_separate,
    "survival": _cmd_survival,
    "report": _cmd_report,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return _DISPATCH[args.command](args)


if __name__ == "__main__":
    sys.exit(main())
