"""Command-line harness.

Verbs: ``run --config <path>``, ``compare --problem <family> --algs <list>
--iters <n> --out <dir>``, ``reference --config <path>``, and ``selftest``
(randomized oracle-equivalence suite).  Exit codes: 0 ok, 2 config error,
3 solver failure, 4 I/O error.  ``QNSPLIT_CACHE_DIR`` overrides the
reference cache location.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from .experiment import (ALGORITHMS, ConfigError, ExperimentConfig,
                         ProblemSpec, build_problem, parse_config,
                         reference_gap, run_experiment)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SOLVER = 3
EXIT_IO = 4


def _print_summary(summary) -> None:
    ref = summary.reference
    print(f"problem {summary.problem_hash[:12]}  reference value {ref.value:.9g}"
          + (f"  (pd certificate {ref.certificate:.3e})" if ref.certificate is not None else ""))
    for name, alg in summary.algorithms.items():
        last_gap = alg.gap[-1] if alg.gap.size else float("nan")
        q = f"{alg.q:.5f}" if alg.q is not None else "n/a"
        print(f"  {name:8s} iters={alg.iterations:5d}  final gap={last_gap:.6e}  "
              f"rate q={q}  csv={alg.csv_path}")


def _cmd_run(args) -> int:
    cfg = parse_config(args.config)
    summary = run_experiment(cfg)
    _print_summary(summary)
    return EXIT_OK


def _cmd_compare(args) -> int:
    algs = tuple(a.strip() for a in args.algs.split(",") if a.strip())
    problem_defaults = {
        "deconvolution": dict(mu=0.001, tau=0.09, sigma=0.9),
        "infconv": dict(mu=0.01, tau=0.1, sigma=0.1),
        "denoising": dict(mu=0.1, tau=0.1, sigma=0.1),
    }
    if args.problem not in problem_defaults:
        raise ConfigError(f"unknown problem family {args.problem!r}")
    base = problem_defaults[args.problem]
    spec = ProblemSpec(
        family=args.problem,
        size=args.size,
        mu=args.mu if args.mu is not None else base["mu"],
        tau=args.tau if args.tau is not None else base["tau"],
        sigma=args.sigma if args.sigma is not None else base["sigma"],
    )
    gamma_hat = args.gamma_hat if args.gamma_hat is not None else \
        (2.0 if args.problem in ("infconv", "denoising") else 5.0)
    alpha_kind = "fig3" if args.problem == "denoising" else "fig1"
    cfg = ExperimentConfig(
        problem=spec, algorithms=algs, iterations=args.iters,
        metric_mode="fixed", gamma_hat=gamma_hat, alpha_kind=alpha_kind,
        seed=args.seed, reference_iterations=args.reference_iters,
        output_dir=args.out)
    for a in algs:
        if a not in ALGORITHMS:
            raise ConfigError(f"unknown algorithm {a!r}; valid: {list(ALGORITHMS)}")
    summary = run_experiment(cfg)
    _print_summary(summary)
    return EXIT_OK


def _cmd_reference(args) -> int:
    cfg = parse_config(args.config)
    problem = build_problem(cfg)
    n = args.iters if args.iters is not None else cfg.reference_iterations
    ref = reference_gap(problem, n)
    out = {"value": ref.value, "dual": ref.dual,
           "certificate": ref.certificate, "n_iters": ref.n_iters}
    print(json.dumps(out))
    return EXIT_OK


def _cmd_selftest(args) -> int:
    from .metrics import DenseMetric
    from .prox import (box_operator, l1_shrinkage_operator,
                       pairwise_ball_operator)
    from .resolvent import resolve_perturbed

    rng = np.random.default_rng(args.seed)
    catalog = [box_operator(-0.5, 0.8), l1_shrinkage_operator(0.3),
               pairwise_ball_operator(0.6)]
    failures = 0
    for trial in range(args.trials):
        n = int(rng.integers(2, 9)) * 2
        r = int(rng.integers(1, 4))
        Q = np.linalg.qr(rng.standard_normal((n, n)))[0]
        M = DenseMetric(Q @ np.diag(rng.uniform(0.5, 2.5, n)) @ Q.T)
        U = rng.standard_normal((n, r))
        sign = "plus" if trial % 2 == 0 else "minus"
        if sign == "minus":
            U *= 0.6 * np.sqrt(M.rho_min) / np.linalg.norm(U, 2)
        V = M.matrix + (1.0 if sign == "plus" else -1.0) * (U @ U.T)
        z = 2.0 * rng.standard_normal(n)
        T = catalog[trial % len(catalog)]
        x, _ = resolve_perturbed(T, M, sign, U, z)
        # independent forward-backward oracle on the defining inclusion
        s = 1.0 / (2.0 * np.linalg.norm(V, 2))
        xo = z.copy()
        for _ in range(200000):
            xn = T.resolvent(xo - s * (V @ (xo - z)), s)
            if np.linalg.norm(xn - xo) <= 1e-12 * (1.0 + np.linalg.norm(z)):
                xo = xn
                break
            xo = xn
        err = float(np.linalg.norm(x - xo))
        ok = err <= 1e-8
        failures += 0 if ok else 1
        if not ok or args.verbose:
            print(f"trial {trial:3d} n={n} r={r} sign={sign:5s} err={err:.3e} "
                  f"{'ok' if ok else 'FAIL'}")
    print(f"selftest: {args.trials - failures}/{args.trials} oracle-equivalence checks passed")
    return EXIT_OK if failures == 0 else EXIT_SOLVER


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="qnsplit",
        description="Quasi-Newton forward-backward / PDHG experiment harness")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run an experiment config")
    p_run.add_argument("--config", required=True)
    p_run.set_defaults(func=_cmd_run)

    p_cmp = sub.add_parser("compare", help="run a roster comparison with defaults")
    p_cmp.add_argument("--problem", required=True,
                       choices=["deconvolution", "infconv", "denoising"])
    p_cmp.add_argument("--algs", default=",".join(ALGORITHMS))
    p_cmp.add_argument("--iters", type=int, default=300)
    p_cmp.add_argument("--out", required=True)
    p_cmp.add_argument("--size", type=int, default=64)
    p_cmp.add_argument("--mu", type=float)
    p_cmp.add_argument("--tau", type=float)
    p_cmp.add_argument("--sigma", type=float)
    p_cmp.add_argument("--gamma-hat", type=float, dest="gamma_hat")
    p_cmp.add_argument("--seed", type=int, default=0)
    p_cmp.add_argument("--reference-iters", type=int, default=10000,
                       dest="reference_iters")
    p_cmp.set_defaults(func=_cmd_compare)

    p_ref = sub.add_parser("reference", help="compute (and cache) the reference value")
    p_ref.add_argument("--config", required=True)
    p_ref.add_argument("--iters", type=int)
    p_ref.set_defaults(func=_cmd_reference)

    p_self = sub.add_parser("selftest", help="randomized oracle-equivalence suite")
    p_self.add_argument("--trials", type=int, default=50)
    p_self.add_argument("--seed", type=int, default=0)
    p_self.add_argument("--verbose", action="store_true")
    p_self.set_defaults(func=_cmd_selftest)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse uses code 2 for usage errors, which matches our config code
        return int(exc.code) if exc.code else EXIT_OK
    try:
        return args.func(args)
    except (ConfigError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (RuntimeError, ValueError) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
