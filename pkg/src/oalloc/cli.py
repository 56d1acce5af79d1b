"""Command line entry point.

Subcommands: generate, train, run, opt, evaluate, report.  Exit codes:
0 on success, 1 on usage errors, 2 on runtime failures.
"""

from __future__ import annotations

import argparse
import sys


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on usage errors; the CLI contract wants 1
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _float_or_auto(value: str):
    if value == "auto":
        return "auto"
    return float(value)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="oalloc",
                     description="Online allocation with replenishable budgets")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    from .workload import GeneratorParams

    gp = GeneratorParams()
    g = sub.add_parser("generate", help="generate a synthetic dataset directory")
    g.add_argument("--n", type=int, required=True, help="number of instances")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True, help="dataset directory to create")
    g.add_argument("--t", type=int, default=gp.T, help="rounds per instance")
    g.add_argument("--b1", type=float, default=gp.b1)
    g.add_argument("--bmax", type=float, default=gp.bmax)
    g.add_argument("--xbar", type=float, default=gp.xbar)
    g.add_argument("--utility", choices=["logserve", "linear", "mixed"],
                   default=gp.utility_kind)
    g.add_argument("--solar-amplitude", type=float, default=gp.solar_amplitude)

    t = sub.add_parser("train", help="train the allocation policy on a dataset")
    t.add_argument("--dataset", required=True)
    t.add_argument("--out", required=True, help="model file to write")
    t.add_argument("--epochs", type=int, default=40)
    t.add_argument("--population", type=int, default=16)
    t.add_argument("--batch-size", type=int, default=8)
    t.add_argument("--sigma", type=float, default=0.1)
    t.add_argument("--learning-rate", type=float, default=0.1)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--lambda", dest="lam", type=float, default=0.3)
    t.add_argument("--R", dest="slack", type=float, default=0.0)
    t.add_argument("--expert", choices=["oacp", "oacp-plus"], default="oacp-plus")
    t.add_argument("--t-star", type=int, default=24)
    t.add_argument("--quiet", action="store_true")

    r = sub.add_parser("run", help="run one algorithm on one instance CSV")
    r.add_argument("--algo", required=True,
                   choices=["oacp", "oacp-plus", "la-oacp", "equal", "greedy", "dmd"])
    r.add_argument("--instance", required=True, help="instance CSV (with JSON sidecar)")
    r.add_argument("--eta", type=_float_or_auto, default="auto")
    r.add_argument("--reference", choices=["l2", "entropy"], default="l2")
    r.add_argument("--t-star", type=int, default=24)
    r.add_argument("--beta", type=_float_or_auto, default="auto")
    r.add_argument("--expert", choices=["oacp", "oacp-plus"], default="oacp-plus")
    r.add_argument("--lambda", dest="lam", type=float, default=0.3)
    r.add_argument("--R", dest="slack", type=float, default=0.0)
    r.add_argument("--model", help="policy model file (la-oacp only)")
    r.add_argument("--out", help="trace CSV to write")
    r.add_argument("--seed", type=int, default=0)

    o = sub.add_parser("opt", help="offline optimum of one instance CSV")
    o.add_argument("--instance", required=True)
    o.add_argument("--method", choices=["concave", "dp"], default="concave")
    o.add_argument("--grid", type=int, default=1001, help="budget levels for the DP")
    o.add_argument("--seed", type=int, default=0)

    e = sub.add_parser("evaluate", help="run the configured algorithm suite")
    e.add_argument("--config", required=True, help="experiment config JSON")
    e.add_argument("--seed", type=int, default=None, help="override the config seed")

    p = sub.add_parser("report", help="render figures and a summary table")
    p.add_argument("--results", required=True, help="directory written by evaluate")
    p.add_argument("--out", default=None, help="report directory (default: results/report)")
    p.add_argument("--seed", type=int, default=0)
    return parser


def _cmd_generate(args) -> int:
    from .workload import GeneratorParams, generate_dataset, write_dataset

    params = GeneratorParams(T=args.t, b1=args.b1, bmax=args.bmax, xbar=args.xbar,
                             utility_kind=args.utility,
                             solar_amplitude=args.solar_amplitude, seed=args.seed)
    dataset = generate_dataset(params, args.n)
    write_dataset(dataset, args.out)
    print(f"wrote {args.n} instances to {args.out}")
    return 0


def _cmd_train(args) -> int:
    from .core import Instance
    from .la_oacp import RobustnessConfig
    from .predictor import TrainConfig, save_model, train
    from .workload import read_dataset

    dataset = read_dataset(args.dataset)
    instances = dataset.subset("train")
    if not instances:
        raise RuntimeError(f"dataset {args.dataset} has no training split")
    lipschitz = max(inst.lipschitz for inst in instances)
    cfg = RobustnessConfig(lam=args.lam, slack=args.slack, lipschitz=lipschitz)
    tc = TrainConfig(epochs=args.epochs, population=args.population,
                     batch_size=args.batch_size, sigma=args.sigma,
                     learning_rate=args.learning_rate, seed=args.seed)
    model, c_ref, history = train(instances, cfg, tc, expert=args.expert,
                                  expert_options={"t_star": args.t_star},
                                  verbose=not args.quiet)
    save_model(model, args.out, c_ref=c_ref, train_seed=args.seed)
    print(f"best objective {history[-1]['best']:.4f} "
          f"(baseline {history[0]['objective']:.4f}); model saved to {args.out}")
    return 0


def _cmd_run(args) -> int:
    from .harness import write_trace_csv
    from .la_oacp import RobustnessConfig, run_la_oacp
    from .oacp import OacpConfig, run_oacp
    from .oacp_plus import run_oacp_plus
    from .oracles import run_baseline
    from .predictor import load_model, policy_predictor
    from .workload import read_instance_csv

    instance = read_instance_csv(args.instance)
    if args.algo == "oacp":
        trace, _ = run_oacp(instance, OacpConfig(reference=args.reference, eta=args.eta))
    elif args.algo == "oacp-plus":
        trace, _ = run_oacp_plus(instance, t_star=args.t_star, beta=args.beta,
                                 reference=args.reference, eta=args.eta)
    elif args.algo == "la-oacp":
        if not args.model:
            raise RuntimeError("la-oacp needs --model pointing to a trained policy")
        model, meta = load_model(args.model)
        cfg = RobustnessConfig(lam=args.lam, slack=args.slack,
                               lipschitz=instance.lipschitz)
        result = run_la_oacp(instance, policy_predictor(model, meta["c_ref"]), cfg,
                             expert=args.expert,
                             expert_options={"t_star": args.t_star,
                                             "reference": args.reference})
        trace = result.trace
        print(f"expert total utility: {result.expert_total_utility:.6f}")
    else:
        trace = run_baseline(args.algo, instance, reference=args.reference, eta=args.eta)
    print(f"total utility: {trace.total_utility:.6f}")
    if args.out:
        write_trace_csv(trace, args.out)
        print(f"trace written to {args.out}")
    return 0


def _cmd_opt(args) -> int:
    from .oracles import solve_opt_concave, solve_opt_dp
    from .workload import read_instance_csv

    instance = read_instance_csv(args.instance)
    if args.method == "concave":
        result = solve_opt_concave(instance)
    else:
        result = solve_opt_dp(instance, grid=args.grid)
    print(f"OPT = {result.value:.6f}  bracket [{result.bracket[0]:.6f}, "
          f"{result.bracket[1]:.6f}]  converged={result.converged}")
    return 0


def _cmd_evaluate(args) -> int:
    from .harness import ExperimentConfig, evaluate_suite

    config = ExperimentConfig.from_json(args.config)
    if args.seed is not None:
        config.seed = args.seed
    report = evaluate_suite(config)
    for variant in sorted(report.metrics):
        for algo in sorted(report.metrics[variant]):
            m = report.metrics[variant][algo]
            print(f"[{variant}] {algo}: AVG={m['avg']:.4f} CR={m['cr_emp']:.4f} (n={m['n']})")
    print(f"results written to {config.out}")
    return 0


def _cmd_report(args) -> int:
    from .report import render_report

    created = render_report(args.results, args.out)
    for path in created:
        print(f"wrote {path}")
    return 0


_COMMANDS = {
    "generate": _cmd_generate,
    "train": _cmd_train,
    "run": _cmd_run,
    "opt": _cmd_opt,
    "evaluate": _cmd_evaluate,
    "report": _cmd_report,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 1
    try:
        return _COMMANDS[args.command](args)
    except BrokenPipeError:
        return 0
    except Exception as exc:  # runtime failures map to exit 2
        print(f"oalloc {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
