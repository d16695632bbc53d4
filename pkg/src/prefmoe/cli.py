"""Command-line surface: train, evaluate, curve, gating-report, synth, diagnose.

Every command is deterministic given its flags, input files, and --seed; all
randomness flows from the seed. Report commands write their delimited output
and render a companion PNG figure next to it.

Exit codes: 0 success, 1 solver abort, 2 flag/file/schema errors,
3 infeasible warm start.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace

import numpy as np

from .data import (Box, SplitSpec, SynthConfig, generate_synthetic, load_csv,
                   load_model, save_model, split_dataset, standardize, write_csv)
from .errors import (DataFormatError, DimensionMismatchError, InfeasibleInitError,
                     MetricError, ModelFormatError, PrefmoeError, RuleParseError,
                     SchemaError)
from .metrics import (accuracy_coverage_curve, auc, calibrate_thresholds,
                      curve_to_csv, hard_coverage, soft_coverage)
from .model import Dataset, MoEModel, expert_prob, gate_prob, loss, predict_proba
from .rules import format_rules, parse_rules_file, rule_report
from .solvers import SolverConfig, train_log_barrier, train_projected_gradient, train_unconstrained

GAMMA_SWEEP = "{0.0, 0.001, 0.01, 0.05, 0.1, 1.0}"
LR_GRID = "{1e-4, 1e-3, 0.01, 0.1}"

_SOLVER_NAMES = {
    "unconstrained": "unconstrained",
    "log-barrier": "log_barrier",
    "projected-gradient": "projected_gradient",
}


def _fmt(value) -> str:
    if value is None or (isinstance(value, float) and np.isnan(value)):
        return "nan"
    return repr(float(value))


def _parse_split(text: str) -> tuple[float, float, float]:
    parts = text.split(",")
    if len(parts) != 3:
        raise ValueError(f"--split needs three comma-separated fractions, got {text!r}")
    return tuple(float(p) for p in parts)  # type: ignore[return-value]


def _parse_region(text: str) -> Box:
    """Region syntax: 'dim:lo:hi[,dim:lo:hi...]'; empty lo/hi leaves that side open."""
    bounds = []
    for chunk in text.split(","):
        parts = chunk.split(":")
        if len(parts) != 3:
            raise ValueError(f"bad region component {chunk!r}; expected dim:lo:hi")
        j = int(parts[0])
        lo = float(parts[1]) if parts[1] else None
        hi = float(parts[2]) if parts[2] else None
        bounds.append((j, lo, hi))
    return Box(tuple(bounds))


def _standardized_views(raw: Dataset, bound_rules, record=None):
    """Guideline values on raw features plus the standardized dataset."""
    g = bound_rules.guideline(raw.X)
    if record is None:
        std_data, record = standardize(raw)
    else:
        std_data = Dataset(record.apply(raw.X), raw.y, list(raw.columns), record)
    return std_data, g, record


def _config_from_args(args, solver_kind: str) -> SolverConfig:
    return SolverConfig(
        solver_kind=solver_kind,
        learning_rate=args.lr,
        max_iters=args.max_iters,
        grad_tol=args.grad_tol,
        t=args.t,
        epsilon=args.epsilon,
        gamma=args.gamma,
        seed=args.seed,
        coverage_applicable_only=args.coverage_applicable_only,
    )


def cmd_train(args) -> int:
    raw = load_csv(args.data)
    bound = parse_rules_file(args.rules).bind(raw.columns)
    split = split_dataset(raw, SplitSpec(*_parse_split(args.split), seed=args.seed))

    solver_kind = _SOLVER_NAMES[args.solver]
    warm = None
    record = None
    if args.warm is not None:
        warm = load_model(args.warm)
        if warm.n_features != raw.n_features:
            raise SchemaError(f"warm model expects d={warm.n_features}, "
                              f"data has d={raw.n_features}")
        record = warm.standardization

    train_std, g_train, record = _standardized_views(split.train, bound, record)
    config = _config_from_args(args, solver_kind)

    if solver_kind == "unconstrained":
        model, report = train_unconstrained(train_std, g_train, config)
    else:
        if warm is None:
            step1 = replace(config, solver_kind="unconstrained")
            warm, _ = train_unconstrained(train_std, g_train, step1)
            save_model(warm, args.out + ".warm")
        if solver_kind == "log_barrier":
            model, report = train_log_barrier(train_std, g_train, warm, config)
        else:
            model, report = train_projected_gradient(train_std, g_train, warm, config)

    save_model(model, args.out)
    report.write(args.out + ".report.csv")
    if not args.no_plots:
        from .plots import render_training_report
        render_training_report(report, args.out + ".report.png")

    write_csv(split.train, args.out + ".train.csv")
    if split.val is not None:
        write_csv(split.val, args.out + ".val.csv")
    if split.test is not None:
        write_csv(split.test, args.out + ".test.csv")

    train_loss = loss(model, train_std.X, train_std.y, g_train)
    val_auc, val_cov = float("nan"), float("nan")
    if split.val is not None:
        val_std, g_val, _ = _standardized_views(split.val, bound, record)
        try:
            val_auc = auc(predict_proba(model, val_std.X, g_val), val_std.y)
        except MetricError:
            pass
        val_cov = soft_coverage(model, val_std.X)
    print(f"solver={args.solver}")
    print(f"status={report.status}")
    print(f"train_loss={_fmt(train_loss)}")
    print(f"val_auc={_fmt(val_auc)}")
    print(f"val_soft_coverage={_fmt(val_cov)}")
    return 0


def _evaluation_scores(model: MoEModel, baseline: str, X_std, y, g):
    if baseline == "ml-only":
        return expert_prob(model, X_std)
    if baseline == "human-only":
        majority = float(int(np.sum(y == 1) * 2 >= y.shape[0]))
        return np.where(np.asarray(g) != -1, np.asarray(g, dtype=float), majority)
    return predict_proba(model, X_std, g)


def cmd_evaluate(args) -> int:
    model = load_model(args.model)
    raw = load_csv(args.data)
    if model.n_features != raw.n_features:
        raise SchemaError(f"model expects d={model.n_features}, data has d={raw.n_features}")
    bound = parse_rules_file(args.rules).bind(raw.columns)
    g = bound.guideline(raw.X)
    X_std = model.standardization.apply(raw.X) if model.standardization else raw.X
    y = raw.y

    scores = _evaluation_scores(model, args.baseline, X_std, y, g)
    try:
        score_auc = auc(scores, y)
    except MetricError:
        score_auc = float("nan")

    if args.baseline == "human-only":
        accuracy = 100.0 * float(np.mean((scores >= 0.5).astype(int) == y))
        applicable = 100.0 * float(np.mean(np.asarray(g) != -1))
        gate_t, pred_tau, soft_cov, hard_cov = (float("nan"), 0.5, applicable, applicable)
    elif args.baseline == "ml-only":
        taus = np.linspace(0.0, 1.0, 101)
        accs = [100.0 * float(np.mean((scores >= tau).astype(int) == y)) for tau in taus]
        best = int(np.argmax(accs[::-1]))               # ties toward larger tau
        pred_tau = float(taus[::-1][best])
        accuracy = accs[::-1][best]
        gate_t, soft_cov, hard_cov = float("nan"), 0.0, 0.0
    else:
        gate_t, pred_tau = calibrate_thresholds(model, X_std, y, g, objective=args.objective)
        hard_scores = np.where((np.asarray(g) != -1) & (gate_prob(model, X_std) >= gate_t),
                               np.asarray(g, dtype=float), expert_prob(model, X_std))
        accuracy = 100.0 * float(np.mean((hard_scores >= pred_tau).astype(int) == y))
        soft_cov = soft_coverage(model, X_std)
        hard_cov = hard_coverage(model, X_std, gate_t)

    print(f"baseline={args.baseline}")
    print(f"auc={_fmt(score_auc)}")
    print(f"accuracy={_fmt(accuracy)}")
    print(f"soft_coverage={_fmt(soft_cov)}")
    print(f"hard_coverage={_fmt(hard_cov)}")
    print(f"gate_threshold={_fmt(gate_t)}")
    print(f"pred_threshold={_fmt(pred_tau)}")
    print(f"loss={_fmt(loss(model, X_std, y, g))}")
    return 0


def cmd_curve(args) -> int:
    model = load_model(args.model)
    raw = load_csv(args.data)
    if model.n_features != raw.n_features:
        raise SchemaError(f"model expects d={model.n_features}, data has d={raw.n_features}")
    bound = parse_rules_file(args.rules).bind(raw.columns)
    g = bound.guideline(raw.X)
    X_std = model.standardization.apply(raw.X) if model.standardization else raw.X

    grid = np.linspace(0.0, 1.0, args.grid_points)
    points, frontier = accuracy_coverage_curve(model, X_std, raw.y, g, grid, grid)
    with open(args.out, "w", encoding="utf-8") as fh:
        fh.write(curve_to_csv(points))
    if not args.no_plots:
        from .plots import render_tradeoff_curve
        render_tradeoff_curve(frontier, args.out + ".png")
    print(f"curve_points={len(points)}")
    print(f"frontier_points={len(frontier)}")
    return 0


def cmd_gating_report(args) -> int:
    model = load_model(args.model)
    names = model.columns or [f"x{j}" for j in range(model.n_features)]
    weights = model.w[:-1]
    nonzero = [(abs(w), w, name) for w, name in zip(weights, names) if w != 0.0]
    nonzero.sort(key=lambda t: (-t[0], t[2]))
    top = nonzero[:args.top_k]

    lines = ["rank,weight,feature"]
    for rank, (_, w, name) in enumerate(top, start=1):
        lines.append(f"{rank},{w!r},{name}")
    text = "\n".join(lines) + "\n"
    if not top:
        text += "# notice: all gate weights are zero\n"
    print(text, end="")
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
        if top and not args.no_plots:
            from .plots import render_gate_weights
            render_gate_weights([t[2] for t in top], [t[1] for t in top],
                                args.out + ".png")
    return 0


def cmd_synth(args) -> int:
    cfg = SynthConfig(
        n_rows=args.n,
        n_features=args.d,
        rule_region=_parse_region(args.region),
        alpha=args.alpha,
        class_balance=args.class_balance,
        noise_sigma=args.noise_sigma,
        seed=args.seed,
    )
    data, ruleset, truth = generate_synthetic(cfg)
    write_csv(data, args.out + ".csv")
    with open(args.out + ".rules", "w", encoding="utf-8") as fh:
        fh.write(format_rules(ruleset))
    with open(args.out + ".truth.txt", "w", encoding="utf-8") as fh:
        fh.write(truth.to_text())
    print(f"rows={data.n_rows}")
    print(f"features={data.n_features}")
    print(f"positive_rate={_fmt(truth.realized_positive_rate)}")
    print(f"in_region_rows={truth.in_region_rows}")
    if truth.empty_region_warning:
        print("warning=rule region contains no sampled rows")
    return 0


def cmd_diagnose(args) -> int:
    from .diagnostics import check_assumptions, check_gradients, monotonicity_diagnostic

    model = load_model(args.model)
    raw = load_csv(args.data)
    if model.n_features != raw.n_features:
        raise SchemaError(f"model expects d={model.n_features}, data has d={raw.n_features}")
    bound = parse_rules_file(args.rules).bind(raw.columns)
    keep = min(args.max_rows, raw.n_rows)
    small = raw.subset(np.arange(keep))
    g = bound.guideline(small.X)
    X_std = model.standardization.apply(small.X) if model.standardization else small.X
    small_std = Dataset(X_std, small.y, list(small.columns))

    sections = [
        ("gradient_check", check_gradients(model, small_std, g,
                                           fd_step=args.fd_step, tol=args.tol).to_text()),
        ("assumptions", check_assumptions(model, small_std, g, seed=args.seed).to_text()),
        ("monotonicity", monotonicity_diagnostic(model, small_std, g, lam=args.lam,
                                                 mu=args.mu).to_text()),
    ]
    text = "".join(f"[{name}]\n{body}" for name, body in sections)
    print(text, end="")
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="prefmoe",
        description="Mixture of a trainable classifier and human decision rules, "
                    "trained to rely on the rules as often as the data allows.",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
    )
    sub = parser.add_subparsers(dest="command", required=True)

    train = sub.add_parser(
        "train", formatter_class=argparse.ArgumentDefaultsHelpFormatter,
        help="two-step training: unconstrained fit, then constrained coverage maximization",
        epilog=f"suggested sweeps: gamma in {GAMMA_SWEEP}; learning rate in {LR_GRID}")
    train.add_argument("--data", required=True, help="training CSV (last column 'label')")
    train.add_argument("--rules", required=True, help="rules file")
    train.add_argument("--solver", default="unconstrained",
                       choices=["unconstrained", "log-barrier", "projected-gradient"],
                       help="training step to run")
    train.add_argument("--gamma", type=float, default=0.0,
                       help=f"L1 weight on the gate; typical sweep {GAMMA_SWEEP}")
    train.add_argument("--epsilon", type=float, default=0.1,
                       help="allowed relative loss increase over the step-1 reference")
    train.add_argument("--t", type=float, default=5.0,
                       help="coverage weight of the log-barrier objective")
    train.add_argument("--lr", type=float, default=0.1,
                       help=f"initial step size; typical grid {LR_GRID}")
    train.add_argument("--max-iters", type=int, default=500, help="iteration budget")
    train.add_argument("--grad-tol", type=float, default=1e-6,
                       help="stop when the iterate displacement falls below this")
    train.add_argument("--seed", type=int, default=0, help="seed for init and splitting")
    train.add_argument("--out", required=True, help="model output path")
    train.add_argument("--warm", default=None,
                       help="step-1 model file to warm start a constrained solve")
    train.add_argument("--split", default="0.7,0.15,0.15",
                       help="train,val,test fractions")
    train.add_argument("--coverage-applicable-only", action="store_true",
                       help="restrict the coverage objective to rule-applicable rows")
    train.add_argument("--no-plots", action="store_true", help="skip PNG rendering")
    train.set_defaults(func=cmd_train)

    ev = sub.add_parser("evaluate", formatter_class=argparse.ArgumentDefaultsHelpFormatter,
                        help="AUC, calibrated accuracy, and coverage on a dataset")
    ev.add_argument("--model", required=True, help="model file")
    ev.add_argument("--data", required=True, help="evaluation CSV")
    ev.add_argument("--rules", required=True, help="rules file")
    ev.add_argument("--baseline", default="none",
                    choices=["none", "ml-only", "human-only", "standard-moe"],
                    help="prediction rule to evaluate; 'standard-moe' evaluates the "
                         "mixture of a step-1 model file")
    ev.add_argument("--objective", default="accuracy", choices=["accuracy", "youden"],
                    help="threshold calibration objective")
    ev.set_defaults(func=cmd_evaluate)

    curve = sub.add_parser("curve", formatter_class=argparse.ArgumentDefaultsHelpFormatter,
                           help="accuracy/coverage trade-off CSV over threshold grids")
    curve.add_argument("--model", required=True, help="model file")
    curve.add_argument("--data", required=True, help="evaluation CSV")
    curve.add_argument("--rules", required=True, help="rules file")
    curve.add_argument("--out", required=True, help="curve CSV output path")
    curve.add_argument("--grid-points", type=int, default=101,
                       help="points in each threshold grid over [0, 1]")
    curve.add_argument("--no-plots", action="store_true", help="skip PNG rendering")
    curve.set_defaults(func=cmd_curve)

    gr = sub.add_parser("gating-report", formatter_class=argparse.ArgumentDefaultsHelpFormatter,
                        help="largest-magnitude gate weights with feature names")
    gr.add_argument("--model", required=True, help="model file")
    gr.add_argument("--top-k", type=int, default=10, help="number of weights to report")
    gr.add_argument("--out", default=None, help="optional report output path")
    gr.add_argument("--no-plots", action="store_true", help="skip PNG rendering")
    gr.set_defaults(func=cmd_gating_report)

    synth = sub.add_parser("synth", formatter_class=argparse.ArgumentDefaultsHelpFormatter,
                           help="generate a synthetic dataset, rules file, and ground truth")
    synth.add_argument("--out", required=True, help="output prefix")
    synth.add_argument("--n", type=int, default=4000, help="rows")
    synth.add_argument("--d", type=int, default=6, help="features")
    synth.add_argument("--alpha", type=float, default=0.0,
                       help="probability an in-region label follows the rule consequent")
    synth.add_argument("--class-balance", type=float, default=0.5,
                       help="target positive rate")
    synth.add_argument("--noise-sigma", type=float, default=1.0,
                       help="stddev of logit noise in the latent ground truth")
    synth.add_argument("--region", default="0:0.8:",
                       help="rule region as dim:lo:hi[,dim:lo:hi...]; empty side is open")
    synth.add_argument("--seed", type=int, default=0, help="generator seed")
    synth.set_defaults(func=cmd_synth)

    diag = sub.add_parser("diagnose", formatter_class=argparse.ArgumentDefaultsHelpFormatter,
                          help="gradient, assumption, and monotonicity diagnostics")
    diag.add_argument("--model", required=True, help="model file")
    diag.add_argument("--data", required=True, help="dataset CSV")
    diag.add_argument("--rules", required=True, help="rules file")
    diag.add_argument("--fd-step", type=float, default=1e-6,
                      help="finite-difference step for the gradient check")
    diag.add_argument("--tol", type=float, default=1e-5,
                      help="relative-error tolerance for the gradient check")
    diag.add_argument("--lam", type=float, default=0.5,
                      help="Lagrange multiplier for the monotonicity diagnostic")
    diag.add_argument("--mu", type=float, default=1e-3,
                      help="quadratic regularizer for the monotonicity diagnostic")
    diag.add_argument("--max-rows", type=int, default=50,
                      help="cap on diagnostic rows (small instances only)")
    diag.add_argument("--seed", type=int, default=0, help="seed for random segments")
    diag.add_argument("--out", default=None, help="optional report output path")
    diag.set_defaults(func=cmd_diagnose)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (DataFormatError, RuleParseError, SchemaError, DimensionMismatchError,
            ModelFormatError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except InfeasibleInitError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except PrefmoeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
