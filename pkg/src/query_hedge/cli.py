"""Command-line front end.

Subcommands: ``run`` and ``sweep`` execute a config file, ``verify`` runs the
built-in recipes, ``oracle-check`` compares the two-expert closed form with the
explicit recursion, ``list-recipes`` prints the recipe names.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any, Sequence

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from query_hedge.harness import BENCHMARKS, ExperimentPlan, RegretReport, fit_scaling_exponent, monte_carlo
from query_hedge.instances import TwoExpertEpsInstance, instance_from_dict
from query_hedge.learners import LearnerConfig
from query_hedge.oracles import THEOREMS, vanilla_hedge_closed_form_regret, vanilla_hedge_exact_recursion
from query_hedge.recipes import RECIPES, run_recipe
from query_hedge.seeding import resolve_seed

ORACLE_TOL = 1e-9


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class Config:
    plan: ExperimentPlan
    sweep_window: tuple[float, float] | None


def _require(table: dict[str, Any], section: str, name: str, kind: type, path: Path) -> Any:
    if name not in table:
        raise ConfigError(f"{path}: [{section}] is missing required field {name!r}")
    value = table[name]
    if kind is int and (isinstance(value, bool) or not isinstance(value, int)):
        raise ConfigError(f"{path}: [{section}].{name} must be an integer, got {value!r}")
    if kind is float and (isinstance(value, bool) or not isinstance(value, (int, float))):
        raise ConfigError(f"{path}: [{section}].{name} must be a number, got {value!r}")
    return value


def load_config(path: str | Path, seed: int | None = None, runs: int | None = None) -> Config:
    """Parse a TOML experiment file into a plan; flags override file values."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    for section in ("instance", "learner", "plan"):
        if not isinstance(data.get(section), dict):
            raise ConfigError(f"{path}: missing [{section}] table")
    try:
        instance = instance_from_dict(data["instance"])
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"{path}: [instance]: {exc}") from exc
    try:
        learner = LearnerConfig.from_dict(data["learner"])
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"{path}: [learner]: {exc}") from exc

    plan_tbl = data["plan"]
    k_grid = _require(plan_tbl, "plan", "k_grid", list, path)
    if not k_grid or any(isinstance(k, bool) or not isinstance(k, int) for k in k_grid):
        raise ConfigError(f"{path}: [plan].k_grid must be a non-empty list of integers")
    n_runs = runs if runs is not None else _require(plan_tbl, "plan", "runs", int, path)
    if "master_seed" in plan_tbl:
        _require(plan_tbl, "plan", "master_seed", int, path)
    master_seed = seed if seed is not None else plan_tbl.get("master_seed")
    master_seed = resolve_seed(master_seed)
    benchmark = plan_tbl.get("benchmark", "best_fixed_hindsight")
    if benchmark not in BENCHMARKS:
        raise ConfigError(f"{path}: [plan].benchmark must be one of {BENCHMARKS}, got {benchmark!r}")
    bound = plan_tbl.get("bound")
    if bound is not None and bound not in THEOREMS:
        raise ConfigError(f"{path}: [plan].bound must be one of {THEOREMS}, got {bound!r}")
    z = float(plan_tbl.get("z", 3.0))
    known = {"k_grid", "runs", "master_seed", "benchmark", "bound", "z"}
    extra = sorted(set(plan_tbl) - known)
    if extra:
        raise ConfigError(f"{path}: [plan] has unknown field(s): {', '.join(extra)}")
    try:
        plan = ExperimentPlan(
            instance=instance,
            learner=learner,
            k_grid=tuple(k_grid),
            runs=int(n_runs),
            master_seed=int(master_seed),
            benchmark=benchmark,
            bound=bound,
            experiment_id=str(data.get("experiment_id", path.stem)),
            z=z,
        )
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from exc

    window = None
    if "sweep" in data:
        sw = data["sweep"]
        window = (float(_require(sw, "sweep", "k_min", float, path)), float(_require(sw, "sweep", "k_max", float, path)))
    return Config(plan, window)


def _emit(text: str, out: str | None) -> None:
    if out is None:
        sys.stdout.write(text)
    else:
        Path(out).write_text(text)


def _render(report: RegretReport, fmt: str) -> str:
    return report.to_json() if fmt == "json" else report.to_csv()


def _default_parallelism() -> int:
    return max(1, os.cpu_count() or 1)


def _execute(args: argparse.Namespace, sweep: bool) -> int:
    cfg = load_config(args.config, seed=args.seed, runs=args.runs)
    report = monte_carlo(cfg.plan, parallelism=args.parallelism)
    if report.skipped:
        for k, reason in report.skipped.items():
            print(f"warning: k={k} skipped: {reason}", file=sys.stderr)
    if sweep:
        window = cfg.sweep_window
        if args.k_min is not None or args.k_max is not None:
            window = (args.k_min if args.k_min is not None else min(cfg.plan.k_grid),
                      args.k_max if args.k_max is not None else max(cfg.plan.k_grid))
        if window is None:
            window = (min(cfg.plan.k_grid), max(cfg.plan.k_grid))
        slope, r2 = fit_scaling_exponent(report, window)
        report = report.with_slope_window(*window)
        print(f"slope = {slope:.6f}, r^2 = {r2:.6f} over k in [{window[0]:g}, {window[1]:g}]", file=sys.stderr)
    _emit(_render(report, args.format), args.out)
    if args.check_bounds:
        for row in report.rows:
            if not row.bound_satisfied:
                print(f"bound violated at k={row.k}: mean {row.mean_regret:.6g} +/- {row.std_error:.3g} "
                      f"vs {row.bound_name} = {row.bound_value:.6g}", file=sys.stderr)
        return 0 if report.all_satisfied else 1
    return 0


def cmd_run(args: argparse.Namespace) -> int:
    return _execute(args, sweep=False)


def cmd_sweep(args: argparse.Namespace) -> int:
    return _execute(args, sweep=True)


def cmd_verify(args: argparse.Namespace) -> int:
    seed = resolve_seed(args.seed)
    names = list(RECIPES) if args.recipe == ["all"] else args.recipe
    unknown = [n for n in names if n not in RECIPES]
    if unknown:
        print(f"unknown recipe(s): {', '.join(unknown)}; see list-recipes", file=sys.stderr)
        return 2
    ok = True
    texts = []
    for name in names:
        result = run_recipe(name, seed=seed, runs=args.runs, parallelism=args.parallelism)
        print(f"{result.summary()} ({result.seconds:.1f}s)")
        for note in result.notes:
            print(f"  note: {note}")
        ok &= result.passed
        texts.append(result.to_csv())
    if args.out is not None:
        if len(names) == 1:
            Path(args.out).write_text(texts[0])
        else:
            out = Path(args.out)
            out.mkdir(parents=True, exist_ok=True)
            for name, text in zip(names, texts):
                (out / f"{name}.csv").write_text(text)
    return 0 if ok else 1


def cmd_oracle_check(args: argparse.Namespace) -> int:
    if args.config is None:
        result = run_recipe("prop-reg-hedge", seed=resolve_seed(args.seed))
        print(result.summary())
        if args.out is not None:
            Path(args.out).write_text(result.to_csv())
        return 0 if result.passed else 1
    cfg = load_config(args.config, seed=args.seed, runs=1)
    inst, learner = cfg.plan.instance, cfg.plan.learner
    if not isinstance(inst, TwoExpertEpsInstance):
        raise ConfigError(f"{args.config}: oracle-check needs an instance of kind 'two_expert_eps'")
    worst = 0.0
    lines = ["k,eta,closed_form,recursion,abs_diff"]
    for k in cfg.plan.k_grid:
        eta = replace(learner, algorithm="hedge_full", k=k).eta
        cf = vanilla_hedge_closed_form_regret(inst.eps_sequence, eta, k, inst.T)
        rec = vanilla_hedge_exact_recursion(inst.eps_sequence, eta, k, inst.T)
        worst = max(worst, abs(cf - rec))
        lines.append(f"{k},{eta!r},{cf!r},{rec!r},{abs(cf - rec)!r}")
    _emit("\n".join(lines) + "\n", args.out)
    print(f"max |closed form - recursion| = {worst:.3e} (tolerance {ORACLE_TOL:g})", file=sys.stderr)
    return 0 if worst <= ORACLE_TOL else 1


def cmd_list_recipes(args: argparse.Namespace) -> int:
    for name, fn in RECIPES.items():
        doc = (fn.__doc__ or "").strip().splitlines()
        print(f"{name}\t{doc[0] if doc else ''}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="query-hedge", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser, config: bool) -> None:
        if config:
            p.add_argument("--config", required=True, help="TOML experiment file")
        p.add_argument("--out", help="output path (default: stdout)")
        p.add_argument("--seed", type=lambda s: int(s, 0), help="master seed (falls back to $QUERY_HEDGE_SEED)")
        p.add_argument("--runs", type=int, help="override the number of Monte Carlo runs")
        p.add_argument("--parallelism", type=int, default=_default_parallelism(),
                       help="worker processes (default: CPU count; 1 runs serially)")

    for name, fn, helptext in (("run", cmd_run, "run a config and write its regret report"),
                               ("sweep", cmd_sweep, "run a config and fit the regret-vs-k exponent")):
        p = sub.add_parser(name, help=helptext)
        common(p, config=True)
        p.add_argument("--format", choices=("csv", "json"), default="csv")
        p.add_argument("--check-bounds", action="store_true",
                       help="exit 1 unless every row satisfies its bound")
        if name == "sweep":
            p.add_argument("--k-min", type=float)
            p.add_argument("--k-max", type=float)
        p.set_defaults(func=fn)

    p = sub.add_parser("verify", help="run built-in recipes ('all' for every recipe)")
    p.add_argument("recipe", nargs="+")
    common(p, config=False)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("oracle-check", help="closed-form vs recursion for two-expert Hedge")
    p.add_argument("--config", help="TOML file with a two_expert_eps instance (default: random suite)")
    p.add_argument("--out")
    p.add_argument("--seed", type=lambda s: int(s, 0))
    p.set_defaults(func=cmd_oracle_check)

    p = sub.add_parser("list-recipes", help="list built-in recipes")
    p.set_defaults(func=cmd_list_recipes)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "parallelism", 1) is not None and getattr(args, "parallelism", 1) < 1:
        parser.error("--parallelism must be >= 1")
    if getattr(args, "runs", None) is not None and args.runs < 1:
        parser.error("--runs must be >= 1")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
