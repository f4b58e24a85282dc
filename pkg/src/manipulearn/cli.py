"""Command-line entry point.

Exit codes: 0 success, 2 configuration error (bad flags, missing or invalid
config file, unknown preset), 3 numerical failure.
"""
from __future__ import annotations

import argparse
import dataclasses
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import errors
from .chains import PRESETS, get_chain
from .constraints import constraint_preset
from .demos import DemoConfig, default_demo_config, generate_demos
from .experiments import POLICY_ORDER, SCENARIOS, eval_nmie, eval_rmse, end_effector_path, \
    learn_scenario_model, run_scenario, table1
from .learning import LearnerConfig, learn_constraint
from .metrics import nmie
from .plotting import PlotTrace, emit_plot
from .storage import atomic_write, atomic_write_csv, fmt, load_config, read_dataset, read_model, \
    write_dataset, write_model

OUTPUT_ENV = "MANIPULEARN_OUTPUT_ROOT"
DEFAULT_OUTPUT = "results"

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3

NUMERICAL_ERRORS = (errors.SingularConstraint, errors.NumericalDet, errors.InfeasibleRegion,
                    errors.DegenerateData, errors.ZeroVariance, errors.SimulationDiverged,
                    np.linalg.LinAlgError, FloatingPointError)

DEMO_KEYS = {f.name for f in dataclasses.fields(DemoConfig)}
LEARNER_KEYS = {f.name for f in dataclasses.fields(LearnerConfig)}
RUN_KEYS = {"trials", "n_test", "steps", "scenario", "alpha", "k_max", "output_dir", "workers"}


class Settings:
    """Merged view of config file and flags: flags win over the file."""

    def __init__(self, args: argparse.Namespace):
        cfg = load_config(args.config) if args.config else {}
        unknown = set(cfg) - DEMO_KEYS - LEARNER_KEYS - RUN_KEYS
        if unknown:
            raise errors.ConfigError(f"unknown config keys: {sorted(unknown)}")
        for key in ("chain", "constraint", "seed", "n_trajectories", "trials", "n_test", "steps", "scenario",
                    "k_max", "workers"):
            val = getattr(args, key, None)
            if val is not None:
                cfg[key] = val
        if "seed" not in cfg:
            cfg["seed"] = 0
        self.raw = cfg
        chain = cfg.get("chain", "planar3")
        if chain not in PRESETS:
            raise errors.ConfigError(f"unknown chain preset {chain!r}; known: {sorted(PRESETS)}")
        try:
            constraint_preset(get_chain(chain), cfg.get("constraint", "xy" if chain == "planar3" else "x"))
        except KeyError as e:
            raise errors.ConfigError(str(e.args[0])) from None
        demo_over = {k: v for k, v in cfg.items() if k in DEMO_KEYS and k != "chain"}
        demo_over.setdefault("constraint", "xy" if chain == "planar3" else "x")
        try:
            self.demo = default_demo_config(chain, **demo_over)
            self.learner = LearnerConfig(**{k: v for k, v in cfg.items() if k in LEARNER_KEYS})
        except (TypeError, ValueError) as e:
            raise errors.ConfigError(f"invalid configuration: {e}") from None
        root = args.output_dir or cfg.get("output_dir") or os.environ.get(OUTPUT_ENV) or DEFAULT_OUTPUT
        self.out = Path(root)

    def get(self, key, default=None):
        return self.raw.get(key, default)


def _add_common(p: argparse.ArgumentParser, chain=True):
    p.add_argument("--config", help="JSON file of overrides (flags take precedence)")
    p.add_argument("--seed", type=int, help="top-level seed (default 0)")
    p.add_argument("--output-dir", help=f"output directory (default ${OUTPUT_ENV} or ./{DEFAULT_OUTPUT})")
    if chain:
        p.add_argument("--chain", help="chain preset: planar3 or spatial7")
        p.add_argument("--constraint", help="constraint preset id, e.g. xy, xtheta, ytheta, x")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="manipulearn",
                                     description="Learn task constraints and manipulability from demonstrations.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a demonstration dataset")
    _add_common(p)
    p.add_argument("--n-trajectories", dest="n_trajectories", type=int)
    p.add_argument("--name", default="demos.csv", help="dataset file name inside the output directory")

    p = sub.add_parser("learn", help="learn a constraint model from a dataset")
    _add_common(p, chain=False)
    p.add_argument("--data", required=True, help="dataset CSV written by 'gen'")
    p.add_argument("--k-max", dest="k_max", type=int)
    p.add_argument("--name", default="model.txt")

    p = sub.add_parser("eval-nmie", help="NMIE of a model on a dataset, or repeated learning trials")
    _add_common(p)
    p.add_argument("--model", help="model file; with --data, scores that model only")
    p.add_argument("--data", help="held-out dataset CSV")
    p.add_argument("--trials", type=int)
    p.add_argument("--n-test", dest="n_test", type=int)
    p.add_argument("--workers", type=int, help="parallel trial processes (results do not depend on it)")

    p = sub.add_parser("eval-rmse", help="RMSE between true- and learnt-manipulability controllers")
    _add_common(p)
    p.add_argument("--model", help="learnt model file (learnt from fresh demonstrations if omitted)")
    p.add_argument("--trials", type=int)
    p.add_argument("--steps", type=int)

    p = sub.add_parser("compare", help="run a singular-start policy comparison")
    _add_common(p, chain=False)
    p.add_argument("--scenario", choices=sorted(SCENARIOS), required=True)
    p.add_argument("--model", help="learnt model for the gradient policy (learnt on the fly if omitted)")

    p = sub.add_parser("table1", help="NMIE over repeated trials for the three planar constraints")
    _add_common(p, chain=False)
    p.add_argument("--trials", type=int)
    p.add_argument("--n-test", dest="n_test", type=int)
    p.add_argument("--workers", type=int, help="parallel trial processes (results do not depend on it)")

    p = sub.add_parser("figures", help="run both comparison scenarios and emit their plots")
    _add_common(p, chain=False)
    p.add_argument("--model", help="learnt model for the gradient policy")
    return parser


def _model_from(args, s: Settings):
    if getattr(args, "model", None):
        return read_model(args.model)[0]
    return None


def cmd_gen(args, s: Settings) -> str:
    data = generate_demos(s.demo)
    path = write_dataset(data, s.out / args.name)
    return (f"[gen] chain={s.demo.chain} constraint={s.demo.constraint} seed={s.demo.seed}\n"
            f"  trajectories={len(data.trajectories)} points={data.n_points}\n  wrote {path}")


def cmd_learn(args, s: Settings) -> str:
    data = read_dataset(args.data)
    chain = get_chain(data.config.chain)
    res = learn_constraint(data, chain, s.get("k_max"), s.learner)
    path = write_model(res.model, s.out / args.name, res.estimate)
    rows = "\n".join("    " + " ".join(f"{x:+.6f}" for x in r) for r in res.estimate.rows)
    return (f"[learn] data={args.data} points={data.n_points} null-model={res.null_model.kind}\n"
            f"  k={res.estimate.k} objective={res.estimate.objective_value:.3e}\n  rows:\n{rows}\n  wrote {path}")


def cmd_eval_nmie(args, s: Settings) -> str:
    if args.model or args.data:
        if not (args.model and args.data):
            raise errors.ConfigError("--model and --data must be given together")
        model = read_model(args.model)[0]
        data = read_dataset(args.data)
        chain = get_chain(data.config.chain)
        true_model = constraint_preset(chain, data.config.constraint)
        Q, _ = data.stacked()
        value = nmie(true_model, model, chain, Q)
        return f"[eval-nmie] model={args.model} data={args.data}\n  nmie={value:.6g} n={len(Q)}"
    rep = eval_nmie(s.demo, s.get("seed"), int(s.get("trials", 1)), s.get("n_test"), s.learner,
                    workers=int(s.get("workers", 1)))
    name = f"nmie_{s.demo.chain}_{s.demo.constraint}.csv"
    path = atomic_write(s.out / name, rep.to_csv())
    return rep.summary_block() + f"\n  wrote {path}"


def cmd_eval_rmse(args, s: Settings) -> str:
    rep = eval_rmse(s.get("seed"), int(s.get("trials", 20)), int(s.get("steps", 100)), learner=s.learner,
                    demo=s.demo, alpha=float(s.get("alpha", 1.0)), learnt=_model_from(args, s))
    path = atomic_write(s.out / f"rmse_{s.demo.chain}_{s.demo.constraint}.csv", rep.to_csv())
    return rep.summary_block() + f"\n  wrote {path}"


def _scenario_outputs(name: str, s: Settings, learnt) -> list:
    sc = SCENARIOS[name]
    if s.get("steps") is not None:
        sc = dataclasses.replace(sc, steps=int(s.get("steps")))
    if s.get("alpha") is not None:
        sc = dataclasses.replace(sc, alpha=float(s.get("alpha")))
    if learnt is None:
        learnt = learn_scenario_model(s.get("seed"), sc.constraint, s.learner).model
    outs = run_scenario(sc, learnt)
    dof = get_chain(sc.chain).dof
    written, traces, lines = [], [], [f"[compare] scenario={name} pinv={sc.pinv} alpha={sc.alpha} steps={sc.steps}"]
    for policy in POLICY_ORDER:
        o = outs[policy]
        states, actions = o.trajectory.states, o.trajectory.actions
        path = end_effector_path(o, sc.chain)
        rows = []
        for i, q in enumerate(states):
            u = actions[i] if i < len(actions) else np.full(dof, np.nan)
            rows.append([i, *map(float, q), *map(float, u), *map(float, path[i]), float(o.manip_trace[i])])
        header = (["step"] + [f"q_{j + 1}" for j in range(dof)] + [f"u_{j + 1}" for j in range(dof)]
                  + ["r_x", "r_y", "r_theta", "v"])
        written.append(atomic_write_csv(s.out / f"{name}_{policy}.csv", header, rows))
        traces.append(PlotTrace(policy, path[:, :2], o.manip_trace))
        finite = o.manip_trace[1:][np.isfinite(o.manip_trace[1:])]
        vmin = fmt(float(finite.min())) if finite.size else "nan"
        lines.append(f"  {policy}: status={o.status} min_v(steps>=1)={vmin} "
                     f"max|q|={np.abs(states).max():.3e}")
    n = max(len(o.manip_trace) for o in outs.values())
    rows = []
    for i in range(n):
        rows.append([i] + [float(outs[p].manip_trace[i]) if i < len(outs[p].manip_trace) else "" for p in POLICY_ORDER])
    written.append(atomic_write_csv(s.out / f"{name}_manipulability.csv", ["step", *POLICY_ORDER], rows))
    written.append(emit_plot(traces, s.out / f"{name}.svg", title=name))
    lines += [f"  wrote {p}" for p in written]
    return lines


def cmd_compare(args, s: Settings) -> str:
    return "\n".join(_scenario_outputs(args.scenario, s, _model_from(args, s)))


def cmd_figures(args, s: Settings) -> str:
    learnt = _model_from(args, s)
    if learnt is None:
        learnt = learn_scenario_model(s.get("seed"), "xy", s.learner).model
    return "\n".join(line for name in sorted(SCENARIOS) for line in _scenario_outputs(name, s, learnt))


def cmd_table1(args, s: Settings) -> str:
    over = {k: v for k, v in s.raw.items() if k in DEMO_KEYS and k not in ("chain", "constraint", "seed",
                                                                            "n_trajectories")}
    rows, reports = table1(s.get("seed"), int(s.get("trials", 50)), int(s.get("n_trajectories", 100)),
                           int(s.get("n_test", 100)), s.learner, workers=int(s.get("workers", 1)), **over)
    path = atomic_write_csv(s.out / "table1.csv", ["constraint", "nmie_mean", "nmie_sd"],
                            [[c, m, sd] for c, m, sd in rows])
    for c, rep in reports.items():
        atomic_write(s.out / f"table1_{c}_trials.csv", rep.to_csv())
    body = "\n".join(f"  {c:8s} nmie = {m:.3e} +- {sd:.3e}" for c, m, sd in rows)
    return f"[table1] seed={s.get('seed')} trials={s.get('trials', 50)}\n{body}\n  wrote {path}"


COMMANDS = {"gen": cmd_gen, "learn": cmd_learn, "eval-nmie": cmd_eval_nmie, "eval-rmse": cmd_eval_rmse,
            "compare": cmd_compare, "table1": cmd_table1, "figures": cmd_figures}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code in (0, None) else EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        settings = Settings(args)
        print(COMMANDS[args.command](args, settings))
    except (errors.ConfigError, errors.FormatError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except NUMERICAL_ERRORS as e:
        print(f"numerical failure: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
