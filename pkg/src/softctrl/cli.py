"""Command line: scenario generation, training, evaluation, sweeps and tabular checks.

Exit codes: 0 success, 1 validation or configuration error, 2 a ``verify``
tolerance was exceeded.
"""
from __future__ import annotations

import argparse
import csv
import io
import sys
from pathlib import Path

from . import config as cfgmod
from . import scenario as scn
from .agents.bc import train_bc
from .agents.sac import weights_to_tau_alpha
from .agents.training import (
    ActorAgent, ReferenceAgent, actor_hash, format_log, load_actor, load_reference, save_actor,
    save_reference, train_rl,
)
from .errors import ConfigError, InvariantViolation, ParseError, SoftCtrlError
from .evalkit import SUMMARY_KEYS, ExpertAgent, evaluate
from .neuralnet import load_checkpoint
from .oracle import format_table, run_suite
from .simulator import SimConfig

SWEEP_AXES = ("w_H", "w_KL", "exkl_kl_coef")


def _log(msg: str) -> None:
    print(msg, file=sys.stderr, flush=True)


def resolve_config(args) -> cfgmod.RunConfig:
    cfg = cfgmod.load(args.config) if getattr(args, "config", None) else cfgmod.RunConfig()
    changes = {}
    if getattr(args, "seed", None) is not None:
        changes["seed"] = args.seed
    if getattr(args, "out", None):
        changes["out"] = args.out
    if getattr(args, "scenarios", None):
        changes["scenarios__paths"] = tuple(args.scenarios)
    return cfgmod.replace(cfg, **changes) if changes else cfg


def load_scenarios(spec: cfgmod.ScenarioSpec) -> list:
    """Files when ``paths`` is set (directories expand to their sorted *.json), else generated."""
    if spec.paths:
        files = []
        for p in spec.paths:
            p = Path(p)
            if p.is_dir():
                files.extend(sorted(p.glob("*.json")))
            elif p.exists():
                files.append(p)
            else:
                raise ConfigError(f"scenario path not found: {p}")
        if not files:
            raise ConfigError("no scenario files found")
        return [scn.load(f) for f in files]
    return [scn.generate(k, int(s), spec.num_frames) for k in spec.kinds for s in spec.seeds]


def validation_scenarios(spec: cfgmod.ScenarioSpec, train_set) -> list:
    if not spec.validation_seeds:
        return list(train_set)
    return [scn.generate(k, int(s), spec.num_frames) for k in spec.kinds for s in spec.validation_seeds]


# ---------------------------------------------------------------------------
# commands


def cmd_gen(args) -> int:
    kinds = scn.SCENE_KINDS if args.kind == "all" else (args.kind,)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    seed = 0 if args.seed is None else args.seed
    for i in range(args.count):
        kind = kinds[i % len(kinds)]
        s = scn.generate(kind, seed + i // len(kinds), args.frames)
        scn.validate(s)
        scn.save(s, out / f"{s.id}.json")
    _log(f"wrote {args.count} scenarios to {out}")
    return 0


def run_train_bc(cfg: cfgmod.RunConfig, out: Path, sim: SimConfig = SimConfig()) -> Path:
    scenarios = load_scenarios(cfg.scenarios)
    out.mkdir(parents=True, exist_ok=True)
    cfgmod.write_resolved(cfg, out)
    policy, history = train_bc(
        scenarios, sim, cfg.bc, cfg.seed, log=lambda e, nll: _log(f"bc epoch {e}: nll {nll:.6f}")
    )
    with open(out / "bc_log.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "nll"])
        for e, nll in enumerate(history):
            w.writerow([e, repr(float(nll))])
    path = out / "reference.npz"
    save_reference(path, policy, {"seed": cfg.seed, "epochs": cfg.bc.epochs, "config": cfgmod.dumps(cfg)})
    report = evaluate(ReferenceAgent(policy, sim.kinematics.action_bounds), scenarios, cfg.seed, sim)
    report.write(out, "eval")
    return path


def cmd_train_bc(args) -> int:
    cfg = resolve_config(args)
    path = run_train_bc(cfg, Path(cfg.out))
    _log(f"reference policy saved to {path}")
    return 0


def _load_reference(path: str):
    p = Path(path) if path else None
    if p is None or not p.exists():
        raise ConfigError(f"BC checkpoint not found: {path or '(not set)'}")
    nets, meta = load_checkpoint(p)
    if meta.get("kind") != "reference":
        raise ConfigError(f"{p} is not a reference-policy checkpoint")
    return load_reference(nets, meta)


def run_train_rl(cfg: cfgmod.RunConfig, out: Path, sim: SimConfig = SimConfig()):
    reference = _load_reference(cfg.bc_checkpoint)
    scenarios = load_scenarios(cfg.scenarios)
    validation = validation_scenarios(cfg.scenarios, scenarios)
    out.mkdir(parents=True, exist_ok=True)
    cfgmod.write_resolved(cfg, out)
    result = train_rl(
        scenarios, reference, cfg.sac, cfg.train, cfg.seed, sim, validation,
        log=lambda row: _log(
            f"step {row['step']}: failures {row['failures']} return {row['mean_return']:.1f}"
        ),
    )
    (out / "train_log.csv").write_text(format_log(result.log))
    tau, alpha = cfg.sac.effective_tau_alpha()
    meta = {"variant": cfg.sac.variant, "seed": cfg.seed, "tau": tau, "alpha": alpha, "config": cfgmod.dumps(cfg)}
    save_actor(out / "actor_final.npz", result.final_actor, {**meta, "step": cfg.train.total_steps})
    save_actor(out / "actor_best.npz", result.best_actor, {**meta, "step": result.best_step})
    report = evaluate(ActorAgent(result.best_actor, sim.kinematics.action_bounds), scenarios, cfg.seed, sim)
    report.write(out, "eval")
    return result, report


def cmd_train_rl(args) -> int:
    cfg = resolve_config(args)
    if args.bc:
        cfg = cfgmod.replace(cfg, bc_checkpoint=args.bc)
    result, _ = run_train_rl(cfg, Path(cfg.out))
    _log(f"best step {result.best_step}; final actor hash {actor_hash(result.final_actor)[:12]}")
    return 0


def agent_from_checkpoint(path: str, sim: SimConfig):
    if path == "expert":
        return ExpertAgent()
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"checkpoint not found: {p}")
    nets, meta = load_checkpoint(p)
    kind = meta.get("kind")
    if kind == "reference":
        return ReferenceAgent(load_reference(nets, meta), sim.kinematics.action_bounds)
    if kind == "actor":
        return ActorAgent(load_actor(nets, meta), sim.kinematics.action_bounds)
    raise ConfigError(f"{p}: unknown checkpoint kind {kind!r}")


def cmd_eval(args) -> int:
    cfg = resolve_config(args)
    sim = SimConfig()
    agent = agent_from_checkpoint(args.checkpoint, sim)
    scenarios = load_scenarios(cfg.scenarios)
    report = evaluate(agent, scenarios, cfg.seed, sim)
    out = Path(cfg.out)
    cfgmod.write_resolved(cfg, out)
    report.write(out, "eval")
    print(report.to_json(), end="")
    return 0


def sweep_config(cfg: cfgmod.RunConfig, axis: str, value: float, fixed_other: float):
    """Configuration for one sweep point; entropy/KL weights become (tau, alpha)."""
    if axis == "exkl_kl_coef":
        return cfgmod.replace(cfg, sac__variant="exkl", sac__exkl_kl_coef=value)
    w_h, w_kl = (value, fixed_other) if axis == "w_H" else (fixed_other, value)
    tau, alpha = weights_to_tau_alpha(w_h, w_kl)
    return cfgmod.replace(cfg, sac__variant="imkl", sac__tau=tau, sac__alpha=alpha,
                          sac__w_entropy=None, sac__w_kl=None)


def cmd_sweep(args) -> int:
    if args.axis not in SWEEP_AXES:
        raise ConfigError(f"sweep axis must be one of {SWEEP_AXES}")
    cfg = resolve_config(args)
    if args.bc:
        cfg = cfgmod.replace(cfg, bc_checkpoint=args.bc)
    fixed = args.fixed if args.fixed is not None else (0.7 if args.axis == "w_KL" else 0.5)
    root = Path(cfg.out)
    root.mkdir(parents=True, exist_ok=True)
    cfgmod.write_resolved(cfg, root)
    rows = []
    for value in args.values:
        run_cfg = sweep_config(cfg, args.axis, value, fixed)
        run_dir = root / f"{args.axis}={value!r}"
        run_cfg = cfgmod.replace(run_cfg, out=str(run_dir))
        _log(f"sweep {args.axis} = {value!r}")
        _, report = run_train_rl(run_cfg, run_dir)
        tau, alpha = run_cfg.sac.effective_tau_alpha()
        rows.append({args.axis: value, "tau": tau, "alpha": alpha, **report.summary()})
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    header = [args.axis, "tau", "alpha", *SUMMARY_KEYS]
    w.writerow(header)
    for row in rows:
        w.writerow([repr(row[k]) if isinstance(row[k], float) else row[k] for k in header])
    (root / "sweep.csv").write_text(buf.getvalue())
    return 0


def cmd_verify(args) -> int:
    checks = run_suite()
    print(format_table(checks))
    return 0 if all(c.passed for c in checks) else 2


# ---------------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    """Usage errors are validation errors: exit 1, keeping 2 for failed checks."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="softctrl", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, scenarios=True):
        p.add_argument("--config", help="TOML run configuration")
        p.add_argument("--seed", type=int, help="override the configured seed")
        p.add_argument("--out", help="output directory")
        if scenarios:
            p.add_argument("--scenarios", nargs="+", help="scenario files or directories")

    p = sub.add_parser("gen", help="generate scenario files")
    p.add_argument("--kind", default="all", choices=("all", *scn.SCENE_KINDS))
    p.add_argument("--count", type=int, default=12)
    p.add_argument("--frames", type=int, default=250)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("train-bc", help="train the behavioural-cloning reference policy")
    common(p)
    p.set_defaults(func=cmd_train_bc)

    p = sub.add_parser("train-rl", help="fine-tune an actor-critic from a reference checkpoint")
    common(p)
    p.add_argument("--bc", help="reference checkpoint (overrides bc_checkpoint)")
    p.set_defaults(func=cmd_train_rl)

    p = sub.add_parser("eval", help="closed-loop evaluation of a checkpoint (or 'expert')")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="train and evaluate over one regularisation axis")
    common(p)
    p.add_argument("--axis", required=True, choices=SWEEP_AXES)
    p.add_argument("--values", type=float, nargs="+", required=True)
    p.add_argument("--fixed", type=float,
                   help="the other weight when sweeping w_H or w_KL (default w_H 0.7 or w_KL 0.5)")
    p.add_argument("--bc", help="reference checkpoint (overrides bc_checkpoint)")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("verify", help="run the tabular equivalence checks")
    p.set_defaults(func=cmd_verify)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ParseError, InvariantViolation, SoftCtrlError, ValueError, OSError) as exc:
        _log(f"error: {exc}")
        return 1


if __name__ == "__main__":
    sys.exit(main())
