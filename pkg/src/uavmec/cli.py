"""Command-line front end: train, eval, oracle-check, validate-config.

Exit status: 0 success, 1 failure (including a failed oracle check), 2 invalid
configuration or arguments.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import math
import sys
from pathlib import Path

import numpy as np

from .baselines import PolicyKind, brute_force_step_oracle, greedy_actor, random_actor
from .config import ConfigError, ExperimentConfig, dump_resolved, load_config, override, versions
from .env import Action, EnvConfig, MecEnv, Scenario
from .trainer import evaluate, learned_actor, load_snapshot, train

ORACLE_MAX_SDS = 8
ORACLE_MAX_EVALUATIONS = 250_000
ORACLE_SCALES = (0.5, 2.0, 10.0)


def _out_dir(cfg: ExperimentConfig, default: str) -> Path:
    out = Path(cfg.out_dir or default)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_scenario(path, env: EnvConfig) -> Scenario | None:
    if path is None:
        return None
    scenario = Scenario.load(path)
    MecEnv(env, scenario)  # shape checks
    return scenario


def _write_json(path: Path, doc) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def summarize(episodes) -> dict:
    fields = ("fairness", "delay_s", "energy_j", "offloaded")
    rows = [e.metrics.as_dict() for e in episodes]
    returns = [float(np.mean(e.returns)) for e in episodes]
    cv = [float(np.std(e.offloads) / np.mean(e.offloads)) if np.mean(e.offloads) > 0 else 0.0
          for e in episodes]
    out = {f"mean_{k}": float(np.mean([r[k] for r in rows])) for k in fields}
    out.update(episodes=len(episodes), mean_return=float(np.mean(returns)),
               mean_offload_cv=float(np.mean(cv)))
    return out


def write_eval(out: Path, episodes, trace: bool) -> dict:
    with open(out / "episodes.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        n_agents = len(episodes[0].returns) if episodes else 0
        w.writerow(["episode", "fairness", "delay_s", "energy_j", "offloaded", "mean_return"]
                   + [f"return_agent{n}" for n in range(n_agents)])
        for e in episodes:
            m = e.metrics
            w.writerow([e.episode, repr(m.fairness), repr(m.delay_s), repr(m.energy_j),
                        m.offloaded, repr(float(np.mean(e.returns)))]
                       + [repr(float(r)) for r in e.returns])
    if trace:
        with open(out / "trace.jsonl", "w") as fh:
            for e in episodes:
                for line in e.trace:
                    fh.write(line + "\n")
    summary = summarize(episodes)
    _write_json(out / "summary.json", summary)
    return summary


def cmd_validate(args) -> int:
    cfg = load_config(args.config)
    cfg = override(cfg, seed=args.seed, workers=args.workers, episodes=args.episodes)
    print(f"{args.config}: ok (run_tag={cfg.run_tag}, seed={cfg.seed})")
    return 0


def cmd_train(args) -> int:
    cfg = override(load_config(args.config), seed=args.seed, workers=args.workers,
                   episodes=args.episodes, out_dir=args.out)
    scenario = _load_scenario(args.scenario, cfg.env)
    out = _out_dir(cfg, f"runs/{cfg.run_tag}-seed{cfg.seed}")
    dump_resolved(cfg, out / "resolved_config.yaml")
    _write_json(out / "run.json", {"seed": cfg.seed, "run_tag": cfg.run_tag,
                                   "scenario": args.scenario, "versions": versions()})

    def progress(update, rows):
        mean = float(np.mean([float(r[2 + cfg.env.world.num_uavs]) for r in rows]))
        print(f"update {update}: episodes {rows[0][0]}-{rows[-1][0]}, mean return {mean:.2f}",
              file=sys.stderr)

    result = train(cfg.train, cfg.env, cfg.seed, scenario, out, progress)
    episodes = evaluate(learned_actor(result.learner.snapshot(), cfg.eval.deterministic),
                        cfg.env, scenario, cfg.seed, cfg.eval.episodes)
    eval_dir = out / "final_eval"
    eval_dir.mkdir(exist_ok=True)
    summary = write_eval(eval_dir, episodes, trace=False)
    print(json.dumps(summary, sort_keys=True))
    return 0


def cmd_eval(args) -> int:
    cfg = override(load_config(args.config), seed=args.seed, out_dir=args.out)
    scenario = _load_scenario(args.scenario, cfg.env)
    kind = PolicyKind(args.policy)
    if kind is PolicyKind.CHECKPOINT:
        if args.checkpoint is None:
            raise ConfigError(["--policy checkpoint requires --checkpoint DIR"])
        policy = learned_actor(load_snapshot(args.checkpoint, cfg.env), cfg.eval.deterministic)
    elif kind is PolicyKind.RANDOM:
        policy = random_actor
    else:
        policy = greedy_actor
    n = args.episodes if args.episodes is not None else cfg.eval.episodes
    if n < 1:
        raise ConfigError(["--episodes must be >= 1"])
    out = _out_dir(cfg, f"runs/{cfg.run_tag}-eval-{kind.value}")
    dump_resolved(cfg, out / "resolved_config.yaml")
    episodes = evaluate(policy, cfg.env, scenario, cfg.seed, n, trace=True)
    summary = write_eval(out, episodes, trace=True)
    summary["policy"] = kind.value
    _write_json(out / "summary.json", summary)
    print(json.dumps(summary, sort_keys=True))
    return 0


def oracle_check(env_cfg: EnvConfig, scenario: Scenario | None, seed: int, n_theta: int = 32,
                 n_dist: int = 16, denominator: int = 4) -> dict:
    """Exhaustive one-slot check for every agent: reward parity and scale invariance."""
    w = env_cfg.world
    env = MecEnv(env_cfg, scenario)
    env.reset(np.random.default_rng(seed))
    counts = np.bincount(w.region_of(env.state.sd_xy), minlength=w.num_uavs)
    if counts.max() > ORACLE_MAX_SDS:
        raise ValueError(f"scenario too large for exhaustive enumeration: a sub-region holds "
                         f"{counts.max()} SDs, the cap is {ORACLE_MAX_SDS}")
    lattice = n_theta * n_dist * math.comb(denominator + w.max_served_sds - 1,
                                           w.max_served_sds - 1)
    if lattice * w.num_uavs * (1 + len(ORACLE_SCALES)) > ORACLE_MAX_EVALUATIONS:
        raise ValueError(f"scenario too large for exhaustive enumeration: {lattice} lattice "
                         f"points per agent, cap is {ORACLE_MAX_EVALUATIONS} evaluations")

    hover = Action(0.0, 0.0, np.full(w.max_served_sds, 1.0 / w.max_served_sds))
    agents = []
    for n in range(w.num_uavs):
        res = brute_force_step_oracle(env, n, n_theta, n_dist, denominator, keep=True)
        mismatches = 0
        for action, r in res.evaluated:
            acts = [hover] * w.num_uavs
            acts[n] = action
            if env.clone().step(acts).rewards[n].extrinsic != r:
                mismatches += 1
        invariant = True
        for c in ORACLE_SCALES:
            scaled_cfg = dataclasses.replace(env_cfg, weights=env_cfg.weights.scaled(c))
            scaled = MecEnv(scaled_cfg, scenario)
            scaled.reset(np.random.default_rng(seed))
            other = brute_force_step_oracle(scaled, n, n_theta, n_dist, denominator)
            same = (other.action.theta == res.action.theta
                    and other.action.distance == res.action.distance
                    and np.array_equal(other.action.alloc, res.action.alloc))
            invariant = invariant and same
        agents.append({
            "agent": n,
            "argmax": {"theta_rad": res.action.theta, "distance_m": res.action.distance,
                       "alloc": res.action.alloc.tolist()},
            "reward": res.reward,
            "evaluated": len(res.evaluated),
            "parity_mismatches": mismatches,
            "reward_parity": mismatches == 0,
            "scale_invariance": invariant,
        })
    passed = all(a["reward_parity"] and a["scale_invariance"] for a in agents)
    return {"seed": seed, "grid": {"n_theta": n_theta, "n_dist": n_dist,
                                   "denominator": denominator},
            "scales": list(ORACLE_SCALES), "agents": agents, "pass": passed}


def cmd_oracle(args) -> int:
    cfg = override(load_config(args.config), seed=args.seed, out_dir=args.out)
    scenario = _load_scenario(args.scenario, cfg.env)
    try:
        report = oracle_check(cfg.env, scenario, cfg.seed)
    except ValueError as exc:
        print(f"oracle-check refused: {exc}", file=sys.stderr)
        return 2
    out = _out_dir(cfg, f"runs/{cfg.run_tag}-oracle")
    _write_json(out / "oracle_report.json", report)
    for a in report["agents"]:
        print(f"agent {a['agent']}: reward parity {'PASS' if a['reward_parity'] else 'FAIL'} "
              f"({a['evaluated']} actions), scale invariance "
              f"{'PASS' if a['scale_invariance'] else 'FAIL'}, argmax {a['argmax']}")
    print("oracle-check:", "PASS" if report["pass"] else "FAIL")
    return 0 if report["pass"] else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="uavmec", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out=True):
        sp.add_argument("--config", required=True, help="experiment YAML file")
        sp.add_argument("--seed", type=int, help="override the config seed")
        if out:
            sp.add_argument("--out", help="run directory (default runs/<tag>-...)")
        return sp

    t = common(sub.add_parser("train", help="train agents and evaluate the final policy"))
    t.add_argument("--workers", type=int, help="rollout worker processes")
    t.add_argument("--episodes", type=int, help="training episodes")
    t.add_argument("--scenario", help="fixed SD layout / task schedule YAML")
    t.set_defaults(func=cmd_train)

    e = common(sub.add_parser("eval", help="evaluate a frozen or baseline policy"))
    e.add_argument("--policy", choices=[k.value for k in PolicyKind], default="checkpoint")
    e.add_argument("--checkpoint", help="checkpoint directory (for --policy checkpoint)")
    e.add_argument("--scenario", help="fixed SD layout / task schedule YAML")
    e.add_argument("--episodes", type=int, help="evaluation episodes")
    e.set_defaults(func=cmd_eval)

    o = common(sub.add_parser("oracle-check", help="exhaustive one-slot oracle cross-check"))
    o.add_argument("--scenario", help="fixed SD layout YAML")
    o.set_defaults(func=cmd_oracle)

    v = common(sub.add_parser("validate-config", help="check a config file"), out=False)
    v.add_argument("--workers", type=int)
    v.add_argument("--episodes", type=int)
    v.set_defaults(func=cmd_validate)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        for line in exc.problems:
            print(f"error: {line}", file=sys.stderr)
        return 2
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
