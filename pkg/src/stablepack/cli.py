"""Command-line interface: datasets, evaluation, training, fine-tuning and replay."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import data
from .config import config_hash, load_config
from .env import EnvConfig, run_batch, run_episode
from .learn import Critic, FinetuneConfig, TrajectoryRecord, finetune, train
from .metrics import compute_metrics, emit_report, report_text
from .policy import HEURISTICS, HeuristicPolicy, Policy, SoftmaxPolicy, load_policy, make_policy, save_policy
from .randomizer import fit_measurements, fixture_path, read_measurements

log = logging.getLogger(__name__)


class CliError(Exception):
    pass


# --- helpers ---------------------------------------------------------------------------

def _dataset(spec: str, config: EnvConfig):
    if spec == "cut":
        return data.CutDataset(tuple(int(d) for d in config.container))
    if spec == "realworld":
        return data.RealworldDataset(data.DatasetSpec(container=tuple(config.container)))
    path = Path(spec)
    if not path.exists():
        raise CliError(f"dataset {spec!r} is neither 'cut', 'realworld' nor an existing file")
    return data.read_dataset(path)


def _dataset_name(spec: str) -> str:
    return Path(spec).stem if spec not in ("cut", "realworld") else spec


def policy_to_json(policy: Policy) -> dict:
    if isinstance(policy, SoftmaxPolicy):
        return {"kind": "softmax", "weights": [float(w) for w in policy.weights],
                "temperature": policy.temperature, "greedy": policy.greedy}
    if isinstance(policy, HeuristicPolicy):
        return {"kind": "heuristic", "name": policy.name}
    raise CliError(f"cannot serialize policy {policy!r}")


def policy_from_json(d: dict) -> Policy:
    if d["kind"] == "heuristic":
        return HeuristicPolicy(d["name"])
    return SoftmaxPolicy(np.array(d["weights"], dtype=float), d["temperature"], d["greedy"])


def log_header(config: EnvConfig, policy: Policy, items) -> dict:
    """Everything replay needs: config, policy, and the episode's item stream."""
    return {
        "config": data.config_to_json(config),
        "policy": policy_to_json(policy),
        "items": [{"id": it.id, "sx": it.sx, "sy": it.sy, "sz": it.sz, "mass": it.mass} for it in items],
    }


def _stream(dataset, seed):
    if hasattr(dataset, "episode_items"):
        return list(dataset.episode_items(seed))
    return list(dataset)


def _policy_arg(args) -> Policy:
    name = args.policy
    if name not in HEURISTICS and name not in ("softmax", "greedy"):
        raise CliError(f"unknown policy {name!r}; choose from {sorted(HEURISTICS) + ['softmax', 'greedy']}")
    return make_policy(name, getattr(args, "checkpoint", None))


def _seeds(base: int, n: int) -> list[int]:
    return list(range(base, base + n))


def _setup(args) -> tuple[EnvConfig, dict]:
    config, run = load_config(args.config)
    for key in ("seed", "parallel"):
        if getattr(args, key) is None:
            setattr(args, key, run.get(key, 0 if key == "seed" else 1))
    if getattr(args, "episodes", -1) is None:
        args.episodes = run.get("episodes", 500)
    if getattr(args, "dataset", "") is None:
        args.dataset = run.get("dataset", "cut")
    if getattr(args, "policy", "") is None:
        args.policy = run.get("policy", "dblf")
    return config, run


# --- subcommands -----------------------------------------------------------------------

def cmd_gen_dataset(args) -> int:
    config, _ = _setup(args)
    if args.kind == "cut":
        dims = tuple(int(d) for d in config.container)
        groups = [[p.item for p in data.gen_cut_dataset(dims, args.min_side, args.max_side, args.seed + k)]
                  for k in range(args.episodes)]
    else:
        spec = data.DatasetSpec(container=tuple(config.container), count=args.count)
        groups = [data.gen_realworld_like(spec, args.seed + k) for k in range(args.episodes)]
        dims = config.container
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    data.write_dataset(out, groups, args.kind, dims, args.seed)
    print(f"wrote {sum(map(len, groups))} items in {len(groups)} streams to {out}")
    return 0


def cmd_eval(args) -> int:
    config, _ = _setup(args)
    if args.no_randomize:
        config = EnvConfig(**{**config.__dict__, "randomize": False})
    if args.static_gate:
        config = EnvConfig(**{**config.__dict__, "static_gate": True})
    dataset = _dataset(args.dataset, config)
    policy = _policy_arg(args)
    seeds = _seeds(args.seed, args.episodes)
    results = run_batch(policy, dataset, config, args.parallel, seeds)
    report = compute_metrics(results, args.policy, _dataset_name(args.dataset), config_hash(config))
    out = Path(args.out)
    for p in emit_report(report, out):
        log.info("wrote %s", p)
    if args.logs:
        log_dir = out / "logs"
        log_dir.mkdir(parents=True, exist_ok=True)
        for res in results:
            header = log_header(config, policy, _stream(dataset, res.seed))
            data.write_log(data.episode_log(res, header), log_dir / f"episode_{res.seed}.tlog")
    sys.stdout.write(report_text(report))
    return 0


def _train_cmd(args, physics: str) -> int:
    config, _ = _setup(args)
    config = EnvConfig(**{**config.__dict__, "physics": physics, "record_features": True})
    if physics == "static":
        config = EnvConfig(**{**config.__dict__, "randomize": False})
    dataset = _dataset(args.dataset, config)
    policy = load_policy(args.checkpoint) if args.checkpoint else SoftmaxPolicy()
    policy, critic, history = train(policy, Critic(), dataset, config, iterations=args.iterations, lr=args.lr,
                                    seed=args.seed, n_parallel=args.episodes_per_round)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_policy(policy, out / "policy.ckpt")
    for k, su in enumerate(history):
        print(f"iteration {k}: mean SU {su:.4f}")
    print(f"checkpoint written to {out / 'policy.ckpt'}")
    return 0


def cmd_pretrain(args) -> int:
    return _train_cmd(args, "static")


def cmd_simtrain(args) -> int:
    return _train_cmd(args, "sim")


def _records_from_log(path) -> list[TrajectoryRecord]:
    tlog = data.read_log(path)
    config = data.config_from_json(tlog.header["config"])
    scale = 1.0 / config.volume if config.normalize_reward else 1.0
    out, cur = [], []
    for tr in tlog.transitions:
        cur.append(tr)
        if tr.done:
            out.append(TrajectoryRecord(cur, "real-phase1", config.container, scale))
            cur = []
    if cur:
        out.append(TrajectoryRecord(cur, "real-phase1", config.container, scale))
    return out


def cmd_finetune(args) -> int:
    _setup(args)
    paths = []
    for p in args.logs:
        p = Path(p)
        paths += sorted(p.glob("*.tlog")) if p.is_dir() else [p]
    if not paths:
        raise CliError("no trajectory logs given")
    records = [r for p in paths for r in _records_from_log(p)]
    policy = load_policy(args.checkpoint) if args.checkpoint else SoftmaxPolicy()
    cfg = FinetuneConfig(alpha=args.alpha, epsilon=args.epsilon, beta=args.beta, lr=args.lr,
                         epochs=args.epochs, batch_size=args.batch_size, q_source=args.q_source, seed=args.seed)
    new_policy, _, report = finetune(policy, Critic(), records, policy, cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_policy(new_policy, out / "policy.ckpt")
    print(f"kept {report.kept}/{report.total} trajectories, {report.steps} steps")
    for k, (loss, kl) in enumerate(zip(report.critic_loss, report.kl)):
        print(f"epoch {k}: critic loss {loss:.6g}, KL {kl:.6g}")
    print(f"checkpoint written to {out / 'policy.ckpt'}")
    return 0


def replay_log(path) -> tuple[bool, str]:
    """Re-run a logged episode from its header; True when every record matches exactly."""
    tlog = data.read_log(path)
    h = tlog.header
    config = data.config_from_json(h["config"])
    policy = policy_from_json(h["policy"])
    items = [data.ItemSpec(d["sx"], d["sy"], d["sz"], d["mass"], d["id"]) for d in h["items"]]
    fresh = data.episode_log(run_episode(policy, items, config, h["seed"]), {k: v for k, v in h.items() if k != "seed"})
    if fresh.summary != tlog.summary:
        return False, f"summary differs: logged {tlog.summary}, replayed {fresh.summary}"
    if len(fresh.transitions) != len(tlog.transitions):
        return False, f"step count differs: logged {len(tlog.transitions)}, replayed {len(fresh.transitions)}"
    for a, b in zip(tlog.transitions, fresh.transitions):
        if data.transition_to_json(a) != data.transition_to_json(b):
            return False, f"step {a.t} differs"
    return True, "MATCH"


def cmd_replay(args) -> int:
    ok, msg = replay_log(args.log)
    print(msg)
    return 0 if ok else 1


def cmd_fit_params(args) -> int:
    _setup(args)
    path = args.measurements or fixture_path()
    fitted = fit_measurements(read_measurements(path), args.bandwidth)
    rows = {k: {"mean": d.mean(), "bandwidth": d.bandwidth, "lo": d.lo, "hi": d.hi, "n": len(d.support)}
            for k, d in fitted.items()}
    text = json.dumps({"source": str(path), "params": rows}, indent=2, sort_keys=True)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "fitted_params.json").write_text(text + "\n")
    print(text)
    return 0


# --- parser ----------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    # suppressed defaults let a global flag given before the subcommand survive
    common = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    common.add_argument("--config", help="flat key = value config file")
    common.add_argument("--seed", type=int, help="base seed (episode k uses seed + k)")
    common.add_argument("--parallel", type=int, help="worker processes for rollouts")
    common.add_argument("--out", help="output directory or file")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="stablepack", description="Online 3D packing with physics-aware stability.",
                                parents=[common])
    p.set_defaults(config=None, seed=None, parallel=None, out="out", verbose=False)
    sub = p.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True

    g = sub.add_parser("gen-dataset", parents=[common], help="write a dataset file")
    g.add_argument("--kind", choices=("cut", "realworld"), default="cut")
    g.add_argument("--episodes", type=int, default=1, help="number of item streams")
    g.add_argument("--count", type=int, default=200, help="items per real-world-like stream")
    g.add_argument("--min-side", type=int, default=10)
    g.add_argument("--max-side", type=int, default=25)
    g.set_defaults(func=cmd_gen_dataset)

    e = sub.add_parser("eval", parents=[common], help="evaluate a policy or heuristic")
    e.add_argument("--policy", default=None, help="dblf, best_fit, max_contact, softmax or greedy")
    e.add_argument("--checkpoint", help="softmax policy checkpoint")
    e.add_argument("--dataset", default=None, help="cut, realworld, or a dataset file")
    e.add_argument("--episodes", type=int, default=None)
    e.add_argument("--no-randomize", action="store_true", help="nominal physics instead of randomized draws")
    e.add_argument("--static-gate", action="store_true", help="offer only rule-stable candidates")
    e.add_argument("--logs", action="store_true", help="also write one trajectory log per episode")
    e.set_defaults(func=cmd_eval)

    for name, func, helptext in (("pretrain", cmd_pretrain, "train under the static stability rule"),
                                 ("simtrain", cmd_simtrain, "train under randomized simulated physics")):
        t = sub.add_parser(name, parents=[common], help=helptext)
        t.add_argument("--dataset", default=None)
        t.add_argument("--checkpoint", help="starting checkpoint")
        t.add_argument("--iterations", type=int, default=10)
        t.add_argument("--episodes-per-round", type=int, default=16)
        t.add_argument("--lr", type=float, default=1e-3)
        t.set_defaults(func=func)

    f = sub.add_parser("finetune", parents=[common], help="fine-tune on logged real trajectories")
    f.add_argument("logs", nargs="+", help="trajectory log files or directories")
    f.add_argument("--checkpoint", help="policy to adapt")
    f.add_argument("--alpha", type=float, default=0.33)
    f.add_argument("--epsilon", type=float, default=0.5)
    f.add_argument("--beta", type=float, default=0.1)
    f.add_argument("--lr", type=float, default=1e-4)
    f.add_argument("--epochs", type=int, default=10)
    f.add_argument("--batch-size", type=int, default=16)
    f.add_argument("--q-source", choices=("critic", "mc"), default="critic")
    f.set_defaults(func=cmd_finetune)

    r = sub.add_parser("replay", parents=[common], help="re-run a trajectory log and check it matches")
    r.add_argument("log")
    r.set_defaults(func=cmd_replay)

    k = sub.add_parser("fit-params", parents=[common], help="fit per-parameter KDEs to measurements")
    k.add_argument("--measurements", help="name,value CSV (defaults to the bundled synthetic fixture)")
    k.add_argument("--bandwidth", type=float, default=None)
    k.set_defaults(func=cmd_fit_params)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (CliError, ValueError, OSError, data.LogError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
