"""Command-line entry point.

Exit codes: 0 success, 1 verification failure, 2 usage error. Every
subcommand accepts ``--config FILE`` (JSON object or ``key=value`` lines,
keys named like the long flags) whose values act as defaults that explicit
flags override.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict, fields
from pathlib import Path

import numpy as np

from .cnf import check_assignment, check_proof
from .dataset import load_samples, save_records
from .embedder import build_graph, embed_formula
from .formats import ParseError, parse_assignment, parse_dimacs, parse_trace
from .harness import EpisodeConfig, evaluate, generalization_curve
from .nn.params import ParameterStore
from .policy import VARIANTS, build_model, classify_satisfiability, count_parameters
from .srgen import SrConfig, generate_dataset
from .teacher import solve_batch
from .training import TrainConfig, bootstrap_train, reduction_stats, train, train_classifier

log = logging.getLogger("certsat")


def read_config(path: str) -> dict:
    text = Path(path).read_text()
    try:
        data = json.loads(text)
    except json.JSONDecodeError:
        data = {}
        for line in text.splitlines():
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}: expected key=value, got {line!r}")
            k, v = (s.strip() for s in line.split("=", 1))
            try:
                data[k] = json.loads(v)
            except json.JSONDecodeError:
                data[k] = v
    if not isinstance(data, dict):
        raise ValueError(f"{path}: config must be an object")
    return {k.replace("-", "_"): v for k, v in data.items()}


def _train_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--d", type=int, default=32)
    p.add_argument("--rounds", type=int, default=16)
    p.add_argument("--epochs", type=int, default=50)
    p.add_argument("--lr0", type=float, default=5e-5)
    p.add_argument("--gamma", type=float, default=0.99)
    p.add_argument("--clip-norm", type=float, default=0.5)
    p.add_argument("--mode", choices=("static", "dynamic"), default="dynamic")
    p.add_argument("--variant", choices=VARIANTS, default="full")
    p.add_argument("--sat-step-cap", type=int, default=16)


def _train_config(a: argparse.Namespace) -> TrainConfig:
    names = {f.name for f in fields(TrainConfig)}
    return TrainConfig(**{k: v for k, v in vars(a).items() if k in names})


def _load_model(path: str) -> tuple[ParameterStore, TrainConfig]:
    store, meta = ParameterStore.load(path)
    cfg = TrainConfig(**meta.get("train_config", {}))
    return store, cfg


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="certsat", description="Certificate-backed neural SAT toolkit")
    sub = ap.add_subparsers(dest="command", required=True)

    def cmd(name, help_):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", help="JSON or key=value defaults")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("-v", "--verbose", action="store_true")
        return p

    p = cmd("gen", "generate an SR(n) dataset with teacher certificates")
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--n-min", type=int, default=10)
    p.add_argument("--n-max", type=int, default=40)
    p.add_argument("--kinds", choices=("both", "unsat", "sat"), default="both")
    p.add_argument("--geometric-min", type=int, default=1)

    p = cmd("teach", "solve every manifest record and rewrite its certificate")
    p.add_argument("--manifest", required=True)

    p = cmd("train", "teacher-forced training")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--log", help="training log CSV")
    _train_args(p)

    p = cmd("bootstrap", "alternate training and proof-replacement passes")
    p.add_argument("--manifest", required=True)
    p.add_argument("--checkpoint")
    p.add_argument("--out", required=True)
    p.add_argument("--passes", type=int, default=3)
    p.add_argument("--epochs-per-pass", type=int, default=1)
    p.add_argument("--stats", help="reduction stats CSV")
    _train_args(p)

    p = cmd("eval", "run episodes and report proven %%, p-Len, model calls")
    p.add_argument("--manifest", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--classifier")
    p.add_argument("--k", type=int, default=1)
    p.add_argument("--out", help="JSON report path")

    p = cmd("curve", "SAT success rate against iteration budget")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dist", action="append", required=True, metavar="LABEL=MANIFEST")
    p.add_argument("--max-iterations", type=int, default=1000)
    p.add_argument("--out", required=True)

    p = cmd("check", "verify a proof or assignment certificate")
    p.add_argument("--cnf", required=True)
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--proof")
    g.add_argument("--assignment")

    p = cmd("classify", "train and/or apply the satisfiability classifier head")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--train-manifest")
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--out", help="checkpoint with the trained head")
    p.add_argument("--cnf", action="append", default=[])

    p = cmd("count-params", "parameter totals per scope")
    p.add_argument("--d", type=int, default=128)
    p.add_argument("--variant", choices=VARIANTS, default="full")
    return ap


def parse_args(argv: list[str]) -> argparse.Namespace:
    ap = build_parser()
    a = ap.parse_args(argv)
    if a.config:
        try:
            conf = read_config(a.config)
        except (OSError, ValueError) as exc:
            ap.error(str(exc))
        sp = ap._subparsers._group_actions[0].choices[a.command]
        known = {act.dest for act in sp._actions}
        unknown = set(conf) - known
        if unknown:
            ap.error(f"unknown config keys: {sorted(unknown)}")
        sp.set_defaults(**conf)
        a = ap.parse_args(argv)
    return a


def main(argv: list[str] | None = None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    a = parse_args(argv)
    logging.basicConfig(level=logging.INFO if a.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    return COMMANDS[a.command](a)


def cmd_gen(a) -> int:
    cfg = SrConfig(n_min=a.n_min, n_max=a.n_max, rng_seed=a.seed, geometric_min=a.geometric_min)
    recs = generate_dataset(cfg, a.count, a.out, kinds=a.kinds)
    print(f"wrote {len(recs)} records to {Path(a.out) / 'manifest.jsonl'}")
    return 0


def cmd_teach(a) -> int:
    recs = solve_batch(a.manifest)
    bad = [r["id"] for r in recs if "error" in r]
    for rid in bad:
        print(f"record {rid} failed", file=sys.stderr)
    return 1 if bad else 0


def cmd_train(a) -> int:
    cfg = _train_config(a)
    samples = load_samples(a.manifest)
    res = train(samples, cfg, log_path=a.log)
    res.store.save(a.out, {"train_config": asdict(cfg)})
    last = res.epochs[-1] if res.epochs else None
    if last:
        print(f"epochs {len(res.epochs)} loss {last.mean_loss:.4f} teacher-forced acc {last.accuracy:.3f}")
    return 0


def cmd_bootstrap(a) -> int:
    cfg = _train_config(a)
    samples = load_samples(a.manifest)
    store = _load_model(a.checkpoint)[0] if a.checkpoint else None
    store, series = bootstrap_train(samples, cfg, a.passes, a.epochs_per_pass, store,
                                    root=Path(a.manifest).parent, stats_csv=a.stats)
    save_records(a.manifest, samples)
    store.save(a.out, {"train_config": asdict(cfg)})
    print(series[-1].format() if series else reduction_stats(samples).format())
    return 0


def cmd_eval(a) -> int:
    store, cfg = _load_model(a.checkpoint)
    clf = _load_model(a.classifier)[0] if a.classifier else None
    rep = evaluate(load_samples(a.manifest), store, cfg.episode_config(a.k), clf, np.random.default_rng(a.seed))
    summary = rep.summary()
    text = json.dumps(summary, indent=2, sort_keys=True)
    if a.out:
        Path(a.out).write_text(text + "\n")
    print(text)
    return 0


def cmd_curve(a) -> int:
    store, cfg = _load_model(a.checkpoint)
    dists = {}
    for item in a.dist:
        if "=" not in item:
            print(f"--dist expects LABEL=MANIFEST, got {item!r}", file=sys.stderr)
            return 2
        label, path = item.split("=", 1)
        dists[label] = [s.formula for s in load_samples(path) if not s.unsat]
    generalization_curve(dists, store, cfg.episode_config(), a.max_iterations, out_csv=a.out,
                         rng=np.random.default_rng(a.seed))
    print(f"wrote {a.out}")
    return 0


def cmd_check(a) -> int:
    try:
        f = parse_dimacs(Path(a.cnf).read_text())
        if a.proof:
            report = check_proof(f, parse_trace(Path(a.proof).read_text(), f))
        else:
            report = check_assignment(f, parse_assignment(Path(a.assignment).read_text()))
    except (ParseError, ValueError) as exc:
        where = ""
        line = getattr(exc, "line", None)
        if a.proof and line:
            tokens = Path(a.proof).read_text().splitlines()[line - 1].split()
            where = f"step {tokens[0]}: " if tokens else ""
        print(f"invalid: {where}{exc}", file=sys.stderr)
        return 1
    if report.valid:
        print("valid")
        return 0
    where = f"step {report.failed_step}: " if report.failed_step is not None else ""
    print(f"invalid: {where}{report.reason}", file=sys.stderr)
    return 1


def cmd_classify(a) -> int:
    store, cfg = _load_model(a.checkpoint)
    if a.train_manifest:
        train_classifier(load_samples(a.train_manifest), store, cfg, epochs=a.epochs)
        if a.out:
            store.save(a.out, {"train_config": asdict(cfg)})
    elif "classifier/W0" not in store.values:
        print("checkpoint has no classifier head; pass --train-manifest", file=sys.stderr)
        return 2
    for path in a.cnf:
        f = parse_dimacs(Path(path).read_text())
        p = classify_satisfiability(store, embed_formula(build_graph(f), store, cfg.rounds))
        print(f"{path}\t{p:.6f}")
    return 0


def cmd_count_params(a) -> int:
    store = build_model(a.d, a.variant, a.seed, classifier=True)
    for scope in ("embedder", a.variant, "decoder", "classifier", ""):
        print(f"{scope or 'total'}\t{count_parameters(store, scope)}")
    return 0


COMMANDS = {"gen": cmd_gen, "teach": cmd_teach, "train": cmd_train, "bootstrap": cmd_bootstrap,
            "eval": cmd_eval, "curve": cmd_curve, "check": cmd_check, "classify": cmd_classify,
            "count-params": cmd_count_params}


if __name__ == "__main__":
    sys.exit(main())
