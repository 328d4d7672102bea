"""Command-line entry point.

    pcadv gen-data --out data/train --per-class 100 --seed 0
    pcadv train --data data/train --out model.json
    pcadv attack --model model.json --data data/test --reg l2,cd,hd,curv --out results.csv
    pcadv eval --results results.csv --oc-metric l2 --oc-out curve.tsv

Errors print one line, ``error: <kind>: <message>``, and exit nonzero.
"""
import argparse
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import attack as A
from . import blackbox as B
from . import classifier as clf
from . import defense as DF
from . import evaluation as E
from . import io
from . import metrics as M
from .geometry import DEFAULT_K, SHAPES


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _regs(text):
    names = [s.strip() for s in text.split(",") if s.strip()]
    if not names:
        raise UsageError("--reg needs at least one regularizer")
    try:
        return tuple(M.regularizer_id(n) for n in names)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _samples(data_dir):
    entries = io.read_manifest(data_dir)
    rows = [(io.sample_id(p), io.read_cloud(p), label) for p, label in entries]
    return sorted(rows, key=lambda r: r[0])


def _load_model(path):
    try:
        return clf.load_file(path)
    except FileNotFoundError:
        raise OSError(f"checkpoint not found: {path}") from None


def _child_seed(seed, i):
    return int(np.random.SeedSequence([seed, i]).generate_state(1)[0])


# ---------------------------------------------------------------------------
# per-sample jobs (top level so they pickle for --jobs)
# ---------------------------------------------------------------------------

def _whitebox_job(job):
    sid, pts, label, params, cfg, base, defense, n_eot, seed = job
    model = params if defense is None else DF.DefendedModel(params, defense, n_eot, seed)
    try:
        if base:
            res = A.eidos_base(model, pts, label, cfg.regularizers[0], cfg)
        else:
            res = A.eidos(model, pts, label, cfg)
    except A.AttackPreconditionError:
        return sid, None
    return sid, res


def _blackbox_job(job):
    sid, pts, label, surrogate, target, cfg = job
    try:
        res = B.blackbox_attack(surrogate, B.classifier_oracle(target), pts, label, cfg)
    except A.AttackPreconditionError:
        return sid, None
    return sid, res


def _run(fn, jobs, n_jobs):
    if n_jobs <= 1:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=n_jobs) as ex:
        return list(ex.map(fn, jobs))


def _emit(args, method, outcomes, with_queries=False):
    records, skipped = [], 0
    for sid, res in sorted(outcomes, key=lambda o: o[0]):
        if res is None:
            skipped += 1
            continue
        rec = E.record_from_result(sid, method, res)
        if not args.timing:
            rec.time_s = 0.0
        records.append(rec)
        if getattr(args, "trace", None) and res.trace:
            Path(args.trace).mkdir(parents=True, exist_ok=True)
            (Path(args.trace) / f"{sid}.tsv").write_text(res.trace_lines())
    E.write_results(args.out, records, with_queries)
    rate = E.success_rate(records) if records else 0.0
    print(f"attacked={len(records)} skipped_misclassified={skipped} success_rate={rate:.6f}")


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_gen_data(args):
    classes = tuple(s.strip() for s in args.classes.split(",") if s.strip())
    entries = io.write_dataset(args.out, classes, args.per_class, args.points, args.seed)
    print(f"wrote {len(entries)} clouds to {args.out}")


def cmd_train(args):
    data = io.load_dataset(args.data)
    cfg = clf.TrainConfig(lr=args.lr, momentum=args.momentum, epochs=args.epochs,
                          batch_size=args.batch_size, seed=args.seed)
    result = clf.train(data, cfg)
    clf.save_file(result.params, args.out)
    print(f"train_accuracy={result.accuracy:.6f}")


def _attack_cfg(args):
    return A.AttackConfig(regularizers=_regs(args.reg), step=args.step, schedule=args.schedule,
                          decay=args.decay, max_iters=args.max_iters, k=args.k, seed=args.seed)


def cmd_attack(args):
    cfg = _attack_cfg(args)
    if args.base and len(cfg.regularizers) != 1:
        raise UsageError("--base takes exactly one regularizer")
    params = _load_model(args.model)
    jobs = [(sid, c.points, lab, params, cfg, args.base, None, 1, 0)
            for sid, c, lab in _samples(args.data)]
    method = ("eidos-base:" if args.base else "eidos:") + "+".join(cfg.regularizers)
    _emit(args, method, _run(_whitebox_job, jobs, args.jobs))


def cmd_defend_attack(args):
    cfg = _attack_cfg(args)
    params = _load_model(args.model)
    defense = DF.SOR(args.sor_k, args.alpha) if args.defense == "sor" else DF.SRS(args.drop)
    samples = _samples(args.data)
    jobs = [(sid, c.points, lab, params, cfg, False, defense, args.eot, _child_seed(args.seed, i))
            for i, (sid, c, lab) in enumerate(samples)]
    method = f"eidos:{'+'.join(cfg.regularizers)}@{args.defense}/eot{args.eot}"
    _emit(args, method, _run(_whitebox_job, jobs, args.jobs))


def cmd_blackbox(args):
    cfg = B.BlackboxConfig(eps1=args.eps1, eps2=args.eps2, regularizers=_regs(args.reg),
                           budget=args.budget, k=args.k)
    surrogate, target = _load_model(args.surrogate), _load_model(args.target)
    jobs = [(sid, c.points, lab, surrogate, target, cfg) for sid, c, lab in _samples(args.data)]
    _emit(args, "blackbox:" + "+".join(cfg.regularizers), _run(_blackbox_job, jobs, args.jobs),
          with_queries=True)


def cmd_eval(args):
    records = E.read_results(args.results)
    summary = E.summarize(records)
    print(E.Summary.header())
    print(summary.row())
    if args.oc_out:
        curve = E.operating_characteristic(records, args.oc_metric)
        Path(args.oc_out).write_text(curve.tsv())
        if curve.empty:
            print("operating characteristic empty: no successful attacks")


def build_parser():
    p = _Parser(prog="pcadv", description="Imperceptible adversarial point clouds.")
    sub = p.add_subparsers(dest="cmd", required=True, parser_class=_Parser)

    g = sub.add_parser("gen-data", help="write the synthetic shape dataset")
    g.add_argument("--out", required=True)
    g.add_argument("--classes", default=",".join(SHAPES))
    g.add_argument("--per-class", type=int, default=100)
    g.add_argument("--points", type=int, default=256)
    g.add_argument("--seed", type=int, default=0)
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train the toy classifier")
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--epochs", type=int, default=50)
    t.add_argument("--lr", type=float, default=0.01)
    t.add_argument("--momentum", type=float, default=0.9)
    t.add_argument("--batch-size", type=int, default=8)
    t.add_argument("--seed", type=int, default=0)
    t.set_defaults(func=cmd_train)

    def common(sp, reg_default):
        sp.add_argument("--data", required=True)
        sp.add_argument("--out", required=True)
        sp.add_argument("--reg", default=reg_default)
        sp.add_argument("--k", type=int, default=DEFAULT_K)
        sp.add_argument("--jobs", type=int, default=1)
        sp.add_argument("--timing", action="store_true",
                        help="record wall seconds in time_s (otherwise 0, keeping output byte-stable)")

    def whitebox(sp):
        sp.add_argument("--model", required=True)
        sp.add_argument("--step", type=float, default=0.06)
        sp.add_argument("--schedule", choices=("fixed", "adaptive"), default="fixed")
        sp.add_argument("--decay", type=float, default=0.05)
        sp.add_argument("--max-iters", type=int, default=100)
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--trace", default=None, help="directory for per-sample trace TSVs")

    a = sub.add_parser("attack", help="white-box attack on every sample")
    common(a, "l2")
    whitebox(a)
    a.add_argument("--base", action="store_true", help="single-regularizer variant")
    a.set_defaults(func=cmd_attack)

    d = sub.add_parser("defend-attack", help="white-box attack through a defense")
    common(d, "l2")
    whitebox(d)
    d.add_argument("--defense", choices=("sor", "srs"), required=True)
    d.add_argument("--sor-k", type=int, default=DF.SOR_K)
    d.add_argument("--alpha", type=float, default=DF.SOR_ALPHA)
    d.add_argument("--drop", type=int, default=DF.SRS_DROP)
    d.add_argument("--eot", type=int, default=DF.EOT_SAMPLES)
    d.set_defaults(func=cmd_defend_attack)

    b = sub.add_parser("blackbox", help="query-based black-box attack")
    common(b, "l2,cd,hd,curv")
    b.add_argument("--surrogate", required=True)
    b.add_argument("--target", required=True)
    b.add_argument("--eps1", type=float, default=0.32)
    b.add_argument("--eps2", type=float, default=0.16)
    b.add_argument("--budget", type=int, default=0)
    b.set_defaults(func=cmd_blackbox, trace=None)

    e = sub.add_parser("eval", help="summarize a results CSV")
    e.add_argument("--results", required=True)
    e.add_argument("--oc-metric", default="l2", type=M.metric_id)
    e.add_argument("--oc-out", default=None)
    e.set_defaults(func=cmd_eval)
    return p


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
        if getattr(args, "jobs", 1) < 1:
            raise UsageError("--jobs must be >= 1")
        args.func(args)
    except UsageError as exc:
        print(f"error: usage: {exc}", file=sys.stderr)
        return 2
    except io.FormatError as exc:
        print(f"error: format: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: io: {exc}", file=sys.stderr)
        return 1
    except ValueError as exc:
        print(f"error: value: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
