"""Command-line entry point: ``codedserve <subcommand>``."""

from __future__ import annotations

import argparse
import logging
import signal
import sys
import threading
from pathlib import Path

from .model import TrainConfig, load_weights, save_weights
from .serving.config import ServingConfig
from .serving.frontend import Frontend, Mode
from .serving.worker import Slowdown, WorkerConfig, worker_loop

MODES = [m.value for m in Mode]


def _add_train_args(p):
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--lr", type=float, default=0.001)
    p.add_argument("--l2", type=float, default=1e-5)
    p.add_argument("--batch-size", type=int, default=32)


def _add_serving_args(p):
    p.add_argument("--config", help="key=value serving config file")
    p.add_argument("--k", type=int)
    p.add_argument("--r", type=int)
    p.add_argument("--slo-ms", type=float)
    p.add_argument("--group-timeout-ms", type=float)
    p.add_argument("--eager-decode", type=lambda s: s.lower() in ("1", "true", "yes", "on"), default=None)
    p.add_argument("--workers", type=int)
    p.add_argument("--slowdown-p", type=float)
    p.add_argument("--slowdown-ms", type=float)


def _serving_config(args):
    overrides = {key: getattr(args, key, None) for key in
                 ("k", "r", "slo_ms", "group_timeout_ms", "eager_decode", "workers", "slowdown_p",
                  "slowdown_ms", "seed")}
    if args.config:
        return ServingConfig.load(args.config, **overrides)
    return ServingConfig(**{k: v for k, v in overrides.items() if v is not None})


def _train_config(args, seed):
    return TrainConfig(args.lr, args.l2, args.batch_size, args.epochs, seed)


def cmd_train_deployed(args):
    from .harness.study import BACKUP_HIDDEN, DEPLOYED_HIDDEN, TaskSpec, train_classifier
    from .parity import evaluate_available

    out = Path(args.model_dir)
    out.mkdir(parents=True, exist_ok=True)
    task = TaskSpec(mean_scale=args.mean_scale, seed=args.seed)
    task.save(out)
    X_train, y_train, X_test, y_test = task.make()
    deployed = train_classifier(X_train, y_train, task.n_classes, DEPLOYED_HIDDEN,
                                _train_config(args, args.seed), args.seed)
    save_weights(deployed, out / "deployed.pmw")
    print(f"deployed {deployed.layer_dims}: test accuracy {evaluate_available(deployed, X_test, y_test):.4f}")
    if not args.no_backup:
        backup = train_classifier(X_train, y_train, task.n_classes, BACKUP_HIDDEN,
                                  _train_config(args, args.seed + 1), args.seed + 1)
        save_weights(backup, out / "backup.pmw")
        print(f"backup {backup.layer_dims}: test accuracy {evaluate_available(backup, X_test, y_test):.4f}")


def cmd_train_parity(args):
    from .harness.experiment import parity_filename
    from .harness.study import TaskSpec, train_parity
    from .parity import evaluate_degraded

    model_dir = Path(args.model_dir)
    task = TaskSpec.load(model_dir)
    X_train, _, X_test, y_test = task.make()
    deployed = load_weights(model_dir / "deployed.pmw")
    for row in range(args.r):
        seed = args.seed + args.k + 10 * row
        pm = train_parity(deployed, X_train, args.k, row, _train_config(args, seed), args.repeats,
                          args.encoder, seed)
        save_weights(pm, model_dir / parity_filename(args.k, row))
        msg = f"parity k={args.k} row={row}: final training loss {pm.loss_history[-1]:.5f}" if pm.loss_history \
            else f"parity k={args.k} row={row}: untrained"
        if row == 0:
            msg += f", degraded accuracy {evaluate_degraded(deployed, pm, (X_test, y_test), args.k):.4f}"
        print(msg)


def cmd_evaluate_accuracy(args):
    from .harness.experiment import parity_filename
    from .harness.study import TaskSpec, accuracy_study, format_study

    model_dir = Path(args.model_dir) if args.model_dir else None
    deployed, parity = None, {}
    task = TaskSpec(seed=args.seed)
    if model_dir is not None:
        task = TaskSpec.load(model_dir)
        if (model_dir / "deployed.pmw").exists():
            deployed = load_weights(model_dir / "deployed.pmw")
        for k in args.ks:
            path = model_dir / parity_filename(k)
            if path.exists():
                parity[k] = load_weights(path)
    rows, _, _ = accuracy_study(task, args.ks, args.epochs, args.repeats, args.f_u, parity, deployed)
    print(format_study(rows, args.f_u))


def cmd_worker(args):
    host, _, port = args.connect.rpartition(":")
    cfg = WorkerConfig(args.model, args.role, args.row, Slowdown(args.slowdown_p, args.slowdown_ms),
                       host or "127.0.0.1", int(port), args.seed)
    worker_loop(cfg)


def cmd_serve(args):
    from .serving.server import FrontendServer

    cfg = _serving_config(args)
    model = load_weights(args.model)
    fe = Frontend(cfg, (model.n_inputs,), model.n_outputs, Mode(args.mode))
    server = FrontendServer(fe, args.host, args.port).start()
    host, port = server.address
    print(f"frontend ({args.mode}, k={cfg.k}, r={cfg.r}) listening on {host}:{port}", flush=True)
    stop = threading.Event()
    signal.signal(signal.SIGTERM, lambda *_: stop.set())
    try:
        stop.wait()
    except KeyboardInterrupt:
        pass
    server.stop()
    print(dict(fe.stats))


def cmd_bench(args):
    from .harness.experiment import ExperimentConfig, ModelBundle, run_experiment
    from .harness.report import format_report, report_emit
    from .harness.study import TaskSpec

    cfg = _serving_config(args)
    model_dir = Path(args.model_dir)
    _, _, X_test, y_test = TaskSpec.load(model_dir).make()
    modes = MODES if args.mode == "all" else [args.mode]
    bundle = ModelBundle.load(model_dir, cfg.k, cfg.r if "parm" in modes else 0, X_test, y_test)
    exp = ExperimentConfig(cfg, args.n, args.qps, args.load_fraction, args.inference_ms, args.transport)
    out = Path(args.out) if args.out else None
    if out:
        out.mkdir(parents=True, exist_ok=True)
    reports = {}
    for mode in modes:
        if mode == "approx_backup" and bundle.backup is None:
            print("skipping approx_backup: no backup.pmw in model dir", file=sys.stderr)
            continue
        rep = run_experiment(exp, mode, bundle)
        reports[mode] = rep
        print(format_report(rep))
        print()
        if out:
            report_emit(rep, out / f"report_{mode}.txt")
    if "parm" in reports and "equal_resources" in reports and reports["parm"].gap > 0:
        print(f"tail-gap ratio equal_resources/parm: {reports['equal_resources'].gap / reports['parm'].gap:.2f}")


def cmd_report(args):
    from .harness.report import format_report, report_load

    reports = [report_load(p) for p in args.paths]
    for path, rep in zip(args.paths, reports):
        print(f"== {path}")
        print(format_report(rep))
    by_mode = {r.mode: r for r in reports}
    if "parm" in by_mode and "equal_resources" in by_mode and by_mode["parm"].gap > 0:
        print(f"tail-gap ratio equal_resources/parm: {by_mode['equal_resources'].gap / by_mode['parm'].gap:.2f}")


def build_parser():
    parser = argparse.ArgumentParser(prog="codedserve", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train-deployed", help="train the deployed (and backup) model on the blob task")
    p.add_argument("--model-dir", required=True)
    p.add_argument("--mean-scale", type=float, default=0.6)
    p.add_argument("--no-backup", action="store_true")
    _add_train_args(p)
    p.set_defaults(func=cmd_train_deployed)

    p = sub.add_parser("train-parity", help="train parity models for one k")
    p.add_argument("--model-dir", required=True)
    p.add_argument("--k", type=int, default=2)
    p.add_argument("--r", type=int, default=1)
    p.add_argument("--repeats", type=int, default=4, help="independent groupings of the training set")
    p.add_argument("--encoder", default="sum", choices=["sum", "concat"])
    _add_train_args(p)
    p.set_defaults(func=cmd_train_parity)

    p = sub.add_parser("evaluate-accuracy", help="print A_a / A_d / A_o over k")
    p.add_argument("--model-dir")
    p.add_argument("--ks", type=int, nargs="+", default=[2, 3, 4])
    p.add_argument("--f-u", type=float, default=0.1)
    p.add_argument("--repeats", type=int, default=4)
    p.add_argument("--epochs", type=int, default=10)
    p.set_defaults(func=cmd_evaluate_accuracy)

    p = sub.add_parser("serve", help="run a socket frontend")
    p.add_argument("--model", required=True, help="deployed model weights (for input/output sizes)")
    p.add_argument("--mode", default="parm", choices=MODES)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=7070)
    _add_serving_args(p)
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("worker", help="run one model instance against a frontend")
    p.add_argument("--model", required=True)
    p.add_argument("--connect", required=True, help="HOST:PORT of the frontend")
    p.add_argument("--role", default="deployed", choices=["deployed", "parity", "backup"])
    p.add_argument("--row", type=int, default=0, help="parity row for --role parity")
    p.add_argument("--slowdown-p", type=float, default=0.0)
    p.add_argument("--slowdown-ms", type=float, default=0.0)
    p.set_defaults(func=cmd_worker)

    p = sub.add_parser("bench", help="replay a Poisson workload and report latency and accuracy")
    p.add_argument("--model-dir", required=True)
    p.add_argument("--mode", default="all", choices=MODES + ["all"])
    p.add_argument("--n", type=int, default=10_000)
    p.add_argument("--qps", type=float)
    p.add_argument("--load-fraction", type=float, default=0.6)
    p.add_argument("--inference-ms", type=float, default=1.0)
    p.add_argument("--transport", default="sim", choices=["sim", "thread", "tcp"])
    p.add_argument("--out", help="directory for report_<mode>.txt files")
    _add_serving_args(p)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("report", help="print one or more saved reports")
    p.add_argument("paths", nargs="+")
    p.set_defaults(func=cmd_report)

    for action in sub.choices.values():
        action.add_argument("--seed", type=int, default=0)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    args.func(args)


if __name__ == "__main__":
    main()
