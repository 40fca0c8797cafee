"""The ``cada`` command line tool.

Grammar: ``cada <subcommand> [--config PATH] [--seed N] [--out DIR]
[key=value ...]``.  The config may be a file path or the name of a
shipped preset (``cada profile --config resnet50-d-cada-b4``).  Trailing
``key=value`` arguments override config keys; ``--seed``/``--out``
override ``train.seed``/``out.dir``.

Exit codes: 0 success, 2 malformed config (message names the key and
line), 3 checkpoint version mismatch, 1 anything else.  Errors are a
single ``error: ...`` line on stderr.
"""

import argparse
import os
import sys

from . import config as cfgmod
from .analysis import export_spectra, l1_prune, profile
from .backbone import build, load_checkpoint
from .errors import CheckpointError, ConfigurationError
from .train import evaluate, train_loop


def _experiment(args):
    path = cfgmod.find_config(args.config) if args.config else None
    return cfgmod.resolve(path, args.overrides, seed=args.seed,
                          out_dir=args.out)


def _model(exp, args, dtype=None):
    """Model from --ckpt when given, else a fresh seeded build."""
    if getattr(args, "ckpt", None):
        return load_checkpoint(args.ckpt)
    kwargs = {} if dtype is None else {"dtype": dtype}
    return build(exp.backbone, seed=exp.seed, **kwargs)


def cmd_train(args):
    exp = _experiment(args)
    model = build(exp.backbone, seed=exp.seed)
    train_set, val_set = cfgmod.load_dataset_pair(exp)
    os.makedirs(exp.out_dir, exist_ok=True)
    exp.write_resolved(exp.out_dir)
    history = train_loop(model, train_set, val_set, exp.train, exp.out_dir)
    print(f"seed={exp.seed}")
    for epoch, loss, top1, lr in history:
        print(f"epoch={epoch} train_loss={loss:.4f} val_top1={top1:.4f} "
              f"lr={lr:.6f}")
    print(f"wrote {os.path.join(exp.out_dir, 'metrics.csv')}")
    return 0


def cmd_eval(args):
    exp = _experiment(args)
    if not args.ckpt:
        raise ConfigurationError("eval requires --ckpt CHECKPOINT")
    model = load_checkpoint(args.ckpt)
    _, val_set = cfgmod.load_dataset_pair(exp)
    top1 = evaluate(model, val_set, exp.train.batch_size, exp.train.mean,
                    exp.train.std)
    print(f"seed={exp.seed}")
    print(f"val_top1={top1:.4f}")
    if args.out:
        os.makedirs(exp.out_dir, exist_ok=True)
        exp.write_resolved(exp.out_dir)
        with open(os.path.join(exp.out_dir, "eval.txt"), "w") as fh:
            fh.write(f"val_top1={top1:.6f}\n")
    return 0


def cmd_profile(args):
    exp = _experiment(args)
    model = _model(exp, args)
    report = profile(model)
    print(f"params={report.total_params} flops={report.total_macs:.6e}")
    print(f"seed={exp.seed}")
    print(report.format_table())
    if args.out:
        os.makedirs(exp.out_dir, exist_ok=True)
        exp.write_resolved(exp.out_dir)
        path = os.path.join(exp.out_dir, "profile.csv")
        with open(path, "w") as fh:
            fh.write(report.to_csv_text())
        print(f"wrote {path}")
    return 0


def cmd_gradcheck(args):
    from .gradcheck import run_suite
    exp = _experiment(args)
    worst, results = run_suite(seed=exp.seed, verbose=args.verbose)
    print(f"seed={exp.seed}")
    print(f"gradcheck checks={len(results)} max_rel_err={worst:.3e}")
    ok = worst < 1e-5
    print("PASS" if ok else "FAIL")
    return 0 if ok else 1


def cmd_oracle(args):
    from .oracle import TOLERANCE, run_suite
    exp = _experiment(args)
    worst, total, _ = run_suite(seed=exp.seed, verbose=args.verbose)
    print(f"seed={exp.seed}")
    print(f"oracle cases={total} max_abs_err={worst:.3e}")
    ok = worst < TOLERANCE
    print("PASS" if ok else "FAIL")
    return 0 if ok else 1


def cmd_prune(args):
    exp = _experiment(args)
    model = _model(exp, args)
    _, val_set = cfgmod.load_dataset_pair(exp)
    tol = exp.prune_tolerance if args.tolerance is None else args.tolerance
    report, pruned = l1_prune(model, val_set, tolerance=tol,
                              batch_size=exp.train.batch_size,
                              mean=exp.train.mean, std=exp.train.std)
    print(f"seed={exp.seed}")
    print(report.summary())
    os.makedirs(exp.out_dir, exist_ok=True)
    exp.write_resolved(exp.out_dir)
    path = os.path.join(exp.out_dir, "prune.csv")
    with open(path, "w") as fh:
        fh.write(report.to_csv_text())
    print(f"wrote {path}")
    return 0


def cmd_spectra(args):
    exp = _experiment(args)
    model = _model(exp, args)
    out_dir = exp.out_dir
    os.makedirs(out_dir, exist_ok=True)
    exp.write_resolved(out_dir)
    files = export_spectra(model, out_dir, grid=exp.spectra_grid)
    print(f"seed={exp.seed}")
    print(f"wrote {len(files)} spectrum files under {out_dir}")
    return 0


_COMMANDS = {
    "train": (cmd_train, "train a model per the config"),
    "eval": (cmd_eval, "top-1 accuracy of a checkpoint on the val split"),
    "profile": (cmd_profile, "parameter and FLOP counts, layer by layer"),
    "gradcheck": (cmd_gradcheck, "finite-difference gradient suite"),
    "prune": (cmd_prune, "greedy L1 base-kernel pruning within a tolerance"),
    "spectra": (cmd_spectra, "export kernel frequency responses (CSV+PGM)"),
    "oracle": (cmd_oracle, "loop-reference and identity checks"),
}


def build_parser():
    parser = argparse.ArgumentParser(
        prog="cada",
        description="context-aware decomposed attention networks")
    sub = parser.add_subparsers(dest="command", metavar="subcommand")
    sub.required = True
    for name, (_, help_text) in _COMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="config file or shipped preset name")
        p.add_argument("--seed", type=int, help="overrides train.seed")
        p.add_argument("--out", help="overrides out.dir")
        p.add_argument("--ckpt", help="checkpoint to load")
        p.add_argument("--tolerance", type=float,
                       help="accuracy-drop budget (prune)")
        p.add_argument("--verbose", action="store_true",
                       help="per-check detail (gradcheck/oracle)")
        p.add_argument("overrides", nargs="*", metavar="key=value",
                       help="config key overrides")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command][0](args)
    except ConfigurationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except CheckpointError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3 if exc.version_mismatch else 1
    except BrokenPipeError:
        devnull = os.open(os.devnull, os.O_WRONLY)
        os.dup2(devnull, sys.stdout.fileno())
        return 0
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
