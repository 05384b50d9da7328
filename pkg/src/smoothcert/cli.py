"""Command-line front end.

Subcommands: pretrain, finetune, certify, report, selftest.  The first three
read a JSON config (--config) and write their artifacts under the config's
out_dir (overridable with --out).  Exit codes: 0 success, 1 selftest or
report failure, 2 invalid config, 3 training diverged, 4 missing or
unreadable checkpoint.
"""

import argparse
import os
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import report as rpt
from .certifier import SmoothingParams, certify
from .config import ConfigError, load_config, model_spec_for
from .data import load_idx, make_transfer_pair, synth_shapes
from .model_io import CheckpointError, load_checkpoint
from .network import Network
from .trainer import TrainPlan, TrainingDiverged, finetune, pretrain, swap_head

EXIT_OK = 0
EXIT_FAIL = 1
EXIT_CONFIG = 2
EXIT_TRAINING = 3
EXIT_CHECKPOINT = 4


def _say(*parts):
    print(*parts)


def _load_splits(config):
    """Build (train, test) datasets; apply the transfer split if configured.
    Returns (upstream_train, upstream_test, downstream_train, downstream_test);
    the downstream pair is None without a transfer section."""
    d = config.dataset
    if d.source == "synth":
        train = synth_shapes(d.num_classes, d.per_class_train, size=d.size,
                             seed=config.seeds["data_train"], split="train",
                             contrast=d.contrast)
        test = synth_shapes(d.num_classes, d.per_class_test, size=d.size,
                            seed=config.seeds["data_test"], split="test",
                            contrast=d.contrast)
    else:
        train = load_idx(d.train_images, split="train")
        test = load_idx(d.test_images, split="test")
    if config.transfer is None:
        return train, test, None, None
    t = config.transfer
    seed = config.seeds["transfer"]
    up_train, down_train = make_transfer_pair(train, t.upstream_classes,
                                              t.downstream_classes, seed)
    up_test, down_test = make_transfer_pair(test, t.upstream_classes,
                                            t.downstream_classes, seed)
    return up_train, up_test, down_train, down_test


def _out_dir(config, args):
    out = args.out if args.out else config.out_dir
    os.makedirs(out, exist_ok=True)
    return out


def _write(path, text):
    with open(path, "w") as f:
        f.write(text)
    return path


def cmd_pretrain(args):
    config = load_config(args.config, "pretrain")
    out = _out_dir(config, args)
    up_train, up_test, _, _ = _load_splits(config)
    spec = model_spec_for(config.model, up_train.image_shape, up_train.num_classes)
    net = Network(spec, seed=config.seeds["init"])
    plan = TrainPlan(stage="pretrain", noise=config.noise, sgd=config.sgd,
                     seed=config.seeds["train"], eval_every=config.eval_every)
    ckpt = os.path.join(out, "checkpoint.ckpt")
    train_report = pretrain(net, up_train, plan, eval_dataset=up_test,
                            checkpoint_path=ckpt)
    _write(os.path.join(out, "train_report.csv"), train_report.to_csv())
    _say(f"pretrain done: {train_report.epochs} epochs, "
         f"final clean acc {train_report.final_clean_acc:.3f}, checkpoint {ckpt}")
    return EXIT_OK


def cmd_finetune(args):
    config = load_config(args.config, "finetune")
    out = _out_dir(config, args)
    up_train, up_test, down_train, down_test = _load_splits(config)
    if down_train is None:
        # no transfer section: fine-tune on the dataset itself
        down_train, down_test = up_train, up_test
    base = load_checkpoint(config.checkpoint_in)
    net = swap_head(base, down_train.num_classes, seed=config.seeds["head"])
    plan = TrainPlan(stage="finetune", noise=config.noise, sgd=config.sgd,
                     seed=config.seeds["train"], eval_every=config.eval_every,
                     finetune_mode=config.finetune_mode,
                     allow_noisy_finetune=config.allow_noisy_finetune)
    ckpt = os.path.join(out, "checkpoint.ckpt")
    train_report = finetune(net, down_train, plan, eval_dataset=down_test,
                            checkpoint_path=ckpt)
    _write(os.path.join(out, "train_report.csv"), train_report.to_csv())
    _say(f"finetune done ({plan.finetune_mode}): {train_report.epochs} epochs, "
         f"final clean acc {train_report.final_clean_acc:.3f}, checkpoint {ckpt}")
    return EXIT_OK


def _certify_inputs(net, dataset, indices, params, threads):
    def one(i):
        return certify(net, dataset.images[i], params, input_id=int(i))

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(one, indices))
    return [one(i) for i in indices]


def cmd_certify(args):
    config = load_config(args.config, "certify")
    out = _out_dir(config, args)
    _, up_test, _, down_test = _load_splits(config)
    test = down_test if down_test is not None else up_test
    net = load_checkpoint(config.checkpoint_in)
    if net.num_classes != test.num_classes:
        raise CheckpointError(f"{config.checkpoint_in}: checkpoint has "
                              f"{net.num_classes} classes, test data has "
                              f"{test.num_classes}")
    s = config.smoothing
    rng = np.random.default_rng((config.seeds["certify"], 0))
    count = min(s.max_inputs, len(test))
    indices = np.sort(rng.permutation(len(test))[:count])

    preds = net.predict_labels(test.images[indices])
    clean = rpt.clean_rows(indices, test.labels[indices], preds)
    _write(os.path.join(out, "clean_eval.csv"), rpt.clean_rows_to_csv(clean))

    rows_per_sigma = {}
    for sigma in s.sigmas:
        params = SmoothingParams(sigma=sigma, n0=s.n0, n=s.n, alpha=s.alpha,
                                 batch=s.batch, seed=config.seeds["certify"])
        results = _certify_inputs(net, test, indices, params, args.threads)
        rows = rpt.cert_rows(results, test.labels[indices])
        rows_per_sigma[sigma] = rows
        _write(os.path.join(out, f"cert-sigma{sigma}.csv"),
               rpt.cert_rows_to_csv(rows))
        _say(f"sigma={sigma}: certified acc at eps=0 is "
             f"{rpt.certified_accuracy(rows, 0.0):.3f} over {len(rows)} inputs")

    table = rpt.CurveTable.from_rows(rows_per_sigma, rpt.clean_accuracy(clean))
    _write(os.path.join(out, "curves.csv"), table.to_curves_csv())
    _write(os.path.join(out, "envelope.csv"), table.to_envelope_csv())
    _say(f"clean acc {table.clean_acc:.3f}; curves and envelope written to {out}")
    return EXIT_OK


def read_run_dir(run_dir):
    """Recompute a run's CurveTable from its per-input CSVs (and check the
    stored curve files agree, if present)."""
    import glob
    cert_files = sorted(glob.glob(os.path.join(run_dir, "cert-sigma*.csv")))
    if not cert_files:
        raise FileNotFoundError(f"{run_dir}: no cert-sigma*.csv files")
    rows_per_sigma = {}
    for path in cert_files:
        rows = rpt.cert_rows_from_csv(open(path).read())
        sigma = rows[0]["sigma"]
        rows_per_sigma[sigma] = rows
    clean = rpt.clean_rows_from_csv(open(os.path.join(run_dir, "clean_eval.csv")).read())
    table = rpt.CurveTable.from_rows(rows_per_sigma, rpt.clean_accuracy(clean))
    stored = os.path.join(run_dir, "curves.csv")
    if os.path.exists(stored):
        if open(stored).read() != table.to_curves_csv():
            raise ValueError(f"{run_dir}: stored curves.csv does not match "
                             "recomputation from per-input CSVs")
    return table


def cmd_report(args):
    tables = {}
    for run_dir in args.runs:
        name = os.path.basename(os.path.normpath(run_dir))
        try:
            tables[name] = read_run_dir(run_dir)
        except (OSError, ValueError) as e:
            print(f"report: {e}", file=sys.stderr)
            return EXIT_FAIL
    try:
        text = rpt.comparison_table(tables)
    except ValueError as e:
        print(f"report: {e}", file=sys.stderr)
        return EXIT_FAIL
    print(text, end="")
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        _write(os.path.join(args.out, "report.txt"), text)
        _write(os.path.join(args.out, "report.csv"), rpt.comparison_csv(tables))
        _say(f"report written to {args.out}")
    return EXIT_OK


def cmd_selftest(args):
    from .selftest import run_selftest
    return EXIT_OK if run_selftest(verbose=True) else EXIT_FAIL


def build_parser():
    parser = argparse.ArgumentParser(
        prog="smoothcert",
        description="Train, transfer, and certify L2-robust classifiers "
                    "via randomized smoothing.")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_config_command(name, fn, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="path to JSON config")
        p.add_argument("--out", default=None, help="override the config's out_dir")
        p.add_argument("--threads", type=int, default=1,
                       help="worker thread cap (certification only)")
        p.set_defaults(fn=fn)
        return p

    add_config_command("pretrain", cmd_pretrain,
                       "train a model on the upstream task under mixed noise")
    add_config_command("finetune", cmd_finetune,
                       "swap the head and fine-tune on the downstream task")
    add_config_command("certify", cmd_certify,
                       "certify the smoothed classifier on test inputs")

    p_report = sub.add_parser("report", help="aggregate runs into comparison tables")
    p_report.add_argument("runs", nargs="+", help="run directories to compare")
    p_report.add_argument("--out", default=None, help="directory for report files")
    p_report.set_defaults(fn=cmd_report)

    p_self = sub.add_parser("selftest", help="run the built-in numerical checks")
    p_self.set_defaults(fn=cmd_selftest)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    if getattr(args, "threads", 1) is not None and getattr(args, "threads", 1) < 1:
        print("--threads must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.fn(args)
    except ConfigError as e:
        print(str(e), file=sys.stderr)
        return EXIT_CONFIG
    except TrainingDiverged as e:
        print(f"training failed: {e}", file=sys.stderr)
        return EXIT_TRAINING
    except CheckpointError as e:
        print(str(e), file=sys.stderr)
        return EXIT_CHECKPOINT
    except FileNotFoundError as e:
        print(str(e), file=sys.stderr)
        return EXIT_CHECKPOINT


if __name__ == "__main__":
    sys.exit(main())
