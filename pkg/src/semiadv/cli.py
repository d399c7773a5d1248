"""Command-line pipeline.

Every subcommand works inside one workspace directory given by ``--out``;
it reads the artifacts earlier steps left there and writes its own::

    synth              data/train/, data/test/            (PNG + labels.csv)
    prototypes         prototypes/                        (PNG + prototypes.json + prototypes.npz)
    train-aux-gender   checkpoints/aux_gender.sanw, logs/aux_gender_log.csv
    train-aux-matcher  checkpoints/aux_matcher.sanw, logs/aux_matcher_log.csv
    pretrain           checkpoints/ae_pretrain.sanw, logs/pretrain_log.csv
    train              checkpoints/ae_train.sanw, logs/train_log.csv
    perturb            perturbed/{before,SM,NT,OP}/       (PNG + labels.csv)
    evaluate           checkpoints/eval_*.sanw, report/report.json, report/report.csv, ROC CSVs
    report             report/report.csv, ROC CSVs and roc_gender.png / roc_match.png

Exit status: 0 success, 1 usage error, 2 runtime error.
"""
import argparse
import logging
import sys
from pathlib import Path

from . import __version__
from .config import from_mapping, load_config

log = logging.getLogger("semiadv")

COMMANDS = (
    "synth", "prototypes", "train-aux-gender", "train-aux-matcher",
    "pretrain", "train", "perturb", "evaluate", "report",
)

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: error: {message}\n{self.format_usage()}")


def _add_common(p, suppress):
    default = argparse.SUPPRESS if suppress else None
    p.add_argument("--config", default=argparse.SUPPRESS if suppress else "default",
                   help="INI config file with a [semiadv] section, or 'default' (default: default)")
    p.add_argument("--seed", type=int, default=default, help="override the config seed")
    p.add_argument("--out", default=argparse.SUPPRESS if suppress else "run",
                   help="workspace directory holding all artifacts (default: ./run)")
    p.add_argument("--set", dest="overrides", action="append", metavar="KEY=VALUE",
                   default=argparse.SUPPRESS if suppress else [],
                   help="override one config key; repeatable")
    p.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS if suppress else False,
                   help="log progress to stderr")


def build_parser():
    parser = _Parser(prog="semiadv", description="Semi-adversarial gender-privacy autoencoder pipeline.")
    parser.add_argument("--version", action="version", version=__version__)
    _add_common(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)

    def cmd(name, help_):
        p = sub.add_parser(name, help=help_, description=help_)
        _add_common(p, suppress=True)
        return p

    cmd("synth", "generate the synthetic dataset and its identity-disjoint train/test split")
    p = cmd("prototypes", "compute gender prototypes from the training split")
    p.add_argument("--data", help="training image directory (default: <out>/data/train)")
    p = cmd("train-aux-gender", "train the auxiliary gender classifier")
    p.add_argument("--data", help="training image directory (default: <out>/data/train)")
    p = cmd("train-aux-matcher", "train the auxiliary matcher on identity labels")
    p.add_argument("--data", help="training image directory (default: <out>/data/train)")
    p = cmd("pretrain", "pre-train the autoencoder on reconstruction only")
    p.add_argument("--data", help="training image directory (default: <out>/data/train)")
    p = cmd("train", "semi-adversarial training against the frozen auxiliaries")
    p.add_argument("--data", help="training image directory (default: <out>/data/train)")
    p.add_argument("--checkpoint", help="pre-trained autoencoder (default: <out>/checkpoints/ae_pretrain.sanw)")
    p = cmd("perturb", "write SM/NT/OP perturbations of the test split")
    p.add_argument("--data", help="images to perturb (default: <out>/data/test)")
    p.add_argument("--checkpoint", help="trained autoencoder (default: <out>/checkpoints/ae_train.sanw)")
    p = cmd("evaluate", "train independent evaluators and score the perturbed splits")
    p.add_argument("--data", help="training split for the evaluators (default: <out>/data/train)")
    p.add_argument("--no-plots", action="store_true", help="skip PNG ROC plots")
    p = cmd("report", "render report.csv, ROC CSVs and plots from report/report.json")
    return parser


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------

def _config(args):
    cfg = load_config(args.config)
    if args.overrides:
        pairs = {}
        for item in args.overrides:
            if "=" not in item:
                raise UsageError(f"--set expects KEY=VALUE, got {item!r}")
            k, v = item.split("=", 1)
            pairs[k.strip()] = v
        try:
            cfg = from_mapping(pairs, base=cfg)
        except (KeyError, ValueError) as exc:
            raise UsageError(f"bad --set override: {exc}") from None
    if args.seed is not None:
        cfg = cfg.replace(seed=args.seed)
    return cfg


def _require(path, what):
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"{what} not found: {path}")
    return path


def _load_split(path, cfg, split):
    from .data import load_dataset

    path = _require(path, "dataset directory")
    return load_dataset(path, path / "labels.csv", cfg.image_size, split=split)


def _ckpt(args, name):
    return Path(args.out) / "checkpoints" / name


def _load_ckpt(path, subnetwork, what):
    from .training import load_checkpoint

    return load_checkpoint(_require(path, what), subnetwork=subnetwork)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_synth(args, cfg):
    from .data import SyntheticSpec, export_dataset, generate_synthetic, split_dataset

    spec = SyntheticSpec(
        n_identities=cfg.n_identities,
        images_per_identity=cfg.images_per_identity,
        image_size=cfg.image_size,
        gender_signal_strength=cfg.gender_signal_strength,
        identity_texture_seed=cfg.seed,
        noise_sigma=cfg.noise_sigma,
    )
    ds = generate_synthetic(spec, seed=cfg.seed)
    train, test = split_dataset(ds, cfg.train_fraction, seed=cfg.seed)
    out = Path(args.out)
    export_dataset(train, out / "data" / "train")
    export_dataset(test, out / "data" / "test")
    (out / "config.ini").write_text(cfg.to_ini())
    log.info("synthetic data: %d train / %d test images", len(train), len(test))


def cmd_prototypes(args, cfg):
    from .prototypes import compute_prototypes, save_prototypes

    train = _load_split(args.data or Path(args.out) / "data" / "train", cfg, "train")
    save_prototypes(compute_prototypes(train), Path(args.out) / "prototypes")


def _prototypes(args):
    from .prototypes import load_prototypes

    return load_prototypes(_require(Path(args.out) / "prototypes", "prototype directory"))


def cmd_train_aux_gender(args, cfg):
    from .training import TrainLog, save_checkpoint, train_aux_gender

    train = _load_split(args.data or Path(args.out) / "data" / "train", cfg, "train")
    tlog = TrainLog()
    g = train_aux_gender(train, cfg, train_log=tlog)
    save_checkpoint(g, _ckpt(args, "aux_gender.sanw"), phase="aux", seed=cfg.seed, config_hash=cfg.digest())
    tlog.write_csv(Path(args.out) / "logs" / "aux_gender_log.csv")


def cmd_train_aux_matcher(args, cfg):
    from .training import TrainLog, save_checkpoint, train_aux_matcher

    train = _load_split(args.data or Path(args.out) / "data" / "train", cfg, "train")
    tlog = TrainLog()
    m = train_aux_matcher(train, cfg, train_log=tlog)
    save_checkpoint(m, _ckpt(args, "aux_matcher.sanw"), phase="aux", seed=cfg.seed, config_hash=cfg.digest())
    tlog.write_csv(Path(args.out) / "logs" / "aux_matcher_log.csv")


def cmd_pretrain(args, cfg):
    from .training import TrainLog, pretrain_autoencoder, save_checkpoint

    train = _load_split(args.data or Path(args.out) / "data" / "train", cfg, "train")
    ps = _prototypes(args)
    tlog = TrainLog()
    ae = pretrain_autoencoder(train, ps, cfg, train_log=tlog)
    save_checkpoint(ae, _ckpt(args, "ae_pretrain.sanw"), phase="pretrain", seed=cfg.seed, config_hash=cfg.digest())
    tlog.write_csv(Path(args.out) / "logs" / "pretrain_log.csv")


def cmd_train(args, cfg):
    from .losses import LossWeights
    from .models import AUTOENCODER, CLASSIFIER, MATCHER
    from .training import TrainLog, save_checkpoint, train_semi_adversarial

    ae = _load_ckpt(args.checkpoint or _ckpt(args, "ae_pretrain.sanw"), AUTOENCODER, "autoencoder checkpoint")
    g = _load_ckpt(_ckpt(args, "aux_gender.sanw"), CLASSIFIER, "auxiliary gender checkpoint")
    m = _load_ckpt(_ckpt(args, "aux_matcher.sanw"), MATCHER, "auxiliary matcher checkpoint")
    train = _load_split(args.data or Path(args.out) / "data" / "train", cfg, "train")
    ps = _prototypes(args)
    tlog = TrainLog()
    weights = LossWeights(cfg.lambda_D, cfg.lambda_G, cfg.lambda_M)
    ae = train_semi_adversarial(ae, g, m, train, ps, weights, cfg, train_log=tlog)
    save_checkpoint(ae, _ckpt(args, "ae_train.sanw"), phase="train", seed=cfg.seed, config_hash=cfg.digest())
    tlog.write_csv(Path(args.out) / "logs" / "train_log.csv")


def cmd_perturb(args, cfg):
    from .data import export_dataset
    from .evaluate import perturb_dataset
    from .models import AUTOENCODER

    ae = _load_ckpt(args.checkpoint or _ckpt(args, "ae_train.sanw"), AUTOENCODER, "autoencoder checkpoint")
    test = _load_split(args.data or Path(args.out) / "data" / "test", cfg, "test")
    ps = _prototypes(args)
    for cond, ds in perturb_dataset(ae, test, ps).items():
        export_dataset(ds, Path(args.out) / "perturbed" / cond)


def cmd_evaluate(args, cfg):
    from .evaluate import (
        CONDITIONS, emit_report, evaluate, train_eval_gender_classifier, train_eval_matcher, write_report_json,
    )
    from .training import save_checkpoint

    out = Path(args.out)
    conditions = {c: _load_split(out / "perturbed" / c, cfg, "test") for c in CONDITIONS}
    train = _load_split(args.data or out / "data" / "train", cfg, "train")
    eg = train_eval_gender_classifier(train, cfg)
    em = train_eval_matcher(train, cfg)
    save_checkpoint(eg, _ckpt(args, "eval_gender.sanw"), phase="eval", seed=cfg.seed, config_hash=cfg.digest())
    save_checkpoint(em, _ckpt(args, "eval_matcher.sanw"), phase="eval", seed=cfg.seed, config_hash=cfg.digest())
    report = evaluate(conditions, eg, em, cfg, dataset_name="synthetic-test")
    write_report_json(report, out / "report" / "report.json")
    emit_report(report, out / "report", plots=not args.no_plots)
    for c in CONDITIONS:
        log.info("%-6s gender error %6.2f%%  TMR@FMR=1%% %6.2f%%", c, report.gender_error[c], report.tmr[c])


def cmd_report(args, cfg):
    from .evaluate import emit_report, read_report_json

    out = Path(args.out) / "report"
    report = read_report_json(_require(out / "report.json", "evaluation results"))
    emit_report(report, out)


HANDLERS = {
    "synth": cmd_synth,
    "prototypes": cmd_prototypes,
    "train-aux-gender": cmd_train_aux_gender,
    "train-aux-matcher": cmd_train_aux_matcher,
    "pretrain": cmd_pretrain,
    "train": cmd_train,
    "perturb": cmd_perturb,
    "evaluate": cmd_evaluate,
    "report": cmd_report,
}


def run(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError(f"semiadv: error: a command is required\n{parser.format_usage()}")
        cfg = _config(args)
    except UsageError as exc:
        sys.stderr.write(str(exc).rstrip() + "\n")
        return EXIT_USAGE
    except SystemExit as exc:  # --help / --version
        return EXIT_OK if not exc.code else EXIT_USAGE
    except (OSError, KeyError, ValueError) as exc:
        sys.stderr.write(f"semiadv: error: {exc}\n")
        return EXIT_RUNTIME

    if args.verbose:
        logging.basicConfig(level=logging.INFO, format="%(name)s: %(message)s")
    try:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        HANDLERS[args.command](args, cfg)
    except UsageError as exc:
        sys.stderr.write(str(exc).rstrip() + "\n")
        return EXIT_USAGE
    except (OSError, ValueError, KeyError, RuntimeError, FloatingPointError) as exc:
        sys.stderr.write(f"semiadv {args.command}: error: {exc}\n")
        return EXIT_RUNTIME
    return EXIT_OK


def main(argv=None):
    sys.exit(run(argv))


if __name__ == "__main__":
    main()
